use super::Tensor;
use crate::error::Result;

/// A trainable tensor with its Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
            step_count: 0,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update; the value moves against `grad`.
    pub fn step(&self, param: &mut Parameter, grad: &Tensor) -> Result<()> {
        param.value.check_same_shape("adam_step", grad)?;
        param.step_count += 1;
        let t = param.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let values = param.value.data_mut().iter_mut();
        let moments = param.adam_m.data_mut().iter_mut().zip(param.adam_v.data_mut());
        for ((x, (m, v)), &g) in values.zip(moments).zip(grad.data()) {
            let g = g as f64;
            let m_new = self.beta1 * *m as f64 + (1.0 - self.beta1) * g;
            let v_new = self.beta2 * *v as f64 + (1.0 - self.beta2) * g * g;
            *m = m_new as f32;
            *v = v_new as f32;
            let m_hat = m_new / c1;
            let v_hat = v_new / c2;
            *x = (*x as f64 - self.lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
        }
        Ok(())
    }
}
