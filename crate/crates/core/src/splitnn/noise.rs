use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// When the owner perturbs the intermediate representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NoiseMode {
    #[default]
    Off,
    /// Only after training, whenever the deployed model is queried.
    InferenceOnly,
    /// During training and at inference.
    Training,
}

impl NoiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Off => "off",
            Self::InferenceOnly => "inference",
            Self::Training => "training",
        }
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "inference" | "inference-only" => Ok(Self::InferenceOnly),
            "training" => Ok(Self::Training),
            other => Err(Error::Config(format!("unknown noise mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Training,
    Inference,
}

/// Laplace(mu, b) noise added by the data owner before transmission.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct NoiseConfig {
    pub mu: f32,
    pub scale: f32,
    pub mode: NoiseMode,
}

impl NoiseConfig {
    pub const OFF: NoiseConfig = NoiseConfig {
        mu: 0.0,
        scale: 0.0,
        mode: NoiseMode::Off,
    };

    pub fn training(scale: f32) -> Self {
        Self {
            mu: 0.0,
            scale,
            mode: NoiseMode::Training,
        }
    }

    pub fn inference(scale: f32) -> Self {
        Self {
            mu: 0.0,
            scale,
            mode: NoiseMode::InferenceOnly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() || self.scale < 0.0 || !self.mu.is_finite() {
            return Err(Error::Config(format!(
                "noise scale must be finite and >= 0 (got mu={}, b={})",
                self.mu, self.scale
            )));
        }
        Ok(())
    }

    /// Whether noise is drawn in `phase`. A zero scale always means no noise.
    pub fn active(&self, phase: Phase) -> bool {
        if self.scale == 0.0 {
            return false;
        }
        match (self.mode, phase) {
            (NoiseMode::Off, _) => false,
            (NoiseMode::InferenceOnly, Phase::Inference) => true,
            (NoiseMode::InferenceOnly, Phase::Training) => false,
            (NoiseMode::Training, _) => true,
        }
    }

    /// `x + noise` when active in `phase`, otherwise a copy of `x`.
    pub fn apply<R: Rng + ?Sized>(&self, x: &Tensor, phase: Phase, rng: &mut R) -> Tensor {
        if !self.active(phase) {
            return x.clone();
        }
        let noise = sample_laplace(x.shape(), self.mu, self.scale, rng);
        x.add(&noise).expect("same shape")
    }
}

/// I.i.d. Laplace(mu, b) samples by inverse CDF:
/// `mu - b * sign(u) * ln(1 - 2|u|)` with `u ~ U(-1/2, 1/2)`.
pub fn sample_laplace<R: Rng + ?Sized>(shape: &[usize], mu: f32, b: f32, rng: &mut R) -> Tensor {
    if b == 0.0 {
        return Tensor::full(shape, mu);
    }
    let (mu, b) = (mu as f64, b as f64);
    Tensor::from_fn(shape, |_| {
        let u = loop {
            let u: f64 = rng.gen::<f64>() - 0.5;
            if u != -0.5 {
                break u;
            }
        };
        (mu - b * u.signum() * (1.0 - 2.0 * u.abs()).ln()) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_scale_is_constant_location() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_laplace(&[4], 0.0, 0.0, &mut rng), Tensor::zeros(&[4]));
        assert_eq!(sample_laplace(&[2], 1.5, 0.0, &mut rng), Tensor::full(&[2], 1.5));
    }

    #[test]
    fn moments_and_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let t = sample_laplace(&[100_000], 0.0, 1.0, &mut rng);
        let n = t.len() as f64;
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 2.0).abs() < 0.1, "variance {var}");
        let mut sorted = t.into_data();
        sorted.sort_by(f32::total_cmp);
        let median = (sorted[49_999] + sorted[50_000]) / 2.0;
        assert!(median.abs() < 0.02, "median {median}");
    }

    #[test]
    fn phase_activation_rules() {
        let inf = NoiseConfig::inference(0.5);
        assert!(inf.active(Phase::Inference) && !inf.active(Phase::Training));
        let tr = NoiseConfig::training(0.5);
        assert!(tr.active(Phase::Inference) && tr.active(Phase::Training));
        assert!(!NoiseConfig::training(0.0).active(Phase::Training));
        assert!(!NoiseConfig::OFF.active(Phase::Inference));
        assert!(NoiseConfig::training(-1.0).validate().is_err());
        assert!(NoiseConfig::training(f32::NAN).validate().is_err());
    }

    #[test]
    fn same_rng_state_gives_noise_linear_in_scale() {
        let a = sample_laplace(&[64], 0.0, 0.5, &mut ChaCha8Rng::seed_from_u64(1));
        let b = sample_laplace(&[64], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((2.0 * x - y).abs() < 1e-5);
        }
    }
}
