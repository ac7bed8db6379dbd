use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::dcor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geo: ConvGeometry,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
    Upsample2(Var),
    Reshape(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f32>,
    },
    Mse {
        pred: Var,
        target: Tensor,
    },
    Dcor {
        intermediate: Var,
        grad: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward pass, replayed in reverse by [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Records a constant or a trainable leaf.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `input [N,C,H,W]` * `kernel [K,C,kh,kw]` + `bias [K]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        if x.ndim() != 4 {
            return Err(Error::Shape {
                op: OP,
                msg: format!("input must be [N,C,H,W], got {:?}", x.shape()),
            });
        }
        if k.ndim() != 4 {
            return Err(Error::Shape {
                op: OP,
                msg: format!("kernel must be [K,C,kh,kw], got {:?}", k.shape()),
            });
        }
        if stride == 0 {
            return Err(Error::Shape {
                op: OP,
                msg: "stride must be at least 1".into(),
            });
        }
        let &[n, c, h, w] = x.shape() else { unreachable!() };
        let &[filters, kc, kh, kw] = k.shape() else {
            unreachable!()
        };
        if kc != c {
            return Err(Error::Dimension {
                op: OP,
                axis: "channel",
                expected: c,
                got: kc,
            });
        }
        if b.shape() != [filters] {
            return Err(Error::Dimension {
                op: OP,
                axis: "bias",
                expected: filters,
                got: b.len(),
            });
        }
        if kh > h + 2 * padding {
            return Err(Error::Dimension {
                op: OP,
                axis: "height",
                expected: h + 2 * padding,
                got: kh,
            });
        }
        if kw > w + 2 * padding {
            return Err(Error::Dimension {
                op: OP,
                axis: "width",
                expected: w + 2 * padding,
                got: kw,
            });
        }
        let geo = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        };
        let (oh, ow) = (geo.out_h(), geo.out_w());
        let mut out = vec![0.0; n * filters * oh * ow];
        kernels::conv2d_forward(&geo, n, x.data(), k.data(), b.data(), &mut out);
        let value = Tensor::new(vec![n, filters, oh, ow], out)?;
        self.push(
            OP,
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geo,
            },
            &[input, kernel, bias],
        )
    }

    /// `input [N,D]` x `weight [D,M]` + `bias [M]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "dense";
        let (x, wt, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.ndim() != 2 || wt.ndim() != 2 {
            return Err(Error::Shape {
                op: OP,
                msg: format!(
                    "expected 2-D input and weight, got {:?} and {:?}",
                    x.shape(),
                    wt.shape()
                ),
            });
        }
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let (wd, m) = (wt.shape()[0], wt.shape()[1]);
        if wd != d {
            return Err(Error::Dimension {
                op: OP,
                axis: "inner",
                expected: d,
                got: wd,
            });
        }
        if b.shape() != [m] {
            return Err(Error::Dimension {
                op: OP,
                axis: "bias",
                expected: m,
                got: b.len(),
            });
        }
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(b.data());
        }
        kernels::gemm(n, d, m, x.data(), false, wt.data(), false, &mut out, true);
        let value = Tensor::new(vec![n, m], out)?;
        self.push(OP, value, Op::Dense { input, weight, bias }, &[input, weight, bias])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(input), &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(kernels::sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(input), &[input])
    }

    /// 2x2 non-overlapping max pooling over `[N,C,H,W]` with even H and W.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "maxpool2";
        let x = self.value(input);
        let &[n, c, h, w] = x.shape() else {
            return Err(Error::Shape {
                op: OP,
                msg: format!("input must be [N,C,H,W], got {:?}", x.shape()),
            });
        };
        if h % 2 != 0 {
            return Err(Error::Shape {
                op: OP,
                msg: format!("height axis must be even, got {h}"),
            });
        }
        if w % 2 != 0 {
            return Err(Error::Shape {
                op: OP,
                msg: format!("width axis must be even, got {w}"),
            });
        }
        let mut out = vec![0.0; n * c * (h / 2) * (w / 2)];
        let argmax = kernels::maxpool2_forward(n * c, h, w, x.data(), &mut out);
        let value = Tensor::new(vec![n, c, h / 2, w / 2], out)?;
        self.push(OP, value, Op::MaxPool2 { input, argmax }, &[input])
    }

    /// Nearest-neighbour x2 upsampling over `[N,C,H,W]`.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let &[n, c, h, w] = x.shape() else {
            return Err(Error::Shape {
                op: "upsample2",
                msg: format!("input must be [N,C,H,W], got {:?}", x.shape()),
            });
        };
        let mut out = vec![0.0; n * c * 4 * h * w];
        kernels::upsample2_forward(n * c, h, w, x.data(), &mut out);
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        self.push("upsample2", value, Op::Upsample2(input), &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        self.push("reshape", value, Op::Reshape(input), &[input])
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let shape = [x.rows(), x.row_len()];
        self.reshape(input, &shape)
    }

    /// Mean over the batch of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let x = self.value(logits);
        if x.ndim() != 2 {
            return Err(Error::Shape {
                op: OP,
                msg: format!("logits must be [N,classes], got {:?}", x.shape()),
            });
        }
        let (n, classes) = (x.shape()[0], x.shape()[1]);
        if targets.len() != n {
            return Err(Error::Dimension {
                op: OP,
                axis: "batch",
                expected: n,
                got: targets.len(),
            });
        }
        let mut probs = Vec::with_capacity(n * classes);
        let mut total = 0.0f64;
        for (row, &t) in x.data().chunks_exact(classes).zip(targets) {
            if t >= classes {
                return Err(Error::ClassIndex { index: t, classes });
            }
            let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - row[t] as f64;
            probs.extend(row.iter().map(|&v| (v as f64 - log_z).exp() as f32));
        }
        let value = Tensor::scalar((total / n as f64) as f32);
        let targets = targets.to_vec();
        self.push(OP, value, Op::SoftmaxXent { logits, targets, probs }, &[logits])
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        p.check_same_shape("mse", target)?;
        let sum: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        let value = Tensor::scalar((sum / p.len() as f64) as f32);
        let target = target.clone();
        self.push("mse", value, Op::Mse { pred, target }, &[pred])
    }

    /// Differentiable distance correlation between constant `inputs` and
    /// `intermediate`; gradients flow only into `intermediate`.
    pub fn dcor_loss(&mut self, inputs: &Tensor, intermediate: Var) -> Result<Var> {
        let (value, grad) = dcor::dcor_loss(inputs, self.value(intermediate))?;
        self.push(
            "dcor_loss",
            Tensor::scalar(value),
            Op::Dcor { intermediate, grad },
            &[intermediate],
        )
    }

    /// Backpropagates from a single-element loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                msg: format!("loss must be a single element, got {:?}", self.value(loss).shape()),
            });
        }
        self.backward_seeded(vec![(loss, Tensor::scalar(1.0))])
    }

    /// Backpropagates from several seeds at once; each seed gradient must match
    /// the shape of its variable. Seeds on the same variable accumulate.
    pub fn backward_seeded(&self, seeds: Vec<(Var, Tensor)>) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (var, seed) in seeds {
            self.value(var).check_same_shape("backward seed", &seed)?;
            accumulate(&mut grads[var.0], seed);
        }
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(up) = grads[i].take() else { continue };
            self.propagate(node, &up, &mut grads)?;
            grads[i] = Some(up);
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite("backward"));
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geo,
            } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let filters = k.shape()[0];
                let g = kernels::conv2d_backward(
                    geo,
                    x.shape()[0],
                    x.data(),
                    k.data(),
                    filters,
                    up.data(),
                    self.wants(*input),
                );
                if let Some(gi) = g.input {
                    accumulate(&mut grads[input.0], Tensor::new(x.shape().to_vec(), gi)?);
                }
                if self.wants(*kernel) {
                    accumulate(&mut grads[kernel.0], Tensor::new(k.shape().to_vec(), g.kernel)?);
                }
                if self.wants(*bias) {
                    accumulate(&mut grads[bias.0], Tensor::new(vec![filters], g.bias)?);
                }
            }
            Op::Dense { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let m = w.shape()[1];
                if self.wants(*input) {
                    let mut gx = vec![0.0; n * d];
                    kernels::gemm(n, m, d, up.data(), false, w.data(), true, &mut gx, false);
                    accumulate(&mut grads[input.0], Tensor::new(vec![n, d], gx)?);
                }
                if self.wants(*weight) {
                    let mut gw = vec![0.0; d * m];
                    kernels::gemm(d, n, m, x.data(), true, up.data(), false, &mut gw, false);
                    accumulate(&mut grads[weight.0], Tensor::new(vec![d, m], gw)?);
                }
                if self.wants(*bias) {
                    let mut gb = vec![0.0f64; m];
                    for row in up.data().chunks_exact(m) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v as f64;
                        }
                    }
                    let gb = gb.into_iter().map(|v| v as f32).collect();
                    accumulate(&mut grads[bias.0], Tensor::new(vec![m], gb)?);
                }
            }
            Op::Relu(input) => {
                let x = self.value(*input);
                let data = x
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                    .collect();
                accumulate(&mut grads[input.0], Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::Sigmoid(input) => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect();
                let shape = self.value(*input).shape().to_vec();
                accumulate(&mut grads[input.0], Tensor::new(shape, data)?);
            }
            Op::MaxPool2 { input, argmax } => {
                let x = self.value(*input);
                let mut data = vec![0.0; x.len()];
                for (&src, &g) in argmax.iter().zip(up.data()) {
                    data[src as usize] += g;
                }
                accumulate(&mut grads[input.0], Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::Upsample2(input) => {
                let x = self.value(*input);
                let &[n, c, h, w] = x.shape() else { unreachable!() };
                let data = kernels::upsample2_backward(n * c, h, w, up.data());
                accumulate(&mut grads[input.0], Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::Reshape(input) => {
                let shape = self.value(*input).shape();
                accumulate(&mut grads[input.0], up.reshape(shape)?);
            }
            Op::SoftmaxXent { logits, targets, probs } => {
                let shape = self.value(*logits).shape();
                let classes = shape[1];
                let scale = up.item() / targets.len() as f32;
                let mut data = probs.clone();
                for (row, &t) in data.chunks_exact_mut(classes).zip(targets) {
                    row[t] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                accumulate(&mut grads[logits.0], Tensor::new(shape.to_vec(), data)?);
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let scale = 2.0 * up.item() / p.len() as f32;
                let data = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&a, &b)| scale * (a - b))
                    .collect();
                accumulate(&mut grads[pred.0], Tensor::new(p.shape().to_vec(), data)?);
            }
            Op::Dcor { intermediate, grad } => {
                let s = up.item();
                accumulate(&mut grads[intermediate.0], grad.map(|g| g * s));
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(grad.data()) {
                *a += b;
            }
        }
        None => *slot = Some(grad),
    }
}
