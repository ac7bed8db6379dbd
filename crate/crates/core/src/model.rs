//! Sequential model segments and the checkpoint file format.

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Adam, Gradients, Parameter, Tape, Tensor, Var};

/// Rows pushed through the tape at once by [`Segment::infer`].
const INFER_CHUNK: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d {
        kernel: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        weight: usize,
        bias: usize,
    },
    Relu,
    Sigmoid,
    MaxPool2,
    Upsample2,
    Flatten,
    /// Reshape each sample to the given per-sample shape.
    Reshape(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedParameter {
    pub name: String,
    pub param: Parameter,
}

/// A parameterised differentiable pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    layers: Vec<Layer>,
    params: Vec<NamedParameter>,
}

/// Output of one recorded forward pass plus the leaves holding each parameter.
pub struct Trace {
    pub output: Var,
    params: Vec<Var>,
}

impl Segment {
    pub fn builder(seed: u64) -> SegmentBuilder {
        SegmentBuilder {
            segment: Segment {
                layers: Vec::new(),
                params: Vec::new(),
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[NamedParameter] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.param)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.param.value.len()).sum()
    }

    /// Records the pipeline on `tape`, registering every parameter as a
    /// trainable leaf.
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Trace> {
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.param.value.clone(), true))
            .collect();
        let mut x = input;
        for layer in &self.layers {
            x = match layer {
                Layer::Conv2d {
                    kernel,
                    bias,
                    stride,
                    padding,
                } => tape.conv2d(x, params[*kernel], params[*bias], *stride, *padding)?,
                Layer::Dense { weight, bias } => tape.dense(x, params[*weight], params[*bias])?,
                Layer::Relu => tape.relu(x)?,
                Layer::Sigmoid => tape.sigmoid(x)?,
                Layer::MaxPool2 => tape.maxpool2(x)?,
                Layer::Upsample2 => tape.upsample2(x)?,
                Layer::Flatten => tape.flatten(x)?,
                Layer::Reshape(per_sample) => {
                    let mut shape = vec![tape.value(x).rows()];
                    shape.extend_from_slice(per_sample);
                    tape.reshape(x, &shape)?
                }
            };
        }
        Ok(Trace { output: x, params })
    }

    /// Forward pass without gradient bookkeeping beyond a scratch tape.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let n = input.rows();
        if n <= INFER_CHUNK {
            return self.infer_chunk(input.clone());
        }
        let mut parts = Vec::with_capacity(n.div_ceil(INFER_CHUNK));
        for start in (0..n).step_by(INFER_CHUNK) {
            let idx: Vec<usize> = (start..(start + INFER_CHUNK).min(n)).collect();
            parts.push(self.infer_chunk(input.select_rows(&idx))?);
        }
        Tensor::concat_rows(&parts)
    }

    fn infer_chunk(&self, input: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(input, false);
        let trace = self.forward(&mut tape, x)?;
        Ok(tape.value(trace.output).clone())
    }

    /// Applies one Adam step per parameter using gradients from a backward
    /// pass over `trace`. Parameters that received no gradient get a zero one.
    pub fn step(&mut self, trace: &Trace, grads: &mut Gradients, adam: &Adam) -> Result<()> {
        for (p, &var) in self.params.iter_mut().zip(&trace.params) {
            let g = grads.take(var).unwrap_or_else(|| Tensor::zeros(p.param.shape()));
            adam.step(&mut p.param, &g)?;
        }
        Ok(())
    }

    /// Named parameter values, in definition order.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (format!("{prefix}{}", p.name), p.param.value.clone()))
            .collect()
    }

    /// Overwrites parameter values from a checkpoint; every name must be
    /// present with a matching shape. Optimiser state is reset.
    pub fn load_named(&mut self, prefix: &str, tensors: &[(String, Tensor)]) -> Result<()> {
        for p in &mut self.params {
            let key = format!("{prefix}{}", p.name);
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if t.shape() != p.param.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {key} has shape {:?}, expected {:?}",
                    t.shape(),
                    p.param.shape()
                )));
            }
            p.param = Parameter::new(t.clone());
        }
        Ok(())
    }
}

pub struct SegmentBuilder {
    segment: Segment,
    rng: ChaCha8Rng,
}

impl SegmentBuilder {
    fn add_param(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let value = Tensor::from_fn(shape, |_| dist.sample(&mut self.rng));
        self.segment.params.push(NamedParameter {
            name,
            param: Parameter::new(value),
        });
        self.segment.params.len() - 1
    }

    pub fn conv2d(mut self, name: &str, in_ch: usize, out_ch: usize, k: usize, stride: usize, padding: usize) -> Self {
        let fan_in = in_ch * k * k;
        let kernel = self.add_param(format!("{name}.kernel"), &[out_ch, in_ch, k, k], fan_in);
        let bias = self.add_param(format!("{name}.bias"), &[out_ch], fan_in);
        self.segment.layers.push(Layer::Conv2d {
            kernel,
            bias,
            stride,
            padding,
        });
        self
    }

    pub fn dense(mut self, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = self.add_param(format!("{name}.weight"), &[inputs, outputs], inputs);
        let bias = self.add_param(format!("{name}.bias"), &[outputs], inputs);
        self.segment.layers.push(Layer::Dense { weight, bias });
        self
    }

    fn layer(mut self, layer: Layer) -> Self {
        self.segment.layers.push(layer);
        self
    }

    pub fn relu(self) -> Self {
        self.layer(Layer::Relu)
    }

    pub fn sigmoid(self) -> Self {
        self.layer(Layer::Sigmoid)
    }

    pub fn maxpool2(self) -> Self {
        self.layer(Layer::MaxPool2)
    }

    pub fn upsample2(self) -> Self {
        self.layer(Layer::Upsample2)
    }

    pub fn flatten(self) -> Self {
        self.layer(Layer::Flatten)
    }

    pub fn reshape(self, per_sample: &[usize]) -> Self {
        self.layer(Layer::Reshape(per_sample.to_vec()))
    }

    pub fn build(self) -> Segment {
        self.segment
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SPLTCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Config echo plus named parameter tensors.
///
/// Layout (little-endian): magic "SPLTCKPT", version u32, echo length u32,
/// echo UTF-8, tensor count u32, then per tensor: name length u32, name,
/// ndim u32, dims u32 each, f32 data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_echo: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        put_u32(&mut out, CHECKPOINT_VERSION as usize);
        put_u32(&mut out, self.config_echo.len());
        out.extend_from_slice(self.config_echo.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.ndim());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_echo = r.string()?;
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()?;
            let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = r
                .take(len * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self { config_echo, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
