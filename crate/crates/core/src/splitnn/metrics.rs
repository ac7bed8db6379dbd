use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::noise::{NoiseConfig, Phase};
use super::SplitModel;
use crate::data::{sequential_batches, LabeledDataset};
use crate::dcor::distance_correlation;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 500;

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy in percent, with noise applied as at inference.
///
/// Evaluation runs both segments locally; the result is identical to routing
/// the intermediates through the channel since the server is deterministic.
pub fn evaluate_accuracy(model: &SplitModel, data: &LabeledDataset, noise: &NoiseConfig, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_CHUNK).min(data.len());
        let clean = model.owner.infer(&data.images(start..end))?;
        let sent = noise.apply(&clean, Phase::Inference, &mut rng);
        let logits = model.server.infer(&sent)?;
        for (row, &label) in (0..logits.rows()).zip(&data.labels()[start..end]) {
            if argmax(logits.row(row)) == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Mean and standard error of per-batch values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcorSummary {
    pub mean: f64,
    pub stderr: f64,
    pub batches: usize,
}

impl DcorSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: 0.0,
                stderr: 0.0,
                batches: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            batches: n,
        }
    }
}

/// dCor between flattened inputs and the clean owner output, per batch.
pub fn measure_intermediate_dcor(model: &SplitModel, data: &LabeledDataset, batch_size: usize) -> Result<DcorSummary> {
    measure_dcor_with(data, batch_size, |images| model.intermediate(images))
}

/// Same measurement for an arbitrary image-to-representation map.
pub fn measure_dcor_with(
    data: &LabeledDataset,
    batch_size: usize,
    mut f: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<DcorSummary> {
    if batch_size < 2 {
        return Err(Error::BatchSize(batch_size));
    }
    let mut values = Vec::new();
    for idx in sequential_batches(data.len(), batch_size)? {
        let (images, _) = data.gather(&idx);
        let rep = f(&images)?;
        values.push(distance_correlation(&images.flatten_rows(), &rep.flatten_rows())?.value);
    }
    Ok(DcorSummary::from_values(&values))
}

/// Accuracy under post-training inference noise for each scale.
///
/// Every scale reuses the same noise seed, so the draws differ only by the
/// scale factor and the curve is not confounded by sampling luck.
pub fn noise_sweep(model: &SplitModel, data: &LabeledDataset, scales: &[f32], seed: u64) -> Result<Vec<(f32, f64)>> {
    scales
        .iter()
        .map(|&b| {
            let noise = NoiseConfig::inference(b);
            noise.validate()?;
            Ok((b, evaluate_accuracy(model, data, &noise, seed)?))
        })
        .collect()
}
