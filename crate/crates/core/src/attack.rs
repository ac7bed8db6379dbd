//! Black-box model inversion by the computational server.
//!
//! The attacker queries the victim's owner segment as an opaque
//! image-to-intermediate map, fits a decoder from intermediates back to
//! pixels on the pairs it collected, and applies the decoder to intercepted
//! intermediates. Reconstruction quality is scored per image with distance
//! correlation over the 784 pixel pairs.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{write_pgm_grid, LabeledDataset, IMAGE_PIXELS, IMAGE_SIDE};
use crate::dcor::distance_correlation_1d;
use crate::error::{Error, Result};
use crate::model::Segment;
use crate::splitnn::{NoiseConfig, Phase, CUT_WIDTH};
use crate::tensor::{Adam, Tape, Tensor};

const QUERY_CHUNK: usize = 500;

/// Input-to-output access to a victim's owner segment and nothing else.
pub trait IntermediateOracle {
    /// Intermediates `[N, 64]` for images `[N,1,28,28]`, exactly as the
    /// server would observe them.
    fn query(&mut self, images: &Tensor) -> Result<Tensor>;
}

/// A deployed owner segment together with its inference-time noise.
///
/// The parameters are private: the only way in is [`IntermediateOracle::query`].
pub struct VictimEndpoint {
    segment: Segment,
    noise: NoiseConfig,
    rng: ChaCha8Rng,
}

impl VictimEndpoint {
    pub fn new(segment: Segment, noise: NoiseConfig, seed: u64) -> Self {
        Self {
            segment,
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl IntermediateOracle for VictimEndpoint {
    fn query(&mut self, images: &Tensor) -> Result<Tensor> {
        let clean = self.segment.infer(images)?;
        Ok(self.noise.apply(&clean, Phase::Inference, &mut self.rng))
    }
}

/// Row-aligned (intermediate, original image) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackDataset {
    pub intermediates: Tensor,
    pub originals: Tensor,
    pub source_name: String,
}

impl AttackDataset {
    pub fn len(&self) -> usize {
        self.intermediates.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Queries the oracle on the first `m` images of `data`.
pub fn collect<O: IntermediateOracle + ?Sized>(
    oracle: &mut O,
    data: &LabeledDataset,
    m: usize,
) -> Result<AttackDataset> {
    if m == 0 || m > data.len() {
        return Err(Error::Attack(format!(
            "cannot collect {m} pairs from {} ({} images)",
            data.name,
            data.len()
        )));
    }
    let originals = data.images(0..m);
    let mut parts = Vec::new();
    let mut start = 0;
    while start < m {
        let end = (start + QUERY_CHUNK).min(m);
        let out = oracle.query(&data.images(start..end))?;
        if out.shape() != [end - start, CUT_WIDTH] {
            return Err(Error::Attack(format!("oracle returned shape {:?}", out.shape())));
        }
        parts.push(out);
        start = end;
    }
    Ok(AttackDataset {
        intermediates: Tensor::concat_rows(&parts)?,
        originals,
        source_name: data.name.clone(),
    })
}

/// Decoder `[N,64]` -> `[N,1,28,28]` with values in (0,1).
pub fn decoder(seed: u64) -> Segment {
    Segment::builder(seed)
        .dense("fc", CUT_WIDTH, 16 * 7 * 7)
        .relu()
        .reshape(&[16, 7, 7])
        .upsample2()
        .conv2d("conv1", 16, 8, 3, 1, 1)
        .relu()
        .upsample2()
        .conv2d("conv2", 8, 1, 3, 1, 1)
        .sigmoid()
        .build()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackModel {
    pub decoder: Segment,
    /// Mean training MSE per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Fits the decoder by minimising pixel MSE on the collected pairs.
pub fn train_attacker(data: &AttackDataset, config: &AttackConfig) -> Result<AttackModel> {
    if data.is_empty() {
        return Err(Error::Attack("empty attack dataset".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::BatchSize(0));
    }
    let mut segment = decoder(crate::seed::derive_seed(config.seed, 1));
    let adam = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive_seed(config.seed, 2));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        let batches = order.chunks(config.batch_size);
        let count = batches.len();
        for (batch, idx) in batches.enumerate() {
            let z = data.intermediates.select_rows(idx);
            let target = data.originals.select_rows(idx);
            let mut tape = Tape::new();
            let x = tape.leaf(z, false);
            let trace = segment.forward(&mut tape, x)?;
            let loss = tape.mse(trace.output, &target)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    loss: value,
                });
            }
            total += value as f64;
            let mut grads = tape.backward(loss)?;
            segment.step(&trace, &mut grads, &adam)?;
        }
        epoch_losses.push(total / count as f64);
    }
    Ok(AttackModel {
        decoder: segment,
        epoch_losses,
    })
}

/// Decoder output for each intermediate row.
pub fn reconstruct(model: &AttackModel, intermediates: &Tensor) -> Result<Tensor> {
    if intermediates.ndim() != 2 || intermediates.shape()[1] != CUT_WIDTH {
        return Err(Error::Dimension {
            op: "reconstruct",
            axis: "features",
            expected: CUT_WIDTH,
            got: intermediates.shape().get(1).copied().unwrap_or(0),
        });
    }
    model.decoder.infer(intermediates)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionReport {
    pub per_image_dcor: Vec<f64>,
    pub mean_dcor: f64,
    pub stderr_dcor: f64,
    pub mse: f64,
    pub grid_path: Option<PathBuf>,
}

/// Per-image dCor and pixel MSE between originals and reconstructions.
pub fn score(originals: &Tensor, reconstructions: &Tensor) -> Result<ReconstructionReport> {
    originals.check_same_shape("score", reconstructions)?;
    let n = originals.rows();
    if n == 0 {
        return Err(Error::Attack("empty evaluation set".into()));
    }
    let per_image_dcor = (0..n)
        .map(|i| distance_correlation_1d(originals.row(i), reconstructions.row(i)))
        .collect::<Result<Vec<f64>>>()?;
    let mse = originals
        .data()
        .iter()
        .zip(reconstructions.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / originals.len() as f64;
    let summary = crate::splitnn::DcorSummary::from_values(&per_image_dcor);
    Ok(ReconstructionReport {
        per_image_dcor,
        mean_dcor: summary.mean,
        stderr_dcor: summary.stderr,
        mse,
        grid_path: None,
    })
}

/// Reconstructs every intercepted intermediate in `pairs` and scores it.
pub fn evaluate_pairs(model: &AttackModel, pairs: &AttackDataset) -> Result<(ReconstructionReport, Tensor)> {
    let recon = reconstruct(model, &pairs.intermediates)?;
    Ok((score(&pairs.originals, &recon)?, recon))
}

/// Intercepts the victim's intermediates for `eval_set`, inverts them and
/// scores the result. With `grid`, writes a two-column PGM of one original
/// per class next to its reconstruction.
pub fn evaluate<O: IntermediateOracle + ?Sized>(
    model: &AttackModel,
    oracle: &mut O,
    eval_set: &LabeledDataset,
    grid: Option<&Path>,
) -> Result<ReconstructionReport> {
    if eval_set.is_empty() {
        return Err(Error::Attack("empty evaluation set".into()));
    }
    let pairs = collect(oracle, eval_set, eval_set.len())?;
    let (mut report, recon) = evaluate_pairs(model, &pairs)?;
    if let Some(path) = grid {
        let picks = eval_set.one_per_class(crate::data::NUM_CLASSES);
        let cells = defence_grid(&pairs.originals.select_rows(&picks), &[recon.select_rows(&picks)])?;
        write_pgm_grid(&cells, 2, path)?;
        report.grid_path = Some(path.to_path_buf());
    }
    Ok(report)
}

/// Reference level for an uninformative attacker: reconstructions of
/// intermediates paired with the wrong originals under a seeded shuffle.
pub fn random_pairing_baseline(model: &AttackModel, pairs: &AttackDataset, seed: u64) -> Result<f64> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Attack("baseline needs at least two pairs".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // Rotate fixed points away so no image is matched with its own intermediate.
    for i in 0..n {
        if perm[i] == i {
            let j = (i + 1) % n;
            perm.swap(i, j);
        }
    }
    let recon = reconstruct(model, &pairs.intermediates.select_rows(&perm))?;
    Ok(score(&pairs.originals, &recon)?.mean_dcor)
}

/// Interleaves an originals column with reconstruction columns, one row per
/// example, ready for [`write_pgm_grid`] with `1 + columns.len()` columns.
pub fn defence_grid(originals: &Tensor, columns: &[Tensor]) -> Result<Tensor> {
    let k = originals.rows();
    for c in columns {
        originals.check_same_shape("defence_grid", c)?;
    }
    let mut data = Vec::with_capacity(k * (1 + columns.len()) * IMAGE_PIXELS);
    for i in 0..k {
        data.extend_from_slice(originals.row(i));
        for c in columns {
            data.extend_from_slice(c.row(i));
        }
    }
    Tensor::new(vec![k * (1 + columns.len()), 1, IMAGE_SIDE, IMAGE_SIDE], data)
}
