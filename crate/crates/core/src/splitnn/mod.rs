//! The two-segment classifier, the split training loop with the
//! distance-correlation penalty and Laplace noise defence, and the
//! accuracy / leakage metrics.

mod metrics;
mod noise;
mod protocol;
mod train;

pub use metrics::{evaluate_accuracy, measure_dcor_with, measure_intermediate_dcor, noise_sweep, DcorSummary};
pub use noise::{sample_laplace, NoiseConfig, NoiseMode, Phase};
pub use protocol::{forward_split, serve, DataOwner, ServerReport, SplitForward, StepLosses};
pub use train::{train, EpochLog, TrainConfig, TrainLog, TrainOptions};

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Checkpoint, Segment};
use crate::tensor::Tensor;

/// Width of the intermediate representation sent from owner to server.
pub const CUT_WIDTH: usize = 64;

/// Data-owner segment `f1`: image `[N,1,28,28]` -> intermediate `[N,64]`.
pub fn owner_segment(seed: u64) -> Segment {
    Segment::builder(seed)
        .conv2d("conv1", 1, 8, 3, 1, 1)
        .relu()
        .maxpool2()
        .conv2d("conv2", 8, 16, 3, 1, 1)
        .relu()
        .maxpool2()
        .flatten()
        .dense("fc", 16 * 7 * 7, CUT_WIDTH)
        .relu()
        .build()
}

/// Server segment `f2`: intermediate `[N,64]` -> logits `[N,10]`.
pub fn server_segment(seed: u64) -> Segment {
    Segment::builder(seed)
        .dense("fc1", CUT_WIDTH, 128)
        .relu()
        .dense("fc2", 128, crate::data::NUM_CLASSES)
        .build()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitModel {
    pub owner: Segment,
    pub server: Segment,
}

impl SplitModel {
    pub fn new(seed: u64) -> Self {
        Self {
            owner: owner_segment(crate::seed::derive_seed(seed, 1)),
            server: server_segment(crate::seed::derive_seed(seed, 2)),
        }
    }

    /// Intermediate representation before any noise.
    pub fn intermediate(&self, images: &Tensor) -> Result<Tensor> {
        self.owner.infer(images)
    }

    pub fn checkpoint(&self, config_echo: &str) -> Checkpoint {
        let mut tensors = self.owner.named_tensors("owner.");
        tensors.extend(self.server.named_tensors("server."));
        Checkpoint {
            config_echo: config_echo.to_string(),
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(0);
        model.owner.load_named("owner.", &ck.tensors)?;
        model.server.load_named("server.", &ck.tensors)?;
        if ck.tensors.len() != model.owner.params().len() + model.server.params().len() {
            return Err(Error::Checkpoint("unexpected extra tensors".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path, config_echo: &str) -> Result<()> {
        self.checkpoint(config_echo).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
