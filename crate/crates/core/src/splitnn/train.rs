use std::net::TcpListener;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::noise::NoiseConfig;
use super::protocol::{serve, DataOwner, ServerReport};
use super::SplitModel;
use crate::channel::{in_process_pair, Socket, Tap, Tapped, Transport, TransportMode};
use crate::data::{batch_indices, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::Segment;
use crate::seed::{Seeds, Stream};
use crate::tensor::Adam;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the distance-correlation term; 0 disables it.
    pub alpha: f32,
    pub noise: NoiseConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_owner: f64,
    pub lr_server: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            noise: NoiseConfig::OFF,
            epochs: 10,
            batch_size: 32,
            lr_owner: 1e-3,
            lr_server: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be >= 0 (got {})", self.alpha)));
        }
        self.noise.validate()?;
        if self.batch_size == 0 || (self.alpha > 0.0 && self.batch_size < 2) {
            return Err(Error::BatchSize(self.batch_size));
        }
        for (name, lr) in [("lr_owner", self.lr_owner), ("lr_server", self.lr_server)] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive (got {lr})")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub transport: TransportMode,
    /// Records every intermediate the server receives.
    pub tap: Option<Tap>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_task_loss: f64,
    pub mean_dcor: f64,
    pub batches: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub server: ServerReport,
}

/// Trains a fresh [`SplitModel`] initialised from `config.seed`.
pub fn train(data: &LabeledDataset, config: &TrainConfig, options: &TrainOptions) -> Result<(SplitModel, TrainLog)> {
    config.validate()?;
    let seeds = Seeds::new(config.seed);
    let model = SplitModel::new(seeds.get(Stream::Init));
    let (owner_end, server_end): (Box<dyn Transport>, Box<dyn Transport>) = match options.transport {
        TransportMode::InProcess => {
            let (a, b) = in_process_pair();
            (Box::new(a), Box::new(b))
        }
        TransportMode::Socket => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let pending = thread::spawn(move || Socket::accept(&listener));
            let owner = Socket::connect(addr)?;
            let server = pending
                .join()
                .map_err(|_| Error::Protocol("accept thread panicked".into()))??;
            (Box::new(owner), Box::new(server))
        }
    };
    let server_end: Box<dyn Transport> = match &options.tap {
        Some(tap) => Box::new(Tapped::new(server_end, tap.clone())),
        None => server_end,
    };

    let server_adam = Adam::new(config.lr_server);
    let server_segment = model.server;
    let server = thread::spawn(move || -> Result<(Segment, ServerReport)> {
        let mut segment = server_segment;
        let mut transport = server_end;
        let report = serve(&mut segment, &mut transport, server_adam)?;
        Ok((segment, report))
    });

    let mut owner = DataOwner::new(
        model.owner,
        Adam::new(config.lr_owner),
        config.alpha,
        config.noise,
        ChaCha8Rng::seed_from_u64(seeds.get(Stream::TrainNoise)),
    );
    let mut transport = owner_end;
    let owner_result = run_epochs(&mut owner, &mut transport, data, config, seeds, options.verbose);
    if owner_result.is_ok() {
        owner.shutdown(&mut transport)?;
    }
    drop(transport);
    let server_result = server
        .join()
        .map_err(|_| Error::Protocol("server thread panicked".into()))?;

    // A server-side failure surfaces on the owner as a closed channel; report
    // the root cause instead.
    match (owner_result, server_result) {
        (Ok(epochs), Ok((segment, report))) => {
            let model = SplitModel {
                owner: owner.segment,
                server: segment,
            };
            Ok((model, TrainLog { epochs, server: report }))
        }
        (Err(Error::Closed | Error::Io(_)), Err(server_err)) => Err(server_err),
        (Err(e), _) | (Ok(_), Err(e)) => Err(e),
    }
}

fn run_epochs(
    owner: &mut DataOwner,
    transport: &mut Box<dyn Transport>,
    data: &LabeledDataset,
    config: &TrainConfig,
    seeds: Seeds,
    verbose: bool,
) -> Result<Vec<EpochLog>> {
    let shuffle_seed = seeds.get(Stream::Shuffle);
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let plan = batch_indices(data.len(), config.batch_size, shuffle_seed, epoch as u64)?;
        let (mut task_sum, mut dcor_sum) = (0.0f64, 0.0f64);
        for (batch, idx) in plan.iter().enumerate() {
            let (images, labels) = data.gather(idx);
            let losses = owner.train_step(transport, &images, &labels).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    batch,
                    loss: f32::NAN,
                },
                e => e,
            })?;
            if !losses.task.is_finite() || !losses.dcor.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    loss: losses.task,
                });
            }
            task_sum += losses.task as f64;
            dcor_sum += losses.dcor as f64;
        }
        let n = plan.len().max(1) as f64;
        let log = EpochLog {
            epoch,
            mean_task_loss: task_sum / n,
            mean_dcor: dcor_sum / n,
            batches: plan.len(),
        };
        if verbose {
            eprintln!(
                "epoch {:>2}: task loss {:.4}, dcor {:.4} over {} batches",
                epoch + 1,
                log.mean_task_loss,
                log.mean_dcor,
                log.batches
            );
        }
        logs.push(log);
    }
    Ok(logs)
}
