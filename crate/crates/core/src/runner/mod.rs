//! Configuration-driven experiments. Each run writes into
//! `output_dir/<verb>-<config hash>`: the config echo, CSV results, PGM
//! grids and checkpoints. Identical configurations produce byte-identical
//! CSV files. Every table cell is a single training run.

mod config;

pub use config::{Cell, ExperimentConfig, ExperimentKind, Profile, REFERENCE_CELLS};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attack::{
    collect, defence_grid, evaluate_pairs, random_pairing_baseline, train_attacker, AttackConfig, AttackDataset,
    AttackModel, ReconstructionReport, VictimEndpoint,
};
use crate::channel::TransportMode;
use crate::data::{
    load_split, metrics_csv_string, write_pgm_grid, DatasetFiles, LabeledDataset, MetricsRow, SplitSpec, Splits,
    NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Segment};
use crate::seed::{derive_seed, Seeds, Stream};
use crate::splitnn::{
    evaluate_accuracy, measure_intermediate_dcor, noise_sweep, train, NoiseConfig, SplitModel, TrainOptions,
};
use crate::tensor::Tensor;

/// Execution settings that do not influence results.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub transport: TransportMode,
    pub quiet: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Header of `extrapolated.csv`, listing cells outside the reference set.
pub const EXTRAPOLATED_HEADER: &str = "noise_scale,nopeek_weight";
pub const SWEEP_HEADER: &str = "noise_scale,accuracy";
pub const GRID_SWEEP_HEADER: &str = "noise_scale,nopeek_weight,eval_noise_scale,accuracy";
pub const ATTACK_HEADER: &str = "noise_scale,nopeek_weight,attack_size,mean_dcor,stderr_dcor,mse,baseline_dcor";
pub const SIZES_HEADER: &str = "attack_size,mean_dcor,stderr_dcor,mse,baseline_dcor";
pub const TRANSFER_HEADER: &str = "source,attack_size,mean_dcor,stderr_dcor,mse";
pub const EPOCHS_HEADER: &str = "epoch,task_loss,dcor";

pub fn mnist_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.data_dir.join("mnist")
}

fn transfer_files(cfg: &ExperimentConfig) -> DatasetFiles {
    if cfg.transfer_source == "emnist" {
        DatasetFiles::emnist_letters(&cfg.data_dir.join("emnist"))
    } else {
        DatasetFiles::generic_train(&cfg.data_dir.join(&cfg.transfer_source), &cfg.transfer_source)
    }
}

/// Every input file the experiment reads.
pub fn required_files(cfg: &ExperimentConfig) -> Vec<DatasetFiles> {
    let mnist = mnist_dir(cfg);
    let mut files = vec![DatasetFiles::mnist_train(&mnist)];
    match cfg.experiment {
        ExperimentKind::TrainClassifier | ExperimentKind::Grid | ExperimentKind::NoiseSweep => {
            files.push(DatasetFiles::mnist_test(&mnist))
        }
        ExperimentKind::TransferStudy => files.push(transfer_files(cfg)),
        ExperimentKind::Attack | ExperimentKind::SizeStudy => {}
    }
    files
}

fn check_inputs(cfg: &ExperimentConfig) -> Result<()> {
    for set in required_files(cfg) {
        for path in [&set.images, &set.labels] {
            if !path.exists() {
                return Err(Error::MissingData {
                    path: path.clone(),
                    hint: format!(
                        "{} is required by the `{}` experiment; download it (IDX, optionally .gz) or set data_dir",
                        set.name,
                        cfg.experiment.verb()
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Validates the configuration and inputs, then runs the experiment.
pub fn run(cfg: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    check_inputs(cfg)?;
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir)?;
    let mut ctx = Context {
        cfg,
        options,
        seeds: Seeds::new(cfg.seed),
        dir: dir.clone(),
        files: Vec::new(),
    };
    ctx.write("config.txt", cfg.echo().as_bytes())?;
    match cfg.experiment {
        ExperimentKind::TrainClassifier => ctx.train_classifier()?,
        ExperimentKind::Grid => ctx.grid()?,
        ExperimentKind::NoiseSweep => ctx.sweep()?,
        ExperimentKind::Attack => ctx.attack()?,
        ExperimentKind::SizeStudy => ctx.sizes()?,
        ExperimentKind::TransferStudy => ctx.transfer()?,
    }
    Ok(RunSummary { dir, files: ctx.files })
}

/// The `list` verb: experiment kinds and what they measure.
pub fn experiment_listing() -> String {
    let mut out = String::new();
    for kind in ExperimentKind::ALL {
        let _ = writeln!(out, "{:<9} {}", kind.verb(), kind.describe());
    }
    out
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    options: &'a RunOptions,
    seeds: Seeds,
    dir: PathBuf,
    files: Vec<PathBuf>,
}

struct AttackOutcome {
    report: ReconstructionReport,
    reconstructions: Tensor,
    baseline: f64,
    attacker: AttackModel,
}

impl Context<'_> {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.options.quiet {
            eprintln!("[{}] {}", self.cfg.experiment.verb(), msg.as_ref());
        }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.files.push(path);
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.files.push(path.clone());
        path
    }

    fn splits(&self) -> Result<Splits> {
        let mut s = load_split(&DatasetFiles::mnist_train(&mnist_dir(self.cfg)), &SplitSpec::default())?;
        s.classifier_train = s.classifier_train.truncated(self.cfg.classifier_limit);
        Ok(s)
    }

    fn test_set(&self) -> Result<LabeledDataset> {
        DatasetFiles::mnist_test(&mnist_dir(self.cfg)).load()
    }

    fn train_model(&self, data: &LabeledDataset, alpha: f32, noise: NoiseConfig) -> Result<(SplitModel, String)> {
        let tc = self.cfg.train_config(alpha, noise);
        self.log(format!(
            "training classifier: alpha={alpha} noise={} b={} on {} images, {} epochs",
            noise.mode.as_str(),
            noise.scale,
            data.len(),
            tc.epochs
        ));
        let opts = TrainOptions {
            transport: self.options.transport,
            tap: None,
            verbose: !self.options.quiet,
        };
        let (model, log) = train(data, &tc, &opts)?;
        let mut epochs = String::from(EPOCHS_HEADER);
        epochs.push('\n');
        for e in &log.epochs {
            let _ = writeln!(epochs, "{},{:.6},{:.6}", e.epoch + 1, e.mean_task_loss, e.mean_dcor);
        }
        Ok((model, epochs))
    }

    fn metrics(&self, model: &SplitModel, test: &LabeledDataset, noise: NoiseConfig, alpha: f32) -> Result<MetricsRow> {
        let accuracy = evaluate_accuracy(model, test, &noise, self.seeds.get(Stream::EvalNoise))?;
        let dcor = measure_intermediate_dcor(model, test, 32)?;
        self.log(format!(
            "b={} alpha={alpha}: accuracy {accuracy:.2}%, dcor {:.4} +/- {:.4}",
            noise.scale, dcor.mean, dcor.stderr
        ));
        Ok(MetricsRow {
            noise_scale: noise.scale as f64,
            nopeek_weight: alpha as f64,
            accuracy,
            dcor_mean: dcor.mean,
            dcor_stderr: dcor.stderr,
        })
    }

    fn train_classifier(&mut self) -> Result<()> {
        let splits = self.splits()?;
        let test = self.test_set()?;
        let noise = self.cfg.noise();
        let (model, epochs) = self.train_model(&splits.classifier_train, self.cfg.alpha, noise)?;
        let row = self.metrics(&model, &test, noise, self.cfg.alpha)?;
        self.write("epochs.csv", epochs.as_bytes())?;
        self.write("metrics.csv", metrics_csv_string(&[row]).as_bytes())?;
        let path = self.path("model.ckpt");
        model.save(&path, &self.cfg.echo())
    }

    fn grid(&mut self) -> Result<()> {
        let splits = self.splits()?;
        let test = self.test_set()?;
        let mut rows = Vec::new();
        let mut sweep = format!("{GRID_SWEEP_HEADER}\n");
        let mut extrapolated = format!("{EXTRAPOLATED_HEADER}\n");
        for (i, cell) in self.cfg.grid_cells.iter().enumerate() {
            self.log(format!("cell {}/{}", i + 1, self.cfg.grid_cells.len()));
            let noise = NoiseConfig::training(cell.noise);
            let (model, _) = self.train_model(&splits.classifier_train, cell.alpha, noise)?;
            rows.push(self.metrics(&model, &test, noise, cell.alpha)?);
            for (b, acc) in noise_sweep(&model, &test, &self.cfg.sweep_scales, self.seeds.get(Stream::EvalNoise))? {
                let _ = writeln!(sweep, "{:.4},{:.4},{:.4},{:.4}", cell.noise, cell.alpha, b, acc);
            }
            if !REFERENCE_CELLS[..12].contains(cell) {
                let _ = writeln!(extrapolated, "{:.4},{:.4}", cell.noise, cell.alpha);
            }
            let path = self.path(&format!("cell-{i:02}.ckpt"));
            model.save(&path, &self.cfg.echo())?;
        }
        self.write("metrics.csv", metrics_csv_string(&rows).as_bytes())?;
        self.write("extrapolated.csv", extrapolated.as_bytes())?;
        self.write("noise_sweep.csv", sweep.as_bytes())
    }

    fn sweep(&mut self) -> Result<()> {
        let splits = self.splits()?;
        let test = self.test_set()?;
        let (model, epochs) = self.train_model(&splits.classifier_train, self.cfg.alpha, self.cfg.noise())?;
        let mut csv = format!("{SWEEP_HEADER}\n");
        for (b, acc) in noise_sweep(&model, &test, &self.cfg.sweep_scales, self.seeds.get(Stream::EvalNoise))? {
            self.log(format!("post-training b={b}: accuracy {acc:.2}%"));
            let _ = writeln!(csv, "{b:.4},{acc:.4}");
        }
        self.write("epochs.csv", epochs.as_bytes())?;
        self.write("sweep.csv", csv.as_bytes())?;
        let path = self.path("model.ckpt");
        model.save(&path, &self.cfg.echo())
    }

    fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            epochs: self.cfg.attack_epochs,
            batch_size: self.cfg.attack_batch_size,
            lr: self.cfg.attack_lr,
            seed: self.seeds.get(Stream::AttackerInit),
        }
    }

    /// Collects `m` pairs from `source` through a victim endpoint, trains an
    /// attacker and scores it on intercepted `val` intermediates.
    fn run_attack(
        &self,
        victim: &Segment,
        noise: NoiseConfig,
        source: &LabeledDataset,
        m: usize,
        val: &AttackDataset,
        stream: u64,
    ) -> Result<AttackOutcome> {
        let mut endpoint = VictimEndpoint::new(
            victim.clone(),
            noise,
            derive_seed(self.seeds.get(Stream::CollectNoise), stream),
        );
        let pairs = collect(&mut endpoint, source, m)?;
        self.log(format!("training attacker on {m} pairs from {}", source.name));
        let attacker = train_attacker(&pairs, &self.attack_config())?;
        let (report, reconstructions) = evaluate_pairs(&attacker, val)?;
        let baseline = random_pairing_baseline(&attacker, val, self.seeds.get(Stream::Baseline))?;
        self.log(format!(
            "reconstruction dcor {:.4} +/- {:.4} (mse {:.4}, random pairing {:.4})",
            report.mean_dcor, report.stderr_dcor, report.mse, baseline
        ));
        Ok(AttackOutcome {
            report,
            reconstructions,
            baseline,
            attacker,
        })
    }

    /// What the server intercepts when the victim is queried on `val`.
    fn intercept(
        &self,
        victim: &Segment,
        noise: NoiseConfig,
        val: &LabeledDataset,
        stream: u64,
    ) -> Result<AttackDataset> {
        let mut endpoint = VictimEndpoint::new(
            victim.clone(),
            noise,
            derive_seed(self.seeds.get(Stream::EvalNoise), stream),
        );
        collect(&mut endpoint, val, val.len())
    }

    fn save_attacker(&mut self, name: &str, attacker: &AttackModel) -> Result<()> {
        let path = self.path(name);
        Checkpoint {
            config_echo: self.cfg.echo(),
            tensors: attacker.decoder.named_tensors("decoder."),
        }
        .save(&path)
    }

    fn write_grid(&mut self, val: &LabeledDataset, columns: &[Tensor]) -> Result<()> {
        let picks = val.one_per_class(NUM_CLASSES);
        let originals = val.images(0..val.len()).select_rows(&picks);
        let cols: Vec<Tensor> = columns.iter().map(|c| c.select_rows(&picks)).collect();
        let grid = defence_grid(&originals, &cols)?;
        let path = self.path("grid.pgm");
        write_pgm_grid(&grid, 1 + columns.len(), &path)
    }

    fn attack(&mut self) -> Result<()> {
        let splits = self.splits()?;
        let mut victims: Vec<(u32, SplitModel)> = Vec::new();
        let mut csv = format!("{ATTACK_HEADER}\n");
        let mut per_image = String::from("column,index,dcor\n");
        let mut columns = Vec::new();
        for (i, cell) in self.cfg.defences.iter().enumerate() {
            let key = cell.alpha.to_bits();
            if !victims.iter().any(|(k, _)| *k == key) {
                let (model, _) = self.train_model(&splits.classifier_train, cell.alpha, NoiseConfig::OFF)?;
                let path = self.path(&format!("victim-{}.ckpt", victims.len()));
                model.save(&path, &self.cfg.echo())?;
                victims.push((key, model));
            }
            let victim = &victims.iter().find(|(k, _)| *k == key).expect("trained above").1;
            self.log(format!(
                "defence {}: inference noise b={}, alpha={}",
                i + 1,
                cell.noise,
                cell.alpha
            ));
            let noise = NoiseConfig::inference(cell.noise);
            let val = self.intercept(&victim.owner, noise, &splits.attacker_val, i as u64)?;
            let out = self.run_attack(
                &victim.owner,
                noise,
                &splits.attacker_train,
                self.cfg.attack_size,
                &val,
                i as u64,
            )?;
            let r = &out.report;
            let _ = writeln!(
                csv,
                "{:.4},{:.4},{},{:.6},{:.6},{:.6},{:.6}",
                cell.noise, cell.alpha, self.cfg.attack_size, r.mean_dcor, r.stderr_dcor, r.mse, out.baseline
            );
            for (j, d) in r.per_image_dcor.iter().enumerate() {
                let _ = writeln!(per_image, "{i},{j},{d:.6}");
            }
            self.save_attacker(&format!("attacker-{i:02}.ckpt"), &out.attacker)?;
            columns.push(out.reconstructions);
        }
        self.write("attack.csv", csv.as_bytes())?;
        self.write("per_image.csv", per_image.as_bytes())?;
        self.write_grid(&splits.attacker_val, &columns)
    }

    fn sizes(&mut self) -> Result<()> {
        let splits = self.splits()?;
        let noise = self.cfg.noise();
        let (victim, _) = self.train_model(&splits.classifier_train, self.cfg.alpha, noise)?;
        let val = self.intercept(&victim.owner, noise, &splits.attacker_val, 0)?;
        let mut csv = format!("{SIZES_HEADER}\n");
        let mut columns = Vec::new();
        for (i, &m) in self.cfg.sizes.iter().enumerate() {
            let out = self.run_attack(&victim.owner, noise, &splits.attacker_train, m, &val, i as u64)?;
            let r = &out.report;
            let _ = writeln!(
                csv,
                "{m},{:.6},{:.6},{:.6},{:.6}",
                r.mean_dcor, r.stderr_dcor, r.mse, out.baseline
            );
            self.save_attacker(&format!("attacker-{m}.ckpt"), &out.attacker)?;
            columns.push(out.reconstructions);
        }
        self.write("sizes.csv", csv.as_bytes())?;
        self.write_grid(&splits.attacker_val, &columns)
    }

    fn transfer(&mut self) -> Result<()> {
        let splits = self.splits()?;
        let other = transfer_files(self.cfg).load()?;
        let noise = self.cfg.noise();
        let (victim, _) = self.train_model(&splits.classifier_train, self.cfg.alpha, noise)?;
        let val = self.intercept(&victim.owner, noise, &splits.attacker_val, 0)?;
        let m = self.cfg.attack_size;
        let native = self.run_attack(&victim.owner, noise, &splits.attacker_train, m, &val, 0)?;
        let foreign = self.run_attack(&victim.owner, noise, &other, m, &val, 1)?;
        let mut csv = format!("{TRANSFER_HEADER}\n");
        for (name, r) in [("mnist", &native.report), (other.name.as_str(), &foreign.report)] {
            let _ = writeln!(csv, "{name},{m},{:.6},{:.6},{:.6}", r.mean_dcor, r.stderr_dcor, r.mse);
        }
        let _ = writeln!(csv, "random-pairing,{m},{:.6},,", native.baseline);
        self.write("transfer.csv", csv.as_bytes())?;
        self.save_attacker("attacker-mnist.ckpt", &native.attacker)?;
        self.save_attacker("attacker-transfer.ckpt", &foreign.attacker)?;
        self.write_grid(&splits.attacker_val, &[native.reconstructions, foreign.reconstructions])
    }
}

/// Reads a results CSV into header-keyed rows of strings.
pub fn read_csv(path: &Path) -> Result<Vec<Vec<(String, String)>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    Ok(lines
        .filter(|l| !l.is_empty())
        .map(|l| header.iter().cloned().zip(l.split(',').map(str::to_string)).collect())
        .collect())
}
