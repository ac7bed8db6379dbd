//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. List values are separated by
//! whitespace or commas; defence and grid cells are written `noise:alpha`.
//! [`ExperimentConfig::echo`] prints every key explicitly, and parsing an
//! echo yields the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::splitnn::{NoiseConfig, NoiseMode, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    TrainClassifier,
    Attack,
    Grid,
    NoiseSweep,
    SizeStudy,
    TransferStudy,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        Self::TrainClassifier,
        Self::Grid,
        Self::NoiseSweep,
        Self::Attack,
        Self::SizeStudy,
        Self::TransferStudy,
    ];

    /// CLI verb and config value.
    pub fn verb(self) -> &'static str {
        match self {
            Self::TrainClassifier => "train",
            Self::Attack => "attack",
            Self::Grid => "grid",
            Self::NoiseSweep => "sweep",
            Self::SizeStudy => "sizes",
            Self::TransferStudy => "transfer",
        }
    }

    /// One-line description for the `list` verb.
    pub fn describe(self) -> &'static str {
        match self {
            Self::TrainClassifier => {
                "single classifier: accuracy and input/intermediate dCor for one (noise, alpha) setting"
            }
            Self::Grid => "accuracy and dCor over the noise-scale x NoPeekNN-weight grid",
            Self::NoiseSweep => "accuracy against post-training noise scale",
            Self::Attack => "reconstruction quality under noise and NoPeekNN defences",
            Self::SizeStudy => "reconstruction quality against attacker dataset size",
            Self::TransferStudy => "attacker trained on a different dataset (EMNIST letters by default)",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.verb() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Profile {
    /// Settings of the original study: 40k classifier images, 10 epochs.
    #[default]
    Full,
    /// 10k classifier images, 5 epochs; attacker sets unchanged.
    Desk,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Desk => "desk",
        }
    }

    fn classifier_limit(self) -> usize {
        match self {
            Self::Full => 40_000,
            Self::Desk => 10_000,
        }
    }

    fn epochs(self) -> usize {
        match self {
            Self::Full => 10,
            Self::Desk => 5,
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "desk" => Ok(Self::Desk),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

/// A `(training noise scale, NoPeekNN weight)` pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub noise: f32,
    pub alpha: f32,
}

impl Cell {
    pub const fn new(noise: f32, alpha: f32) -> Self {
        Self { noise, alpha }
    }
}

impl FromStr for Cell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (n, a) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("cell {s:?} must be written noise:alpha")))?;
        Ok(Self {
            noise: parse_num("cell noise", n)?,
            alpha: parse_num("cell alpha", a)?,
        })
    }
}

/// The reference (noise, alpha) cells followed by the `(0, 0)` baseline.
pub const REFERENCE_CELLS: [Cell; 13] = [
    Cell::new(0.0, 0.1),
    Cell::new(0.0, 0.2),
    Cell::new(0.0, 0.5),
    Cell::new(0.1, 0.0),
    Cell::new(0.1, 0.1),
    Cell::new(0.1, 0.5),
    Cell::new(0.2, 0.0),
    Cell::new(0.2, 0.1),
    Cell::new(0.2, 0.5),
    Cell::new(0.5, 0.0),
    Cell::new(0.5, 0.1),
    Cell::new(0.5, 0.5),
    Cell::new(0.0, 0.0),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub profile: Profile,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub classifier_limit: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_owner: f64,
    pub lr_server: f64,
    pub alpha: f32,
    pub noise_scale: f32,
    pub noise_mode: NoiseMode,
    pub attack_size: usize,
    pub attack_epochs: usize,
    pub attack_batch_size: usize,
    pub attack_lr: f64,
    /// Victim defences for the attack experiment: inference noise scale and
    /// the NoPeekNN weight the victim was trained with.
    pub defences: Vec<Cell>,
    pub grid_cells: Vec<Cell>,
    pub sweep_scales: Vec<f32>,
    pub sizes: Vec<usize>,
    /// `emnist` for the EMNIST letters files, otherwise a subdirectory of
    /// `data_dir` holding MNIST-layout files.
    pub transfer_source: String,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        let profile = Profile::Full;
        Self {
            experiment,
            profile,
            seed: 0,
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            classifier_limit: profile.classifier_limit(),
            epochs: profile.epochs(),
            batch_size: 32,
            lr_owner: 1e-3,
            lr_server: 1e-3,
            alpha: 0.0,
            noise_scale: 0.0,
            noise_mode: NoiseMode::Off,
            attack_size: 5000,
            attack_epochs: 10,
            attack_batch_size: 32,
            attack_lr: 1e-3,
            defences: [0.0, 0.1, 0.5, 1.0].map(|b| Cell::new(b, 0.0)).to_vec(),
            grid_cells: REFERENCE_CELLS.to_vec(),
            sweep_scales: (0..=10).map(|i| i as f32 / 10.0).collect(),
            sizes: vec![100, 250, 1250, 5000],
            transfer_source: "emnist".into(),
        }
    }

    /// Reduced classifier training for quick runs; the attacker sets and
    /// every other setting are left alone.
    pub fn desk_scale_profile(mut self) -> Self {
        self.set_profile(Profile::Desk);
        self
    }

    pub fn set_profile(&mut self, profile: Profile) {
        self.profile = profile;
        self.classifier_limit = profile.classifier_limit();
        self.epochs = profile.epochs();
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            mu: 0.0,
            scale: self.noise_scale,
            mode: self.noise_mode,
        }
    }

    pub fn train_config(&self, alpha: f32, noise: NoiseConfig) -> TrainConfig {
        TrainConfig {
            alpha,
            noise,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_owner: self.lr_owner,
            lr_server: self.lr_server,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config(self.alpha, self.noise()).validate()?;
        for c in self.grid_cells.iter().chain(&self.defences) {
            self.train_config(c.alpha, NoiseConfig::training(c.noise)).validate()?;
        }
        for &b in &self.sweep_scales {
            NoiseConfig::inference(b).validate()?;
        }
        if self.classifier_limit < 2 || self.epochs == 0 {
            return Err(Error::Config("classifier_limit must be >= 2 and epochs >= 1".into()));
        }
        if self.attack_batch_size == 0 || self.attack_epochs == 0 || self.attack_lr.is_nan() || self.attack_lr <= 0.0 {
            return Err(Error::Config(
                "attack batch size, epochs and lr must be positive".into(),
            ));
        }
        if self.attack_size == 0 || self.sizes.contains(&0) {
            return Err(Error::Config("attack sizes must be positive".into()));
        }
        let needs = |xs: bool, what: &str| {
            if xs {
                Err(Error::Config(format!(
                    "{} needs a non-empty {what}",
                    self.experiment.verb()
                )))
            } else {
                Ok(())
            }
        };
        match self.experiment {
            ExperimentKind::Attack => needs(self.defences.is_empty(), "defences")?,
            ExperimentKind::Grid => needs(self.grid_cells.is_empty(), "grid_cells")?,
            ExperimentKind::NoiseSweep => needs(self.sweep_scales.is_empty(), "sweep_scales")?,
            ExperimentKind::SizeStudy => needs(self.sizes.is_empty(), "sizes")?,
            _ => {}
        }
        if self.transfer_source.is_empty() || self.transfer_source.contains(['/', '\\']) {
            return Err(Error::Config(
                "transfer_source must be `emnist` or a directory name".into(),
            ));
        }
        Ok(())
    }

    /// Every key, one per line, in a fixed order.
    pub fn echo(&self) -> String {
        let cells = |cs: &[Cell]| {
            cs.iter()
                .map(|c| format!("{}:{}", c.noise, c.alpha))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let join = |xs: Vec<String>| xs.join(" ");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("experiment", self.experiment.verb().into());
        kv("profile", self.profile.as_str().into());
        kv("seed", self.seed.to_string());
        kv("data_dir", self.data_dir.display().to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("classifier_limit", self.classifier_limit.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr_owner", self.lr_owner.to_string());
        kv("lr_server", self.lr_server.to_string());
        kv("alpha", self.alpha.to_string());
        kv("noise_scale", self.noise_scale.to_string());
        kv("noise_mode", self.noise_mode.as_str().into());
        kv("attack_size", self.attack_size.to_string());
        kv("attack_epochs", self.attack_epochs.to_string());
        kv("attack_batch_size", self.attack_batch_size.to_string());
        kv("attack_lr", self.attack_lr.to_string());
        kv("defences", cells(&self.defences));
        kv("grid_cells", cells(&self.grid_cells));
        kv(
            "sweep_scales",
            join(self.sweep_scales.iter().map(f32::to_string).collect()),
        );
        kv("sizes", join(self.sizes.iter().map(usize::to_string).collect()));
        kv("transfer_source", self.transfer_source.clone());
        out
    }

    /// Short hash of everything that can influence results. The output
    /// location is excluded so moving a run does not change its identity.
    pub fn hash(&self) -> String {
        let relevant: String = self
            .echo()
            .lines()
            .filter(|l| !l.starts_with("output_dir "))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(relevant.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `output_dir/<verb>-<hash>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir
            .join(format!("{}-{}", self.experiment.verb(), self.hash()))
    }

    /// Parses a configuration file. `profile` is applied before any other
    /// key, so explicit `epochs` or `classifier_limit` values win.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {}",
                    lineno + 1,
                    k.trim()
                )));
            }
        }
        let experiment = map
            .remove("experiment")
            .ok_or_else(|| Error::Config("missing key `experiment`".into()))?
            .parse()?;
        let mut cfg = Self::new(experiment);
        if let Some(p) = map.remove("profile") {
            cfg.set_profile(p.parse()?);
        }
        for (k, v) in map {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = value.parse()?,
            "profile" => self.set_profile(value.parse()?),
            "seed" => self.seed = parse_num(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "classifier_limit" => self.classifier_limit = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "lr_owner" => self.lr_owner = parse_num(key, value)?,
            "lr_server" => self.lr_server = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "noise_scale" => self.noise_scale = parse_num(key, value)?,
            "noise_mode" => self.noise_mode = value.parse()?,
            "attack_size" => self.attack_size = parse_num(key, value)?,
            "attack_epochs" => self.attack_epochs = parse_num(key, value)?,
            "attack_batch_size" => self.attack_batch_size = parse_num(key, value)?,
            "attack_lr" => self.attack_lr = parse_num(key, value)?,
            "defences" => self.defences = parse_list(value)?,
            "grid_cells" => self.grid_cells = parse_list(value)?,
            "sweep_scales" => {
                self.sweep_scales = split_list(value).map(|s| parse_num(key, s)).collect::<Result<_>>()?
            }
            "sizes" => self.sizes = split_list(value).map(|s| parse_num(key, s)).collect::<Result<_>>()?,
            "transfer_source" => self.transfer_source = value.to_string(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
}

fn parse_list(value: &str) -> Result<Vec<Cell>> {
    split_list(value).map(str::parse).collect()
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}
