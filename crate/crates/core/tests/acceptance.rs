//! Acceptance report: one PASS/FAIL/SKIP line per criterion.
//!
//! Criteria 9-11 are self-contained and always run; a failure there exits
//! non-zero. Criteria 1-8 need the MNIST files and long training runs:
//!
//! - `SPLITLAB_DATA_DIR` holds `mnist/` and the transfer source (default:
//!   `data/` at the workspace root). `emnist/` is used when present, otherwise
//!   `fashion-mnist/` stands in and the line is marked SURROGATE.
//! - `SPLITLAB_ACCEPTANCE=full` runs any experiment whose results are not yet
//!   in `SPLITLAB_ACCEPTANCE_OUT` (default `target/acceptance`). Without it,
//!   results from an earlier full run are re-read and missing ones are
//!   skipped. Runs are keyed by config hash, so cached CSVs are exactly what
//!   a re-run would produce.
//! - Criteria 1-8 are reported but only fail the process when
//!   `SPLITLAB_ACCEPTANCE_STRICT=1`, since they measure reproduction quality
//!   rather than correctness.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitlab::channel::{decode, encode, ChannelMessage, CodecError, MessageKind, TransportMode};
use splitlab::data::{read_metrics_csv, LabeledDataset, MetricsRow, IMAGE_PIXELS, IMAGE_SIDE};
use splitlab::dcor::distance_correlation;
use splitlab::runner::{read_csv, run, Cell, ExperimentConfig, ExperimentKind, RunOptions};
use splitlab::splitnn::{train, NoiseConfig, TrainConfig, TrainOptions};
use splitlab::tensor::{grad_check, Tape, Tensor};

/// Reference (noise, alpha) -> (accuracy %, intermediate dCor).
const REFERENCE: [(f32, f32, f64, f64); 12] = [
    (0.0, 0.1, 98.04, 0.472),
    (0.0, 0.2, 97.80, 0.390),
    (0.0, 0.5, 97.90, 0.368),
    (0.1, 0.0, 98.19, 0.804),
    (0.1, 0.1, 97.84, 0.474),
    (0.1, 0.5, 98.00, 0.411),
    (0.2, 0.0, 98.00, 0.811),
    (0.2, 0.1, 97.98, 0.491),
    (0.2, 0.5, 97.46, 0.411),
    (0.5, 0.0, 98.24, 0.795),
    (0.5, 0.1, 97.52, 0.525),
    (0.5, 0.5, 97.38, 0.437),
];
const ACC_TOL: f64 = 1.5;
const DCOR_TOL: f64 = 0.10;
const TREND_MARGIN: f64 = 0.05;
const RUNTIME_LIMIT_S: f64 = 45.0 * 60.0;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Report {
    hard_failures: usize,
    soft_failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, hard: bool, outcome: Outcome) {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                if hard {
                    self.hard_failures += 1;
                } else {
                    self.soft_failures += 1;
                }
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {id:>2}. {name}: {detail}");
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn workspace_root() -> PathBuf {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    root.canonicalize().unwrap_or(root)
}

fn env_path(key: &str, default: PathBuf) -> PathBuf {
    std::env::var_os(key).map(PathBuf::from).unwrap_or(default)
}

// ---------------------------------------------------------------- criterion 9

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn signed_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f32 = rng.gen_range(0.05..1.0);
        if rng.gen() {
            v
        } else {
            -v
        }
    })
}

fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * 0.1 - n as f32 * 0.05).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// Largest relative finite-difference error over every op and argument.
fn worst_gradient_error() -> (f64, &'static str) {
    let mut worst = (0.0f64, "");
    let mut note = |name: &'static str, err: f64| {
        if err > worst.0 {
            worst = (err, name);
        }
    };
    for seed in 1..=5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, &[2, 2, 6, 5], -1.0, 1.0);
        let k = uniform(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
        let b = uniform(&mut rng, &[3], -0.5, 0.5);
        let t4 = uniform(&mut rng, &[2, 3, 6, 5], -1.0, 1.0);
        for (which, name) in [(0, "conv2d/input"), (1, "conv2d/kernel"), (2, "conv2d/bias")] {
            let point = [&x, &k, &b][which].clone();
            let err = grad_check(&point, 1e-2, |t, v| {
                let mut args = [x.clone(), k.clone(), b.clone()].map(|a| t.leaf(a, false));
                args[which] = v;
                let y = t.conv2d(args[0], args[1], args[2], 1, 1)?;
                t.mse(y, &t4)
            })
            .unwrap();
            note(name, err);
        }

        let dx = uniform(&mut rng, &[4, 7], -1.0, 1.0);
        let dw = uniform(&mut rng, &[7, 5], -0.5, 0.5);
        let db = uniform(&mut rng, &[5], -0.5, 0.5);
        let dt = uniform(&mut rng, &[4, 5], -1.0, 1.0);
        for (which, name) in [(0, "dense/input"), (1, "dense/weight"), (2, "dense/bias")] {
            let point = [&dx, &dw, &db][which].clone();
            let err = grad_check(&point, 1e-2, |t, v| {
                let mut args = [dx.clone(), dw.clone(), db.clone()].map(|a| t.leaf(a, false));
                args[which] = v;
                let y = t.dense(args[0], args[1], args[2])?;
                t.mse(y, &dt)
            })
            .unwrap();
            note(name, err);
        }

        let r = signed_away_from_zero(&mut rng, &[3, 2, 4, 4]);
        let rt = uniform(&mut rng, &[3, 2, 4, 4], -1.0, 1.0);
        note(
            "relu",
            grad_check(&r, 1e-2, |t, v| {
                let y = t.relu(v)?;
                t.mse(y, &rt)
            })
            .unwrap(),
        );
        let s = uniform(&mut rng, &[3, 2, 4, 4], -4.0, 4.0);
        note(
            "sigmoid",
            grad_check(&s, 1e-2, |t, v| {
                let y = t.sigmoid(v)?;
                t.mse(y, &rt)
            })
            .unwrap(),
        );
        let ft = uniform(&mut rng, &[3, 32], -1.0, 1.0);
        note(
            "flatten",
            grad_check(&s, 1e-2, |t, v| {
                let y = t.flatten(v)?;
                t.mse(y, &ft)
            })
            .unwrap(),
        );
        let rs = uniform(&mut rng, &[3, 8, 2, 2], -1.0, 1.0);
        note(
            "reshape",
            grad_check(&s, 1e-2, |t, v| {
                let y = t.reshape(v, &[3, 8, 2, 2])?;
                t.mse(y, &rs)
            })
            .unwrap(),
        );
        let p = distinct(&mut rng, &[2, 2, 4, 6]);
        let pt = uniform(&mut rng, &[2, 2, 2, 3], -1.0, 1.0);
        note(
            "maxpool2",
            grad_check(&p, 1e-2, |t, v| {
                let y = t.maxpool2(v)?;
                t.mse(y, &pt)
            })
            .unwrap(),
        );
        let u = uniform(&mut rng, &[2, 3, 3, 2], -1.0, 1.0);
        let ut = uniform(&mut rng, &[2, 3, 6, 4], -1.0, 1.0);
        note(
            "upsample2",
            grad_check(&u, 1e-2, |t, v| {
                let y = t.upsample2(v)?;
                t.mse(y, &ut)
            })
            .unwrap(),
        );

        let logits = uniform(&mut rng, &[6, 10], -3.0, 3.0);
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..10)).collect();
        note(
            "softmax_cross_entropy",
            grad_check(&logits, 1e-2, |t, v| t.softmax_cross_entropy(v, &labels)).unwrap(),
        );
        let target = uniform(&mut rng, &[6, 10], -1.0, 1.0);
        note("mse", grad_check(&logits, 1e-2, |t, v| t.mse(v, &target)).unwrap());
        let inputs = uniform(&mut rng, &[12, 20], 0.0, 1.0);
        let z = uniform(&mut rng, &[12, 6], -1.0, 1.0);
        note(
            "dcor_loss",
            grad_check(&z, 1e-3, |t, v| t.dcor_loss(&inputs, v)).unwrap(),
        );
    }
    worst
}

fn worst_conv_oracle_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (n, c, kn) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..6));
        let (kh, kw) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let (stride, pad) = (rng.gen_range(1..3), rng.gen_range(0..3));
        let (h, w) = (rng.gen_range(kh.max(3)..10), rng.gen_range(kw.max(3)..10));
        let x = uniform(&mut rng, &[n, c, h, w], -1.0, 1.0);
        let k = uniform(&mut rng, &[kn, c, kh, kw], -1.0, 1.0);
        let b = uniform(&mut rng, &[kn], -1.0, 1.0);
        let (_, expected) = common::conv_reference(&x, &k, &b, stride, pad);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.leaf(x, false), tape.leaf(k, false), tape.leaf(b, false));
        let y = tape.conv2d(xv, kv, bv, stride, pad).unwrap();
        for (g, e) in tape.value(y).data().iter().zip(&expected) {
            worst = worst.max((*g as f64 - e).abs());
        }
    }
    worst
}

/// Reference agreement, and whether range, symmetry and affine invariance hold.
fn dcor_suite() -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let rows = |t: &Tensor| -> Vec<Vec<f64>> {
        (0..t.rows())
            .map(|i| t.row(i).iter().map(|&v| v as f64).collect())
            .collect()
    };
    let dc = |x: &Tensor, y: &Tensor| distance_correlation(x, y).unwrap().value;
    let mut worst = 0.0f64;
    let mut props = true;
    for _ in 0..200 {
        let n = rng.gen_range(2..24);
        let (dx, dy) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let x = uniform(&mut rng, &[n, dx], -1.0, 1.0);
        let y = uniform(&mut rng, &[n, dy], -1.0, 1.0);
        let v = dc(&x, &y);
        worst = worst.max((v - common::reference_dcor(&rows(&x), &rows(&y))).abs());
        props &= (0.0..=1.0 + 1e-6).contains(&v);
        props &= (v - dc(&y, &x)).abs() < 1e-7;
        let (shift, scale) = (rng.gen_range(-5.0f32..5.0), rng.gen_range(0.1f32..10.0));
        props &= (v - dc(&x.map(|e| e * scale + shift), &y)).abs() < 1e-4;
        props &= (dc(&x, &x.map(|e| 3.0 * e + 1.0)) - 1.0).abs() < 1e-6;
    }
    (worst, props)
}

// --------------------------------------------------------------- criterion 10

fn random_message(rng: &mut ChaCha8Rng, kind: MessageKind) -> ChannelMessage {
    let ndim = rng.gen_range(0..5);
    let shape: Vec<u32> = (0..ndim).map(|_| rng.gen_range(1..7)).collect();
    let len = if ndim == 0 {
        0
    } else {
        shape.iter().product::<u32>() as usize
    };
    let payload = (0..len).map(|_| f32::from_bits(rng.gen())).collect();
    ChannelMessage::new(kind, rng.gen(), shape, payload).unwrap()
}

fn protocol_checks() -> (usize, usize, usize, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut round_trip_failures = 0;
    for kind in MessageKind::ALL {
        for _ in 0..1000 {
            let bytes = encode(&random_message(&mut rng, kind));
            if decode(&bytes).map(|m| encode(&m)).ok().as_deref() != Some(&bytes[..]) {
                round_trip_failures += 1;
            }
        }
    }
    let (mut corruptions, mut missed) = (0, 0);
    for kind in MessageKind::ALL {
        for _ in 0..20 {
            let bytes = encode(&random_message(&mut rng, kind));
            for pos in 0..bytes.len() {
                let mut bad = bytes.clone();
                bad[pos] ^= rng.gen_range(1..=255u8);
                corruptions += 1;
                if !matches!(decode(&bad), Err(CodecError::Crc { .. })) {
                    missed += 1;
                }
            }
        }
    }
    let data = squares(96);
    let cfg = TrainConfig {
        epochs: 2,
        seed: 17,
        alpha: 0.1,
        noise: NoiseConfig::training(0.1),
        ..Default::default()
    };
    let (a, _) = train(&data, &cfg, &TrainOptions::default()).unwrap();
    let socket = TrainOptions {
        transport: TransportMode::Socket,
        ..TrainOptions::default()
    };
    let (b, _) = train(&data, &cfg, &socket).unwrap();
    let identical = a.checkpoint("").to_bytes() == b.checkpoint("").to_bytes();
    (round_trip_failures, corruptions, missed, identical)
}

fn squares(n: usize) -> LabeledDataset {
    let mut pixels = vec![0.0f32; n * IMAGE_PIXELS];
    let labels: Vec<usize> = (0..n).map(|i| (i * 7) % 10).collect();
    for (i, &c) in labels.iter().enumerate() {
        let (oy, ox) = (2 + (c / 5) * 13, 1 + (c % 5) * 5);
        for y in oy..oy + 6 {
            for x in ox..ox + 6 {
                pixels[i * IMAGE_PIXELS + y * IMAGE_SIDE + x] = 0.6 + 0.4 * (((i + y * x) % 5) as f32 / 5.0);
            }
        }
    }
    LabeledDataset::new("squares", pixels, labels).unwrap()
}

// --------------------------------------------------------------- criterion 11

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

/// Runs every experiment kind twice on synthetic data; returns the kinds
/// whose CSVs differ.
fn reproducibility() -> Vec<&'static str> {
    let data = tempfile::tempdir().unwrap();
    common::write_data_dir(data.path());
    let mut differing = Vec::new();
    for kind in ExperimentKind::ALL {
        let mut cfg = ExperimentConfig::new(kind);
        cfg.data_dir = data.path().to_path_buf();
        cfg.seed = 5;
        cfg.classifier_limit = 200;
        cfg.epochs = 1;
        cfg.attack_size = 100;
        cfg.attack_epochs = 1;
        cfg.defences = vec![Cell::new(0.0, 0.0), Cell::new(0.5, 0.0)];
        cfg.grid_cells = vec![Cell::new(0.1, 0.1)];
        cfg.sweep_scales = vec![0.0, 0.5];
        cfg.sizes = vec![50, 100];
        cfg.transfer_source = "other".into();
        let dirs: Vec<PathBuf> = (0..2)
            .map(|_| {
                let out = tempfile::tempdir().unwrap().keep();
                cfg.output_dir = out;
                run(
                    &cfg,
                    &RunOptions {
                        quiet: true,
                        ..Default::default()
                    },
                )
                .unwrap()
                .dir
            })
            .collect();
        let (a, b) = (csv_bytes(&dirs[0]), csv_bytes(&dirs[1]));
        if a.is_empty() || a != b {
            differing.push(kind.verb());
        }
        for d in dirs {
            let _ = fs::remove_dir_all(d.parent().unwrap());
        }
    }
    differing
}

// ------------------------------------------------------------ criteria 1 - 8

struct Runs {
    data_dir: PathBuf,
    out: PathBuf,
    execute: bool,
}

impl Runs {
    /// Results for `cfg`: cached, freshly run, or `None` when skipped.
    fn get(&self, mut cfg: ExperimentConfig, marker: &str) -> Option<(PathBuf, Option<f64>)> {
        cfg.data_dir = self.data_dir.clone();
        cfg.output_dir = self.out.clone();
        let dir = cfg.run_dir();
        let elapsed_file = dir.join("elapsed.txt");
        let elapsed = || {
            fs::read_to_string(&elapsed_file)
                .ok()
                .and_then(|s| s.trim().parse().ok())
        };
        if dir.join(marker).exists() {
            return Some((dir.clone(), elapsed()));
        }
        if !self.execute {
            return None;
        }
        eprintln!("acceptance: running `{}` into {}", cfg.experiment.verb(), dir.display());
        let start = Instant::now();
        match run(&cfg, &RunOptions::default()) {
            Ok(summary) => {
                let secs = start.elapsed().as_secs_f64();
                let _ = fs::write(summary.dir.join("elapsed.txt"), format!("{secs:.1}\n"));
                Some((summary.dir, Some(secs)))
            }
            Err(e) => {
                eprintln!("acceptance: `{}` failed: {e}", cfg.experiment.verb());
                None
            }
        }
    }
}

fn find(rows: &[MetricsRow], noise: f32, alpha: f32) -> Option<&MetricsRow> {
    rows.iter()
        .find(|r| (r.noise_scale - noise as f64).abs() < 1e-6 && (r.nopeek_weight - alpha as f64).abs() < 1e-6)
}

fn column(rows: &[Vec<(String, String)>], name: &str) -> Vec<f64> {
    rows.iter()
        .map(|r| {
            r.iter()
                .find(|(k, _)| k == name)
                .and_then(|(_, v)| v.parse().ok())
                .unwrap_or(f64::NAN)
        })
        .collect()
}

fn skipped(why: &str) -> Outcome {
    Outcome::Skip(format!("{why}; set SPLITLAB_ACCEPTANCE=full to run"))
}

fn grid_criteria(report: &mut Report, runs: &Runs) {
    let Some((dir, elapsed)) = runs.get(ExperimentConfig::new(ExperimentKind::Grid), "noise_sweep.csv") else {
        for (id, name) in [
            (1, "baseline accuracy"),
            (2, "reference grid"),
            (3, "dCor trend"),
            (4, "noise sweep"),
        ] {
            report.line(id, name, false, skipped("full-profile grid not available"));
        }
        return;
    };
    let rows = read_metrics_csv(&dir.join("metrics.csv")).unwrap();
    let models = rows.len().max(1) as f64;

    let base = find(&rows, 0.0, 0.0).expect("grid includes the (0, 0) baseline");
    let per_model = elapsed.map(|s| s / models);
    let runtime = per_model.map_or("runtime not recorded".to_string(), |s| {
        format!("{:.1} min per model", s / 60.0)
    });
    report.line(
        1,
        "baseline accuracy",
        false,
        verdict(
            base.accuracy >= 97.0 && per_model.is_none_or(|s| s <= RUNTIME_LIMIT_S),
            format!("{:.2}% (>= 97.0), {runtime} (<= 45 min)", base.accuracy),
        ),
    );

    let mut cells_ok = 0;
    for &(noise, alpha, acc, dcor) in &REFERENCE {
        let Some(r) = find(&rows, noise, alpha) else {
            println!("       b={noise} a={alpha}: missing");
            continue;
        };
        let (da, dd) = (r.accuracy - acc, r.dcor_mean - dcor);
        let ok = da.abs() <= ACC_TOL && dd.abs() <= DCOR_TOL;
        cells_ok += ok as usize;
        println!(
            "       b={noise:.1} a={alpha:.1}: acc {:.2} (ref {acc:.2}, {da:+.2}) dcor {:.3} +/- {:.3} (ref {dcor:.3}, {dd:+.3}) {}",
            r.accuracy,
            r.dcor_mean,
            r.dcor_stderr,
            if ok { "ok" } else { "out" }
        );
    }
    let acc_ok = REFERENCE
        .iter()
        .filter(|&&(b, a, acc, _)| find(&rows, b, a).is_some_and(|r| (r.accuracy - acc).abs() <= ACC_TOL))
        .count();
    report.line(
        2,
        "reference grid",
        false,
        verdict(
            cells_ok == REFERENCE.len(),
            format!(
                "{cells_ok}/12 cells within +/-{ACC_TOL} pp and +/-{DCOR_TOL} dCor ({acc_ok}/12 on accuracy alone)"
            ),
        ),
    );

    let mut trend = Vec::new();
    let mut trend_ok = true;
    for noise in [0.0f32, 0.1, 0.2, 0.5] {
        let d: Vec<f64> = [0.0f32, 0.1, 0.5]
            .iter()
            .map(|&a| find(&rows, noise, a).map_or(f64::NAN, |r| r.dcor_mean))
            .collect();
        let ok = d[0] - d[1] >= TREND_MARGIN && d[1] - d[2] >= TREND_MARGIN;
        trend_ok &= ok;
        trend.push(format!("b={noise}: {:.3} > {:.3} > {:.3}", d[0], d[1], d[2]));
    }
    report.line(
        3,
        "dCor trend",
        false,
        verdict(trend_ok, format!("{} (margins >= 0.05)", trend.join("; "))),
    );

    let sweep = read_csv(&dir.join("noise_sweep.csv")).unwrap();
    let (b, a, eb, acc) = (
        column(&sweep, "noise_scale"),
        column(&sweep, "nopeek_weight"),
        column(&sweep, "eval_noise_scale"),
        column(&sweep, "accuracy"),
    );
    let mut rises = Vec::new();
    for i in 1..acc.len() {
        if b[i] == b[i - 1] && a[i] == a[i - 1] && eb[i] > eb[i - 1] && acc[i] > acc[i - 1] {
            rises.push(format!(
                "(b={}, a={}) at {:.1}: +{:.2}",
                b[i],
                a[i],
                eb[i],
                acc[i] - acc[i - 1]
            ));
        }
    }
    let at_half = (0..acc.len())
        .find(|&i| b[i] == 0.0 && a[i] == 0.0 && (eb[i] - 0.5).abs() < 1e-9)
        .map_or(f64::NAN, |i| acc[i]);
    let detail = if rises.is_empty() {
        format!(
            "non-increasing for all {} models; alpha=0 model at b=0.5: {at_half:.2}% (>= 95)",
            rows.len()
        )
    } else {
        format!(
            "increases {}; alpha=0 model at b=0.5: {at_half:.2}% (>= 95)",
            rises.join(", ")
        )
    };
    report.line(
        4,
        "noise sweep",
        false,
        verdict(rises.is_empty() && at_half >= 95.0, detail),
    );
}

fn attack_criteria(report: &mut Report, runs: &Runs, transfer_source: Option<(&str, bool)>) {
    let desk = |kind| ExperimentConfig::new(kind).desk_scale_profile();
    match runs.get(desk(ExperimentKind::Attack), "attack.csv") {
        Some((dir, _)) => {
            let rows = read_csv(&dir.join("attack.csv")).unwrap();
            let (noise, mean, base) = (
                column(&rows, "noise_scale"),
                column(&rows, "mean_dcor"),
                column(&rows, "baseline_dcor"),
            );
            report.line(
                5,
                "attack efficacy",
                false,
                verdict(
                    mean[0] >= base[0] + 0.3 && noise[0] == 0.0,
                    format!(
                        "dCor {:.3} vs random pairing {:.3} (+{:.3}, need +0.3)",
                        mean[0],
                        base[0],
                        mean[0] - base[0]
                    ),
                ),
            );
            let monotone = mean.windows(2).all(|w| w[1] <= w[0] + 0.03);
            let drop = mean[0] - mean[mean.len() - 1];
            let series: Vec<String> = noise.iter().zip(&mean).map(|(b, m)| format!("b={b}: {m:.3}")).collect();
            report.line(
                6,
                "defence monotonicity",
                false,
                verdict(
                    monotone && drop >= 0.2,
                    format!(
                        "{} ({}monotone within 0.03; drop {drop:.3}, need >= 0.2)",
                        series.join(", "),
                        if monotone { "" } else { "not " }
                    ),
                ),
            );
        }
        None => {
            report.line(5, "attack efficacy", false, skipped("desk attack run not available"));
            report.line(
                6,
                "defence monotonicity",
                false,
                skipped("desk attack run not available"),
            );
        }
    }

    match runs.get(desk(ExperimentKind::SizeStudy), "sizes.csv") {
        Some((dir, _)) => {
            let rows = read_csv(&dir.join("sizes.csv")).unwrap();
            let (sizes, mean) = (column(&rows, "attack_size"), column(&rows, "mean_dcor"));
            let monotone = mean.windows(2).all(|w| w[1] >= w[0] - 0.03);
            let series: Vec<String> = sizes.iter().zip(&mean).map(|(m, d)| format!("M={m}: {d:.3}")).collect();
            report.line(
                7,
                "attacker-size monotonicity",
                false,
                verdict(monotone, series.join(", ")),
            );
        }
        None => report.line(
            7,
            "attacker-size monotonicity",
            false,
            skipped("desk sizes run not available"),
        ),
    }

    let Some((source, surrogate)) = transfer_source else {
        report.line(
            8,
            "transfer attack",
            false,
            Outcome::Skip("no emnist/ or fashion-mnist/ directory".into()),
        );
        return;
    };
    let mut cfg = desk(ExperimentKind::TransferStudy);
    cfg.transfer_source = source.to_string();
    match runs.get(cfg, "transfer.csv") {
        Some((dir, _)) => {
            let rows = read_csv(&dir.join("transfer.csv")).unwrap();
            let mean = column(&rows, "mean_dcor");
            let (native, foreign, baseline) = (mean[0], mean[1], mean[2]);
            let label = if surrogate {
                format!("SURROGATE source {source}")
            } else {
                format!("source {source}")
            };
            report.line(
                8,
                "transfer attack",
                false,
                verdict(
                    baseline < foreign && foreign < native,
                    format!("random {baseline:.3} < transfer {foreign:.3} < mnist {native:.3} ({label})"),
                ),
            );
        }
        None => report.line(8, "transfer attack", false, skipped("desk transfer run not available")),
    }
}

fn main() {
    let mut report = Report {
        hard_failures: 0,
        soft_failures: 0,
    };
    let data_dir = env_path("SPLITLAB_DATA_DIR", workspace_root().join("data"));
    let runs = Runs {
        out: env_path("SPLITLAB_ACCEPTANCE_OUT", workspace_root().join("target/acceptance")),
        execute: std::env::var("SPLITLAB_ACCEPTANCE").is_ok_and(|v| v == "full"),
        data_dir: data_dir.clone(),
    };
    println!(
        "acceptance report (data: {}, runs: {})",
        data_dir.display(),
        runs.out.display()
    );

    if data_dir.join("mnist").is_dir() {
        grid_criteria(&mut report, &runs);
        let transfer = if data_dir.join("emnist").is_dir() {
            Some(("emnist", false))
        } else if data_dir.join("fashion-mnist").is_dir() {
            Some(("fashion-mnist", true))
        } else {
            None
        };
        attack_criteria(&mut report, &runs, transfer);
    } else {
        for (id, name) in [
            (1, "baseline accuracy"),
            (2, "reference grid"),
            (3, "dCor trend"),
            (4, "noise sweep"),
            (5, "attack efficacy"),
            (6, "defence monotonicity"),
            (7, "attacker-size monotonicity"),
            (8, "transfer attack"),
        ] {
            report.line(
                id,
                name,
                false,
                Outcome::Skip(format!("no MNIST under {}", data_dir.display())),
            );
        }
    }

    let (grad_err, grad_op) = worst_gradient_error();
    let conv_err = worst_conv_oracle_error();
    let (dcor_err, dcor_props) = dcor_suite();
    report.line(
        9,
        "kernel correctness",
        true,
        verdict(
            grad_err < 1e-3 && conv_err < 1e-5 && dcor_err < 1e-6 && dcor_props,
            format!(
                "gradcheck worst {grad_err:.1e} ({grad_op}), conv oracle {conv_err:.1e}, dCor reference {dcor_err:.1e}, properties {}",
                if dcor_props { "hold" } else { "violated" }
            ),
        ),
    );

    let (rt_fail, corruptions, missed, identical) = protocol_checks();
    report.line(
        10,
        "protocol",
        true,
        verdict(
            rt_fail == 0 && missed == 0 && identical,
            format!(
                "{rt_fail} round-trip failures in {} frames, {missed}/{corruptions} corruptions missed, socket vs in-process parameters {}",
                1000 * MessageKind::ALL.len(),
                if identical { "identical" } else { "differ" }
            ),
        ),
    );

    let differing = reproducibility();
    report.line(
        11,
        "reproducibility",
        true,
        verdict(
            differing.is_empty(),
            if differing.is_empty() {
                format!(
                    "byte-identical CSVs on re-run for all {} experiment kinds",
                    ExperimentKind::ALL.len()
                )
            } else {
                format!("CSVs differ for {}", differing.join(", "))
            },
        ),
    );

    let strict = std::env::var("SPLITLAB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    println!(
        "acceptance: {} correctness failure(s), {} reproduction shortfall(s)",
        report.hard_failures, report.soft_failures
    );
    if report.hard_failures > 0 || (strict && report.soft_failures > 0) {
        std::process::exit(1);
    }
}
