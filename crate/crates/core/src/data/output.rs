use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GUTTER: usize = 2;

/// Maps `[0,1]` to a byte with round-half-up; values outside are clamped.
pub fn quantize_pixel(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v as f64 * 255.0 + 0.5).floor() as u8
}

/// Tiles `[K,1,H,W]` images row-major into a binary PGM (P5) canvas with
/// white 2-pixel gutters between cells.
pub fn pgm_grid_bytes(images: &Tensor, columns: usize) -> Result<Vec<u8>> {
    let &[count, 1, h, w] = images.shape() else {
        return Err(Error::Shape {
            op: "write_pgm_grid",
            msg: format!("expected [K,1,H,W] images, got {:?}", images.shape()),
        });
    };
    if columns == 0 {
        return Err(Error::Shape {
            op: "write_pgm_grid",
            msg: "column count must be positive".into(),
        });
    }
    let cols = columns.min(count);
    let rows = count.div_ceil(cols);
    let width = cols * w + (cols - 1) * GUTTER;
    let height = rows * h + (rows - 1) * GUTTER;
    let mut canvas = vec![255u8; width * height];
    for k in 0..count {
        let (r, c) = (k / cols, k % cols);
        let (oy, ox) = (r * (h + GUTTER), c * (w + GUTTER));
        let img = images.row(k);
        for y in 0..h {
            for x in 0..w {
                canvas[(oy + y) * width + ox + x] = quantize_pixel(img[y * w + x]);
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&canvas);
    Ok(out)
}

pub fn write_pgm_grid(images: &Tensor, columns: usize, path: &Path) -> Result<()> {
    fs::write(path, pgm_grid_bytes(images, columns)?)?;
    Ok(())
}

pub const METRICS_HEADER: &str = "noise_scale,nopeek_weight,accuracy,dcor_mean,dcor_stderr";

/// One experiment's accuracy and input/intermediate distance correlation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub noise_scale: f64,
    pub nopeek_weight: f64,
    pub accuracy: f64,
    pub dcor_mean: f64,
    pub dcor_stderr: f64,
}

pub fn metrics_csv_string(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:.4},{:.4},{:.4},{:.4},{:.4}",
            r.noise_scale, r.nopeek_weight, r.accuracy, r.dcor_mean, r.dcor_stderr
        );
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    fs::write(path, metrics_csv_string(rows))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Config(format!("{} lacks the metrics header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad metrics row {line:?}: {e}")))?;
            let [noise_scale, nopeek_weight, accuracy, dcor_mean, dcor_stderr] = v[..] else {
                return Err(Error::Config(format!("metrics row {line:?} needs 5 fields")));
            };
            Ok(MetricsRow {
                noise_scale,
                nopeek_weight,
                accuracy,
                dcor_mean,
                dcor_stderr,
            })
        })
        .collect()
}
