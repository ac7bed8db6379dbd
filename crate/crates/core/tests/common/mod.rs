//! Shared by the integration tests: independent reference implementations
//! and synthetic MNIST-layout IDX files.
#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitlab::data::{write_idx, IdxArray, IMAGE_SIDE};
use splitlab::tensor::Tensor;

/// A blurry class-specific stroke on a noisy background.
fn draw(label: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut img = vec![0u8; IMAGE_SIDE * IMAGE_SIDE];
    let row = 4 + 2 * label;
    let shift: i32 = rng.gen_range(-1..=1);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let dy = (y as i32 - row as i32 - shift).abs();
            let mut v: u32 = if dy <= 1 && (4..24).contains(&x) { 220 } else { 0 };
            if label % 2 == 1 && (x as i32 - 14).abs() <= 1 {
                v = 180;
            }
            v += rng.gen_range(0..30);
            img[y * IMAGE_SIDE + x] = v.min(255) as u8;
        }
    }
    img
}

fn write(path: &Path, bytes: &[u8], gz: bool) {
    if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(bytes).unwrap();
        fs::write(path.with_extension("gz"), enc.finish().unwrap()).unwrap();
    } else {
        fs::write(path, bytes).unwrap();
    }
}

/// Writes `prefix-images-idx3-ubyte` and `prefix-labels-idx1-ubyte` into `dir`.
pub fn write_set(dir: &Path, prefix: &str, n: usize, seed: u64, gz: bool) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..10)).collect();
    let mut pixels = Vec::with_capacity(n * IMAGE_SIDE * IMAGE_SIDE);
    for &l in &labels {
        pixels.extend(draw(l as usize, &mut rng));
    }
    let images = write_idx(&IdxArray {
        dims: vec![n, IMAGE_SIDE, IMAGE_SIDE],
        data: pixels,
    });
    let labels = write_idx(&IdxArray {
        dims: vec![n],
        data: labels,
    });
    write(&dir.join(format!("{prefix}-images-idx3-ubyte")), &images, gz);
    write(&dir.join(format!("{prefix}-labels-idx1-ubyte")), &labels, gz);
}

/// `mnist/` with a 50,000-image training file and a small test file, plus a
/// differently seeded `other/` source for transfer runs.
pub fn write_data_dir(root: &Path) {
    write_set(&root.join("mnist"), "train", 50_000, 1, false);
    write_set(&root.join("mnist"), "t10k", 500, 2, true);
    write_set(&root.join("other"), "train", 400, 3, true);
}

/// Textbook V-statistic written directly from the definitions with no
/// shared code: explicit distance matrices, explicit row/column/grand means.
pub fn reference_dcor(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let dist = |p: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        p[i].iter()
                            .zip(&p[j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect()
            })
            .collect()
    };
    let centre = |d: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let row: Vec<f64> = d.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
        let col: Vec<f64> = (0..n).map(|j| d.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let grand = row.iter().sum::<f64>() / n as f64;
        (0..n)
            .map(|i| (0..n).map(|j| d[i][j] - row[i] - col[j] + grand).collect())
            .collect()
    };
    let a = centre(dist(x));
    let b = centre(dist(y));
    let v = |p: &Vec<Vec<f64>>, q: &Vec<Vec<f64>>| {
        p.iter()
            .flatten()
            .zip(q.iter().flatten())
            .map(|(s, t)| s * t)
            .sum::<f64>()
            / (n * n) as f64
    };
    let (xy, xx, yy) = (v(&a, &b), v(&a, &a), v(&b, &b));
    if xx < 1e-12 || yy < 1e-12 {
        return 0.0;
    }
    (xy / (xx * yy).sqrt()).max(0.0).sqrt()
}

pub fn conv_reference(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, w] = x.shape()[..] else { unreachable!() };
    let [kn, _, kh, kw] = k.shape()[..] else { unreachable!() };
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0.0f64; n * kn * oh * ow];
    for s in 0..n {
        for o in 0..kn {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o] as f64;
                    for ch in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * stride + dy) as isize - pad as isize;
                                let ix = (ox * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = xd[((s * c + ch) * h + iy as usize) * w + ix as usize] as f64;
                                let kv = kd[((o * c + ch) * kh + dy) * kw + dx] as f64;
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((s * kn + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (vec![n, kn, oh, ow], out)
}
