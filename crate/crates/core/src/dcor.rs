//! Sample distance correlation (biased V-statistic form).
//!
//! Rows are samples: row `i` of `x` pairs with row `i` of `y`. Everything is
//! accumulated in `f64`; cost is `O(n^2 d)` per call.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// dVar below this is treated as a constant batch and yields dCor = 0.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Smoothing added under the square root of the differentiable loss.
pub const LOSS_SMOOTHING: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcorResult {
    pub value: f64,
    pub batch_size: usize,
}

fn check_batch(x: &Tensor) -> Result<usize> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::BatchSize(n));
    }
    Ok(n)
}

fn distances(x: &Tensor) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let xi = x.row(i);
        for j in (i + 1)..n {
            let sq: f64 = xi
                .iter()
                .zip(x.row(j))
                .map(|(&a, &b)| {
                    let diff = a as f64 - b as f64;
                    diff * diff
                })
                .sum();
            let v = sq.sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

fn center(d: &mut [f64], n: usize) {
    let mut row_means = vec![0.0; n];
    for (i, m) in row_means.iter_mut().enumerate() {
        *m = d[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64;
    }
    let mut col_means = vec![0.0; n];
    for row in d.chunks_exact(n) {
        for (c, &v) in col_means.iter_mut().zip(row) {
            *c += v;
        }
    }
    col_means.iter_mut().for_each(|c| *c /= n as f64);
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] += grand - row_means[i] - col_means[j];
        }
    }
}

fn mean_product(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

fn to_tensor(n: usize, d: Vec<f64>) -> Tensor {
    Tensor::new(vec![n, n], d.into_iter().map(|v| v as f32).collect()).expect("n x n")
}

/// Euclidean distances between all row pairs: symmetric with a zero diagonal.
pub fn pairwise_euclidean(x: &Tensor) -> Result<Tensor> {
    let n = check_batch(x)?;
    Ok(to_tensor(n, distances(x)))
}

/// `D - row means - column means + grand mean`.
pub fn double_center(d: &Tensor) -> Result<Tensor> {
    let &[n, m] = d.shape() else {
        return Err(Error::Shape {
            op: "double_center",
            msg: format!("expected a square matrix, got {:?}", d.shape()),
        });
    };
    if n != m {
        return Err(Error::Dimension {
            op: "double_center",
            axis: "column",
            expected: n,
            got: m,
        });
    }
    let mut buf: Vec<f64> = d.data().iter().map(|&v| v as f64).collect();
    center(&mut buf, n);
    Ok(to_tensor(n, buf))
}

fn check_aligned(x: &Tensor, y: &Tensor) -> Result<usize> {
    if x.rows() != y.rows() {
        return Err(Error::Dimension {
            op: "distance_correlation",
            axis: "sample",
            expected: x.rows(),
            got: y.rows(),
        });
    }
    check_batch(x)
}

fn ratio(dcov_xy: f64, dvar_x: f64, dvar_y: f64) -> Option<f64> {
    if dvar_x < DEGENERATE_VARIANCE || dvar_y < DEGENERATE_VARIANCE {
        return None;
    }
    Some((dcov_xy / (dvar_x * dvar_y).sqrt()).max(0.0))
}

/// Sample distance correlation `sqrt(dCov²(X,Y) / sqrt(dVar²(X) dVar²(Y)))`.
///
/// Returns 0 when either argument is (numerically) constant across the batch.
pub fn distance_correlation(x: &Tensor, y: &Tensor) -> Result<DcorResult> {
    let n = check_aligned(x, y)?;
    let mut a = distances(x);
    let mut b = distances(y);
    center(&mut a, n);
    center(&mut b, n);
    let value = ratio(mean_product(&a, &b), mean_product(&a, &a), mean_product(&b, &b)).map_or(0.0, f64::sqrt);
    Ok(DcorResult { value, batch_size: n })
}

/// Distance correlation between two paired scalar sequences.
///
/// Same estimator as [`distance_correlation`] on `[n, 1]` inputs, in
/// `O(n log n)` without materialising the `n x n` matrices, via
/// `mean(A∘B) = mean(a∘b) + mean(a) mean(b) - 2 mean_i(ā_i b̄_i)`.
/// Row means come from sorted prefix sums, `Σ a²` has a closed form, and
/// `Σ a b` splits into `Σ (x_i - x_j)(y_i - y_j)` plus four times the
/// discordant-pair sum, which a Fenwick tree over y-ranks accumulates.
pub fn distance_correlation_1d(x: &[f32], y: &[f32]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            op: "distance_correlation_1d",
            axis: "sample",
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::BatchSize(n));
    }
    let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let nf = n as f64;
    let nn = nf * nf;
    let row_x = row_means(&x);
    let row_y = row_means(&y);
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx_raw = x.iter().map(|v| v * v).sum::<f64>();
    let syy_raw = y.iter().map(|v| v * v).sum::<f64>();
    let sxy_raw = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
    let sxx = 2.0 * nf * sxx_raw - 2.0 * sx * sx;
    let syy = 2.0 * nf * syy_raw - 2.0 * sy * sy;
    let sxy = 2.0 * nf * sxy_raw - 2.0 * sx * sy + 4.0 * discordant_sum(&x, &y);
    let gx = row_x.iter().sum::<f64>() / nf;
    let gy = row_y.iter().sum::<f64>() / nf;
    let cross = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / nf;
    let dcov_xy = sxy / nn + gx * gy - 2.0 * cross(&row_x, &row_y);
    let dvar_x = sxx / nn + gx * gx - 2.0 * cross(&row_x, &row_x);
    let dvar_y = syy / nn + gy * gy - 2.0 * cross(&row_y, &row_y);
    Ok(ratio(dcov_xy, dvar_x, dvar_y).map_or(0.0, f64::sqrt))
}

fn sorted_order(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    order
}

/// `mean_j |v_i - v_j|` for every `i`.
fn row_means(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let total: f64 = v.iter().sum();
    let mut out = vec![0.0; n];
    let mut below = 0.0;
    for (k, &i) in sorted_order(v).iter().enumerate() {
        let above = total - below - v[i];
        let k_above = (n - k - 1) as f64;
        out[i] = (v[i] * k as f64 - below + above - v[i] * k_above) / n as f64;
        below += v[i];
    }
    out
}

/// `Σ |x_i - x_j| |y_i - y_j|` over unordered pairs with `x_i < x_j` and
/// `y_i > y_j`. Tied pairs contribute zero whichever side they land on.
fn discordant_sum(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let by_y = sorted_order(y);
    let mut rank = vec![0usize; n];
    for (r, &i) in by_y.iter().enumerate() {
        rank[i] = r;
    }
    // Fenwick tree over y-ranks of (count, Σx, Σy, Σxy).
    let mut tree = vec![[0.0f64; 4]; n + 1];
    let mut totals = [0.0f64; 4];
    let mut sum = 0.0;
    for &i in &sorted_order(x) {
        // Points already inserted have x_j <= x_i; keep those with y_j > y_i.
        let mut le = [0.0f64; 4];
        let mut k = rank[i] + 1;
        while k > 0 {
            for (acc, t) in le.iter_mut().zip(&tree[k]) {
                *acc += t;
            }
            k &= k - 1;
        }
        let [c, sxj, syj, sxyj] = std::array::from_fn::<f64, 4, _>(|m| totals[m] - le[m]);
        let (xi, yi) = (x[i], y[i]);
        sum += xi * syj - c * xi * yi - sxyj + yi * sxj;
        let point = [1.0, xi, yi, xi * yi];
        let mut k = rank[i] + 1;
        while k <= n {
            for (t, p) in tree[k].iter_mut().zip(&point) {
                *t += p;
            }
            k += k & k.wrapping_neg();
        }
        for (t, p) in totals.iter_mut().zip(&point) {
            *t += p;
        }
    }
    sum
}

/// Differentiable distance correlation used as a training penalty.
///
/// Returns the loss value and its gradient with respect to `intermediate`;
/// `inputs` is treated as a constant. Both are flattened per sample.
pub fn dcor_loss(inputs: &Tensor, intermediate: &Tensor) -> Result<(f32, Tensor)> {
    let n = check_aligned(inputs, intermediate)?;
    let y = intermediate.flatten_rows();
    let mut a = distances(&inputs.flatten_rows());
    let dist_y = distances(&y);
    let mut b = dist_y.clone();
    center(&mut a, n);
    center(&mut b, n);
    let dvar_x = mean_product(&a, &a);
    let dvar_y = mean_product(&b, &b);
    let Some(r) = ratio(mean_product(&a, &b), dvar_x, dvar_y) else {
        return Ok((0.0, Tensor::zeros(intermediate.shape())));
    };
    let loss = (r + LOSS_SMOOTHING).sqrt();

    // Because A and B are double-centred, <A,B> = <A,b> and <B,B> = <B,b>, so
    // the derivative with respect to the raw distance b_ij is:
    //   dR/db_ij = A_ij / (n² sqrt(vx vy)) - R B_ij / (n² vy)
    let nn = (n * n) as f64;
    let denom = (dvar_x * dvar_y).sqrt();
    let scale = 1.0 / (2.0 * loss);
    let d = y.row_len();
    let mut grad = vec![0.0f64; n * d];
    for i in 0..n {
        let yi = y.row(i);
        let gi = &mut grad[i * d..(i + 1) * d];
        for j in 0..n {
            let dist = dist_y[i * n + j];
            if i == j || dist == 0.0 {
                continue;
            }
            let k = i * n + j;
            let g_b = scale * (a[k] / (nn * denom) - r * b[k] / (nn * dvar_y));
            // b_ij and b_ji both depend on y_i
            let coeff = 2.0 * g_b / dist;
            for ((acc, &p), &q) in gi.iter_mut().zip(yi).zip(y.row(j)) {
                *acc += coeff * (p as f64 - q as f64);
            }
        }
    }
    let grad = Tensor::new(
        intermediate.shape().to_vec(),
        grad.into_iter().map(|v| v as f32).collect(),
    )?;
    Ok((loss as f32, grad))
}
