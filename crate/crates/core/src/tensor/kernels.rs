//! Slice-level forward/backward kernels. Shapes are validated by the caller.

/// `c = op(a) * op(b)` (or `c += ...` when `accumulate`), row-major.
///
/// `a` is `m x k` after the optional transpose, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // row-major buffers whose lengths are checked by the debug assertions
    // and by every caller.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    /// Unfolds one `[C, H, W]` image into a `[C*kh*kw, OH*OW]` column matrix.
    pub fn im2col(&self, image: &[f32], col: &mut [f32]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let positions = oh * ow;
        let pad = self.padding as isize;
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ky) * self.kernel_w + kx;
                    let dst = &mut col[row * positions..(row + 1) * positions];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= self.height as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, out) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            *out = if ix < 0 || ix >= self.width as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back onto the image.
    pub fn col2im_add(&self, col: &[f32], image: &mut [f32]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let positions = oh * ow;
        let pad = self.padding as isize;
        for c in 0..self.channels {
            let plane = &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ky) * self.kernel_w + kx;
                    let src = &col[row * positions..(row + 1) * positions];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution forward. `out` is `[N, K, OH, OW]`.
pub fn conv2d_forward(geo: &ConvGeometry, batch: usize, input: &[f32], kernel: &[f32], bias: &[f32], out: &mut [f32]) {
    let filters = bias.len();
    let positions = geo.out_h() * geo.out_w();
    let image_len = geo.channels * geo.height * geo.width;
    let mut col = vec![0.0; geo.patch_len() * positions];
    for n in 0..batch {
        geo.im2col(&input[n * image_len..(n + 1) * image_len], &mut col);
        let dst = &mut out[n * filters * positions..(n + 1) * filters * positions];
        for (k, plane) in dst.chunks_exact_mut(positions).enumerate() {
            plane.fill(bias[k]);
        }
        gemm(
            filters,
            geo.patch_len(),
            positions,
            kernel,
            false,
            &col,
            false,
            dst,
            true,
        );
    }
}

pub struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

pub fn conv2d_backward(
    geo: &ConvGeometry,
    batch: usize,
    input: &[f32],
    kernel: &[f32],
    filters: usize,
    upstream: &[f32],
    want_input: bool,
) -> ConvGrads {
    let positions = geo.out_h() * geo.out_w();
    let image_len = geo.channels * geo.height * geo.width;
    let patch = geo.patch_len();
    let mut col = vec![0.0; patch * positions];
    let mut dcol = vec![0.0; patch * positions];
    let mut d_kernel = vec![0.0; filters * patch];
    let mut d_bias = vec![0.0f64; filters];
    let mut d_input = want_input.then(|| vec![0.0; batch * image_len]);
    for n in 0..batch {
        let up = &upstream[n * filters * positions..(n + 1) * filters * positions];
        for (k, plane) in up.chunks_exact(positions).enumerate() {
            d_bias[k] += plane.iter().map(|&v| v as f64).sum::<f64>();
        }
        geo.im2col(&input[n * image_len..(n + 1) * image_len], &mut col);
        gemm(filters, positions, patch, up, false, &col, true, &mut d_kernel, true);
        if let Some(d_in) = d_input.as_mut() {
            gemm(patch, filters, positions, kernel, true, up, false, &mut dcol, false);
            geo.col2im_add(&dcol, &mut d_in[n * image_len..(n + 1) * image_len]);
        }
    }
    ConvGrads {
        input: d_input,
        kernel: d_kernel,
        bias: d_bias.into_iter().map(|v| v as f32).collect(),
    }
}

/// 2x2 stride-2 max pooling over `[planes, H, W]`; returns flat argmax indices.
pub fn maxpool2_forward(planes: usize, h: usize, w: usize, input: &[f32], out: &mut [f32]) -> Vec<u32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut argmax = vec![0u32; planes * oh * ow];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    // strict comparison keeps the first maximum in scan order
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = (p * oh + oy) * ow + ox;
                out[o] = input[best];
                argmax[o] = best as u32;
            }
        }
    }
    argmax
}

pub fn upsample2_forward(planes: usize, h: usize, w: usize, input: &[f32], out: &mut [f32]) {
    let ow = 2 * w;
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for x in 0..ow {
                dst[y * ow + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
}

pub fn upsample2_backward(planes: usize, h: usize, w: usize, upstream: &[f32]) -> Vec<f32> {
    let ow = 2 * w;
    let mut grad = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &upstream[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut grad[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let top = 2 * y * ow + 2 * x;
                let bottom = top + ow;
                dst[y * w + x] = src[top] + src[top + 1] + src[bottom] + src[bottom + 1];
            }
        }
    }
    grad
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
