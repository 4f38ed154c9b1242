//! Raw numeric kernels on slices. Shapes are validated by the callers in `tape`.

/// `c = a · b` (or `a · bᵀ` when `transpose_b`), `a` is `m×k`, result `m×n`.
/// Accumulates into `c` with `beta` scaling of the existing contents.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    transpose_a: bool,
    b: &[f64],
    transpose_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // Row/column strides of the logical m×k and k×n operands.
    let (rsa, csa) = if transpose_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if transpose_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements and the
    // strides above address only those elements.
    unsafe {
        matrixmultiply::dgemm(
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

/// Patch extraction geometry for an NHWC input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }

    /// Visits every contiguous run `(dst, src, len)` of patch entries that
    /// read real (non-padding) input. Within one kernel row the in-bounds
    /// columns are adjacent in both the patch and the NHWC input.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let plen = self.patch_len();
        let (c, k, pad) = (self.channels, self.kernel, self.pad as isize);
        for b in 0..self.batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (b * oh + oy) * ow + ox;
                    let x0 = (ox * self.stride) as isize - pad;
                    let kx0 = (-x0).max(0) as usize;
                    let kx1 = ((self.width as isize - x0).min(k as isize)).max(0) as usize;
                    if kx0 >= kx1 {
                        continue;
                    }
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let ix = (x0 + kx0 as isize) as usize;
                        let src = ((b * self.height + iy as usize) * self.width + ix) * c;
                        let dst = row * plen + (ky * k + kx0) * c;
                        f(dst, src, (kx1 - kx0) * c);
                    }
                }
            }
        }
    }
}

pub(crate) fn im2col(g: &ConvGeometry, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.rows() * g.patch_len()];
    g.for_each_run(|dst, src, len| out[dst..dst + len].copy_from_slice(&x[src..src + len]));
    out
}

pub(crate) fn col2im_accumulate(g: &ConvGeometry, cols: &[f64], dx: &mut [f64]) {
    g.for_each_run(|dst, src, len| {
        for (d, s) in dx[src..src + len].iter_mut().zip(&cols[dst..dst + len]) {
            *d += s;
        }
    });
}

/// 2×2/stride-2 max pooling over NHWC. Returns output and the flat input index
/// of each selected maximum (first maximum wins on ties).
pub(crate) fn max_pool2(
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
    x: &[f64],
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(batch * oh * ow * channels);
    let mut arg = Vec::with_capacity(out.capacity());
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..channels {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = ((b * height + 2 * oy + dy) * width + 2 * ox + dx) * channels + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    (out, arg)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU. Returns the value and its derivative so the
/// backward pass does not need the input again. Uses `0.5·(1 + tanh u) = σ(2u)`.
pub(crate) fn gelu_with_grad(x: f64) -> (f64, f64) {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let s = 1.0 / (1.0 + (-2.0 * u).exp());
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    (x * s, s + 2.0 * x * s * (1.0 - s) * du)
}

/// Numerically stable softmax of one strided lane, written into `out`.
pub(crate) fn softmax_lane(x: &[f64], out: &mut [f64], base: usize, len: usize, stride: usize) {
    let mut max = f64::NEG_INFINITY;
    for j in 0..len {
        max = max.max(x[base + j * stride]);
    }
    let mut sum = 0.0;
    for j in 0..len {
        let e = (x[base + j * stride] - max).exp();
        out[base + j * stride] = e;
        sum += e;
    }
    for j in 0..len {
        out[base + j * stride] /= sum;
    }
}
