//! Raw slice kernels behind the graph ops: GEMM wrappers and im2col-based
//! convolution passes.

/// C ← A·B + beta·C, all row-major. `ta`/`tb` read A or B transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(ta: bool, tb: bool, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // A is m×k logically; stored k×m when transposed.
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
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

/// Geometry of a cross-correlation from `c_in × h × w` to `c_out × ho × wo`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Output extent of a strided convolution, if integral and positive.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        if stride == 0 || padded < kernel || !(padded - kernel).is_multiple_of(stride) {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    /// Output extent of a transposed convolution, if positive.
    pub fn transpose_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let grown = (input - 1) * stride + kernel;
        if stride == 0 || grown <= 2 * pad {
            return None;
        }
        Some(grown - 2 * pad)
    }

    /// Output columns `lo..hi` whose input column `ox·stride + kj − pad`
    /// lies inside the image.
    pub fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let (s, off) = (self.stride, kj as isize - self.pad as isize);
        let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
        let last = self.w as isize - 1 - off;
        let hi = if last < 0 {
            0
        } else {
            (last as usize / s + 1).min(self.wo)
        };
        (lo.min(hi), hi)
    }

    pub fn cols_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.ho * self.wo
    }
}

/// Unfolds one sample into columns `off..off + ho·wo` of a
/// `(c_in·kh·kw) × ld` matrix.
pub(crate) fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64], ld: usize, off: usize) {
    let p = g.ho * g.wo;
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let out = &mut cols[row * ld + off..row * ld + off + p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut out[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let (lo, hi) = g.valid_cols(kj);
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    for (ox, d) in (lo..hi).zip(&mut dst[lo..hi]) {
                        *d = src[ox * g.stride + kj - g.pad];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns `off..off + ho·wo` back
/// into one sample.
pub(crate) fn col2im(g: &ConvGeom, cols: &[f64], ld: usize, off: usize, x: &mut [f64]) {
    let p = g.ho * g.wo;
    for ci in 0..g.c_in {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ld + off..row * ld + off + p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let (lo, hi) = g.valid_cols(kj);
                    for ox in lo..hi {
                        dst[ox * g.stride + kj - g.pad] += src[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

/// Columns of the whole batch side by side: `(c_in·kh·kw) × (batch·ho·wo)`.
fn batch_cols(g: &ConvGeom, batch: usize, x: &[f64]) -> Vec<f64> {
    let ld = batch * g.ho * g.wo;
    let mut cols = vec![0.0; g.cols_rows() * ld];
    for n in 0..batch {
        im2col(
            g,
            &x[n * g.in_len()..(n + 1) * g.in_len()],
            &mut cols,
            ld,
            n * g.ho * g.wo,
        );
    }
    cols
}

/// `batch × c × p` to `c × (batch·p)`.
fn channels_major(batch: usize, c: usize, p: usize, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for n in 0..batch {
        for ch in 0..c {
            out[ch * batch * p + n * p..ch * batch * p + (n + 1) * p]
                .copy_from_slice(&y[(n * c + ch) * p..(n * c + ch + 1) * p]);
        }
    }
    out
}

/// Forward cross-correlation over a batch. `w` is `c_out × c_in × kh × kw`.
pub(crate) fn conv_forward(g: &ConvGeom, batch: usize, x: &[f64], w: &[f64], out: &mut [f64]) {
    let p = g.ho * g.wo;
    let cols = batch_cols(g, batch, x);
    let mut y = vec![0.0; g.c_out * batch * p];
    gemm(false, false, g.c_out, g.cols_rows(), batch * p, w, &cols, 0.0, &mut y);
    for n in 0..batch {
        for co in 0..g.c_out {
            out[(n * g.c_out + co) * p..(n * g.c_out + co + 1) * p]
                .copy_from_slice(&y[co * batch * p + n * p..co * batch * p + (n + 1) * p]);
        }
    }
}

/// Gradient of the cross-correlation w.r.t. its input (accumulated into `dx`).
pub(crate) fn conv_backward_input(g: &ConvGeom, batch: usize, dy: &[f64], w: &[f64], dx: &mut [f64]) {
    let p = g.ho * g.wo;
    let ld = batch * p;
    let d = channels_major(batch, g.c_out, p, dy);
    let mut cols = vec![0.0; g.cols_rows() * ld];
    gemm(true, false, g.cols_rows(), g.c_out, ld, w, &d, 0.0, &mut cols);
    for n in 0..batch {
        col2im(g, &cols, ld, n * p, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
    }
}

/// Gradient of the cross-correlation w.r.t. its kernel (accumulated into `dw`).
pub(crate) fn conv_backward_kernel(g: &ConvGeom, batch: usize, x: &[f64], dy: &[f64], dw: &mut [f64]) {
    let p = g.ho * g.wo;
    let cols = batch_cols(g, batch, x);
    let d = channels_major(batch, g.c_out, p, dy);
    gemm(false, true, g.c_out, batch * p, g.cols_rows(), &d, &cols, 1.0, dw);
}

/// Sums a `batch × c × spatial` gradient over everything but the channel axis.
pub(crate) fn channel_sums(batch: usize, channels: usize, spatial: usize, dy: &[f64], db: &mut [f64]) {
    for (k, plane) in dy.chunks(spatial).take(batch * channels).enumerate() {
        db[k % channels] += plane.iter().sum::<f64>();
    }
}
