//! Test-only oracles, kept independent of the library's kernels.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regcgan::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Plain triple loop.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    Tensor::new(&[m, n], out).unwrap()
}

/// Direct nested-loop cross-correlation with zero padding.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [b, ci, h, wd] = dims4(x);
    let [co, wci, kh, kw] = dims4(w);
    assert_eq!(ci, wci);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * co * ho * wo];
    for n in 0..b {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                s += x.data()[((n * ci + c) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * ci + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((n * co + o) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    Tensor::new(&[b, co, ho, wo], out).unwrap()
}

/// Transposed convolution by direct scatter: every input pixel stamps a
/// scaled kernel onto the (uncropped) output, which is then cropped by `pad`.
/// `w` is `in_c × out_c × kh × kw`.
pub fn naive_conv2d_transpose(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [b, ci, h, wd] = dims4(x);
    let [wci, co, kh, kw] = dims4(w);
    assert_eq!(ci, wci);
    let full_h = (h - 1) * stride + kh;
    let full_w = (wd - 1) * stride + kw;
    let mut full = vec![0.0; b * co * full_h * full_w];
    for n in 0..b {
        for c in 0..ci {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.data()[((n * ci + c) * h + iy) * wd + ix];
                    for o in 0..co {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let fy = iy * stride + ky;
                                let fx = ix * stride + kx;
                                full[((n * co + o) * full_h + fy) * full_w + fx] +=
                                    v * w.data()[((c * co + o) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    let (ho, wo) = (full_h - 2 * pad, full_w - 2 * pad);
    let mut out = vec![0.0; b * co * ho * wo];
    for n in 0..b {
        for o in 0..co {
            for y in 0..ho {
                for x_ in 0..wo {
                    out[((n * co + o) * ho + y) * wo + x_] =
                        full[((n * co + o) * full_h + y + pad) * full_w + x_ + pad];
                }
            }
        }
    }
    Tensor::new(&[b, co, ho, wo], out).unwrap()
}

pub fn dims4(t: &Tensor) -> [usize; 4] {
    let d = t.dims();
    [d[0], d[1], d[2], d[3]]
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Random conv geometry with integral output, spatial extent ≤ 8.
pub struct Geometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

pub fn random_conv_geometry(rng: &mut ChaCha8Rng) -> Geometry {
    loop {
        let g = Geometry {
            batch: rng.random_range(1..=2),
            c_in: rng.random_range(1..=3),
            c_out: rng.random_range(1..=3),
            h: rng.random_range(1..=8),
            w: rng.random_range(1..=8),
            k: rng.random_range(1..=5),
            stride: rng.random_range(1..=3),
            pad: rng.random_range(0..=2),
        };
        let ok = |n: usize| {
            let p = n + 2 * g.pad;
            p >= g.k && (p - g.k).is_multiple_of(g.stride)
        };
        if ok(g.h) && ok(g.w) && g.pad < g.k {
            return g;
        }
    }
}
