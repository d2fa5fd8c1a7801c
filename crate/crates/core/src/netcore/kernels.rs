//! Spatial kernels shared by the graph ops: patch extraction for
//! convolutions and the corner-aligned 2x bilinear upsampler.

use super::real::Real;
use super::tensor::Tensor;
use crate::fieldio::{axis_weights, AxisWeight};

pub(crate) fn conv_out(n: usize, ksize: usize, stride: usize) -> usize {
    let pad = ksize / 2;
    (n + 2 * pad - ksize) / stride + 1
}

/// Unfolds `x` into a `(C*k*k) x (Ho*Wo)` matrix with zero "same" padding.
pub(crate) fn im2col<T: Real>(x: &Tensor<T>, ksize: usize, stride: usize) -> Vec<T> {
    let pad = (ksize / 2) as isize;
    let (ho, wo) = (conv_out(x.h, ksize, stride), conv_out(x.w, ksize, stride));
    let mut col = vec![T::zero(); x.c * ksize * ksize * ho * wo];
    let (h, w) = (x.h as isize, x.w as isize);
    for c in 0..x.c {
        let plane = x.channel(c);
        for ky in 0..ksize {
            for kx in 0..ksize {
                let row = (c * ksize + ky) * ksize + kx;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src_row = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        // contiguous shifted copy
                        let shift = kx as isize - pad;
                        let lo = (-shift).max(0) as usize;
                        let hi = ((w - shift).min(wo as isize)).max(0) as usize;
                        if lo < hi {
                            let s0 = (lo as isize + shift) as usize;
                            dst_row[lo..hi].copy_from_slice(&src_row[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * stride) as isize + kx as isize - pad;
                            if ix >= 0 && ix < w {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds a column matrix back onto a `c x h x w` grid.
pub(crate) fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, ksize: usize, stride: usize) -> Tensor<T> {
    let pad = (ksize / 2) as isize;
    let (ho, wo) = (conv_out(h, ksize, stride), conv_out(w, ksize, stride));
    let mut x = Tensor::zeros(c, h, w);
    let (hi, wi) = (h as isize, w as isize);
    for ch in 0..c {
        let plane = &mut x.data[ch * h * w..(ch + 1) * h * w];
        for ky in 0..ksize {
            for kx in 0..ksize {
                let row = (ch * ksize + ky) * ksize + kx;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= hi {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * wo..(oy + 1) * wo];
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < wi {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    x
}

pub(crate) struct Upsampler {
    rows: Vec<AxisWeight>,
    cols: Vec<AxisWeight>,
}

impl Upsampler {
    pub(crate) fn new(h: usize, w: usize) -> Self {
        Self { rows: axis_weights(h, 2 * h), cols: axis_weights(w, 2 * w) }
    }

    pub(crate) fn forward<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        let (ho, wo) = (self.rows.len(), self.cols.len());
        let mut out = Tensor::zeros(x.c, ho, wo);
        let mut tmp = vec![T::zero(); x.h * wo];
        for c in 0..x.c {
            let src = x.channel(c);
            for r in 0..x.h {
                let srow = &src[r * x.w..(r + 1) * x.w];
                for (j, cw) in self.cols.iter().enumerate() {
                    let f = T::of(cw.frac);
                    tmp[r * wo + j] = srow[cw.lo] * (T::one() - f) + srow[cw.hi] * f;
                }
            }
            let dst = &mut out.data[c * ho * wo..(c + 1) * ho * wo];
            for (i, rw) in self.rows.iter().enumerate() {
                let f = T::of(rw.frac);
                for j in 0..wo {
                    dst[i * wo + j] = tmp[rw.lo * wo + j] * (T::one() - f) + tmp[rw.hi * wo + j] * f;
                }
            }
        }
        out
    }

    pub(crate) fn adjoint<T: Real>(&self, g: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
        let wo = self.cols.len();
        let mut out = Tensor::zeros(g.c, h, w);
        let mut tmp = vec![T::zero(); h * wo];
        for c in 0..g.c {
            tmp.iter_mut().for_each(|v| *v = T::zero());
            let src = g.channel(c);
            for (i, rw) in self.rows.iter().enumerate() {
                let f = T::of(rw.frac);
                for j in 0..wo {
                    let v = src[i * wo + j];
                    tmp[rw.lo * wo + j] += v * (T::one() - f);
                    tmp[rw.hi * wo + j] += v * f;
                }
            }
            let dst = &mut out.data[c * h * w..(c + 1) * h * w];
            for r in 0..h {
                for (j, cw) in self.cols.iter().enumerate() {
                    let f = T::of(cw.frac);
                    let v = tmp[r * wo + j];
                    dst[r * w + cw.lo] += v * (T::one() - f);
                    dst[r * w + cw.hi] += v * f;
                }
            }
        }
        out
    }
}
