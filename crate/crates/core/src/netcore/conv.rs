//! Convolution kernels. 3x3 stride-1 convolutions run as nine strided
//! GEMMs over a zero-padded copy of the input (no patch matrix); strided
//! and 1x1 convolutions use an explicit patch matrix.

use super::kernels::{col2im, conv_out, im2col};
use super::real::Real;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub ksize: usize,
    pub stride: usize,
}

/// What the backward pass needs from the forward input.
#[derive(Debug, Clone)]
pub(crate) enum ConvCache<T> {
    /// 1x1 stride-1: the input itself is the patch matrix.
    Identity,
    Padded(Vec<T>),
    Columns(Vec<T>),
}

impl ConvShape {
    fn shifted(&self) -> bool {
        self.ksize == 3 && self.stride == 1
    }

    pub(crate) fn prepare<T: Real>(&self, x: &Tensor<T>) -> ConvCache<T> {
        if self.ksize == 1 && self.stride == 1 {
            ConvCache::Identity
        } else if self.shifted() {
            ConvCache::Padded(pad(x))
        } else {
            ConvCache::Columns(im2col(x, self.ksize, self.stride))
        }
    }

    /// `y = W * x (+ b)`; `x` must be the tensor `cache` was prepared from.
    pub(crate) fn forward<T: Real>(&self, w: &[T], bias: Option<&[T]>, x: &Tensor<T>, cache: &ConvCache<T>) -> Tensor<T> {
        let (ho, wo) = (conv_out(x.h, self.ksize, self.stride), conv_out(x.w, self.ksize, self.stride));
        let mut y = Tensor::zeros(self.cout, ho, wo);
        let k = self.cin * self.ksize * self.ksize;
        match cache {
            ConvCache::Identity => T::gemm(self.cout, k, ho * wo, T::one(), w, false, &x.data, false, T::zero(), &mut y.data),
            ConvCache::Columns(col) => T::gemm(self.cout, k, ho * wo, T::one(), w, false, col, false, T::zero(), &mut y.data),
            ConvCache::Padded(xp) => {
                let (h, wd) = (x.h, x.w);
                let wp = wd + 2;
                let plane_p = (h + 2) * wp;
                let n = (h - 1) * wp + wd;
                let mut yp = vec![T::zero(); self.cout * h * wp];
                for tap in 0..9 {
                    let off = (tap / 3) * wp + tap % 3;
                    T::gemm_strided(
                        self.cout,
                        self.cin,
                        n,
                        T::one(),
                        &w[tap..],
                        ((self.cin * 9) as isize, 9),
                        &xp[off..],
                        (plane_p as isize, 1),
                        T::one(),
                        &mut yp,
                        ((h * wp) as isize, 1),
                    );
                }
                for co in 0..self.cout {
                    for r in 0..h {
                        let src = &yp[co * h * wp + r * wp..co * h * wp + r * wp + wd];
                        y.data[(co * h + r) * wd..(co * h + r + 1) * wd].copy_from_slice(src);
                    }
                }
            }
        }
        if let Some(b) = bias {
            for (c, chunk) in y.data.chunks_mut(ho * wo).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[c]);
            }
        }
        y
    }

    /// `dW += dy * patches(x)^T`.
    pub(crate) fn weight_grad<T: Real>(&self, dy: &Tensor<T>, x: &Tensor<T>, cache: &ConvCache<T>, dw: &mut [T]) {
        let k = self.cin * self.ksize * self.ksize;
        let n = dy.h * dy.w;
        match cache {
            ConvCache::Identity => T::gemm(self.cout, n, k, T::one(), &dy.data, false, &x.data, true, T::one(), dw),
            ConvCache::Columns(col) => T::gemm(self.cout, n, k, T::one(), &dy.data, false, col, true, T::one(), dw),
            ConvCache::Padded(xp) => {
                let (h, wd) = (x.h, x.w);
                let wp = wd + 2;
                let plane_p = (h + 2) * wp;
                let n = (h - 1) * wp + wd;
                let dyp = spread(dy, wp);
                for tap in 0..9 {
                    let off = (tap / 3) * wp + tap % 3;
                    T::gemm_strided(
                        self.cout,
                        n,
                        self.cin,
                        T::one(),
                        &dyp,
                        ((h * wp) as isize, 1),
                        &xp[off..],
                        (1, plane_p as isize),
                        T::one(),
                        &mut dw[tap..],
                        ((self.cin * 9) as isize, 9),
                    );
                }
            }
        }
    }

    /// `dx = W^T * dy` folded back to the input grid.
    pub(crate) fn input_grad<T: Real>(&self, dy: &Tensor<T>, w: &[T], h: usize, wd: usize) -> Tensor<T> {
        let k = self.cin * self.ksize * self.ksize;
        let n = dy.h * dy.w;
        if self.shifted() {
            let wp = wd + 2;
            let plane_p = (h + 2) * wp;
            let np = (h - 1) * wp + wd;
            let dyp = spread(dy, wp);
            let mut dxp = vec![T::zero(); self.cin * plane_p];
            for tap in 0..9 {
                let off = (tap / 3) * wp + tap % 3;
                T::gemm_strided(
                    self.cin,
                    self.cout,
                    np,
                    T::one(),
                    &w[tap..],
                    (9, (self.cin * 9) as isize),
                    &dyp,
                    ((h * wp) as isize, 1),
                    T::one(),
                    &mut dxp[off..],
                    (plane_p as isize, 1),
                );
            }
            let mut dx = Tensor::zeros(self.cin, h, wd);
            for c in 0..self.cin {
                for r in 0..h {
                    let s = c * plane_p + (r + 1) * wp + 1;
                    dx.data[(c * h + r) * wd..(c * h + r + 1) * wd].copy_from_slice(&dxp[s..s + wd]);
                }
            }
            return dx;
        }
        let mut dcol = vec![T::zero(); k * n];
        T::gemm(k, self.cout, n, T::one(), w, true, &dy.data, false, T::zero(), &mut dcol);
        if self.ksize == 1 && self.stride == 1 {
            Tensor { c: self.cin, h, w: wd, data: dcol }
        } else {
            col2im(&dcol, self.cin, h, wd, self.ksize, self.stride)
        }
    }
}

/// Zero-pads each channel by one pixel on every side.
fn pad<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let wp = x.w + 2;
    let plane_p = (x.h + 2) * wp;
    let mut xp = vec![T::zero(); x.c * plane_p];
    for c in 0..x.c {
        for r in 0..x.h {
            let d = c * plane_p + (r + 1) * wp + 1;
            xp[d..d + x.w].copy_from_slice(&x.data[(c * x.h + r) * x.w..(c * x.h + r + 1) * x.w]);
        }
    }
    xp
}

/// Lays `dy` out on rows of width `wp`, zero in the two pad columns.
fn spread<T: Real>(dy: &Tensor<T>, wp: usize) -> Vec<T> {
    let mut out = vec![T::zero(); dy.c * dy.h * wp];
    for c in 0..dy.c {
        for r in 0..dy.h {
            let d = (c * dy.h + r) * wp;
            out[d..d + dy.w].copy_from_slice(&dy.data[(c * dy.h + r) * dy.w..(c * dy.h + r + 1) * dy.w]);
        }
    }
    out
}
