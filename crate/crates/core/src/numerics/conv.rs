//! Direct 2-D cross-correlation kernels.
//!
//! Work is split across rayon tasks by output plane. Every output value is
//! accumulated by exactly one task in a fixed loop order, so results do not
//! depend on scheduling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[batch, in_ch, in_h, in_w], &[out_ch, wc, kh, kw]) = (x, w) else {
            return Err(Error::dim(format!(
                "conv2d expects rank-4 input and weight, got {x:?} and {w:?}"
            )));
        };
        if wc != in_ch {
            return Err(Error::dim(format!(
                "conv2d weight expects {wc} input channels, input has {in_ch}"
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d stride must be at least 1"));
        }
        let (ph, pw) = (in_h + 2 * pad, in_w + 2 * pad);
        if kh > ph || kw > pw {
            return Err(Error::dim(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(ConvGeom {
            batch,
            in_ch,
            in_h,
            in_w,
            out_ch,
            kh,
            kw,
            stride,
            pad,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.out_ch, self.out_h, self.out_w]
    }

    /// Output positions `o` for which `o * stride + k - pad` falls inside
    /// `0..extent`.
    #[inline]
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(s).min(out)
        };
        // o * s + k - pad <= extent - 1
        let hi = if extent + self.pad > k {
            ((extent + self.pad - k - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub fn forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let plane_out = g.out_h * g.out_w;
    let plane_in = g.in_h * g.in_w;
    let mut out = vec![T::zero(); g.batch * g.out_ch * plane_out];
    out.par_chunks_mut(plane_out)
        .enumerate()
        .for_each(|(bo, dst)| {
            let (b, o) = (bo / g.out_ch, bo % g.out_ch);
            if let Some(bias) = bias {
                dst.fill(bias[o]);
            }
            for c in 0..g.in_ch {
                let src = &x[(b * g.in_ch + c) * plane_in..][..plane_in];
                for ki in 0..g.kh {
                    let (y0, y1) = g.valid_range(ki, g.in_h, g.out_h);
                    for kj in 0..g.kw {
                        let wv = w[((o * g.in_ch + c) * g.kh + ki) * g.kw + kj];
                        if wv == T::zero() {
                            continue;
                        }
                        let (x0, x1) = g.valid_range(kj, g.in_w, g.out_w);
                        if x0 == x1 {
                            continue;
                        }
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ki - g.pad;
                            let row = &src[iy * g.in_w..][..g.in_w];
                            let drow = &mut dst[oy * g.out_w..][..g.out_w];
                            if g.stride == 1 {
                                let off = x0 + kj - g.pad;
                                for (d, s) in drow[x0..x1].iter_mut().zip(&row[off..]) {
                                    *d = *d + wv * *s;
                                }
                            } else {
                                for ox in x0..x1 {
                                    let ix = ox * g.stride + kj - g.pad;
                                    drow[ox] = drow[ox] + wv * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Gradient with respect to the input.
pub fn backward_input<T: Real>(g: &ConvGeom, gout: &[T], w: &[T]) -> Vec<T> {
    let plane_out = g.out_h * g.out_w;
    let plane_in = g.in_h * g.in_w;
    let mut gx = vec![T::zero(); g.batch * g.in_ch * plane_in];
    gx.par_chunks_mut(plane_in)
        .enumerate()
        .for_each(|(bc, dst)| {
            let (b, c) = (bc / g.in_ch, bc % g.in_ch);
            for o in 0..g.out_ch {
                let src = &gout[(b * g.out_ch + o) * plane_out..][..plane_out];
                for ki in 0..g.kh {
                    let (y0, y1) = g.valid_range(ki, g.in_h, g.out_h);
                    for kj in 0..g.kw {
                        let wv = w[((o * g.in_ch + c) * g.kh + ki) * g.kw + kj];
                        if wv == T::zero() {
                            continue;
                        }
                        let (x0, x1) = g.valid_range(kj, g.in_w, g.out_w);
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ki - g.pad;
                            let grow = &src[oy * g.out_w..][..g.out_w];
                            let drow = &mut dst[iy * g.in_w..][..g.in_w];
                            for ox in x0..x1 {
                                let ix = ox * g.stride + kj - g.pad;
                                drow[ix] = drow[ix] + wv * grow[ox];
                            }
                        }
                    }
                }
            }
        });
    gx
}

/// Gradients with respect to the weight and the bias.
pub fn backward_params<T: Real>(g: &ConvGeom, gout: &[T], x: &[T]) -> (Vec<T>, Vec<T>) {
    let plane_out = g.out_h * g.out_w;
    let plane_in = g.in_h * g.in_w;
    let per_o = g.in_ch * g.kh * g.kw;
    let mut gw = vec![T::zero(); g.out_ch * per_o];
    gw.par_chunks_mut(per_o).enumerate().for_each(|(o, dst)| {
        for b in 0..g.batch {
            let gsrc = &gout[(b * g.out_ch + o) * plane_out..][..plane_out];
            for c in 0..g.in_ch {
                let xsrc = &x[(b * g.in_ch + c) * plane_in..][..plane_in];
                for ki in 0..g.kh {
                    let (y0, y1) = g.valid_range(ki, g.in_h, g.out_h);
                    for kj in 0..g.kw {
                        let (x0, x1) = g.valid_range(kj, g.in_w, g.out_w);
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ki - g.pad;
                            let grow = &gsrc[oy * g.out_w..][..g.out_w];
                            let xrow = &xsrc[iy * g.in_w..][..g.in_w];
                            for ox in x0..x1 {
                                acc = acc + grow[ox] * xrow[ox * g.stride + kj - g.pad];
                            }
                        }
                        let idx = (c * g.kh + ki) * g.kw + kj;
                        dst[idx] = dst[idx] + acc;
                    }
                }
            }
        }
    });
    let gb = (0..g.out_ch)
        .map(|o| {
            (0..g.batch)
                .flat_map(|b| gout[(b * g.out_ch + o) * plane_out..][..plane_out].iter())
                .fold(T::zero(), |a, &v| a + v)
        })
        .collect();
    (gw, gb)
}
