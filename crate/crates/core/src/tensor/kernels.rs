//! Raw forward and backward loops over flat row-major buffers.

use super::Scalar;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Output extent with floor division, the usual convention for strided
    /// convolution. `None` when the kernel does not fit even once.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        let padded = input + 2 * padding;
        if padded < kernel || stride == 0 {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    /// Range of output positions whose tap at offset `k` lands inside the input.
    #[inline]
    fn valid_range(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.padding as isize;
        // o * s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // o * s + off <= in_len - 1
        let hi_num = in_len as isize - 1 - off;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_len as isize);
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeometry, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
    let k = g.kernel;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.batch * g.out_channels * out_plane];
    for b in 0..g.batch {
        for co in 0..g.out_channels {
            let o = &mut out[(b * g.out_channels + co) * out_plane..][..out_plane];
            o.fill(bias[co]);
            for ci in 0..g.in_channels {
                let xin = &x[(b * g.in_channels + ci) * in_plane..][..in_plane];
                for ky in 0..k {
                    let (oy0, oy1) = g.valid_range(ky, g.in_h, g.out_h);
                    for kx in 0..k {
                        let wv = w[((co * g.in_channels + ci) * k + ky) * k + kx];
                        let (ox0, ox1) = g.valid_range(kx, g.in_w, g.out_w);
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.padding;
                            let orow = &mut o[oy * g.out_w..][..g.out_w];
                            let irow = &xin[iy * g.in_w..][..g.in_w];
                            if g.stride == 1 {
                                let ix0 = ox0 + kx - g.padding;
                                for (ov, &iv) in orow[ox0..ox1].iter_mut().zip(&irow[ix0..]) {
                                    *ov = *ov + wv * iv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * g.stride + kx - g.padding;
                                    orow[ox] = orow[ox] + wv * irow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates the input, weight and bias gradients of a convolution. The
/// weight and bias sums run over whole planes and are carried in f64.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    w: &[T],
    gout: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let k = g.kernel;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    if let Some(gb) = gb {
        for b in 0..g.batch {
            for co in 0..g.out_channels {
                let go = &gout[(b * g.out_channels + co) * out_plane..][..out_plane];
                let sum = go.iter().fold(0.0f64, |a, &v| a + v.as_f64());
                gb[co] = T::of(gb[co].as_f64() + sum);
            }
        }
    }
    for b in 0..g.batch {
        for co in 0..g.out_channels {
            let go = &gout[(b * g.out_channels + co) * out_plane..][..out_plane];
            for ci in 0..g.in_channels {
                let xoff = (b * g.in_channels + ci) * in_plane;
                for ky in 0..k {
                    let (oy0, oy1) = g.valid_range(ky, g.in_h, g.out_h);
                    for kx in 0..k {
                        let widx = ((co * g.in_channels + ci) * k + ky) * k + kx;
                        let wv = w[widx];
                        let (ox0, ox1) = g.valid_range(kx, g.in_w, g.out_w);
                        let mut wacc = 0.0f64;
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.padding;
                            let grow = &go[oy * g.out_w..][..g.out_w];
                            let rbase = xoff + iy * g.in_w;
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.padding;
                                let gv = grow[ox];
                                wacc += x[rbase + ix].as_f64() * gv.as_f64();
                                if let Some(gx) = gx.as_deref_mut() {
                                    gx[rbase + ix] = gx[rbase + ix] + wv * gv;
                                }
                            }
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            gw[widx] = T::of(gw[widx].as_f64() + wacc);
                        }
                    }
                }
            }
        }
    }
}

/// Source taps `(i0, i1, weight_of_i1)` for half-pixel bilinear resampling
/// from `in_len` to `out_len` samples.
pub(crate) fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Resamples each `[h, w]` plane of `x` to `[oh, ow]`.
pub(crate) fn bilinear_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::of(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::of(lx);
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                dst[oy * ow + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    out
}

pub(crate) fn bilinear_backward<T: Scalar>(
    gout: &[T],
    gx: &mut [T],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    for p in 0..planes {
        let go = &gout[p * oh * ow..][..oh * ow];
        let gi = &mut gx[p * h * w..][..h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::of(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::of(lx);
                let g = go[oy * ow + ox];
                let gt = g * (T::one() - ly);
                let gbm = g * ly;
                gi[y0 * w + x0] = gi[y0 * w + x0] + gt * (T::one() - lx);
                gi[y0 * w + x1] = gi[y0 * w + x1] + gt * lx;
                gi[y1 * w + x0] = gi[y1 * w + x0] + gbm * (T::one() - lx);
                gi[y1 * w + x1] = gi[y1 * w + x1] + gbm * lx;
            }
        }
    }
}

/// Logistic function clamped to `[eps/2, 1 - eps/2]` at the storage
/// precision, so results stay strictly inside (0, 1) and far from subnormal.
#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let half_eps = T::epsilon() / T::of(2.0);
    s.max(half_eps).min(T::one() - half_eps)
}

/// Derivative of the unclamped logistic function.
#[inline]
pub(crate) fn sigmoid_grad<T: Scalar>(x: T) -> T {
    let e = (-x.abs()).exp();
    let d = T::one() + e;
    e / (d * d)
}
