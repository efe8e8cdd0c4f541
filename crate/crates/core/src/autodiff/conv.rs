use super::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

struct Dims {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn dims<T: Scalar>(x: &Array<T>, k: &Array<T>, stride: usize, pad: usize) -> Result<Dims> {
    let mismatch = || Error::ShapeMismatch {
        op: "conv_transpose2d",
        lhs: x.shape().to_vec(),
        rhs: k.shape().to_vec(),
    };
    if x.rank() != 4 || k.rank() != 4 || x.shape()[1] != k.shape()[0] || stride == 0 {
        return Err(mismatch());
    }
    let (b, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (k.shape()[1], k.shape()[2], k.shape()[3]);
    let full_h = (h - 1) * stride + kh;
    let full_w = (w - 1) * stride + kw;
    if full_h <= 2 * pad || full_w <= 2 * pad {
        return Err(mismatch());
    }
    Ok(Dims {
        b,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ho: full_h - 2 * pad,
        wo: full_w - 2 * pad,
    })
}

/// Calls `f(x_index, k_index, out_index)` for every contributing triple.
#[inline]
fn for_each_tap(d: &Dims, stride: usize, pad: usize, mut f: impl FnMut(usize, usize, usize)) {
    for b in 0..d.b {
        for ci in 0..d.cin {
            for iy in 0..d.h {
                for ix in 0..d.w {
                    let xi = ((b * d.cin + ci) * d.h + iy) * d.w + ix;
                    for co in 0..d.cout {
                        for ky in 0..d.kh {
                            let oy = (iy * stride + ky) as isize - pad as isize;
                            if oy < 0 || oy as usize >= d.ho {
                                continue;
                            }
                            for kx in 0..d.kw {
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if ox < 0 || ox as usize >= d.wo {
                                    continue;
                                }
                                let ki = ((ci * d.cout + co) * d.kh + ky) * d.kw + kx;
                                let oi = ((b * d.cout + co) * d.ho + oy as usize) * d.wo + ox as usize;
                                f(xi, ki, oi);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    x: &Array<T>,
    k: &Array<T>,
    stride: usize,
    pad: usize,
) -> Result<Array<T>> {
    let d = dims(x, k, stride, pad)?;
    let mut out = vec![T::zero(); d.b * d.cout * d.ho * d.wo];
    let (xd, kd) = (x.data(), k.data());
    for_each_tap(&d, stride, pad, |xi, ki, oi| out[oi] += xd[xi] * kd[ki]);
    Array::new(vec![d.b, d.cout, d.ho, d.wo], out)
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &Array<T>,
    k: &Array<T>,
    g: &Array<T>,
    stride: usize,
    pad: usize,
) -> (Array<T>, Array<T>) {
    let d = dims(x, k, stride, pad).expect("validated in forward");
    let mut gx = Array::zeros(x.shape());
    let mut gk = Array::zeros(k.shape());
    let (xd, kd, gd) = (x.data(), k.data(), g.data());
    {
        let gxd = gx.data_mut();
        for_each_tap(&d, stride, pad, |xi, ki, oi| gxd[xi] += gd[oi] * kd[ki]);
    }
    {
        let gkd = gk.data_mut();
        for_each_tap(&d, stride, pad, |xi, ki, oi| gkd[ki] += gd[oi] * xd[xi]);
    }
    (gx, gk)
}
