//! Single-level orthonormal 2D Haar transform on packed subbands.
//!
//! Packed layout: `[B, 4C, H/2, W/2]` with channel blocks `ll | lh | hl | hh`.
//! For a 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! ll = (a + b + c + d) / 2     lh = (a + b - c - d) / 2
//! hl = (a - b + c - d) / 2     hh = (a - b - c + d) / 2
//! ```
//!
//! The transform matrix is orthogonal and symmetric, so the inverse uses the
//! same sign pattern and each map is the other's adjoint.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn dwt2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(shape_err("haar_dwt2", format!("expected [B,C,H,W], got {s:?}")));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err(
            "haar_dwt2",
            format!("spatial dims {h}x{w} must be even; reflect-pad the input first"),
        ));
    }
    let (h2, w2) = (h / 2, w / 2);
    let half = T::from_f64c(0.5);
    let mut out = vec![T::zero(); b * 4 * c * h2 * w2];
    let xd = x.data();
    let band = c * h2 * w2;
    for bi in 0..b {
        let xs = &xd[bi * c * h * w..(bi + 1) * c * h * w];
        let os = &mut out[bi * 4 * band..(bi + 1) * 4 * band];
        for ci in 0..c {
            let p = &xs[ci * h * w..(ci + 1) * h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    let a = p[2 * i * w + 2 * j];
                    let bb = p[2 * i * w + 2 * j + 1];
                    let cc = p[(2 * i + 1) * w + 2 * j];
                    let d = p[(2 * i + 1) * w + 2 * j + 1];
                    let o = ci * h2 * w2 + i * w2 + j;
                    os[o] = (a + bb + cc + d) * half;
                    os[band + o] = (a + bb - cc - d) * half;
                    os[2 * band + o] = (a - bb + cc - d) * half;
                    os[3 * band + o] = (a - bb - cc + d) * half;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, 4 * c, h2, w2], out))
}

pub fn idwt2<T: Scalar>(s: &Tensor<T>) -> Result<Tensor<T>> {
    let sh = s.shape();
    if sh.len() != 4 || sh[1] % 4 != 0 {
        return Err(shape_err(
            "haar_idwt2",
            format!("expected packed subbands [B,4C,h,w], got {sh:?}"),
        ));
    }
    let (b, c, h2, w2) = (sh[0], sh[1] / 4, sh[2], sh[3]);
    let (h, w) = (2 * h2, 2 * w2);
    let half = T::from_f64c(0.5);
    let band = c * h2 * w2;
    let mut out = vec![T::zero(); b * c * h * w];
    let sd = s.data();
    for bi in 0..b {
        let ss = &sd[bi * 4 * band..(bi + 1) * 4 * band];
        let os = &mut out[bi * c * h * w..(bi + 1) * c * h * w];
        for ci in 0..c {
            let p = &mut os[ci * h * w..(ci + 1) * h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    let o = ci * h2 * w2 + i * w2 + j;
                    let (ll, lh, hl, hh) = (ss[o], ss[band + o], ss[2 * band + o], ss[3 * band + o]);
                    p[2 * i * w + 2 * j] = (ll + lh + hl + hh) * half;
                    p[2 * i * w + 2 * j + 1] = (ll + lh - hl - hh) * half;
                    p[(2 * i + 1) * w + 2 * j] = (ll - lh + hl - hh) * half;
                    p[(2 * i + 1) * w + 2 * j + 1] = (ll - lh - hl + hh) * half;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, h, w], out))
}
