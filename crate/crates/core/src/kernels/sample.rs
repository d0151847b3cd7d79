//! Bilinear point sampling and integer-free resizing.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Corner indices and weights for one normalized coordinate.
#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

/// Maps normalized `u ∈ [0,1]` onto a grid of `n` cell centres
/// (`u = (i + 0.5) / n`), clamping corner indices to the border.
fn tap(u: f64, n: usize) -> Tap {
    let p = u * n as f64 - 0.5;
    let f = p.floor();
    let frac = p - f;
    let i = f as isize;
    let clamp = |v: isize| v.clamp(0, n as isize - 1) as usize;
    Tap {
        i0: clamp(i),
        i1: clamp(i + 1),
        frac,
    }
}

fn check(values: &[usize], points: &[usize]) -> Result<(usize, usize, usize, usize, usize)> {
    if values.len() != 4 || points.len() < 2 || points[points.len() - 1] != 2 || points[0] != values[0] {
        return Err(shape_err(
            "bilinear_sample",
            format!("values must be [B,h,w,D] and points [B,...,2]; got {values:?} and {points:?}"),
        ));
    }
    let q: usize = points[1..points.len() - 1].iter().product();
    Ok((values[0], values[1], values[2], values[3], q))
}

/// Samples channel-last `values: [B,h,w,D]` at normalized `(x, y)` points
/// `[B,...,2]`, producing `[B,...,D]`.
pub fn bilinear_sample<T: Scalar>(values: &Tensor<T>, points: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, h, w, d, q) = check(values.shape(), points.shape())?;
    let vd = values.data();
    let pd = points.data();
    let mut out = vec![T::zero(); b * q * d];
    for bi in 0..b {
        let vs = &vd[bi * h * w * d..(bi + 1) * h * w * d];
        for qi in 0..q {
            let pi = (bi * q + qi) * 2;
            let tx = tap(pd[pi].to_f64c(), w);
            let ty = tap(pd[pi + 1].to_f64c(), h);
            let wts = [
                ((ty.i0, tx.i0), (1.0 - ty.frac) * (1.0 - tx.frac)),
                ((ty.i0, tx.i1), (1.0 - ty.frac) * tx.frac),
                ((ty.i1, tx.i0), ty.frac * (1.0 - tx.frac)),
                ((ty.i1, tx.i1), ty.frac * tx.frac),
            ];
            let o = &mut out[(bi * q + qi) * d..(bi * q + qi + 1) * d];
            for ((yy, xx), wt) in wts {
                let wt = T::from_f64c(wt);
                let v = &vs[(yy * w + xx) * d..(yy * w + xx + 1) * d];
                for (a, &bv) in o.iter_mut().zip(v) {
                    *a += wt * bv;
                }
            }
        }
    }
    let mut shape = points.shape()[..points.ndim() - 1].to_vec();
    shape.push(d);
    Ok(Tensor::from_parts(shape, out))
}

pub fn bilinear_sample_backward<T: Scalar>(
    values: &Tensor<T>,
    points: &Tensor<T>,
    gout: &Tensor<T>,
    need: [bool; 2],
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (b, h, w, d, q) = check(values.shape(), points.shape()).expect("checked in forward");
    let vd = values.data();
    let pd = points.data();
    let gd = gout.data();
    let mut gv = need[0].then(|| vec![T::zero(); vd.len()]);
    let mut gp = need[1].then(|| vec![T::zero(); pd.len()]);
    for bi in 0..b {
        let vs = &vd[bi * h * w * d..(bi + 1) * h * w * d];
        for qi in 0..q {
            let pi = (bi * q + qi) * 2;
            let tx = tap(pd[pi].to_f64c(), w);
            let ty = tap(pd[pi + 1].to_f64c(), h);
            let g = &gd[(bi * q + qi) * d..(bi * q + qi + 1) * d];
            let corner = |yy: usize, xx: usize| &vs[(yy * w + xx) * d..(yy * w + xx + 1) * d];
            if let Some(gv) = gv.as_mut() {
                let wts = [
                    ((ty.i0, tx.i0), (1.0 - ty.frac) * (1.0 - tx.frac)),
                    ((ty.i0, tx.i1), (1.0 - ty.frac) * tx.frac),
                    ((ty.i1, tx.i0), ty.frac * (1.0 - tx.frac)),
                    ((ty.i1, tx.i1), ty.frac * tx.frac),
                ];
                for ((yy, xx), wt) in wts {
                    let wt = T::from_f64c(wt);
                    let base = bi * h * w * d + (yy * w + xx) * d;
                    for (a, &gg) in gv[base..base + d].iter_mut().zip(g) {
                        *a += wt * gg;
                    }
                }
            }
            if let Some(gp) = gp.as_mut() {
                // d out / d px and d out / d py, dotted with the upstream gradient
                let (mut dx, mut dy) = (0.0f64, 0.0f64);
                let (v00, v01, v10, v11) = (
                    corner(ty.i0, tx.i0),
                    corner(ty.i0, tx.i1),
                    corner(ty.i1, tx.i0),
                    corner(ty.i1, tx.i1),
                );
                for c in 0..d {
                    let gg = g[c].to_f64c();
                    let (a, bb, cc, dd) = (
                        v00[c].to_f64c(),
                        v01[c].to_f64c(),
                        v10[c].to_f64c(),
                        v11[c].to_f64c(),
                    );
                    dx += gg * ((1.0 - ty.frac) * (bb - a) + ty.frac * (dd - cc));
                    dy += gg * ((1.0 - tx.frac) * (cc - a) + tx.frac * (dd - bb));
                }
                gp[pi] = T::from_f64c(dx * w as f64);
                gp[pi + 1] = T::from_f64c(dy * h as f64);
            }
        }
    }
    (
        gv.map(|v| Tensor::from_parts(values.shape().to_vec(), v)),
        gp.map(|v| Tensor::from_parts(points.shape().to_vec(), v)),
    )
}

/// Interpolation mode for [`resize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMode {
    Nearest,
    /// Half-pixel centres (`align_corners = false`), edge-clamped.
    Bilinear,
}

/// Per-axis interpolation table: `(i0, i1, w1)` for each output index.
fn axis_table(n_in: usize, n_out: usize, mode: ResizeMode) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| match mode {
            ResizeMode::Nearest => {
                let i = ((o as f64 * scale).floor() as usize).min(n_in - 1);
                (i, i, 0.0)
            }
            ResizeMode::Bilinear => {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, src - i0 as f64)
            }
        })
        .collect()
}

pub fn resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || out_h == 0 || out_w == 0 {
        return Err(shape_err("resize", format!("expected [B,C,H,W] input, got {s:?}")));
    }
    let (n, h, w) = (s[0] * s[1], s[2], s[3]);
    let ty = axis_table(h, out_h, mode);
    let tx = axis_table(w, out_w, mode);
    let xd = x.data();
    let mut out = vec![T::zero(); n * out_h * out_w];
    for p in 0..n {
        let src = &xd[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = (1.0 - fy) * ((1.0 - fx) * src[y0 * w + x0].to_f64c() + fx * src[y0 * w + x1].to_f64c())
                    + fy * ((1.0 - fx) * src[y1 * w + x0].to_f64c() + fx * src[y1 * w + x1].to_f64c());
                dst[oy * out_w + ox] = T::from_f64c(v);
            }
        }
    }
    Ok(Tensor::from_parts(vec![s[0], s[1], out_h, out_w], out))
}

pub fn resize_backward<T: Scalar>(gout: &Tensor<T>, in_shape: &[usize], mode: ResizeMode) -> Tensor<T> {
    let (n, h, w) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3]);
    let (out_h, out_w) = (gout.shape()[2], gout.shape()[3]);
    let ty = axis_table(h, out_h, mode);
    let tx = axis_table(w, out_w, mode);
    let gd = gout.data();
    let mut acc = vec![0.0f64; n * h * w];
    for p in 0..n {
        let src = &gd[p * out_h * out_w..(p + 1) * out_h * out_w];
        let dst = &mut acc[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = src[oy * out_w + ox].to_f64c();
                dst[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += g * (1.0 - fy) * fx;
                dst[y1 * w + x0] += g * fy * (1.0 - fx);
                dst[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), acc.into_iter().map(T::from_f64c).collect())
}
