//! 2D convolution (valid, strided, grouped) and explicit padding.

use crate::error::{invalid, shape_err, Result};
use crate::parallel::map_indices;
use crate::scalar::{matmul_into, Scalar};
use crate::tensor::Tensor;

/// Border handling for [`pad2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample (`d c b | a b c d | c b a`).
    Reflect,
}

impl std::str::FromStr for PadMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" | "zeros" => Ok(Self::Zero),
            "reflect" | "reflection" => Ok(Self::Reflect),
            other => Err(invalid("pad2d", format!("unknown padding mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], wt: &[usize], stride: usize, groups: usize) -> Result<Self> {
        if x.len() != 4 || wt.len() != 4 {
            return Err(shape_err(
                "conv2d",
                format!("expected 4-D input and weight, got {x:?} and {wt:?}"),
            ));
        }
        if stride == 0 || groups == 0 {
            return Err(invalid("conv2d", "stride and groups must be positive"));
        }
        let (b, cin, h, w) = (x[0], x[1], x[2], x[3]);
        let (cout, cin_g, kh, kw) = (wt[0], wt[1], wt[2], wt[3]);
        if cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(shape_err(
                "conv2d",
                format!("input {x:?} incompatible with weight {wt:?} at groups={groups}"),
            ));
        }
        if kh > h || kw > w {
            return Err(shape_err(
                "conv2d",
                format!("kernel {kh}x{kw} larger than (padded) input {h}x{w}"),
            ));
        }
        Ok(Self {
            b,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            groups,
            ho: (h - kh) / stride + 1,
            wo: (w - kw) / stride + 1,
        })
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn depthwise_direct(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1 && self.stride == 1
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
}

/// Unfolds the channels `[c0, c0+cin_g)` of one sample into `[K, ho*wo]`.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, c0: usize, cols: &mut [T]) {
    let (h, w, ho, wo, s) = (g.h, g.w, g.ho, g.wo, g.stride);
    let mut r = 0;
    for c in 0..g.cin_g() {
        let plane = &x[(c0 + c) * h * w..(c0 + c + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut cols[r * ho * wo..(r + 1) * ho * wo];
                for oy in 0..ho {
                    let src = &plane[(oy * s + ky) * w..];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        dst.copy_from_slice(&src[kx..kx + wo]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d = src[ox * s + kx];
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, c0: usize, dx: &mut [T]) {
    let (h, w, ho, wo, s) = (g.h, g.w, g.ho, g.wo, g.stride);
    let mut r = 0;
    for c in 0..g.cin_g() {
        let plane = &mut dx[(c0 + c) * h * w..(c0 + c + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &cols[r * ho * wo..(r + 1) * ho * wo];
                for oy in 0..ho {
                    let base = (oy * s + ky) * w + kx;
                    let src = &row[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        for (d, &v) in plane[base..base + wo].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (ox, &v) in src.iter().enumerate() {
                            plane[base + ox * s] += v;
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

/// Valid (unpadded) convolution. `x: [B,Cin,H,W]`, `w: [Cout,Cin/groups,kh,kw]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, groups)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(shape_err(
                "conv2d",
                format!("bias {:?} does not match {} output channels", b.shape(), g.cout),
            ));
        }
    }
    let in_sz = g.cin * g.h * g.w;
    let out_plane = g.ho * g.wo;
    let out_sz = g.cout * out_plane;
    let (xd, wd) = (x.data(), w.data());
    let per_sample = map_indices(g.b, |bi| {
        let xs = &xd[bi * in_sz..(bi + 1) * in_sz];
        let mut out = vec![T::zero(); out_sz];
        if g.depthwise_direct() {
            depthwise_forward(xs, wd, &g, &mut out);
        } else {
            let k = g.k();
            let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * out_plane] };
            for grp in 0..g.groups {
                let c0 = grp * g.cin_g();
                let b_mat: &[T] = if g.pointwise() {
                    &xs[c0 * out_plane..(c0 + g.cin_g()) * out_plane]
                } else {
                    im2col(xs, &g, c0, &mut cols);
                    &cols
                };
                let o0 = grp * g.cout_g();
                matmul_into(
                    g.cout_g(),
                    k,
                    out_plane,
                    &wd[o0 * k..(o0 + g.cout_g()) * k],
                    false,
                    b_mat,
                    false,
                    &mut out[o0 * out_plane..(o0 + g.cout_g()) * out_plane],
                    false,
                );
            }
        }
        if let Some(b) = bias {
            for (co, plane) in out.chunks_mut(out_plane).enumerate() {
                let bv = b.data()[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        out
    });
    let data = per_sample.into_iter().flatten().collect();
    Ok(Tensor::from_parts(vec![g.b, g.cout, g.ho, g.wo], data))
}

/// Length of a channel's output laid out with the input's row stride:
/// output `(oy, ox)` sits at `oy * w + ox`, and tap `(ky, kx)` reads the
/// input at the same offset plus `ky * w + kx`.
fn wide_len(g: &ConvGeom) -> usize {
    (g.ho - 1) * g.w + g.wo
}

fn depthwise_forward<T: Scalar>(xs: &[T], wd: &[T], g: &ConvGeom, out: &mut [T]) {
    let (h, w, ho, wo, kh, kw) = (g.h, g.w, g.ho, g.wo, g.kh, g.kw);
    let len = wide_len(g);
    let mut wide = vec![T::zero(); len];
    for c in 0..g.cin {
        let plane = &xs[c * h * w..(c + 1) * h * w];
        let kern = &wd[c * kh * kw..(c + 1) * kh * kw];
        wide.iter_mut().for_each(|v| *v = T::zero());
        for ky in 0..kh {
            for kx in 0..kw {
                let wv = kern[ky * kw + kx];
                let src = &plane[ky * w + kx..ky * w + kx + len];
                for (d, &v) in wide.iter_mut().zip(src) {
                    *d += wv * v;
                }
            }
        }
        let o = &mut out[c * ho * wo..(c + 1) * ho * wo];
        for oy in 0..ho {
            o[oy * wo..(oy + 1) * wo].copy_from_slice(&wide[oy * w..oy * w + wo]);
        }
    }
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    stride: usize,
    groups: usize,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, groups)?;
    let in_sz = g.cin * g.h * g.w;
    let out_plane = g.ho * g.wo;
    let out_sz = g.cout * out_plane;
    let (xd, wd, gd) = (x.data(), w.data(), gout.data());
    let wlen = w.len();
    let k = g.k();

    // per-sample (dx, dw) so the weight reduction order is fixed
    let per_sample: Vec<(Vec<T>, Vec<T>)> = map_indices(g.b, |bi| {
        let xs = &xd[bi * in_sz..(bi + 1) * in_sz];
        let gs = &gd[bi * out_sz..(bi + 1) * out_sz];
        let mut dx = if need[0] { vec![T::zero(); in_sz] } else { Vec::new() };
        let mut dw = if need[1] { vec![T::zero(); wlen] } else { Vec::new() };
        if g.depthwise_direct() {
            depthwise_backward(xs, wd, gs, &g, need, &mut dx, &mut dw);
            return (dx, dw);
        }
        let mut cols = vec![T::zero(); k * out_plane];
        for grp in 0..g.groups {
            let c0 = grp * g.cin_g();
            let o0 = grp * g.cout_g();
            let go = &gs[o0 * out_plane..(o0 + g.cout_g()) * out_plane];
            let wg = &wd[o0 * k..(o0 + g.cout_g()) * k];
            if need[1] {
                let b_mat: &[T] = if g.pointwise() {
                    &xs[c0 * out_plane..(c0 + g.cin_g()) * out_plane]
                } else {
                    im2col(xs, &g, c0, &mut cols);
                    &cols
                };
                matmul_into(
                    g.cout_g(),
                    out_plane,
                    k,
                    go,
                    false,
                    b_mat,
                    true,
                    &mut dw[o0 * k..(o0 + g.cout_g()) * k],
                    false,
                );
            }
            if need[0] {
                if g.pointwise() {
                    matmul_into(
                        k,
                        g.cout_g(),
                        out_plane,
                        wg,
                        true,
                        go,
                        false,
                        &mut dx[c0 * out_plane..(c0 + g.cin_g()) * out_plane],
                        false,
                    );
                } else {
                    matmul_into(k, g.cout_g(), out_plane, wg, true, go, false, &mut cols, false);
                    col2im_add(&cols, &g, c0, &mut dx);
                }
            }
        }
        (dx, dw)
    });

    let dx = need[0].then(|| {
        let data: Vec<T> = per_sample.iter().flat_map(|(d, _)| d.iter().copied()).collect();
        Tensor::from_parts(x.shape().to_vec(), data)
    });
    let dw = need[1].then(|| {
        let mut acc = vec![T::zero(); wlen];
        for (_, d) in &per_sample {
            for (a, &v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        Tensor::from_parts(w.shape().to_vec(), acc)
    });
    let db = need[2].then(|| {
        let mut acc = vec![0.0f64; g.cout];
        for bi in 0..g.b {
            for (co, a) in acc.iter_mut().enumerate() {
                let off = bi * out_sz + co * out_plane;
                *a += gd[off..off + out_plane].iter().map(|v| v.to_f64c()).sum::<f64>();
            }
        }
        Tensor::from_parts(vec![g.cout], acc.into_iter().map(T::from_f64c).collect())
    });
    Ok(ConvGrads { dx, dw, db })
}

/// Dot product with eight independent partial sums so the loop vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ac.remainder().iter().zip(bc.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

fn depthwise_backward<T: Scalar>(
    xs: &[T],
    wd: &[T],
    gs: &[T],
    g: &ConvGeom,
    need: [bool; 3],
    dx: &mut [T],
    dw: &mut [T],
) {
    let (h, w, ho, wo, kh, kw) = (g.h, g.w, g.ho, g.wo, g.kh, g.kw);
    let len = wide_len(g);
    // padding columns stay zero, so they contribute nothing to either sum
    let mut gwide = vec![T::zero(); len];
    for c in 0..g.cin {
        let plane = &xs[c * h * w..(c + 1) * h * w];
        let kern = &wd[c * kh * kw..(c + 1) * kh * kw];
        let go = &gs[c * ho * wo..(c + 1) * ho * wo];
        for oy in 0..ho {
            gwide[oy * w..oy * w + wo].copy_from_slice(&go[oy * wo..(oy + 1) * wo]);
        }
        for ky in 0..kh {
            for kx in 0..kw {
                let off = ky * w + kx;
                if need[1] {
                    dw[c * kh * kw + ky * kw + kx] += dot(&gwide, &plane[off..off + len]);
                }
                if need[0] {
                    let wv = kern[ky * kw + kx];
                    let drow = &mut dx[c * h * w + off..c * h * w + off + len];
                    for (d, &gv) in drow.iter_mut().zip(&gwide) {
                        *d += wv * gv;
                    }
                }
            }
        }
    }
}

/// Mirror index about the edge samples; a length-1 axis reflects onto itself.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Pads the last two axes of a 4-D tensor by `pad` on every side.
pub fn pad2d<T: Scalar>(x: &Tensor<T>, pad: usize, mode: PadMode) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(shape_err("pad2d", format!("expected 4-D input, got {s:?}")));
    }
    let (n, h, w) = (s[0] * s[1], s[2], s[3]);
    if mode == PadMode::Reflect && ((pad >= h && h > 1) || (pad >= w && w > 1)) {
        return Err(invalid(
            "pad2d",
            format!("reflect padding {pad} needs spatial dims > {pad}, got {h}x{w}"),
        ));
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); n * hp * wp];
    let xd = x.data();
    for p in 0..n {
        let src = &xd[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * hp * wp..(p + 1) * hp * wp];
        match mode {
            PadMode::Zero => {
                for y in 0..h {
                    dst[(y + pad) * wp + pad..(y + pad) * wp + pad + w]
                        .copy_from_slice(&src[y * w..(y + 1) * w]);
                }
            }
            PadMode::Reflect => {
                for y in 0..hp {
                    let sy = reflect_index(y as isize - pad as isize, h);
                    for xx in 0..wp {
                        let sx = reflect_index(xx as isize - pad as isize, w);
                        dst[y * wp + xx] = src[sy * w + sx];
                    }
                }
            }
        }
    }
    let shape = vec![s[0], s[1], hp, wp];
    Ok(Tensor::from_parts(shape, out))
}

/// Adjoint of [`pad2d`]: folds a padded gradient back onto the input grid.
pub fn pad2d_backward<T: Scalar>(
    gout: &Tensor<T>,
    in_shape: &[usize],
    pad: usize,
    mode: PadMode,
) -> Tensor<T> {
    let (n, h, w) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3]);
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); n * h * w];
    let gd = gout.data();
    for p in 0..n {
        let src = &gd[p * hp * wp..(p + 1) * hp * wp];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        match mode {
            PadMode::Zero => {
                for y in 0..h {
                    dst[y * w..(y + 1) * w]
                        .copy_from_slice(&src[(y + pad) * wp + pad..(y + pad) * wp + pad + w]);
                }
            }
            PadMode::Reflect => {
                for y in 0..hp {
                    let sy = reflect_index(y as isize - pad as isize, h);
                    for xx in 0..wp {
                        let sx = reflect_index(xx as isize - pad as isize, w);
                        dst[sy * w + sx] += src[y * wp + xx];
                    }
                }
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight nested-loop reference convolution.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, groups: usize) -> Tensor<f64> {
        let g = ConvGeom::new(x.shape(), w.shape(), stride, groups).unwrap();
        let mut out = Tensor::zeros(&[g.b, g.cout, g.ho, g.wo]);
        for b in 0..g.b {
            for co in 0..g.cout {
                let grp = co / g.cout_g();
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let mut s = 0.0;
                        for ci in 0..g.cin_g() {
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    s += w.at(&[co, ci, ky, kx])
                                        * x.at(&[b, grp * g.cin_g() + ci, oy * stride + ky, ox * stride + kx]);
                                }
                            }
                        }
                        out.set(&[b, co, oy, ox], s);
                    }
                }
            }
        }
        out
    }

    fn seq(shape: &[usize], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 * scale - 0.3).collect();
        Tensor::from_f64(shape, &v).unwrap()
    }

    #[test]
    fn matches_naive_for_all_paths() {
        for &(cin, cout, k, stride, groups) in &[
            (3, 4, 3, 1, 1),
            (3, 4, 3, 2, 1),
            (4, 4, 1, 1, 1),
            (4, 4, 3, 1, 4),
            (4, 4, 3, 2, 4),
            (4, 6, 3, 1, 2),
        ] {
            let x = seq(&[2, cin, 7, 6], 0.1);
            let w = seq(&[cout, cin / groups, k, k], 0.05);
            let got = conv2d(&x, &w, None, stride, groups).unwrap();
            let want = naive(&x, &w, stride, groups);
            assert!(got.max_abs_diff(&want) < 1e-12, "{cin} {cout} {k} {stride} {groups}");
        }
    }

    #[test]
    fn identity_center_kernel_is_identity_under_zero_padding() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let mut k = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        k.set(&[0, 0, 1, 1], 1.0);
        let y = conv2d(&pad2d(&x, 1, PadMode::Zero).unwrap(), &k, None, 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        let x = Tensor::<f32>::from_f64(&[1, 1, 2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let p = pad2d(&x, 1, PadMode::Reflect).unwrap();
        assert_eq!(p.shape(), &[1, 1, 4, 5]);
        assert_eq!(&p.data()[5..10], &[2., 1., 2., 3., 2.]);
        assert_eq!(&p.data()[0..5], &[5., 4., 5., 6., 5.]);
    }

    #[test]
    fn single_sample_axis_reflects_onto_itself() {
        let x = Tensor::<f32>::from_f64(&[1, 1, 1, 3], &[1., 2., 3.]).unwrap();
        let p = pad2d(&x, 1, PadMode::Reflect).unwrap();
        assert_eq!(p.shape(), &[1, 1, 3, 5]);
        for row in p.data().chunks(5) {
            assert_eq!(row, &[2., 1., 2., 3., 2.]);
        }
        assert!(pad2d(&x, 3, PadMode::Reflect).is_err());
    }

    #[test]
    fn unknown_pad_mode_is_an_error() {
        assert!("circular".parse::<PadMode>().is_err());
        assert_eq!("reflect".parse::<PadMode>().unwrap(), PadMode::Reflect);
    }

    #[test]
    fn reflect_pad_backward_is_adjoint() {
        let x = seq(&[1, 2, 4, 5], 0.2);
        let g = seq(&[1, 2, 6, 7], 0.3);
        let px = pad2d(&x, 1, PadMode::Reflect).unwrap();
        let lhs: f64 = px.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let gx = pad2d_backward(&g, x.shape(), 1, PadMode::Reflect);
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
