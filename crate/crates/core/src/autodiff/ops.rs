//! Differentiable operator set.

use crate::autodiff::graph::{Graph, Var};
use crate::error::{invalid, shape_err, Result};
use crate::kernels::broadcast::{self, Plan};
use crate::kernels::conv::{self, PadMode};
use crate::kernels::haar;
use crate::kernels::sample::{self, ResizeMode};
use crate::scalar::{matmul_into, Scalar};
use crate::tensor::{axis_split, strides, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddScalar,
    MulScalar(f64),
    Exp,
    Log,
    Sqrt,
    Sigmoid,
    Gelu,
    Softplus,
    Relu,
    Clamp { lo: f64, hi: f64 },
    Matmul,
    Permute(Vec<usize>),
    Reshape,
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
    SumAxis { axis: usize },
    SumAll,
    MeanAxis { axis: usize },
    VarAxis { axis: usize },
    MaxAxis { axis: usize, arg: Vec<usize> },
    Softmax { axis: usize },
    LayerNorm { eps: f64 },
    Conv2d { stride: usize, groups: usize },
    Pad2d { pad: usize, mode: PadMode },
    HaarDwt,
    HaarIdwt,
    BilinearSample,
    Resize { mode: ResizeMode },
    GradScale(f64),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::AddScalar => "add_scalar",
            Op::MulScalar(_) => "mul_scalar",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Sigmoid => "sigmoid",
            Op::Gelu => "gelu",
            Op::Softplus => "softplus",
            Op::Relu => "relu",
            Op::Clamp { .. } => "clamp",
            Op::Matmul => "matmul",
            Op::Permute(_) => "permute",
            Op::Reshape => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::SumAxis { .. } => "sum",
            Op::SumAll => "sum_all",
            Op::MeanAxis { .. } => "mean",
            Op::VarAxis { .. } => "var",
            Op::MaxAxis { .. } => "max",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Conv2d { .. } => "conv2d",
            Op::Pad2d { .. } => "pad2d",
            Op::HaarDwt => "haar_dwt2",
            Op::HaarIdwt => "haar_idwt2",
            Op::BilinearSample => "bilinear_sample",
            Op::Resize { .. } => "resize",
            Op::GradScale(_) => "grad_scale",
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `x·σ(2u)` with `u = c(x + a x³)`, which equals `½x(1 + tanh u)`.
fn gelu<T: Scalar>(x: T) -> T {
    let u2 = T::from_f64c(2.0 * GELU_C) * (x + T::from_f64c(GELU_A) * x * x * x);
    x / (T::one() + (-u2).exp())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c2 = T::from_f64c(2.0 * GELU_C);
    let a = T::from_f64c(GELU_A);
    let s = T::one() / (T::one() + (-(c2 * (x + a * x * x * x))).exp());
    s + x * s * (T::one() - s) * c2 * (T::one() + T::from_f64c(3.0) * a * x * x)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(invalid(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}

fn keep_dim(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

/// Gathers `x` through a permutation of its axes.
fn permute_data<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let ins = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| ins[p]).collect();
    let in_str = strides(ins);
    let src_str: Vec<usize> = perm.iter().map(|&p| in_str[p]).collect();
    let n = x.len();
    let nd = out_shape.len();
    let xd = x.data();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; nd];
    let last = out_shape[nd - 1];
    let ls = src_str[nd - 1];
    while out.len() < n {
        let base: usize = (0..nd - 1).map(|d| idx[d] * src_str[d]).sum();
        for j in 0..last {
            out.push(xd[base + j * ls]);
        }
        let mut d = nd - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

struct MatmulDims {
    batch: usize,
    shared_b: bool,
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims> {
    if a.len() < 2 || b.len() < 2 {
        return Err(shape_err("matmul", format!("operands must be at least 2-D: {a:?} x {b:?}")));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    let shared_b = b.len() == 2;
    if k != kb || (!shared_b && a[..a.len() - 2] != b[..b.len() - 2]) {
        return Err(shape_err("matmul", format!("cannot multiply {a:?} by {b:?}")));
    }
    let mut out_shape = a[..a.len() - 2].to_vec();
    out_shape.extend([m, n]);
    Ok(MatmulDims {
        batch: a[..a.len() - 2].iter().product(),
        shared_b,
        m,
        k,
        n,
        out_shape,
    })
}

impl Op {
    /// Input gradients given the upstream gradient `g` of output `y`.
    pub(crate) fn backward<T: Scalar>(
        &self,
        x: &[&Tensor<T>],
        y: &Tensor<T>,
        g: &Tensor<T>,
        need: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let unary = |f: &dyn Fn(usize) -> T| -> Vec<Option<Tensor<T>>> {
            let d = (0..g.len()).map(f).collect();
            vec![Some(Tensor::from_parts(x[0].shape().to_vec(), d))]
        };
        let (gd, yd) = (g.data(), y.data());
        Ok(match self {
            Op::Leaf => vec![],
            Op::Add | Op::Sub | Op::Mul if x[0].shape() == x[1].shape() => {
                let (ad, bd) = (x[0].data(), x[1].data());
                let shape = x[0].shape().to_vec();
                let scaled = |o: &[T]| Tensor::from_parts(shape.clone(), gd.iter().zip(o).map(|(&a, &b)| a * b).collect());
                let ga = need[0].then(|| match self {
                    Op::Mul => scaled(bd),
                    _ => g.clone(),
                });
                let gb = need[1].then(|| match self {
                    Op::Mul => scaled(ad),
                    Op::Sub => g.map(|v| -v),
                    _ => g.clone(),
                });
                vec![ga, gb]
            }
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                let plan = Plan::new(self.name(), x[0].shape(), x[1].shape())?;
                let (ad, bd) = (x[0].data(), x[1].data());
                let ga = need[0].then(|| {
                    broadcast::reduce_to(&plan, x[0].shape(), true, |o, _ia, ib| {
                        let gv = gd[o].to_f64c();
                        match self {
                            Op::Mul => gv * bd[ib].to_f64c(),
                            Op::Div => gv / bd[ib].to_f64c(),
                            _ => gv,
                        }
                    })
                });
                let gb = need[1].then(|| {
                    broadcast::reduce_to(&plan, x[1].shape(), false, |o, ia, ib| {
                        let gv = gd[o].to_f64c();
                        match self {
                            Op::Sub => -gv,
                            Op::Mul => gv * ad[ia].to_f64c(),
                            Op::Div => {
                                let b = bd[ib].to_f64c();
                                -gv * ad[ia].to_f64c() / (b * b)
                            }
                            _ => gv,
                        }
                    })
                });
                vec![ga, gb]
            }
            Op::AddScalar => vec![Some(g.clone())],
            Op::MulScalar(s) => {
                let s = T::from_f64c(*s);
                vec![Some(g.map(|v| v * s))]
            }
            Op::Exp => unary(&|i| gd[i] * yd[i]),
            Op::Log => unary(&|i| gd[i] / x[0].data()[i]),
            Op::Sqrt => unary(&|i| {
                if yd[i] == T::zero() {
                    T::zero()
                } else {
                    gd[i] / (T::from_f64c(2.0) * yd[i])
                }
            }),
            Op::Sigmoid => unary(&|i| gd[i] * yd[i] * (T::one() - yd[i])),
            Op::Gelu => {
                let d = gd.iter().zip(x[0].data()).map(|(&gv, &xv)| gv * gelu_grad(xv)).collect();
                vec![Some(Tensor::from_parts(x[0].shape().to_vec(), d))]
            }
            Op::Softplus => unary(&|i| gd[i] * sigmoid(x[0].data()[i])),
            Op::Relu => unary(&|i| if x[0].data()[i] > T::zero() { gd[i] } else { T::zero() }),
            Op::Clamp { lo, hi } => unary(&|i| {
                let v = x[0].data()[i].to_f64c();
                if v > *lo && v < *hi {
                    gd[i]
                } else {
                    T::zero()
                }
            }),
            Op::Matmul => {
                let d = matmul_dims(x[0].shape(), x[1].shape())?;
                let (ad, bd) = (x[0].data(), x[1].data());
                let (m, k, n) = (d.m, d.k, d.n);
                let (m, batch) = if d.shared_b { (d.batch * m, 1) } else { (m, d.batch) };
                let ga = need[0].then(|| {
                    let mut out = vec![T::zero(); x[0].len()];
                    for i in 0..batch {
                        let bo = if d.shared_b { 0 } else { i * k * n };
                        matmul_into(m, n, k, &gd[i * m * n..], false, &bd[bo..bo + k * n], true, &mut out[i * m * k..(i + 1) * m * k], false);
                    }
                    Tensor::from_parts(x[0].shape().to_vec(), out)
                });
                let gb = need[1].then(|| {
                    let mut out = vec![T::zero(); x[1].len()];
                    for i in 0..batch {
                        let bo = if d.shared_b { 0 } else { i * k * n };
                        matmul_into(k, m, n, &ad[i * m * k..(i + 1) * m * k], true, &gd[i * m * n..(i + 1) * m * n], false, &mut out[bo..bo + k * n], d.shared_b);
                    }
                    Tensor::from_parts(x[1].shape().to_vec(), out)
                });
                vec![ga, gb]
            }
            Op::Permute(perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![Some(permute_data(g, &inv))]
            }
            Op::Reshape => vec![Some(Tensor::from_parts(x[0].shape().to_vec(), gd.to_vec()))],
            Op::Concat { axis } => {
                let (outer, total, inner) = axis_split(g.shape(), *axis);
                let mut off = 0;
                x.iter()
                    .zip(need)
                    .map(|(xi, &nd)| {
                        let len = xi.shape()[*axis];
                        let start = off;
                        off += len;
                        nd.then(|| {
                            let mut out = Vec::with_capacity(xi.len());
                            for o in 0..outer {
                                let base = (o * total + start) * inner;
                                out.extend_from_slice(&gd[base..base + len * inner]);
                            }
                            Tensor::from_parts(xi.shape().to_vec(), out)
                        })
                    })
                    .collect()
            }
            Op::Slice { axis, start } => {
                let (outer, total, inner) = axis_split(x[0].shape(), *axis);
                let len = g.shape()[*axis];
                let mut out = vec![T::zero(); x[0].len()];
                for o in 0..outer {
                    let base = (o * total + start) * inner;
                    out[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::from_parts(x[0].shape().to_vec(), out))]
            }
            Op::SumAxis { axis } | Op::MeanAxis { axis } => {
                let (outer, len, inner) = axis_split(x[0].shape(), *axis);
                let scale = match self {
                    Op::MeanAxis { .. } => T::one() / T::from_usize_c(len),
                    _ => T::one(),
                };
                let mut out = vec![T::zero(); x[0].len()];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            out[(o * len + a) * inner + i] = gd[o * inner + i] * scale;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(x[0].shape().to_vec(), out))]
            }
            Op::SumAll => vec![Some(Tensor::full(x[0].shape(), gd[0]))],
            Op::VarAxis { axis } => {
                let (outer, len, inner) = axis_split(x[0].shape(), *axis);
                let xd = x[0].data();
                let mut out = vec![T::zero(); x[0].len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let mean = (0..len).map(|a| xd[(o * len + a) * inner + i].to_f64c()).sum::<f64>() / len as f64;
                        let gv = gd[o * inner + i].to_f64c();
                        for a in 0..len {
                            let p = (o * len + a) * inner + i;
                            out[p] = T::from_f64c(gv * 2.0 * (xd[p].to_f64c() - mean) / len as f64);
                        }
                    }
                }
                vec![Some(Tensor::from_parts(x[0].shape().to_vec(), out))]
            }
            Op::MaxAxis { axis, arg } => {
                let (outer, len, inner) = axis_split(x[0].shape(), *axis);
                let mut out = vec![T::zero(); x[0].len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let a = arg[o * inner + i];
                        out[(o * len + a) * inner + i] = gd[o * inner + i];
                    }
                }
                vec![Some(Tensor::from_parts(x[0].shape().to_vec(), out))]
            }
            Op::Softmax { axis } => {
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let mut out = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| gd[at(a)].to_f64c() * yd[at(a)].to_f64c()).sum();
                        for a in 0..len {
                            let p = at(a);
                            out[p] = T::from_f64c(yd[p].to_f64c() * (gd[p].to_f64c() - dot));
                        }
                    }
                }
                vec![Some(Tensor::from_parts(y.shape().to_vec(), out))]
            }
            Op::LayerNorm { eps } => layer_norm_backward(x, g, *eps, need),
            Op::Conv2d { stride, groups } => {
                let has_bias = x.len() == 3;
                let gr = conv::conv2d_backward(
                    x[0],
                    x[1],
                    g,
                    *stride,
                    *groups,
                    [need[0], need[1], has_bias && need[2]],
                )?;
                let mut v = vec![gr.dx, gr.dw];
                if has_bias {
                    v.push(gr.db);
                }
                v
            }
            Op::Pad2d { pad, mode } => vec![Some(conv::pad2d_backward(g, x[0].shape(), *pad, *mode))],
            Op::HaarDwt => vec![Some(haar::idwt2(g)?)],
            Op::HaarIdwt => vec![Some(haar::dwt2(g)?)],
            Op::BilinearSample => {
                let (gv, gp) = sample::bilinear_sample_backward(x[0], x[1], g, [need[0], need[1]]);
                vec![gv, gp]
            }
            Op::Resize { mode } => vec![Some(sample::resize_backward(g, x[0].shape(), *mode))],
            Op::GradScale(s) => {
                let s = T::from_f64c(*s);
                vec![Some(g.map(|v| v * s))]
            }
        })
    }
}

fn layer_norm_backward<T: Scalar>(
    x: &[&Tensor<T>],
    g: &Tensor<T>,
    eps: f64,
    need: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let d = *x[0].shape().last().unwrap();
    let rows = x[0].len() / d;
    let (xd, gd, gamma) = (x[0].data(), g.data(), x[1].data());
    let mut dx = vec![T::zero(); x[0].len()];
    let mut dgamma = vec![0.0f64; d];
    let mut dbeta = vec![0.0f64; d];
    let mut xhat = vec![0.0f64; d];
    let mut dxhat = vec![0.0f64; d];
    for r in 0..rows {
        let row = &xd[r * d..(r + 1) * d];
        let grow = &gd[r * d..(r + 1) * d];
        let mean = row.iter().map(|v| v.to_f64c()).sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v.to_f64c() - mean).powi(2)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for c in 0..d {
            xhat[c] = (row[c].to_f64c() - mean) * rstd;
            let gv = grow[c].to_f64c();
            dxhat[c] = gv * gamma[c].to_f64c();
            dgamma[c] += gv * xhat[c];
            dbeta[c] += gv;
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            dx[r * d + c] = T::from_f64c(rstd * (dxhat[c] - m1 - xhat[c] * m2));
        }
    }
    let to_t = |v: Vec<f64>| Tensor::from_parts(vec![d], v.into_iter().map(T::from_f64c).collect());
    vec![
        need[0].then(|| Tensor::from_parts(x[0].shape().to_vec(), dx)),
        need[1].then(|| to_t(dgamma)),
        need[2].then(|| to_t(dbeta)),
    ]
}

/// Forward operators. Shape errors name the operator and the offending shapes.
impl<T: Scalar> Graph<'_, T> {
    fn binary_op(&mut self, op: Op, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Var> {
        let v = broadcast::binary(op.name(), self.value(a), self.value(b), f)?;
        Ok(self.push(v, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_op(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_op(Op::Sub, a, b, |x, y| x - y)
    }

    /// Elementwise (broadcasting) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_op(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_op(Op::Div, a, b, |x, y| x / y)
    }

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(T) -> T) -> Var {
        let v = self.value(a).map(f);
        self.push(v, op, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::from_f64c(s);
        self.unary(Op::AddScalar, a, |x| x + s)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let st = T::from_f64c(s);
        self.unary(Op::MulScalar(s), a, |x| x * st)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp, a, |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Op::Log, a, |x| x.ln())
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Op::Sqrt, a, |x| x.sqrt())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::Sigmoid, a, sigmoid)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(Op::Gelu, a, gelu)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Op::Softplus, a, softplus)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Op::Relu, a, |x| x.max(T::zero()))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::from_f64c(lo), T::from_f64c(hi));
        self.unary(Op::Clamp { lo, hi }, a, |x| x.max(l).min(h))
    }

    /// `[..., m, k] x [k, n]` (shared right operand) or `[..., m, k] x [..., k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = matmul_dims(self.shape(a), self.shape(b))?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let (m, k, n) = (d.m, d.k, d.n);
        let mut out = vec![T::zero(); d.batch * m * n];
        if d.shared_b {
            matmul_into(d.batch * m, k, n, ad, false, bd, false, &mut out, false);
        } else {
            for i in 0..d.batch {
                let bo = i * k * n;
                matmul_into(m, k, n, &ad[i * m * k..(i + 1) * m * k], false, &bd[bo..bo + k * n], false, &mut out[i * m * n..(i + 1) * m * n], false);
            }
        }
        let v = Tensor::from_parts(d.out_shape, out);
        Ok(self.push(v, Op::Matmul, &[a, b]))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let nd = self.shape(a).len();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("permute", format!("{perm:?} is not a permutation of {nd} axes")));
        }
        let v = permute_data(self.value(a), perm);
        Ok(self.push(v, Op::Permute(perm.to_vec()), &[a]))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: Var, d0: usize, d1: usize) -> Result<Var> {
        let nd = self.shape(a).len();
        if d0 >= nd || d1 >= nd {
            return Err(invalid("transpose", format!("axes ({d0},{d1}) out of range for {nd}-D")));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(d0, d1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(shape_err("reshape", format!("cannot reshape {:?} into {shape:?}", t.shape())));
        }
        let v = Tensor::from_parts(shape.to_vec(), t.data().to_vec());
        Ok(self.push(v, Op::Reshape, &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(invalid("concat", "no inputs"));
        }
        let first = self.shape(parts[0]).to_vec();
        check_axis("concat", &first, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("cannot concatenate {first:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&first, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let v = Tensor::from_parts(shape, out);
        Ok(self.push(v, Op::Concat { axis }, parts))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        check_axis("slice", &s, axis)?;
        if len == 0 || start + len > s[axis] {
            return Err(shape_err("slice", format!("range {start}..{} out of bounds for axis {axis} of {s:?}", start + len)));
        }
        let (outer, total, inner) = axis_split(&s, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let v = Tensor::from_parts(shape, out);
        Ok(self.push(v, Op::Slice { axis, start }, &[a]))
    }

    /// Splits `axis` into `parts` equal pieces.
    pub fn split(&mut self, a: Var, axis: usize, parts: usize) -> Result<Vec<Var>> {
        let s = self.shape(a).to_vec();
        check_axis("split", &s, axis)?;
        if parts == 0 || s[axis] % parts != 0 {
            return Err(shape_err("split", format!("axis {axis} of {s:?} not divisible into {parts} parts")));
        }
        let len = s[axis] / parts;
        (0..parts).map(|i| self.slice(a, axis, i * len, len)).collect()
    }

    fn reduce_axis(&mut self, op: Op, a: Var, axis: usize, f: impl Fn(&mut dyn Iterator<Item = f64>) -> f64) -> Result<Var> {
        let s = self.shape(a).to_vec();
        check_axis(op.name(), &s, axis)?;
        let (outer, len, inner) = axis_split(&s, axis);
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut it = (0..len).map(|k| d[(o * len + k) * inner + i].to_f64c());
                out.push(T::from_f64c(f(&mut it)));
            }
        }
        let v = Tensor::from_parts(keep_dim(&s, axis), out);
        Ok(self.push(v, op, &[a]))
    }

    /// Sum over `axis`, keeping it as size 1.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(Op::SumAxis { axis }, a, axis, |it| it.sum())
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let len = self.shape(a).get(axis).copied().unwrap_or(1) as f64;
        self.reduce_axis(Op::MeanAxis { axis }, a, axis, move |it| it.sum::<f64>() / len)
    }

    /// Population variance over `axis` (divides by the axis length).
    pub fn var(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(Op::VarAxis { axis }, a, axis, |it| {
            let v: Vec<f64> = it.collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        })
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_f64();
        self.push(Tensor::scalar(T::from_f64c(s)), Op::SumAll, &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.mul_scalar(s, 1.0 / n)
    }

    /// Max over `axis` (keeping it); ties resolve to the lowest index.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        check_axis("max", &s, axis)?;
        let (outer, len, inner) = axis_split(&s, axis);
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut arg = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                for k in 1..len {
                    if d[(o * len + k) * inner + i] > d[(o * len + best) * inner + i] {
                        best = k;
                    }
                }
                arg.push(best);
                out.push(d[(o * len + best) * inner + i]);
            }
        }
        let v = Tensor::from_parts(keep_dim(&s, axis), out);
        Ok(self.push(v, Op::MaxAxis { axis, arg }, &[a]))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        check_axis("softmax", &s, axis)?;
        let (outer, len, inner) = axis_split(&s, axis);
        let d = self.value(a).data();
        let mut out = vec![T::zero(); d.len()];
        let mut buf = vec![0.0f64; len];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| d[at(k)].to_f64c()).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = (d[at(k)].to_f64c() - m).exp();
                    z += *b;
                }
                for (k, b) in buf.iter().enumerate() {
                    out[at(k)] = T::from_f64c(b / z);
                }
            }
        }
        let v = Tensor::from_parts(s, out);
        Ok(self.push(v, Op::Softmax { axis }, &[a]))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` of shape `[D]`.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let d = *s.last().unwrap();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(
                "layer_norm",
                format!("affine params {:?}/{:?} do not match last axis of {s:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let xd = self.value(a).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks(d) {
            let mean = row.iter().map(|v| v.to_f64c()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.to_f64c() - mean).powi(2)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                let xh = (row[c].to_f64c() - mean) * rstd;
                out.push(T::from_f64c(xh * gd[c].to_f64c() + bd[c].to_f64c()));
            }
        }
        let v = Tensor::from_parts(s, out);
        Ok(self.push(v, Op::LayerNorm { eps }, &[a, gamma, beta]))
    }

    /// Spatial padding of a `[B,C,H,W]` tensor.
    pub fn pad2d(&mut self, a: Var, pad: usize, mode: PadMode) -> Result<Var> {
        if pad == 0 {
            return Ok(a);
        }
        let v = conv::pad2d(self.value(a), pad, mode)?;
        Ok(self.push(v, Op::Pad2d { pad, mode }, &[a]))
    }

    /// `conv2d` with symmetric padding `pad` under `mode`, then a strided,
    /// grouped valid convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        mode: PadMode,
        groups: usize,
    ) -> Result<Var> {
        let xp = self.pad2d(x, pad, mode)?;
        let v = conv::conv2d(self.value(xp), self.value(w), bias.map(|b| self.value(b)), stride, groups)?;
        let mut inputs = vec![xp, w];
        inputs.extend(bias);
        Ok(self.push(v, Op::Conv2d { stride, groups }, &inputs))
    }

    /// Packed single-level Haar analysis: `[B,C,H,W] -> [B,4C,H/2,W/2]`.
    pub fn haar_dwt2(&mut self, x: Var) -> Result<Var> {
        let v = haar::dwt2(self.value(x))?;
        Ok(self.push(v, Op::HaarDwt, &[x]))
    }

    /// Packed single-level Haar synthesis: `[B,4C,h,w] -> [B,C,2h,2w]`.
    pub fn haar_idwt2(&mut self, s: Var) -> Result<Var> {
        let v = haar::idwt2(self.value(s))?;
        Ok(self.push(v, Op::HaarIdwt, &[s]))
    }

    /// Samples channel-last `values [B,h,w,D]` at normalized points `[B,...,2]`.
    pub fn bilinear_sample(&mut self, values: Var, points: Var) -> Result<Var> {
        let v = sample::bilinear_sample(self.value(values), self.value(points))?;
        Ok(self.push(v, Op::BilinearSample, &[values, points]))
    }

    /// Identity in the forward pass; scales the gradient by `s` on the way back.
    ///
    /// Only meant for building deliberately wrong backward passes when
    /// exercising the gradient checker.
    pub fn grad_scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).clone();
        self.push(v, Op::GradScale(s), &[x])
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Var> {
        let v = sample::resize(self.value(x), out_h, out_w, mode)?;
        Ok(self.push(v, Op::Resize { mode }, &[x]))
    }
}
