//! Central-difference verification of tape gradients.
//!
//! The analytic gradient is taken from the tape in the precision under test;
//! the numerical gradient is always evaluated in `f64` at the same (rounded)
//! input point, so an `f32` check measures only the error of the `f32` tape.
//! Numerical derivatives use the fourth-order stencil
//! `(8[f(x+h) − f(x−h)] − [f(x+2h) − f(x−2h)]) / 12h`.

pub mod suite;

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scalar-valued function of several tensor inputs, evaluable in both precisions.
pub trait Differentiable {
    fn eval<T: Scalar>(&self, g: &mut Graph<'_, T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Error denominators are at least this fraction of the largest numerical
    /// gradient magnitude in the check, so exact zeros compare on scale.
    pub scale_floor: f64,
    /// Elements per input to probe; larger inputs are probed at a fixed stride.
    pub max_elems: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            tol: 1e-3,
            scale_floor: 1e-3,
            max_elems: 256,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub max_rel_err: f64,
    /// `(input, element)` of the worst mismatch.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub pass: bool,
}

/// Relative error with a denominator of at least `floor.max(1e-8)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor).max(1e-8)
}

fn eval_f64(
    f: &impl Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
) -> Result<f64> {
    let mut g = Graph::<f64>::detached().no_grad();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(invalid("gradcheck", format!("function must return a scalar, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Compares the tape gradient (precision `T`) with central differences.
pub fn finite_difference_check<T: Scalar, F: Differentiable>(
    f: &F,
    inputs: &[Tensor<f64>],
    opts: CheckOptions,
) -> Result<CheckReport> {
    check_impl::<T>(&|g, v| f.eval(g, v), &|g, v| f.eval(g, v), inputs, opts)
}

fn check_impl<T: Scalar>(
    tape: &dyn Fn(&mut Graph<'_, T>, &[Var]) -> Result<Var>,
    reference: &dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
    opts: CheckOptions,
) -> Result<CheckReport> {
    // evaluate both paths at the point representable in T
    let at: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast::<T>().cast::<f64>()).collect();

    let mut g = Graph::<T>::detached();
    let vars: Vec<Var> = at.iter().map(|t| g.leaf(t.cast::<T>(), true)).collect();
    let out = tape(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut probe = at.clone();
    let mut pairs = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let n = at[i].len();
        let stride = n.div_ceil(opts.max_elems).max(1);
        for j in (0..n).step_by(stride) {
            let a = grads.leaf(*v).map_or(0.0, |t| t.data()[j].to_f64c());
            let x0 = at[i].data()[j];
            let mut f = |d: f64| {
                probe[i].data_mut()[j] = x0 + d;
                eval_f64(&reference, &probe)
            };
            let h = opts.eps;
            let (f1, f_1, f2, f_2) = (f(h)?, f(-h)?, f(2.0 * h)?, f(-2.0 * h)?);
            probe[i].data_mut()[j] = x0;
            let num = (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * h);
            pairs.push(((i, j), a, num));
        }
    }
    let scale = pairs.iter().fold(0.0f64, |m, p| m.max(p.2.abs()));
    let floor = opts.scale_floor * scale;

    let mut report = CheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: pairs.len(),
        pass: true,
    };
    for (at, a, num) in pairs {
        let e = rel_err(a, num, floor);
        if e > report.max_rel_err || e.is_nan() {
            report.max_rel_err = if e.is_nan() { f64::INFINITY } else { e };
            report.worst = at;
            report.analytic = a;
            report.numeric = num;
        }
    }
    report.pass = report.max_rel_err <= opts.tol;
    Ok(report)
}

/// Single-input `f64` convenience form.
pub fn check_f64(
    f: impl Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
    x: &Tensor<f64>,
    eps: f64,
    tol: f64,
) -> Result<CheckReport> {
    let wrapped = move |g: &mut Graph<'_, f64>, v: &[Var]| f(g, v[0]);
    check_impl::<f64>(
        &wrapped,
        &wrapped,
        std::slice::from_ref(x),
        CheckOptions {
            eps,
            tol,
            ..Default::default()
        },
    )
}
