//! Numpy-style broadcasting for binary elementwise ops.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{strides, Tensor};

/// Index mapping from a broadcast output to its two operands.
pub(crate) struct Plan {
    pub out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    same: bool,
}

impl Plan {
    pub fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Self {
                out_shape: a.to_vec(),
                a_strides: Vec::new(),
                b_strides: Vec::new(),
                same: true,
            });
        }
        let nd = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; nd - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out = Vec::with_capacity(nd);
        for i in 0..nd {
            let d = match (pa[i], pb[i]) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => {
                    return Err(shape_err(
                        op,
                        format!("cannot broadcast {a:?} with {b:?}"),
                    ))
                }
            };
            out.push(d);
        }
        let bstr = |p: &[usize]| {
            let s = strides(p);
            p.iter()
                .zip(s)
                .map(|(&d, st)| if d == 1 { 0 } else { st })
                .collect::<Vec<_>>()
        };
        Ok(Self {
            a_strides: bstr(&pa),
            b_strides: bstr(&pb),
            out_shape: out,
            same: false,
        })
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element in order.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n: usize = self.out_shape.iter().product();
        if self.same {
            for i in 0..n {
                f(i, i, i);
            }
            return;
        }
        let nd = self.out_shape.len();
        let last = self.out_shape[nd - 1];
        let (sa, sb) = (self.a_strides[nd - 1], self.b_strides[nd - 1]);
        let mut idx = vec![0usize; nd];
        let mut o = 0;
        while o < n {
            let mut ia = 0;
            let mut ib = 0;
            for d in 0..nd - 1 {
                ia += idx[d] * self.a_strides[d];
                ib += idx[d] * self.b_strides[d];
            }
            for j in 0..last {
                f(o + j, ia + j * sa, ib + j * sb);
            }
            o += last;
            // advance the outer counter
            let mut d = nd - 1;
            while d > 0 {
                d -= 1;
                idx[d] += 1;
                if idx[d] < self.out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

pub(crate) fn binary<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let plan = Plan::new(op, a.shape(), b.shape())?;
    let n: usize = plan.out_shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let out = if plan.same {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let mut out = vec![T::zero(); n];
        plan.for_each(|o, ia, ib| out[o] = f(ad[ia], bd[ib]));
        out
    };
    Ok(Tensor::from_parts(plan.out_shape, out))
}

/// Reduces a broadcast-shaped gradient back onto an operand of `shape`.
///
/// `contrib(o, ia, ib)` gives the per-element contribution; summation runs
/// in `f64`.
pub(crate) fn reduce_to<T: Scalar>(
    plan: &Plan,
    shape: &[usize],
    use_a: bool,
    contrib: impl Fn(usize, usize, usize) -> f64,
) -> Tensor<T> {
    let n: usize = shape.iter().product();
    if plan.same {
        let data = (0..n).map(|i| T::from_f64c(contrib(i, i, i))).collect();
        return Tensor::from_parts(shape.to_vec(), data);
    }
    if n == plan.out_shape.iter().product::<usize>() {
        // the operand is only reshaped by broadcasting: no two outputs share an index
        let mut data = vec![T::zero(); n];
        plan.for_each(|o, ia, ib| data[if use_a { ia } else { ib }] = T::from_f64c(contrib(o, ia, ib)));
        return Tensor::from_parts(shape.to_vec(), data);
    }
    let mut acc = vec![0.0f64; n];
    plan.for_each(|o, ia, ib| {
        let k = if use_a { ia } else { ib };
        acc[k] += contrib(o, ia, ib);
    });
    Tensor::from_parts(shape.to_vec(), acc.into_iter().map(T::from_f64c).collect())
}
