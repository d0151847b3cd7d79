//! Spatial enhancement of the trainable maps: a fixed Laplacian, a global
//! channel max, and a multi-scale depthwise stack, merged by softmax weights.

use crate::adapter::{assemble_tokens, TokenBundle};
use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::kernels::conv::PadMode;
use crate::nn::Conv2d;
use crate::params::{Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 4-neighbour Laplacian stencil, row-major.
pub const LAPLACIAN: [f64; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];

/// Depthwise kernel sizes of the multi-scale branch.
pub const MULTISCALE_KERNELS: [usize; 3] = [3, 5, 7];

fn check_map<T: Scalar>(g: &Graph<'_, T>, op: &'static str, x: Var) -> Result<(usize, usize, usize, usize)> {
    match *g.shape(x) {
        [b, c, h, w] => Ok((b, c, h, w)),
        ref s => Err(shape_err(op, format!("expected [B,C,h,w], got {s:?}"))),
    }
}

/// Per-channel Laplacian under reflection padding.
pub fn laplacian_branch<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    let (_, c, _, _) = check_map(g, "laplacian", x)?;
    let k: Vec<f64> = (0..c).flat_map(|_| LAPLACIAN).collect();
    let k = g.constant(Tensor::from_f64(&[c, 1, 3, 3], &k)?);
    g.conv2d(x, k, None, 1, 1, PadMode::Reflect, c)
}

/// Per-channel spatial maximum, broadcast back over the grid.
pub fn global_max_branch<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    let (b, c, h, w) = check_map(g, "global_max", x)?;
    let flat = g.reshape(x, &[b, c, h * w])?;
    let m = g.max(flat, 2)?;
    let m = g.reshape(m, &[b, c, 1, 1])?;
    let ones = g.constant(Tensor::ones(&[1, 1, h, w]));
    g.mul(m, ones)
}

#[derive(Clone, Debug)]
pub struct See {
    pub depthwise: Vec<Conv2d>,
    pub pointwise: Vec<Conv2d>,
    /// Merge logits for the (Laplacian, max, multi-scale) branches, shared across scales.
    pub merge: ParamId,
}

impl See {
    pub fn new<T: Scalar>(s: &mut ParamStore<T>, name: &str, channels: usize, frozen: bool) -> Self {
        let depthwise = MULTISCALE_KERNELS
            .iter()
            .map(|&k| Conv2d::depthwise(s, &format!("{name}.dw{k}"), channels, k, frozen))
            .collect();
        let pointwise = MULTISCALE_KERNELS
            .iter()
            .map(|&k| Conv2d::pointwise(s, &format!("{name}.pw{k}"), channels, channels, frozen))
            .collect();
        Self {
            depthwise,
            pointwise,
            merge: s.register(&format!("{name}.merge"), &[3], Init::Zeros, frozen),
        }
    }

    /// Softmax of the merge logits, `[3]`.
    pub fn merge_weights<T: Scalar>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        let l = g.param(self.merge);
        g.softmax(l, 0)
    }

    pub fn multiscale_branch<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (dw, pw) in self.depthwise.iter().zip(&self.pointwise) {
            let y = dw.forward(g, x)?;
            let y = pw.forward(g, y)?;
            acc = Some(match acc {
                Some(a) => g.add(a, y)?,
                None => y,
            });
        }
        Ok(acc.expect("three branches"))
    }

    /// `x + w_d·lap(x) + w_a·max(x) + w_m·mso(x)` for one map.
    pub fn enhance_map<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, weights: Var) -> Result<Var> {
        let branches = [
            laplacian_branch(g, x)?,
            global_max_branch(g, x)?,
            self.multiscale_branch(g, x)?,
        ];
        let mut out = x;
        for (i, br) in branches.into_iter().enumerate() {
            let w = g.slice(weights, 0, i, 1)?;
            let term = g.mul(br, w)?;
            out = g.add(out, term)?;
        }
        Ok(out)
    }

    /// Enhances every scale and adds the incoming bundle.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, bundle: &TokenBundle) -> Result<TokenBundle> {
        let weights = self.merge_weights(g)?;
        let maps = bundle.maps(g)?;
        let mut enhanced = [maps[0]; 3];
        for (e, m) in enhanced.iter_mut().zip(maps) {
            *e = self.enhance_map(g, m, weights)?;
        }
        assemble_tokens(g, enhanced, Some(bundle))
    }
}
