//! Parameterized layers: registration at construction, graph ops at forward.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::kernels::conv::PadMode;
use crate::params::{Init, ParamId, ParamStore};
use crate::scalar::Scalar;

/// `y = x W + b` over the last axis; `W` is stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(s: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, frozen: bool) -> Self {
        Self::with_init(s, name, d_in, d_out, Init::Weight, frozen)
    }

    /// Same as [`Linear::new`] with a custom weight initializer; the bias is always zero.
    pub fn with_init<T: Scalar>(
        s: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: Init,
        frozen: bool,
    ) -> Self {
        Self {
            w: s.register(&format!("{name}.weight"), &[d_in, d_out], init, frozen),
            b: Some(s.register(&format!("{name}.bias"), &[d_out], Init::Zeros, frozen)),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// 2-D convolution with "same"-style symmetric padding `k / 2`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub groups: usize,
    pub pad: usize,
    pub mode: PadMode,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        s: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        groups: usize,
        frozen: bool,
    ) -> Self {
        Self {
            w: s.register(&format!("{name}.weight"), &[c_out, c_in / groups, k, k], Init::Weight, frozen),
            b: Some(s.register(&format!("{name}.bias"), &[c_out], Init::Zeros, frozen)),
            stride,
            groups,
            pad: k / 2,
            mode: PadMode::Zero,
        }
    }

    pub fn pointwise<T: Scalar>(s: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, frozen: bool) -> Self {
        Self::new(s, name, c_in, c_out, 1, 1, 1, frozen)
    }

    pub fn depthwise<T: Scalar>(s: &mut ParamStore<T>, name: &str, c: usize, k: usize, frozen: bool) -> Self {
        Self::new(s, name, c, c, k, 1, c, frozen)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.pad, self.mode, self.groups)
    }
}

/// Layer normalization over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<T: Scalar>(s: &mut ParamStore<T>, name: &str, d: usize, frozen: bool) -> Self {
        Self {
            gamma: s.register(&format!("{name}.gamma"), &[d], Init::Ones, frozen),
            beta: s.register(&format!("{name}.beta"), &[d], Init::Zeros, frozen),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gm, bt) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gm, bt, LN_EPS)
    }
}

/// `[B,C,h,w] -> [B,h·w,C]`.
pub fn map_to_tokens<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let r = g.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
    g.transpose(r, 1, 2)
}

/// `[B,h·w,C] -> [B,C,h,w]`.
pub fn tokens_to_map<T: Scalar>(g: &mut Graph<'_, T>, t: Var, h: usize, w: usize) -> Result<Var> {
    let s = g.shape(t).to_vec();
    let tr = g.transpose(t, 1, 2)?;
    g.reshape(tr, &[s[0], s[2], h, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_matches_hand_product() {
        let mut s = ParamStore::<f64>::new(0);
        let l = Linear::new(&mut s, "l", 2, 1, false);
        s.set("l.weight", Tensor::from_f64(&[2, 1], &[5.0, 6.0]).unwrap()).unwrap();
        s.set("l.bias", Tensor::from_f64(&[1], &[1.0]).unwrap()).unwrap();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = l.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).to_f64_vec(), vec![18.0, 40.0]);
    }

    #[test]
    fn token_map_round_trip() {
        let mut g = Graph::<f32>::detached();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = g.constant(Tensor::from_f64(&[1, 2, 3, 4], &data).unwrap());
        let t = map_to_tokens(&mut g, x).unwrap();
        assert_eq!(g.shape(t), &[1, 12, 2]);
        // token (row 1, col 2) channel 1
        assert_eq!(g.value(t).at(&[0, 6, 1]), 18.0);
        let m = tokens_to_map(&mut g, t, 3, 4).unwrap();
        assert_eq!(g.value(m), g.value(x));
    }
}
