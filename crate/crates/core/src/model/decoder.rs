//! Convolutional mask decoder: project to a common width, upsample-and-add
//! from coarse to fine, refine at stride 4, predict one logit channel.

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::kernels::sample::ResizeMode;
use crate::nn::Conv2d;
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Maps fed to the decoder. Trainable maps are absent in the frozen-only regime.
pub struct DecoderInputs {
    /// Frozen stream at stride 16, `[B,D,h,w]`.
    pub frozen: Var,
    /// Trainable maps at strides 4, 8, 16, 32.
    pub trainable: Option<[Var; 4]>,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub proj_frozen: Conv2d,
    /// Projections of the stride 4, 8, 16, 32 trainable maps.
    pub proj: Option<[Conv2d; 4]>,
    pub refine: [Conv2d; 2],
    pub head: Conv2d,
}

fn up2<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    let (h, w) = (g.shape(x)[2], g.shape(x)[3]);
    g.resize(x, 2 * h, 2 * w, ResizeMode::Bilinear)
}

impl Decoder {
    /// `channels` is the width of the trainable maps; `None` omits them.
    pub fn new<T: Scalar>(s: &mut ParamStore<T>, frozen_dim: usize, channels: Option<usize>, width: usize, frozen: bool) -> Self {
        let proj = channels.map(|c| [4, 8, 16, 32].map(|st| Conv2d::pointwise(s, &format!("decoder.proj{st}"), c, width, frozen)));
        Self {
            proj_frozen: Conv2d::pointwise(s, "decoder.proj_frozen", frozen_dim, width, frozen),
            proj,
            refine: [1, 2].map(|i| Conv2d::new(s, &format!("decoder.refine{i}"), width, width, 3, 1, 1, frozen)),
            head: Conv2d::pointwise(s, "decoder.head", width, 1, frozen),
        }
    }

    /// Logits `[B,1,out_h,out_w]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, inputs: &DecoderInputs, out: (usize, usize)) -> Result<Var> {
        let f16 = self.proj_frozen.forward(g, inputs.frozen)?;
        let x4 = match (&self.proj, &inputs.trainable) {
            (Some(p), Some(m)) => {
                let x32 = p[3].forward(g, m[3])?;
                let t16 = p[2].forward(g, m[2])?;
                let x16 = g.add(f16, t16)?;
                let u = up2(g, x32)?;
                let x16 = g.add(x16, u)?;
                let t8 = p[1].forward(g, m[1])?;
                let u = up2(g, x16)?;
                let x8 = g.add(t8, u)?;
                let t4 = p[0].forward(g, m[0])?;
                let u = up2(g, x8)?;
                g.add(t4, u)?
            }
            (None, None) => {
                let (h, w) = (g.shape(f16)[2], g.shape(f16)[3]);
                g.resize(f16, 4 * h, 4 * w, ResizeMode::Bilinear)?
            }
            _ => return Err(shape_err("decode", "trainable maps supplied to a decoder built without them, or vice versa")),
        };
        let mut x = x4;
        for r in &self.refine {
            let y = r.forward(g, x)?;
            x = g.gelu(y);
        }
        let logits = self.head.forward(g, x)?;
        g.resize(logits, out.0, out.1, ResizeMode::Bilinear)
    }
}
