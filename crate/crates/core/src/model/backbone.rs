//! Seeded random stand-in for a pretrained vision transformer: a stride-16
//! patch embedding and pre-norm transformer blocks.

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::nn::{map_to_tokens, Conv2d, LayerNorm, Linear};
use crate::params::{Init, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Side of a square patch; also the stride of the frozen stream.
pub const PATCH: usize = 16;

#[derive(Clone, Debug)]
pub struct Attention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
}

impl Attention {
    /// `x: [B,N,D]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (b, n, d) = match *g.shape(x) {
            [b, n, d] => (b, n, d),
            ref s => return Err(shape_err("attention", format!("expected [B,N,D], got {s:?}"))),
        };
        let dh = d / self.heads;
        let qkv = self.qkv.forward(g, x)?;
        let mut hv = Vec::with_capacity(3);
        for i in 0..3 {
            let part = g.slice(qkv, 2, i * d, d)?;
            let part = g.reshape(part, &[b, n, self.heads, dh])?;
            hv.push(g.permute(part, &[0, 2, 1, 3])?);
        }
        let kt = g.transpose(hv[1], 2, 3)?;
        let logits = g.matmul(hv[0], kt)?;
        let logits = g.mul_scalar(logits, 1.0 / (dh as f64).sqrt());
        let att = g.softmax(logits, 3)?;
        let o = g.matmul(att, hv[2])?;
        let o = g.permute(o, &[0, 2, 1, 3])?;
        let o = g.reshape(o, &[b, n, d])?;
        self.proj.forward(g, o)
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    pub fn new<T: Scalar>(s: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, hidden: usize, frozen: bool) -> Self {
        Self {
            norm1: LayerNorm::new(s, &format!("{name}.norm1"), dim, frozen),
            attn: Attention {
                qkv: Linear::new(s, &format!("{name}.attn.qkv"), dim, 3 * dim, frozen),
                proj: Linear::new(s, &format!("{name}.attn.proj"), dim, dim, frozen),
                heads,
            },
            norm2: LayerNorm::new(s, &format!("{name}.norm2"), dim, frozen),
            fc1: Linear::new(s, &format!("{name}.mlp.fc1"), dim, hidden, frozen),
            fc2: Linear::new(s, &format!("{name}.mlp.fc2"), hidden, dim, frozen),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let h = self.attn.forward(g, h)?;
        let x = g.add(x, h)?;
        let h = self.norm2.forward(g, x)?;
        let h = self.fc1.forward(g, h)?;
        let h = g.gelu(h);
        let h = self.fc2.forward(g, h)?;
        g.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct FrozenBackbone {
    pub patch_embed: Conv2d,
    pub pos_embed: ParamId,
    pub blocks: Vec<Block>,
    /// Token grid `(h, w)`.
    pub grid: (usize, usize),
}

impl FrozenBackbone {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        s: &mut ParamStore<T>,
        image_size: usize,
        dim: usize,
        heads: usize,
        hidden: usize,
        depth: usize,
        frozen: bool,
    ) -> Self {
        let mut patch_embed = Conv2d::new(s, "backbone.patch_embed", 3, dim, PATCH, PATCH, 1, frozen);
        patch_embed.pad = 0;
        let side = image_size / PATCH;
        let pos_embed = s.register("backbone.pos_embed", &[1, side * side, dim], Init::Weight, frozen);
        let blocks = (1..=depth)
            .map(|i| Block::new(s, &format!("backbone.block{i}"), dim, heads, hidden, frozen))
            .collect();
        Self {
            patch_embed,
            pos_embed,
            blocks,
            grid: (side, side),
        }
    }

    /// `[B,3,H,W] -> [B,N,D]` first frozen tokens.
    pub fn embed<T: Scalar>(&self, g: &mut Graph<'_, T>, image: Var) -> Result<Var> {
        let m = self.patch_embed.forward(g, image)?;
        let s = g.shape(m).to_vec();
        if (s[2], s[3]) != self.grid {
            return Err(shape_err("patch_embed", format!("image gives a {}x{} grid, expected {:?}", s[2], s[3], self.grid)));
        }
        let t = map_to_tokens(g, m)?;
        let p = g.param(self.pos_embed);
        g.add(t, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn embedding_grid_and_block_shapes() {
        let mut s = ParamStore::<f64>::new(3);
        let bb = FrozenBackbone::new(&mut s, 64, 16, 4, 32, 2, true);
        assert_eq!(bb.grid, (4, 4));
        assert_eq!(s.by_name("backbone.patch_embed.weight").unwrap().tensor.shape(), &[16, 3, 16, 16]);
        let mut g = Graph::new(&s);
        let img = g.constant(Tensor::full(&[2, 3, 64, 64], 0.5));
        let mut t = bb.embed(&mut g, img).unwrap();
        assert_eq!(g.shape(t), &[2, 16, 16]);
        for b in &bb.blocks {
            t = b.forward(&mut g, t).unwrap();
        }
        assert_eq!(g.shape(t), &[2, 16, 16]);
        assert!(!g.requires_grad(t));
    }

    #[test]
    fn attention_is_token_permutation_equivariant() {
        let mut s = ParamStore::<f64>::new(5);
        let blk = Block::new(&mut s, "b", 8, 2, 16, false);
        let data: Vec<f64> = (0..40).map(|i| ((i * 7) as f64).sin()).collect();
        let x = Tensor::from_f64(&[1, 5, 8], &data).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let mut xp = x.clone();
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..8 {
                xp.set(&[0, i, c], x.at(&[0, p, c]));
            }
        }
        let run = |x: Tensor<f64>| {
            let mut g = Graph::new(&s);
            let v = g.constant(x);
            let y = blk.forward(&mut g, v).unwrap();
            g.value(y).clone()
        };
        let (y, yp) = (run(x), run(xp));
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!((yp.at(&[0, i, c]) - y.at(&[0, p, c])).abs() < 1e-12);
            }
        }
    }
}
