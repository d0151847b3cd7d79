//! Multi-scale deformable cross-attention from frozen tokens (queries) into
//! the trainable bundle (values).

use crate::adapter::{TokenBundle, NUM_SCALES};
use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::nn::{LayerNorm, Linear};
use crate::params::{Init, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Normalized `(x, y)` cell centres of an `h × w` query grid, `[1, h·w, 1, 2]`.
pub fn reference_points<T: Scalar>(h: usize, w: usize) -> Tensor<T> {
    let mut d = Vec::with_capacity(h * w * 2);
    for i in 0..h {
        for j in 0..w {
            d.push((j as f64 + 0.5) / w as f64);
            d.push((i as f64 + 0.5) / h as f64);
        }
    }
    Tensor::from_f64(&[1, h * w, 1, 2], &d).expect("grid is non-empty")
}

#[derive(Clone, Debug)]
pub struct DeformInject {
    pub norm_query: LayerNorm,
    pub norm_value: LayerNorm,
    pub value: Linear,
    pub offsets: Linear,
    pub attention: Linear,
    pub output: Linear,
    pub points: usize,
}

impl DeformInject {
    /// `frozen_dim` is the query width, `channels` the bundle width.
    pub fn new<T: Scalar>(
        s: &mut ParamStore<T>,
        name: &str,
        frozen_dim: usize,
        channels: usize,
        points: usize,
        frozen: bool,
    ) -> Self {
        Self {
            norm_query: LayerNorm::new(s, &format!("{name}.norm_query"), frozen_dim, frozen),
            norm_value: LayerNorm::new(s, &format!("{name}.norm_value"), channels, frozen),
            value: Linear::new(s, &format!("{name}.value"), channels, channels, frozen),
            offsets: Linear::with_init(s, &format!("{name}.offsets"), frozen_dim, NUM_SCALES * points * 2, Init::Zeros, frozen),
            attention: Linear::new(s, &format!("{name}.attention"), frozen_dim, NUM_SCALES * points, frozen),
            output: Linear::new(s, &format!("{name}.output"), channels, frozen_dim, frozen),
            points,
        }
    }

    /// `frozen: [B, hq·wq, D]` on an `hq × wq` grid; returns `[B, hq·wq, D]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, frozen: Var, grid: (usize, usize), bundle: &TokenBundle) -> Result<Var> {
        let s = g.shape(frozen).to_vec();
        if s.len() != 3 || s[1] != grid.0 * grid.1 {
            return Err(shape_err("deform_inject", format!("queries {s:?} do not match a {}x{} grid", grid.0, grid.1)));
        }
        let (b, nq, p) = (s[0], s[1], self.points);
        let q = self.norm_query.forward(g, frozen)?;
        let v = self.norm_value.forward(g, bundle.tokens)?;
        let v = self.value.forward(g, v)?;
        let c = g.shape(v)[2];

        let off = self.offsets.forward(g, q)?;
        let off = g.reshape(off, &[b, nq, NUM_SCALES, p, 2])?;
        let logits = self.attention.forward(g, q)?;
        let att = g.softmax(logits, 2)?;
        let att = g.reshape(att, &[b, nq, NUM_SCALES * p, 1])?;
        let refs = g.constant(reference_points(grid.0, grid.1));

        let mut samples = Vec::with_capacity(NUM_SCALES);
        let mut start = 0;
        for (l, &(h, w)) in bundle.layout.iter().enumerate() {
            let vl = g.slice(v, 1, start, h * w)?;
            start += h * w;
            let vl = g.reshape(vl, &[b, h, w, c])?;
            let ol = g.slice(off, 2, l, 1)?;
            let ol = g.reshape(ol, &[b, nq, p, 2])?;
            let inv = g.constant(Tensor::from_f64(&[2], &[1.0 / w as f64, 1.0 / h as f64])?);
            let ol = g.mul(ol, inv)?;
            let pts = g.add(ol, refs)?;
            let pts = g.clamp(pts, 0.0, 1.0);
            samples.push(g.bilinear_sample(vl, pts)?);
        }
        let all = g.concat(&samples, 2)?;
        let weighted = g.mul(all, att)?;
        let pooled = g.sum(weighted, 2)?;
        let pooled = g.reshape(pooled, &[b, nq, c])?;
        self.output.forward(g, pooled)
    }
}
