//! The per-stage adapter: inject trainable features into the frozen tokens,
//! refine them, and enhance the trainable bundle for the next stage.

pub mod esto;
pub mod inject;
pub mod see;

pub use esto::{esto, Esto, EstoConfig, EstoOutput};
pub use inject::DeformInject;
pub use see::{global_max_branch, laplacian_branch, See};

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::nn::{map_to_tokens, tokens_to_map};
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Scales carried by a bundle (strides 8, 16, 32).
pub const NUM_SCALES: usize = 3;

/// Flattened multi-scale trainable tokens `[B, Σ h·w, C]`.
#[derive(Clone, Copy, Debug)]
pub struct TokenBundle {
    pub tokens: Var,
    /// `(h, w)` of each scale, finest first.
    pub layout: [(usize, usize); NUM_SCALES],
}

impl TokenBundle {
    pub fn len(&self) -> usize {
        self.layout.iter().map(|(h, w)| h * w).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Splits the tokens back into `[B,C,h,w]` maps.
    pub fn maps<T: Scalar>(&self, g: &mut Graph<'_, T>) -> Result<[Var; NUM_SCALES]> {
        let mut out = [self.tokens; NUM_SCALES];
        let mut start = 0;
        for (o, &(h, w)) in out.iter_mut().zip(&self.layout) {
            let t = g.slice(self.tokens, 1, start, h * w)?;
            *o = tokens_to_map(g, t, h, w)?;
            start += h * w;
        }
        Ok(out)
    }
}

/// Flattens three maps at successive halvings into one bundle, adding
/// `previous` when given.
pub fn assemble_tokens<T: Scalar>(
    g: &mut Graph<'_, T>,
    maps: [Var; NUM_SCALES],
    previous: Option<&TokenBundle>,
) -> Result<TokenBundle> {
    let shapes: Vec<Vec<usize>> = maps.iter().map(|&m| g.shape(m).to_vec()).collect();
    let ok = shapes.iter().all(|s| s.len() == 4 && s[..2] == shapes[0][..2])
        && shapes.windows(2).all(|p| p[0][2] == 2 * p[1][2] && p[0][3] == 2 * p[1][3]);
    if !ok {
        return Err(shape_err("assemble_tokens", format!("maps must halve in size scale to scale; got {shapes:?}")));
    }
    let layout = [0, 1, 2].map(|i| (shapes[i][2], shapes[i][3]));
    let parts = maps.iter().map(|&m| map_to_tokens(g, m)).collect::<Result<Vec<_>>>()?;
    let mut tokens = g.concat(&parts, 1)?;
    if let Some(p) = previous {
        if p.layout != layout {
            return Err(shape_err("assemble_tokens", format!("previous bundle layout {:?} differs from {layout:?}", p.layout)));
        }
        tokens = g.add(tokens, p.tokens)?;
    }
    Ok(TokenBundle { tokens, layout })
}

#[derive(Clone, Copy, Debug)]
pub struct AdapterConfig {
    pub frozen_dim: usize,
    pub channels: usize,
    pub points: usize,
    pub esto: EstoConfig,
}

#[derive(Clone, Debug)]
pub struct AdapterStage {
    pub inject: DeformInject,
    pub esto: Esto,
    pub see: See,
}

pub struct StageOutput {
    /// Refined frozen tokens, handed to the next frozen block.
    pub frozen: Var,
    pub bundle: TokenBundle,
    pub merge_weights: Var,
    pub mask: Var,
}

impl AdapterStage {
    /// Parameters are registered under `ec.stage{index}.{deform,esto,see}`.
    pub fn new<T: Scalar>(s: &mut ParamStore<T>, index: usize, cfg: &AdapterConfig, frozen: bool) -> Result<Self> {
        let p = format!("ec.stage{index}");
        Ok(Self {
            inject: DeformInject::new(s, &format!("{p}.deform"), cfg.frozen_dim, cfg.channels, cfg.points, frozen),
            esto: Esto::new(s, &format!("{p}.esto"), cfg.frozen_dim, cfg.esto, frozen)?,
            see: See::new(s, &format!("{p}.see"), cfg.channels, frozen),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, frozen: Var, grid: (usize, usize), bundle: &TokenBundle) -> Result<StageOutput> {
        let injected = self.inject.forward(g, frozen, grid, bundle)?;
        let refined = self.esto.forward(g, injected)?;
        let next = self.see.forward(g, bundle)?;
        let merge_weights = self.see.merge_weights(g)?;
        Ok(StageOutput {
            frozen: refined.out,
            bundle: next,
            merge_weights,
            mask: refined.mask,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn maps(g: &mut Graph<'_, f64>, b: usize, c: usize, top: usize, fill: f64) -> [Var; 3] {
        [top, top / 2, top / 4].map(|n| g.constant(Tensor::full(&[b, c, n, n], fill)))
    }

    #[test]
    fn bundle_length_matches_scale_sum() {
        let mut g = Graph::<f64>::detached();
        let m = maps(&mut g, 1, 2, 16, 1.0);
        let b = assemble_tokens(&mut g, m, None).unwrap();
        assert_eq!(b.len(), 256 + 64 + 16);
        assert_eq!(g.shape(b.tokens), &[1, 336, 2]);
    }

    #[test]
    fn zero_previous_is_additive_identity_and_maps_round_trip() {
        let mut g = Graph::<f64>::detached();
        let data: Vec<f64> = (0..2 * 3 * 64).map(|i| (i as f64).cos()).collect();
        let a = g.constant(Tensor::from_f64(&[2, 3, 8, 8], &data).unwrap());
        let b = g.constant(Tensor::full(&[2, 3, 4, 4], 0.5));
        let c = g.constant(Tensor::full(&[2, 3, 2, 2], -0.5));
        let plain = assemble_tokens(&mut g, [a, b, c], None).unwrap();
        let z = maps(&mut g, 2, 3, 8, 0.0);
        let zb = assemble_tokens(&mut g, z, None).unwrap();
        let with = assemble_tokens(&mut g, [a, b, c], Some(&zb)).unwrap();
        assert_eq!(g.value(plain.tokens), g.value(with.tokens));
        let back = plain.maps(&mut g).unwrap();
        assert_eq!(g.value(back[0]), g.value(a));
        let again = assemble_tokens(&mut g, back, None).unwrap();
        assert_eq!(g.value(again.tokens), g.value(plain.tokens));
    }

    #[test]
    fn scale_mismatch_is_an_error() {
        let mut g = Graph::<f64>::detached();
        let a = g.constant(Tensor::zeros(&[1, 2, 8, 8]));
        let b = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let c = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
        assert!(assemble_tokens(&mut g, [a, b, c], None).is_err());
    }

    #[test]
    fn stages_keep_frozen_stream_shape() {
        let cfg = AdapterConfig { frozen_dim: 8, channels: 4, points: 2, esto: EstoConfig::default() };
        let mut s = ParamStore::<f64>::new(2);
        let stages: Vec<_> = (1..=4).map(|i| AdapterStage::new(&mut s, i, &cfg, false).unwrap()).collect();
        assert!(s.by_name("ec.stage3.deform.offsets.weight").is_some());
        assert!(s.by_name("ec.stage4.esto.gate.weight").is_some());
        assert!(s.by_name("ec.stage2.see.merge").is_some());
        let mut g = Graph::new(&s);
        let m = maps(&mut g, 1, 4, 8, 0.3);
        let mut bundle = assemble_tokens(&mut g, m, None).unwrap();
        let mut f = g.constant(Tensor::full(&[1, 16, 8], 0.1));
        for st in &stages {
            let o = st.forward(&mut g, f, (4, 4), &bundle).unwrap();
            assert_eq!(g.shape(o.frozen), &[1, 16, 8]);
            f = o.frozen;
            bundle = o.bundle;
        }
    }
}
