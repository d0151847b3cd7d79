//! Subspace token-to-token attention with a variance-driven edge mask, a
//! learned scalar gate, and a residual.

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, shape_err, Result};
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Offset inside the L2 norm's square root.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstoConfig {
    pub subspaces: usize,
    /// Similarity temperature; must be positive.
    pub rho: f64,
    /// Edge-mask intensity; must be non-negative.
    pub lambda: f64,
    pub eps: f64,
    /// Halves the gradient flowing into the attention output. Only used as a
    /// negative control for the gradient checker.
    pub corrupt_backward: bool,
}

impl Default for EstoConfig {
    fn default() -> Self {
        Self {
            subspaces: 4,
            rho: 1.0,
            lambda: 1.0,
            eps: 1e-6,
            corrupt_backward: false,
        }
    }
}

impl EstoConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.subspaces == 0 || channels % self.subspaces != 0 {
            return Err(invalid("esto", format!("{channels} channels not divisible into {} subspaces", self.subspaces)));
        }
        if !(self.rho > 0.0) {
            return Err(invalid("esto", format!("temperature must be positive, got {}", self.rho)));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid("esto", format!("mask intensity must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

pub struct EstoOutput {
    pub out: Var,
    /// Edge mask `[B,N,1]`.
    pub mask: Var,
    /// Gate `[B,1,1]`.
    pub gate: Var,
}

/// `x: [B,N,C]`; `gate_w: [C,1]`, `gate_b: [1]`.
pub fn esto<T: Scalar>(g: &mut Graph<'_, T>, x: Var, gate_w: Var, gate_b: Var, cfg: &EstoConfig) -> Result<EstoOutput> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 {
        return Err(shape_err("esto", format!("expected tokens [B,N,C], got {s:?}")));
    }
    let (b, n, c) = (s[0], s[1], s[2]);
    if n == 0 {
        return Err(invalid("esto", "no tokens"));
    }
    cfg.validate(c)?;
    let (h, d) = (cfg.subspaces, c / cfg.subspaces);

    let sq = g.mul(x, x)?;
    let ss = g.sum(sq, 2)?;
    let ss = g.add_scalar(ss, NORM_EPS);
    let norm = g.sqrt(ss);
    let f = g.div(x, norm)?;

    let heads = |g: &mut Graph<'_, T>, v: Var| -> Result<Var> {
        let r = g.reshape(v, &[b, n, h, d])?;
        g.permute(r, &[0, 2, 1, 3])
    };
    let fh = heads(g, f)?;
    let xh = heads(g, x)?;
    let fht = g.transpose(fh, 2, 3)?;
    let sim = g.matmul(fh, fht)?;
    let sim = g.mul_scalar(sim, 1.0 / ((d as f64).sqrt() * cfg.rho));
    let att = g.softmax(sim, 3)?;
    let th = g.matmul(att, xh)?;
    let th = g.permute(th, &[0, 2, 1, 3])?;
    let mut t = g.reshape(th, &[b, n, c])?;
    if cfg.corrupt_backward {
        t = g.grad_scale(t, 0.5);
    }

    let v = g.var(x, 2)?;
    let vm = g.mean(v, 1)?;
    let vv = g.var(v, 1)?;
    let vs = g.sqrt(vv);
    let denom = g.add_scalar(vs, cfg.eps);
    let centred = g.sub(v, vm)?;
    let z = g.div(centred, denom)?;
    let mask = g.sigmoid(z);
    let scale = g.mul_scalar(mask, cfg.lambda);
    let scale = g.add_scalar(scale, 1.0);
    let tt = g.mul(t, scale)?;

    let gm = g.mean(x, 1)?;
    let gl = g.matmul(gm, gate_w)?;
    let gl = g.add(gl, gate_b)?;
    let gate = g.sigmoid(gl);
    let gated = g.mul(tt, gate)?;
    let out = g.add(gated, x)?;
    Ok(EstoOutput { out, mask, gate })
}

#[derive(Clone, Debug)]
pub struct Esto {
    pub gate: Linear,
    pub cfg: EstoConfig,
}

impl Esto {
    pub fn new<T: Scalar>(s: &mut ParamStore<T>, name: &str, channels: usize, cfg: EstoConfig, frozen: bool) -> Result<Self> {
        cfg.validate(channels)?;
        Ok(Self {
            gate: Linear::new(s, &format!("{name}.gate"), channels, 1, frozen),
            cfg,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<EstoOutput> {
        let w = g.param(self.gate.w);
        let b = g.param(self.gate.b.expect("gate has a bias"));
        esto(g, x, w, b, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn run(x: &Tensor<f64>, w: &Tensor<f64>, b: f64, cfg: &EstoConfig) -> (Tensor<f64>, Tensor<f64>) {
        let mut g = Graph::<f64>::detached();
        let xv = g.constant(x.clone());
        let wv = g.constant(w.clone());
        let bv = g.constant(Tensor::from_f64(&[1], &[b]).unwrap());
        let o = esto(&mut g, xv, wv, bv, cfg).unwrap();
        (g.value(o.out).clone(), g.value(o.mask).clone())
    }

    #[test]
    fn single_token_with_neutral_gate_scales_by_one_and_a_half() {
        let x = Tensor::from_f64(&[1, 1, 4], &[0.3, -1.2, 2.0, 0.5]).unwrap();
        let cfg = EstoConfig { lambda: 0.0, ..Default::default() };
        let (y, _) = run(&x, &Tensor::zeros(&[4, 1]), 0.0, &cfg);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - 1.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_gate_without_mask_is_identity() {
        let x = Tensor::from_f64(&[1, 3, 4], &(0..12).map(|i| (i as f64).sin()).collect::<Vec<_>>()).unwrap();
        let cfg = EstoConfig { lambda: 0.0, ..Default::default() };
        // sigmoid(-800) underflows to exactly zero
        let (y, _) = run(&x, &Tensor::zeros(&[4, 1]), -800.0, &cfg);
        assert_eq!(y, x);
    }

    #[test]
    fn hand_instance_matches_transcription() {
        // two tokens, four channels, two subspaces; expected values from a
        // separate line-by-line evaluation of the algorithm in plain floats
        let x = Tensor::from_f64(&[1, 2, 4], &[1.0, 2.0, -1.0, 0.5, 0.0, -1.0, 3.0, 1.0]).unwrap();
        let w = Tensor::from_f64(&[4, 1], &[0.1, -0.2, 0.3, 0.05]).unwrap();
        let cfg = EstoConfig { subspaces: 2, rho: 1.0, lambda: 1.0, ..Default::default() };
        let (y, m) = run(&x, &w, 0.1, &cfg);
        let want = [
            1.5111095453075927, 2.7774444523106374, -0.5093947884683455, 1.033753266199045,
            0.45531565436023597, -0.665211045130693, 4.863630460500925, 1.8774275626947412,
        ];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let want_m = [0.2689418085436774, 0.7310581914563226];
        for (a, b) in m.data().iter().zip(want_m) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_indivisible_channels_and_bad_knobs() {
        let x = Tensor::<f64>::ones(&[1, 2, 6]);
        let mut g = Graph::<f64>::detached();
        let xv = g.constant(x);
        let w = g.constant(Tensor::zeros(&[6, 1]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(esto(&mut g, xv, w, b, &EstoConfig { subspaces: 4, ..Default::default() }).is_err());
        assert!(EstoConfig { rho: 0.0, ..Default::default() }.validate(8).is_err());
        assert!(EstoConfig { lambda: -1.0, ..Default::default() }.validate(8).is_err());
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = Rng::new(seed);
        let n = shape.iter().product();
        Tensor::from_f64(shape, &(0..n).map(|_| r.normal()).collect::<Vec<_>>()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn permutation_equivariance_and_mask_range(seed in any::<u64>(), n in 2usize..7, h in prop::sample::select(vec![1usize, 2, 4])) {
            let x = random(&[2, n, 8], seed);
            let w = random(&[8, 1], seed ^ 7);
            let cfg = EstoConfig { subspaces: h, ..Default::default() };
            let (y, m) = run(&x, &w, 0.2, &cfg);
            prop_assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));

            let mut r = Rng::new(seed ^ 99);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, r.below(i + 1));
            }
            let mut xp = x.clone();
            for b in 0..2 {
                for (i, &p) in perm.iter().enumerate() {
                    for c in 0..8 {
                        xp.set(&[b, i, c], x.at(&[b, p, c]));
                    }
                }
            }
            let (yp, _) = run(&xp, &w, 0.2, &cfg);
            for b in 0..2 {
                for (i, &p) in perm.iter().enumerate() {
                    for c in 0..8 {
                        prop_assert!((yp.at(&[b, i, c]) - y.at(&[b, p, c])).abs() <= 1e-6);
                    }
                }
            }
        }
    }
}
