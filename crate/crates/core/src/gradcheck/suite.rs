//! Registered gradient checks covering every trainable op family.
//!
//! Module parameters enter each check as ordinary inputs (bound to the
//! module's ids), drawn fresh per seed so no zero-initialized weight hides a
//! term. Outputs are reduced to a scalar with a seeded random projection.

use std::time::{Duration, Instant};

use super::{finite_difference_check, CheckOptions, CheckReport, Differentiable};
use crate::adapter::{assemble_tokens, laplacian_branch, global_max_branch, DeformInject, Esto, EstoConfig, See};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::model::backbone::Block;
use crate::model::{Decoder, DecoderInputs};
use crate::nn::Conv2d;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{composite_loss, LossConfig};
use crate::twe::ExpertBlock;
use crate::wavelet::wavelet_conv;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn tol(self) -> f64 {
        match self {
            Precision::F32 => 1e-3,
            Precision::F64 => 1e-6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub seeds: u64,
    pub first_seed: u64,
    /// Negative control: run ESTO with a deliberately wrong backward.
    pub corrupt_esto: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seeds: 20,
            first_seed: 0,
            corrupt_esto: false,
        }
    }
}

/// Worst result of one family at one precision across all seeds.
#[derive(Clone, Debug)]
pub struct FamilyResult {
    pub family: &'static str,
    pub precision: Precision,
    pub seeds: u64,
    pub max_rel_err: f64,
    pub worst_seed: u64,
    pub pass: bool,
    pub elapsed: Duration,
}

trait Body {
    /// Output of the op under test from the data inputs.
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, data: &[Var]) -> Result<Var>;
}

struct Case<B> {
    body: B,
    ids: Vec<ParamId>,
    n_data: usize,
    seed: u64,
}

impl<B: Body> Differentiable for Case<B> {
    fn eval<T: Scalar>(&self, g: &mut Graph<'_, T>, inputs: &[Var]) -> Result<Var> {
        for (&id, &v) in self.ids.iter().zip(&inputs[self.n_data..]) {
            g.bind(id, v);
        }
        let out = self.body.run(g, &inputs[..self.n_data])?;
        let n = g.value(out).len();
        let mut r = Rng::new(self.seed).split("projection");
        let w: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let w = g.constant(Tensor::from_f64(g.shape(out), &w)?);
        let y = g.mul(out, w)?;
        Ok(g.sum_all(y))
    }
}

fn normal(r: &mut Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| scale * r.normal()).collect::<Vec<_>>()).expect("shape and data agree")
}

/// Builds the case for `body` whose parameters live in `store`, draws data
/// of the given shapes and fresh parameter values, and runs the check.
fn check<B: Body>(body: B, store: &ParamStore<f64>, data: &[&[usize]], seed: u64, p: Precision) -> Result<CheckReport> {
    let mut r = Rng::new(seed).split("inputs");
    let mut inputs: Vec<Tensor<f64>> = data.iter().map(|s| normal(&mut r, s, 1.0)).collect();
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for (_, prm) in store.iter() {
        inputs.push(normal(&mut r, prm.tensor.shape(), 0.5));
    }
    let case = Case {
        body,
        ids,
        n_data: data.len(),
        seed,
    };
    let opts = CheckOptions {
        eps: 1e-5,
        tol: p.tol(),
        max_elems: 48,
        ..CheckOptions::default()
    };
    match p {
        Precision::F32 => finite_difference_check::<f32, _>(&case, &inputs, opts),
        Precision::F64 => finite_difference_check::<f64, _>(&case, &inputs, opts),
    }
}

struct WaveletConvBody;
impl Body for WaveletConvBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        wavelet_conv(g, d[0], [d[1], d[2], d[3], d[4]])
    }
}

struct RouterBody(ExpertBlock);
impl Body for RouterBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        Ok(self.0.forward(g, d[0])?.1)
    }
}

struct InjectBody(DeformInject);
impl Body for InjectBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        let bundle = assemble_tokens(g, [d[1], d[2], d[3]], None)?;
        self.0.forward(g, d[0], (2, 2), &bundle)
    }
}

struct EstoBody(Esto);
impl Body for EstoBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        Ok(self.0.forward(g, d[0])?.out)
    }
}

struct LaplacianBody;
impl Body for LaplacianBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        laplacian_branch(g, d[0])
    }
}

struct MaxBody;
impl Body for MaxBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        global_max_branch(g, d[0])
    }
}

struct MultiscaleBody(See);
impl Body for MultiscaleBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        self.0.multiscale_branch(g, d[0])
    }
}

struct EnhanceBody(See);
impl Body for EnhanceBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        let bundle = assemble_tokens(g, [d[0], d[1], d[2]], None)?;
        Ok(self.0.forward(g, &bundle)?.tokens)
    }
}

struct DecoderBody(Decoder);
impl Body for DecoderBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        let inputs = DecoderInputs {
            frozen: d[0],
            trainable: Some([d[1], d[2], d[3], d[4]]),
        };
        self.0.forward(g, &inputs, (32, 32))
    }
}

struct LossBody(Tensor<f64>);
impl Body for LossBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        let y = g.constant(self.0.cast());
        let z = g.mul_scalar(d[0], 2.0);
        Ok(composite_loss(g, z, y, &LossConfig::default())?.total)
    }
}

struct BlockBody(Block);
impl Body for BlockBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        self.0.forward(g, d[0])
    }
}

struct ConvBody(Conv2d);
impl Body for ConvBody {
    fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, d: &[Var]) -> Result<Var> {
        let y = self.0.forward(g, d[0])?;
        Ok(g.gelu(y))
    }
}

/// Registered family names, in report order.
pub const FAMILIES: [&str; 12] = [
    "wavelet_conv",
    "router_fusion",
    "deform_inject",
    "esto",
    "see.laplacian",
    "see.global_max",
    "see.multiscale",
    "see.merge",
    "decoder",
    "loss",
    "backbone.block",
    "conv2d",
];

/// Runs one family at one seed.
pub fn check_family(family: &str, seed: u64, p: Precision, opts: &SuiteOptions) -> Result<CheckReport> {
    let mut s = ParamStore::<f64>::new(seed);
    match family {
        "wavelet_conv" => check(WaveletConvBody, &s, &[&[1, 2, 5, 6], &[2, 1, 3, 3], &[2, 1, 3, 3], &[2, 1, 3, 3], &[2, 1, 3, 3]], seed, p),
        "router_fusion" => {
            let b = ExpertBlock::new(&mut s, "r", 4, 2, false)?;
            check(RouterBody(b), &s, &[&[2, 4, 4, 4]], seed, p)
        }
        "deform_inject" => {
            let m = DeformInject::new(&mut s, "d", 8, 4, 2, false);
            check(InjectBody(m), &s, &[&[1, 4, 8], &[1, 4, 4, 4], &[1, 4, 2, 2], &[1, 4, 1, 1]], seed, p)
        }
        "esto" => {
            let cfg = EstoConfig {
                subspaces: 2,
                corrupt_backward: opts.corrupt_esto,
                ..EstoConfig::default()
            };
            let m = Esto::new(&mut s, "e", 8, cfg, false)?;
            check(EstoBody(m), &s, &[&[2, 5, 8]], seed, p)
        }
        "see.laplacian" => check(LaplacianBody, &s, &[&[1, 3, 5, 5]], seed, p),
        "see.global_max" => check(MaxBody, &s, &[&[2, 3, 4, 4]], seed, p),
        "see.multiscale" => {
            let m = See::new(&mut s, "s", 3, false);
            check(MultiscaleBody(m), &s, &[&[1, 3, 6, 6]], seed, p)
        }
        "see.merge" => {
            let m = See::new(&mut s, "s", 2, false);
            check(EnhanceBody(m), &s, &[&[1, 2, 4, 4], &[1, 2, 2, 2], &[1, 2, 1, 1]], seed, p)
        }
        "decoder" => {
            let m = Decoder::new(&mut s, 6, Some(3), 4, false);
            check(DecoderBody(m), &s, &[&[1, 6, 2, 2], &[1, 3, 8, 8], &[1, 3, 4, 4], &[1, 3, 2, 2], &[1, 3, 1, 1]], seed, p)
        }
        "loss" => {
            let mut r = Rng::new(seed).split("mask");
            let y: Vec<f64> = (0..16).map(|_| (r.uniform() < 0.4) as u8 as f64).collect();
            check(LossBody(Tensor::from_f64(&[1, 1, 4, 4], &y)?), &s, &[&[1, 1, 4, 4]], seed, p)
        }
        "backbone.block" => {
            let m = Block::new(&mut s, "b", 8, 2, 16, false);
            check(BlockBody(m), &s, &[&[1, 5, 8]], seed, p)
        }
        "conv2d" => {
            let m = Conv2d::new(&mut s, "c", 3, 4, 3, 2, 1, false);
            check(ConvBody(m), &s, &[&[1, 3, 7, 7]], seed, p)
        }
        other => Err(crate::error::invalid("gradcheck", format!("unknown family `{other}`"))),
    }
}

/// Every family at both precisions over `opts.seeds` seeds.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<FamilyResult>> {
    let mut out = Vec::with_capacity(2 * FAMILIES.len());
    for family in FAMILIES {
        for p in [Precision::F32, Precision::F64] {
            let start = Instant::now();
            let mut res = FamilyResult {
                family,
                precision: p,
                seeds: opts.seeds,
                max_rel_err: 0.0,
                worst_seed: opts.first_seed,
                pass: true,
                elapsed: Duration::ZERO,
            };
            for seed in opts.first_seed..opts.first_seed + opts.seeds {
                let r = check_family(family, seed, p, opts)?;
                if r.max_rel_err > res.max_rel_err || !r.pass {
                    res.max_rel_err = res.max_rel_err.max(r.max_rel_err);
                    res.worst_seed = seed;
                }
                res.pass &= r.pass;
            }
            res.elapsed = start.elapsed();
            out.push(res);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_family_passes_at_both_precisions() {
        let res = run_suite(&SuiteOptions { seeds: 3, ..Default::default() }).unwrap();
        assert_eq!(res.len(), 2 * FAMILIES.len());
        for r in &res {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn corrupted_esto_backward_is_caught() {
        let opts = SuiteOptions { corrupt_esto: true, ..Default::default() };
        for p in [Precision::F32, Precision::F64] {
            assert!(!check_family("esto", 0, p, &opts).unwrap().pass);
        }
        let r = check_family("esto", 0, Precision::F64, &SuiteOptions::default()).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(check_family("nope", 0, Precision::F64, &SuiteOptions::default()).is_err());
    }
}
