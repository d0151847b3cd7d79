//! Trainable wavelet-expert branch: a stem, then four stages of seven
//! wavelet experts fused by a per-sample top-k router.

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, shape_err, Result};
use crate::nn::{Conv2d, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::wavelet::WaveletConv;

pub const NUM_EXPERTS: usize = 7;
pub const NUM_STAGES: usize = 4;
/// Channel groups in each expert's chain.
pub const CHAIN_GROUPS: usize = 4;

/// Kernel size of the expert at 0-based position `i`.
pub fn expert_kernel(i: usize) -> usize {
    2 * i + 1
}

/// Experts chosen for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingDecision {
    /// 0-based expert indices in descending score order.
    pub selected: Vec<usize>,
    /// Fusion weights aligned with `selected`; positive, summing to one.
    pub weights: Vec<f64>,
}

/// The `k` largest entries of `scores` (lowest index on ties), with weights
/// given by a softmax over the selected scores themselves.
pub fn select_topk(scores: &[f64], k: usize) -> RoutingDecision {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps lower indices first among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    let m = order.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = order.iter().map(|&i| (scores[i] - m).exp()).collect();
    let z: f64 = e.iter().sum();
    RoutingDecision {
        selected: order,
        weights: e.iter().map(|v| v / z).collect(),
    }
}

/// Softmax gate scores `[B,E]` from globally pooled features `[B,C,h,w]`.
pub fn gate_scores<T: Scalar>(g: &mut Graph<'_, T>, f: Var, w: Var, b: Var) -> Result<Var> {
    let s = g.shape(f).to_vec();
    let flat = g.reshape(f, &[s[0], s[1], s[2] * s[3]])?;
    let pooled = g.mean(flat, 2)?;
    let pooled = g.reshape(pooled, &[s[0], s[1]])?;
    let logits = g.matmul(pooled, w)?;
    let logits = g.add(logits, b)?;
    g.softmax(logits, 1)
}

/// `f + Σ α̃_u E_u` per sample, where `expert(g, u, b, f_b)` yields expert
/// `u` for sample `b` (`f_b` is that sample's `[1,C,h,w]` slice). Only the
/// selected experts are requested.
pub fn fuse_selected<T: Scalar>(
    g: &mut Graph<'_, T>,
    f: Var,
    scores: Var,
    k: usize,
    mut expert: impl FnMut(&mut Graph<'_, T>, usize, usize, Var) -> Result<Var>,
) -> Result<(Vec<RoutingDecision>, Var)> {
    let batch = g.shape(f)[0];
    let n = g.shape(scores)[1];
    if k == 0 || k > n {
        return Err(invalid("route_topk", format!("k = {k} outside 1..={n}")));
    }
    let mut decisions = Vec::with_capacity(batch);
    let mut outs = Vec::with_capacity(batch);
    for b in 0..batch {
        let row = g.slice(scores, 0, b, 1)?;
        let vals: Vec<f64> = g.value(row).to_f64_vec();
        let mut d = select_topk(&vals, k);
        let picked = d
            .selected
            .iter()
            .map(|&u| g.slice(row, 1, u, 1))
            .collect::<Result<Vec<_>>>()?;
        let picked = g.concat(&picked, 1)?;
        let wts = g.softmax(picked, 1)?;
        d.weights = g.value(wts).to_f64_vec();
        let fb = g.slice(f, 0, b, 1)?;
        let mut acc = fb;
        for (j, &u) in d.selected.iter().enumerate() {
            let e = expert(g, u, b, fb)?;
            let wj = g.slice(wts, 1, j, 1)?;
            let wj = g.reshape(wj, &[1, 1, 1, 1])?;
            let term = g.mul(e, wj)?;
            acc = g.add(acc, term)?;
        }
        decisions.push(d);
        outs.push(acc);
    }
    Ok((decisions, g.concat(&outs, 0)?))
}

/// One wavelet expert: a chain of a shared wavelet convolution over
/// [`CHAIN_GROUPS`] channel groups, a 1×1 mix, and a residual.
#[derive(Clone, Debug)]
pub struct Expert {
    pub wc: WaveletConv,
    pub mix: Conv2d,
}

impl Expert {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<Var> {
        let parts = g.split(f, 1, CHAIN_GROUPS)?;
        let mut chain: Vec<Var> = Vec::with_capacity(CHAIN_GROUPS);
        for p in parts {
            let input = match chain.last() {
                Some(&prev) => g.add(p, prev)?,
                None => p,
            };
            chain.push(self.wc.forward(g, input)?);
        }
        let cat = g.concat(&chain, 1)?;
        let mixed = self.mix.forward(g, cat)?;
        g.add(mixed, f)
    }
}

/// Seven experts plus their router and the fusing 1×1 convolution.
#[derive(Clone, Debug)]
pub struct ExpertBlock {
    pub experts: Vec<Expert>,
    pub gate: Linear,
    pub fuse: Conv2d,
    pub k: usize,
}

impl ExpertBlock {
    pub fn new<T: Scalar>(s: &mut ParamStore<T>, name: &str, channels: usize, k: usize, frozen: bool) -> Result<Self> {
        if channels % CHAIN_GROUPS != 0 {
            return Err(invalid("build_experts", format!("channels {channels} not divisible by {CHAIN_GROUPS}")));
        }
        if !(1..=NUM_EXPERTS).contains(&k) {
            return Err(invalid("route_topk", format!("k = {k} outside 1..={NUM_EXPERTS}")));
        }
        let experts = (0..NUM_EXPERTS)
            .map(|i| {
                let en = format!("{name}.expert{}", i + 1);
                Ok(Expert {
                    wc: WaveletConv::new(s, &en, channels / CHAIN_GROUPS, expert_kernel(i), frozen)?,
                    mix: Conv2d::pointwise(s, &format!("{en}.mix"), channels, channels, frozen),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            experts,
            gate: Linear::new(s, &format!("{name}.router.gate"), channels, NUM_EXPERTS, frozen),
            fuse: Conv2d::pointwise(s, &format!("{name}.router.fuse"), channels, channels, frozen),
            k,
        })
    }

    /// Every expert on the full batch.
    pub fn build_experts<T: Scalar>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<Vec<Var>> {
        self.experts.iter().map(|e| e.forward(g, f)).collect()
    }

    fn scores<T: Scalar>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<Var> {
        let w = g.param(self.gate.w);
        let b = g.param(self.gate.b.expect("gate has a bias"));
        gate_scores(g, f, w, b)
    }

    /// Routes over a precomputed bank of expert outputs.
    pub fn route_topk<T: Scalar>(&self, g: &mut Graph<'_, T>, f: Var, bank: &[Var]) -> Result<(Vec<RoutingDecision>, Var)> {
        let scores = self.scores(g, f)?;
        let (d, mixed) = fuse_selected(g, f, scores, self.k, |g, u, b, _| g.slice(bank[u], 0, b, 1))?;
        Ok((d, self.fuse.forward(g, mixed)?))
    }

    /// Routes first and evaluates only the selected experts of each sample.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<(Vec<RoutingDecision>, Var)> {
        let scores = self.scores(g, f)?;
        let (d, mixed) = fuse_selected(g, f, scores, self.k, |g, u, _, fb| self.experts[u].forward(g, fb))?;
        Ok((d, self.fuse.forward(g, mixed)?))
    }
}

/// Four-level feature pyramid at strides 4, 8, 16, 32 plus routing records.
pub struct Pyramid {
    pub levels: Vec<Var>,
    /// `routing[stage][sample]`.
    pub routing: Vec<Vec<RoutingDecision>>,
}

#[derive(Clone, Debug)]
pub struct WaveletExpertExtractor {
    pub stem: [Conv2d; 2],
    pub downs: Vec<Conv2d>,
    pub stages: Vec<ExpertBlock>,
    pub channels: usize,
}

impl WaveletExpertExtractor {
    pub fn new<T: Scalar>(s: &mut ParamStore<T>, channels: usize, k: usize, frozen: bool) -> Result<Self> {
        let stem = [
            Conv2d::new(s, "twe.stem.conv1", 3, channels, 3, 2, 1, frozen),
            Conv2d::new(s, "twe.stem.conv2", channels, channels, 3, 2, 1, frozen),
        ];
        let mut downs = Vec::new();
        let mut stages = Vec::new();
        for i in 1..=NUM_STAGES {
            if i > 1 {
                downs.push(Conv2d::new(s, &format!("twe.stage{i}.down"), channels, channels, 3, 2, 1, frozen));
            }
            stages.push(ExpertBlock::new(s, &format!("twe.stage{i}"), channels, k, frozen)?);
        }
        Ok(Self { stem, downs, stages, channels })
    }

    /// Two stride-2 convolutions with GELU between: `[B,3,H,W] -> [B,C,H/4,W/4]`.
    pub fn downsample<T: Scalar>(&self, g: &mut Graph<'_, T>, image: Var) -> Result<Var> {
        let s = g.shape(image).to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] % 32 != 0 || s[3] % 32 != 0 {
            return Err(shape_err("downsample", format!("expected [B,3,H,W] with H, W divisible by 32, got {s:?}")));
        }
        let h = self.stem[0].forward(g, image)?;
        let h = g.gelu(h);
        self.stem[1].forward(g, h)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, image: Var) -> Result<Pyramid> {
        let mut f = self.downsample(g, image)?;
        let mut levels = Vec::with_capacity(NUM_STAGES);
        let mut routing = Vec::with_capacity(NUM_STAGES);
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                f = self.downs[i - 1].forward(g, f)?;
            }
            let (d, out) = stage.forward(g, f)?;
            routing.push(d);
            levels.push(out);
            f = out;
        }
        Ok(Pyramid { levels, routing })
    }
}
