//! End-to-end segmenter: frozen stream, trainable wavelet-expert branch,
//! per-stage adapters, and a convolutional decoder.

pub mod backbone;
pub mod checkpoint;
pub mod decoder;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::{assemble_tokens, AdapterConfig, AdapterStage, EstoConfig};
use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::tokens_to_map;
use crate::params::{count_params, ParamCounts, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::twe::{RoutingDecision, WaveletExpertExtractor, NUM_EXPERTS, NUM_STAGES};

pub use backbone::{FrozenBackbone, PATCH};
pub use decoder::{Decoder, DecoderInputs};

/// Which parameters receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Frozen stream plus a trainable decoder; no trainable branch.
    Frozen,
    /// Frozen stream, trainable branch, adapters, and decoder.
    Weft,
    /// The WEFT architecture with every parameter trainable.
    Full,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Frozen, Regime::Weft, Regime::Full];
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Frozen => "frozen",
            Regime::Weft => "weft",
            Regime::Full => "full",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(Regime::Frozen),
            "weft" => Ok(Regime::Weft),
            "full" => Ok(Regime::Full),
            _ => Err(Error::Config(format!("unknown regime `{s}` (expected frozen, weft or full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Width of the trainable branch.
    pub channels: usize,
    /// Token width of the frozen stream.
    pub frozen_dim: usize,
    pub frozen_heads: usize,
    pub frozen_hidden: usize,
    pub frozen_depth: usize,
    pub k_experts: usize,
    pub subspaces: usize,
    pub rho: f64,
    pub lambda: f64,
    /// Sampling points per scale in the injector.
    pub points: usize,
    pub decoder_width: usize,
    pub regime: Regime,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            channels: 32,
            frozen_dim: 128,
            frozen_heads: 4,
            frozen_hidden: 1024,
            frozen_depth: NUM_STAGES,
            k_experts: 4,
            subspaces: 4,
            rho: 1.0,
            lambda: 1.0,
            points: 4,
            decoder_width: 32,
            regime: Regime::Weft,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return fail(format!("image_size {} must be a positive multiple of 32", self.image_size));
        }
        if self.channels == 0 || self.channels % 4 != 0 {
            return fail(format!("channels {} must be a positive multiple of 4", self.channels));
        }
        if !(1..=NUM_EXPERTS).contains(&self.k_experts) {
            return fail(format!("k_experts {} outside 1..={NUM_EXPERTS}", self.k_experts));
        }
        if self.frozen_dim == 0 || self.subspaces == 0 || self.frozen_dim % self.subspaces != 0 {
            return fail(format!("frozen_dim {} not divisible by subspaces {}", self.frozen_dim, self.subspaces));
        }
        if self.frozen_heads == 0 || self.frozen_dim % self.frozen_heads != 0 {
            return fail(format!("frozen_dim {} not divisible by frozen_heads {}", self.frozen_dim, self.frozen_heads));
        }
        if self.frozen_depth != NUM_STAGES {
            return fail(format!("frozen_depth must equal the {NUM_STAGES} adapter stages, got {}", self.frozen_depth));
        }
        if self.frozen_hidden == 0 || self.points == 0 || self.decoder_width == 0 {
            return fail("frozen_hidden, points and decoder_width must be positive".into());
        }
        self.esto().validate(self.frozen_dim).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn esto(&self) -> EstoConfig {
        EstoConfig {
            subspaces: self.subspaces,
            rho: self.rho,
            lambda: self.lambda,
            ..EstoConfig::default()
        }
    }
}

/// Everything a forward pass exposes besides the logits.
pub struct ForwardOutput {
    pub logits: Var,
    /// `routing[stage][sample]`; empty in the frozen-only regime.
    pub routing: Vec<Vec<RoutingDecision>>,
    /// Per-stage SEE merge weights `[3]`.
    pub merge_weights: Vec<Var>,
    /// Per-stage ESTO edge masks `[B,N,1]`.
    pub edge_masks: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub seed: u64,
    pub backbone: FrozenBackbone,
    pub twe: Option<WaveletExpertExtractor>,
    pub stages: Vec<AdapterStage>,
    pub decoder: Decoder,
}

impl Model {
    /// Builds the model and its registry. Parameter values depend only on
    /// `seed` and each parameter's name, so every regime shares one frozen stream.
    pub fn new<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut s = ParamStore::new(seed);
        let frozen_stream = cfg.regime != Regime::Full;
        let backbone = FrozenBackbone::new(
            &mut s,
            cfg.image_size,
            cfg.frozen_dim,
            cfg.frozen_heads,
            cfg.frozen_hidden,
            cfg.frozen_depth,
            frozen_stream,
        );
        let (twe, stages) = if cfg.regime == Regime::Frozen {
            (None, Vec::new())
        } else {
            let twe = WaveletExpertExtractor::new(&mut s, cfg.channels, cfg.k_experts, false)?;
            let ac = AdapterConfig {
                frozen_dim: cfg.frozen_dim,
                channels: cfg.channels,
                points: cfg.points,
                esto: cfg.esto(),
            };
            let stages = (1..=NUM_STAGES)
                .map(|i| AdapterStage::new(&mut s, i, &ac, false))
                .collect::<Result<Vec<_>>>()?;
            (Some(twe), stages)
        };
        let branch = twe.as_ref().map(|_| cfg.channels);
        let decoder = Decoder::new(&mut s, cfg.frozen_dim, branch, cfg.decoder_width, false);
        let model = Self {
            cfg: cfg.clone(),
            seed,
            backbone,
            twe,
            stages,
            decoder,
        };
        Ok((model, s))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, image: Var) -> Result<ForwardOutput> {
        let s = g.shape(image).to_vec();
        let n = self.cfg.image_size;
        if s.len() != 4 || s[1] != 3 || s[2] != n || s[3] != n {
            return Err(shape_err("model_forward", format!("expected [B,3,{n},{n}], got {s:?}")));
        }
        let grid = self.backbone.grid;
        let mut f = self.backbone.embed(g, image)?;
        let mut out = ForwardOutput {
            logits: f,
            routing: Vec::new(),
            merge_weights: Vec::new(),
            edge_masks: Vec::new(),
        };
        let trainable = match &self.twe {
            Some(twe) => {
                let pyr = twe.forward(g, image)?;
                let mut bundle = assemble_tokens(g, [pyr.levels[1], pyr.levels[2], pyr.levels[3]], None)?;
                for (stage, block) in self.stages.iter().zip(&self.backbone.blocks) {
                    let o = stage.forward(g, f, grid, &bundle)?;
                    f = block.forward(g, o.frozen)?;
                    bundle = o.bundle;
                    out.merge_weights.push(o.merge_weights);
                    out.edge_masks.push(o.mask);
                }
                out.routing = pyr.routing;
                let m = bundle.maps(g)?;
                Some([pyr.levels[0], m[0], m[1], m[2]])
            }
            None => {
                for block in &self.backbone.blocks {
                    f = block.forward(g, f)?;
                }
                None
            }
        };
        let frozen = tokens_to_map(g, f, grid.0, grid.1)?;
        out.logits = self.decoder.forward(g, &DecoderInputs { frozen, trainable }, (n, n))?;
        Ok(out)
    }

    /// Foreground probabilities `[B,1,H,W]` without recording gradients.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(store).no_grad();
        let x = g.constant(images.clone());
        let o = self.forward(&mut g, x)?;
        let p = g.sigmoid(o.logits);
        Ok(g.value(p).clone())
    }

    pub fn counts<T: Scalar>(store: &ParamStore<T>) -> ParamCounts {
        count_params(store)
    }
}
