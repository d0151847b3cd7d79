//! Command implementations behind the `weft` binary.
//!
//! Every command returns a [`weft::Result`]; [`exit_code`] maps failures to
//! the process exit status.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use weft::gradcheck::suite::{run_suite, FamilyResult, SuiteOptions};
use weft::model::{checkpoint, Model, ModelConfig, Regime};
use weft::train::{
    composite_loss, evaluate, train, Dataset, MetricAccumulator, Metrics, Splits, TrainConfig, TrainReport,
    F_MEASURE_CONVENTION,
};
use weft::{count_params, wten, Error, Graph, ParamStore, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.csv";
pub const CHECKPOINT_FILE: &str = "model.wten";
pub const FROZEN_INIT_FILE: &str = "frozen_init.wten";
pub const DATASET_FILE: &str = "dataset.wten";
pub const PREDICTIONS_FILE: &str = "predictions.wten";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } => EXIT_NUMERIC,
        Error::Invariant(_) => EXIT_VERIFICATION,
        _ => EXIT_CONFIG,
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub image_size: Option<usize>,
    pub k_experts: Option<usize>,
    pub subspaces: Option<usize>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub regime: Option<Regime>,
}

impl RunConfig {
    /// Reads `path` if given, otherwise starts from defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        let m = &mut self.model;
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.steps {
            self.train.steps = v;
        }
        if let Some(v) = o.image_size {
            m.image_size = v;
        }
        if let Some(v) = o.k_experts {
            m.k_experts = v;
        }
        if let Some(v) = o.subspaces {
            m.subspaces = v;
        }
        if let Some(v) = o.lambda {
            m.lambda = v;
        }
        if let Some(v) = o.rho {
            m.rho = v;
        }
        if let Some(v) = o.regime {
            m.regime = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

/// Paths and results of a finished training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub report_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub config_path: PathBuf,
    pub frozen_init_path: PathBuf,
}

/// Trains one model and writes the resolved config, the frozen-subset
/// initialization dump, the report CSV, and the final checkpoint into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path, verbose: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    create_dir(out)?;
    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_toml()?)?;

    let (model, mut store) = Model::new::<f32>(&cfg.model, cfg.seed)?;
    let frozen_init_path = out.join(FROZEN_INIT_FILE);
    wten::save(&frozen_init_path, &store.named_tensors(Some(true)))?;

    let data = Splits::synth(cfg.seed, &cfg.train, cfg.model.image_size)?;
    let report = train(&model, &mut store, &data, &cfg.train, |r| {
        if verbose {
            eprintln!(
                "step {:>5}  loss {:.4}  bce {:.4}  dice {:.4}  miou {:.4}  mdice {:.4}  mae {:.4}  f {:.4}",
                r.step, r.loss, r.bce, r.dice, r.miou, r.mdice, r.mae, r.f_measure
            );
        }
    })?;
    let report_path = out.join(REPORT_FILE);
    report.write_csv(&report_path)?;
    let checkpoint_path = out.join(CHECKPOINT_FILE);
    checkpoint::save(&checkpoint_path, &model, &store)?;
    Ok(TrainOutcome {
        report,
        report_path,
        checkpoint_path,
        config_path,
        frozen_init_path,
    })
}

/// WTEN bytes of the frozen parameters stored in a checkpoint, in checkpoint order.
pub fn checkpoint_frozen_bytes(path: &Path) -> Result<Vec<u8>> {
    let side = checkpoint::read_sidecar(path)?;
    let tensors = wten::load(path)?;
    let frozen: Vec<(&str, &weft::Tensor<f32>)> = tensors
        .iter()
        .zip(&side.params)
        .filter(|(_, e)| e.frozen)
        .map(|((n, t), _)| (n.as_str(), t))
        .collect();
    Ok(wten::to_bytes(&frozen))
}

/// Writes training split samples `start..start+count` of the stream keyed by `cfg.seed`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, start: u64, count: u64) -> Result<PathBuf> {
    cfg.model.validate()?;
    create_dir(out)?;
    let d = Dataset::<f32>::synth(cfg.seed, start..start + count, cfg.model.image_size)?;
    let path = out.join(DATASET_FILE);
    d.save(&path)?;
    Ok(path)
}

/// Evaluates a checkpoint on `dataset_dir/dataset.wten` and writes the
/// probability maps to `out/predictions.wten`.
pub fn cmd_eval(checkpoint_path: &Path, dataset_dir: &Path, out: &Path) -> Result<Metrics> {
    let (model, store) = checkpoint::load::<f32>(checkpoint_path)?;
    let data = Dataset::<f32>::load(&dataset_dir.join(DATASET_FILE))?;
    if data.size != model.cfg.image_size {
        return Err(Error::Config(format!(
            "dataset images are {0}x{0} but the checkpoint expects {1}x{1}",
            data.size, model.cfg.image_size
        )));
    }
    create_dir(out)?;
    let mut acc = MetricAccumulator::default();
    let mut probs = Vec::with_capacity(data.len());
    for b in data.batches(4) {
        let p = model.predict(&store, &b.images)?;
        acc.add(&p, &b.masks)?;
        let per = p.len() / p.shape()[0];
        for chunk in p.data().chunks(per) {
            probs.push(weft::Tensor::from_vec(&[1, data.size, data.size], chunk.to_vec())?);
        }
    }
    let names: Vec<String> = (0..probs.len()).map(|i| format!("{i:05}.prob")).collect();
    let entries: Vec<(&str, &weft::Tensor<f32>)> = names.iter().map(String::as_str).zip(&probs).collect();
    wten::save(out.join(PREDICTIONS_FILE), &entries)?;
    Ok(acc.mean())
}

pub fn metrics_table(m: &Metrics, samples: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {F_MEASURE_CONVENTION}");
    let _ = writeln!(s, "{:<10} {:>8}", "metric", "value");
    for (k, v) in [("miou", m.miou), ("mdice", m.mdice), ("mae", m.mae), ("f_measure", m.f_measure)] {
        let _ = writeln!(s, "{k:<10} {v:>8.4}");
    }
    let _ = writeln!(s, "{:<10} {samples:>8}", "samples");
    s
}

/// Runs the registered gradient checks; any failure is a verification error.
pub fn cmd_gradcheck(opts: &SuiteOptions) -> Result<Vec<FamilyResult>> {
    run_suite(opts)
}

pub fn gradcheck_table(results: &[FamilyResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:<5} {:>5} {:>12} {:>8} {:>6} {:>8}", "family", "prec", "seeds", "max_rel_err", "tol", "result", "ms");
    for r in results {
        let _ = writeln!(
            s,
            "{:<16} {:<5} {:>5} {:>12.3e} {:>8.0e} {:>6} {:>8}",
            r.family,
            r.precision.name(),
            r.seeds,
            r.max_rel_err,
            r.precision.tol(),
            if r.pass { "pass" } else { "FAIL" },
            r.elapsed.as_millis()
        );
    }
    s
}

pub fn gradcheck_verdict(results: &[FamilyResult]) -> Result<()> {
    let failed: Vec<String> = results.iter().filter(|r| !r.pass).map(|r| format!("{}/{}", r.family, r.precision.name())).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("gradient check failed for {}", failed.join(", "))))
    }
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub regime: Regime,
    pub trainable: u64,
    pub total: u64,
    pub step_ms: f64,
    /// Tape values of one training step plus parameters and optimizer moments.
    pub memory_bytes: usize,
    pub miou: f64,
}

/// Bytes held while training one batch: tape values, parameters, and two
/// `f64` moments per trainable scalar.
fn memory_estimate(model: &Model, store: &ParamStore<f32>, data: &Splits<f32>, cfg: &TrainConfig) -> Result<usize> {
    let idx: Vec<usize> = (0..cfg.batch_size.min(data.train.len())).collect();
    let b = data.train.batch(&idx);
    let mut g = Graph::new(store);
    let x = g.constant(b.images);
    let y = g.constant(b.masks);
    let out = model.forward(&mut g, x)?;
    let l = composite_loss(&mut g, out.logits, y, &cfg.loss)?;
    let grads = g.backward(l.total)?;
    let grad_bytes: usize = grads.params().map(|(_, t)| t.len() * 4).sum();
    let c = count_params(store);
    Ok(g.value_bytes() + grad_bytes + (c.frozen + c.trainable) as usize * 4 + c.trainable as usize * 16)
}

/// Trains the frozen-only, WEFT and full regimes on one backbone and split.
/// Trainable counts must order strictly frozen < WEFT < full.
pub fn cmd_bench(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let data = Splits::synth(cfg.seed, &cfg.train, cfg.model.image_size)?;
    let tc = TrainConfig {
        eval_every: cfg.train.steps,
        ..cfg.train.clone()
    };
    let mut rows = Vec::with_capacity(3);
    for regime in Regime::ALL {
        let mc = ModelConfig { regime, ..cfg.model.clone() };
        let (model, mut store) = Model::new::<f32>(&mc, cfg.seed)?;
        let c = count_params(&store);
        let memory_bytes = memory_estimate(&model, &store, &data, &tc)?;
        let start = Instant::now();
        let report = train(&model, &mut store, &data, &tc, |_| {})?;
        let elapsed = start.elapsed().as_secs_f64();
        let miou = evaluate(&model, &store, &data.eval, tc.batch_size)?.miou;
        rows.push(BenchRow {
            regime,
            trainable: c.trainable,
            total: c.frozen + c.trainable,
            step_ms: 1e3 * elapsed / report.losses.len() as f64,
            memory_bytes,
            miou,
        });
    }
    if !(rows[0].trainable < rows[1].trainable && rows[1].trainable < rows[2].trainable) {
        return Err(Error::Invariant(format!(
            "trainable counts out of order: frozen {} weft {} full {}",
            rows[0].trainable, rows[1].trainable, rows[2].trainable
        )));
    }
    Ok(rows)
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<7} {:>10} {:>10} {:>9} {:>9} {:>9} {:>7}",
        "regime", "trainable", "total", "fraction", "ms/step", "mem_MiB", "miou"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<7} {:>10} {:>10} {:>8.2}% {:>9.1} {:>9.1} {:>7.4}",
            r.regime.to_string(),
            r.trainable,
            r.total,
            100.0 * r.trainable as f64 / r.total as f64,
            r.step_ms,
            r.memory_bytes as f64 / (1024.0 * 1024.0),
            r.miou
        );
    }
    s
}
