//! Training harness: loss, optimizer, metrics, synthetic data, and the loop
//! tying them to a [`Model`].

pub mod loss;
pub mod metrics;
pub mod optim;
pub mod synth;

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;

pub use loss::{composite_loss, LossConfig, LossParts};
pub use metrics::{metrics, sample_metrics, MetricAccumulator, Metrics, F_MEASURE_CONVENTION};
pub use optim::{AdamW, AdamWConfig};
pub use synth::{Dataset, SampleBatch};

/// Schedule and optimizer settings of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub train_count: usize,
    pub eval_count: usize,
    /// Held-out evaluation (and a report row) every this many steps and at the end.
    pub eval_every: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 4,
            train_count: 64,
            eval_count: 16,
            eval_every: 100,
            lr: 1e-3,
            weight_decay: 1e-2,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn optim(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 || self.train_count == 0 || self.eval_count == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size, train_count, eval_count and eval_every must be positive".into()));
        }
        self.loss.validate()?;
        self.optim().validate()
    }
}

/// Training and held-out samples drawn from one synthetic stream.
#[derive(Clone, Debug)]
pub struct Splits<T> {
    pub train: Dataset<T>,
    pub eval: Dataset<T>,
}

impl<T: Scalar> Splits<T> {
    /// Indices `0..train_count` train, the following `eval_count` are held out.
    pub fn synth(seed: u64, cfg: &TrainConfig, image_size: usize) -> Result<Self> {
        let (nt, ne) = (cfg.train_count as u64, cfg.eval_count as u64);
        Ok(Self {
            train: Dataset::synth(seed, 0..nt, image_size)?,
            eval: Dataset::synth(seed, nt..nt + ne, image_size)?,
        })
    }
}

/// One CSV row: mean training losses since the previous row, then held-out metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub step: usize,
    pub loss: f64,
    pub bce: f64,
    pub dice: f64,
    pub miou: f64,
    pub mdice: f64,
    pub mae: f64,
    pub f_measure: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Total loss of every step.
    pub losses: Vec<f64>,
    pub rows: Vec<ReportRow>,
    pub final_metrics: Metrics,
    /// Largest `|Σ w − 1|` over every stage's merge weights at every step.
    pub merge_sum_max_dev: f64,
    /// Largest parameter-gradient count seen in one step.
    pub max_grad_entries: usize,
    pub elapsed: Duration,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        r.deserialize().map(|row| row.map_err(csv_err)).collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Config(format!("report csv: {other:?}")),
    }
}

/// Held-out metrics of `model` over every sample of `data`.
pub fn evaluate<T: Scalar>(model: &Model, store: &ParamStore<T>, data: &Dataset<T>, batch_size: usize) -> Result<Metrics> {
    let mut acc = MetricAccumulator::default();
    for b in data.batches(batch_size) {
        let p = model.predict(store, &b.images)?;
        acc.add(&p, &b.masks)?;
    }
    Ok(acc.mean())
}

/// Sample order: a fresh permutation of the training split per epoch.
struct Order {
    rng: Rng,
    n: usize,
    epoch: usize,
    perm: Vec<usize>,
}

impl Order {
    fn new(seed: u64, n: usize) -> Self {
        let mut o = Self {
            rng: Rng::new(seed).split("order"),
            n,
            epoch: usize::MAX,
            perm: Vec::new(),
        };
        o.load(0);
        o
    }

    fn load(&mut self, epoch: usize) {
        let mut r = self.rng.split_index(epoch as u64);
        self.perm = (0..self.n).collect();
        for i in (1..self.n).rev() {
            self.perm.swap(i, r.below(i + 1));
        }
        self.epoch = epoch;
    }

    fn batch(&mut self, step: usize, size: usize) -> Vec<usize> {
        (0..size)
            .map(|j| {
                let pos = step * size + j;
                if pos / self.n != self.epoch {
                    self.load(pos / self.n);
                }
                self.perm[pos % self.n]
            })
            .collect()
    }
}

/// Runs `cfg.steps` optimizer steps on `data.train`, evaluating on
/// `data.eval`. `on_row` sees each report row as it is produced.
pub fn train<T: Scalar>(
    model: &Model,
    store: &mut ParamStore<T>,
    data: &Splits<T>,
    cfg: &TrainConfig,
    mut on_row: impl FnMut(&ReportRow),
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut opt = AdamW::new(cfg.optim(), store);
    let mut order = Order::new(model.seed, data.train.len());
    let mut report = TrainReport {
        losses: Vec::with_capacity(cfg.steps),
        rows: Vec::new(),
        final_metrics: Metrics::default(),
        merge_sum_max_dev: 0.0,
        max_grad_entries: 0,
        elapsed: Duration::ZERO,
    };
    let mut window = [0.0f64; 3];
    let mut window_len = 0usize;
    for step in 1..=cfg.steps {
        let batch = data.train.batch(&order.batch(step - 1, cfg.batch_size));
        let grads = {
            let mut g = Graph::new(&*store);
            let x = g.constant(batch.images);
            let y = g.constant(batch.masks);
            let out = model.forward(&mut g, x)?;
            let parts = composite_loss(&mut g, out.logits, y, &cfg.loss)?;
            let total = g.value(parts.total).item().to_f64c();
            if !total.is_finite() {
                return Err(g.non_finite_error());
            }
            for &w in &out.merge_weights {
                let dev = (g.value(w).sum_f64() - 1.0).abs();
                report.merge_sum_max_dev = report.merge_sum_max_dev.max(dev);
            }
            for (i, v) in [parts.total, parts.bce, parts.dice].into_iter().enumerate() {
                window[i] += g.value(v).item().to_f64c();
            }
            window_len += 1;
            report.losses.push(total);
            g.backward(parts.total)?
        };
        for (id, gr) in grads.params() {
            if store.get(id).frozen {
                return Err(Error::Invariant(format!("gradient entry for frozen parameter `{}`", store.get(id).name)));
            }
            if !gr.all_finite() {
                return Err(Error::NonFinite { op: "backward", node: 0 });
            }
        }
        report.max_grad_entries = report.max_grad_entries.max(grads.param_count());
        opt.step(store, &grads)?;

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let m = evaluate(model, store, &data.eval, cfg.batch_size)?;
            let k = window_len as f64;
            let row = ReportRow {
                step,
                loss: window[0] / k,
                bce: window[1] / k,
                dice: window[2] / k,
                miou: m.miou,
                mdice: m.mdice,
                mae: m.mae,
                f_measure: m.f_measure,
            };
            on_row(&row);
            report.rows.push(row);
            report.final_metrics = m;
            window = [0.0; 3];
            window_len = 0;
        }
    }
    report.elapsed = start.elapsed();
    Ok(report)
}
