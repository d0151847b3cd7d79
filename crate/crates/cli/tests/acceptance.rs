//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.
//!
//! The long training criteria share runs: the default-config WEFT runs serve
//! the learning-signal check, the k=4 side of the ablation, and the merge
//! weight invariant.

use std::path::PathBuf;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use weft::adapter::esto::{esto, EstoConfig};
use weft::adapter::laplacian_branch;
use weft::gradcheck::suite::{run_suite, SuiteOptions, FAMILIES};
use weft::model::{checkpoint, Model, ModelConfig, Regime};
use weft::rng::Rng;
use weft::train::{composite_loss, train, LossConfig, Splits, TrainConfig, TrainReport};
use weft::twe::{fuse_selected, gate_scores, NUM_EXPERTS};
use weft::wavelet::{haar_dwt2, haar_idwt2};
use weft::{Graph, Scalar, Tensor};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn normal_tensor<T: Scalar>(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| std * rng.normal()).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

fn scratch_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("weft-accept-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn weft_bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_weft"));
    c.env("WEFT_THREADS", "1");
    c
}

fn wavelet_round_trip<T: Scalar>() -> (f64, f64) {
    let (mut max_err, mut max_energy) = (0.0f64, 0.0f64);
    for s in 0..100 {
        let mut rng = Rng::new(s).split("wavelet");
        let x: Tensor<T> = normal_tensor(&mut rng, &[2, 8, 16, 16], 1.0);
        let bands = haar_dwt2(&x).unwrap();
        let back = haar_idwt2(&bands).unwrap();
        max_err = max_err.max(back.max_abs_diff(&x));
        let e = x.sq_norm_f64();
        max_energy = max_energy.max((bands.energy() - e).abs() / e);
    }
    (max_err, max_energy)
}

fn c1_wavelet() -> Verdict {
    let t = Instant::now();
    let (e32, n32) = wavelet_round_trip::<f32>();
    let (e64, n64) = wavelet_round_trip::<f64>();
    let el = t.elapsed();
    verdict(
        e32.max(e64) <= 1e-6 && n32.max(n64) <= 1e-5 && el < Duration::from_secs(5),
        format!("max|err| f32 {e32:.1e} f64 {e64:.1e}, energy rel f32 {n32:.1e} f64 {n64:.1e}, {:.2}s", el.as_secs_f64()),
    )
}

fn c2_gradcheck() -> Verdict {
    let t = Instant::now();
    let res = run_suite(&SuiteOptions { seeds: 20, ..SuiteOptions::default() }).unwrap();
    let el = t.elapsed();
    let families = res.iter().map(|r| r.family).collect::<std::collections::BTreeSet<_>>().len();
    let failed: Vec<String> = res.iter().filter(|r| !r.pass).map(|r| format!("{}/{}", r.family, r.precision.name())).collect();
    let tol_ok = res.iter().all(|r| r.precision.tol() <= if r.precision.name() == "f32" { 1e-3 } else { 1e-6 });
    let seeds_ok = res.iter().all(|r| r.seeds == 20);
    let worst = res.iter().map(|r| r.max_rel_err / r.precision.tol()).fold(0.0, f64::max);

    let neg = weft_bin().args(["gradcheck", "--seeds", "2", "--corrupt-esto"]).output().unwrap();
    let caught = neg.status.code() == Some(weft_cli::EXIT_VERIFICATION);
    verdict(
        failed.is_empty() && families >= 8 && families == FAMILIES.len() && tol_ok && seeds_ok && caught && el < Duration::from_secs(120),
        format!(
            "{families} families x 2 precisions x 20 seeds, worst err/tol {worst:.2}, failures {failed:?}, corrupted ESTO exit {:?}, {:.1}s",
            neg.status.code(),
            el.as_secs_f64()
        ),
    )
}

fn route(f: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, k: usize) -> Vec<weft::twe::RoutingDecision> {
    let mut g = Graph::<f64>::detached();
    let (f, w, b) = (g.constant(f.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let s = gate_scores(&mut g, f, w, b).unwrap();
    let (d, _) = fuse_selected(&mut g, f, s, k, |_, _, _, fb| Ok(fb)).unwrap();
    d
}

fn c3_router() -> Verdict {
    let (mut sum_dev, mut shift_dev) = (0.0f64, 0.0f64);
    let mut sets_stable = true;
    let c = 8;
    for s in 0..1000u64 {
        let mut rng = Rng::new(s).split("router");
        let f = normal_tensor(&mut rng, &[1, c, 4, 4], 1.0);
        let w = normal_tensor(&mut rng, &[c, NUM_EXPERTS], 2.0);
        let b = normal_tensor(&mut rng, &[NUM_EXPERTS], 2.0);
        let k = [1, 2, 4, 6, 7][s as usize % 5];
        let d = route(&f, &w, &b, k);
        sum_dev = sum_dev.max((d[0].weights.iter().sum::<f64>() - 1.0).abs());
        let offset = rng.range(-20.0, 20.0);
        let shifted = b.map(|v| v + offset);
        let d2 = route(&f, &w, &shifted, k);
        sets_stable &= d2[0].selected == d[0].selected;
        for (a, b) in d[0].weights.iter().zip(&d2[0].weights) {
            shift_dev = shift_dev.max((a - b).abs());
        }
    }
    let f = normal_tensor(&mut Rng::new(7), &[2, c, 4, 4], 1.0);
    let uni = route(&f, &Tensor::zeros(&[c, NUM_EXPERTS]), &Tensor::full(&[NUM_EXPERTS], 0.3), 4);
    let uniform_ok = uni.iter().all(|d| d.selected == vec![0, 1, 2, 3] && d.weights.iter().all(|&w| w == 0.25));
    verdict(
        sum_dev <= 1e-6 && shift_dev <= 1e-6 && sets_stable && uniform_ok,
        format!(
            "1000 states: |sum-1| {sum_dev:.1e}, shift dev {shift_dev:.1e}, sets stable {sets_stable}; uniform -> {:?} {:?}",
            uni[0].selected, uni[0].weights
        ),
    )
}

/// Token optimizer transcribed loop by loop for one sample; `x[n][c]`.
fn esto_reference(x: &[Vec<f64>], heads: usize, rho: f64, lambda: f64, eps: f64, gw: &[f64], gb: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (n, c) = (x.len(), x[0].len());
    let d = c / heads;
    let normed: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            let norm = (row.iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt();
            row.iter().map(|v| v / norm).collect()
        })
        .collect();
    let mut t = vec![vec![0.0; c]; n];
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        for i in 0..n {
            let sims: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|q| normed[i][q] * normed[j][q]).sum::<f64>() / ((d as f64).sqrt() * rho))
                .collect();
            let m = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = sims.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for q in cols.clone() {
                t[i][q] = (0..n).map(|j| e[j] / z * x[j][q]).sum();
            }
        }
    }
    let var: Vec<f64> = x
        .iter()
        .map(|row| {
            let mu = row.iter().sum::<f64>() / c as f64;
            row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64
        })
        .collect();
    let vbar = var.iter().sum::<f64>() / n as f64;
    let vstd = (var.iter().map(|v| (v - vbar) * (v - vbar)).sum::<f64>() / n as f64).sqrt();
    let mask: Vec<f64> = var.iter().map(|v| 1.0 / (1.0 + (-(v - vbar) / (vstd + eps)).exp())).collect();
    let gate_in: f64 = (0..c).map(|q| (0..n).map(|j| x[j][q]).sum::<f64>() / n as f64 * gw[q]).sum::<f64>() + gb;
    let gate = 1.0 / (1.0 + (-gate_in).exp());
    let out = (0..n)
        .map(|i| (0..c).map(|q| gate * (1.0 + lambda * mask[i]) * t[i][q] + x[i][q]).collect())
        .collect();
    (out, mask)
}

fn run_esto(x: &Tensor<f64>, gw: &Tensor<f64>, gb: &Tensor<f64>, cfg: &EstoConfig) -> (Tensor<f64>, Tensor<f64>) {
    let mut g = Graph::<f64>::detached();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(gw.clone()), g.constant(gb.clone()));
    let o = esto(&mut g, xv, wv, bv, cfg).unwrap();
    (g.value(o.out).clone(), g.value(o.mask).clone())
}

fn c4_esto() -> Verdict {
    let (mut oracle_dev, mut perm_dev) = (0.0f64, 0.0f64);
    let (mut mask_lo, mut mask_hi) = (1.0f64, 0.0f64);
    for s in 0..50u64 {
        let mut rng = Rng::new(s).split("esto");
        let n = 1 + rng.below(6);
        let (c, heads) = [(2, 2), (4, 2), (4, 4), (6, 2), (6, 3), (8, 2), (8, 4), (8, 8)][rng.below(8)];
        let cfg = EstoConfig {
            subspaces: heads,
            rho: rng.range(0.25, 4.0),
            lambda: rng.range(0.0, 2.0),
            ..EstoConfig::default()
        };
        let x: Tensor<f64> = normal_tensor(&mut rng, &[1, n, c], 1.5);
        let gw: Tensor<f64> = normal_tensor(&mut rng, &[c, 1], 1.0);
        let gb: Tensor<f64> = normal_tensor(&mut rng, &[1], 1.0);
        let (out, mask) = run_esto(&x, &gw, &gb, &cfg);

        let rows: Vec<Vec<f64>> = x.to_f64_vec().chunks(c).map(<[f64]>::to_vec).collect();
        let (want, want_mask) = esto_reference(&rows, heads, cfg.rho, cfg.lambda, cfg.eps, &gw.to_f64_vec(), gb.to_f64_vec()[0]);
        for (a, b) in out.to_f64_vec().iter().zip(want.iter().flatten()) {
            oracle_dev = oracle_dev.max((a - b).abs());
        }
        for (a, b) in mask.to_f64_vec().iter().zip(&want_mask) {
            oracle_dev = oracle_dev.max((a - b).abs());
        }
        for m in mask.to_f64_vec() {
            mask_lo = mask_lo.min(m);
            mask_hi = mask_hi.max(m);
        }

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let px: Vec<f64> = perm.iter().flat_map(|&j| rows[j].clone()).collect();
        let (pout, _) = run_esto(&Tensor::from_f64(&[1, n, c], &px).unwrap(), &gw, &gb, &cfg);
        let outv = out.to_f64_vec();
        for (i, &j) in perm.iter().enumerate() {
            for q in 0..c {
                perm_dev = perm_dev.max((pout.to_f64_vec()[i * c + q] - outv[j * c + q]).abs());
            }
        }
    }
    verdict(
        oracle_dev <= 1e-5 && perm_dev <= 1e-6 && mask_lo > 0.0 && mask_hi < 1.0,
        format!("50 instances: oracle dev {oracle_dev:.1e}, permutation dev {perm_dev:.1e}, mask in [{mask_lo:.3}, {mask_hi:.3}]"),
    )
}

fn laplacian_of_constants() -> f64 {
    let mut worst = 0.0f64;
    for s in 0..20u64 {
        let mut rng = Rng::new(s).split("laplacian");
        let (c, h, w) = (1 + rng.below(4), 1 + rng.below(9), 1 + rng.below(9));
        let v = rng.range(-100.0, 100.0) as f32;
        let mut g = Graph::<f32>::detached();
        let x = g.constant(Tensor::full(&[2, c, h, w], v));
        let y = laplacian_branch(&mut g, x).unwrap();
        worst = worst.max(g.value(y).data().iter().map(|v| v.abs() as f64).fold(0.0, f64::max));
    }
    worst
}

fn c5_see(weft_runs: &[TrainReport]) -> Verdict {
    let lap = laplacian_of_constants();
    let steps = weft_runs.iter().map(|r| r.losses.len()).min().unwrap_or(0);
    let dev = weft_runs.iter().map(|r| r.merge_sum_max_dev).fold(0.0, f64::max);
    verdict(
        lap == 0.0 && steps >= 500 && dev <= 1e-7,
        format!("laplacian of constants max |y| {lap:e}; merge |sum-1| {dev:.1e} over {} runs of {steps} steps", weft_runs.len()),
    )
}

fn c6_frozen(trainable_grad_bound: bool) -> Verdict {
    let dir = scratch_dir("frozen");
    let st = weft_bin()
        .args(["train", "--steps", "30", "--seed", "3", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    let ok_exit = st.status.success();
    let same = ok_exit
        && weft_cli::checkpoint_frozen_bytes(&dir.join(weft_cli::CHECKPOINT_FILE)).unwrap()
            == std::fs::read(dir.join(weft_cli::FROZEN_INIT_FILE)).unwrap();
    let _ = std::fs::remove_dir_all(&dir);
    verdict(
        ok_exit && same && trainable_grad_bound,
        format!(
            "binary run exit {:?}, frozen subset identical {same}, in-process runs free of frozen gradients {trainable_grad_bound}",
            st.status.code()
        ),
    )
}

fn c7_efficiency() -> Verdict {
    let t = Instant::now();
    let (_, store) = Model::new::<f32>(&ModelConfig::default(), 0).unwrap();
    let c = Model::counts(&store);
    let fraction = c.trainable as f64 / (c.trainable + c.frozen) as f64;
    let cfg = weft_cli::RunConfig {
        train: TrainConfig { steps: 3, ..TrainConfig::default() },
        ..weft_cli::RunConfig::default()
    };
    let rows = weft_cli::cmd_bench(&cfg).unwrap();
    let ordered = rows[0].trainable < rows[1].trainable && rows[1].trainable < rows[2].trainable;
    let el = t.elapsed();
    verdict(
        fraction < 0.15 && ordered && el < Duration::from_secs(60),
        format!(
            "default trainable fraction {:.2}%; trainable frozen {} < weft {} < full {}: {ordered}; {:.1}s",
            100.0 * fraction,
            rows[0].trainable,
            rows[1].trainable,
            rows[2].trainable,
            el.as_secs_f64()
        ),
    )
}

fn c10_loss() -> Verdict {
    let mut worst = 0.0f64;
    for s in 0..100u64 {
        let mut rng = Rng::new(s).split("loss");
        let shape = [1 + rng.below(3), 1, 2 + rng.below(7), 2 + rng.below(7)];
        let n: usize = shape.iter().product();
        let z: Vec<f64> = (0..n).map(|_| 4.0 * rng.normal()).collect();
        let y: Vec<f64> = (0..n).map(|_| if rng.uniform() < 0.3 { 1.0 } else { 0.0 }).collect();

        let mut g = Graph::<f64>::detached();
        let zv = g.constant(Tensor::from_f64(&shape, &z).unwrap());
        let yv = g.constant(Tensor::from_f64(&shape, &y).unwrap());
        let p = composite_loss(&mut g, zv, yv, &LossConfig::default()).unwrap();
        let got = g.value(p.total).item();

        let mut bce = 0.0;
        let (mut inter, mut sp, mut sy) = (0.0, 0.0, 0.0);
        for (&z, &y) in z.iter().zip(&y) {
            let prob = 1.0 / (1.0 + (-z).exp());
            bce -= if y == 1.0 { prob.ln() } else { (1.0 - prob).ln() };
            inter += prob * y;
            sp += prob;
            sy += y;
        }
        let bce = bce / n as f64;
        let dice = 1.0 - (2.0 * inter + 1.0) / (sp + sy + 1.0);
        worst = worst.max((got - (5.0 * bce + 2.0 * dice)).abs());
    }
    verdict(worst <= 1e-6, format!("100 pairs: max |loss - (5 bce + 2 dice)| {worst:.1e}"))
}

fn c11_determinism() -> Verdict {
    let run = |tag: &str| -> (bool, Vec<u8>, Vec<u8>) {
        let dir = scratch_dir(tag);
        let st = weft_bin()
            .args(["train", "--steps", "12", "--seed", "5", "--out"])
            .arg(&dir)
            .output()
            .unwrap();
        let r = (
            st.status.success(),
            std::fs::read(dir.join(weft_cli::REPORT_FILE)).unwrap_or_default(),
            std::fs::read(dir.join(weft_cli::CHECKPOINT_FILE)).unwrap_or_default(),
        );
        let _ = std::fs::remove_dir_all(&dir);
        r
    };
    let a = run("det-a");
    let b = run("det-b");
    let ok = a.0 && b.0 && !a.1.is_empty() && !a.2.is_empty() && a.1 == b.1 && a.2 == b.2;
    verdict(ok, format!("report identical {}, checkpoint identical {} ({} bytes)", a.1 == b.1, a.2 == b.2, a.2.len()))
}

/// One training job of the shared long-run pool.
#[derive(Clone, Debug)]
struct Job {
    label: String,
    seed: u64,
    model: ModelConfig,
    train: TrainConfig,
}

struct Outcome {
    job: Job,
    result: Result<TrainReport, String>,
    /// No frozen parameter moved and no step produced more gradient entries
    /// than there are trainable parameters.
    frozen_clean: bool,
}

fn run_job(job: Job) -> Outcome {
    let (model, mut store) = Model::new::<f32>(&job.model, job.seed).unwrap();
    let before = checkpoint::subset_bytes(&store, Some(true));
    let trainable = store.iter().filter(|(_, p)| !p.frozen).count();
    let data = Splits::<f32>::synth(job.seed, &job.train, job.model.image_size).unwrap();
    let result = train(&model, &mut store, &data, &job.train, |_| {}).map_err(|e| e.to_string());
    let frozen_clean = checkpoint::subset_bytes(&store, Some(true)) == before
        && result.as_ref().map(|r| r.max_grad_entries <= trainable).unwrap_or(true);
    Outcome { job, result, frozen_clean }
}

/// Runs jobs on as many threads as the machine offers, preserving job order.
fn run_pool(jobs: Vec<Job>) -> Vec<Outcome> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(jobs.len()).max(1);
    let queue = Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>());
    let done = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let next = queue.lock().unwrap().pop();
                let Some((i, job)) = next else { break };
                let t = Instant::now();
                let o = run_job(job);
                eprintln!(
                    "  [{:>6.1}s] {} seed {}: {}",
                    t.elapsed().as_secs_f64(),
                    o.job.label,
                    o.job.seed,
                    match &o.result {
                        Ok(r) => format!("miou {:.4}", r.final_metrics.miou),
                        Err(e) => format!("error {e}"),
                    }
                );
                done.lock().unwrap().push((i, o));
            });
        }
    });
    let mut done = done.into_inner().unwrap();
    done.sort_by_key(|(i, _)| *i);
    done.into_iter().map(|(_, o)| o).collect()
}

fn mious(outcomes: &[Outcome], label: &str) -> Vec<f64> {
    outcomes
        .iter()
        .filter(|o| o.job.label == label)
        .map(|o| o.result.as_ref().map(|r| r.final_metrics.miou).unwrap_or(f64::NAN))
        .collect()
}

fn main() {
    weft::parallel::init_from_env();
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut lines = Vec::new();
    let mut record = |name: &str, v: Verdict| {
        let line = format!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        println!("{line}");
        lines.push((v.pass, line));
    };

    record("1 wavelet round trip", c1_wavelet());
    record("2 gradient suite", c2_gradcheck());
    record("3 router invariants", c3_router());
    record("4 token optimizer oracle", c4_esto());
    record("7 parameter efficiency", c7_efficiency());
    record("10 loss identity", c10_loss());
    record("11 determinism", c11_determinism());

    let default = TrainConfig::default();
    let short = TrainConfig { steps: 300, eval_every: 300, ..TrainConfig::default() };
    let mut jobs = Vec::new();
    for &seed in &SEEDS {
        jobs.push(Job { label: "weft".into(), seed, model: ModelConfig::default(), train: default.clone() });
        jobs.push(Job {
            label: "frozen".into(),
            seed,
            model: ModelConfig { regime: Regime::Frozen, ..ModelConfig::default() },
            train: default.clone(),
        });
    }
    let learning_jobs = jobs.len();
    for &seed in &SEEDS {
        jobs.push(Job {
            label: "k1".into(),
            seed,
            model: ModelConfig { k_experts: 1, ..ModelConfig::default() },
            train: default.clone(),
        });
    }
    for h in [2, 8, 16] {
        jobs.push(Job {
            label: format!("subspaces{h}"),
            seed: 0,
            model: ModelConfig { subspaces: h, ..ModelConfig::default() },
            train: short.clone(),
        });
    }

    let t = Instant::now();
    let learning = run_pool(jobs[..learning_jobs].to_vec());
    let learning_time = t.elapsed();
    let ablation = run_pool(jobs[learning_jobs..].to_vec());

    let weft = mious(&learning, "weft");
    let frozen = mious(&learning, "frozen");
    let (mw, mf) = (median(weft.clone()), median(frozen.clone()));
    record(
        "8 learning signal",
        verdict(
            mw >= 0.80 && mw >= mf + 0.05 && learning_time < Duration::from_secs(15 * 60),
            format!(
                "median miou weft {mw:.4} {weft:.4?}, frozen {mf:.4} {frozen:.4?}, margin {:.4}; {:.0}s on {} thread(s)",
                mw - mf,
                learning_time.as_secs_f64(),
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            ),
        ),
    );

    let k1 = mious(&ablation, "k1");
    let mk1 = median(k1.clone());
    let sub: Vec<(String, Result<f64, String>)> = ablation
        .iter()
        .filter(|o| o.job.label.starts_with("subspaces"))
        .map(|o| (o.job.label.clone(), o.result.as_ref().map(|r| r.final_metrics.miou).map_err(Clone::clone)))
        .chain(std::iter::once(("subspaces4".to_string(), learning.iter().find(|o| o.job.label == "weft").unwrap().result.as_ref().map(|r| r.final_metrics.miou).map_err(Clone::clone))))
        .collect();
    let sub_ok = sub.iter().all(|(_, r)| r.as_ref().is_ok_and(|m| m.is_finite()));
    record(
        "9 ablation directionality",
        verdict(
            mw >= mk1 && sub_ok,
            format!("median miou k=4 {mw:.4} vs k=1 {mk1:.4} {k1:.4?}; subspace runs {sub:.4?}"),
        ),
    );

    let weft_reports: Vec<TrainReport> = learning
        .iter()
        .filter(|o| o.job.label == "weft")
        .filter_map(|o| o.result.as_ref().ok().cloned())
        .collect();
    record("5 enhancer invariants", c5_see(&weft_reports));
    let clean = learning.iter().chain(&ablation).all(|o| o.frozen_clean && o.result.is_ok());
    record("6 frozen contract", c6_frozen(clean));

    let failed = lines.iter().filter(|(p, _)| !p).count();
    println!("\n{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
