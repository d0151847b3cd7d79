use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use weft::gradcheck::suite::SuiteOptions;
use weft::model::Regime;
use weft_cli::{
    bench_table, cmd_bench, cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, exit_code, gradcheck_table, gradcheck_verdict,
    metrics_table, Overrides, RunConfig, EXIT_CONFIG,
};

/// Wavelet-expert parameter-efficient fine-tuning for binary segmentation.
#[derive(Parser)]
#[command(name = "weft", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Debug, Default)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Experts fused per sample.
    #[arg(long, value_parser = ["1", "2", "4", "6", "7"])]
    k_experts: Option<String>,
    /// Channel subspaces of the token optimizer.
    #[arg(long, value_parser = ["2", "4", "8", "16"])]
    subspaces: Option<String>,
    /// Edge-mask intensity.
    #[arg(long)]
    lambda: Option<f64>,
    /// Similarity temperature.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_parser = ["frozen", "weft", "full"])]
    regime: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> weft::Result<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        c.apply(&Overrides {
            seed: self.seed,
            steps: self.steps,
            image_size: self.image_size,
            k_experts: self.k_experts.as_deref().map(|s| s.parse().expect("restricted by clap")),
            subspaces: self.subspaces.as_deref().map(|s| s.parse().expect("restricted by clap")),
            lambda: self.lambda,
            rho: self.rho,
            regime: self.regime.as_deref().map(|s| s.parse::<Regime>()).transpose()?,
        });
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the synthetic task; writes config.toml, report.csv and model.wten.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "runs/weft")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a materialized dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory holding dataset.wten.
        #[arg(long)]
        data: PathBuf,
        /// Where predictions.wten goes (defaults to the dataset directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every trainable op family against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, hide = true)]
        corrupt_esto: bool,
    },
    /// Compare frozen-only, WEFT and full fine-tuning on one backbone.
    Bench {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Materialize synthetic samples as a WTEN dataset.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// First sample index (training samples start at 0).
        #[arg(long, default_value_t = 0)]
        start: u64,
        /// Number of samples (defaults to the training split size).
        #[arg(long)]
        count: Option<u64>,
    },
}

fn run(cmd: Cmd) -> weft::Result<()> {
    match cmd {
        Cmd::Train { run, out } => {
            let cfg = run.resolve()?;
            let o = cmd_train(&cfg, &out, true)?;
            print!("{}", metrics_table(&o.report.final_metrics, cfg.train.eval_count));
            println!("report      {}", o.report_path.display());
            println!("checkpoint  {}", o.checkpoint_path.display());
            println!("config      {}", o.config_path.display());
            println!("elapsed     {:.1}s", o.report.elapsed.as_secs_f64());
        }
        Cmd::Eval { checkpoint, data, out } => {
            let out = out.unwrap_or_else(|| data.clone());
            let m = cmd_eval(&checkpoint, &data, &out)?;
            let n = weft::wten::load(out.join(weft_cli::PREDICTIONS_FILE))?.len();
            print!("{}", metrics_table(&m, n));
        }
        Cmd::Gradcheck { seeds, corrupt_esto } => {
            let res = cmd_gradcheck(&SuiteOptions {
                seeds,
                corrupt_esto,
                ..SuiteOptions::default()
            })?;
            print!("{}", gradcheck_table(&res));
            gradcheck_verdict(&res)?;
        }
        Cmd::Bench { run } => {
            let cfg = run.resolve()?;
            print!("{}", bench_table(&cmd_bench(&cfg)?));
        }
        Cmd::Synth { run, out, start, count } => {
            let cfg = run.resolve()?;
            let count = count.unwrap_or(cfg.train.train_count as u64);
            let path = cmd_synth(&cfg, &out, start, count)?;
            println!("{count} samples -> {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors share the configuration exit status
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG as u8) } else { ExitCode::SUCCESS };
        }
    };
    weft::parallel::init_from_env();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
