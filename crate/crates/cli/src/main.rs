//! `autocon` — train and probe the autocorrelation-contrastive forecaster.
//!
//! Subcommands mirror the run pipeline: `train`, `eval`, `autocorr`, `synth`,
//! `repr-sim`, `gradcheck`. Every flag of `train` mirrors a config-file key;
//! `--config FILE` loads the flat `key = value` file first and flags override
//! it. Exit code 0 on success; failures print one `error: ...` line.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use autocon_core::acf::{self, AcfMethod};
use autocon_core::data::{chrono_split, WindowSpec};
use autocon_core::gradcheck;
use autocon_core::trainer::{self, RunConfig, SplitSel, SynthSpec};

#[derive(Parser)]
#[command(name = "autocon", version, about = "Long-horizon forecasting with an autocorrelation-driven contrastive loss")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and emit the run artifacts.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one chronological split.
    Eval(EvalArgs),
    /// Dump the smoothed global autocorrelation table as CSV.
    Autocorr(AutocorrArgs),
    /// Generate a synthetic series CSV.
    Synth(SynthArgs),
    /// Cosine similarity of pooled representations against an anchor window.
    ReprSim(ReprSimArgs),
    /// Finite-difference check of every registered operation.
    Gradcheck(GradcheckArgs),
}

/// Flags mirroring the run-config keys. Unset flags fall back to the config
/// file, then to the defaults.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    date_col: Option<String>,
    /// Comma-separated value column names.
    #[arg(long)]
    value_cols: Option<String>,
    #[arg(long)]
    synth_length: Option<usize>,
    /// Sinusoid components `period:amp,period:amp,...`.
    #[arg(long)]
    synth_components: Option<String>,
    #[arg(long)]
    synth_trend: Option<f64>,
    #[arg(long)]
    synth_noise: Option<f64>,
    #[arg(long)]
    synth_seed: Option<u64>,
    #[arg(long)]
    input_len: Option<usize>,
    #[arg(long)]
    output_len: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// ACF pre-smoothing kernel (odd); 0 selects the frequency default.
    #[arg(long)]
    smoothing_k: Option<usize>,
    /// Comma-separated moving-average kernel sizes.
    #[arg(long)]
    kernels: Option<String>,
    #[arg(long)]
    repr_dim: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_short: bool,
    #[arg(long)]
    no_long: bool,
    #[arg(long)]
    no_autocon: bool,
    /// Split ratios `train:val:test`.
    #[arg(long)]
    ratios: Option<String>,
    #[arg(long)]
    long_period_hint: Option<f64>,
    #[arg(long)]
    anchor: Option<usize>,
    #[arg(long)]
    repr_smooth_k: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        // String-typed keys reuse the file parser so flag and file semantics
        // cannot drift apart.
        if let Some(v) = &self.value_cols {
            cfg.apply("value_cols", v)?;
        }
        if let Some(v) = &self.synth_components {
            cfg.apply("synth_components", v)?;
        }
        if let Some(v) = &self.kernels {
            cfg.apply("kernels", v)?;
        }
        if let Some(v) = &self.ratios {
            cfg.apply("ratios", v)?;
        }
        if let Some(v) = &self.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &self.date_col {
            cfg.date_col = Some(v.clone());
        }
        if let Some(v) = self.synth_length {
            cfg.synth_length = Some(v);
        }
        if let Some(v) = self.synth_trend {
            cfg.synth_trend = v;
        }
        if let Some(v) = self.synth_noise {
            cfg.synth_noise = v;
        }
        if let Some(v) = self.synth_seed {
            cfg.synth_seed = v;
        }
        if let Some(v) = self.input_len {
            cfg.input_len = v;
        }
        if let Some(v) = self.output_len {
            cfg.output_len = v;
        }
        if let Some(v) = self.batch {
            cfg.batch = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.smoothing_k {
            cfg.smoothing_k = if v == 0 { None } else { Some(v) };
        }
        if let Some(v) = self.repr_dim {
            cfg.repr_dim = v;
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.no_short {
            cfg.no_short = true;
        }
        if self.no_long {
            cfg.no_long = true;
        }
        if self.no_autocon {
            cfg.no_autocon = true;
        }
        if let Some(v) = self.long_period_hint {
            cfg.long_period_hint = v;
        }
        if let Some(v) = self.anchor {
            cfg.anchor = Some(v);
        }
        if let Some(v) = self.repr_smooth_k {
            cfg.repr_smooth_k = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// train | val | test
    #[arg(long, default_value = "test")]
    split: String,
    /// Evaluate against a different CSV than the checkpoint's configured one.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Write the per-horizon CSV here (summary always prints to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AutocorrArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Maximum lag; defaults to the training split's window count minus one.
    #[arg(long)]
    max_lag: Option<usize>,
    /// fft | direct
    #[arg(long, default_value = "fft")]
    method: String,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    length: usize,
    /// Sinusoid components `period:amp,period:amp,...`.
    #[arg(long, default_value = "")]
    components: String,
    #[arg(long, default_value_t = 0.0)]
    trend: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReprSimArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// train | val | test
    #[arg(long, default_value = "test")]
    split: String,
    /// Anchor window start (global index); first window when omitted.
    #[arg(long)]
    anchor: Option<usize>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative-error tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

fn emit(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            trainer::artifacts::write_atomic(path, text.as_bytes())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Train(args) => {
            let cfg = args.config.resolve()?;
            let artifacts = trainer::train(&cfg)?;
            println!("run {} complete", artifacts.config_hash);
            println!("epochs_run: {}", artifacts.trace.len());
            println!("best_epoch: {}", artifacts.best_epoch);
            println!("best_val_mse: {}", artifacts.best_val_mse);
            println!("test_mse: {}", artifacts.test_report.mse);
            println!("test_mae: {}", artifacts.test_report.mae);
            println!("artifacts: {}", artifacts.out_dir.display());
        }
        Cmd::Eval(args) => {
            let sel: SplitSel = args.split.parse()?;
            let report = trainer::evaluate(&args.checkpoint, sel, args.data.as_deref())?;
            if let Some(out) = &args.out {
                trainer::artifacts::write_atomic(out, report.to_csv().as_bytes())?;
            }
            print!("{}", report.to_summary());
        }
        Cmd::Autocorr(args) => {
            let cfg = args.config.resolve()?;
            cfg.validate()?;
            let series = trainer::load_series(&cfg)?;
            let spec = WindowSpec::new(cfg.input_len, cfg.output_len)?;
            let splits = chrono_split(&series, cfg.ratios, &spec)?;
            let m = splits.train.window_starts(&spec).len();
            let max_lag = args.max_lag.unwrap_or(m.saturating_sub(1));
            let method = match args.method.as_str() {
                "fft" => AcfMethod::Fft,
                "direct" => AcfMethod::Direct,
                other => bail!("unknown method '{other}' (use fft or direct)"),
            };
            let table =
                acf::global_acf(&splits.train, max_lag, cfg.smoothing_for(series.freq), method)?;
            let mut text = String::from("lag,channel,acf\n");
            for ch in 0..table.channels() {
                for lag in 0..=table.max_lag() {
                    text.push_str(&format!("{lag},{ch},{}\n", table.value(ch, lag)));
                }
            }
            emit(args.out.as_ref(), &text)?;
        }
        Cmd::Synth(args) => {
            let mut cfg = RunConfig::default();
            cfg.apply("synth_components", &args.components)?;
            let spec = SynthSpec {
                length: args.length,
                components: cfg.synth_components,
                trend: args.trend,
                noise_sigma: args.noise,
                seed: args.seed,
            };
            trainer::synth_to_file(&spec, &args.out)?;
            println!("wrote {}", args.out.display());
        }
        Cmd::ReprSim(args) => {
            let sel: SplitSel = args.split.parse()?;
            let rows = trainer::repr_sim(&args.checkpoint, sel, args.anchor)?;
            let mut text = String::from("window_start,cosine_sim,smoothed\n");
            for r in &rows {
                text.push_str(&format!("{},{},{}\n", r.window_start, r.cosine_sim, r.smoothed));
            }
            emit(args.out.as_ref(), &text)?;
        }
        Cmd::Gradcheck(args) => {
            let checks = gradcheck::check_all(args.seed);
            println!("op,coords,max_rel_err,status");
            let mut failed = 0usize;
            for c in &checks {
                let status = if c.passed(args.tol) { "pass" } else { "FAIL" };
                println!("{},{},{:.3e},{status}", c.name, c.coords, c.max_rel_err);
                if !c.passed(args.tol) {
                    failed += 1;
                }
            }
            if failed > 0 {
                bail!("{failed} of {} gradient checks exceeded tol {}", checks.len(), args.tol);
            }
            println!("all {} checks within {}", checks.len(), args.tol);
        }
    }
    Ok(())
}

fn main() {
    env_logger::init();
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
