//! End-to-end orchestration: ACF precomputation, the epoch loop with early
//! stopping, checkpointing, evaluation, representation probes and diagnostic
//! dumps. One training run is single-threaded and bitwise reproducible under
//! a fixed seed.

pub mod artifacts;
mod checkpoint;
mod config;
mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use synth::SynthSpec;

use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acf::{self, AcfMethod, AcfTable};
use crate::data::{
    chrono_split, load_csv, timestamp_features, EpochSampler, Series, Splits, WindowBatch,
    WindowSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::model::{self, ForwardParts, ModelConfig, ModelParams, WindowInput};
use crate::tensor::{Adam, Tape};
use artifacts::write_atomic;

/// One row of the loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    pub train_mse: f64,
    pub autocon: f64,
    pub total: f64,
    pub val_mse: f64,
}

/// Everything a run leaves behind, with in-memory copies of the bits tests
/// assert on.
#[derive(Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub checkpoint_path: PathBuf,
    pub trace_path: PathBuf,
    pub eval_csv_path: PathBuf,
    pub eval_summary_path: PathBuf,
    pub acf_path: PathBuf,
    pub repr_sim_path: PathBuf,
    pub manifest_path: PathBuf,
    pub config_path: PathBuf,
    pub trace: Vec<EpochTrace>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub test_report: EvalReport,
    /// ACF computations observed during this run; always exactly one.
    pub acf_computations: usize,
    pub config_hash: String,
}

/// Which chronological split an operation addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSel {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitSel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitSel::Train),
            "val" => Ok(SplitSel::Val),
            "test" => Ok(SplitSel::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

fn pick<'a>(splits: &'a Splits, sel: SplitSel) -> &'a Series {
    match sel {
        SplitSel::Train => &splits.train,
        SplitSel::Val => &splits.val,
        SplitSel::Test => &splits.test,
    }
}

/// Loads the configured data source (CSV file or inline synthetic spec).
pub fn load_series(cfg: &RunConfig) -> Result<Series> {
    match (&cfg.data, cfg.synth_length) {
        (Some(path), None) => load_csv(path, cfg.date_col.as_deref(), cfg.value_cols.as_deref()),
        (None, Some(_)) => SynthSpec::from_config(cfg)?.generate_series("synthetic"),
        _ => Err(Error::Config("set exactly one of 'data' or 'synth_length'".into())),
    }
}

fn model_config(cfg: &RunConfig, feat_dim: usize) -> ModelConfig {
    ModelConfig {
        input_len: cfg.input_len,
        output_len: cfg.output_len,
        feat_dim,
        repr_dim: cfg.repr_dim,
        depth: cfg.depth,
        kernels: cfg.kernels.clone(),
        use_short: !cfg.no_short,
        use_long: !cfg.no_long,
    }
}

fn feat_dim_of(series: &Series, hint: f64) -> Result<usize> {
    Ok(timestamp_features(series, 0, 1, hint)?.1)
}

/// Forward every (window, channel) pair of a batch on one tape.
struct BatchForward {
    preds: Vec<crate::tensor::Value>,
    targets: Vec<crate::tensor::Value>,
    /// channel → per-window pooled representations.
    pooled: Vec<Vec<crate::tensor::Value>>,
}

fn forward_batch(
    tape: &Tape,
    params: &ModelParams,
    mcfg: &ModelConfig,
    batch: &WindowBatch,
    want_pooled: bool,
) -> Result<BatchForward> {
    let pv = params.leaf_on(tape);
    let channels = batch.channels;
    let mut preds = Vec::with_capacity(batch.len() * channels);
    let mut targets = Vec::with_capacity(batch.len() * channels);
    let mut pooled: Vec<Vec<crate::tensor::Value>> = vec![Vec::new(); channels];
    for n in 0..batch.len() {
        let feats = batch.input_features(n);
        for ch in 0..channels {
            let input = batch.input_channel(n, ch);
            let mean = batch.input_mean(n, ch);
            let parts = model::forward(tape, &pv, mcfg, &WindowInput { input: &input, feats: &feats, mean })?;
            let ForwardParts { pred, pooled: pool, .. } = parts;
            preds.push(pred);
            targets.push(tape.leaf(&[mcfg.output_len, 1], batch.target_channel(n, ch))?);
            if want_pooled {
                if let Some(p) = pool {
                    pooled[ch].push(p);
                }
            }
        }
    }
    Ok(BatchForward { preds, targets, pooled })
}

/// Algorithm: compute the global ACF once, then per iteration sample a batch,
/// forward, build the relation matrix, combine MSE with the contrastive term,
/// backprop and take one Adam step. Early stopping tracks validation MSE.
pub fn train(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let config_text = cfg.to_text();
    let config_hash = cfg.hash();
    let series = load_series(cfg)?;
    let spec = WindowSpec::new(cfg.input_len, cfg.output_len)?;
    let splits = chrono_split(&series, cfg.ratios, &spec)?;
    let lambda = cfg.effective_lambda();
    let smoothing_k = cfg.smoothing_for(series.freq);

    // Global ACF over the training split, once, before any iteration.
    let acf_before = acf::construction_count();
    let m_train = splits.train.window_starts(&spec).len();
    if m_train == 0 {
        return Err(Error::Config("training split has no complete windows".into()));
    }
    let max_lag = m_train - 1;
    let acf_table = acf::global_acf(&splits.train, max_lag, smoothing_k, AcfMethod::Fft)?;

    let hint = cfg.long_period_hint;
    let feat_dim = feat_dim_of(&series, hint)?;
    let mcfg = model_config(cfg, feat_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(mcfg.clone(), &mut rng)?;
    let mut adam = Adam::with_lr(cfg.lr)?;
    let sampler = EpochSampler::new(&splits.train, &spec, cfg.batch)?;

    let channels = series.channels();
    let mut trace = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut patience_left = cfg.patience;
    let mut iteration = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut sum_mse = 0.0;
        let mut sum_con = 0.0;
        let mut sum_total = 0.0;
        let mut batches_done = 0usize;
        for starts in sampler.epoch(&mut rng) {
            iteration += 1;
            let batch = WindowBatch::gather(&splits.train, &starts, &spec, hint)?;
            let tape = Tape::new();
            let pv = params.leaf_on(&tape);
            let mut preds = Vec::with_capacity(batch.len() * channels);
            let mut targets = Vec::with_capacity(batch.len() * channels);
            let mut pooled: Vec<Vec<crate::tensor::Value>> = vec![Vec::new(); channels];
            for n in 0..batch.len() {
                let feats = batch.input_features(n);
                for ch in 0..channels {
                    let input = batch.input_channel(n, ch);
                    let mean = batch.input_mean(n, ch);
                    let parts = model::forward(
                        &tape,
                        &pv,
                        &mcfg,
                        &WindowInput { input: &input, feats: &feats, mean },
                    )?;
                    preds.push(parts.pred);
                    targets.push(tape.leaf(&[mcfg.output_len, 1], batch.target_channel(n, ch))?);
                    if lambda > 0.0 {
                        if let Some(p) = parts.pooled {
                            pooled[ch].push(p);
                        }
                    }
                }
            }
            let relations: Vec<Vec<f64>> = if lambda > 0.0 {
                (0..channels).map(|ch| acf_table.relation_matrix(&batch.starts, ch)).collect()
            } else {
                vec![Vec::new(); channels]
            };
            let bundle =
                model::total_loss(&tape, &preds, &targets, &pooled, &relations, lambda, cfg.tau)?;
            let total = bundle.total.item();
            if !total.is_finite() {
                return Err(Error::Divergence {
                    iteration,
                    detail: format!("loss became {total}"),
                });
            }
            tape.backward(&bundle.total)?;
            let grads = pv.grads();
            let mut tensors: Vec<&mut crate::tensor::Tensor> =
                params.named_mut().into_iter().map(|(_, t)| t).collect();
            adam.step(&mut tensors, &grads)?;

            sum_mse += bundle.mse.item();
            sum_con += bundle.autocon.as_ref().map(|v| v.item()).unwrap_or(0.0);
            sum_total += total;
            batches_done += 1;
        }
        let inv = 1.0 / batches_done.max(1) as f64;
        let val_mse = point_mse(&params, &mcfg, &splits.val, &spec, hint)?;
        trace.push(EpochTrace {
            epoch,
            train_mse: sum_mse * inv,
            autocon: sum_con * inv,
            total: sum_total * inv,
            val_mse,
        });
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params = params.clone();
            patience_left = cfg.patience;
        } else if patience_left > 0 {
            patience_left -= 1;
            if patience_left == 0 {
                break;
            }
        }
    }
    let params = best_params;
    let acf_computations = acf::construction_count() - acf_before;

    // Artifacts.
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out)?;
    let config_path = out.join("config.txt");
    write_atomic(&config_path, format!("# config_hash={config_hash}\n{config_text}").as_bytes())?;

    let manifest_path = out.join("split_manifest.txt");
    write_atomic(
        &manifest_path,
        format!("# config_hash={config_hash}\n{}", splits.manifest.to_text()).as_bytes(),
    )?;

    let trace_path = out.join("loss_trace.csv");
    write_atomic(&trace_path, trace_csv(&trace, &config_hash).as_bytes())?;

    let acf_path = out.join("acf.csv");
    write_atomic(&acf_path, acf_csv(&acf_table, &config_hash).as_bytes())?;

    let checkpoint_path = out.join("checkpoint.txt");
    save_checkpoint(
        &checkpoint_path,
        &config_text,
        &config_hash,
        cfg.seed,
        rng.get_word_pos(),
        &params.named(),
    )?;

    let test_report =
        evaluate_params(&params, &mcfg, &splits.test, &spec, hint, "test", &config_hash)?;
    let eval_csv_path = out.join("eval_test.csv");
    write_atomic(&eval_csv_path, test_report.to_csv().as_bytes())?;
    let eval_summary_path = out.join("eval_test.txt");
    write_atomic(&eval_summary_path, test_report.to_summary().as_bytes())?;

    let repr_sim_path = out.join("repr_sim.csv");
    if mcfg.use_long {
        let sims =
            repr_sim_rows(&params, &mcfg, &splits.test, &spec, hint, cfg.anchor, cfg.repr_smooth_k)?;
        write_atomic(&repr_sim_path, repr_sim_csv(&sims, &config_hash).as_bytes())?;
    } else {
        // No representation exists without the long branch.
        write_atomic(&repr_sim_path, repr_sim_csv(&[], &config_hash).as_bytes())?;
    }

    let summary_path = out.join("summary.txt");
    write_atomic(
        &summary_path,
        format!(
            "config_hash = {config_hash}\nepochs_run = {}\nbest_epoch = {best_epoch}\n\
             best_val_mse = {best_val}\ntest_mse = {}\nacf_computations = {acf_computations}\n",
            trace.len(),
            test_report.mse
        )
        .as_bytes(),
    )?;

    Ok(RunArtifacts {
        out_dir: out.clone(),
        checkpoint_path,
        trace_path,
        eval_csv_path,
        eval_summary_path,
        acf_path,
        repr_sim_path,
        manifest_path,
        config_path,
        trace,
        best_epoch,
        best_val_mse: best_val,
        test_report,
        acf_computations,
        config_hash,
    })
}

fn trace_csv(trace: &[EpochTrace], hash: &str) -> String {
    let mut s = format!("# config_hash={hash}\nepoch,train_mse,autocon,total,val_mse\n");
    for r in trace {
        s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.train_mse, r.autocon, r.total, r.val_mse));
    }
    s
}

fn acf_csv(table: &AcfTable, hash: &str) -> String {
    let mut s = format!("# config_hash={hash}\nlag,channel,acf\n");
    for ch in 0..table.channels() {
        for lag in 0..=table.max_lag() {
            s.push_str(&format!("{lag},{ch},{}\n", table.value(ch, lag)));
        }
    }
    s
}

/// Forward-only mean squared error over every stride-1 window of a split.
fn point_mse(
    params: &ModelParams,
    mcfg: &ModelConfig,
    series: &Series,
    spec: &WindowSpec,
    hint: f64,
) -> Result<f64> {
    let starts = series.window_starts(spec);
    if starts.is_empty() {
        return Err(Error::Domain("split has no complete windows".into()));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for chunk in starts.chunks(64) {
        let batch = WindowBatch::gather(series, chunk, spec, hint)?;
        let tape = Tape::new();
        let fwd = forward_batch(&tape, params, mcfg, &batch, false)?;
        for (p, y) in fwd.preds.iter().zip(&fwd.targets) {
            acc += metrics::mse(&p.data(), &y.data())?;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Stride-1 full-coverage evaluation of a split with all four metrics.
pub fn evaluate_params(
    params: &ModelParams,
    mcfg: &ModelConfig,
    series: &Series,
    spec: &WindowSpec,
    hint: f64,
    split_name: &str,
    config_hash: &str,
) -> Result<EvalReport> {
    let starts = series.window_starts(spec);
    if starts.is_empty() {
        return Err(Error::Domain("split has no complete windows".into()));
    }
    let o = spec.output_len;
    let channels = series.channels();
    let mut sum_mse = 0.0;
    let mut sum_mae = 0.0;
    let mut sum_shape = 0.0;
    let mut sum_temporal = 0.0;
    let mut per_h_mse = vec![0.0; o];
    let mut per_h_mae = vec![0.0; o];
    let mut windows = 0usize;
    for chunk in starts.chunks(64) {
        let batch = WindowBatch::gather(series, chunk, spec, hint)?;
        let tape = Tape::new();
        let pv = params.leaf_on(&tape);
        for n in 0..batch.len() {
            let feats = batch.input_features(n);
            // Interleave channels back into O×c row-major buffers.
            let mut pred = vec![0.0; o * channels];
            let mut truth = vec![0.0; o * channels];
            for ch in 0..channels {
                let input = batch.input_channel(n, ch);
                let mean = batch.input_mean(n, ch);
                let parts = model::forward(
                    &tape,
                    &pv,
                    mcfg,
                    &WindowInput { input: &input, feats: &feats, mean },
                )?;
                let p = parts.pred.data();
                let y = batch.target_channel(n, ch);
                for t in 0..o {
                    pred[t * channels + ch] = p[t];
                    truth[t * channels + ch] = y[t];
                }
            }
            sum_mse += metrics::mse(&pred, &truth)?;
            sum_mae += metrics::mae(&pred, &truth)?;
            sum_shape += metrics::shape_dtw(&pred, &truth, channels)?;
            sum_temporal += metrics::temporal_dtw(&pred, &truth, channels)?;
            for t in 0..o {
                for ch in 0..channels {
                    let d = pred[t * channels + ch] - truth[t * channels + ch];
                    per_h_mse[t] += d * d;
                    per_h_mae[t] += d.abs();
                }
            }
            windows += 1;
        }
    }
    let wn = windows as f64;
    for t in 0..o {
        per_h_mse[t] /= wn * channels as f64;
        per_h_mae[t] /= wn * channels as f64;
    }
    Ok(EvalReport {
        split: split_name.to_string(),
        windows,
        channels,
        horizon: o,
        mse: sum_mse / wn,
        mae: sum_mae / wn,
        shape_dtw: sum_shape / wn,
        temporal_dtw: sum_temporal / wn,
        per_horizon_mse: per_h_mse,
        per_horizon_mae: per_h_mae,
        config_hash: config_hash.to_string(),
    })
}

/// Restores a checkpoint and evaluates one split of its configured data.
pub fn evaluate(checkpoint_path: &Path, sel: SplitSel, data_override: Option<&Path>) -> Result<EvalReport> {
    let (cfg, params) = restore(checkpoint_path, data_override)?;
    let series = load_series(&cfg)?;
    let spec = WindowSpec::new(cfg.input_len, cfg.output_len)?;
    let splits = chrono_split(&series, cfg.ratios, &spec)?;
    let split = pick(&splits, sel);
    let name = match sel {
        SplitSel::Train => "train",
        SplitSel::Val => "val",
        SplitSel::Test => "test",
    };
    evaluate_params(
        &params,
        &model_config(&cfg, feat_dim_of(&series, cfg.long_period_hint)?),
        split,
        &spec,
        cfg.long_period_hint,
        name,
        &cfg.hash(),
    )
}

/// Loads a checkpoint back into a config and parameter set, verifying every
/// tensor shape against the model the config describes.
pub fn restore(checkpoint_path: &Path, data_override: Option<&Path>) -> Result<(RunConfig, ModelParams)> {
    let ck = load_checkpoint(checkpoint_path)?;
    let mut cfg = RunConfig::parse(&ck.config_text)?;
    if let Some(p) = data_override {
        cfg.data = Some(p.to_path_buf());
        cfg.synth_length = None;
    }
    let series = load_series(&cfg)?;
    let feat_dim = feat_dim_of(&series, cfg.long_period_hint)?;
    let mcfg = model_config(&cfg, feat_dim);
    let mut params = ModelParams::zeros(mcfg)?;
    for (name, dst) in params.named_mut() {
        let src = ck
            .tensor(&name)
            .ok_or_else(|| Error::Data(format!("checkpoint missing tensor '{name}'")))?;
        if src.shape() != dst.shape() {
            return Err(Error::Dimension(format!(
                "checkpoint tensor '{name}' has shape {:?}, model expects {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(src.data());
    }
    Ok((cfg, params))
}

/// One row of the representation-similarity probe.
#[derive(Debug, Clone)]
pub struct ReprSimRow {
    pub window_start: usize,
    pub cosine_sim: f64,
    pub smoothed: f64,
}

/// Pooled-representation cosine similarity of an anchor window against every
/// window of a split, with a moving-average smoothed column.
pub fn repr_sim_rows(
    params: &ModelParams,
    mcfg: &ModelConfig,
    series: &Series,
    spec: &WindowSpec,
    hint: f64,
    anchor: Option<usize>,
    smooth_k: usize,
) -> Result<Vec<ReprSimRow>> {
    if !mcfg.use_long {
        return Err(Error::Config("representation probe needs the long branch".into()));
    }
    let starts = series.window_starts(spec);
    if starts.is_empty() {
        return Err(Error::Domain("split has no complete windows".into()));
    }
    let d = mcfg.repr_dim;
    let mut pooled: Vec<Vec<f64>> = Vec::with_capacity(starts.len());
    let mut global_starts = Vec::with_capacity(starts.len());
    for chunk in starts.chunks(64) {
        let batch = WindowBatch::gather(series, chunk, spec, hint)?;
        let tape = Tape::new();
        let fwd = forward_batch(&tape, params, mcfg, &batch, true)?;
        // Univariate probe: channel 0 representations.
        for p in &fwd.pooled[0] {
            pooled.push(p.data());
        }
        global_starts.extend_from_slice(&batch.starts);
    }
    let anchor_global = anchor.unwrap_or(global_starts[0]);
    let anchor_idx = global_starts
        .iter()
        .position(|&s| s == anchor_global)
        .ok_or_else(|| Error::Contract(format!("anchor start {anchor_global} not in the split")))?;
    let sims: Vec<f64> = pooled
        .iter()
        .map(|p| {
            crate::loss::cosine_matrix(
                &[pooled[anchor_idx].clone(), p.clone()].concat(),
                2,
                d,
            )[1]
        })
        .collect();
    let smoothed = smooth_vec(&sims, smooth_k);
    Ok(global_starts
        .into_iter()
        .zip(sims)
        .zip(smoothed)
        .map(|((window_start, cosine_sim), smoothed)| ReprSimRow { window_start, cosine_sim, smoothed })
        .collect())
}

/// Centered moving average with replicate padding over a plain vector.
fn smooth_vec(xs: &[f64], k: usize) -> Vec<f64> {
    if k <= 1 || xs.is_empty() {
        return xs.to_vec();
    }
    let k = k.min(if xs.len() % 2 == 1 { xs.len() } else { xs.len().saturating_sub(1) }).max(1);
    let half = (k / 2) as isize;
    let n = xs.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for off in -half..=half {
                acc += xs[(i + off).clamp(0, n - 1) as usize];
            }
            acc / (2 * half + 1) as f64
        })
        .collect()
}

fn repr_sim_csv(rows: &[ReprSimRow], hash: &str) -> String {
    let mut s = format!("# config_hash={hash}\nwindow_start,cosine_sim,smoothed\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.window_start, r.cosine_sim, r.smoothed));
    }
    s
}

/// Restores a checkpoint and runs the representation probe on one split.
pub fn repr_sim(
    checkpoint_path: &Path,
    sel: SplitSel,
    anchor: Option<usize>,
) -> Result<Vec<ReprSimRow>> {
    let (cfg, params) = restore(checkpoint_path, None)?;
    let series = load_series(&cfg)?;
    let spec = WindowSpec::new(cfg.input_len, cfg.output_len)?;
    let splits = chrono_split(&series, cfg.ratios, &spec)?;
    let split = pick(&splits, sel);
    let feat_dim = feat_dim_of(&series, cfg.long_period_hint)?;
    repr_sim_rows(
        &params,
        &model_config(&cfg, feat_dim),
        split,
        &spec,
        cfg.long_period_hint,
        anchor.or(cfg.anchor),
        cfg.repr_smooth_k,
    )
}

/// Writes a synthetic series to a CSV file.
pub fn synth_to_file(spec: &SynthSpec, path: &Path) -> Result<()> {
    let values = spec.generate()?;
    let mut buf = Vec::new();
    crate::data::write_series_csv(&values, &mut buf)?;
    write_atomic(path, &buf)
}
