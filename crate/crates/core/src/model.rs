//! The two-branch decomposition forecaster.
//!
//! Inputs are window-unit normalized (mean removed, added back onto the
//! prediction). The short-term branch is a single linear map along the time
//! axis. The long-term branch concatenates the normalized input with
//! timestamp features, runs a stack of residual dilated causal convolution
//! blocks to produce the representation `v`, then decodes `v` through a
//! two-layer MLP followed by a multi-scale moving-average head that smooths
//! short-period structure out of the long-term prediction. Channels are
//! handled independently: one univariate pass per channel with shared
//! parameters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::loss::autocon_loss;
use crate::tensor::{Tape, Tensor, Value};

/// Structural hyperparameters of the forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_len: usize,
    pub output_len: usize,
    /// Timestamp feature count fed to the encoder.
    pub feat_dim: usize,
    /// Representation width `d`.
    pub repr_dim: usize,
    /// Encoder blocks; block `l` uses dilation `2^l`.
    pub depth: usize,
    /// Moving-average kernel sizes of the decoder head; all odd.
    pub kernels: Vec<usize>,
    pub use_short: bool,
    pub use_long: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.output_len == 0 {
            return Err(Error::Parameter("input and output lengths must be >= 1".into()));
        }
        if !self.use_short && !self.use_long {
            return Err(Error::Config(
                "both branches ablated: the model would collapse to the window mean".into(),
            ));
        }
        if self.use_long {
            if self.repr_dim == 0 {
                return Err(Error::Parameter("representation width must be >= 1".into()));
            }
            if self.kernels.is_empty() {
                return Err(Error::Parameter("decoder needs at least one MA kernel".into()));
            }
            for &k in &self.kernels {
                if k == 0 || k % 2 == 0 {
                    return Err(Error::Parameter(format!("MA kernels must be odd, got {k}")));
                }
            }
        }
        Ok(())
    }

    fn encoder_in(&self) -> usize {
        1 + self.feat_dim
    }
}

/// One residual encoder block: kernel-3 causal convolution plus bias and GELU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// All learnable weights. Unused branches keep zero-initialized placeholders
/// so the parameter list (and checkpoints) stay positionally stable.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub short_w: Tensor,
    pub enc_in_w: Tensor,
    pub enc_in_b: Tensor,
    pub blocks: Vec<ConvBlock>,
    pub dec_w_time: Tensor,
    pub dec_b_time: Tensor,
    pub dec_w_chan: Tensor,
    pub dec_b_chan: Tensor,
}

impl ModelParams {
    /// Fresh parameters, uniform `(−1/√fan_in, +1/√fan_in)` per buffer.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (i, o, d) = (config.input_len, config.output_len, config.repr_dim);
        let cin = config.encoder_in();
        let blocks = (0..config.depth)
            .map(|_| ConvBlock {
                weight: Tensor::uniform(&[3, d, d], 3 * d, rng),
                bias: Tensor::uniform(&[d], 3 * d, rng),
            })
            .collect();
        Ok(Self {
            short_w: Tensor::uniform(&[o, i], i, rng),
            enc_in_w: Tensor::uniform(&[cin, d], cin, rng),
            enc_in_b: Tensor::uniform(&[d], cin, rng),
            blocks,
            dec_w_time: Tensor::uniform(&[o, i], i, rng),
            dec_b_time: Tensor::uniform(&[d], i, rng),
            dec_w_chan: Tensor::uniform(&[d, 1], d, rng),
            dec_b_chan: Tensor::uniform(&[1], d, rng),
            config,
        })
    }

    /// All-zero parameters (useful as a reference point: the model then
    /// predicts the window mean).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (i, o, d) = (config.input_len, config.output_len, config.repr_dim);
        let cin = config.encoder_in();
        let blocks = (0..config.depth)
            .map(|_| ConvBlock { weight: Tensor::zeros(&[3, d, d]), bias: Tensor::zeros(&[d]) })
            .collect();
        Ok(Self {
            short_w: Tensor::zeros(&[o, i]),
            enc_in_w: Tensor::zeros(&[cin, d]),
            enc_in_b: Tensor::zeros(&[d]),
            blocks,
            dec_w_time: Tensor::zeros(&[o, i]),
            dec_b_time: Tensor::zeros(&[d]),
            dec_w_chan: Tensor::zeros(&[d, 1]),
            dec_b_chan: Tensor::zeros(&[1]),
            config,
        })
    }

    /// Stable (name, tensor) listing; the order defines the optimizer slots
    /// and the checkpoint layout.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("short_w".to_string(), &self.short_w),
            ("enc_in_w".to_string(), &self.enc_in_w),
            ("enc_in_b".to_string(), &self.enc_in_b),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{l}_w"), &b.weight));
            out.push((format!("block{l}_b"), &b.bias));
        }
        out.push(("dec_w_time".to_string(), &self.dec_w_time));
        out.push(("dec_b_time".to_string(), &self.dec_b_time));
        out.push(("dec_w_chan".to_string(), &self.dec_w_chan));
        out.push(("dec_b_chan".to_string(), &self.dec_b_chan));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("short_w".to_string(), &mut self.short_w),
            ("enc_in_w".to_string(), &mut self.enc_in_w),
            ("enc_in_b".to_string(), &mut self.enc_in_b),
        ];
        for (l, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{l}_w"), &mut b.weight));
            out.push((format!("block{l}_b"), &mut b.bias));
        }
        out.push(("dec_w_time".to_string(), &mut self.dec_w_time));
        out.push(("dec_b_time".to_string(), &mut self.dec_b_time));
        out.push(("dec_w_chan".to_string(), &mut self.dec_w_chan));
        out.push(("dec_b_chan".to_string(), &mut self.dec_b_chan));
        out
    }

    /// Leafs every parameter onto `tape` for one forward/backward pass.
    pub fn leaf_on(&self, tape: &Tape) -> ParamValues {
        ParamValues {
            short_w: self.short_w.leaf_on(tape),
            enc_in_w: self.enc_in_w.leaf_on(tape),
            enc_in_b: self.enc_in_b.leaf_on(tape),
            blocks: self
                .blocks
                .iter()
                .map(|b| (b.weight.leaf_on(tape), b.bias.leaf_on(tape)))
                .collect(),
            dec_w_time: self.dec_w_time.leaf_on(tape),
            dec_b_time: self.dec_b_time.leaf_on(tape),
            dec_w_chan: self.dec_w_chan.leaf_on(tape),
            dec_b_chan: self.dec_b_chan.leaf_on(tape),
        }
    }
}

/// Tape-resident parameter handles for one pass.
pub struct ParamValues {
    pub short_w: Value,
    pub enc_in_w: Value,
    pub enc_in_b: Value,
    pub blocks: Vec<(Value, Value)>,
    pub dec_w_time: Value,
    pub dec_b_time: Value,
    pub dec_w_chan: Value,
    pub dec_b_chan: Value,
}

impl ParamValues {
    /// Rebuilds the handle struct from leaves in [`ModelParams::named`]
    /// order (as the gradient checker perturbs raw buffers).
    pub fn from_values(cfg: &ModelConfig, vals: &[Value]) -> Self {
        assert_eq!(vals.len(), 7 + 2 * cfg.depth, "leaf count mismatch");
        let blocks = (0..cfg.depth)
            .map(|l| (vals[3 + 2 * l].clone(), vals[4 + 2 * l].clone()))
            .collect();
        let base = 3 + 2 * cfg.depth;
        Self {
            short_w: vals[0].clone(),
            enc_in_w: vals[1].clone(),
            enc_in_b: vals[2].clone(),
            blocks,
            dec_w_time: vals[base].clone(),
            dec_b_time: vals[base + 1].clone(),
            dec_w_chan: vals[base + 2].clone(),
            dec_b_chan: vals[base + 3].clone(),
        }
    }

    /// Gradients in [`ModelParams::named`] order (zeros where unreached).
    pub fn grads(&self) -> Vec<Vec<f64>> {
        let mut out = vec![
            grad_or_zero(&self.short_w),
            grad_or_zero(&self.enc_in_w),
            grad_or_zero(&self.enc_in_b),
        ];
        for (w, b) in &self.blocks {
            out.push(grad_or_zero(w));
            out.push(grad_or_zero(b));
        }
        out.push(grad_or_zero(&self.dec_w_time));
        out.push(grad_or_zero(&self.dec_b_time));
        out.push(grad_or_zero(&self.dec_w_chan));
        out.push(grad_or_zero(&self.dec_b_chan));
        out
    }
}

fn grad_or_zero(v: &Value) -> Vec<f64> {
    v.grad().unwrap_or_else(|| vec![0.0; v.numel()])
}

/// One univariate window as the model sees it.
pub struct WindowInput<'a> {
    /// Raw input segment, length I (one channel).
    pub input: &'a [f64],
    /// Timestamp features for the input segment, I×f row-major.
    pub feats: &'a [f64],
    /// Per-window input mean of this channel.
    pub mean: f64,
}

/// Everything one forward pass produces.
pub struct ForwardParts {
    /// Denormalized prediction, O×1.
    pub pred: Value,
    pub short: Option<Value>,
    pub long: Option<Value>,
    /// Encoder representation v, I×d.
    pub repr: Option<Value>,
    /// Time-max-pooled representation, d.
    pub pooled: Option<Value>,
}

/// Window-unit normalization: subtract the input mean.
pub fn normalize(x: &[f64], mean: f64) -> Vec<f64> {
    x.iter().map(|&v| v - mean).collect()
}

/// Full forward pass for one window and one channel:
/// normalize → {short linear, encode → decode} → sum → add the mean back.
pub fn forward(
    tape: &Tape,
    pv: &ParamValues,
    cfg: &ModelConfig,
    win: &WindowInput,
) -> Result<ForwardParts> {
    let i = cfg.input_len;
    if win.input.len() != i || win.feats.len() != i * cfg.feat_dim {
        return Err(Error::Dimension(format!(
            "window buffers ({} inputs, {} features) do not match I={i}, f={}",
            win.input.len(),
            win.feats.len(),
            cfg.feat_dim
        )));
    }
    let x_norm = tape.leaf(&[i, 1], normalize(win.input, win.mean))?;

    let short = if cfg.use_short { Some(tape.matmul(&pv.short_w, &x_norm)?) } else { None };

    let (long, repr, pooled) = if cfg.use_long {
        let v = encode(tape, pv, cfg, &x_norm, win.feats)?;
        let pooled = tape.max_pool_time(&v)?;
        let long = decode_long(tape, pv, cfg, &v)?;
        (Some(long), Some(v), Some(pooled))
    } else {
        (None, None, None)
    };

    let sum = match (&short, &long) {
        (Some(s), Some(l)) => tape.add(s, l)?,
        (Some(s), None) => s.clone(),
        (None, Some(l)) => l.clone(),
        (None, None) => unreachable!("config validation requires one branch"),
    };
    let pred = tape.add_scalar(&sum, win.mean);
    Ok(ForwardParts { pred, short, long, repr, pooled })
}

/// Encoder: concat normalized input with timestamp features, project to the
/// representation width, then run residual dilated causal conv blocks.
pub fn encode(
    tape: &Tape,
    pv: &ParamValues,
    cfg: &ModelConfig,
    x_norm: &Value,
    feats: &[f64],
) -> Result<Value> {
    let i = cfg.input_len;
    let cat = if cfg.feat_dim > 0 {
        let f = tape.leaf(&[i, cfg.feat_dim], feats.to_vec())?;
        tape.concat_cols(x_norm, &f)?
    } else {
        x_norm.clone()
    };
    let mut h = tape.add_row_bias(&tape.matmul(&cat, &pv.enc_in_w)?, &pv.enc_in_b)?;
    for (l, (w, b)) in pv.blocks.iter().enumerate() {
        let dilation = 1usize << l;
        let conv = tape.conv1d_causal(&h, w, dilation)?;
        let act = tape.gelu(&tape.add_row_bias(&conv, b)?);
        h = tape.add(&h, &act)?;
    }
    Ok(h)
}

/// Decoder: MLP to the output horizon, then the multi-scale moving-average
/// head (length-preserving replicate padding per kernel).
pub fn decode_long(tape: &Tape, pv: &ParamValues, cfg: &ModelConfig, v: &Value) -> Result<Value> {
    let mapped = tape.add_row_bias(&tape.matmul(&pv.dec_w_time, v)?, &pv.dec_b_time)?;
    let hidden = tape.gelu(&mapped);
    let out = tape.add_row_bias(&tape.matmul(&hidden, &pv.dec_w_chan)?, &pv.dec_b_chan)?;
    moving_average_head(tape, &out, &cfg.kernels)
}

/// Averages length-preserving moving averages of `x` at every kernel size.
pub fn moving_average_head(tape: &Tape, x: &Value, kernels: &[usize]) -> Result<Value> {
    let mut acc: Option<Value> = None;
    for &k in kernels {
        let padded = tape.replicate_pad(x, (k - 1) / 2, k / 2)?;
        let pooled = tape.avgpool1d(&padded, k)?;
        acc = Some(match acc {
            Some(a) => tape.add(&a, &pooled)?,
            None => pooled,
        });
    }
    let acc = acc.ok_or_else(|| Error::Parameter("no MA kernels".into()))?;
    Ok(tape.scale(&acc, 1.0 / kernels.len() as f64))
}

/// The combined objective and its components.
pub struct LossBundle {
    pub total: Value,
    pub mse: Value,
    /// Present only when the contrastive term was active (λ > 0 and a long
    /// branch exists).
    pub autocon: Option<Value>,
}

/// `L = L_mse + λ·L_AutoCon`, with the contrastive term evaluated per channel
/// over pooled representations and averaged. With λ = 0 the contrastive side
/// is skipped entirely.
pub fn total_loss(
    tape: &Tape,
    preds: &[Value],
    targets: &[Value],
    pooled_by_channel: &[Vec<Value>],
    relations_by_channel: &[Vec<f64>],
    lambda: f64,
    tau: f64,
) -> Result<LossBundle> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut mse_acc: Option<Value> = None;
    for (p, y) in preds.iter().zip(targets) {
        let diff = tape.sub(p, y)?;
        let sq = tape.mul(&diff, &diff)?;
        let m = tape.mean_all(&sq);
        mse_acc = Some(match mse_acc {
            Some(a) => tape.add(&a, &m)?,
            None => m,
        });
    }
    let mse = tape.scale(&mse_acc.expect("nonempty"), 1.0 / preds.len() as f64);

    let use_autocon = lambda > 0.0 && pooled_by_channel.iter().any(|c| !c.is_empty());
    if !use_autocon {
        return Ok(LossBundle { total: mse.clone(), mse, autocon: None });
    }
    if pooled_by_channel.len() != relations_by_channel.len() {
        return Err(Error::Contract(format!(
            "{} pooled channels vs {} relation matrices",
            pooled_by_channel.len(),
            relations_by_channel.len()
        )));
    }
    let mut con_acc: Option<Value> = None;
    for (pooled, rels) in pooled_by_channel.iter().zip(relations_by_channel) {
        let stacked = tape.stack_rows(pooled)?;
        let l = autocon_loss(tape, &stacked, rels, tau)?;
        con_acc = Some(match con_acc {
            Some(a) => tape.add(&a, &l)?,
            None => l,
        });
    }
    let autocon = tape.scale(&con_acc.expect("nonempty"), 1.0 / pooled_by_channel.len() as f64);
    let total = tape.add(&mse, &tape.scale(&autocon, lambda))?;
    Ok(LossBundle { total, mse, autocon: Some(autocon) })
}
