//! The autocorrelation-weighted contrastive objective over a batch of pooled
//! window representations.
//!
//! For every ordered pair `(i, j)`, the pair is its own positive and every
//! pair `(i, k)` with relation `r(i,k) ≤ r(i,j)` joins the denominator as a
//! relative negative. Terms are weighted by `r(i,j)` and averaged with
//! `−1/(N(N−1))`. Because the indicator is `≤`, the denominator always
//! contains the numerator, so every term — and the loss — is nonnegative,
//! and a batch of two windows scores exactly zero.
//!
//! Two routes are kept deliberately separate: [`autocon_loss`] is the
//! differentiable vectorized path on the tape, [`autocon_loss_oracle`] is a
//! literal scalar triple loop used to pin the forward value in tests.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Value, EPS_NORM};

/// Pairwise ε-stabilized cosine matrix of `n` row vectors of width `d`.
pub fn cosine_matrix(pooled: &[f64], n: usize, d: usize) -> Vec<f64> {
    let norms: Vec<f64> = (0..n)
        .map(|i| pooled[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt() + EPS_NORM)
        .collect();
    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = (0..d).map(|k| pooled[i * d + k] * pooled[j * d + k]).sum();
            sims[i * n + j] = dot / (norms[i] * norms[j]);
        }
    }
    sims
}

fn validate(n: usize, relations: &[f64], tau: f64) -> Result<()> {
    if tau <= 0.0 {
        return Err(Error::Parameter(format!("temperature must be > 0, got {tau}")));
    }
    if relations.len() != n * n {
        return Err(Error::Dimension(format!(
            "relation matrix has {} entries for batch of {n}",
            relations.len()
        )));
    }
    Ok(())
}

/// Literal triple-loop evaluation over a given similarity matrix. This is the
/// reference form of the objective; it never touches the tape.
pub fn autocon_loss_from_sims(sims: &[f64], relations: &[f64], n: usize, tau: f64) -> Result<f64> {
    validate(n, relations, tau)?;
    if sims.len() != n * n {
        return Err(Error::Dimension(format!(
            "similarity matrix has {} entries for batch of {n}",
            sims.len()
        )));
    }
    if n < 2 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let rij = relations[i * n + j];
            let num = (sims[i * n + j] / tau).exp();
            let mut den = 0.0;
            for k in 0..n {
                if k != i && relations[i * n + k] <= rij {
                    den += (sims[i * n + k] / tau).exp();
                }
            }
            acc += rij * (num / den).ln();
        }
    }
    Ok(-acc / (n as f64 * (n as f64 - 1.0)))
}

/// Non-differentiable oracle on pooled representations (`n×d`, row-major).
pub fn autocon_loss_oracle(
    pooled: &[f64],
    n: usize,
    d: usize,
    relations: &[f64],
    tau: f64,
) -> Result<f64> {
    if pooled.len() != n * d {
        return Err(Error::Dimension(format!(
            "pooled buffer has {} values for {n}×{d}",
            pooled.len()
        )));
    }
    autocon_loss_from_sims(&cosine_matrix(pooled, n, d), relations, n, tau)
}

/// Differentiable vectorized loss over pooled representations on the tape.
///
/// A batch of fewer than two windows cannot form a pair; the loss is then a
/// constant zero (warned once per call).
pub fn autocon_loss(tape: &Tape, pooled: &Value, relations: &[f64], tau: f64) -> Result<Value> {
    let shape = pooled.shape().to_vec();
    let (n, _d) = match shape[..] {
        [n, d] => (n, d),
        _ => {
            return Err(Error::Dimension(format!(
                "pooled representations must be 2-d, got {shape:?}"
            )))
        }
    };
    validate(n, relations, tau)?;
    if n < 2 {
        log::warn!("autocon loss over a batch of {n}: no pairs, returning 0");
        return Ok(tape.scalar(0.0));
    }
    let normalized = tape.l2_normalize_rows(pooled)?;
    let sims = tape.gram(&normalized)?;
    let exps = tape.exp(&tape.scale(&sims, 1.0 / tau));
    let log_dens = tape.masked_log_denom(&exps, relations)?;
    // Off-diagonal r weights; Σ r·sim/τ and Σ r·log-denominator.
    let mut weights = relations.to_vec();
    for i in 0..n {
        weights[i * n + i] = 0.0;
    }
    let scaled_weights: Vec<f64> = weights.iter().map(|w| w / tau).collect();
    let pos = tape.weighted_sum(&sims, &scaled_weights)?;
    let neg = tape.weighted_sum(&log_dens, &weights)?;
    let diff = tape.sub(&neg, &pos)?;
    Ok(tape.scale(&diff, 1.0 / (n as f64 * (n as f64 - 1.0))))
}
