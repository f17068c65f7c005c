//! Central finite-difference checking for every differentiable operation and
//! for the full training objective.
//!
//! The numeric side only ever calls the forward pass, so it stays independent
//! of the backward rules it verifies. Non-scalar ops are reduced to a scalar
//! through a fixed random linear functional before differencing.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{self, ModelConfig, ModelParams, ParamValues, WindowInput};
use crate::tensor::{Tape, Tensor, Value};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Result of one registered check.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
}

impl OpCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Maximum relative error between analytic gradients and central finite
/// differences over every coordinate of every leaf.
///
/// `build` must construct the same scalar graph each call from the given leaf
/// values. Relative error is `|a − n| / max(|a| + |n|, 1e-6)`, which treats
/// matching near-zero gradients as exact.
pub fn max_rel_err<F>(build: F, leaves: &[Tensor], step: f64) -> Result<(f64, usize)>
where
    F: Fn(&Tape, &[Value]) -> Result<Value>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vals: Vec<Value> = tensors.iter().map(|t| t.leaf_on(&tape)).collect();
        Ok(build(&tape, &vals)?.item())
    };

    // Analytic pass.
    let tape = Tape::new();
    let vals: Vec<Value> = leaves.iter().map(|t| t.leaf_on(&tape)).collect();
    let out = build(&tape, &vals)?;
    tape.backward(&out)?;
    let analytic: Vec<Vec<f64>> = vals
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| vec![0.0; v.numel()]))
        .collect();

    let mut work: Vec<Tensor> = leaves.to_vec();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for (li, leaf) in leaves.iter().enumerate() {
        for i in 0..leaf.numel() {
            let orig = leaf.data()[i];
            work[li].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[li].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[li].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[li][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            coords += 1;
        }
    }
    Ok((worst, coords))
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Fixed projection weights so a non-scalar output becomes a scalar target.
fn proj(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Runs the finite-difference suite over every tape operation. The model and
/// loss composites get appended by [`check_all`] in the trainer path.
pub fn check_ops(seed: u64) -> Vec<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, res: Result<(f64, usize)>| {
        let (max_rel_err, coords) = res.expect("gradcheck case must build");
        out.push(OpCheck { name: name.to_string(), max_rel_err, coords });
    };

    {
        let leaves = [rand_tensor(&[3, 4], &mut rng), rand_tensor(&[3, 4], &mut rng)];
        let w = proj(12, &mut rng);
        push("add", max_rel_err(|t, v| t.weighted_sum(&t.add(&v[0], &v[1])?, &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[3, 4], &mut rng), rand_tensor(&[3, 4], &mut rng)];
        let w = proj(12, &mut rng);
        push("sub", max_rel_err(|t, v| t.weighted_sum(&t.sub(&v[0], &v[1])?, &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[3, 4], &mut rng), rand_tensor(&[3, 4], &mut rng)];
        let w = proj(12, &mut rng);
        push("mul", max_rel_err(|t, v| t.weighted_sum(&t.mul(&v[0], &v[1])?, &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[2, 5], &mut rng)];
        let w = proj(10, &mut rng);
        push("scale", max_rel_err(|t, v| t.weighted_sum(&t.scale(&v[0], -1.7), &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[2, 5], &mut rng)];
        let w = proj(10, &mut rng);
        push("add_scalar", max_rel_err(|t, v| t.weighted_sum(&t.add_scalar(&v[0], 0.37), &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[2, 5], &mut rng)];
        let w = proj(10, &mut rng);
        push("exp", max_rel_err(|t, v| t.weighted_sum(&t.exp(&v[0]), &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[2, 5], &mut rng)];
        let w = proj(10, &mut rng);
        push("gelu", max_rel_err(|t, v| t.weighted_sum(&t.gelu(&v[0]), &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[3, 4], &mut rng), rand_tensor(&[4, 2], &mut rng)];
        let w = proj(6, &mut rng);
        push("matmul", max_rel_err(|t, v| t.weighted_sum(&t.matmul(&v[0], &v[1])?, &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[4, 3], &mut rng)];
        let w = proj(16, &mut rng);
        push("gram", max_rel_err(|t, v| t.weighted_sum(&t.gram(&v[0])?, &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[3, 4], &mut rng), rand_tensor(&[4], &mut rng)];
        let w = proj(12, &mut rng);
        push("add_row_bias", max_rel_err(|t, v| t.weighted_sum(&t.add_row_bias(&v[0], &v[1])?, &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[3, 2], &mut rng), rand_tensor(&[3, 4], &mut rng)];
        let w = proj(18, &mut rng);
        push("concat_cols", max_rel_err(|t, v| t.weighted_sum(&t.concat_cols(&v[0], &v[1])?, &w), &leaves, FD_STEP));
    }
    for &dilation in &[1usize, 2] {
        let leaves = [rand_tensor(&[7, 2], &mut rng), rand_tensor(&[3, 2, 4], &mut rng)];
        let w = proj(28, &mut rng);
        push(
            &format!("conv1d_causal(d={dilation})"),
            max_rel_err(|t, v| t.weighted_sum(&t.conv1d_causal(&v[0], &v[1], dilation)?, &w), &leaves, FD_STEP),
        );
    }
    {
        let leaves = [rand_tensor(&[4, 3], &mut rng)];
        let w = proj(7 * 3, &mut rng);
        push("replicate_pad", max_rel_err(|t, v| t.weighted_sum(&t.replicate_pad(&v[0], 1, 2)?, &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[6, 2], &mut rng)];
        let w = proj(4 * 2, &mut rng);
        push("avgpool1d", max_rel_err(|t, v| t.weighted_sum(&t.avgpool1d(&v[0], 3)?, &w), &leaves, FD_STEP));
    }
    {
        // Keep entries separated by more than the FD step so the argmax is
        // stable under perturbation.
        let mut t = rand_tensor(&[5, 3], &mut rng);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = (*v * 100.0).round() / 100.0 + (i as f64) * 1e-3;
        }
        let leaves = [t];
        let w = proj(3, &mut rng);
        push("max_pool_time", max_rel_err(|t, v| t.weighted_sum(&t.max_pool_time(&v[0])?, &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[6], &mut rng), rand_tensor(&[6], &mut rng)];
        push("cosine_sim", max_rel_err(|t, v| t.cosine_sim(&v[0], &v[1]), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[4, 5], &mut rng)];
        let w = proj(20, &mut rng);
        push("l2_normalize_rows", max_rel_err(|t, v| t.weighted_sum(&t.l2_normalize_rows(&v[0])?, &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[3], &mut rng), rand_tensor(&[3], &mut rng), rand_tensor(&[3], &mut rng)];
        let w = proj(9, &mut rng);
        push(
            "stack_rows",
            max_rel_err(|t, v| t.weighted_sum(&t.stack_rows(&[v[0].clone(), v[1].clone(), v[2].clone()])?, &w), &leaves, FD_STEP),
        );
    }
    {
        let leaves = [rand_tensor(&[4, 3], &mut rng)];
        push("mean_all", max_rel_err(|t, v| Ok(t.mean_all(&v[0])), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[3, 3], &mut rng)];
        let w = proj(9, &mut rng);
        push("weighted_sum", max_rel_err(|t, v| t.weighted_sum(&v[0], &w), &leaves, FD_STEP));
    }
    {
        let leaves = [rand_tensor(&[4, 3], &mut rng)];
        let rels = vec![
            1.0, 0.7, 0.3, 0.5, //
            0.7, 1.0, 0.6, 0.2, //
            0.3, 0.6, 1.0, 0.9, //
            0.5, 0.2, 0.9, 1.0,
        ];
        push(
            "autocon_loss",
            max_rel_err(|t, v| crate::loss::autocon_loss(t, &v[0], &rels, 0.8), &leaves, FD_STEP),
        );
    }
    {
        // Positive exps with a fixed relation pattern.
        let n = 4;
        let mut e = rand_tensor(&[n, n], &mut rng);
        for v in e.data_mut().iter_mut() {
            *v = v.abs() + 0.5;
        }
        let mut rels = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                rels[i * n + j] = if i == j { 1.0 } else { ((i * 3 + j * 5) % 7) as f64 / 7.0 };
            }
        }
        let leaves = [e];
        let w = proj(n * n, &mut rng);
        push(
            "masked_log_denom",
            max_rel_err(|t, v| t.weighted_sum(&t.masked_log_denom(&v[0], &rels)?, &w), &leaves, FD_STEP),
        );
    }
    out
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        input_len: 7,
        output_len: 5,
        feat_dim: 2,
        repr_dim: 4,
        depth: 2,
        kernels: vec![1, 3],
        use_short: true,
        use_long: true,
    }
}

/// Finite-difference checks over the model composites: each branch and the
/// full combined objective on a small random batch. Perturbs every parameter
/// coordinate.
pub fn check_model(seed: u64) -> Vec<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f64656c);
    let cfg = tiny_model_config();
    let params = ModelParams::init(cfg.clone(), &mut rng).unwrap();
    let leaves: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t.clone()).collect();

    let batch = 3usize;
    let windows: Vec<(Vec<f64>, Vec<f64>, f64, Vec<f64>)> = (0..batch)
        .map(|_| {
            let input: Vec<f64> = (0..cfg.input_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let feats: Vec<f64> =
                (0..cfg.input_len * cfg.feat_dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mean = input.iter().sum::<f64>() / cfg.input_len as f64;
            let target: Vec<f64> = (0..cfg.output_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (input, feats, mean, target)
        })
        .collect();
    let relations = vec![
        1.0, 0.8, 0.3, //
        0.8, 1.0, 0.5, //
        0.3, 0.5, 1.0,
    ];

    let mut out = Vec::new();
    let mut push = |name: &str, res: Result<(f64, usize)>| {
        let (max_rel_err, coords) = res.expect("model gradcheck case must build");
        out.push(OpCheck { name: name.to_string(), max_rel_err, coords });
    };

    {
        let w = proj(cfg.output_len, &mut rng);
        let (input, feats, mean, _) = windows[0].clone();
        let cfg2 = cfg.clone();
        push(
            "model_forward",
            max_rel_err(
                move |t, v| {
                    let pv = ParamValues::from_values(&cfg2, v);
                    let parts =
                        model::forward(t, &pv, &cfg2, &WindowInput { input: &input, feats: &feats, mean })?;
                    t.weighted_sum(&parts.pred, &w)
                },
                &leaves,
                FD_STEP,
            ),
        );
    }
    {
        let cfg2 = cfg.clone();
        let windows2 = windows.clone();
        let relations2 = relations.clone();
        push(
            "full_objective",
            max_rel_err(
                move |t, v| {
                    let pv = ParamValues::from_values(&cfg2, v);
                    let mut preds = Vec::new();
                    let mut targets = Vec::new();
                    let mut pooled = Vec::new();
                    for (input, feats, mean, target) in &windows2 {
                        let parts =
                            model::forward(t, &pv, &cfg2, &WindowInput { input, feats, mean: *mean })?;
                        preds.push(parts.pred);
                        targets.push(t.leaf(&[cfg2.output_len, 1], target.clone())?);
                        pooled.push(parts.pooled.expect("long branch on"));
                    }
                    let bundle = model::total_loss(
                        t,
                        &preds,
                        &targets,
                        &[pooled],
                        std::slice::from_ref(&relations2),
                        0.3,
                        0.9,
                    )?;
                    Ok(bundle.total)
                },
                &leaves,
                FD_STEP,
            ),
        );
    }
    out
}

/// Every registered check: one entry per tape op plus the model composites.
pub fn check_all(seed: u64) -> Vec<OpCheck> {
    let mut out = check_ops(seed);
    out.extend(check_model(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_tape_ops_match_finite_differences() {
        for seed in 0..3 {
            for check in check_ops(seed) {
                assert!(
                    check.passed(1e-4),
                    "op {} seed {seed}: max rel err {:.3e}",
                    check.name,
                    check.max_rel_err
                );
            }
        }
    }

    #[test]
    fn model_composites_match_finite_differences() {
        for check in check_all(1) {
            assert!(
                check.passed(1e-4),
                "{}: max rel err {:.3e} over {} coords",
                check.name,
                check.max_rel_err,
                check.coords
            );
        }
    }

    #[test]
    fn polynomial_gradient_is_exact() {
        // f(x) = x² at x = 3 ⇒ df/dx = 6.
        let tape = Tape::new();
        let x = tape.leaf(&[1], vec![3.0]).unwrap();
        let y = tape.mul(&x, &x).unwrap();
        tape.backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn constant_loss_has_zero_grads() {
        let tape = Tape::new();
        let x = tape.leaf(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = tape.scale(&x, 0.0);
        let loss = tape.mean_all(&c);
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn gelu_of_random_linear_map_matches_differences() {
        // f(x) = Σ gelu(Wx) over a random 4×4 W.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let leaves = [rand_tensor(&[4, 4], &mut rng), rand_tensor(&[4, 1], &mut rng)];
        let (err, coords) = max_rel_err(
            |t, v| {
                let h = t.gelu(&t.matmul(&v[0], &v[1])?);
                Ok(t.scale(&t.mean_all(&h), 4.0))
            },
            &leaves,
            FD_STEP,
        )
        .unwrap();
        assert_eq!(coords, 20);
        assert!(err < 1e-5, "rel err {err:.3e}");
    }
}
