//! Reverse-mode automatic differentiation over shaped `f64` buffers.
//!
//! Operations are recorded on a [`Tape`] during the forward pass and replayed
//! in reverse by [`Tape::backward`] to accumulate gradients. Every buffer is
//! row-major. A tape is single-threaded; distinct tapes are independent.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Norm stabilizer for cosine similarity and row normalization: each norm is
/// `‖x‖ + EPS_NORM`, so a zero vector yields similarity 0 instead of NaN.
pub const EPS_NORM: f64 = 1e-12;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Exact GELU: `x · Φ(x)` with `Φ` the standard normal CDF in erf form.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// One recorded operation. Parent node ids plus whatever forward context the
/// backward rule needs (argmax positions, denominators, constant weights).
enum Op {
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    AddScalar { x: usize },
    Exp { x: usize },
    Gelu { x: usize },
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Gram { x: usize, n: usize, d: usize },
    AddRowBias { x: usize, b: usize, rows: usize, cols: usize },
    ConcatCols { a: usize, b: usize, rows: usize, ca: usize, cb: usize },
    Conv1dCausal { x: usize, kernel: usize, len: usize, cin: usize, cout: usize, ksize: usize, dilation: usize },
    ReplicatePad { x: usize, left: usize, right: usize, len: usize, cols: usize },
    AvgPool1d { x: usize, k: usize, len: usize, cols: usize },
    MaxPoolTime { x: usize, cols: usize, argmax: Vec<usize> },
    CosineSim { a: usize, b: usize },
    L2NormalizeRows { x: usize, rows: usize, cols: usize },
    StackRows { parts: Vec<usize>, cols: usize },
    MeanAll { x: usize },
    WeightedSum { x: usize, weights: Vec<f64> },
    MaskedLogDenom { exps: usize, relations: Vec<f64>, denoms: Vec<f64>, n: usize },
}

struct Record {
    out: usize,
    op: Op,
}

#[derive(Default)]
struct TapeInner {
    shapes: Vec<Vec<usize>>,
    datas: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    records: Vec<Record>,
}

impl TapeInner {
    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Option<Op>) -> usize {
        debug_assert_eq!(numel(&shape), data.len());
        let id = self.datas.len();
        self.shapes.push(shape);
        self.datas.push(data);
        self.grads.push(Vec::new());
        if let Some(op) = op {
            self.records.push(Record { out: id, op });
        }
        id
    }
}

/// Handle to one node on a tape. Cheap to clone; the buffer lives in the tape.
#[derive(Clone)]
pub struct Value {
    id: usize,
    shape: Vec<usize>,
    tape: Tape,
}

impl std::fmt::Debug for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Value").field("id", &self.id).field("shape", &self.shape).finish()
    }
}

impl Value {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    /// Copy of the forward buffer.
    pub fn data(&self) -> Vec<f64> {
        self.tape.inner.borrow().datas[self.id].clone()
    }

    /// Copy of the gradient buffer; `None` before any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let inner = self.tape.inner.borrow();
        let g = &inner.grads[self.id];
        if g.is_empty() {
            None
        } else {
            Some(g.clone())
        }
    }

    /// Scalar contents; panics if the node is not a scalar.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar value");
        self.tape.inner.borrow().datas[self.id][0]
    }
}

/// Records a computation graph and replays it in reverse.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.inner.borrow().datas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn make(&self, shape: Vec<usize>, data: Vec<f64>, op: Option<Op>) -> Value {
        let id = self.inner.borrow_mut().push(shape.clone(), data, op);
        Value { id, shape, tape: self.clone() }
    }

    fn check_owned(&self, v: &Value) {
        debug_assert!(Rc::ptr_eq(&self.inner, &v.tape.inner), "value from a different tape");
    }

    /// New leaf node holding `data`.
    pub fn leaf(&self, shape: &[usize], data: Vec<f64>) -> Result<Value> {
        if numel(shape) != data.len() {
            return Err(Error::Dimension(format!(
                "leaf shape {:?} implies {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(self.make(shape.to_vec(), data, None))
    }

    pub fn scalar(&self, v: f64) -> Value {
        self.make(vec![1], vec![v], None)
    }

    // ── Elementwise ──────────────────────────────────────────────────

    pub fn add(&self, a: &Value, b: &Value) -> Result<Value> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&self, a: &Value, b: &Value) -> Result<Value> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&self, a: &Value, b: &Value) -> Result<Value> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn binary_same_shape(
        &self,
        a: &Value,
        b: &Value,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Value> {
        self.check_owned(a);
        self.check_owned(b);
        if a.shape != b.shape {
            return Err(Error::Dimension(format!(
                "{name}: shapes {:?} and {:?} differ",
                a.shape, b.shape
            )));
        }
        let inner = self.inner.borrow();
        let data: Vec<f64> = inner.datas[a.id]
            .iter()
            .zip(&inner.datas[b.id])
            .map(|(&x, &y)| f(x, y))
            .collect();
        drop(inner);
        Ok(self.make(a.shape.clone(), data, Some(op(a.id, b.id))))
    }

    /// `x * c` for a constant `c`.
    pub fn scale(&self, x: &Value, c: f64) -> Value {
        self.check_owned(x);
        let data: Vec<f64> = self.inner.borrow().datas[x.id].iter().map(|&v| v * c).collect();
        self.make(x.shape.clone(), data, Some(Op::Scale { x: x.id, c }))
    }

    /// `x + c` elementwise for a constant `c`.
    pub fn add_scalar(&self, x: &Value, c: f64) -> Value {
        self.check_owned(x);
        let data: Vec<f64> = self.inner.borrow().datas[x.id].iter().map(|&v| v + c).collect();
        self.make(x.shape.clone(), data, Some(Op::AddScalar { x: x.id }))
    }

    pub fn exp(&self, x: &Value) -> Value {
        self.check_owned(x);
        let data: Vec<f64> = self.inner.borrow().datas[x.id].iter().map(|&v| v.exp()).collect();
        self.make(x.shape.clone(), data, Some(Op::Exp { x: x.id }))
    }

    /// Exact GELU, `x·Φ(x)` with the erf-form normal CDF.
    pub fn gelu(&self, x: &Value) -> Value {
        self.check_owned(x);
        let data: Vec<f64> = self.inner.borrow().datas[x.id].iter().map(|&v| gelu_scalar(v)).collect();
        self.make(x.shape.clone(), data, Some(Op::Gelu { x: x.id }))
    }

    // ── Linear algebra ───────────────────────────────────────────────

    /// `a[m×k] · b[k×n] -> [m×n]`.
    pub fn matmul(&self, a: &Value, b: &Value) -> Result<Value> {
        self.check_owned(a);
        self.check_owned(b);
        let (m, ka) = as_2d(&a.shape, "matmul lhs")?;
        let (kb, n) = as_2d(&b.shape, "matmul rhs")?;
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul: inner dimensions disagree, lhs {:?} vs rhs {:?}",
                a.shape, b.shape
            )));
        }
        let inner = self.inner.borrow();
        let data = matmul_raw(&inner.datas[a.id], &inner.datas[b.id], m, ka, n);
        drop(inner);
        Ok(self.make(vec![m, n], data, Some(Op::Matmul { a: a.id, b: b.id, m, k: ka, n })))
    }

    /// `x[n×d] · xᵀ -> [n×n]` (pairwise row dot products).
    pub fn gram(&self, x: &Value) -> Result<Value> {
        self.check_owned(x);
        let (n, d) = as_2d(&x.shape, "gram")?;
        let inner = self.inner.borrow();
        let xd = &inner.datas[x.id];
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            let ri = &xd[i * d..(i + 1) * d];
            for j in i..n {
                let rj = &xd[j * d..(j + 1) * d];
                let dot: f64 = ri.iter().zip(rj).map(|(&p, &q)| p * q).sum();
                data[i * n + j] = dot;
                data[j * n + i] = dot;
            }
        }
        drop(inner);
        Ok(self.make(vec![n, n], data, Some(Op::Gram { x: x.id, n, d })))
    }

    /// Adds `b[cols]` to every row of `x[rows×cols]`.
    pub fn add_row_bias(&self, x: &Value, b: &Value) -> Result<Value> {
        self.check_owned(x);
        self.check_owned(b);
        let (rows, cols) = as_2d(&x.shape, "add_row_bias input")?;
        if b.shape != [cols] {
            return Err(Error::Dimension(format!(
                "add_row_bias: bias shape {:?} does not match row width {cols}",
                b.shape
            )));
        }
        let inner = self.inner.borrow();
        let bd = &inner.datas[b.id];
        let data: Vec<f64> = inner.datas[x.id]
            .chunks(cols)
            .flat_map(|row| row.iter().zip(bd).map(|(&v, &bv)| v + bv))
            .collect();
        drop(inner);
        Ok(self.make(vec![rows, cols], data, Some(Op::AddRowBias { x: x.id, b: b.id, rows, cols })))
    }

    /// Column-wise concatenation `[a ‖ b]` of `[m×ca]` and `[m×cb]`.
    pub fn concat_cols(&self, a: &Value, b: &Value) -> Result<Value> {
        self.check_owned(a);
        self.check_owned(b);
        let (ra, ca) = as_2d(&a.shape, "concat_cols lhs")?;
        let (rb, cb) = as_2d(&b.shape, "concat_cols rhs")?;
        if ra != rb {
            return Err(Error::Dimension(format!(
                "concat_cols: row counts differ, {:?} vs {:?}",
                a.shape, b.shape
            )));
        }
        let inner = self.inner.borrow();
        let (ad, bd) = (&inner.datas[a.id], &inner.datas[b.id]);
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&ad[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&bd[r * cb..(r + 1) * cb]);
        }
        drop(inner);
        Ok(self.make(vec![ra, ca + cb], data, Some(Op::ConcatCols { a: a.id, b: b.id, rows: ra, ca, cb })))
    }

    // ── Sequence ops ─────────────────────────────────────────────────

    /// Causal dilated 1-d convolution. `x[L×cin]`, `kernel[k×cin×cout]`,
    /// zero left-padding of `(k−1)·dilation` so the output keeps length `L`
    /// and `out[t]` depends only on inputs at times `≤ t`. The last kernel tap
    /// aligns with the current step.
    pub fn conv1d_causal(&self, x: &Value, kernel: &Value, dilation: usize) -> Result<Value> {
        self.check_owned(x);
        self.check_owned(kernel);
        if dilation == 0 {
            return Err(Error::Parameter("conv1d_causal: dilation must be >= 1".into()));
        }
        let (len, cin) = as_2d(&x.shape, "conv1d_causal input")?;
        let (ksize, kcin, cout) = as_3d(&kernel.shape, "conv1d_causal kernel")?;
        if kcin != cin {
            return Err(Error::Dimension(format!(
                "conv1d_causal: input channels {cin} vs kernel {:?}",
                kernel.shape
            )));
        }
        let inner = self.inner.borrow();
        let xd = &inner.datas[x.id];
        let kd = &inner.datas[kernel.id];
        let mut data = vec![0.0; len * cout];
        for t in 0..len {
            let out_row = &mut data[t * cout..(t + 1) * cout];
            for j in 0..ksize {
                let back = (ksize - 1 - j) * dilation;
                if back > t {
                    continue;
                }
                let s = t - back;
                for ci in 0..cin {
                    let xv = xd[s * cin + ci];
                    if xv == 0.0 {
                        continue;
                    }
                    let krow = &kd[(j * cin + ci) * cout..(j * cin + ci + 1) * cout];
                    for (o, &kv) in out_row.iter_mut().zip(krow) {
                        *o += xv * kv;
                    }
                }
            }
        }
        drop(inner);
        Ok(self.make(
            vec![len, cout],
            data,
            Some(Op::Conv1dCausal { x: x.id, kernel: kernel.id, len, cin, cout, ksize, dilation }),
        ))
    }

    /// Prepends `left` copies of the first row and appends `right` copies of
    /// the last row of `x[L×c]`.
    pub fn replicate_pad(&self, x: &Value, left: usize, right: usize) -> Result<Value> {
        self.check_owned(x);
        let (len, cols) = as_2d(&x.shape, "replicate_pad input")?;
        if len == 0 {
            return Err(Error::Domain("replicate_pad: empty input".into()));
        }
        let inner = self.inner.borrow();
        let xd = &inner.datas[x.id];
        let mut data = Vec::with_capacity((len + left + right) * cols);
        for _ in 0..left {
            data.extend_from_slice(&xd[..cols]);
        }
        data.extend_from_slice(xd);
        for _ in 0..right {
            data.extend_from_slice(&xd[(len - 1) * cols..]);
        }
        drop(inner);
        Ok(self.make(
            vec![len + left + right, cols],
            data,
            Some(Op::ReplicatePad { x: x.id, left, right, len, cols }),
        ))
    }

    /// Sliding mean with stride 1: `x[L×c] -> [(L−k+1)×c]`.
    pub fn avgpool1d(&self, x: &Value, k: usize) -> Result<Value> {
        self.check_owned(x);
        let (len, cols) = as_2d(&x.shape, "avgpool1d input")?;
        if k == 0 || k > len {
            return Err(Error::Parameter(format!(
                "avgpool1d: kernel {k} outside [1, {len}]"
            )));
        }
        let inner = self.inner.borrow();
        let xd = &inner.datas[x.id];
        let out_len = len - k + 1;
        let inv = 1.0 / k as f64;
        let mut data = vec![0.0; out_len * cols];
        for t in 0..out_len {
            let row = &mut data[t * cols..(t + 1) * cols];
            for i in 0..k {
                let src = &xd[(t + i) * cols..(t + i + 1) * cols];
                for (o, &v) in row.iter_mut().zip(src) {
                    *o += v;
                }
            }
            for o in row.iter_mut() {
                *o *= inv;
            }
        }
        drop(inner);
        Ok(self.make(vec![out_len, cols], data, Some(Op::AvgPool1d { x: x.id, k, len, cols })))
    }

    /// Elementwise max over the time axis: `v[I×d] -> [d]`. The subgradient
    /// routes to the earliest argmax row per channel.
    pub fn max_pool_time(&self, x: &Value) -> Result<Value> {
        self.check_owned(x);
        let (rows, cols) = as_2d(&x.shape, "max_pool_time input")?;
        if rows == 0 {
            return Err(Error::Domain("max_pool_time: empty input".into()));
        }
        let inner = self.inner.borrow();
        let xd = &inner.datas[x.id];
        let mut data = xd[..cols].to_vec();
        let mut argmax = vec![0usize; cols];
        for r in 1..rows {
            for c in 0..cols {
                let v = xd[r * cols + c];
                if v > data[c] {
                    data[c] = v;
                    argmax[c] = r;
                }
            }
        }
        drop(inner);
        Ok(self.make(vec![cols], data, Some(Op::MaxPoolTime { x: x.id, cols, argmax })))
    }

    /// Cosine similarity of two equal-length vectors, stabilized by
    /// [`EPS_NORM`] added to each norm.
    pub fn cosine_sim(&self, a: &Value, b: &Value) -> Result<Value> {
        self.check_owned(a);
        self.check_owned(b);
        if a.shape != b.shape || a.shape.len() != 1 {
            return Err(Error::Dimension(format!(
                "cosine_sim: expected equal vectors, got {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let inner = self.inner.borrow();
        let c = cosine_raw(&inner.datas[a.id], &inner.datas[b.id]);
        drop(inner);
        Ok(self.make(vec![1], vec![c], Some(Op::CosineSim { a: a.id, b: b.id })))
    }

    /// Divides each row of `x[rows×cols]` by its stabilized L2 norm, so the
    /// gram matrix of the result is the pairwise cosine similarity matrix.
    pub fn l2_normalize_rows(&self, x: &Value) -> Result<Value> {
        self.check_owned(x);
        let (rows, cols) = as_2d(&x.shape, "l2_normalize_rows input")?;
        let inner = self.inner.borrow();
        let xd = &inner.datas[x.id];
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS_NORM;
            data.extend(row.iter().map(|&v| v / norm));
        }
        drop(inner);
        Ok(self.make(vec![rows, cols], data, Some(Op::L2NormalizeRows { x: x.id, rows, cols })))
    }

    /// Stacks equal-length vectors into a `[N×d]` matrix.
    pub fn stack_rows(&self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(Error::Domain("stack_rows: no rows".into()));
        }
        let cols = parts[0].numel();
        let mut ids = Vec::with_capacity(parts.len());
        for p in parts {
            self.check_owned(p);
            if p.shape.len() != 1 || p.numel() != cols {
                return Err(Error::Dimension(format!(
                    "stack_rows: row shape {:?} does not match width {cols}",
                    p.shape
                )));
            }
            ids.push(p.id);
        }
        let inner = self.inner.borrow();
        let mut data = Vec::with_capacity(parts.len() * cols);
        for &id in &ids {
            data.extend_from_slice(&inner.datas[id]);
        }
        drop(inner);
        Ok(self.make(vec![parts.len(), cols], data, Some(Op::StackRows { parts: ids, cols })))
    }

    /// Mean over all elements, as a scalar node.
    pub fn mean_all(&self, x: &Value) -> Value {
        self.check_owned(x);
        let inner = self.inner.borrow();
        let xd = &inner.datas[x.id];
        let mean = xd.iter().sum::<f64>() / xd.len() as f64;
        drop(inner);
        self.make(vec![1], vec![mean], Some(Op::MeanAll { x: x.id }))
    }

    /// Scalar `Σ w ⊙ x` with constant weights `w`.
    pub fn weighted_sum(&self, x: &Value, weights: &[f64]) -> Result<Value> {
        self.check_owned(x);
        if weights.len() != x.numel() {
            return Err(Error::Dimension(format!(
                "weighted_sum: {} weights for {} elements",
                weights.len(),
                x.numel()
            )));
        }
        let inner = self.inner.borrow();
        let s: f64 = inner.datas[x.id].iter().zip(weights).map(|(&v, &w)| v * w).sum();
        drop(inner);
        Ok(self.make(vec![1], vec![s], Some(Op::WeightedSum { x: x.id, weights: weights.to_vec() })))
    }

    /// Relative-selection denominators of the contrastive objective, in log
    /// space. Given `exps[i,k] = exp(Sim(i,k)/τ)` and the constant relation
    /// matrix, produces `out[i,j] = log Σ_k 1[k≠i, r(i,k) ≤ r(i,j)] exps[i,k]`
    /// for `j ≠ i` (diagonal entries are 0 and carry no gradient). The
    /// indicator uses `≤`, so `k = j` is always a member and each denominator
    /// is strictly positive.
    pub fn masked_log_denom(&self, exps: &Value, relations: &[f64]) -> Result<Value> {
        self.check_owned(exps);
        let (n, n2) = as_2d(&exps.shape, "masked_log_denom input")?;
        if n != n2 || relations.len() != n * n {
            return Err(Error::Dimension(format!(
                "masked_log_denom: exps {:?} with {} relations",
                exps.shape,
                relations.len()
            )));
        }
        let inner = self.inner.borrow();
        let ed = &inner.datas[exps.id];
        let mut denoms = vec![0.0; n * n];
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let rij = relations[i * n + j];
                let mut den = 0.0;
                for k in 0..n {
                    if k != i && relations[i * n + k] <= rij {
                        den += ed[i * n + k];
                    }
                }
                denoms[i * n + j] = den;
                data[i * n + j] = den.ln();
            }
        }
        drop(inner);
        Ok(self.make(
            vec![n, n],
            data,
            Some(Op::MaskedLogDenom { exps: exps.id, relations: relations.to_vec(), denoms, n }),
        ))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Gradients accumulate into every
    /// reachable node; calling backward again without [`Tape::zero_grads`]
    /// adds another pass on top.
    pub fn backward(&self, loss: &Value) -> Result<()> {
        self.check_owned(loss);
        if loss.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape
            )));
        }
        let mut inner = self.inner.borrow_mut();
        let TapeInner { shapes, datas, grads, records } = &mut *inner;

        // Propagate in a fresh workspace so a repeated backward contributes
        // exactly one more pass, then fold into the persistent buffers.
        let mut work: Vec<Vec<f64>> = shapes.iter().map(|s| vec![0.0; numel(s)]).collect();
        work[loss.id][0] = 1.0;
        for rec in records.iter().rev() {
            let g = std::mem::take(&mut work[rec.out]);
            backward_op(&rec.op, &g, datas, &mut work);
            work[rec.out] = g;
        }
        for (dst, src) in grads.iter_mut().zip(&work) {
            if dst.is_empty() {
                *dst = src.clone();
            } else {
                axpy(dst, src, 1.0);
            }
        }
        Ok(())
    }

    /// Clears all gradient buffers.
    pub fn zero_grads(&self) {
        for g in self.inner.borrow_mut().grads.iter_mut() {
            g.clear();
        }
    }
}

fn as_2d(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::Dimension(format!("{what}: expected 2-d shape, got {shape:?}"))),
    }
}

fn as_3d(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(Error::Dimension(format!("{what}: expected 3-d shape, got {shape:?}"))),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn cosine_raw(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS_NORM;
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS_NORM;
    dot / (na * nb)
}

fn backward_op(op: &Op, g: &[f64], datas: &[Vec<f64>], grads: &mut [Vec<f64>]) {
    match op {
        Op::Add { a, b } => {
            axpy(&mut grads[*a], g, 1.0);
            axpy(&mut grads[*b], g, 1.0);
        }
        Op::Sub { a, b } => {
            axpy(&mut grads[*a], g, 1.0);
            axpy(&mut grads[*b], g, -1.0);
        }
        Op::Mul { a, b } => {
            let (ad, bd) = (&datas[*a], &datas[*b]);
            for (i, &gv) in g.iter().enumerate() {
                grads[*a][i] += gv * bd[i];
            }
            for (i, &gv) in g.iter().enumerate() {
                grads[*b][i] += gv * ad[i];
            }
        }
        Op::Scale { x, c } => axpy(&mut grads[*x], g, *c),
        Op::AddScalar { x } => axpy(&mut grads[*x], g, 1.0),
        Op::Exp { x } => {
            // d exp(x) = exp(x) dx; forward values are in datas via the output,
            // but recomputing from the input keeps this rule self-contained.
            let xd = &datas[*x];
            for (i, &gv) in g.iter().enumerate() {
                grads[*x][i] += gv * xd[i].exp();
            }
        }
        Op::Gelu { x } => {
            let xd = &datas[*x];
            for (i, &gv) in g.iter().enumerate() {
                let v = xd[i];
                grads[*x][i] += gv * (normal_cdf(v) + v * normal_pdf(v));
            }
        }
        Op::Matmul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let (ad, bd) = (&datas[*a], &datas[*b]);
            // dA = G · Bᵀ
            {
                let ga = &mut grads[*a];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let brow = &bd[kk * n..(kk + 1) * n];
                        let dot: f64 = grow.iter().zip(brow).map(|(&p, &q)| p * q).sum();
                        ga[i * k + kk] += dot;
                    }
                }
            }
            // dB = Aᵀ · G
            {
                let gb = &mut grads[*b];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let av = ad[i * k + kk];
                        if av == 0.0 {
                            continue;
                        }
                        let brow = &mut gb[kk * n..(kk + 1) * n];
                        for (o, &gv) in brow.iter_mut().zip(grow) {
                            *o += av * gv;
                        }
                    }
                }
            }
        }
        Op::Gram { x, n, d } => {
            // out = X Xᵀ ⇒ dX = (G + Gᵀ) X
            let (n, d) = (*n, *d);
            let xd = &datas[*x];
            let gx = &mut grads[*x];
            for i in 0..n {
                let grow = &mut gx[i * d..(i + 1) * d];
                for j in 0..n {
                    let coeff = g[i * n + j] + g[j * n + i];
                    if coeff == 0.0 {
                        continue;
                    }
                    let xrow = &xd[j * d..(j + 1) * d];
                    for (o, &xv) in grow.iter_mut().zip(xrow) {
                        *o += coeff * xv;
                    }
                }
            }
        }
        Op::AddRowBias { x, b, rows, cols } => {
            axpy(&mut grads[*x], g, 1.0);
            let gb = &mut grads[*b];
            for r in 0..*rows {
                for c in 0..*cols {
                    gb[c] += g[r * cols + c];
                }
            }
        }
        Op::ConcatCols { a, b, rows, ca, cb } => {
            let w = ca + cb;
            {
                let ga = &mut grads[*a];
                for r in 0..*rows {
                    for c in 0..*ca {
                        ga[r * ca + c] += g[r * w + c];
                    }
                }
            }
            let gb = &mut grads[*b];
            for r in 0..*rows {
                for c in 0..*cb {
                    gb[r * cb + c] += g[r * w + ca + c];
                }
            }
        }
        Op::Conv1dCausal { x, kernel, len, cin, cout, ksize, dilation } => {
            let (len, cin, cout, ksize, dil) = (*len, *cin, *cout, *ksize, *dilation);
            let xd = &datas[*x];
            let kd = &datas[*kernel];
            {
                let gk = &mut grads[*kernel];
                for t in 0..len {
                    let grow = &g[t * cout..(t + 1) * cout];
                    for j in 0..ksize {
                        let back = (ksize - 1 - j) * dil;
                        if back > t {
                            continue;
                        }
                        let s = t - back;
                        for ci in 0..cin {
                            let xv = xd[s * cin + ci];
                            if xv == 0.0 {
                                continue;
                            }
                            let krow = &mut gk[(j * cin + ci) * cout..(j * cin + ci + 1) * cout];
                            for (o, &gv) in krow.iter_mut().zip(grow) {
                                *o += xv * gv;
                            }
                        }
                    }
                }
            }
            let gx = &mut grads[*x];
            for t in 0..len {
                let grow = &g[t * cout..(t + 1) * cout];
                for j in 0..ksize {
                    let back = (ksize - 1 - j) * dil;
                    if back > t {
                        continue;
                    }
                    let s = t - back;
                    for ci in 0..cin {
                        let krow = &kd[(j * cin + ci) * cout..(j * cin + ci + 1) * cout];
                        let dot: f64 = krow.iter().zip(grow).map(|(&p, &q)| p * q).sum();
                        gx[s * cin + ci] += dot;
                    }
                }
            }
        }
        Op::ReplicatePad { x, left, right, len, cols } => {
            let gx = &mut grads[*x];
            let (left, right, len, cols) = (*left, *right, *len, *cols);
            for r in 0..left + len + right {
                let src = r.saturating_sub(left).min(len - 1);
                for c in 0..cols {
                    gx[src * cols + c] += g[r * cols + c];
                }
            }
        }
        Op::AvgPool1d { x, k, len, cols } => {
            let (k, len, cols) = (*k, *len, *cols);
            let inv = 1.0 / k as f64;
            let gx = &mut grads[*x];
            let out_len = len - k + 1;
            for t in 0..out_len {
                let grow = &g[t * cols..(t + 1) * cols];
                for i in 0..k {
                    let dst = &mut gx[(t + i) * cols..(t + i + 1) * cols];
                    for (o, &gv) in dst.iter_mut().zip(grow) {
                        *o += gv * inv;
                    }
                }
            }
        }
        Op::MaxPoolTime { x, cols, argmax } => {
            let gx = &mut grads[*x];
            for c in 0..*cols {
                gx[argmax[c] * cols + c] += g[c];
            }
        }
        Op::CosineSim { a, b } => {
            let (ad, bd) = (&datas[*a], &datas[*b]);
            let dot: f64 = ad.iter().zip(bd).map(|(&x, &y)| x * y).sum();
            let na = ad.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS_NORM;
            let nb = bd.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS_NORM;
            let gv = g[0];
            {
                let ga = &mut grads[*a];
                for i in 0..ad.len() {
                    ga[i] += gv * (bd[i] / (na * nb) - dot * ad[i] / (na * na * na * nb));
                }
            }
            let gb = &mut grads[*b];
            for i in 0..bd.len() {
                gb[i] += gv * (ad[i] / (na * nb) - dot * bd[i] / (nb * nb * nb * na));
            }
        }
        Op::L2NormalizeRows { x, rows, cols } => {
            let xd = &datas[*x];
            let gx = &mut grads[*x];
            for r in 0..*rows {
                let row = &xd[r * cols..(r + 1) * cols];
                let grow = &g[r * cols..(r + 1) * cols];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS_NORM;
                let y: Vec<f64> = row.iter().map(|&v| v / norm).collect();
                let gy_dot: f64 = grow.iter().zip(&y).map(|(&p, &q)| p * q).sum();
                let dst = &mut gx[r * cols..(r + 1) * cols];
                for i in 0..*cols {
                    dst[i] += (grow[i] - y[i] * gy_dot) / norm;
                }
            }
        }
        Op::StackRows { parts, cols } => {
            for (r, &id) in parts.iter().enumerate() {
                axpy(&mut grads[id], &g[r * cols..(r + 1) * cols], 1.0);
            }
        }
        Op::MeanAll { x } => {
            let gx = &mut grads[*x];
            let inv = g[0] / gx.len() as f64;
            for o in gx.iter_mut() {
                *o += inv;
            }
        }
        Op::WeightedSum { x, weights } => {
            let gx = &mut grads[*x];
            let gv = g[0];
            for (o, &w) in gx.iter_mut().zip(weights) {
                *o += gv * w;
            }
        }
        Op::MaskedLogDenom { exps, relations, denoms, n } => {
            // out[i,j] = ln Σ_masked E[i,k] ⇒ dE[i,k] += g[i,j] / denom(i,j)
            let n = *n;
            let ge = &mut grads[*exps];
            for i in 0..n {
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let gv = g[i * n + j];
                    if gv == 0.0 {
                        continue;
                    }
                    let rij = relations[i * n + j];
                    let scale = gv / denoms[i * n + j];
                    for k in 0..n {
                        if k != i && relations[i * n + k] <= rij {
                            ge[i * n + k] += scale;
                        }
                    }
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o += v * c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_hand_case() {
        let tape = Tape::new();
        let a = tape.leaf(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = tape.leaf(&[2, 1], vec![1.0, 1.0]).unwrap();
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.data(), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let a = tape.leaf(&[2, 3], vec![0.5, -1.0, 2.0, 3.5, 0.0, -2.5]).unwrap();
        let eye = tape.leaf(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(tape.matmul(&a, &eye).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(&[2, 3], vec![0.0; 6]).unwrap();
        let b = tape.leaf(&[2, 2], vec![0.0; 4]).unwrap();
        let err = tape.matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        // 1 · Φ(1) from the erf form.
        assert!(close(gelu_scalar(1.0), 0.8413447460685429, 1e-12));
        assert!(gelu_scalar(-10.0).abs() < 1e-8, "deep tail must vanish");
    }

    #[test]
    fn conv1d_hand_cases() {
        let tape = Tape::new();
        let x = tape.leaf(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = tape.leaf(&[2, 1, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(tape.conv1d_causal(&x, &k, 1).unwrap().data(), vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(tape.conv1d_causal(&x, &k, 2).unwrap().data(), vec![1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn conv1d_identity_tap() {
        let tape = Tape::new();
        let x = tape.leaf(&[5, 1], vec![2.0, -1.0, 0.5, 3.0, 7.0]).unwrap();
        let k = tape.leaf(&[3, 1, 1], vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(tape.conv1d_causal(&x, &k, 1).unwrap().data(), x.data());
    }

    #[test]
    fn conv1d_rejects_zero_dilation() {
        let tape = Tape::new();
        let x = tape.leaf(&[4, 1], vec![0.0; 4]).unwrap();
        let k = tape.leaf(&[2, 1, 1], vec![0.0; 2]).unwrap();
        assert!(matches!(tape.conv1d_causal(&x, &k, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn replicate_pad_cases() {
        let tape = Tape::new();
        let x = tape.leaf(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(tape.replicate_pad(&x, 1, 1).unwrap().data(), vec![1.0, 1.0, 2.0, 3.0, 3.0]);
        assert_eq!(tape.replicate_pad(&x, 0, 0).unwrap().data(), x.data());
        let single = tape.leaf(&[1, 1], vec![5.0]).unwrap();
        assert_eq!(tape.replicate_pad(&single, 2, 2).unwrap().data(), vec![5.0; 5]);
    }

    #[test]
    fn avgpool_hand_case() {
        let tape = Tape::new();
        let x = tape.leaf(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let padded = tape.replicate_pad(&x, 1, 1).unwrap();
        let pooled = tape.avgpool1d(&padded, 3).unwrap();
        let want = [4.0 / 3.0, 2.0, 3.0, 11.0 / 3.0];
        for (got, want) in pooled.data().iter().zip(want) {
            assert!(close(*got, want, 1e-15));
        }
        // k = 1 is the identity; constants stay constant for any k.
        assert_eq!(tape.avgpool1d(&x, 1).unwrap().data(), x.data());
        let c = tape.leaf(&[5, 1], vec![2.5; 5]).unwrap();
        assert_eq!(tape.avgpool1d(&c, 4).unwrap().data(), vec![2.5, 2.5]);
        assert!(matches!(tape.avgpool1d(&x, 5), Err(Error::Parameter(_))));
    }

    #[test]
    fn length_preserving_pad_pool_pair() {
        // replicate_pad(⌊(k−1)/2⌋, ⌈(k−1)/2⌉) then avgpool1d(k) keeps length.
        let tape = Tape::new();
        for len in 1..8usize {
            for k in 1..10usize {
                let x = tape.leaf(&[len, 2], (0..len * 2).map(|i| i as f64).collect()).unwrap();
                let padded = tape.replicate_pad(&x, (k - 1) / 2, k / 2).unwrap();
                let pooled = tape.avgpool1d(&padded, k).unwrap();
                assert_eq!(pooled.shape(), &[len, 2], "len {len} k {k}");
            }
        }
    }

    #[test]
    fn max_pool_time_cases() {
        let tape = Tape::new();
        let x = tape.leaf(&[2, 2], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        assert_eq!(tape.max_pool_time(&x).unwrap().data(), vec![3.0, 5.0]);
        let single = tape.leaf(&[1, 3], vec![4.0, -1.0, 0.0]).unwrap();
        assert_eq!(tape.max_pool_time(&single).unwrap().data(), vec![4.0, -1.0, 0.0]);
    }

    #[test]
    fn max_pool_grad_is_one_hot_at_argmax() {
        let tape = Tape::new();
        let x = tape.leaf(&[3, 2], vec![1.0, 9.0, 7.0, 2.0, 7.0, 3.0]).unwrap();
        let pooled = tape.max_pool_time(&x).unwrap();
        let loss = tape.scale(&tape.mean_all(&pooled), 2.0); // sum of the two maxima
        tape.backward(&loss).unwrap();
        // Column 0 ties at rows 1 and 2 with value 7: earliest row wins.
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cosine_sim_cases() {
        let tape = Tape::new();
        let a = tape.leaf(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(close(tape.cosine_sim(&a, &a).unwrap().item(), 1.0, 1e-9));
        let e1 = tape.leaf(&[2], vec![1.0, 0.0]).unwrap();
        let e2 = tape.leaf(&[2], vec![0.0, 1.0]).unwrap();
        let neg = tape.leaf(&[2], vec![-1.0, 0.0]).unwrap();
        assert!(close(tape.cosine_sim(&e1, &e2).unwrap().item(), 0.0, 1e-12));
        assert!(close(tape.cosine_sim(&e1, &neg).unwrap().item(), -1.0, 1e-9));
        // Zero vector: stabilized, never NaN.
        let z = tape.leaf(&[2], vec![0.0, 0.0]).unwrap();
        assert_eq!(tape.cosine_sim(&z, &e1).unwrap().item(), 0.0);
    }

    #[test]
    fn cosine_sim_stays_in_unit_interval() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let tape = Tape::new();
        for _ in 0..200 {
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let av = tape.leaf(&[4], a).unwrap();
            let bv = tape.leaf(&[4], b).unwrap();
            let c = tape.cosine_sim(&av, &bv).unwrap().item();
            assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c), "cosine {c} out of range");
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(tape.backward(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let tape = Tape::new();
        let x = tape.leaf(&[1], vec![3.0]).unwrap();
        let y = tape.mul(&x, &x).unwrap();
        tape.backward(&y).unwrap();
        tape.backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
        tape.zero_grads();
        tape.backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let tape = Tape::new();
            let x = tape.leaf(&[3, 1], vec![0.1, -0.2, 0.3]).unwrap();
            let k = tape.leaf(&[2, 1, 2], vec![0.4, -0.3, 0.2, 0.1]).unwrap();
            let h = tape.gelu(&tape.conv1d_causal(&x, &k, 1).unwrap());
            tape.mean_all(&h).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
