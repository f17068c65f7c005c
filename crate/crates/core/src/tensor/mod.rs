//! Deterministic reverse-mode compute core: plain host buffers ([`Tensor`]),
//! the recording engine ([`Tape`], [`Value`]), and the Adam update.

mod adam;
mod tape;

pub use adam::Adam;
pub use tape::{gelu_scalar, Tape, Value, EPS_NORM};

use rand::Rng;

use crate::error::{Error, Result};

/// Plain shaped `f64` buffer. Parameters live in `Tensor`s between training
/// iterations and are re-leafed onto a fresh tape each step.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "tensor shape {shape:?} implies {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    /// Uniform init on `(−1/√fan_in, +1/√fan_in)`.
    pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..shape.iter().product())
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leafs this tensor onto `tape`.
    pub fn leaf_on(&self, tape: &Tape) -> Value {
        tape.leaf(&self.shape, self.data.clone()).expect("tensor shape is consistent")
    }
}
