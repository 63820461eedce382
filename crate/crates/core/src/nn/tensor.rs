use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::arg(format!(
                "shape {shape:?} holds {len} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            data: vec![0.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            data: vec![value; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    /// Zero-mean Gaussian entries.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        Tensor {
            data: (0..shape.iter().product::<usize>())
                .map(|_| normal.sample(rng))
                .collect(),
            shape: shape.to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::arg("ragged rows"));
        }
        Tensor::new(vec![rows.len(), width], rows.concat())
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::arg(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row `i` of a tensor viewed as `shape[0] × rest`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.data.len() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::arg(format!(
                "{what} expects a rank-{rank} tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

/// Parameters of one layer and their accumulated gradients.
///
/// Gradient buffers mirror the parameter shapes. They are allocated on first
/// use so inference-only models carry no gradient memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub weights: Tensor,
    pub bias: Tensor,
    grad_w: Option<Tensor>,
    grad_b: Option<Tensor>,
}

impl LayerState {
    pub fn new(weights: Tensor, bias: Tensor) -> Self {
        LayerState {
            weights,
            bias,
            grad_w: None,
            grad_b: None,
        }
    }

    /// Gaussian weights, zero bias.
    pub fn gaussian(weight_shape: &[usize], bias_len: usize, std: f64, rng: &mut impl Rng) -> Self {
        LayerState::new(
            Tensor::randn(weight_shape, std, rng),
            Tensor::zeros(&[bias_len]),
        )
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn grad_w(&self) -> Option<&Tensor> {
        self.grad_w.as_ref()
    }

    pub fn grad_b(&self) -> Option<&Tensor> {
        self.grad_b.as_ref()
    }

    /// Gradient buffers, allocating zeros on first access.
    pub fn grads_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        let ws = self.weights.shape().to_vec();
        let bs = self.bias.shape().to_vec();
        (
            self.grad_w.get_or_insert_with(|| Tensor::zeros(&ws)),
            self.grad_b.get_or_insert_with(|| Tensor::zeros(&bs)),
        )
    }

    pub fn zero_grads(&mut self) {
        let (gw, gb) = self.grads_mut();
        gw.data_mut().fill(0.0);
        gb.data_mut().fill(0.0);
    }

    /// Drops the gradient buffers.
    pub fn release_grads(&mut self) {
        self.grad_w = None;
        self.grad_b = None;
    }
}
