use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{bail_shape, Result};

/// Dense row-major array of `f64` with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            bail_shape!("extents must be positive, got {:?}", shape);
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            bail_shape!("shape {:?} needs {} values, got {}", shape, numel, data.len());
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; numel]).expect("positive extents")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; numel]).expect("positive extents")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1, 1], data: vec![value], grad: None }
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..numel).map(|_| normal.sample(rng)).collect();
        Self::new(shape.to_vec(), data).expect("positive extents")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Rows and columns when viewed as a matrix; leading extents fold into rows.
    pub fn dims2(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("non-empty shape");
        (self.data.len() / cols, cols)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.grad.as_mut()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn set_grad(&mut self, g: Vec<f64>) -> Result<()> {
        if g.len() != self.data.len() {
            bail_shape!("grad length {} != data length {}", g.len(), self.data.len());
        }
        self.grad = Some(g);
        Ok(())
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = self.dims2();
        &self.data[r * cols..(r + 1) * cols]
    }
}
