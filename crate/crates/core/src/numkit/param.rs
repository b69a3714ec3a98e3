use serde::{Deserialize, Serialize};

use super::Matrix;

/// A learnable weight together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub value: Matrix,
    #[serde(skip, default = "empty")]
    pub grad: Matrix,
}

fn empty() -> Matrix {
    Matrix::zeros(0, 0)
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        ParamTensor {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        ParamTensor::new(name, Matrix::zeros(rows, cols))
    }

    pub fn zero_grad(&mut self) {
        if self.grad.shape() != self.value.shape() {
            self.grad = Matrix::zeros(self.value.rows(), self.value.cols());
        } else {
            self.grad.fill(0.0);
        }
    }

    /// Adds `g` into the gradient buffer. Panics on shape mismatch, which is
    /// always a bug in a backward pass.
    pub fn accumulate(&mut self, g: &Matrix) {
        if self.grad.shape() != self.value.shape() {
            self.zero_grad();
        }
        self.grad
            .add_assign(g)
            .unwrap_or_else(|e| panic!("gradient for {}: {e}", self.name));
    }

    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anything that owns a fixed, ordered list of trainable tensors.
pub trait Parameterized {
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Flattened gradient of every parameter, in `params()` order.
    fn flat_grad(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }
}

impl Parameterized for Vec<ParamTensor> {
    fn params(&self) -> Vec<&ParamTensor> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.iter_mut().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_clears_every_tensor() {
        let mut ps = vec![ParamTensor::zeros("a", 2, 2), ParamTensor::zeros("b", 1, 3)];
        ps[0].accumulate(&Matrix::filled(2, 2, 1.5));
        ps[1].accumulate(&Matrix::filled(1, 3, -2.0));
        ps.zero_grads();
        assert!(ps.flat_grad().iter().all(|&g| g == 0.0));
        assert_eq!(ps.param_count(), 7);
        for p in &ps {
            assert_eq!(p.grad.shape(), p.value.shape());
        }
    }
}
