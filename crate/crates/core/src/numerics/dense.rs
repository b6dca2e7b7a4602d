use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Linear,
}

/// Fully connected layer `y = act(x·W + b)` with `W` stored `in_dim × out_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    weight: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub dx: Option<Matrix>,
    pub dw: Option<Matrix>,
    pub db: Option<Vec<f64>>,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::shape("DenseLayer::new", format!("bias of {}", weight.cols()), bias.len()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, four times
    /// wider for sigmoid units (their slope at 0 is 1/4); zero bias.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let gain = match activation {
            Activation::Sigmoid => 4.0,
            Activation::Linear => 1.0,
        };
        let r = gain * (6.0 / (in_dim + out_dim) as f64).sqrt();
        let values = (0..in_dim * out_dim).map(|_| rng.random_range(-r..r)).collect();
        Self {
            weight: Matrix::from_vec(in_dim, out_dim, values).expect("non-empty layer"),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        self.weight.as_mut_slice()
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(
                "dense_forward",
                format!("input dim {}", self.in_dim()),
                format!("input dim {}", x.cols()),
            ));
        }
        let mut y = x.matmul(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
                if self.activation == Activation::Sigmoid {
                    *v = sigmoid(*v);
                }
            }
        }
        Ok(y)
    }

    /// Full gradients given the forward input `x`, its output `y` and upstream `dy`.
    pub fn backward(&self, x: &Matrix, y: &Matrix, dy: &Matrix) -> Result<DenseGrads> {
        self.backward_parts(x, y, dy, true, true)
    }

    /// Like [`backward`](Self::backward) but skips the parameter or input
    /// gradients when they are not wanted.
    pub fn backward_parts(
        &self,
        x: &Matrix,
        y: &Matrix,
        dy: &Matrix,
        want_params: bool,
        want_input: bool,
    ) -> Result<DenseGrads> {
        let out_shape = (x.rows(), self.out_dim());
        if x.cols() != self.in_dim() {
            return Err(Error::shape("dense_backward", format!("input dim {}", self.in_dim()), x.cols()));
        }
        if y.shape() != out_shape || dy.shape() != out_shape {
            return Err(Error::shape(
                "dense_backward",
                format!("{}x{}", out_shape.0, out_shape.1),
                format!("y {:?}, dy {:?}", y.shape(), dy.shape()),
            ));
        }
        let dz = match self.activation {
            Activation::Linear => dy.clone(),
            Activation::Sigmoid => {
                let mut dz = dy.clone();
                for (d, &out) in dz.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    *d *= out * (1.0 - out);
                }
                dz
            }
        };

        let (dw, db) = if want_params {
            (Some(x.transpose().matmul(&dz)?), Some(dz.column_sums()))
        } else {
            (None, None)
        };
        let dx = if want_input {
            // dz · Wᵀ as row updates, so the inner loop vectorises; each entry
            // still sums over output units in ascending order.
            let wt = self.weight.transpose();
            Some(dz.matmul(&wt)?)
        } else {
            None
        };
        Ok(DenseGrads { dx, dw, db })
    }
}
