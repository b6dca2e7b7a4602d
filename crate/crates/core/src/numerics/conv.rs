use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Strided 1-D convolution over a zero-padded mono waveform. One output row
/// per frame, one column per filter. No activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1DLayer {
    kernels: Matrix,
    bias: Vec<f64>,
    stride: usize,
    pad_left: usize,
    pad_right: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub dkernels: Matrix,
    pub dbias: Vec<f64>,
}

impl Conv1DLayer {
    pub fn new(kernels: Matrix, bias: Vec<f64>, stride: usize, pad_left: usize, pad_right: usize) -> Result<Self> {
        if stride == 0 || kernels.cols() < stride {
            return Err(Error::Config(format!(
                "conv requires width >= stride >= 1 (width {}, stride {stride})",
                kernels.cols()
            )));
        }
        if bias.len() != kernels.rows() {
            return Err(Error::shape("Conv1DLayer::new", kernels.rows(), bias.len()));
        }
        Ok(Self {
            kernels,
            bias,
            stride,
            pad_left,
            pad_right,
        })
    }

    /// Glorot-uniform kernels with fan-in = width and fan-out = filters, zero bias.
    pub fn glorot<R: Rng>(
        filters: usize,
        width: usize,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let r = (6.0 / (width + filters) as f64).sqrt();
        let values = (0..filters * width).map(|_| rng.random_range(-r..r)).collect();
        Self::new(Matrix::from_vec(filters, width, values)?, vec![0.0; filters], stride, pad_left, pad_right)
    }

    pub fn filters(&self) -> usize {
        self.kernels.rows()
    }

    pub fn width(&self) -> usize {
        self.kernels.cols()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> (usize, usize) {
        (self.pad_left, self.pad_right)
    }

    pub fn kernels(&self) -> &Matrix {
        &self.kernels
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn kernels_mut(&mut self) -> &mut [f64] {
        self.kernels.as_mut_slice()
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// `floor((len + pads - width) / stride) + 1`.
    pub fn output_frames(&self, len: usize) -> Result<usize> {
        let padded = len + self.pad_left + self.pad_right;
        if len == 0 || padded < self.width() {
            return Err(Error::WaveTooShort {
                len,
                padded,
                width: self.width(),
            });
        }
        Ok((padded - self.width()) / self.stride + 1)
    }

    /// Frame matrix `frames × width` of the padded signal.
    fn frame_matrix(&self, wave: &[f64]) -> Result<Matrix> {
        let frames = self.output_frames(wave.len())?;
        let width = self.width();
        let mut patches = Matrix::zeros(frames, width);
        for t in 0..frames {
            let row = patches.row_mut(t);
            for (i, v) in row.iter_mut().enumerate() {
                let p = t * self.stride + i;
                if p >= self.pad_left && p - self.pad_left < wave.len() {
                    *v = wave[p - self.pad_left];
                }
            }
        }
        Ok(patches)
    }

    pub fn forward(&self, wave: &[f64]) -> Result<Matrix> {
        let patches = self.frame_matrix(wave)?;
        // Each output accumulates its taps in ascending order, bias last.
        let mut out = patches.matmul(&self.kernels.transpose())?;
        for t in 0..out.rows() {
            for (a, b) in out.row_mut(t).iter_mut().zip(&self.bias) {
                *a += b;
            }
        }
        Ok(out)
    }

    /// Gradients with respect to kernels and bias. The waveform is data, so no
    /// input gradient is produced.
    pub fn backward(&self, wave: &[f64], dy: &Matrix) -> Result<ConvGrads> {
        let patches = self.frame_matrix(wave)?;
        if dy.shape() != (patches.rows(), self.filters()) {
            return Err(Error::shape(
                "conv1d_backward",
                format!("{}x{}", patches.rows(), self.filters()),
                format!("{}x{}", dy.rows(), dy.cols()),
            ));
        }
        let dkernels = dy.transpose().matmul(&patches)?;
        Ok(ConvGrads {
            dkernels,
            dbias: dy.column_sums(),
        })
    }
}
