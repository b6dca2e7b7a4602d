use super::Matrix;
use crate::error::{Error, Result};

/// Mean squared error over every entry and its gradient `2(pred − target)/count`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{}x{}", target.rows(), target.cols()),
            format!("{}x{}", pred.rows(), pred.cols()),
        ));
    }
    let count = pred.as_slice().len() as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut sum = 0.0;
    for ((g, p), t) in grad.as_mut_slice().iter_mut().zip(pred.as_slice()).zip(target.as_slice()) {
        let d = p - t;
        sum += d * d;
        *g = 2.0 * d / count;
    }
    Ok((sum / count, grad))
}
