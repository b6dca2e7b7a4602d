//! Objective distortion measures and report assembly.

mod report;

pub use report::{evaluate, EvalReport, EvalRow, RowMeta};

use std::f64::consts::LN_10;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F0Scale {
    /// Compare `exp(log-F0)` in Hz.
    #[default]
    Hz,
    /// Compare log-F0 values directly.
    Log,
}

/// Where the metrics find their channels in an acoustic feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    /// Cepstral channels entering the distortion (c0 normally excluded).
    pub cepstral: Range<usize>,
    pub log_f0: Option<usize>,
    pub voicing: Option<usize>,
    /// A frame counts as voiced when its voicing value exceeds this.
    pub voicing_threshold: f64,
    pub f0_scale: F0Scale,
}

impl FeatureLayout {
    /// 24 cepstra (c0 excluded from distortion), log-F0 at 24, voicing at 25.
    pub fn synthetic() -> Self {
        Self {
            cepstral: 1..24,
            log_f0: Some(24),
            voicing: Some(25),
            voicing_threshold: 0.5,
            f0_scale: F0Scale::Hz,
        }
    }

    /// Opaque features: every channel but the first is treated as cepstral.
    pub fn cepstral_only(dim: usize) -> Self {
        Self {
            cepstral: 1.min(dim)..dim,
            log_f0: None,
            voicing: None,
            voicing_threshold: 0.5,
            f0_scale: F0Scale::Hz,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cepstral.clone().collect()
    }
}

const MCD_SCALE: f64 = 10.0 / LN_10;

fn check_pair(reference: &Matrix, predicted: &Matrix, op: &'static str) -> Result<()> {
    if reference.shape() != predicted.shape() {
        return Err(Error::shape(
            op,
            format!("{:?}", reference.shape()),
            format!("{:?}", predicted.shape()),
        ));
    }
    Ok(())
}

/// Per-frame mel-cepstral distortion in dB over `dims`.
pub fn mcd_frames(reference: &Matrix, predicted: &Matrix, dims: &[usize]) -> Result<Vec<f64>> {
    check_pair(reference, predicted, "mcd_db")?;
    if dims.is_empty() {
        return Err(Error::Config("mel-cepstral distortion needs at least one dimension".into()));
    }
    if let Some(&d) = dims.iter().find(|&&d| d >= reference.cols()) {
        return Err(Error::shape("mcd_db dims", format!("< {}", reference.cols()), d));
    }
    Ok((0..reference.rows())
        .map(|t| {
            let (r, p) = (reference.row(t), predicted.row(t));
            let sq: f64 = dims.iter().map(|&d| (r[d] - p[d]).powi(2)).sum();
            MCD_SCALE * (2.0 * sq).sqrt()
        })
        .collect())
}

/// Frame-mean mel-cepstral distortion in dB.
pub fn mcd_db(reference: &Matrix, predicted: &Matrix, dims: &[usize]) -> Result<f64> {
    let frames = mcd_frames(reference, predicted, dims)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

/// Sum of squared F0 errors and the number of frames voiced in both
/// sequences.
pub fn f0_error_sums(reference: &Matrix, predicted: &Matrix, layout: &FeatureLayout) -> Result<(f64, usize)> {
    check_pair(reference, predicted, "f0_rmse")?;
    let (Some(lf0), Some(vuv)) = (layout.log_f0, layout.voicing) else {
        return Err(Error::Config("feature layout has no log-F0/voicing channels".into()));
    };
    if lf0.max(vuv) >= reference.cols() {
        return Err(Error::shape("f0_rmse channels", format!("< {}", reference.cols()), lf0.max(vuv)));
    }
    let mut sum = 0.0;
    let mut n = 0;
    for t in 0..reference.rows() {
        let (r, p) = (reference.row(t), predicted.row(t));
        if r[vuv] > layout.voicing_threshold && p[vuv] > layout.voicing_threshold {
            let e = match layout.f0_scale {
                F0Scale::Hz => r[lf0].exp() - p[lf0].exp(),
                F0Scale::Log => r[lf0] - p[lf0],
            };
            sum += e * e;
            n += 1;
        }
    }
    Ok((sum, n))
}

/// F0 RMSE over frames voiced in both sequences. No such frame is an
/// error rather than a zero.
pub fn f0_rmse(reference: &Matrix, predicted: &Matrix, layout: &FeatureLayout) -> Result<f64> {
    let (sum, n) = f0_error_sums(reference, predicted, layout)?;
    if n == 0 {
        return Err(Error::EmptySupport("no frame is voiced in both sequences".into()));
    }
    Ok((sum / n as f64).sqrt())
}
