use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LossWeights;
use crate::error::{Error, Result};
use crate::model::CommonTrace;
use crate::numerics::{mse_loss, Matrix};

/// Distance between corresponding hidden activations of the two paths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiedDistance {
    /// Squared Euclidean distance divided by the layer width, averaged over
    /// frames: the mean squared difference per unit, on the same footing as
    /// the output MSE.
    #[default]
    SquaredEuclideanMean,
    /// `1 − cos(a, b)` per frame, averaged over frames.
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss_main: f64,
    pub loss_sub: f64,
    pub tied_penalty: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(loss_main: f64, loss_sub: f64, tied_penalty: f64, weights: LossWeights) -> Self {
        Self {
            loss_main,
            loss_sub,
            tied_penalty,
            total: loss_main + weights.alpha * loss_sub + weights.beta * tied_penalty,
        }
    }

    /// Relative deviation of `total` from its recomposition under `weights`.
    pub fn recomposition_error(&self, weights: LossWeights) -> f64 {
        let expect = self.loss_main + weights.alpha * self.loss_sub + weights.beta * self.tied_penalty;
        (self.total - expect).abs() / expect.abs().max(f64::MIN_POSITIVE)
    }
}

/// Penalty value and its gradients with respect to each tied hidden layer of
/// both traces (keyed by 1-based common-layer index).
#[derive(Clone, Debug, PartialEq)]
pub struct TiedPenalty {
    pub value: f64,
    pub d_main: BTreeMap<usize, Matrix>,
    pub d_sub: BTreeMap<usize, Matrix>,
}

fn frame_distance(a: &[f64], b: &[f64], distance: TiedDistance, inv_t: f64, da: &mut [f64], db: &mut [f64]) -> f64 {
    match distance {
        TiedDistance::SquaredEuclideanMean => {
            let inv_n = 1.0 / a.len() as f64;
            let mut d = 0.0;
            for i in 0..a.len() {
                let diff = a[i] - b[i];
                d += diff * diff;
                da[i] = 2.0 * diff * inv_n * inv_t;
                db[i] = -2.0 * diff * inv_n * inv_t;
            }
            d * inv_n
        }
        TiedDistance::Cosine => {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for i in 0..a.len() {
                ab += a[i] * b[i];
                aa += a[i] * a[i];
                bb += b[i] * b[i];
            }
            let (na, nb) = (aa.sqrt(), bb.sqrt());
            if na == 0.0 || nb == 0.0 {
                da.fill(0.0);
                db.fill(0.0);
                return 1.0;
            }
            let cos = ab / (na * nb);
            for i in 0..a.len() {
                da[i] = -(b[i] / (na * nb) - cos * a[i] / aa) * inv_t;
                db[i] = -(a[i] / (na * nb) - cos * b[i] / bb) * inv_t;
            }
            1.0 - cos
        }
    }
}

/// Sum over `layers` of the frame-averaged distance between the two traces'
/// hidden activations, with analytic gradients for both sides.
pub fn tied_penalty(
    main: &CommonTrace,
    sub: &CommonTrace,
    layers: &[usize],
    distance: TiedDistance,
) -> Result<TiedPenalty> {
    if main.frames() != sub.frames() {
        return Err(Error::Alignment(format!(
            "tied layers need frame-aligned paths: {} vs {} frames",
            main.frames(),
            sub.frames()
        )));
    }
    let mut out = TiedPenalty {
        value: 0.0,
        d_main: BTreeMap::new(),
        d_sub: BTreeMap::new(),
    };
    let inv_t = 1.0 / main.frames() as f64;
    for &l in layers {
        let (a, b) = match (main.hidden(l), sub.hidden(l)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Config(format!("tied layer {l} does not exist"))),
        };
        let mut da = Matrix::zeros(a.rows(), a.cols());
        let mut db = Matrix::zeros(b.rows(), b.cols());
        let mut sum = 0.0;
        for t in 0..a.rows() {
            sum += frame_distance(a.row(t), b.row(t), distance, inv_t, da.row_mut(t), db.row_mut(t));
        }
        out.value += sum * inv_t;
        out.d_main.insert(l, da);
        out.d_sub.insert(l, db);
    }
    Ok(out)
}

/// Loss value plus every gradient seed: prediction gradients for both heads
/// and hidden-layer gradients for the tied layers, already scaled by the
/// loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeLoss {
    pub breakdown: LossBreakdown,
    pub d_pred_main: Matrix,
    pub d_pred_sub: Option<Matrix>,
    pub dh_main: BTreeMap<usize, Matrix>,
    pub dh_sub: BTreeMap<usize, Matrix>,
}

/// `main + α·sub + β·tied` for one utterance. `sub` (the speech-path
/// trace) may be omitted only when both weights are zero.
pub fn composite_loss(
    main: &CommonTrace,
    sub: Option<&CommonTrace>,
    target: &Matrix,
    weights: LossWeights,
    tied_layers: &[usize],
    distance: TiedDistance,
) -> Result<CompositeLoss> {
    weights.validate()?;
    let (loss_main, d_pred_main) = mse_loss(main.prediction(), target)?;
    let Some(sub) = sub else {
        if weights.alpha != 0.0 || weights.beta != 0.0 {
            return Err(Error::MissingData(
                "speech-path loss requested but no speech forward pass was run".into(),
            ));
        }
        return Ok(CompositeLoss {
            breakdown: LossBreakdown::compose(loss_main, 0.0, 0.0, weights),
            d_pred_main,
            d_pred_sub: None,
            dh_main: BTreeMap::new(),
            dh_sub: BTreeMap::new(),
        });
    };
    let (loss_sub, d_sub) = mse_loss(sub.prediction(), target)?;
    let (tied, dh_main, dh_sub) = if weights.beta != 0.0 {
        let p = tied_penalty(main, sub, tied_layers, distance)?;
        let scale = |m: BTreeMap<usize, Matrix>| m.into_iter().map(|(l, g)| (l, g.scaled(weights.beta))).collect();
        (p.value, scale(p.d_main), scale(p.d_sub))
    } else if tied_layers.is_empty() {
        (0.0, BTreeMap::new(), BTreeMap::new())
    } else {
        // Still reported for monitoring; contributes nothing to the total.
        (tied_penalty(main, sub, tied_layers, distance)?.value, BTreeMap::new(), BTreeMap::new())
    };
    Ok(CompositeLoss {
        breakdown: LossBreakdown::compose(loss_main, loss_sub, tied, weights),
        d_pred_main,
        d_pred_sub: Some(d_sub.scaled(weights.alpha)),
        dh_main,
        dh_sub,
    })
}
