use std::fmt::Debug;

use super::{GradientSet, ParameterStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport<K> {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(K, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

/// Compares analytic gradients against central finite differences for every
/// entry of the parameters in `ids`. A parameter missing from `analytic` is
/// treated as having zero gradient. Parameters are restored afterwards.
pub fn finite_difference_check<K, P, F>(
    params: &mut P,
    ids: &[K],
    analytic: &GradientSet<K>,
    mut loss: F,
    config: GradCheckConfig,
) -> GradCheckReport<K>
where
    K: Ord + Clone + Debug,
    P: ParameterStore<K>,
    F: FnMut(&P) -> f64,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    for id in ids {
        let len = params.param(id).map_or(0, <[f64]>::len);
        for i in 0..len {
            let original = params.param(id).expect("present")[i];
            params.param_mut(id).expect("present")[i] = original + config.step;
            let plus = loss(params);
            params.param_mut(id).expect("present")[i] = original - config.step;
            let minus = loss(params);
            params.param_mut(id).expect("present")[i] = original;

            let numeric = (plus - minus) / (2.0 * config.step);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let denom = a.abs().max(numeric.abs()).max(config.abs_floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((id.clone(), i));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}
