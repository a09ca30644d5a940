use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;

pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Fewest grid points for which a slope is fitted.
pub const MIN_SLOPE_POINTS: usize = 4;

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> f64 {
    quantile(&sorted(values), 0.5)
}

/// Ordinary least squares `(slope, intercept)` of `y` on `x`.
pub fn least_squares(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let k = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

/// Log-log slope of the group medians against the grid values, with a
/// percentile bootstrap interval from resampling trials within each group.
///
/// Returns `None` with fewer than [`MIN_SLOPE_POINTS`] groups or when any
/// median is not positive.
pub fn fit_log_log_slope(groups: &[(f64, Vec<f64>)], seed: u64) -> Option<SlopeFit> {
    if groups.len() < MIN_SLOPE_POINTS || groups.iter().any(|(x, v)| v.is_empty() || !(*x > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = groups.iter().map(|(x, _)| x.ln()).collect();
    let medians: Vec<f64> = groups.iter().map(|(_, v)| median(v)).collect();
    if medians.iter().any(|m| !(*m > 0.0)) {
        return None;
    }
    let ys: Vec<f64> = medians.iter().map(|m| m.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys)?;

    let mut rng = rng_from_seed(seed);
    let mut boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let ys: Vec<f64> = groups
            .iter()
            .map(|(_, v)| {
                let resampled: Vec<f64> = (0..v.len()).map(|_| v[rng.random_range(0..v.len())]).collect();
                median(&resampled).max(f64::MIN_POSITIVE).ln()
            })
            .collect();
        if let Some((s, _)) = least_squares(&xs, &ys) {
            boot.push(s);
        }
    }
    let boot = sorted(&boot);
    Some(SlopeFit {
        slope,
        intercept,
        ci_low: quantile(&boot, 0.025),
        ci_high: quantile(&boot, 0.975),
        points: groups.len(),
    })
}
