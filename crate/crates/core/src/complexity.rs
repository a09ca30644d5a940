//! Rademacher complexity estimates, the generalization bound and held-out risk.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sampling::{augment, relu, sample_inputs, sample_l1_sphere, Predictor};

pub const DEFAULT_SIGN_DRAWS: usize = 256;
pub const DEFAULT_STARTS: usize = 16;
const MAX_SWEEPS: usize = 200;
const TEST_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadKind {
    RfL2BallExactSup,
    PathBallHeuristicSup,
    TheoreticalUpper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_sign_draws: usize,
    pub kind: RadKind,
}

impl RadEstimate {
    fn from_draws(values: &[f64], kind: RadKind) -> Self {
        let (mean, std_error) = mean_and_std_error(values);
        Self {
            mean,
            std_error,
            n_sign_draws: values.len(),
            kind,
        }
    }

    fn upper(value: f64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            n_sign_draws: 0,
            kind: RadKind::TheoreticalUpper,
        }
    }
}

/// Sample mean and its standard error (zero for fewer than two values).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

/// `n x draws` matrix of independent Rademacher signs.
pub fn sign_matrix(n: usize, draws: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(n, draws, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

fn check_radius(c: f64) -> Result<()> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("norm radius must be nonnegative, got {c}")));
    }
    Ok(())
}

/// Per-draw suprema `C ||Phi^T xi|| / (n sqrt m)` over the ball `||a|| <= C sqrt(m)`.
pub fn rad_rf_ball_draws(phi: &DMatrix<f64>, c: f64, n_draws: usize, seed: u64) -> Result<Vec<f64>> {
    check_radius(c)?;
    if phi.is_empty() || n_draws == 0 {
        return Err(Error::invalid("need a nonempty feature matrix and at least one draw"));
    }
    let (n, m) = phi.shape();
    let v = phi.tr_mul(&sign_matrix(n, n_draws, seed));
    let scale = c / (n as f64 * (m as f64).sqrt());
    Ok(v.column_iter().map(|col| scale * col.norm()).collect())
}

/// Monte-Carlo Rademacher complexity of the random feature ball, exact per draw.
pub fn rad_rf_ball(phi: &DMatrix<f64>, c: f64, n_draws: usize, seed: u64) -> Result<RadEstimate> {
    let draws = rad_rf_ball_draws(phi, c, n_draws, seed)?;
    Ok(RadEstimate::from_draws(&draws, RadKind::RfL2BallExactSup))
}

/// `|sum_i xi_i relu(a_i + t b_i)| / ||w + t delta||_1` maximized over the
/// segment `t in [0, 1]` toward the vertex `sign * e_k`. Both numerator and
/// denominator are piecewise linear, so the ratio is monotone between
/// breakpoints and the maximum sits at a breakpoint or an endpoint.
fn segment_max(a: &[f64], b: &[f64], xi: &[f64], w_k: f64, sign: f64) -> (f64, f64) {
    let denom = |t: f64| (1.0 - t) * (1.0 - w_k.abs()) + (w_k * (1.0 - t) + t * sign).abs();
    let numer = |t: f64| {
        a.iter()
            .zip(b)
            .zip(xi)
            .map(|((ai, bi), x)| x * relu(ai + t * bi))
            .sum::<f64>()
    };

    let mut kinks: Vec<(f64, usize)> = a
        .iter()
        .zip(b)
        .enumerate()
        .filter(|(_, (_, bi))| **bi != 0.0)
        .map(|(i, (ai, bi))| (-ai / bi, i))
        .filter(|(t, _)| *t > 0.0 && *t < 1.0)
        .collect();
    kinks.sort_by(|p, q| p.0.total_cmp(&q.0));

    // N(t) = intercept + slope * t on the current piece
    let (mut intercept, mut slope) = (0.0, 0.0);
    for i in 0..a.len() {
        if a[i] > 0.0 || (a[i] == 0.0 && b[i] > 0.0) {
            intercept += xi[i] * a[i];
            slope += xi[i] * b[i];
        }
    }
    let mut best = (numer(0.0).abs() / denom(0.0), 0.0);
    let mut consider = |t: f64, n_t: f64| {
        let d = denom(t);
        if d > 0.0 {
            let v = n_t.abs() / d;
            if v > best.0 {
                best = (v, t);
            }
        }
    };
    for &(t, i) in &kinks {
        consider(t, intercept + slope * t);
        // item i switches on or off as t passes its kink
        let on = b[i] > 0.0;
        let s = if on { 1.0 } else { -1.0 };
        intercept += s * xi[i] * a[i];
        slope += s * xi[i] * b[i];
    }
    consider(1.0, numer(1.0));
    let denom_kink = w_k / (w_k - sign);
    if denom_kink > 0.0 && denom_kink < 1.0 {
        consider(denom_kink, numer(denom_kink));
    }
    best
}

fn path_objective(x_aug: &DMatrix<f64>, xi: &[f64], w: &DVector<f64>) -> f64 {
    let pre = x_aug.tr_mul(w);
    pre.iter().zip(xi).map(|(p, s)| s * relu(*p)).sum::<f64>().abs()
}

/// Local search on the l1 sphere by exact line searches toward every signed vertex.
fn refine(x_aug: &DMatrix<f64>, xi: &[f64], mut w: DVector<f64>) -> f64 {
    let dim = w.len();
    let mut value = path_objective(x_aug, xi, &w);
    for _ in 0..MAX_SWEEPS {
        let a: Vec<f64> = x_aug.tr_mul(&w).iter().copied().collect();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for k in 0..dim {
            for sign in [1.0, -1.0] {
                let mut vertex = DVector::zeros(dim);
                vertex[k] = sign;
                let delta = &vertex - &w;
                let b: Vec<f64> = x_aug.tr_mul(&delta).iter().copied().collect();
                let (v, t) = segment_max(&a, &b, xi, w[k], sign);
                if v > value * (1.0 + 1e-12) && best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                    let mut next = &w + delta * t;
                    next /= next.lp_norm(1);
                    best = Some((v, next));
                }
            }
        }
        match best {
            Some((_, next)) => {
                // re-evaluate to keep the reported value tied to an actual point
                let v = path_objective(x_aug, xi, &next);
                if v <= value {
                    break;
                }
                value = v;
                w = next;
            }
            None => break,
        }
    }
    value
}

/// Lower estimate of `max_{||w||_1 = 1} |(1/n) sum_i xi_i relu(w . (x_i, 1))|`
/// from every signed vertex and `n_starts` random sphere points, each refined
/// by local search. Every reported value is attained at a sphere point.
pub fn path_ball_sup_lower(x: &DMatrix<f64>, xi: &[f64], n_starts: usize, seed: u64) -> Result<f64> {
    let (d, n) = x.shape();
    if xi.len() != n {
        return Err(Error::DimensionMismatch {
            context: "sign vector",
            expected: n,
            got: xi.len(),
        });
    }
    let x_aug = augment(x);
    let mut starts: Vec<DVector<f64>> = Vec::with_capacity(2 * (d + 1) + n_starts);
    for k in 0..=d {
        for sign in [1.0, -1.0] {
            let mut v = DVector::zeros(d + 1);
            v[k] = sign;
            starts.push(v);
        }
    }
    if n_starts > 0 {
        starts.extend(sample_l1_sphere(d, n_starts, seed)?.into_iter().map(DVector::from_vec));
    }
    let best = starts
        .into_iter()
        .map(|w| refine(&x_aug, xi, w))
        .fold(0.0, f64::max);
    Ok(best / n as f64)
}

/// `2 C sqrt(2 ln(2d) / n)`.
pub fn path_ball_upper(c: f64, d: usize, n: usize) -> f64 {
    2.0 * c * (2.0 * (2.0 * d as f64).ln() / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathBallEstimate {
    pub lower: RadEstimate,
    pub upper: RadEstimate,
}

/// Sandwich for the Rademacher complexity of the path-norm ball of radius `c`:
/// a Monte-Carlo mean of per-draw lower estimates and the closed-form upper value.
pub fn rad_path_ball(
    x: &DMatrix<f64>,
    c: f64,
    n_draws: usize,
    n_starts: usize,
    seed: u64,
) -> Result<PathBallEstimate> {
    check_radius(c)?;
    let (d, n) = x.shape();
    if d == 0 || n == 0 || n_draws == 0 {
        return Err(Error::invalid("need d, n and the number of draws to be positive"));
    }
    let signs = sign_matrix(n, n_draws, derive_seed(seed, 0));
    let draws = (0..n_draws)
        .map(|k| {
            let xi: Vec<f64> = signs.column(k).iter().copied().collect();
            path_ball_sup_lower(x, &xi, n_starts, derive_seed(seed, 1 + k as u64)).map(|v| c * v)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PathBallEstimate {
        lower: RadEstimate::from_draws(&draws, RadKind::PathBallHeuristicSup),
        upper: RadEstimate::upper(path_ball_upper(c, d, n)),
    })
}

/// `3 C sqrt(2 ln(2d) / n)` for the weighted-path-norm ball.
pub fn rad_weighted_path_upper(c: f64, d: usize, n: usize) -> Result<RadEstimate> {
    check_radius(c)?;
    if d == 0 || n == 0 {
        return Err(Error::invalid("d and n must be positive"));
    }
    Ok(RadEstimate::upper(3.0 * c * (2.0 * (2.0 * d as f64).ln() / n as f64).sqrt()))
}

/// `(Q, C_loss) = (C + 1, (C + 1)^2 / 2)`: Lipschitz constant and bound of the
/// squared loss over predictions of magnitude at most `C` and labels in `[-1, 1]`.
pub fn loss_constants(c: f64) -> (f64, f64) {
    (c + 1.0, (c + 1.0).powi(2) / 2.0)
}

/// `R_hat + 2 Q rad + 4 C_loss sqrt(2 ln(2 / delta) / n)`.
///
/// Any `delta` in `(0, 2)` keeps the logarithm nonnegative and is accepted,
/// although only `delta < 1` carries a probability guarantee.
pub fn generalization_bound(
    empirical_risk: f64,
    q: f64,
    c_loss: f64,
    rad: f64,
    delta: f64,
    n: usize,
) -> Result<f64> {
    if [empirical_risk, q, c_loss, rad].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("bound inputs must be nonnegative"));
    }
    if !(delta > 0.0 && delta < 2.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 2), got {delta}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    Ok(empirical_risk + 2.0 * q * rad + 4.0 * c_loss * (2.0 * (2.0 / delta).ln() / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub risk: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimate of `E (1/2)(model(x) - target(x))^2` over `x`
/// uniform on the cube.
pub fn population_risk<M, T>(model: &M, target: &T, n_test: usize, seed: u64) -> Result<RiskEstimate>
where
    M: Predictor + ?Sized,
    T: Predictor + ?Sized,
{
    if model.input_dim() != target.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "model and target inputs",
            expected: target.input_dim(),
            got: model.input_dim(),
        });
    }
    if n_test == 0 {
        return Err(Error::invalid("test size must be positive"));
    }
    let d = target.input_dim();
    let mut losses = Vec::with_capacity(n_test);
    let chunks = n_test.div_ceil(TEST_CHUNK);
    for c in 0..chunks {
        let len = TEST_CHUNK.min(n_test - c * TEST_CHUNK);
        let xs = sample_inputs(d, len, derive_seed(seed, c as u64));
        let diff = model.predict_columns(&xs)? - target.predict_columns(&xs)?;
        losses.extend(diff.iter().map(|e| 0.5 * e * e));
    }
    let (risk, std_error) = mean_and_std_error(&losses);
    Ok(RiskEstimate { risk, std_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{make_teacher, FnPredictor};
    use approx::assert_relative_eq;

    #[test]
    fn rf_ball_small_cases() {
        let est = rad_rf_ball(&DMatrix::from_element(1, 1, 1.0), 1.0, 64, 1).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.std_error, 0.0);

        let est = rad_rf_ball(&DMatrix::from_element(2, 1, 1.0), 1.0, 4000, 2).unwrap();
        assert!((est.mean - 0.5).abs() <= 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn rf_ball_is_linear_in_radius() {
        let phi = DMatrix::from_fn(5, 9, |i, j| ((i * 7 + j * 3) % 5) as f64 / 5.0 - 0.4);
        let a = rad_rf_ball_draws(&phi, 1.0, 50, 3).unwrap();
        let b = rad_rf_ball_draws(&phi, 2.0, 50, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-15);
        }
    }

    #[test]
    fn path_ball_vertex_case_and_zero_radius() {
        let x = DMatrix::zeros(2, 1);
        let est = rad_path_ball(&x, 1.5, 8, 2, 1).unwrap();
        assert_relative_eq!(est.lower.mean, 1.5, epsilon = 1e-15);
        let est = rad_path_ball(&x, 0.0, 8, 2, 1).unwrap();
        assert_eq!(est.lower.mean, 0.0);
        assert_eq!(est.upper.mean, 0.0);
    }

    #[test]
    fn path_ball_matches_grid_search() {
        let x = sample_inputs(2, 8, 4);
        let x_aug = augment(&x);
        // grid over the l1 sphere in R^3: (u, v, +/-(1 - |u| - |v|))
        let steps = 50;
        let mut grid = Vec::new();
        for i in 0..=2 * steps {
            for j in 0..=2 * steps {
                let u = i as f64 / steps as f64 - 1.0;
                let v = j as f64 / steps as f64 - 1.0;
                let rest = 1.0 - u.abs() - v.abs();
                if rest >= 0.0 {
                    grid.push(DVector::from_vec(vec![u, v, rest]));
                    grid.push(DVector::from_vec(vec![u, v, -rest]));
                }
            }
        }
        assert!(grid.len() >= 10_000);
        let signs = sign_matrix(8, 20, 5);
        for k in 0..20 {
            let xi: Vec<f64> = signs.column(k).iter().copied().collect();
            let oracle = grid.iter().map(|w| path_objective(&x_aug, &xi, w)).fold(0.0, f64::max) / 8.0;
            let est = path_ball_sup_lower(&x, &xi, 16, k as u64).unwrap();
            assert!(est >= 0.98 * oracle, "draw {k}: {est} vs grid {oracle}");
        }
    }

    #[test]
    fn weighted_path_upper_values() {
        let v = rad_weighted_path_upper(1.0, 1, 2).unwrap();
        assert_relative_eq!(v.mean, 3.0 * 2f64.ln().sqrt(), epsilon = 1e-15);
        assert_eq!(v.kind, RadKind::TheoreticalUpper);
        assert_eq!(v.std_error, 0.0);
        assert_eq!(rad_weighted_path_upper(0.0, 3, 5).unwrap().mean, 0.0);
        let a = rad_weighted_path_upper(1.3, 4, 10).unwrap().mean;
        let b = rad_weighted_path_upper(1.3, 4, 40).unwrap().mean;
        assert_relative_eq!(a, 2.0 * b, epsilon = 1e-15);
    }

    #[test]
    fn generalization_bound_values() {
        let delta = 2.0 / std::f64::consts::E;
        assert_relative_eq!(generalization_bound(0.0, 2.0, 2.0, 0.1, delta, 2).unwrap(), 8.4, epsilon = 1e-12);
        let near = generalization_bound(0.3, 2.0, 0.5, 0.0, 1.99, 10).unwrap();
        assert!((near - 0.3).abs() < 0.15);
        let base = generalization_bound(0.1, 1.0, 1.0, 0.2, 0.1, 10).unwrap();
        let doubled = generalization_bound(0.1, 2.0, 1.0, 0.2, 0.1, 10).unwrap();
        assert_relative_eq!(doubled - base, 2.0 * 0.2, epsilon = 1e-12);
        assert!(generalization_bound(0.1, 1.0, 1.0, 0.2, 2.0, 10).is_err());
    }

    #[test]
    fn population_risk_constant_offset() {
        let t = make_teacher(3, 8, 1.0, 1).unwrap();
        assert_eq!(population_risk(&t, &t, 1000, 2).unwrap().risk, 0.0);
        let shifted = FnPredictor {
            dim: 3,
            f: |x: &[f64]| t.predict_unchecked(x) + 1.0,
        };
        let est = population_risk(&shifted, &t, 5000, 3).unwrap();
        assert!((est.risk - 0.5).abs() <= 1e-12);
    }
}
