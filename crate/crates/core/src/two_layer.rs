//! Two-layer ReLU networks `f(x) = (1/m) sum_j a_j relu(b_j . x + c_j)`,
//! residual fitting on random inner weights and the teacher-plus-residual
//! interpolant.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{default_rcond, ThinSvd};
use crate::random_features::{kernel_exact, FeatureFamily, DEFAULT_QUADRATURE};
use crate::rng::{derive_seed, rng_from_seed, tagged_seed};
use crate::sampling::{augment, relu, sample_l1_sphere_matrix, Dataset, Predictor, TeacherFunction};

/// Draws tried by [`approximate_teacher`].
pub const TEACHER_DRAWS: usize = 32;
pub const DEFAULT_MAX_RESAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    /// Outer coefficients `a_j`.
    pub outer: DVector<f64>,
    /// `(d+1) x m`; column `j` is `(b_j, c_j)`.
    pub inner: DMatrix<f64>,
}

impl TwoLayerNet {
    pub fn from_parts(outer: DVector<f64>, inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() < 2 {
            return Err(Error::invalid("inner weights need at least one input coordinate"));
        }
        if outer.len() != inner.ncols() {
            return Err(Error::DimensionMismatch {
                context: "two-layer outer coefficients",
                expected: inner.ncols(),
                got: outer.len(),
            });
        }
        if outer.is_empty() {
            return Err(Error::invalid("a network needs at least one neuron"));
        }
        Ok(Self { outer, inner })
    }

    /// Builds a net from `(a_j, b_j, c_j)` triples.
    pub fn new(d: usize, neurons: &[(f64, Vec<f64>, f64)]) -> Result<Self> {
        let mut inner = DMatrix::zeros(d + 1, neurons.len());
        let mut outer = DVector::zeros(neurons.len());
        for (j, (a, b, c)) in neurons.iter().enumerate() {
            if b.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "neuron input weights",
                    expected: d,
                    got: b.len(),
                });
            }
            outer[j] = *a;
            inner.view_mut((0, j), (d, 1)).copy_from_slice(b);
            inner[(d, j)] = *c;
        }
        Self::from_parts(outer, inner)
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows() - 1
    }

    pub fn width(&self) -> usize {
        self.outer.len()
    }

    /// `(a_j, b_j, c_j)`.
    pub fn neuron(&self, j: usize) -> (f64, Vec<f64>, f64) {
        let d = self.dim();
        let col = self.inner.column(j);
        (self.outer[j], col.rows(0, d).iter().copied().collect(), col[d])
    }

    /// `(1/m) sum_j |a_j| (||b_j||_1 + |c_j|)`.
    pub fn path_norm(&self) -> f64 {
        let total: f64 = self
            .outer
            .iter()
            .zip(self.inner.column_iter())
            .map(|(a, w)| a.abs() * w.iter().map(|v| v.abs()).sum::<f64>())
            .sum();
        total / self.width() as f64
    }

    /// Appends the neurons of `other` unchanged. The `1/m` prefactor then
    /// refers to the combined width.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context: "concatenated net",
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let m = self.width() + other.width();
        let mut inner = DMatrix::zeros(self.dim() + 1, m);
        inner.columns_mut(0, self.width()).copy_from(&self.inner);
        inner.columns_mut(self.width(), other.width()).copy_from(&other.inner);
        let outer = DVector::from_iterator(m, self.outer.iter().chain(other.outer.iter()).copied());
        Self::from_parts(outer, inner)
    }

    /// Concatenation whose output is `self(x) + other(x)`: each block's outer
    /// coefficients are multiplied by the ratio of the total width to its own.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        let m = (self.width() + other.width()) as f64;
        let mut out = self.concat(other)?;
        let m1 = self.width();
        out.outer.rows_mut(0, m1).scale_mut(m / m1 as f64);
        out.outer.rows_mut(m1, other.width()).scale_mut(m / other.width() as f64);
        Ok(out)
    }

    pub fn scale_outer(&self, t: f64) -> Self {
        Self {
            outer: &self.outer * t,
            inner: self.inner.clone(),
        }
    }
}

impl Predictor for TwoLayerNet {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut total = 0.0;
        for (a, w) in self.outer.iter().zip(self.inner.column_iter()) {
            let mut pre = w[d];
            for i in 0..d {
                pre += w[i] * x[i];
            }
            total += a * relu(pre);
        }
        total / self.width() as f64
    }

    fn predict_columns(&self, xs: &DMatrix<f64>) -> Result<DVector<f64>> {
        if xs.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "input matrix rows",
                expected: self.dim(),
                got: xs.nrows(),
            });
        }
        let mut act = augment(xs).tr_mul(&self.inner);
        act.apply(|v| *v = relu(*v));
        Ok(act * &self.outer / self.width() as f64)
    }
}

pub fn two_layer_eval(net: &TwoLayerNet, x: &[f64]) -> Result<f64> {
    net.predict(x)
}

pub fn path_norm(net: &TwoLayerNet) -> f64 {
    net.path_norm()
}

/// `2 n^2 ln(4 n^2) / lambda^2`, the width that makes the residual fit's
/// eigenvalue floor hold with probability at least one half.
pub fn residual_fit_width(n: usize, lambda: f64) -> f64 {
    let n2 = (n * n) as f64;
    2.0 * n2 * (4.0 * n2).ln() / (lambda * lambda)
}

/// `6 n^2 ln(4 n^2) / lambda^2`, the residual width stated for the composite interpolant.
pub fn composite_width(n: usize, lambda: f64) -> f64 {
    3.0 * residual_fit_width(n, lambda)
}

/// `6 n / lambda`, the first-block width stated for the composite interpolant.
pub fn composite_first_width(n: usize, lambda: f64) -> f64 {
    6.0 * n as f64 / lambda
}

/// A residual-fitting net with the quantities that certify its norm.
#[derive(Debug, Clone)]
pub struct ResidualFit {
    pub net: TwoLayerNet,
    pub lambda_target: f64,
    /// `lambda_n(K^m)` of the accepted inner weights.
    pub lambda_emp: f64,
    /// Redraws needed before the floor `lambda_target / 2` was met.
    pub resamples_used: usize,
    /// `||a||` for the constraint `(1/sqrt m) Psi a = r`.
    pub a_norm: f64,
    /// Smallest singular value of `Psi`.
    pub sigma_min: f64,
    pub r_norm: f64,
    pub interp_error: f64,
}

impl ResidualFit {
    pub fn path_norm(&self) -> f64 {
        self.net.path_norm()
    }

    /// `||a|| sigma_n(Psi) / sqrt(m) <= ||r||`, with a relative slack of `tol`.
    pub fn certificate_holds(&self, tol: f64) -> bool {
        let m = self.net.width() as f64;
        self.a_norm * self.sigma_min / m.sqrt() <= self.r_norm * (1.0 + tol) + tol
    }

    /// `sqrt(2 / lambda_target) ||r||`.
    pub fn norm_bound(&self) -> f64 {
        (2.0 / self.lambda_target).sqrt() * self.r_norm
    }

    /// `||r|| / sqrt(lambda_emp)`, the bound through the verified eigenvalue.
    pub fn empirical_norm_bound(&self) -> f64 {
        self.r_norm / self.lambda_emp.sqrt()
    }
}

/// Fits `f(x_i) = r_i` with `m` neurons whose inner weights are drawn
/// uniformly from the l1 sphere, redrawn until `lambda_n(K^m) >= lambda_target / 2`.
///
/// The outer layer solves `min ||a||` subject to `(1/sqrt m) Psi a = r`,
/// stored as network coefficients `sqrt(m) a`.
pub fn fit_residual_net(
    x: &DMatrix<f64>,
    r: &DVector<f64>,
    m: usize,
    lambda_target: f64,
    max_resamples: usize,
    seed: u64,
    rcond: Option<f64>,
) -> Result<ResidualFit> {
    let (d, n) = x.shape();
    if r.len() != n {
        return Err(Error::DimensionMismatch {
            context: "residual length",
            expected: n,
            got: r.len(),
        });
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("residual contains non-finite values"));
    }
    if m < n {
        return Err(Error::UnderParametrized {
            features: m,
            samples: n,
        });
    }
    if !(lambda_target > 0.0 && lambda_target.is_finite()) {
        return Err(Error::invalid(format!("lambda target must be positive, got {lambda_target}")));
    }
    let mf = m as f64;
    let floor = lambda_target / 2.0;
    let x_aug = augment(x);
    let attempts = max_resamples.max(1);
    let mut best = f64::NEG_INFINITY;
    for draw in 0..attempts {
        let inner = sample_l1_sphere_matrix(d, m, derive_seed(seed, draw as u64))?;
        let mut psi = x_aug.tr_mul(&inner);
        psi.apply(|v| *v = relu(*v));
        let svd = ThinSvd::new(&psi)?;
        let lambda_emp = svd.sigma_min().powi(2) / mf;
        best = best.max(lambda_emp);
        if lambda_emp < floor {
            continue;
        }
        svd.check_rank(rcond.unwrap_or_else(|| default_rcond(n, m)))?;
        // network coefficients sqrt(m) a = m Psi^+ r
        let outer = svd.refined_solve(&psi, &(r * mf));
        let interp_error = (&psi * &outer / mf - r).amax();
        let a_norm = outer.norm() / mf.sqrt();
        return Ok(ResidualFit {
            net: TwoLayerNet::from_parts(outer, inner)?,
            lambda_target,
            lambda_emp,
            resamples_used: draw,
            a_norm,
            sigma_min: svd.sigma_min(),
            r_norm: r.norm(),
            interp_error,
        });
    }
    Err(Error::ConcentrationFailure {
        best,
        target: floor,
        attempts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AtomSampling {
    /// Atoms drawn independently with replacement.
    #[default]
    Iid,
    /// Every atom `floor(m / K)` times, the remainder drawn without replacement.
    Stratified,
}

#[derive(Debug, Clone)]
pub struct TeacherApproximation {
    pub net: TwoLayerNet,
    pub empirical_risk: f64,
    pub draw: usize,
}

fn atom_indices(k: usize, m: usize, sampling: AtomSampling, rng: &mut impl Rng) -> Vec<usize> {
    match sampling {
        AtomSampling::Iid => (0..m).map(|_| rng.random_range(0..k)).collect(),
        AtomSampling::Stratified => {
            let mut idx: Vec<usize> = (0..m / k).flat_map(|_| 0..k).collect();
            idx.extend(rand::seq::index::sample(rng, k, m % k).into_iter());
            idx
        }
    }
}

/// Width-`m1` net made of teacher atoms, keeping the best of
/// [`TEACHER_DRAWS`] draws by empirical risk on the inputs `x`.
pub fn approximate_teacher(
    f: &TeacherFunction,
    m1: usize,
    x: &DMatrix<f64>,
    seed: u64,
    sampling: AtomSampling,
) -> Result<TeacherApproximation> {
    if m1 == 0 {
        return Err(Error::invalid("teacher approximation width must be at least 1"));
    }
    if x.nrows() != f.dim() {
        return Err(Error::DimensionMismatch {
            context: "teacher approximation inputs",
            expected: f.dim(),
            got: x.nrows(),
        });
    }
    let target = f.predict_columns(x)?;
    let mut best: Option<TeacherApproximation> = None;
    for draw in 0..TEACHER_DRAWS {
        let mut rng = rng_from_seed(derive_seed(seed, draw as u64));
        let idx = atom_indices(f.n_atoms(), m1, sampling, &mut rng);
        let inner = f.directions().select_columns(&idx);
        let outer = DVector::from_iterator(m1, idx.iter().map(|&k| f.coefficients()[k]));
        let net = TwoLayerNet::from_parts(outer, inner)?;
        let err = net.predict_columns(x)? - &target;
        let risk = err.iter().map(|e| 0.5 * e * e).sum::<f64>() / x.ncols().max(1) as f64;
        if best.as_ref().is_none_or(|b| risk < b.empirical_risk) {
            best = Some(TeacherApproximation {
                net,
                empirical_risk: risk,
                draw,
            });
        }
    }
    Ok(best.expect("at least one draw"))
}

#[derive(Debug, Clone)]
pub struct InterpolationOptions {
    /// Defaults to `lambda_n` of the reference kernel on the data.
    pub lambda_target: Option<f64>,
    pub max_resamples: usize,
    pub quadrature_size: usize,
    pub rcond: Option<f64>,
    pub sampling: AtomSampling,
}

impl Default for InterpolationOptions {
    fn default() -> Self {
        Self {
            lambda_target: None,
            max_resamples: DEFAULT_MAX_RESAMPLES,
            quadrature_size: DEFAULT_QUADRATURE,
            rcond: None,
            sampling: AtomSampling::Iid,
        }
    }
}

/// `lambda_n` of the ReLU reference kernel on the dataset inputs, with the
/// quadrature seeded from the dataset seed.
pub fn reference_lambda(data: &Dataset, quadrature_size: usize) -> Result<f64> {
    let k = kernel_exact(
        FeatureFamily::ReluL1sphere,
        &data.x,
        quadrature_size,
        tagged_seed(data.seed, "reference-kernel"),
    )?;
    crate::linalg::eigen_min(&k)
}

#[derive(Debug, Clone)]
pub struct TwoLayerInterpolation {
    pub net: TwoLayerNet,
    pub approximation: TeacherApproximation,
    pub residual: ResidualFit,
    pub lambda_ref: f64,
    pub teacher_norm: f64,
    pub interp_error: f64,
}

impl TwoLayerInterpolation {
    pub fn path_norm(&self) -> f64 {
        self.net.path_norm()
    }

    /// Path norm over the teacher's Barron norm upper bound.
    pub fn norm_ratio(&self) -> f64 {
        self.path_norm() / self.teacher_norm
    }
}

/// Interpolates `data` with a width-`(m1 + m2)` net: a teacher approximation
/// of width `m1` plus a residual fit of width `m2`.
pub fn interpolate_two_layer(
    data: &Dataset,
    f: &TeacherFunction,
    m1: usize,
    m2: usize,
    seed: u64,
    opts: &InterpolationOptions,
) -> Result<TwoLayerInterpolation> {
    let lambda_ref = match opts.lambda_target {
        Some(l) => l,
        None => reference_lambda(data, opts.quadrature_size)?,
    };
    let approximation = approximate_teacher(f, m1, &data.x, derive_seed(seed, 0), opts.sampling)?;
    let residual_target = &data.y - approximation.net.predict_columns(&data.x)?;
    let residual = fit_residual_net(
        &data.x,
        &residual_target,
        m2,
        lambda_ref,
        opts.max_resamples,
        derive_seed(seed, 1),
        opts.rcond,
    )?;
    let net = approximation.net.sum(&residual.net)?;
    let interp_error = (net.predict_columns(&data.x)? - &data.y).amax();
    Ok(TwoLayerInterpolation {
        net,
        approximation,
        residual,
        lambda_ref,
        teacher_norm: f.barron_norm_upper(),
        interp_error,
    })
}

#[derive(Serialize, Deserialize)]
struct TwoLayerRepr {
    d: usize,
    m: usize,
    neurons: Vec<Vec<f64>>,
}

impl Serialize for TwoLayerNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let neurons = (0..self.width())
            .map(|j| {
                std::iter::once(self.outer[j])
                    .chain(self.inner.column(j).iter().copied())
                    .collect()
            })
            .collect();
        TwoLayerRepr {
            d: self.dim(),
            m: self.width(),
            neurons,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TwoLayerNet {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = TwoLayerRepr::deserialize(de)?;
        if r.neurons.len() != r.m || r.neurons.iter().any(|v| v.len() != r.d + 2) {
            return Err(D::Error::custom("neuron rows must have length d + 2"));
        }
        let outer = DVector::from_iterator(r.m, r.neurons.iter().map(|v| v[0]));
        let inner = DMatrix::from_fn(r.d + 1, r.m, |i, j| r.neurons[j][i + 1]);
        TwoLayerNet::from_parts(outer, inner).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{make_teacher, sample_dataset, sample_inputs};
    use approx::assert_relative_eq;

    fn random_net(d: usize, m: usize, seed: u64) -> TwoLayerNet {
        let mut rng = rng_from_seed(seed);
        let outer = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let inner = DMatrix::from_fn(d + 1, m, |_, _| rng.random_range(-1.0..1.0));
        TwoLayerNet::from_parts(outer, inner).unwrap()
    }

    #[test]
    fn eval_small_cases() {
        let net = TwoLayerNet::new(1, &[(1.0, vec![1.0], 1.0)]).unwrap();
        assert_eq!(two_layer_eval(&net, &[0.5]).unwrap(), 1.5);
        assert!(two_layer_eval(&net, &[0.5, 0.1]).is_err());
        let zero = random_net(3, 5, 1).scale_outer(0.0);
        assert_eq!(zero.predict(&[0.1, -0.3, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn eval_is_linear_in_neurons() {
        let a = TwoLayerNet::new(2, &[(1.5, vec![0.3, -0.2], 0.1)]).unwrap();
        let b = TwoLayerNet::new(2, &[(-0.7, vec![-0.5, 0.4], 0.2)]).unwrap();
        let both = a.concat(&b).unwrap();
        let x = [0.4, -0.6];
        let expect = (a.predict(&x).unwrap() + b.predict(&x).unwrap()) / 2.0;
        assert!((both.predict(&x).unwrap() - expect).abs() <= 1e-15);
    }

    #[test]
    fn batch_eval_matches_neuron_loop() {
        let net = random_net(3, 17, 2);
        let xs = sample_inputs(3, 25, 3);
        let batch = net.predict_columns(&xs).unwrap();
        for (i, col) in xs.column_iter().enumerate() {
            let mut total = 0.0;
            for j in 0..net.width() {
                let (a, b, c) = net.neuron(j);
                let pre: f64 = b.iter().zip(col.iter()).map(|(u, v)| u * v).sum::<f64>() + c;
                total += a * pre.max(0.0);
            }
            assert!((batch[i] - total / 17.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn path_norm_small_cases() {
        let net = TwoLayerNet::new(2, &[(2.0, vec![1.0, -1.0], 0.5)]).unwrap();
        assert_eq!(path_norm(&net), 5.0);
        assert_eq!(random_net(2, 4, 1).scale_outer(0.0).path_norm(), 0.0);
        let a = random_net(3, 6, 4);
        let b = random_net(3, 6, 5);
        let joined = a.concat(&b).unwrap();
        assert_relative_eq!(joined.path_norm(), (a.path_norm() + b.path_norm()) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(a.scale_outer(-3.0).path_norm(), 3.0 * a.path_norm(), epsilon = 1e-14);
    }

    #[test]
    fn sum_adds_outputs_and_path_norms() {
        let a = random_net(2, 5, 6);
        let b = random_net(2, 11, 7);
        let s = a.sum(&b).unwrap();
        assert_eq!(s.width(), 16);
        let xs = sample_inputs(2, 1000, 8);
        let lhs = s.predict_columns(&xs).unwrap();
        let rhs = a.predict_columns(&xs).unwrap() + b.predict_columns(&xs).unwrap();
        assert!((lhs - rhs).amax() <= 1e-10);
        assert_relative_eq!(s.path_norm(), a.path_norm() + b.path_norm(), epsilon = 1e-12);
    }

    #[test]
    fn residual_fit_zero_and_single_point() {
        let x = sample_inputs(2, 3, 1);
        let fit = fit_residual_net(&x, &DVector::zeros(3), 64, 1e-3, 16, 2, None).unwrap();
        assert_eq!(fit.path_norm(), 0.0);

        let x = DMatrix::from_element(1, 1, 0.5);
        let fit = fit_residual_net(&x, &DVector::from_element(1, 1.0), 8, 1e-3, 16, 3, None).unwrap();
        assert!((fit.net.predict(&[0.5]).unwrap() - 1.0).abs() <= 1e-10);
        assert!(fit.certificate_holds(1e-9));
    }

    #[test]
    fn residual_fit_errors() {
        let x = sample_inputs(2, 5, 1);
        let r = DVector::from_element(5, 0.1);
        assert!(matches!(
            fit_residual_net(&x, &r, 4, 1e-3, 16, 1, None),
            Err(Error::UnderParametrized { .. })
        ));
        match fit_residual_net(&x, &r, 16, 10.0, 3, 1, None) {
            Err(Error::ConcentrationFailure { attempts, target, .. }) => {
                assert_eq!(attempts, 3);
                assert_eq!(target, 5.0);
            }
            other => panic!("expected concentration failure, got {other:?}"),
        }
    }

    #[test]
    fn residual_fit_norm_chain() {
        let x = sample_inputs(3, 8, 5);
        let mut rng = rng_from_seed(6);
        let mut r = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        r /= r.norm();
        let fit = fit_residual_net(&x, &r, 2048, 1e-4, 16, 7, None).unwrap();
        assert!(fit.interp_error <= 1e-8);
        assert!(fit.certificate_holds(1e-9));
        assert!(fit.path_norm() <= fit.a_norm * (1.0 + 1e-12));
        assert!(fit.a_norm <= fit.empirical_norm_bound() * (1.0 + 1e-9));
        assert!(fit.path_norm() <= fit.norm_bound());
    }

    #[test]
    fn teacher_approximation_exact_cases() {
        let t = make_teacher(2, 4, 1.0, 9).unwrap();
        let x = sample_inputs(2, 10, 1);
        let approx = approximate_teacher(&t, 8, &x, 1, AtomSampling::Stratified).unwrap();
        assert!(approx.empirical_risk <= 1e-30);

        let single = TeacherFunction::new(2, vec![(-0.8, vec![0.2, -0.3, 0.5])]).unwrap();
        let approx = approximate_teacher(&single, 5, &x, 2, AtomSampling::Iid).unwrap();
        assert!(approx.empirical_risk <= 1e-30);
        assert_relative_eq!(approx.net.path_norm(), 0.8, epsilon = 1e-14);
    }

    #[test]
    fn interpolation_with_representable_teacher() {
        let t = make_teacher(2, 4, 1.0, 3).unwrap();
        let data = sample_dataset(&t, 6, 4).unwrap();
        let opts = InterpolationOptions {
            sampling: AtomSampling::Stratified,
            quadrature_size: 50_000,
            ..Default::default()
        };
        let out = interpolate_two_layer(&data, &t, 8, 512, 5, &opts).unwrap();
        assert!(out.residual.r_norm <= 1e-14);
        assert!(out.interp_error <= 1e-8);
        assert_relative_eq!(out.path_norm(), out.approximation.net.path_norm(), epsilon = 1e-9);
    }

    #[test]
    fn json_round_trip() {
        let net = random_net(2, 3, 1);
        let back: TwoLayerNet = serde_json::from_str(&serde_json::to_string(&net).unwrap()).unwrap();
        assert_eq!(back, net);
    }
}
