//! Random feature models, their kernels and the minimum-l2-norm interpolant.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymmetricDecomposition, ThinSvd};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sampling::{augment, relu, sample_l1_sphere_matrix, Predictor};

/// Features evaluated per block when accumulating large kernel sums.
const FEATURE_CHUNK: usize = 4096;
/// Fixed number of parallel partial sums in [`kernel_exact`]; fixing it keeps
/// the summation order, and so the result, independent of the thread count.
const KERNEL_BLOCKS: usize = 16;

/// Default quadrature size for the reference kernel.
pub const DEFAULT_QUADRATURE: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamily {
    /// `relu(w . (x, 1))` with `w` uniform on the unit l1 sphere.
    ReluL1sphere,
    /// `cos(w . x + b)` with `w ~ N(0, I)` and `b ~ U[0, 2 pi)`.
    RandomFourier,
}

impl FeatureFamily {
    pub fn name(self) -> &'static str {
        match self {
            FeatureFamily::ReluL1sphere => "relu_l1sphere",
            FeatureFamily::RandomFourier => "random_fourier",
        }
    }

    fn activate(self, pre: f64) -> f64 {
        match self {
            FeatureFamily::ReluL1sphere => relu(pre),
            FeatureFamily::RandomFourier => pre.cos(),
        }
    }

    /// `m` parameter vectors, each of length `d + 1`.
    pub fn sample_params(self, d: usize, m: usize, seed: u64) -> Result<FeatureParams> {
        if d == 0 || m == 0 {
            return Err(Error::invalid("feature sampling needs d >= 1 and m >= 1"));
        }
        let w = match self {
            FeatureFamily::ReluL1sphere => sample_l1_sphere_matrix(d, m, seed)?,
            FeatureFamily::RandomFourier => {
                let mut rng = rng_from_seed(seed);
                let mut w = DMatrix::zeros(d + 1, m);
                for j in 0..m {
                    for i in 0..d {
                        w[(i, j)] = rng.sample(StandardNormal);
                    }
                    w[(d, j)] = rng.random_range(0.0..TAU);
                }
                w
            }
        };
        Ok(FeatureParams { family: self, w })
    }
}

impl std::str::FromStr for FeatureFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu_l1sphere" | "relu" => Ok(FeatureFamily::ReluL1sphere),
            "random_fourier" | "fourier" => Ok(FeatureFamily::RandomFourier),
            other => Err(Error::invalid(format!("unknown feature family '{other}'"))),
        }
    }
}

/// Sampled feature parameters: column `j` holds `w_j`.
///
/// Both families act on the augmented input through `w . (x, 1)`; for the
/// Fourier family the last entry of `w` is the phase `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    pub family: FeatureFamily,
    pub w: DMatrix<f64>,
}

impl FeatureParams {
    pub fn input_dim(&self) -> usize {
        self.w.nrows() - 1
    }

    pub fn m(&self) -> usize {
        self.w.ncols()
    }

    /// `phi(x; w_j)`.
    pub fn feature(&self, x: &[f64], j: usize) -> f64 {
        let w = self.w.column(j);
        let d = self.input_dim();
        let mut pre = w[d];
        for i in 0..d {
            pre += w[i] * x[i];
        }
        self.family.activate(pre)
    }
}

/// `Phi_{i,j} = phi(x_i; w_j)`, an `n x m` matrix for inputs given as columns of `x`.
pub fn feature_matrix(params: &FeatureParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "feature matrix inputs",
            expected: params.input_dim(),
            got: x.nrows(),
        });
    }
    let mut phi = augment(x).tr_mul(&params.w);
    let family = params.family;
    phi.apply(|v| *v = family.activate(*v));
    Ok(phi)
}

/// Empirical kernel `K^m = Phi Phi^T / m`.
pub fn kernel_empirical(phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if phi.is_empty() {
        return Err(Error::invalid("empty feature matrix"));
    }
    let m = phi.ncols() as f64;
    Ok(phi * phi.transpose() / m)
}

/// Reference kernel `k(x_i, z_j) = E_w[phi(x_i; w) phi(z_j; w)]` between two
/// input sets, averaged over a fixed quadrature sample of `quadrature_size`
/// parameters.
pub fn kernel_exact_between(
    family: FeatureFamily,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    quadrature_size: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if quadrature_size == 0 {
        return Err(Error::invalid("quadrature size must be at least 1"));
    }
    if x.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch {
            context: "kernel inputs",
            expected: x.nrows(),
            got: z.nrows(),
        });
    }
    let d = x.nrows();
    let chunks = quadrature_size.div_ceil(FEATURE_CHUNK);
    let same = std::ptr::eq(x, z);
    let partials: Vec<Result<DMatrix<f64>>> = (0..KERNEL_BLOCKS)
        .into_par_iter()
        .map(|block| {
            let mut acc = DMatrix::zeros(x.ncols(), z.ncols());
            for c in (block..chunks).step_by(KERNEL_BLOCKS) {
                let size = FEATURE_CHUNK.min(quadrature_size - c * FEATURE_CHUNK);
                let params = family.sample_params(d, size, derive_seed(seed, c as u64))?;
                let phi_x = feature_matrix(&params, x)?;
                if same {
                    acc += &phi_x * phi_x.transpose();
                } else {
                    acc += &phi_x * feature_matrix(&params, z)?.transpose();
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = DMatrix::zeros(x.ncols(), z.ncols());
    for p in partials {
        total += p?;
    }
    Ok(total / quadrature_size as f64)
}

/// Reference kernel matrix `K` on the columns of `x`, symmetric by construction.
pub fn kernel_exact(
    family: FeatureFamily,
    x: &DMatrix<f64>,
    quadrature_size: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let k = kernel_exact_between(family, x, x, quadrature_size, seed)?;
    Ok((&k + k.transpose()) * 0.5)
}

/// Random feature model `f_m(x; a) = (1/m) sum_j a_j phi(x; w_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureModel {
    pub params: FeatureParams,
    pub coefficients: DVector<f64>,
}

impl RandomFeatureModel {
    pub fn new(params: FeatureParams, coefficients: DVector<f64>) -> Result<Self> {
        if coefficients.len() != params.m() {
            return Err(Error::DimensionMismatch {
                context: "random feature coefficients",
                expected: params.m(),
                got: coefficients.len(),
            });
        }
        Ok(Self {
            params,
            coefficients,
        })
    }

    pub fn m(&self) -> usize {
        self.params.m()
    }

    /// `||a|| / sqrt(m)`, the radius of the smallest coefficient ball holding the model.
    pub fn scaled_norm(&self) -> f64 {
        self.coefficients.norm() / (self.m() as f64).sqrt()
    }
}

impl Predictor for RandomFeatureModel {
    fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let total: f64 = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(j, a)| a * self.params.feature(x, j))
            .sum();
        total / self.m() as f64
    }

    fn predict_columns(&self, xs: &DMatrix<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(xs.ncols());
        let step = (FEATURE_CHUNK * 16 / self.m().max(1)).clamp(16, 1024);
        let mut start = 0;
        while start < xs.ncols() {
            let len = step.min(xs.ncols() - start);
            let block = xs.columns(start, len).into_owned();
            let phi = feature_matrix(&self.params, &block)?;
            out.rows_mut(start, len)
                .copy_from(&(phi * &self.coefficients / self.m() as f64));
            start += len;
        }
        Ok(out)
    }
}

/// The minimum-norm coefficient vector together with its certificates.
pub struct MinNormInterpolant {
    pub coefficients: DVector<f64>,
    pub svd: ThinSvd,
    /// `max_i |(1/m)(Phi a)_i - y_i|`.
    pub interp_error: f64,
}

impl MinNormInterpolant {
    pub fn sigma_min(&self) -> f64 {
        self.svd.sigma_min()
    }

    pub fn sigma_max(&self) -> f64 {
        self.svd.sigma_max()
    }
}

/// `argmin ||a||` subject to `(1/m) Phi a = y`, i.e. `a = m Phi^+ y`.
///
/// `rcond` is relative: the solve fails unless `sigma_min > rcond * sigma_max`.
/// It defaults to `1e-10 * max(n, m)`.
pub fn min_l2_interpolant(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    rcond: Option<f64>,
) -> Result<MinNormInterpolant> {
    let m = phi.ncols() as f64;
    let (coefficients, svd) = linalg::min_norm_solve(phi, &(y * m), rcond)?;
    let interp_error = (phi * &coefficients / m - y).amax();
    Ok(MinNormInterpolant {
        coefficients,
        svd,
        interp_error,
    })
}

/// Kernel ridgeless interpolant `h(x) = sum_i beta_i k(x_i, x)` with `K beta = y`.
pub struct KernelInterpolant {
    pub beta: DVector<f64>,
    /// `y^T K^{-1} y = beta^T K beta`, its squared RKHS norm.
    pub rkhs_norm_sq: f64,
    /// `||K beta - y|| / ||y||` (zero when `y = 0`).
    pub relative_residual: f64,
}

fn decompose_nonsingular(k: &DMatrix<f64>, rcond: f64) -> Result<SymmetricDecomposition> {
    let eig = SymmetricDecomposition::new(k)?;
    let smallest = eig.min();
    if !(smallest > rcond) {
        return Err(Error::singular(smallest, rcond));
    }
    Ok(eig)
}

/// Solves `K beta = y` for a symmetric positive definite `K` with
/// `lambda_min(K) > rcond`.
pub fn kernel_ridgeless(k: &DMatrix<f64>, y: &DVector<f64>, rcond: f64) -> Result<KernelInterpolant> {
    if k.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "kernel labels",
            expected: k.nrows(),
            got: y.len(),
        });
    }
    let eig = decompose_nonsingular(k, rcond)?;
    let mut beta = eig.solve(y);
    let res = y - k * &beta;
    beta += eig.solve(&res);
    let y_norm = y.norm();
    let relative_residual = if y_norm > 0.0 {
        (k * &beta - y).norm() / y_norm
    } else {
        0.0
    };
    Ok(KernelInterpolant {
        rkhs_norm_sq: y.dot(&beta),
        beta,
        relative_residual,
    })
}

/// `y^T K^{-1} y`, the squared RKHS norm of the kernel ridgeless interpolant.
/// Fails unless `lambda_min(K) > rcond`.
pub fn rkhs_norm_bound(k: &DMatrix<f64>, y: &DVector<f64>, rcond: f64) -> Result<f64> {
    if k.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "kernel labels",
            expected: k.nrows(),
            got: y.len(),
        });
    }
    let eig = decompose_nonsingular(k, rcond)?;
    let coords = eig.eigenvectors.tr_mul(y);
    Ok(coords
        .iter()
        .zip(eig.eigenvalues.iter())
        .map(|(c, l)| c * c / l)
        .sum())
}

pub fn eigen_min(k: &DMatrix<f64>) -> Result<f64> {
    linalg::eigen_min(k)
}

/// `sqrt(n^2 ln(2 n^2 / delta) / (2 m))`, the Hoeffding radius for `||K - K^m||`.
pub fn kernel_deviation_bound(n: usize, m: usize, delta: f64) -> f64 {
    let n2 = (n * n) as f64;
    (n2 * (2.0 * n2 / delta).ln() / (2.0 * m as f64)).sqrt()
}

/// Width `2 n^2 ln(2 n^2 / delta) / lambda^2` beyond which the eigenvalue
/// floor `lambda_n(K^m) >= lambda_n(K) / 2` follows from the deviation bound.
pub fn eigen_floor_width(n: usize, delta: f64, lambda: f64) -> f64 {
    let n2 = (n * n) as f64;
    2.0 * n2 * (2.0 * n2 / delta).ln() / (lambda * lambda)
}

/// Width `8 n^2 ln(2 n^2 / delta) / lambda^2` required for the norm bound on
/// the minimum-norm coefficients.
pub fn min_norm_width(n: usize, delta: f64, lambda: f64) -> f64 {
    4.0 * eigen_floor_width(n, delta, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationRecord {
    pub bound: f64,
    /// Spectral norm `||K - K^m||`.
    pub observed: f64,
    pub observed_frobenius: f64,
    pub lambda_min_k: f64,
    pub lambda_min_km: f64,
    pub holds: bool,
    /// `lambda_n(K^m) - lambda_n(K) / 2`.
    pub eigen_margin: f64,
}

pub fn concentration_check(
    k: &DMatrix<f64>,
    km: &DMatrix<f64>,
    m: usize,
    delta: f64,
) -> Result<ConcentrationRecord> {
    if k.shape() != km.shape() {
        return Err(Error::DimensionMismatch {
            context: "kernel pair",
            expected: k.nrows(),
            got: km.nrows(),
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    let diff = k - km;
    let bound = kernel_deviation_bound(k.nrows(), m, delta);
    let observed = linalg::spectral_norm_symmetric(&diff)?;
    let lambda_min_k = linalg::eigen_min(k)?;
    let lambda_min_km = linalg::eigen_min(km)?;
    Ok(ConcentrationRecord {
        bound,
        observed,
        observed_frobenius: diff.norm(),
        lambda_min_k,
        lambda_min_km,
        holds: observed <= bound,
        eigen_margin: lambda_min_km - lambda_min_k / 2.0,
    })
}

#[derive(Serialize, Deserialize)]
struct RfModelRepr {
    family: FeatureFamily,
    d: usize,
    m: usize,
    params: Vec<f64>,
    coefficients: Vec<f64>,
}

/// `params` are row-major `m x (d+1)`, one parameter vector per row.
impl Serialize for RandomFeatureModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RfModelRepr {
            family: self.params.family,
            d: self.input_dim(),
            m: self.m(),
            params: self.params.w.iter().copied().collect(),
            coefficients: self.coefficients.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RandomFeatureModel {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = RfModelRepr::deserialize(de)?;
        if r.params.len() != r.m * (r.d + 1) {
            return Err(D::Error::custom("params length does not match m * (d + 1)"));
        }
        let w = DMatrix::from_vec(r.d + 1, r.m, r.params);
        RandomFeatureModel::new(FeatureParams { family: r.family, w }, DVector::from_vec(r.coefficients))
            .map_err(D::Error::custom)
    }
}

/// Structured dump of a kernel or feature matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixDump {
    pub n: usize,
    pub m: usize,
    pub family: FeatureFamily,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub entries: Vec<f64>,
}

impl MatrixDump {
    pub fn new(matrix: &DMatrix<f64>, n: usize, m: usize, family: FeatureFamily, seed: u64) -> Self {
        Self {
            n,
            m,
            family,
            seed,
            rows: matrix.nrows(),
            cols: matrix.ncols(),
            entries: matrix.transpose().iter().copied().collect(),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.entries)
    }
}
