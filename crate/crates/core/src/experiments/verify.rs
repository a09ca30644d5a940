//! Lemma checks over a grid of sizes and a number of seeded trials.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, LemmaSelector};
use super::{isolated, run_trials, Study, StudyOutput, SummarySpec, TrialRow};
use crate::error::{Error, Result};
use crate::linalg::{self, default_rcond};
use crate::random_features::{
    concentration_check, eigen_floor_width, feature_matrix, kernel_empirical, kernel_exact, kernel_ridgeless,
    min_l2_interpolant, min_norm_width,
};
use crate::resnet::{embed_two_layer, resnet_add, ResNet};
use crate::rng::{rng_from_seed, seed_path};
use crate::sampling::{make_teacher, sample_dataset, sample_inputs, Dataset, Predictor, TeacherFunction};
use crate::two_layer::{
    composite_width, fit_residual_net, interpolate_two_layer, residual_fit_width, InterpolationOptions, TwoLayerNet,
};

/// Interpolation tolerance shared by the checks.
pub const INTERP_TOL: f64 = 1e-8;
/// Relative tolerance for exact identities.
pub const IDENTITY_TOL: f64 = 1e-12;

fn u(v: usize) -> u64 {
    v as u64
}

/// Teacher for dimension `d`; a zero coefficient scale gives the zero function.
pub fn study_teacher(cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<TeacherFunction> {
    if cfg.coeff_scale == 0.0 {
        let t = make_teacher(d, cfg.teacher_atoms, 1.0, seed)?;
        let atoms = (0..t.n_atoms()).map(|k| (0.0, t.atom(k).1)).collect();
        return TeacherFunction::new(d, atoms);
    }
    make_teacher(d, cfg.teacher_atoms, cfg.coeff_scale, seed)
}

/// `lambda_min` cutoff relative to the spectral scale of `k`.
fn kernel_cutoff(cfg: &ExperimentConfig, k: &DMatrix<f64>) -> Result<f64> {
    let n = k.nrows();
    Ok(cfg.rcond.unwrap_or_else(|| default_rcond(n, n)) * linalg::spectral_norm_symmetric(k)?)
}

fn trial_error(e: Error) -> Option<String> {
    Some(e.to_string())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct KernelApproxRow {
    pub trial: usize,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub bound: Option<f64>,
    pub observed_spectral: Option<f64>,
    pub observed_frobenius: Option<f64>,
    #[serde(rename = "lambda_min_K")]
    pub lambda_min_k: Option<f64>,
    #[serde(rename = "lambda_min_Km")]
    pub lambda_min_km: Option<f64>,
    pub holds: Option<bool>,
    /// Width beyond which `lambda_n(K^m) >= lambda_n(K) / 2` is guaranteed.
    pub floor_width: Option<f64>,
    pub floor_applicable: Option<bool>,
    pub floor_holds: Option<bool>,
    pub weyl_holds: Option<bool>,
    pub error: Option<String>,
}

impl TrialRow for KernelApproxRow {
    fn group_key(&self) -> Vec<(&'static str, usize)> {
        vec![("d", self.d), ("n", self.n), ("m", self.m)]
    }
    fn metric(&self) -> Option<f64> {
        self.observed_spectral
    }
    fn passed(&self) -> Option<bool> {
        self.holds
    }
    fn secondary(&self) -> Option<bool> {
        match self.floor_applicable {
            Some(true) => self.floor_holds,
            _ => None,
        }
    }
    fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }
}

/// Deviation of the empirical kernel from the reference kernel on fixed
/// inputs, with fresh features in every trial.
pub fn verify_kernel_approx(cfg: &ExperimentConfig) -> Result<Study<KernelApproxRow>> {
    let mut rows = Vec::new();
    for &d in &cfg.d_grid {
        for &n in &cfg.n_grid {
            let x = sample_inputs(d, n, seed_path(cfg.master_seed, "inputs", &[u(d), u(n)]));
            let reference = kernel_exact(
                cfg.family,
                &x,
                cfg.quadrature_size,
                seed_path(cfg.master_seed, "quadrature", &[u(d), u(n)]),
            );
            let jobs: Vec<(usize, usize)> = cfg
                .m_grid
                .iter()
                .flat_map(|&m| (0..cfg.trials).map(move |t| (m, t)))
                .collect();
            rows.extend(run_trials(&jobs, |&(m, trial)| {
                let base = KernelApproxRow {
                    trial,
                    d,
                    n,
                    m,
                    delta: cfg.delta,
                    ..Default::default()
                };
                let k = match &reference {
                    Ok(k) => k,
                    Err(e) => {
                        return KernelApproxRow {
                            error: Some(e.to_string()),
                            ..base
                        }
                    }
                };
                let out = isolated(|| {
                    let seed = seed_path(cfg.master_seed, "features", &[u(d), u(n), u(m), u(trial)]);
                    let params = cfg.family.sample_params(d, m, seed)?;
                    let km = kernel_empirical(&feature_matrix(&params, &x)?)?;
                    let rec = concentration_check(k, &km, m, cfg.delta)?;
                    let width = eigen_floor_width(n, cfg.delta, rec.lambda_min_k);
                    Ok(KernelApproxRow {
                        bound: Some(rec.bound),
                        observed_spectral: Some(rec.observed),
                        observed_frobenius: Some(rec.observed_frobenius),
                        lambda_min_k: Some(rec.lambda_min_k),
                        lambda_min_km: Some(rec.lambda_min_km),
                        holds: Some(rec.holds),
                        floor_width: Some(width),
                        floor_applicable: Some(m as f64 >= width),
                        floor_holds: Some(rec.eigen_margin >= 0.0),
                        weyl_holds: Some(
                            (rec.lambda_min_k - rec.lambda_min_km).abs() <= rec.observed * (1.0 + 1e-9) + 1e-12,
                        ),
                        ..base.clone()
                    })
                });
                out.unwrap_or_else(|e| KernelApproxRow {
                    error: trial_error(e),
                    ..base
                })
            }));
        }
    }
    let spec = SummarySpec {
        metric: "observed_spectral",
        secondary: Some("floor_holds (rows with m >= floor_width)"),
        fit_slope: false,
    };
    Ok(Study::new(cfg, rows, &spec))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct KrrBoundRow {
    pub trial: usize,
    pub d: usize,
    pub n: usize,
    #[serde(rename = "lambda_min_K")]
    pub lambda_min_k: Option<f64>,
    /// `y^T K^{-1} y`.
    pub rkhs_norm_sq: Option<f64>,
    pub relative_residual: Option<f64>,
    pub holds: Option<bool>,
    pub error: Option<String>,
}

impl TrialRow for KrrBoundRow {
    fn group_key(&self) -> Vec<(&'static str, usize)> {
        vec![("d", self.d), ("n", self.n)]
    }
    fn metric(&self) -> Option<f64> {
        self.rkhs_norm_sq
    }
    fn passed(&self) -> Option<bool> {
        self.holds
    }
    fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }
}

/// Kernel ridgeless interpolation with a fresh teacher and sample per trial.
pub fn verify_krr_bound(cfg: &ExperimentConfig) -> Result<Study<KrrBoundRow>> {
    let jobs = grid_jobs(cfg);
    let rows = run_trials(&jobs, |&(d, n, trial)| {
        let base = KrrBoundRow {
            trial,
            d,
            n,
            ..Default::default()
        };
        isolated(|| {
            let teacher = study_teacher(cfg, d, seed_path(cfg.master_seed, "teacher", &[u(d), u(n), u(trial)]))?;
            let data = sample_dataset(&teacher, n, seed_path(cfg.master_seed, "data", &[u(d), u(n), u(trial)]))?;
            let k = kernel_exact(
                cfg.family,
                &data.x,
                cfg.quadrature_size,
                seed_path(cfg.master_seed, "quadrature", &[u(d), u(n), u(trial)]),
            )?;
            let sol = kernel_ridgeless(&k, &data.y, kernel_cutoff(cfg, &k)?)?;
            Ok(KrrBoundRow {
                lambda_min_k: Some(linalg::eigen_min(&k)?),
                rkhs_norm_sq: Some(sol.rkhs_norm_sq),
                relative_residual: Some(sol.relative_residual),
                holds: Some(sol.rkhs_norm_sq >= 0.0 && sol.relative_residual <= INTERP_TOL),
                ..base.clone()
            })
        })
        .unwrap_or_else(|e| KrrBoundRow {
            error: trial_error(e),
            ..base
        })
    });
    let spec = SummarySpec {
        metric: "rkhs_norm_sq",
        secondary: None,
        fit_slope: false,
    };
    Ok(Study::new(cfg, rows, &spec))
}

fn grid_jobs(cfg: &ExperimentConfig) -> Vec<(usize, usize, usize)> {
    let mut jobs = Vec::new();
    for &d in &cfg.d_grid {
        for &n in &cfg.n_grid {
            jobs.extend((0..cfg.trials).map(|t| (d, n, t)));
        }
    }
    jobs
}

fn grid_jobs_m(cfg: &ExperimentConfig) -> Vec<(usize, usize, usize, usize)> {
    let mut jobs = Vec::new();
    for &d in &cfg.d_grid {
        for &n in &cfg.n_grid {
            for &m in &cfg.m_grid {
                jobs.extend((0..cfg.trials).map(|t| (d, n, m, t)));
            }
        }
    }
    jobs
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct MinNormRfRow {
    pub trial: usize,
    pub d: usize,
    pub n: usize,
    /// Requested width; the width used is `m_used`.
    pub m: usize,
    pub m_used: Option<usize>,
    #[serde(rename = "lambda_min_K")]
    pub lambda_min_k: Option<f64>,
    /// `8 n^2 ln(2 n^2 / delta) / lambda^2`.
    pub threshold: Option<f64>,
    pub data_redraws: Option<usize>,
    pub sub_threshold: Option<bool>,
    /// `||a|| / sqrt(m)`.
    pub a_norm_scaled: Option<f64>,
    /// `sqrt(y^T K^{-1} y)`.
    pub rkhs_norm: Option<f64>,
    pub bound: Option<f64>,
    pub holds: Option<bool>,
    pub interp_error: Option<f64>,
    pub error: Option<String>,
}

impl TrialRow for MinNormRfRow {
    fn group_key(&self) -> Vec<(&'static str, usize)> {
        vec![("d", self.d), ("n", self.n), ("m", self.m)]
    }
    fn metric(&self) -> Option<f64> {
        Some(self.a_norm_scaled? / self.bound?)
    }
    fn passed(&self) -> Option<bool> {
        self.holds
    }
    fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }
}

fn reference_kernel_for(cfg: &ExperimentConfig, data: &Dataset, path: &[u64]) -> Result<(DMatrix<f64>, f64)> {
    let k = kernel_exact(cfg.family, &data.x, cfg.quadrature_size, seed_path(cfg.master_seed, "quadrature", path))?;
    let lambda = linalg::eigen_min(&k)?;
    Ok((k, lambda))
}

/// Norm of the minimum-norm random feature interpolant against the RKHS
/// norm of the data. The width is raised to the required threshold when
/// that is within `m_cap`; samples whose threshold exceeds the cap are
/// redrawn up to `max_data_redraws` times.
pub fn verify_min_norm_rf(cfg: &ExperimentConfig) -> Result<Study<MinNormRfRow>> {
    let jobs = grid_jobs_m(cfg);
    let rows = run_trials(&jobs, |&(d, n, m, trial)| {
        let base = MinNormRfRow {
            trial,
            d,
            n,
            m,
            ..Default::default()
        };
        isolated(|| {
            let mut chosen = None;
            for redraw in 0..=cfg.max_data_redraws {
                let path = [u(d), u(n), u(m), u(trial), u(redraw)];
                let teacher = study_teacher(cfg, d, seed_path(cfg.master_seed, "teacher", &path))?;
                let data = sample_dataset(&teacher, n, seed_path(cfg.master_seed, "data", &path))?;
                let (k, lambda) = reference_kernel_for(cfg, &data, &path)?;
                let threshold = min_norm_width(n, cfg.delta, lambda);
                let feasible = threshold <= cfg.m_cap as f64;
                chosen = Some((data, k, lambda, threshold, redraw, path));
                if feasible {
                    break;
                }
            }
            let (data, k, lambda, threshold, redraws, path) = chosen.expect("at least one draw");
            let m_used = (m as f64).max(threshold.ceil()).min(cfg.m_cap as f64) as usize;
            let params = cfg
                .family
                .sample_params(d, m_used, seed_path(cfg.master_seed, "features", &path))?;
            let phi = feature_matrix(&params, &data.x)?;
            let sol = min_l2_interpolant(&phi, &data.y, cfg.rcond)?;
            let rkhs = crate::random_features::rkhs_norm_bound(&k, &data.y, kernel_cutoff(cfg, &k)?)?.sqrt();
            let a_scaled = sol.coefficients.norm() / (m_used as f64).sqrt();
            let bound = 2.0 * rkhs;
            Ok(MinNormRfRow {
                m_used: Some(m_used),
                lambda_min_k: Some(lambda),
                threshold: Some(threshold),
                data_redraws: Some(redraws),
                sub_threshold: Some((m_used as f64) < threshold),
                a_norm_scaled: Some(a_scaled),
                rkhs_norm: Some(rkhs),
                bound: Some(bound),
                holds: Some(a_scaled <= bound && sol.interp_error <= INTERP_TOL),
                interp_error: Some(sol.interp_error),
                ..base.clone()
            })
        })
        .unwrap_or_else(|e| MinNormRfRow {
            error: trial_error(e),
            ..base
        })
    });
    let spec = SummarySpec {
        metric: "a_norm_scaled / bound",
        secondary: None,
        fit_slope: false,
    };
    Ok(Study::new(cfg, rows, &spec))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct FitRandLabelRow {
    pub trial: usize,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub lambda_ref: Option<f64>,
    pub lambda_emp: Option<f64>,
    pub resamples_used: Option<usize>,
    /// `2 n^2 ln(4 n^2) / lambda^2`.
    pub width_required: Option<f64>,
    pub r_norm: Option<f64>,
    pub a_norm: Option<f64>,
    pub sigma_min: Option<f64>,
    pub path_norm: Option<f64>,
    /// `sqrt(2 / lambda_ref) ||r||`.
    pub bound_ref: Option<f64>,
    /// `||r|| / sqrt(lambda_emp)`.
    pub bound_emp: Option<f64>,
    pub certificate_holds: Option<bool>,
    pub interp_error: Option<f64>,
    pub holds: Option<bool>,
    pub error: Option<String>,
}

impl TrialRow for FitRandLabelRow {
    fn group_key(&self) -> Vec<(&'static str, usize)> {
        vec![("d", self.d), ("n", self.n), ("m", self.m)]
    }
    fn metric(&self) -> Option<f64> {
        Some(self.path_norm? / self.bound_emp?)
    }
    fn passed(&self) -> Option<bool> {
        self.holds
    }
    fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }
}

/// Residual fits of random unit-norm labels on fixed inputs.
pub fn verify_fit_rand_label(cfg: &ExperimentConfig) -> Result<Study<FitRandLabelRow>> {
    let mut rows = Vec::new();
    for &d in &cfg.d_grid {
        for &n in &cfg.n_grid {
            let x = sample_inputs(d, n, seed_path(cfg.master_seed, "inputs", &[u(d), u(n)]));
            let lambda_ref = kernel_exact(
                cfg.family,
                &x,
                cfg.quadrature_size,
                seed_path(cfg.master_seed, "quadrature", &[u(d), u(n)]),
            )
            .and_then(|k| linalg::eigen_min(&k));
            let jobs: Vec<(usize, usize)> = cfg
                .m_grid
                .iter()
                .flat_map(|&m| (0..cfg.trials).map(move |t| (m, t)))
                .collect();
            rows.extend(run_trials(&jobs, |&(m, trial)| {
                let base = FitRandLabelRow {
                    trial,
                    d,
                    n,
                    m,
                    ..Default::default()
                };
                isolated(|| {
                    let lambda = *lambda_ref.as_ref().map_err(|e| Error::invalid(e.to_string()))?;
                    let path = [u(d), u(n), u(m), u(trial)];
                    let mut rng = rng_from_seed(seed_path(cfg.master_seed, "labels", &path));
                    let mut r = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                    r /= r.norm();
                    let fit = fit_residual_net(
                        &x,
                        &r,
                        m,
                        lambda,
                        cfg.max_resamples,
                        seed_path(cfg.master_seed, "features", &path),
                        cfg.rcond,
                    )?;
                    let path_norm = fit.path_norm();
                    let bound_ref = fit.norm_bound();
                    let bound_emp = fit.empirical_norm_bound();
                    let certificate = fit.certificate_holds(1e-9);
                    Ok(FitRandLabelRow {
                        lambda_ref: Some(lambda),
                        lambda_emp: Some(fit.lambda_emp),
                        resamples_used: Some(fit.resamples_used),
                        width_required: Some(residual_fit_width(n, lambda)),
                        r_norm: Some(fit.r_norm),
                        a_norm: Some(fit.a_norm),
                        sigma_min: Some(fit.sigma_min),
                        path_norm: Some(path_norm),
                        bound_ref: Some(bound_ref),
                        bound_emp: Some(bound_emp),
                        certificate_holds: Some(certificate),
                        interp_error: Some(fit.interp_error),
                        holds: Some(
                            fit.interp_error <= INTERP_TOL
                                && certificate
                                && path_norm <= bound_emp * (1.0 + 1e-12)
                                && path_norm <= bound_ref,
                        ),
                        ..base.clone()
                    })
                })
                .unwrap_or_else(|e| FitRandLabelRow {
                    error: trial_error(e),
                    ..base
                })
            }));
        }
    }
    let spec = SummarySpec {
        metric: "path_norm / bound_emp",
        secondary: None,
        fit_slope: false,
    };
    Ok(Study::new(cfg, rows, &spec))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct CompositeRow {
    pub trial: usize,
    pub d: usize,
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub lambda_ref: Option<f64>,
    pub lambda_emp: Option<f64>,
    pub resamples_used: Option<usize>,
    pub path_norm: Option<f64>,
    pub teacher_norm: Option<f64>,
    pub interp_error: Option<f64>,
    pub approx_risk: Option<f64>,
    pub first_path_norm: Option<f64>,
    pub residual_path_norm: Option<f64>,
    pub r_norm: Option<f64>,
    pub norm_ratio: Option<f64>,
    /// `6 n^2 ln(4 n^2) / lambda^2`.
    pub width_required: Option<f64>,
    pub holds: Option<bool>,
    pub error: Option<String>,
}

impl TrialRow for CompositeRow {
    fn group_key(&self) -> Vec<(&'static str, usize)> {
        vec![("d", self.d), ("n", self.n), ("m2", self.m2)]
    }
    fn metric(&self) -> Option<f64> {
        self.norm_ratio
    }
    fn passed(&self) -> Option<bool> {
        self.holds
    }
    fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }
}

pub fn interpolation_options(cfg: &ExperimentConfig) -> InterpolationOptions {
    InterpolationOptions {
        lambda_target: None,
        max_resamples: cfg.max_resamples,
        quadrature_size: cfg.quadrature_size,
        rcond: cfg.rcond,
        sampling: cfg.atom_sampling,
    }
}

/// Teacher approximation plus residual fit, with a fresh teacher and sample per trial.
pub fn verify_two_layer_composite(cfg: &ExperimentConfig) -> Result<Study<CompositeRow>> {
    let jobs = grid_jobs_m(cfg);
    let opts = interpolation_options(cfg);
    let rows = run_trials(&jobs, |&(d, n, m2, trial)| {
        let base = CompositeRow {
            trial,
            d,
            n,
            m1: cfg.m1,
            m2,
            ..Default::default()
        };
        isolated(|| {
            let path = [u(d), u(n), u(m2), u(trial)];
            let teacher = study_teacher(cfg, d, seed_path(cfg.master_seed, "teacher", &path))?;
            let data = sample_dataset(&teacher, n, seed_path(cfg.master_seed, "data", &path))?;
            let out = interpolate_two_layer(
                &data,
                &teacher,
                cfg.m1,
                m2,
                seed_path(cfg.master_seed, "features", &path),
                &opts,
            )?;
            let path_norm = out.path_norm();
            Ok(CompositeRow {
                lambda_ref: Some(out.lambda_ref),
                lambda_emp: Some(out.residual.lambda_emp),
                resamples_used: Some(out.residual.resamples_used),
                path_norm: Some(path_norm),
                teacher_norm: Some(out.teacher_norm),
                interp_error: Some(out.interp_error),
                approx_risk: Some(out.approximation.empirical_risk),
                first_path_norm: Some(out.approximation.net.path_norm()),
                residual_path_norm: Some(out.residual.path_norm()),
                r_norm: Some(out.residual.r_norm),
                norm_ratio: Some(out.norm_ratio()),
                width_required: Some(composite_width(n, out.lambda_ref)),
                holds: Some(path_norm <= 3.0 * out.teacher_norm && out.interp_error <= INTERP_TOL),
                ..base.clone()
            })
        })
        .unwrap_or_else(|e| CompositeRow {
            error: trial_error(e),
            ..base
        })
    });
    let spec = SummarySpec {
        metric: "path_norm / teacher_norm",
        secondary: None,
        fit_slope: false,
    };
    Ok(Study::new(cfg, rows, &spec))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct ResnetAddRow {
    pub trial: usize,
    pub d: usize,
    pub depth_a: usize,
    pub depth_b: usize,
    pub width_a: usize,
    pub width_b: usize,
    pub inner_a: usize,
    pub inner_b: usize,
    /// Largest `|sum(x) - a(x) - b(x)|` over the probes, relative to the largest `|a(x)| + |b(x)|`.
    pub value_error: Option<f64>,
    pub norm_a: Option<f64>,
    pub norm_b: Option<f64>,
    pub norm_sum: Option<f64>,
    pub norm_error: Option<f64>,
    pub holds: Option<bool>,
    pub error: Option<String>,
}

impl TrialRow for ResnetAddRow {
    fn group_key(&self) -> Vec<(&'static str, usize)> {
        vec![("d", self.d)]
    }
    fn metric(&self) -> Option<f64> {
        self.value_error.zip(self.norm_error).map(|(a, b)| a.max(b))
    }
    fn passed(&self) -> Option<bool> {
        self.holds
    }
    fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }
}

/// Random residual network with depth, width and inner width drawn from small ranges.
pub fn random_resnet(d: usize, rng: &mut impl Rng, seed: u64) -> Result<ResNet> {
    let depth = rng.random_range(1..=6);
    let width = d + 1 + rng.random_range(0..=5);
    let inner = rng.random_range(1..=5);
    ResNet::random(d, depth, width, inner, 0.5, seed)
}

const PROBES: usize = 1000;

pub fn verify_resnet_add(cfg: &ExperimentConfig) -> Result<Study<ResnetAddRow>> {
    let jobs = grid_jobs_d(cfg);
    let rows = run_trials(&jobs, |&(d, trial)| {
        let base = ResnetAddRow {
            trial,
            d,
            ..Default::default()
        };
        isolated(|| {
            let path = [u(d), u(trial)];
            let mut rng = rng_from_seed(seed_path(cfg.master_seed, "shapes", &path));
            let a = random_resnet(d, &mut rng, seed_path(cfg.master_seed, "net-a", &path))?;
            let b = random_resnet(d, &mut rng, seed_path(cfg.master_seed, "net-b", &path))?;
            let sum = resnet_add(&a, &b)?;
            let xs = sample_inputs(d, PROBES, seed_path(cfg.master_seed, "probes", &path));
            let (fa, fb) = (a.predict_columns(&xs)?, b.predict_columns(&xs)?);
            let scale = (fa.abs() + fb.abs()).max().max(f64::MIN_POSITIVE);
            let value_error = (sum.predict_columns(&xs)? - fa - fb).amax() / scale;
            let (na, nb, ns) = (a.weighted_path_norm(), b.weighted_path_norm(), sum.weighted_path_norm());
            let norm_error = (ns - na - nb).abs() / (na + nb).max(f64::MIN_POSITIVE);
            Ok(ResnetAddRow {
                depth_a: a.depth(),
                depth_b: b.depth(),
                width_a: a.width(),
                width_b: b.width(),
                inner_a: a.inner_width(),
                inner_b: b.inner_width(),
                value_error: Some(value_error),
                norm_a: Some(na),
                norm_b: Some(nb),
                norm_sum: Some(ns),
                norm_error: Some(norm_error),
                holds: Some(value_error <= IDENTITY_TOL && norm_error <= IDENTITY_TOL),
                ..base.clone()
            })
        })
        .unwrap_or_else(|e| ResnetAddRow {
            error: trial_error(e),
            ..base
        })
    });
    let spec = SummarySpec {
        metric: "max(value_error, norm_error)",
        secondary: None,
        fit_slope: false,
    };
    Ok(Study::new(cfg, rows, &spec))
}

fn grid_jobs_d(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    cfg.d_grid
        .iter()
        .flat_map(|&d| (0..cfg.trials).map(move |t| (d, t)))
        .collect()
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct EmbeddingRow {
    pub trial: usize,
    pub d: usize,
    pub m: usize,
    /// Largest output difference over the probes, relative to the largest output magnitude.
    pub eval_error: Option<f64>,
    pub path_norm: Option<f64>,
    pub weighted_norm: Option<f64>,
    pub ratio: Option<f64>,
    pub holds: Option<bool>,
    pub error: Option<String>,
}

impl TrialRow for EmbeddingRow {
    fn group_key(&self) -> Vec<(&'static str, usize)> {
        vec![("d", self.d), ("m", self.m)]
    }
    fn metric(&self) -> Option<f64> {
        self.ratio
    }
    fn passed(&self) -> Option<bool> {
        self.holds
    }
    fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }
}

/// Two-layer net with outer weights uniform in `[-2, 2]` and inner weights in `[-1, 1]`.
pub fn random_two_layer(d: usize, m: usize, seed: u64) -> Result<TwoLayerNet> {
    let mut rng = rng_from_seed(seed);
    let outer = DVector::from_fn(m, |_, _| rng.random_range(-2.0..=2.0));
    let inner = DMatrix::from_fn(d + 1, m, |_, _| rng.random_range(-1.0..=1.0));
    TwoLayerNet::from_parts(outer, inner)
}

pub fn verify_embedding(cfg: &ExperimentConfig) -> Result<Study<EmbeddingRow>> {
    let mut jobs = Vec::new();
    for &d in &cfg.d_grid {
        for &m in &cfg.m_grid {
            jobs.extend((0..cfg.trials).map(|t| (d, m, t)));
        }
    }
    let rows = run_trials(&jobs, |&(d, m, trial)| {
        let base = EmbeddingRow {
            trial,
            d,
            m,
            ..Default::default()
        };
        isolated(|| {
            let path = [u(d), u(m), u(trial)];
            let net = random_two_layer(d, m, seed_path(cfg.master_seed, "net", &path))?;
            let emb = embed_two_layer(&net);
            let xs = sample_inputs(d, PROBES, seed_path(cfg.master_seed, "probes", &path));
            let f = net.predict_columns(&xs)?;
            let scale = f.amax().max(f64::MIN_POSITIVE);
            let eval_error = (emb.predict_columns(&xs)? - f).amax() / scale;
            let (p, w) = (net.path_norm(), emb.weighted_path_norm());
            let ratio = w / p;
            Ok(EmbeddingRow {
                eval_error: Some(eval_error),
                path_norm: Some(p),
                weighted_norm: Some(w),
                ratio: Some(ratio),
                holds: Some(eval_error <= IDENTITY_TOL && (ratio - 3.0).abs() <= 3.0 * IDENTITY_TOL),
                ..base.clone()
            })
        })
        .unwrap_or_else(|e| EmbeddingRow {
            error: trial_error(e),
            ..base
        })
    });
    let spec = SummarySpec {
        metric: "weighted_norm / path_norm",
        secondary: None,
        fit_slope: false,
    };
    Ok(Study::new(cfg, rows, &spec))
}

// ---------------------------------------------------------------------------

pub fn run_verify_lemma(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    match cfg.lemma.ok_or_else(|| Error::invalid("verify-lemma needs a lemma selector"))? {
        LemmaSelector::KernelApprox => verify_kernel_approx(cfg)?.into_output(),
        LemmaSelector::KrrBound => verify_krr_bound(cfg)?.into_output(),
        LemmaSelector::MinNormRf => verify_min_norm_rf(cfg)?.into_output(),
        LemmaSelector::FitRandLabel => verify_fit_rand_label(cfg)?.into_output(),
        LemmaSelector::TwoLayerComposite => verify_two_layer_composite(cfg)?.into_output(),
        LemmaSelector::ResnetAdd => verify_resnet_add(cfg)?.into_output(),
        LemmaSelector::Embedding => verify_embedding(cfg)?.into_output(),
    }
}
