//! Held-out risk against sample size, and the generalization bound audit.

use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind, ModelClass};
use super::verify::{interpolation_options, study_teacher, INTERP_TOL};
use super::{isolated, run_trials, Study, SummarySpec, TrialRow};
use crate::complexity::{
    generalization_bound, loss_constants, path_ball_upper, population_risk, rad_path_ball, rad_rf_ball,
    rad_weighted_path_upper,
};
use crate::error::{Error, Result};
use crate::random_features::{feature_matrix, min_l2_interpolant, min_norm_width, RandomFeatureModel};
use crate::resnet::{depth_requirement, interpolate_resnet, ResNet};
use crate::rng::seed_path;
use crate::sampling::{empirical_risk, sample_dataset, Dataset, Predictor, TeacherFunction};
use crate::two_layer::{composite_width, interpolate_two_layer};

#[derive(Debug, Clone, Default, Serialize)]
pub struct StudyRow {
    pub trial: usize,
    pub model_kind: String,
    pub d: usize,
    pub n: usize,
    /// Feature count, total neuron count, or depth, by model.
    pub m_or_l: usize,
    pub norm_radius: Option<f64>,
    pub rad_lower: Option<f64>,
    pub rad_upper: Option<f64>,
    pub empirical_risk: Option<f64>,
    pub bound: Option<f64>,
    pub test_risk: Option<f64>,
    pub bound_holds: Option<bool>,
    pub rad_lower_se: Option<f64>,
    /// Bound evaluated with the lower Rademacher estimate; carries no guarantee.
    pub bound_from_lower: Option<f64>,
    pub test_risk_se: Option<f64>,
    pub lambda_plugin: Option<f64>,
    pub threshold: Option<f64>,
    pub sub_threshold: Option<bool>,
    pub interp_error: Option<f64>,
    pub error: Option<String>,
}

impl TrialRow for StudyRow {
    fn group_key(&self) -> Vec<(&'static str, usize)> {
        vec![("d", self.d), ("n", self.n)]
    }
    fn metric(&self) -> Option<f64> {
        self.test_risk
    }
    fn passed(&self) -> Option<bool> {
        self.bound_holds
    }
    fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }
}

/// Quantities shared by every model before the bound is assembled.
struct Fitted {
    m_or_l: usize,
    radius: f64,
    rad_upper: f64,
    rad_lower: Option<(f64, f64)>,
    empirical_risk: f64,
    test: crate::complexity::RiskEstimate,
    lambda_plugin: f64,
    threshold: f64,
    interp_error: f64,
}

enum Teacher {
    Barron(TeacherFunction),
    Residual(ResNet),
}

impl Teacher {
    fn predictor(&self) -> &dyn Predictor {
        match self {
            Teacher::Barron(t) => t,
            Teacher::Residual(t) => t,
        }
    }
}

fn build_teacher(cfg: &ExperimentConfig, d: usize) -> Result<Teacher> {
    let seed = seed_path(cfg.master_seed, "teacher", &[d as u64]);
    match cfg.model {
        ModelClass::Rf | ModelClass::TwoLayer => Ok(Teacher::Barron(study_teacher(cfg, d, seed)?)),
        ModelClass::Resnet => {
            let net = ResNet::random(
                d,
                cfg.resnet_depth,
                cfg.resnet_width.max(d + 1),
                cfg.resnet_inner,
                cfg.resnet_weight_scale,
                seed,
            )?;
            let mut net = net.normalized();
            net.alpha *= cfg.coeff_scale.min(1.0);
            Ok(Teacher::Residual(net))
        }
    }
}

fn capped_width(cfg: &ExperimentConfig, n: usize) -> usize {
    (cfg.m_multiplier * n).clamp(n, cfg.m_cap)
}

fn fit_rf(cfg: &ExperimentConfig, teacher: &Teacher, data: &Dataset, path: &[u64], audit: bool) -> Result<Fitted> {
    let (d, n) = (data.d(), data.n());
    let m = capped_width(cfg, n);
    let params = cfg
        .family
        .sample_params(d, m, seed_path(cfg.master_seed, "features", path))?;
    let phi = feature_matrix(&params, &data.x)?;
    let sol = min_l2_interpolant(&phi, &data.y, cfg.rcond)?;
    // lambda_n(K^m) = sigma_min(Phi)^2 / m
    let lambda_plugin = sol.sigma_min().powi(2) / m as f64;
    let radius = sol.coefficients.norm() / (m as f64).sqrt();
    let rad_lower = if audit {
        let est = rad_rf_ball(&phi, radius, cfg.rad_draws, seed_path(cfg.master_seed, "signs", path))?;
        Some((est.mean, est.std_error))
    } else {
        None
    };
    let interp_error = sol.interp_error;
    let model = RandomFeatureModel::new(params, sol.coefficients)?;
    Ok(Fitted {
        m_or_l: m,
        radius,
        rad_upper: radius / (n as f64).sqrt(),
        rad_lower,
        empirical_risk: empirical_risk(&model, data)?,
        test: population_risk(
            &model,
            teacher.predictor(),
            cfg.test_size,
            seed_path(cfg.master_seed, "test", path),
        )?,
        lambda_plugin,
        threshold: min_norm_width(n, cfg.delta, lambda_plugin),
        interp_error,
    })
}

fn fit_two_layer(
    cfg: &ExperimentConfig,
    teacher: &TeacherFunction,
    data: &Dataset,
    path: &[u64],
    audit: bool,
) -> Result<Fitted> {
    let (d, n) = (data.d(), data.n());
    let m2 = capped_width(cfg, n);
    let out = interpolate_two_layer(
        data,
        teacher,
        cfg.m1,
        m2,
        seed_path(cfg.master_seed, "features", path),
        &interpolation_options(cfg),
    )?;
    let radius = out.path_norm();
    let rad_lower = if audit {
        let est = rad_path_ball(
            &data.x,
            radius,
            cfg.rad_draws,
            cfg.rad_starts,
            seed_path(cfg.master_seed, "signs", path),
        )?;
        Some((est.lower.mean, est.lower.std_error))
    } else {
        None
    };
    Ok(Fitted {
        m_or_l: out.net.width(),
        radius,
        rad_upper: path_ball_upper(radius, d, n),
        rad_lower,
        empirical_risk: empirical_risk(&out.net, data)?,
        test: population_risk(&out.net, teacher, cfg.test_size, seed_path(cfg.master_seed, "test", path))?,
        lambda_plugin: out.lambda_ref,
        threshold: composite_width(n, out.lambda_ref),
        interp_error: out.interp_error,
    })
}

fn fit_resnet(cfg: &ExperimentConfig, teacher: &ResNet, data: &Dataset, path: &[u64], audit: bool) -> Result<Fitted> {
    let (d, n) = (data.d(), data.n());
    let m2 = capped_width(cfg, n);
    let out = interpolate_resnet(
        data,
        teacher,
        cfg.l_keep,
        m2,
        seed_path(cfg.master_seed, "features", path),
        &interpolation_options(cfg),
    )?;
    let radius = out.norm();
    // the weighted-path ball of radius C contains every embedded two-layer
    // net of path norm C / 3, so the path-ball estimate is a lower bound
    let rad_lower = if audit {
        let est = rad_path_ball(
            &data.x,
            radius / 3.0,
            cfg.rad_draws,
            cfg.rad_starts,
            seed_path(cfg.master_seed, "signs", path),
        )?;
        Some((est.lower.mean, est.lower.std_error))
    } else {
        None
    };
    let threshold = depth_requirement(
        n,
        out.net.inner_width(),
        out.net.width(),
        out.lambda_ref,
        1.0,
        1.0,
        cfg.c_universal,
    )?;
    Ok(Fitted {
        m_or_l: out.net.depth(),
        radius,
        rad_upper: rad_weighted_path_upper(radius, d, n)?.mean,
        rad_lower,
        empirical_risk: empirical_risk(&out.net, data)?,
        test: population_risk(&out.net, teacher, cfg.test_size, seed_path(cfg.master_seed, "test", path))?,
        lambda_plugin: out.lambda_ref,
        threshold,
        interp_error: out.interp_error,
    })
}

fn run_study(cfg: &ExperimentConfig, audit: bool) -> Result<Study<StudyRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &d in &cfg.d_grid {
        let teacher = build_teacher(cfg, d)?;
        let jobs: Vec<(usize, usize)> = cfg
            .n_grid
            .iter()
            .flat_map(|&n| (0..cfg.trials).map(move |t| (n, t)))
            .collect();
        rows.extend(run_trials(&jobs, |&(n, trial)| {
            let base = StudyRow {
                trial,
                model_kind: cfg.model.name().to_string(),
                d,
                n,
                ..Default::default()
            };
            isolated(|| {
                let path = [d as u64, n as u64, trial as u64];
                let data = sample_dataset(teacher.predictor(), n, seed_path(cfg.master_seed, "data", &path))?;
                let fit = match (&teacher, cfg.model) {
                    (_, ModelClass::Rf) => fit_rf(cfg, &teacher, &data, &path, audit)?,
                    (Teacher::Barron(t), ModelClass::TwoLayer) => fit_two_layer(cfg, t, &data, &path, audit)?,
                    (Teacher::Residual(t), ModelClass::Resnet) => fit_resnet(cfg, t, &data, &path, audit)?,
                    _ => return Err(Error::invalid("teacher does not match the model class")),
                };
                let (q, c_loss) = loss_constants(fit.radius);
                let bound = generalization_bound(fit.empirical_risk, q, c_loss, fit.rad_upper, cfg.delta, n)?;
                let bound_from_lower = fit
                    .rad_lower
                    .map(|(lo, _)| generalization_bound(fit.empirical_risk, q, c_loss, lo, cfg.delta, n))
                    .transpose()?;
                Ok(StudyRow {
                    m_or_l: fit.m_or_l,
                    norm_radius: Some(fit.radius),
                    rad_lower: fit.rad_lower.map(|r| r.0),
                    rad_upper: Some(fit.rad_upper),
                    empirical_risk: Some(fit.empirical_risk),
                    bound: Some(bound),
                    test_risk: Some(fit.test.risk),
                    bound_holds: Some(fit.test.risk <= bound),
                    rad_lower_se: fit.rad_lower.map(|r| r.1),
                    bound_from_lower,
                    test_risk_se: Some(fit.test.std_error),
                    lambda_plugin: Some(fit.lambda_plugin),
                    threshold: Some(fit.threshold),
                    sub_threshold: Some((fit.m_or_l as f64) < fit.threshold),
                    interp_error: Some(fit.interp_error),
                    error: (fit.interp_error > INTERP_TOL)
                        .then(|| format!("interpolation error {:e} above tolerance", fit.interp_error)),
                    ..base.clone()
                })
            })
            .unwrap_or_else(|e| StudyRow {
                error: Some(e.to_string()),
                ..base
            })
        }));
    }
    let spec = SummarySpec {
        metric: "test_risk",
        secondary: None,
        fit_slope: true,
    };
    let mut study = Study::new(cfg, rows, &spec);
    let flagged = study.rows.iter().filter(|r| r.sub_threshold == Some(true)).count();
    if flagged > 0 {
        study.summary.notes.push(format!(
            "{flagged} row(s) run below the over-parametrization threshold (sub_threshold column)"
        ));
    }
    Ok(study)
}

/// Held-out risk of the interpolant over the `n` grid with a fitted log-log slope.
pub fn run_scale_study(cfg: &ExperimentConfig) -> Result<Study<StudyRow>> {
    if cfg.kind != ExperimentKind::ScaleStudy {
        return Err(Error::invalid("config kind is not scale-study"));
    }
    run_study(cfg, false)
}

/// The scaling study plus lower Rademacher estimates and the bound check.
pub fn run_bound_audit(cfg: &ExperimentConfig) -> Result<Study<StudyRow>> {
    if cfg.kind != ExperimentKind::BoundAudit {
        return Err(Error::invalid("config kind is not bound-audit"));
    }
    run_study(cfg, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ExperimentKind, model: ModelClass) -> ExperimentConfig {
        ExperimentConfig {
            n_grid: vec![8, 16],
            trials: 2,
            test_size: 500,
            rad_draws: 4,
            rad_starts: 1,
            quadrature_size: 20_000,
            m1: 32,
            m_multiplier: 16,
            ..ExperimentConfig::for_study(kind, model)
        }
    }

    #[test]
    fn every_model_runs() {
        for model in [ModelClass::Rf, ModelClass::TwoLayer, ModelClass::Resnet] {
            let s = run_bound_audit(&tiny(ExperimentKind::BoundAudit, model)).unwrap();
            assert_eq!(s.rows.len(), 4);
            assert_eq!(s.summary.failures, 0, "{model:?}: {:?}", s.rows[0].error);
            assert!(s.rows.iter().all(|r| r.rad_lower.is_some() && r.bound_holds == Some(true)));
        }
    }

    #[test]
    fn zero_teacher_leaves_slope_undefined() {
        let cfg = ExperimentConfig {
            coeff_scale: 0.0,
            n_grid: vec![8, 16, 32, 64],
            ..tiny(ExperimentKind::ScaleStudy, ModelClass::Rf)
        };
        let s = run_scale_study(&cfg).unwrap();
        assert!(s.rows.iter().all(|r| r.test_risk == Some(0.0)));
        assert!(s.summary.slopes[0].fit.is_none());
        assert!(s.summary.notes.iter().any(|n| n.contains("slope undefined")));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        assert!(run_scale_study(&tiny(ExperimentKind::BoundAudit, ModelClass::Rf)).is_err());
    }
}
