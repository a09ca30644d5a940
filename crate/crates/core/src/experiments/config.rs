use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random_features::{FeatureFamily, DEFAULT_QUADRATURE};
use crate::two_layer::{AtomSampling, DEFAULT_MAX_RESAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VerifyLemma,
    ScaleStudy,
    BoundAudit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelClass {
    Rf,
    TwoLayer,
    Resnet,
}

impl ModelClass {
    pub fn name(self) -> &'static str {
        match self {
            ModelClass::Rf => "rf",
            ModelClass::TwoLayer => "two-layer",
            ModelClass::Resnet => "resnet",
        }
    }
}

impl FromStr for ModelClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(ModelClass::Rf),
            "two-layer" => Ok(ModelClass::TwoLayer),
            "resnet" => Ok(ModelClass::Resnet),
            other => Err(Error::invalid(format!("unknown model class '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LemmaSelector {
    KernelApprox,
    KrrBound,
    MinNormRf,
    FitRandLabel,
    TwoLayerComposite,
    ResnetAdd,
    Embedding,
}

impl LemmaSelector {
    pub const ALL: [LemmaSelector; 7] = [
        LemmaSelector::KernelApprox,
        LemmaSelector::KrrBound,
        LemmaSelector::MinNormRf,
        LemmaSelector::FitRandLabel,
        LemmaSelector::TwoLayerComposite,
        LemmaSelector::ResnetAdd,
        LemmaSelector::Embedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LemmaSelector::KernelApprox => "kernel-approx",
            LemmaSelector::KrrBound => "krr-bound",
            LemmaSelector::MinNormRf => "min-norm-rf",
            LemmaSelector::FitRandLabel => "fit-rand-label",
            LemmaSelector::TwoLayerComposite => "two-layer-composite",
            LemmaSelector::ResnetAdd => "resnet-add",
            LemmaSelector::Embedding => "embedding",
        }
    }
}

impl FromStr for LemmaSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Self::ALL.iter().map(|l| l.name()).collect();
                Error::invalid(format!("unknown lemma selector '{s}' (expected one of {})", known.join(", ")))
            })
    }
}

/// Everything that determines an experiment's output. Thread count is
/// deliberately absent: results do not depend on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelClass,
    pub lemma: Option<LemmaSelector>,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub l_grid: Vec<usize>,
    pub d_grid: Vec<usize>,
    pub trials: usize,
    pub delta: f64,
    pub master_seed: u64,
    /// Where results are written; not echoed into outputs, so identical runs
    /// written to different places stay byte-identical.
    #[serde(skip_serializing)]
    pub output: PathBuf,
    /// Relative singular-value cutoff; `None` picks `1e-10 * max(n, m)`.
    pub rcond: Option<f64>,
    pub c_universal: f64,

    pub family: FeatureFamily,
    pub teacher_atoms: usize,
    /// Teacher coefficients are uniform in `[-coeff_scale, coeff_scale]`; zero gives the zero teacher.
    pub coeff_scale: f64,
    /// Studies use width `m_multiplier * n`.
    pub m_multiplier: usize,
    /// Width of the teacher-approximation block.
    pub m1: usize,
    pub atom_sampling: AtomSampling,
    pub quadrature_size: usize,
    pub test_size: usize,
    pub rad_draws: usize,
    pub rad_starts: usize,
    pub max_resamples: usize,
    pub max_data_redraws: usize,
    pub n_cap: usize,
    pub m_cap: usize,
    pub l_cap: usize,
    pub d_cap: usize,
    /// Residual-network teacher: depth, width and inner width.
    pub resnet_depth: usize,
    pub resnet_width: usize,
    pub resnet_inner: usize,
    pub resnet_weight_scale: f64,
    /// Teacher layers kept in the approximating part.
    pub l_keep: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::VerifyLemma,
            model: ModelClass::Rf,
            lemma: None,
            n_grid: vec![32],
            m_grid: vec![4096],
            l_grid: vec![4],
            d_grid: vec![4],
            trials: 20,
            delta: 0.1,
            master_seed: 0,
            output: PathBuf::from("out"),
            rcond: None,
            c_universal: 1.0,
            family: FeatureFamily::ReluL1sphere,
            teacher_atoms: 64,
            coeff_scale: 1.0,
            m_multiplier: 64,
            m1: 512,
            atom_sampling: AtomSampling::Iid,
            quadrature_size: DEFAULT_QUADRATURE,
            test_size: 20_000,
            rad_draws: 256,
            rad_starts: 16,
            max_resamples: DEFAULT_MAX_RESAMPLES,
            max_data_redraws: 20,
            n_cap: 1024,
            m_cap: 131_072,
            l_cap: 256,
            d_cap: 64,
            resnet_depth: 4,
            resnet_width: 8,
            resnet_inner: 4,
            resnet_weight_scale: 0.5,
            l_keep: 3,
        }
    }
}

impl ExperimentConfig {
    /// Canonical settings for one lemma check.
    pub fn for_lemma(lemma: LemmaSelector) -> Self {
        let base = Self {
            kind: ExperimentKind::VerifyLemma,
            lemma: Some(lemma),
            ..Self::default()
        };
        match lemma {
            LemmaSelector::KernelApprox => Self {
                n_grid: vec![32],
                m_grid: (6..=14).map(|k| 1usize << k).collect(),
                trials: 200,
                ..base
            },
            LemmaSelector::KrrBound => Self {
                n_grid: vec![32],
                trials: 50,
                ..base
            },
            LemmaSelector::MinNormRf => Self {
                n_grid: vec![2],
                m_grid: vec![1024],
                trials: 50,
                ..base
            },
            LemmaSelector::FitRandLabel => Self {
                model: ModelClass::TwoLayer,
                d_grid: vec![3],
                n_grid: vec![16],
                m_grid: vec![4096],
                trials: 50,
                ..base
            },
            LemmaSelector::TwoLayerComposite => Self {
                model: ModelClass::TwoLayer,
                n_grid: vec![32],
                m_grid: vec![4096],
                m1: 512,
                trials: 50,
                ..base
            },
            LemmaSelector::ResnetAdd => Self {
                model: ModelClass::Resnet,
                d_grid: vec![3],
                trials: 100,
                ..base
            },
            LemmaSelector::Embedding => Self {
                model: ModelClass::Resnet,
                d_grid: vec![3],
                m_grid: vec![8],
                trials: 100,
                ..base
            },
        }
    }

    /// Canonical settings for a scaling study or bound audit.
    pub fn for_study(kind: ExperimentKind, model: ModelClass) -> Self {
        let base = Self {
            kind,
            model,
            n_grid: vec![32, 64, 128, 256, 512],
            trials: 20,
            ..Self::default()
        };
        match model {
            ModelClass::Rf => base,
            ModelClass::TwoLayer => Self {
                n_grid: vec![16, 32, 64, 128],
                m_multiplier: 32,
                m1: 256,
                quadrature_size: 100_000,
                rad_draws: 32,
                rad_starts: 4,
                ..base
            },
            ModelClass::Resnet => Self {
                d_grid: vec![3],
                n_grid: vec![16, 32, 64, 128],
                m_multiplier: 32,
                quadrature_size: 100_000,
                rad_draws: 32,
                rad_starts: 4,
                ..base
            },
        }
    }

    pub fn preset(kind: ExperimentKind, model: ModelClass, lemma: Option<LemmaSelector>) -> Self {
        match (kind, lemma) {
            (ExperimentKind::VerifyLemma, Some(l)) => Self::for_lemma(l),
            _ => Self::for_study(kind, model),
        }
    }

    /// Overlays the keys of a JSON object onto `self`.
    pub fn merged_with(&self, overrides: &serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        if let Some(b) = base.as_object_mut() {
            b.insert("output".into(), serde_json::to_value(&self.output)?);
        }
        match (base.as_object_mut(), overrides.as_object()) {
            (Some(b), Some(o)) => {
                for (k, v) in o {
                    b.insert(k.clone(), v.clone());
                }
            }
            _ => return Err(Error::invalid("config must be a JSON object")),
        }
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let kind = value
            .get("kind")
            .map(|k| serde_json::from_value(k.clone()))
            .transpose()?
            .unwrap_or(ExperimentKind::VerifyLemma);
        let model = value
            .get("model")
            .map(|k| serde_json::from_value(k.clone()))
            .transpose()?
            .unwrap_or(ModelClass::Rf);
        let lemma = value
            .get("lemma")
            .filter(|l| !l.is_null())
            .map(|k| serde_json::from_value(k.clone()))
            .transpose()?;
        Self::preset(kind, model, lemma).merged_with(&value)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let grids = [
            ("n_grid", &self.n_grid),
            ("m_grid", &self.m_grid),
            ("l_grid", &self.l_grid),
            ("d_grid", &self.d_grid),
        ];
        for (name, grid) in grids {
            if grid.is_empty() {
                return Err(Error::invalid(format!("{name} must not be empty")));
            }
            if grid.contains(&0) {
                return Err(Error::invalid(format!("{name} entries must be positive")));
            }
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.c_universal > 0.0) {
            return Err(Error::invalid("c_universal must be positive"));
        }
        if !(self.coeff_scale >= 0.0 && self.coeff_scale.is_finite()) {
            return Err(Error::invalid("coeff_scale must be nonnegative"));
        }
        if self.kind == ExperimentKind::VerifyLemma && self.lemma.is_none() {
            return Err(Error::invalid("verify-lemma needs a lemma selector"));
        }
        let positive = [
            ("teacher_atoms", self.teacher_atoms),
            ("m1", self.m1),
            ("quadrature_size", self.quadrature_size),
            ("test_size", self.test_size),
            ("rad_draws", self.rad_draws),
            ("max_resamples", self.max_resamples),
            ("resnet_depth", self.resnet_depth),
            ("resnet_inner", self.resnet_inner),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n > self.n_cap) {
            return Err(Error::invalid(format!("n = {n} exceeds the cap {}", self.n_cap)));
        }
        if let Some(&d) = self.d_grid.iter().find(|&&d| d > self.d_cap) {
            return Err(Error::invalid(format!("d = {d} exceeds the cap {}", self.d_cap)));
        }
        if self.resnet_width > self.d_cap {
            return Err(Error::invalid(format!("resnet width exceeds the cap {}", self.d_cap)));
        }
        if self.resnet_depth > self.l_cap {
            return Err(Error::invalid(format!("resnet depth exceeds the cap {}", self.l_cap)));
        }
        Ok(())
    }

    /// File stem for this run's outputs.
    pub fn output_stem(&self) -> String {
        match (self.kind, self.lemma) {
            (ExperimentKind::VerifyLemma, Some(l)) => format!("verify-{}", l.name()),
            (ExperimentKind::ScaleStudy, _) => format!("scale-study-{}", self.model.name()),
            (ExperimentKind::BoundAudit, _) => format!("bound-audit-{}", self.model.name()),
            (ExperimentKind::VerifyLemma, None) => "verify".to_string(),
        }
    }
}
