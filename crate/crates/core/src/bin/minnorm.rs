use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use minnorm::experiments::{self, ExperimentConfig, ExperimentKind, LemmaSelector, ModelClass};
use minnorm::random_features::{feature_matrix, min_l2_interpolant, FeatureFamily, RandomFeatureModel};
use minnorm::resnet::{interpolate_resnet, norm_audit_row, ResNet};
use minnorm::rng::tagged_seed;
use minnorm::sampling::{make_teacher, sample_dataset, Dataset, TeacherFunction};
use minnorm::two_layer::{interpolate_two_layer, InterpolationOptions, TwoLayerNet};
use minnorm::{Error, Result};

#[derive(Parser)]
#[command(name = "minnorm", version, about = "Minimum-norm interpolation experiments")]
struct Cli {
    /// JSON config file; keys override the preset for the chosen experiment
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Trials per grid point
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads (results do not depend on this)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a teacher function and write teacher.json
    GenTeacher(GenTeacher),
    /// Sample a labelled dataset from a teacher and write data.json
    GenData(GenData),
    /// Fit a minimum-norm interpolant to a dataset
    Fit {
        #[command(subcommand)]
        model: FitModel,
    },
    /// Run a lemma check
    Verify {
        #[arg(long)]
        lemma: LemmaSelector,
    },
    /// Held-out risk against sample size
    ScaleStudy {
        #[arg(long)]
        model: Option<ModelClass>,
    },
    /// Held-out risk against the generalization bound
    BoundAudit {
        #[arg(long)]
        model: Option<ModelClass>,
    },
    /// Print the norms of a saved model as CSV
    Norms { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum TeacherKind {
    Barron,
    Resnet,
}

#[derive(Args)]
struct GenTeacher {
    #[arg(long, value_enum, default_value = "barron")]
    kind: TeacherKind,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 64)]
    atoms: usize,
    #[arg(long, default_value_t = 1.0)]
    coeff_scale: f64,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    inner: usize,
    #[arg(long, default_value_t = 0.5)]
    weight_scale: f64,
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    n: usize,
}

#[derive(Subcommand)]
enum FitModel {
    /// Minimum-l2-norm random feature interpolant
    Rf {
        #[arg(long)]
        data: PathBuf,
        /// Feature count (default 64 n)
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value = "relu_l1sphere")]
        family: FeatureFamily,
        #[arg(long)]
        rcond: Option<f64>,
    },
    /// Teacher approximation plus residual fit
    TwoLayer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, default_value_t = 512)]
        m1: usize,
        #[arg(long, default_value_t = 4096)]
        m2: usize,
        #[arg(long, default_value_t = 1_000_000)]
        quadrature: usize,
    },
    /// Truncated residual-network teacher plus embedded residual fit
    Resnet {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, default_value_t = 3)]
        keep: usize,
        #[arg(long, default_value_t = 1024)]
        m2: usize,
        #[arg(long, default_value_t = 1_000_000)]
        quadrature: usize,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(path)
}

fn resolve_config(
    cli: &Cli,
    kind: ExperimentKind,
    model: Option<ModelClass>,
    lemma: Option<LemmaSelector>,
) -> Result<ExperimentConfig> {
    let mut overrides = match &cli.config {
        Some(path) => match serde_json::from_str(&std::fs::read_to_string(path)?)? {
            Value::Object(map) => map,
            _ => return Err(Error::InvalidArgument("config must be a JSON object".into())),
        },
        None => Map::new(),
    };
    overrides.insert("kind".into(), serde_json::to_value(kind)?);
    if let Some(m) = model {
        overrides.insert("model".into(), serde_json::to_value(m)?);
    }
    if let Some(l) = lemma {
        overrides.insert("lemma".into(), serde_json::to_value(l)?);
    }
    if let Some(s) = cli.seed {
        overrides.insert("master_seed".into(), json!(s));
    }
    if let Some(t) = cli.trials {
        overrides.insert("trials".into(), json!(t));
    }
    if let Some(o) = &cli.out {
        overrides.insert("output".into(), json!(o));
    }
    ExperimentConfig::from_json_str(&Value::Object(overrides).to_string())
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn run_experiment(cfg: &ExperimentConfig) -> Result<()> {
    let output = experiments::run(cfg)?;
    let (csv, json) = output.write(&cfg.output)?;
    let s = &output.summary;
    for g in &s.groups {
        let pass = g.pass_fraction.map_or("-".to_string(), |p| format!("{p:.3}"));
        let median = g.median.map_or("-".to_string(), |m| format!("{m:.4e}"));
        println!(
            "{:<24} rows {:>4}  failures {:>3}  pass {:>6}  median {} {}",
            g.label, g.rows, g.failures, pass, s.metric, median
        );
    }
    for slope in s.slopes.iter() {
        if let Some(f) = &slope.fit {
            println!(
                "slope [{}] {:.3} (95% CI {:.3} .. {:.3})",
                slope.label, f.slope, f.ci_low, f.ci_high
            );
        }
    }
    for note in &s.notes {
        println!("note: {note}");
    }
    eprintln!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn seed_or_default(cli: &Cli, tag: &str) -> u64 {
    cli.seed.unwrap_or_else(|| tagged_seed(0, tag))
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    match &cli.command {
        Command::GenTeacher(g) => {
            let seed = seed_or_default(cli, "gen-teacher");
            let path = match g.kind {
                TeacherKind::Barron => {
                    let t = make_teacher(g.d, g.atoms, g.coeff_scale, seed)?.normalized();
                    write_json(&out_dir(cli), "teacher.json", &t)?
                }
                TeacherKind::Resnet => {
                    let t = ResNet::random(g.d, g.depth, g.width, g.inner, g.weight_scale, seed)?.normalized();
                    write_json(&out_dir(cli), "teacher.json", &t)?
                }
            };
            eprintln!("wrote {}", path.display());
        }
        Command::GenData(g) => {
            let seed = seed_or_default(cli, "gen-data");
            let text = std::fs::read_to_string(&g.teacher)?;
            let value: Value = serde_json::from_str(&text)?;
            let data = if value.get("layers").is_some() {
                sample_dataset(&serde_json::from_value::<ResNet>(value)?, g.n, seed)?
            } else {
                sample_dataset(&serde_json::from_value::<TeacherFunction>(value)?, g.n, seed)?
            };
            eprintln!("wrote {}", write_json(&out_dir(cli), "data.json", &data)?.display());
        }
        Command::Fit { model } => fit(cli, model)?,
        Command::Verify { lemma } => {
            let cfg = resolve_config(cli, ExperimentKind::VerifyLemma, None, Some(*lemma))?;
            run_experiment(&cfg)?;
        }
        Command::ScaleStudy { model } => {
            let cfg = resolve_config(cli, ExperimentKind::ScaleStudy, *model, None)?;
            run_experiment(&cfg)?;
        }
        Command::BoundAudit { model } => {
            let cfg = resolve_config(cli, ExperimentKind::BoundAudit, *model, None)?;
            run_experiment(&cfg)?;
        }
        Command::Norms { file } => norms(file)?,
    }
    Ok(())
}

fn fit(cli: &Cli, model: &FitModel) -> Result<()> {
    let seed = seed_or_default(cli, "fit");
    let dir = out_dir(cli);
    match model {
        FitModel::Rf { data, m, family, rcond } => {
            let data: Dataset = read_json(data)?;
            let m = m.unwrap_or(64 * data.n());
            let params = family.sample_params(data.d(), m, seed)?;
            let phi = feature_matrix(&params, &data.x)?;
            let sol = min_l2_interpolant(&phi, &data.y, *rcond)?;
            let report = json!({
                "m": m,
                "interp_error": sol.interp_error,
                "sigma_min": sol.sigma_min(),
                "sigma_max": sol.sigma_max(),
                "a_norm_scaled": sol.coefficients.norm() / (m as f64).sqrt(),
            });
            let model = RandomFeatureModel::new(params, sol.coefficients)?;
            let path = write_json(&dir, "rf-model.json", &model)?;
            println!("{report}");
            eprintln!("wrote {}", path.display());
        }
        FitModel::TwoLayer {
            data,
            teacher,
            m1,
            m2,
            quadrature,
        } => {
            let data: Dataset = read_json(data)?;
            let teacher: TeacherFunction = read_json(teacher)?;
            let opts = InterpolationOptions {
                quadrature_size: *quadrature,
                ..Default::default()
            };
            let out = interpolate_two_layer(&data, &teacher, *m1, *m2, seed, &opts)?;
            let report = json!({
                "m1": m1,
                "m2": m2,
                "lambda_ref": out.lambda_ref,
                "lambda_emp": out.residual.lambda_emp,
                "resamples_used": out.residual.resamples_used,
                "path_norm": out.path_norm(),
                "teacher_norm": out.teacher_norm,
                "norm_ratio": out.norm_ratio(),
                "interp_error": out.interp_error,
            });
            let path = write_json(&dir, "two-layer.json", &out.net)?;
            println!("{report}");
            eprintln!("wrote {}", path.display());
        }
        FitModel::Resnet {
            data,
            teacher,
            keep,
            m2,
            quadrature,
        } => {
            let data: Dataset = read_json(data)?;
            let teacher: ResNet = read_json(teacher)?;
            let opts = InterpolationOptions {
                quadrature_size: *quadrature,
                ..Default::default()
            };
            let out = interpolate_resnet(&data, &teacher, *keep, *m2, seed, &opts)?;
            let report = json!({
                "keep": keep,
                "m2": m2,
                "lambda_ref": out.lambda_ref,
                "weighted_path_norm": out.norm(),
                "first_norm": out.first_norm,
                "residual_path_norm": out.residual.path_norm(),
                "decomposed_norm": out.decomposed_norm(),
                "norm_bound": out.norm_bound(),
                "interp_error": out.interp_error,
            });
            let path = write_json(&dir, "resnet.json", &out.net)?;
            println!("{report}");
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn norms(file: &Path) -> Result<()> {
    let value: Value = read_json(file)?;
    let id = file.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let mut w = csv::Writer::from_writer(std::io::stdout());
    if value.get("layers").is_some() {
        let net: ResNet = serde_json::from_value(value)?;
        w.serialize(norm_audit_row(&id, &net)?)?;
    } else if value.get("neurons").is_some() {
        let net: TwoLayerNet = serde_json::from_value(value)?;
        w.write_record(["net_id", "m", "path_norm"])?;
        w.write_record([id, net.width().to_string(), net.path_norm().to_string()])?;
    } else if value.get("coefficients").is_some() {
        let model: RandomFeatureModel = serde_json::from_value(value)?;
        w.write_record(["net_id", "m", "a_norm_scaled"])?;
        w.write_record([id, model.m().to_string(), model.scaled_norm().to_string()])?;
    } else if value.get("atoms").is_some() {
        let t: TeacherFunction = serde_json::from_value(value)?;
        w.write_record(["net_id", "atoms", "barron_norm_upper"])?;
        w.write_record([id, t.n_atoms().to_string(), t.barron_norm_upper().to_string()])?;
    } else {
        return Err(Error::InvalidArgument(format!("{} is not a saved model", file.display())));
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
