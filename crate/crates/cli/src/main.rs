use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Axis;

use arsivae::classifier::{Mlp, ShapleyMode, Task};
use arsivae::data::Dataset;
use arsivae::dataset_io::{load_checkpoint, load_dataset, save_checkpoint, save_dataset, write_json, Checkpoint};
use arsivae::metrics::latent_traversal;
use arsivae::objectives::Method;
use arsivae::phantom::IntensityLevels;
use arsivae::pipeline::{
    classification_metrics, classify, config_schema, evaluate_representation, explain, generate_dataset, RunConfig,
};
use arsivae::training::{checkpoint_dir, latent_means, load_representation, train_representation};
use arsivae::vae::{Vae, ENCODER_PREFIX};
use arsivae::Error;

#[derive(Parser)]
#[command(name = "arsivae", version, about = "Attribute-regularized introspective VAEs on cardiac phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct OptionalConfig {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset with its split.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a representation model.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruction metrics on the test split.
    EvalRecon(EvalArgs),
    /// Disentanglement metrics on the test split.
    EvalDisentangle(EvalArgs),
    /// Train and evaluate the latent classifier and the attribute baseline.
    Classify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: OptionalConfig,
    },
    /// Shapley attribution of a trained classifier.
    Explain {
        #[arg(long)]
        clf: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Sampled)]
        mode: Mode,
        #[arg(long, default_value_t = 2000)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Decode a sweep along one latent dimension.
    Traverse {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        span: f64,
        #[arg(long, default_value_t = 9)]
        steps: usize,
        #[command(flatten)]
        cfg: OptionalConfig,
    },
    /// Print the JSON schema of the run configuration.
    Schema,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Sampled,
}

/// Failure tagged with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Data(_) => 2,
            Error::Numerical(_) => 3,
            Error::ShapeMismatch { .. } | Error::Persistence(_) | Error::Compatibility(_) | Error::Contract(_) => 4,
            Error::Json(_) => 4,
            Error::Io { .. } => 5,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

/// Reads an input artifact; anything missing or unreadable is a mismatch.
fn artifact<T>(what: &str, path: &Path, r: arsivae::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        Error::Io { .. } | Error::Json(_) => Failure {
            code: 4,
            message: format!("cannot read {what} at {}: {e}", path.display()),
        },
        other => other.into(),
    })
}

fn read_data(path: &Path) -> CliResult<Dataset> {
    artifact("dataset", path, load_dataset(path))
}

/// Accepts a checkpoint directory or a training output directory.
fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let final_dir = checkpoint_dir(path, None);
    let dir = if final_dir.is_dir() { final_dir } else { path.to_path_buf() };
    artifact("checkpoint", &dir, load_checkpoint(&dir))
}

fn read_model(path: &Path) -> CliResult<Vae<f32>> {
    Ok(load_representation(&read_checkpoint(path)?)?.1)
}

fn load_config(path: &Path, overrides: &[String]) -> CliResult<RunConfig> {
    RunConfig::load(path, overrides).map_err(|e| match e {
        Error::Io { .. } => Failure {
            code: 2,
            message: format!("cannot read config: {e}"),
        },
        other => other.into(),
    })
}

fn optional_config(cfg: &OptionalConfig) -> CliResult<Option<RunConfig>> {
    match &cfg.config {
        Some(p) => load_config(p, &cfg.overrides).map(Some),
        None if cfg.overrides.is_empty() => Ok(None),
        None => Err(Failure {
            code: 2,
            message: "--set needs --config".into(),
        }),
    }
}

fn output_dir(out: Option<&PathBuf>, cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = out.or(cfg.out_dir.as_ref()).cloned().ok_or_else(|| Failure {
        code: 2,
        message: "no output directory: pass --out or set out_dir".into(),
    })?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { cfg, out } => {
            let config = load_config(&cfg.config, &cfg.overrides)?;
            let dir = output_dir(out.as_ref(), &config)?;
            let dataset = generate_dataset(&config.data)?;
            save_dataset(&dataset, &dir)?;
            let table = dataset.attributes();
            let stats = table.moments(&(0..dataset.len()).collect::<Vec<_>>());
            let summary = serde_json::json!({
                "n_samples": dataset.len(),
                "split": {
                    "train": dataset.split.train.len(),
                    "val": dataset.split.val.len(),
                    "test": dataset.split.test.len(),
                },
                "attributes": table.names,
                "mean": stats.mean,
                "std": stats.std,
            });
            write_json(&dir.join("summary.json"), &summary)?;
            print_json(&summary);
        }
        Command::Train { cfg, method, data, out } => {
            let config = load_config(&cfg.config, &cfg.overrides)?;
            let train = config.train_config(method);
            train.validate()?;
            let dataset = read_data(&data)?;
            let dir = output_dir(out.as_ref(), &config)?;
            write_json(&dir.join("config.json"), &config)?;
            let run = train_representation(&train, &dataset, Some(&dir))?;
            log::info!("wrote {}", checkpoint_dir(&dir, None).display());
            let last = run.log.epochs.last();
            print_json(&serde_json::json!({
                "method": train.objective.method,
                "epochs": run.checkpoint.provenance.epoch,
                "val_recon": last.map(|e| e.val_recon),
                "checkpoint": checkpoint_dir(&dir, None),
            }));
        }
        Command::EvalRecon(args) => eval(&args, true)?,
        Command::EvalDisentangle(args) => eval(&args, false)?,
        Command::Classify {
            ckpt,
            data,
            task,
            out,
            cfg,
        } => {
            let mut clf_cfg = optional_config(&cfg)?.map(|c| c.classifier).unwrap_or_default();
            if let Some(t) = task {
                clf_cfg.task = t;
            }
            clf_cfg.validate()?;
            let model = read_model(&ckpt)?;
            let dataset = read_data(&data)?;
            ensure_dir(&out)?;
            let result = classify(&model, &dataset, &clf_cfg)?;
            save_checkpoint(&result.run.checkpoint, &out.join("clf"))?;
            write_json(&out.join("classification_report.json"), &result.report)?;
            let metrics = classification_metrics(&result.report);
            write_json(&out.join("metrics.json"), &metrics)?;
            print_json(&metrics);
        }
        Command::Explain {
            clf,
            ckpt,
            data,
            out,
            mode,
            permutations,
            seed,
        } => {
            let clf_ckpt = read_checkpoint(&clf)?;
            let (mlp, clf_cfg, fingerprint) = Mlp::from_checkpoint(&clf_ckpt)?;
            let model = read_model(&ckpt)?;
            if let Some(fp) = fingerprint {
                if fp != model.params.fingerprint(ENCODER_PREFIX) {
                    return Err(Failure {
                        code: 4,
                        message: "classifier was trained on a different encoder".into(),
                    });
                }
            }
            let dataset = read_data(&data)?;
            let mode = match mode {
                Mode::Exact => ShapleyMode::Exact,
                Mode::Sampled => ShapleyMode::Sampled { permutations },
            };
            ensure_dir(&out)?;
            let report = explain(&mlp, clf_cfg.task, &model, &dataset, mode, seed)?;
            report.write_csv(&out.join("shap_summary.csv"))?;
            report.write_png(&out.join("shap_summary.png"))?;
            write_json(&out.join("shap_report.json"), &report)?;
            print_json(&serde_json::json!({
                "columns": report.columns,
                "classes": report.class_names,
                "summary": report.summary,
                "max_efficiency_residual": report.max_efficiency_residual,
            }));
        }
        Command::Traverse {
            ckpt,
            data,
            dim,
            out,
            span,
            steps,
            cfg,
        } => {
            let levels = optional_config(&cfg)?
                .map(|c| c.data.phantom.intensity_levels)
                .unwrap_or_else(IntensityLevels::default);
            let model = read_model(&ckpt)?;
            let dataset = read_data(&data)?;
            let rows = if dataset.split.test.is_empty() {
                (0..dataset.len()).collect()
            } else {
                dataset.split.test.clone()
            };
            let center = latent_means(&model, &dataset, &rows)?
                .mean_axis(Axis(0))
                .ok_or_else(|| Error::Data("no samples to center the traversal on".into()))?;
            ensure_dir(&out)?;
            let t = latent_traversal(&model, dim, center.view(), span, steps, &levels)?;
            t.write_png(&out.join(format!("traversal_dim{dim}.png")))?;
            t.write_csv(&out.join(format!("traversal_dim{dim}.csv")))?;
            println!("wrote {} frames for dimension {dim}", t.images.len());
        }
        Command::Schema => print_json(&config_schema()),
    }
    Ok(())
}

fn eval(args: &EvalArgs, recon: bool) -> CliResult<()> {
    let model = read_model(&args.ckpt)?;
    let dataset = read_data(&args.data)?;
    ensure_dir(&args.out)?;
    let report = evaluate_representation(&model, &dataset, &dataset.split.test, recon, !recon)?;
    report.write(&args.out)?;
    print_json(&serde_json::to_value(&report).map_err(Error::from)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
