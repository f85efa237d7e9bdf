//! End-to-end steps shared by the command line and the test suites.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::{
    evaluate, fit, mean_background, shap_summary, value_fn, ClassifierConfig, Evaluation, Mlp, ShapReport,
    ShapleyMode, Task,
};
use crate::data::Dataset;
use crate::error::{ensure, Error, Result};
use crate::metrics::{disentanglement, reconstruction, MetricsReport};
use crate::objectives::Method;
use crate::phantom::{generate_phantom, DiseaseClass, PhantomSpec};
use crate::training::{latent_means, train_classifier, ClassifierRun, TrainConfig};
use crate::vae::Vae;

/// Equal-frequency bins used for the mutual-information estimates.
pub const MODULARITY_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub phantom: PhantomSpec,
    pub n_samples: usize,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            phantom: PhantomSpec::default(),
            n_samples: 2000,
            split: [0.7, 0.15, 0.15],
            split_seed: 0,
        }
    }
}

/// The single JSON document describing a run. The three sections are
/// required; fields inside them fall back to their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    /// Default output directory when `--out` is not given.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Overrides `train.objective.method` when present.
    #[serde(default)]
    pub method: Option<Method>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            train: TrainConfig::default(),
            classifier: ClassifierConfig::default(),
            out_dir: None,
            method: None,
        }
    }
}

impl RunConfig {
    /// Parses a config document, applying `key=value` overrides on dotted
    /// paths first. Values are read as JSON, falling back to plain strings.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        for item in overrides {
            apply_override(&mut doc, item)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.phantom.validate()?;
        ensure!(self.data.n_samples >= 10, Config, "data.n_samples must be at least 10");
        self.train_config(None).validate()?;
        self.classifier.validate()
    }

    /// The stage-1 config with the method selection applied
    /// (`explicit` beats `self.method` beats the objective's own field).
    pub fn train_config(&self, explicit: Option<Method>) -> TrainConfig {
        let mut cfg = self.train.clone();
        if let Some(m) = explicit.or(self.method) {
            cfg.objective.method = m;
        }
        cfg
    }
}

fn apply_override(doc: &mut Value, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
    ensure!(!path.is_empty(), Config, "override `{item}` has an empty key");
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{}` is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// JSON schema of [`RunConfig`].
pub fn config_schema() -> Value {
    serde_json::to_value(schemars::schema_for!(RunConfig)).expect("schema serializes")
}

pub fn generate_dataset(cfg: &DataConfig) -> Result<Dataset> {
    let samples = generate_phantom(&cfg.phantom, cfg.n_samples)?;
    Dataset::from_phantoms(samples, cfg.split, cfg.split_seed)
}

/// Reconstruction and disentanglement metrics on the given rows.
pub fn evaluate_representation(
    model: &Vae<f32>,
    dataset: &Dataset,
    rows: &[usize],
    recon: bool,
    disentangle: bool,
) -> Result<MetricsReport> {
    ensure!(!rows.is_empty(), Data, "no samples to evaluate");
    let mut report = MetricsReport::default();
    if recon {
        report.reconstruction = Some(reconstruction(model, &dataset.images(rows)?)?);
    }
    if disentangle {
        let z = latent_means(model, dataset, rows)?;
        let attrs = dataset.attributes().select(rows).values;
        let assignment = &model.config.regularized_dims;
        ensure!(
            assignment.len() == attrs.ncols(),
            Compatibility,
            "model regularizes {} dimensions but the dataset has {} attributes",
            assignment.len(),
            attrs.ncols()
        );
        report.disentanglement = Some(disentanglement(
            z.view(),
            attrs.view(),
            &dataset.attribute_names,
            assignment,
            MODULARITY_BINS,
        )?);
    }
    Ok(report)
}

pub fn class_names(task: Task) -> Vec<String> {
    match task {
        Task::Binary => vec!["normal".into(), "pathological".into()],
        Task::Multi => DiseaseClass::ALL.iter().map(|c| c.name().to_string()).collect(),
    }
}

/// Accuracy of always predicting the most frequent training class.
pub fn majority_accuracy(train: &[usize], test: &[usize], classes: usize) -> f64 {
    let mut counts = vec![0usize; classes];
    for &l in train {
        counts[l] += 1;
    }
    let top = (0..classes).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    test.iter().filter(|&&l| l == top).count() as f64 / test.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub task: Task,
    pub classes: Vec<String>,
    pub n_test: usize,
    /// MLP on the frozen encoder's posterior means.
    pub latent: Evaluation,
    /// Same MLP on the standardized attributes.
    pub attribute_baseline: Evaluation,
    pub majority_class_accuracy: f64,
    pub best_epoch: usize,
    pub baseline_best_epoch: usize,
}

pub struct Classification {
    pub report: ClassificationReport,
    pub run: ClassifierRun,
    pub baseline: Mlp,
}

/// Stage 2 plus the attribute baseline, both scored on the test split.
pub fn classify(encoder: &Vae<f32>, dataset: &Dataset, cfg: &ClassifierConfig) -> Result<Classification> {
    let labels = dataset.task_labels(cfg.task.classes())?;
    let split = &dataset.split;
    ensure!(!split.test.is_empty(), Data, "the test split is empty");
    let pick = |rows: &[usize]| rows.iter().map(|&r| labels[r]).collect::<Vec<_>>();
    let (y_train, y_val, y_test) = (pick(&split.train), pick(&split.val), pick(&split.test));

    let run = train_classifier(encoder, dataset, &labels, cfg)?;
    let z_test = latent_means(encoder, dataset, &split.test)?;
    let latent = evaluate(&run.classifier.predict(z_test.view())?, &y_test)?;

    let attrs = dataset.attributes();
    let a = |rows: &[usize]| attrs.select(rows).values;
    let base = fit(&a(&split.train), &y_train, &a(&split.val), &y_val, cfg, true)?;
    let attribute_baseline = evaluate(&base.classifier.predict(a(&split.test).view())?, &y_test)?;

    let report = ClassificationReport {
        task: cfg.task,
        classes: class_names(cfg.task),
        n_test: y_test.len(),
        latent,
        attribute_baseline,
        majority_class_accuracy: majority_accuracy(&y_train, &y_test, cfg.task.classes()),
        best_epoch: run.best_epoch,
        baseline_best_epoch: base.best_epoch,
    };
    Ok(Classification {
        report,
        run,
        baseline: base.classifier,
    })
}

/// Shapley summary of a latent classifier on the test split, with the
/// training-split mean latent as background.
pub fn explain(
    clf: &Mlp,
    task: Task,
    encoder: &Vae<f32>,
    dataset: &Dataset,
    mode: ShapleyMode,
    seed: u64,
) -> Result<ShapReport> {
    let background = mean_background(&latent_means(encoder, dataset, &dataset.split.train)?)?;
    let z: Array2<f64> = latent_means(encoder, dataset, &dataset.split.test)?;
    shap_summary(
        &value_fn(clf),
        z.view(),
        background.view(),
        &encoder.config.regularized_dims,
        &dataset.attribute_names,
        &class_names(task),
        mode,
        seed,
    )
}

/// `metrics.json` written by `classify`.
pub fn classification_metrics(report: &ClassificationReport) -> Value {
    serde_json::json!({
        "task": report.task,
        "latent": report.latent,
        "attribute_baseline": report.attribute_baseline,
        "majority_class_accuracy": report.majority_class_accuracy,
    })
}
