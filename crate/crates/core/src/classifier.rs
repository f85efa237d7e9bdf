//! MLP classifier on latent codes (or attributes) and Shapley attribution.

use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::dataset_io::{fmt_f64, write_csv, Checkpoint, Provenance};
use crate::error::{ensure, Error, Result};
use crate::metrics::average_ranks;
use crate::nn::{softmax_rows, Activation, Adam, AdamConfig, Grads, Linear, ParamStore, Real};
use crate::rng::{derive_seed, substream};

pub const CLASSIFIER_KIND: &str = "classifier";
/// Largest dimensionality for which exact enumeration is allowed.
pub const MAX_EXACT_DIM: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Binary,
    Multi,
}

impl Task {
    pub fn classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multi => 5,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multi" | "multiclass-5" => Ok(Task::Multi),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub task: Task,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![64, 32],
            task: Task::Multi,
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.hidden.iter().all(|&h| h > 0), Config, "hidden sizes must be positive");
        ensure!(self.epochs >= 1, Config, "classifier epochs must be at least 1");
        ensure!(self.batch_size >= 1, Config, "classifier batch_size must be at least 1");
        ensure!(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            Config,
            "classifier learning_rate must be positive"
        );
        Ok(())
    }
}

/// Feed-forward ReLU network with a softmax head. Inputs are standardized
/// with the stored training moments before the first layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub params: ParamStore<f32>,
    pub input: Standardizer,
    pub in_features: usize,
    pub classes: usize,
    hidden: Vec<usize>,
    layers: Vec<Linear>,
    exact: ParamStore<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpMeta {
    classifier: ClassifierConfig,
    in_features: usize,
    classes: usize,
    input: Standardizer,
    encoder_fingerprint: Option<String>,
}

impl Mlp {
    pub fn new(in_features: usize, hidden: &[usize], classes: usize, input: Standardizer, seed: u64) -> Result<Self> {
        ensure!(in_features >= 1, Contract, "classifier needs at least one input feature");
        ensure!(classes >= 2, Config, "classifier needs at least two classes");
        ensure!(
            input.mean.len() == in_features && input.std.len() == in_features,
            Contract,
            "input standardizer width {} does not match {in_features} features",
            input.mean.len()
        );
        let mut rng = substream(seed, "classifier.init", 0);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut width = in_features;
        for (i, &h) in hidden.iter().chain(std::iter::once(&classes)).enumerate() {
            layers.push(Linear::register(&mut params, &format!("clf.layer{i}"), width, h, &mut rng));
            width = h;
        }
        let exact = params.cast();
        Ok(Mlp {
            params,
            input,
            in_features,
            classes,
            hidden: hidden.to_vec(),
            layers,
            exact,
        })
    }

    /// Zeroes the output layer so that every prediction is uniform.
    pub fn zero_head(&mut self) {
        let last = *self.layers.last().expect("output layer");
        self.params.get_mut(last.weight).fill(0.0);
        self.params.get_mut(last.bias).fill(0.0);
        self.sync();
    }

    fn sync(&mut self) {
        self.exact = self.params.cast();
    }

    fn standardize<F: Real>(&self, x: ArrayView2<f64>) -> Array2<F> {
        let mut out = Array2::zeros(x.raw_dim());
        for ((i, j), v) in x.indexed_iter() {
            out[[i, j]] = F::c((v - self.input.mean[j]) / self.input.std[j]);
        }
        out
    }

    fn forward<F: Real>(&self, store: &ParamStore<F>, x: Array2<F>) -> (Array2<F>, Vec<Array2<F>>) {
        let mut acts = vec![x];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward(store, acts.last().expect("input"));
            if i < last {
                Activation::Relu.forward(&mut h);
                acts.push(h);
            } else {
                return (h, acts);
            }
        }
        unreachable!("at least one layer")
    }

    fn check_width(&self, x: ArrayView2<f64>) -> Result<()> {
        ensure!(
            x.ncols() == self.in_features,
            Contract,
            "classifier expects {} features, got {}",
            self.in_features,
            x.ncols()
        );
        Ok(())
    }

    /// Class probabilities, evaluated in double precision.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x)?;
        let (logits, _) = self.forward(&self.exact, self.standardize(x));
        Ok(softmax_rows(&logits))
    }

    pub fn checkpoint(&self, cfg: &ClassifierConfig, encoder_fingerprint: Option<&str>) -> Result<Checkpoint> {
        let meta = MlpMeta {
            classifier: ClassifierConfig {
                hidden: self.hidden.clone(),
                ..cfg.clone()
            },
            in_features: self.in_features,
            classes: self.classes,
            input: self.input.clone(),
            encoder_fingerprint: encoder_fingerprint.map(String::from),
        };
        Ok(Checkpoint {
            kind: CLASSIFIER_KIND.into(),
            config: serde_json::to_value(meta)?,
            parameters: self.params.to_named_tensors(),
            training_state: None,
            provenance: Provenance {
                seed: cfg.seed,
                epoch: cfg.epochs,
                wall_time_secs: 0.0,
            },
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, ClassifierConfig, Option<String>)> {
        ensure!(
            ckpt.kind == CLASSIFIER_KIND,
            Compatibility,
            "expected a {CLASSIFIER_KIND} checkpoint, found `{}`",
            ckpt.kind
        );
        let meta: MlpMeta = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Compatibility(format!("classifier metadata: {e}")))?;
        let mut mlp = Mlp::new(meta.in_features, &meta.classifier.hidden, meta.classes, meta.input, 0)?;
        mlp.params.load_named_tensors(&ckpt.parameters)?;
        mlp.sync();
        Ok((mlp, meta.classifier, meta.encoder_fingerprint))
    }

    /// Mean cross-entropy over a batch; accumulates gradients when given.
    fn loss(&self, x: &Array2<f32>, labels: &[usize], grads: Option<&mut Grads<f32>>) -> f64 {
        let (logits, acts) = self.forward(&self.params, x.clone());
        let probs = softmax_rows(&logits);
        let n = labels.len() as f64;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -(f64::from(probs[[i, y]]).max(1e-12)).ln())
            .sum::<f64>()
            / n;
        if let Some(grads) = grads {
            let mut d = probs;
            for (i, &y) in labels.iter().enumerate() {
                d[[i, y]] -= 1.0;
            }
            d.mapv_inplace(|v| v / n as f32);
            for (i, layer) in self.layers.iter().enumerate().rev() {
                d = layer.backward(&self.params, &acts[i], &d, grads);
                if i > 0 {
                    Activation::Relu.backward(&acts[i], &mut d);
                }
            }
        }
        loss
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Config(format!("label {bad} does not fit a {classes}-class task")));
    }
    Ok(())
}

pub struct FitResult {
    pub classifier: Mlp,
    pub best_epoch: usize,
    pub val_accuracy: Vec<f64>,
    pub train_loss: Vec<f64>,
}

/// Trains a fresh classifier and keeps the epoch with the best validation
/// accuracy (earliest on ties; final epoch when there is no validation data).
/// With `standardize`, inputs are z-scored with training-split moments.
pub fn fit(
    x_train: &Array2<f64>,
    y_train: &[usize],
    x_val: &Array2<f64>,
    y_val: &[usize],
    cfg: &ClassifierConfig,
    standardize: bool,
) -> Result<FitResult> {
    cfg.validate()?;
    let classes = cfg.task.classes();
    check_labels(y_train, classes)?;
    check_labels(y_val, classes)?;
    ensure!(x_train.nrows() == y_train.len(), Contract, "training features and labels differ in length");
    ensure!(x_val.nrows() == y_val.len(), Contract, "validation features and labels differ in length");
    ensure!(!y_train.is_empty(), Data, "empty training set");
    let input = if standardize {
        Standardizer::fit(x_train)
    } else {
        Standardizer::identity(x_train.ncols())
    };
    let mut mlp = Mlp::new(x_train.ncols(), &cfg.hidden, classes, input, cfg.seed)?;
    let xs: Array2<f32> = mlp.standardize(x_train.view());
    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg, &mlp.params);
    let mut order: Vec<usize> = (0..y_train.len()).collect();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let mut val_accuracy = Vec::with_capacity(cfg.epochs);
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut substream(cfg.seed, "classifier.batches", epoch as u64));
        let mut total = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let xb = xs.select(Axis(0), rows);
            let yb: Vec<usize> = rows.iter().map(|&r| y_train[r]).collect();
            let mut grads = Grads::all(&mlp.params);
            total += mlp.loss(&xb, &yb, Some(&mut grads)) * rows.len() as f64;
            ensure!(grads.is_finite(), Numerical, "non-finite classifier gradient at epoch {epoch}");
            adam.step(&mut mlp.params, &grads);
        }
        train_loss.push(total / y_train.len() as f64);
        mlp.sync();
        if !y_val.is_empty() {
            let acc = accuracy(&mlp.predict(x_val.view())?, y_val);
            val_accuracy.push(acc);
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, mlp.params.clone()));
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            mlp.params = params;
            mlp.sync();
            epoch
        }
        None => cfg.epochs - 1,
    };
    Ok(FitResult {
        classifier: mlp,
        best_epoch,
        val_accuracy,
        train_loss,
    })
}

pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

fn accuracy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let pred = argmax_rows(probs);
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// One-vs-rest macro AUROC; `None` when the labels hold a single class.
    pub auroc: Option<f64>,
}

/// Accuracy, macro-F1 and one-vs-rest AUROC from predicted probabilities.
pub fn evaluate(probs: &Array2<f64>, labels: &[usize]) -> Result<Evaluation> {
    ensure!(probs.nrows() == labels.len(), Contract, "{} predictions for {} labels", probs.nrows(), labels.len());
    ensure!(!labels.is_empty(), Data, "cannot evaluate on an empty set");
    let classes = probs.ncols();
    check_labels(labels, classes)?;
    let pred = argmax_rows(probs);
    let acc = accuracy(probs, labels);
    let mut f1s = Vec::new();
    for c in 0..classes {
        let tp = pred.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count() as f64;
        let fp = pred.iter().zip(labels).filter(|&(&p, &l)| p == c && l != c).count() as f64;
        let fneg = pred.iter().zip(labels).filter(|&(&p, &l)| p != c && l == c).count() as f64;
        if tp + fp + fneg == 0.0 {
            continue;
        }
        f1s.push(2.0 * tp / (2.0 * tp + fp + fneg));
    }
    let macro_f1 = f1s.iter().sum::<f64>() / f1s.len().max(1) as f64;
    let present: Vec<usize> = (0..classes).filter(|c| labels.contains(c)).collect();
    let auroc = if present.len() < 2 {
        log::warn!("AUROC undefined: evaluation set holds a single class");
        None
    } else if classes == 2 {
        Some(binary_auroc(probs.column(1), labels.iter().map(|&l| l == 1)))
    } else {
        let per: Vec<f64> = present
            .iter()
            .map(|&c| binary_auroc(probs.column(c), labels.iter().map(|&l| l == c)))
            .collect();
        Some(per.iter().sum::<f64>() / per.len() as f64)
    };
    Ok(Evaluation {
        n: labels.len(),
        accuracy: acc,
        macro_f1,
        auroc,
    })
}

/// Mann–Whitney estimate of the AUROC with tied scores sharing ranks.
pub fn binary_auroc(scores: ArrayView1<f64>, positive: impl Iterator<Item = bool>) -> f64 {
    let pos: Vec<bool> = positive.collect();
    let ranks = average_ranks(&scores.to_vec());
    let n_pos = pos.iter().filter(|&&p| p).count() as f64;
    let n_neg = pos.len() as f64 - n_pos;
    let rank_sum: f64 = ranks.iter().zip(&pos).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ShapleyMode {
    Exact,
    Sampled { permutations: usize },
}

/// Shapley values of every feature for every output column of `f`.
///
/// `f` maps a batch of inputs to a batch of outputs (class probabilities).
/// Features outside a coalition take the `background` value. Returns an
/// N × D × C array.
pub fn shapley_values<M>(f: &M, x: ArrayView2<f64>, background: ArrayView1<f64>, mode: ShapleyMode, seed: u64) -> Result<Array3<f64>>
where
    M: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    let (n, d) = x.dim();
    ensure!(background.len() == d, Contract, "background has {} features, inputs have {d}", background.len());
    ensure!(d >= 1, Contract, "no features to attribute");
    let probe = f(background.insert_axis(Axis(0)))?;
    let c = probe.ncols();
    let mut out = Array3::zeros((n, d, c));
    match mode {
        ShapleyMode::Exact => {
            ensure!(d <= MAX_EXACT_DIM, Config, "exact Shapley enumeration is limited to {MAX_EXACT_DIM} features, got {d}");
            let weights: Vec<f64> = (0..=d).map(|s| if s < d { coalition_weight(s, d) } else { 0.0 }).collect();
            let m = 1usize << d;
            for i in 0..n {
                let mut rows = Array2::zeros((m, d));
                for (mask, mut row) in rows.outer_iter_mut().enumerate() {
                    for j in 0..d {
                        row[j] = if mask >> j & 1 == 1 { x[[i, j]] } else { background[j] };
                    }
                }
                let v = f(rows.view())?;
                for mask in 0..m {
                    let w = weights[(mask as u32).count_ones() as usize];
                    for j in 0..d {
                        if mask >> j & 1 == 0 {
                            let with = mask | 1 << j;
                            for k in 0..c {
                                out[[i, j, k]] += w * (v[[with, k]] - v[[mask, k]]);
                            }
                        }
                    }
                }
            }
        }
        ShapleyMode::Sampled { permutations } => {
            ensure!(permutations >= 1, Config, "sampled Shapley needs at least one permutation");
            let base = derive_seed(seed, "shapley");
            let mut perm: Vec<usize> = (0..d).collect();
            for i in 0..n {
                let mut rows = Array2::zeros((permutations * (d + 1), d));
                let mut orders = Vec::with_capacity(permutations);
                for p in 0..permutations {
                    perm.sort_unstable();
                    perm.shuffle(&mut substream(base, &format!("sample{i}"), p as u64));
                    let mut cur = background.to_owned();
                    rows.row_mut(p * (d + 1)).assign(&cur);
                    for (t, &j) in perm.iter().enumerate() {
                        cur[j] = x[[i, j]];
                        rows.row_mut(p * (d + 1) + t + 1).assign(&cur);
                    }
                    orders.push(perm.clone());
                }
                let v = f(rows.view())?;
                for (p, order) in orders.iter().enumerate() {
                    for (t, &j) in order.iter().enumerate() {
                        let (a, b) = (p * (d + 1) + t, p * (d + 1) + t + 1);
                        for k in 0..c {
                            out[[i, j, k]] += v[[b, k]] - v[[a, k]];
                        }
                    }
                }
            }
            out.mapv_inplace(|v| v / permutations as f64);
        }
    }
    Ok(out)
}

fn coalition_weight(size: usize, d: usize) -> f64 {
    // |S|! (d - |S| - 1)! / d!
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    fact(size) * fact(d - size - 1) / fact(d)
}

/// Largest |Σ_d φ_d − (f(x) − f(background))| over samples and outputs.
pub fn efficiency_residual<M>(f: &M, x: ArrayView2<f64>, background: ArrayView1<f64>, phi: &Array3<f64>) -> Result<f64>
where
    M: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    let fx = f(x)?;
    let fb = f(background.insert_axis(Axis(0)))?;
    let sums = phi.sum_axis(Axis(1));
    let mut worst: f64 = 0.0;
    for ((i, k), s) in sums.indexed_iter() {
        worst = worst.max((s - (fx[[i, k]] - fb[[0, k]])).abs());
    }
    Ok(worst)
}

/// Mean |SHAP| per class and dimension, with non-regularized dimensions
/// aggregated into "Others".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    pub class_names: Vec<String>,
    /// Regularized dimension names followed by "Others".
    pub columns: Vec<String>,
    pub regularized_dims: Vec<usize>,
    /// classes × columns.
    pub summary: Vec<Vec<f64>>,
    /// classes × all latent dimensions.
    pub per_dimension: Vec<Vec<f64>>,
    pub max_efficiency_residual: f64,
    pub mode: ShapleyMode,
}

impl ShapReport {
    /// Fraction of attribution mass on the regularized dimensions, per class.
    pub fn regularized_share(&self) -> Vec<f64> {
        let a = self.regularized_dims.len();
        self.summary
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row[..a].iter().sum::<f64>() / total
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Dimension with the largest mean |SHAP| for a class.
    pub fn top_dimension(&self, class: usize) -> usize {
        let row = &self.per_dimension[class];
        (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["class".to_string()];
        header.extend(self.columns.iter().cloned());
        let rows: Vec<Vec<String>> = self
            .class_names
            .iter()
            .zip(&self.summary)
            .map(|(name, row)| std::iter::once(name.clone()).chain(row.iter().map(|&v| fmt_f64(v))).collect())
            .collect();
        write_csv(path, &header, &rows)
    }

    /// Grouped bar chart: one group per class, one bar per column.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let (bar, gap, height) = (10u32, 12u32, 120u32);
        let cols = self.columns.len() as u32;
        let width = self.class_names.len() as u32 * (cols * bar + gap) + gap;
        let mut img = GrayImage::from_pixel(width.max(1), height, Luma([255]));
        let max = self.summary.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
        for (ci, row) in self.summary.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let h = if max > 0.0 { ((v / max) * (height - 2) as f64).round() as u32 } else { 0 };
                let x0 = gap + ci as u32 * (cols * bar + gap) + j as u32 * bar;
                let shade = (40 + (j as u32 * 160) / cols.max(1)) as u8;
                for x in x0..x0 + bar - 1 {
                    for y in height - h..height {
                        img.put_pixel(x, y, Luma([shade]));
                    }
                }
            }
        }
        img.save(path).map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))
    }
}

pub fn shap_summary<M>(
    f: &M,
    x: ArrayView2<f64>,
    background: ArrayView1<f64>,
    regularized_dims: &[usize],
    attribute_names: &[String],
    class_names: &[String],
    mode: ShapleyMode,
    seed: u64,
) -> Result<ShapReport>
where
    M: Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    let d = x.ncols();
    ensure!(
        regularized_dims.len() == attribute_names.len(),
        Contract,
        "{} regularized dims for {} attribute names",
        regularized_dims.len(),
        attribute_names.len()
    );
    ensure!(regularized_dims.iter().all(|&k| k < d), Contract, "regularized dimension out of range");
    ensure!(x.nrows() >= 1, Data, "no samples to explain");
    let phi = shapley_values(f, x, background, mode, seed)?;
    ensure!(
        phi.dim().2 == class_names.len(),
        Contract,
        "{} class names for {} outputs",
        class_names.len(),
        phi.dim().2
    );
    let residual = efficiency_residual(f, x, background, &phi)?;
    let mean_abs = phi.mapv(f64::abs).mean_axis(Axis(0)).expect("non-empty"); // D × C
    let per_dimension: Vec<Vec<f64>> = (0..class_names.len()).map(|c| mean_abs.column(c).to_vec()).collect();
    let summary = per_dimension
        .iter()
        .map(|row| {
            let mut out: Vec<f64> = regularized_dims.iter().map(|&k| row[k]).collect();
            out.push((0..d).filter(|k| !regularized_dims.contains(k)).map(|k| row[k]).sum());
            out
        })
        .collect();
    let mut columns = attribute_names.to_vec();
    columns.push("Others".into());
    Ok(ShapReport {
        class_names: class_names.to_vec(),
        columns,
        regularized_dims: regularized_dims.to_vec(),
        summary,
        per_dimension,
        max_efficiency_residual: residual,
        mode,
    })
}

/// Convenience wrapper turning a classifier into a Shapley value function.
pub fn value_fn(mlp: &Mlp) -> impl Fn(ArrayView2<f64>) -> Result<Array2<f64>> + '_ {
    move |x| mlp.predict(x)
}

/// Column means, used as the single Shapley background point.
pub fn mean_background(x: &Array2<f64>) -> Result<Array1<f64>> {
    x.mean_axis(Axis(0)).ok_or_else(|| Error::Data("empty background set".into()))
}
