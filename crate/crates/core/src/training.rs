//! Stage 1 (representation learning) and stage 2 (latent classifier) training.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierConfig, Mlp};
use crate::data::Dataset;
use crate::dataset_io::{fmt_f64, save_checkpoint, write_csv, write_json, Checkpoint, Provenance};
use crate::error::{ensure, Error, Result};
use crate::nn::{Adam, AdamConfig, Grads, Real};
use crate::objectives::{
    kl_divergence, primary_loss, recon_loss, sivae_decoder_loss, LossBreakdown, LossNoise, ObjectiveConfig,
};
use crate::rng::substream;
use crate::vae::{ModelConfig, Vae, DECODER_PREFIX, ENCODER_PREFIX};

pub const REPRESENTATION_KIND: &str = "representation";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig,
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Record every n-th step in the log.
    pub log_every: usize,
    /// Write a checkpoint every n epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: ObjectiveConfig::default(),
            model: ModelConfig::default(),
            optimizer: AdamConfig::default(),
            batch_size: 32,
            epochs: 100,
            seed: 0,
            log_every: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.model.validate()?;
        self.optimizer.validate()?;
        ensure!(self.batch_size >= 2, Config, "batch_size must be at least 2, got {}", self.batch_size);
        ensure!(self.log_every >= 1, Config, "log_every must be at least 1");
        if self.objective.method.is_regularized() {
            ensure!(
                !self.model.regularized_dims.is_empty(),
                Config,
                "{} needs at least one regularized dimension",
                self.objective.method
            );
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    /// Encoder-side (or joint) loss.
    pub primary: LossBreakdown,
    /// Decoder loss of adversarial methods.
    pub decoder: Option<LossBreakdown>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-image squared error of `decode(mu)` on the validation split.
    pub val_recon: f64,
    pub val_kl: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        let header: Vec<String> = [
            "step",
            "epoch",
            "kind",
            "total",
            "recon",
            "kl_real",
            "elbo_real",
            "kl_fake",
            "elbo_fake",
            "exp_term",
            "attr_reg",
            "decoder_total",
        ]
        .map(String::from)
        .to_vec();
        let rows: Vec<Vec<String>> = self
            .steps
            .iter()
            .map(|r| {
                let b = &r.primary;
                let kind = serde_json::to_value(b.kind)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default();
                vec![
                    r.step.to_string(),
                    r.epoch.to_string(),
                    kind,
                    fmt_f64(b.total),
                    fmt_f64(b.recon),
                    fmt_f64(b.kl_real),
                    fmt_f64(b.elbo_real),
                    fmt_f64(b.kl_fake),
                    fmt_f64(b.elbo_fake),
                    fmt_f64(b.exp_term),
                    fmt_f64(b.attr_reg),
                    r.decoder.as_ref().map(|d| fmt_f64(d.total)).unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(&dir.join("train_log.csv"), &header, &rows)?;
        let header = ["epoch", "val_recon", "val_kl"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = self
            .epochs
            .iter()
            .map(|e| vec![e.epoch.to_string(), fmt_f64(e.val_recon), fmt_f64(e.val_kl)])
            .collect();
        write_csv(&dir.join("val_log.csv"), &header, &rows)
    }
}

/// Splits a shuffled index list into batches; a trailing batch of one sample
/// is merged into its predecessor since the pairwise loss needs two.
pub fn batch_plan(rows: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = rows.to_vec();
    order.shuffle(&mut substream(seed, "batches", epoch as u64));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Joint,
    Encoder,
    Decoder,
}

/// Stage-1 trainer state; everything needed to continue a run.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Vae<f32>,
    pub optimizer: Adam<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps (one step = one encoder and one decoder update for
    /// adversarial methods).
    pub step: u64,
    attributes: Option<Array2<f32>>,
    train_rows: Vec<usize>,
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        let model = Vae::new(config.model.clone(), config.seed)?;
        let optimizer = Adam::new(config.optimizer, &model.params);
        Self::assemble(config, dataset, model, optimizer, 0, 0)
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, dataset: &Dataset) -> Result<Self> {
        ensure!(
            ckpt.kind == REPRESENTATION_KIND,
            Compatibility,
            "expected a {REPRESENTATION_KIND} checkpoint, found `{}`",
            ckpt.kind
        );
        let config: TrainConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Compatibility(format!("checkpoint config: {e}")))?;
        config.validate()?;
        let model = Vae::from_tensors(config.model.clone(), &ckpt.parameters)?;
        let state = ckpt
            .training_state
            .as_ref()
            .ok_or_else(|| Error::Compatibility("checkpoint carries no optimizer state".into()))?;
        let optimizer = Adam::restore(config.optimizer, &model.params, state)?;
        let epoch = ckpt.provenance.epoch;
        let mut t = Self::assemble(config, dataset, model, optimizer, epoch, 0)?;
        t.step = (0..epoch).map(|e| t.batches(e).len() as u64).sum();
        Ok(t)
    }

    fn assemble(
        config: TrainConfig,
        dataset: &Dataset,
        model: Vae<f32>,
        optimizer: Adam<f32>,
        epoch: usize,
        step: u64,
    ) -> Result<Self> {
        let train_rows = dataset.split.train.clone();
        ensure!(train_rows.len() >= 2, Data, "training split needs at least 2 samples");
        let size = dataset.image_size().ok_or_else(|| Error::Data("dataset is empty".into()))?;
        ensure!(
            size == (config.model.image_size, config.model.image_size),
            Config,
            "model expects {0}×{0} images, dataset has {1:?}",
            config.model.image_size,
            size
        );
        let attributes = if config.objective.method.is_regularized() {
            let table = dataset.attributes();
            ensure!(
                table.n_attributes() == config.model.regularized_dims.len(),
                Config,
                "{} attributes but {} regularized dimensions",
                table.n_attributes(),
                config.model.regularized_dims.len()
            );
            let std = table.moments(&train_rows);
            Some(std.apply(&table.values).mapv(|v| v as f32))
        } else {
            None
        };
        Ok(Trainer {
            config,
            model,
            optimizer,
            epoch,
            step,
            attributes,
            train_rows,
        })
    }

    pub fn batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        batch_plan(&self.train_rows, self.config.batch_size, self.config.seed, epoch)
    }

    /// One optimizer step on the given rows. Adversarial methods update the
    /// encoder first (decoder frozen), then the decoder (encoder frozen).
    pub fn train_step(&mut self, dataset: &Dataset, rows: &[usize]) -> Result<StepRecord> {
        let x = dataset.images(rows)?;
        let attrs = self.attributes.as_ref().map(|a| a.select(Axis(0), rows));
        let d = self.model.latent_dim();
        let mut rng = substream(self.config.seed, "noise", self.step);
        let noise = LossNoise::<f32>::draw(rows.len(), d, &mut rng);
        let (primary, decoder) = if self.config.objective.method.is_introspective() {
            let enc = self.update(Phase::Encoder, &x, attrs.as_ref(), &noise)?;
            let noise = LossNoise::<f32>::draw(rows.len(), d, &mut rng);
            let dec = self.update(Phase::Decoder, &x, None, &noise)?;
            (enc, Some(dec))
        } else {
            (self.update(Phase::Joint, &x, attrs.as_ref(), &noise)?, None)
        };
        let record = StepRecord {
            step: self.step,
            epoch: self.epoch,
            primary,
            decoder,
        };
        self.step += 1;
        Ok(record)
    }

    /// A single parameter update. Only the parameters owned by `phase`
    /// receive gradients; the rest stay bit-identical.
    pub fn update(
        &mut self,
        phase: Phase,
        x: &Array4<f32>,
        attrs: Option<&Array2<f32>>,
        noise: &LossNoise<f32>,
    ) -> Result<LossBreakdown> {
        let cfg = &self.config.objective;
        let mut grads = match phase {
            Phase::Joint => Grads::all(&self.model.params),
            Phase::Encoder => Grads::new(&self.model.params, |n| n.starts_with(ENCODER_PREFIX)),
            Phase::Decoder => Grads::new(&self.model.params, |n| n.starts_with(DECODER_PREFIX)),
        };
        let result = match phase {
            Phase::Decoder => sivae_decoder_loss(&self.model, x, noise, cfg, Some(&mut grads)),
            _ => primary_loss(&self.model, x, attrs.map(|a| a.view()), noise, cfg, Some(&mut grads)),
        };
        let breakdown = result.map_err(|e| self.abort(phase, e))?;
        if !grads.is_finite() {
            return Err(self.abort(phase, Error::Numerical("non-finite gradient".into())));
        }
        self.optimizer.step(&mut self.model.params, &grads);
        Ok(breakdown)
    }

    fn abort(&self, phase: Phase, e: Error) -> Error {
        match e {
            Error::Numerical(msg) => Error::Numerical(format!("step {} ({phase:?} update): {msg}", self.step)),
            other => other,
        }
    }

    /// Parameter norms, for diagnostics.
    pub fn snapshot(&self, message: &str) -> serde_json::Value {
        serde_json::json!({
            "step": self.step,
            "epoch": self.epoch,
            "message": message,
            "parameter_norms": self.model.params.norms(),
        })
    }

    pub fn run_epoch(&mut self, dataset: &Dataset, log: &mut TrainLog) -> Result<()> {
        for rows in self.batches(self.epoch) {
            let record = self.train_step(dataset, &rows)?;
            if record.step % self.config.log_every as u64 == 0 {
                log.steps.push(record);
            }
        }
        self.epoch += 1;
        if !dataset.split.val.is_empty() {
            log.epochs.push(self.validate(dataset)?);
        }
        Ok(())
    }

    fn validate(&self, dataset: &Dataset) -> Result<EpochRecord> {
        let (recon, kl) = posterior_recon(&self.model, dataset, &dataset.split.val)?;
        Ok(EpochRecord {
            epoch: self.epoch,
            val_recon: recon,
            val_kl: kl,
        })
    }

    pub fn checkpoint(&self, wall_time_secs: f64) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: REPRESENTATION_KIND.into(),
            config: serde_json::to_value(&self.config)?,
            parameters: self.model.params.to_named_tensors(),
            training_state: Some(self.optimizer.state(&self.model.params)),
            provenance: Provenance {
                seed: self.config.seed,
                epoch: self.epoch,
                wall_time_secs,
            },
        })
    }
}

/// Mean reconstruction error of `decode(mu)` and mean KL over the given rows.
pub fn posterior_recon<F: Real>(model: &Vae<F>, dataset: &Dataset, rows: &[usize]) -> Result<(f64, f64)> {
    let mut recon = 0.0;
    let mut kl = 0.0;
    for chunk in rows.chunks(128) {
        let x = dataset.images(chunk)?.mapv(F::of_f32);
        let stats = model.encode(&x)?;
        let x_hat = model.decode(&stats.mu)?;
        recon += recon_loss(&x, &x_hat)?.iter().map(|v| v.f64()).sum::<f64>();
        kl += kl_divergence(&stats.mu, &stats.logvar)?.iter().map(|v| v.f64()).sum::<f64>();
    }
    let n = rows.len().max(1) as f64;
    Ok((recon / n, kl / n))
}

pub struct RepresentationRun {
    pub checkpoint: Checkpoint,
    pub model: Vae<f32>,
    pub log: TrainLog,
}

/// Runs stage 1 to completion. With an output directory, writes
/// `train_log.csv`, `val_log.csv`, scheduled checkpoints under
/// `ckpt/epoch_<N>/`, the final one under `ckpt/final/`, and on a numerical
/// abort a `diagnostics.json` snapshot.
pub fn train_representation(cfg: &TrainConfig, dataset: &Dataset, out_dir: Option<&Path>) -> Result<RepresentationRun> {
    let mut trainer = Trainer::new(cfg.clone(), dataset)?;
    continue_training(&mut trainer, dataset, out_dir)
}

pub fn continue_training(trainer: &mut Trainer, dataset: &Dataset, out_dir: Option<&Path>) -> Result<RepresentationRun> {
    let start = Instant::now();
    let mut log = TrainLog::default();
    while trainer.epoch < trainer.config.epochs {
        if let Err(e) = trainer.run_epoch(dataset, &mut log) {
            if let (Error::Numerical(msg), Some(dir)) = (&e, out_dir) {
                let path = dir.join("diagnostics.json");
                write_json(&path, &trainer.snapshot(msg))?;
                log.write_csv(dir)?;
                return Err(Error::Numerical(format!("{msg}; diagnostics written to {}", path.display())));
            }
            return Err(e);
        }
        log::info!("epoch {} done", trainer.epoch);
        let every = trainer.config.checkpoint_every;
        if let Some(dir) = out_dir {
            if every > 0 && trainer.epoch % every == 0 {
                let path = checkpoint_dir(dir, Some(trainer.epoch));
                save_checkpoint(&trainer.checkpoint(start.elapsed().as_secs_f64())?, &path)?;
            }
        }
    }
    let checkpoint = trainer.checkpoint(start.elapsed().as_secs_f64())?;
    if let Some(dir) = out_dir {
        save_checkpoint(&checkpoint, &checkpoint_dir(dir, None))?;
        log.write_csv(dir)?;
    }
    Ok(RepresentationRun {
        checkpoint,
        model: trainer.model.clone(),
        log,
    })
}

pub fn checkpoint_dir(out: &Path, epoch: Option<usize>) -> PathBuf {
    match epoch {
        Some(e) => out.join("ckpt").join(format!("epoch_{e}")),
        None => out.join("ckpt").join("final"),
    }
}

/// Rebuilds a model from a representation checkpoint.
pub fn load_representation(ckpt: &Checkpoint) -> Result<(TrainConfig, Vae<f32>)> {
    ensure!(
        ckpt.kind == REPRESENTATION_KIND,
        Compatibility,
        "expected a {REPRESENTATION_KIND} checkpoint, found `{}`",
        ckpt.kind
    );
    let config: TrainConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Error::Compatibility(format!("checkpoint config: {e}")))?;
    let model = Vae::from_tensors(config.model.clone(), &ckpt.parameters)?;
    Ok((config, model))
}

/// Posterior means for the given rows.
pub fn latent_means(model: &Vae<f32>, dataset: &Dataset, rows: &[usize]) -> Result<Array2<f64>> {
    let x = dataset.images(rows)?;
    Ok(model.encode_mean(&x, 256)?.mapv(f64::from))
}

pub struct ClassifierRun {
    pub classifier: Mlp,
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub val_accuracy: Vec<f64>,
}

/// Stage 2: trains the MLP on the frozen encoder's posterior means, fed
/// as-is (the prior already fixes their scale). The encoder is verified to
/// be unchanged afterwards.
pub fn train_classifier(
    encoder: &Vae<f32>,
    dataset: &Dataset,
    labels: &[usize],
    cfg: &ClassifierConfig,
) -> Result<ClassifierRun> {
    ensure!(labels.len() == dataset.len(), Data, "{} labels for {} samples", labels.len(), dataset.len());
    let before = encoder.params.fingerprint(ENCODER_PREFIX);
    let split = &dataset.split;
    let z_train = latent_means(encoder, dataset, &split.train)?;
    let z_val = latent_means(encoder, dataset, &split.val)?;
    let pick = |rows: &[usize]| rows.iter().map(|&r| labels[r]).collect::<Vec<_>>();
    let run = crate::classifier::fit(&z_train, &pick(&split.train), &z_val, &pick(&split.val), cfg, false)?;
    let after = encoder.params.fingerprint(ENCODER_PREFIX);
    ensure!(before == after, Contract, "encoder parameters changed during classifier training");
    let checkpoint = run.classifier.checkpoint(cfg, Some(&before))?;
    Ok(ClassifierRun {
        classifier: run.classifier,
        checkpoint,
        best_epoch: run.best_epoch,
        val_accuracy: run.val_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::Method;
    use crate::phantom::{generate_phantom, PhantomSpec};

    fn tiny_dataset(n: usize, seed: u64) -> Dataset {
        let spec = PhantomSpec {
            image_size: 16,
            lv_radius_range: [2.0, 3.5],
            myo_thickness_range: [1.0, 2.0],
            rv_scale_range: [0.6, 1.0],
            center_jitter: 1.0,
            seed,
            ..PhantomSpec::default()
        };
        Dataset::from_phantoms(generate_phantom(&spec, n).unwrap(), [0.7, 0.15, 0.15], seed).unwrap()
    }

    fn tiny_config(method: Method) -> TrainConfig {
        TrainConfig {
            objective: ObjectiveConfig::for_method(method),
            model: ModelConfig {
                latent_dim: 4,
                regularized_dims: vec![0, 1, 2],
                channels: vec![4, 8],
                image_size: 16,
                ..ModelConfig::default()
            },
            batch_size: 8,
            epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batch_plan_covers_rows_and_avoids_singletons() {
        let rows: Vec<usize> = (0..17).collect();
        let plan = batch_plan(&rows, 8, 3, 0);
        assert_eq!(plan.len(), 2);
        assert!(plan.iter().all(|b| b.len() >= 2));
        let mut all: Vec<usize> = plan.concat();
        all.sort_unstable();
        assert_eq!(all, rows);
        assert_eq!(plan, batch_plan(&rows, 8, 3, 0));
        assert_ne!(plan, batch_plan(&rows, 8, 3, 1));
    }

    #[test]
    fn log_has_one_row_per_step_and_epoch() {
        let ds = tiny_dataset(40, 1);
        let cfg = tiny_config(Method::Sivae);
        let run = train_representation(&cfg, &ds, None).unwrap();
        let per_epoch = ds.split.train.len().div_ceil(cfg.batch_size);
        assert_eq!(run.log.steps.len(), per_epoch * cfg.epochs);
        assert_eq!(run.log.epochs.len(), cfg.epochs);
        assert!(run.log.steps.iter().all(|s| s.decoder.is_some()));
    }

    #[test]
    fn encoder_and_decoder_updates_are_isolated() {
        let ds = tiny_dataset(24, 2);
        for method in [Method::Sivae, Method::ArSivae] {
            let mut t = Trainer::new(tiny_config(method), &ds).unwrap();
            let rows = &t.batches(0)[0];
            let x = ds.images(rows).unwrap();
            let attrs = t.attributes.as_ref().map(|a| a.select(Axis(0), rows));
            let mut rng = substream(0, "test", 0);
            let noise = LossNoise::<f32>::draw(rows.len(), 4, &mut rng);

            let (enc0, dec0) = (t.model.params.fingerprint(ENCODER_PREFIX), t.model.params.fingerprint(DECODER_PREFIX));
            t.update(Phase::Encoder, &x, attrs.as_ref(), &noise).unwrap();
            let (enc1, dec1) = (t.model.params.fingerprint(ENCODER_PREFIX), t.model.params.fingerprint(DECODER_PREFIX));
            assert_ne!(enc0, enc1);
            assert_eq!(dec0, dec1, "{method}: decoder moved during the encoder update");

            t.update(Phase::Decoder, &x, None, &noise).unwrap();
            let (enc2, dec2) = (t.model.params.fingerprint(ENCODER_PREFIX), t.model.params.fingerprint(DECODER_PREFIX));
            assert_eq!(enc1, enc2, "{method}: encoder moved during the decoder update");
            assert_ne!(dec1, dec2);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_dataset(24, 3);
        let cfg = tiny_config(Method::ArSivae);
        let a = train_representation(&cfg, &ds, None).unwrap();
        let b = train_representation(&cfg, &ds, None).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.params.fingerprint(""), b.model.params.fingerprint(""));
    }

    #[test]
    fn resume_reproduces_the_next_step() {
        let ds = tiny_dataset(24, 4);
        let mut cfg = tiny_config(Method::ArSivae);
        cfg.epochs = 1;
        let first = train_representation(&cfg, &ds, None).unwrap();

        cfg.epochs = 2;
        let mut straight = Trainer::new(cfg.clone(), &ds).unwrap();
        let mut log = TrainLog::default();
        straight.run_epoch(&ds, &mut log).unwrap();
        let rows = straight.batches(1)[0].clone();
        let expected = straight.train_step(&ds, &rows).unwrap();

        let mut ckpt = first.checkpoint;
        ckpt.config = serde_json::to_value(&cfg).unwrap();
        let mut resumed = Trainer::resume(&ckpt, &ds).unwrap();
        assert_eq!(resumed.step, straight.step - 1);
        let got = resumed.train_step(&ds, &rows).unwrap();
        assert_eq!(got, expected);
        assert_eq!(resumed.model.params.fingerprint(""), straight.model.params.fingerprint(""));
    }

    #[test]
    fn overfits_a_small_set() {
        let ds = tiny_dataset(20, 5);
        let mut cfg = tiny_config(Method::BetaVae);
        cfg.objective.beta_kl = 0.01;
        cfg.optimizer.learning_rate = 2e-3;
        cfg.epochs = 150;
        let rows = ds.split.train.clone();
        let init = Vae::<f32>::new(cfg.model.clone(), cfg.seed).unwrap();
        let (before, _) = posterior_recon(&init, &ds, &rows).unwrap();
        let run = train_representation(&cfg, &ds, None).unwrap();
        let (after, _) = posterior_recon(&run.model, &ds, &rows).unwrap();
        assert!(after < 0.1 * before, "recon {before} -> {after}");
    }

    #[test]
    fn writes_scheduled_checkpoints_and_logs() {
        let ds = tiny_dataset(24, 6);
        let mut cfg = tiny_config(Method::AttriVae);
        cfg.checkpoint_every = 1;
        let dir = tempfile::tempdir().unwrap();
        train_representation(&cfg, &ds, Some(dir.path())).unwrap();
        for sub in ["ckpt/epoch_1", "ckpt/epoch_2", "ckpt/final"] {
            assert!(dir.path().join(sub).is_dir(), "{sub} missing");
        }
        assert!(dir.path().join("train_log.csv").is_file());
        assert!(dir.path().join("val_log.csv").is_file());
        let ckpt = crate::dataset_io::load_checkpoint(&dir.path().join("ckpt/final")).unwrap();
        let (loaded_cfg, _) = load_representation(&ckpt).unwrap();
        assert_eq!(loaded_cfg, cfg);
    }

    #[test]
    fn classifier_leaves_encoder_untouched() {
        let ds = tiny_dataset(60, 7);
        let run = train_representation(&tiny_config(Method::BetaVae), &ds, None).unwrap();
        let labels = ds.task_labels(2).unwrap();
        let cfg = ClassifierConfig {
            hidden: vec![8],
            task: crate::classifier::Task::Binary,
            epochs: 5,
            ..ClassifierConfig::default()
        };
        let before = run.model.params.fingerprint(ENCODER_PREFIX);
        let clf = train_classifier(&run.model, &ds, &labels, &cfg).unwrap();
        assert_eq!(before, run.model.params.fingerprint(ENCODER_PREFIX));
        assert_eq!(clf.val_accuracy.len(), cfg.epochs);
    }
}
