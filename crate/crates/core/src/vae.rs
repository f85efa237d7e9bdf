//! Convolutional Gaussian VAE shared by every training method.
//!
//! Encoder: stride-2 convolutions (k=4, p=1) with leaky activations, then two
//! linear heads for the posterior mean and log-variance. Decoder: a linear
//! layer back to the last feature map, mirrored transposed convolutions and a
//! final sigmoid.

use ndarray::{Array2, Array4, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dataset_io::NamedTensor;
use crate::error::{ensure, Error, Result};
use crate::nn::{
    sigmoid, Activation, Conv2d, Conv2dTape, ConvGeometry, ConvTranspose2d, ConvTranspose2dTape, Grads,
    Linear, ParamStore, Real,
};
use crate::rng::substream;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

const GEOMETRY: ConvGeometry = ConvGeometry {
    kernel: 4,
    stride: 2,
    padding: 1,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// `regularized_dims[a]` is the latent index that carries attribute `a`.
    pub regularized_dims: Vec<usize>,
    /// Output channels of each encoder stage; the decoder mirrors them.
    pub channels: Vec<usize>,
    pub image_size: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 16,
            regularized_dims: vec![0, 1, 2],
            channels: vec![32, 64, 128, 256],
            image_size: 64,
            activation: Activation::LeakyRelu { slope: 0.2 },
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.latent_dim >= 1, Config, "latent_dim must be positive");
        ensure!(!self.channels.is_empty(), Config, "at least one conv stage is required");
        ensure!(self.channels.iter().all(|&c| c > 0), Config, "channel widths must be positive");
        let factor = 1usize << self.channels.len();
        ensure!(
            self.image_size >= factor && self.image_size % factor == 0,
            Config,
            "image_size {} must be a multiple of 2^{} = {factor}",
            self.image_size,
            self.channels.len()
        );
        ensure!(
            self.regularized_dims.len() <= self.latent_dim,
            Config,
            "{} regularized dims exceed latent_dim {}",
            self.regularized_dims.len(),
            self.latent_dim
        );
        for (i, &k) in self.regularized_dims.iter().enumerate() {
            ensure!(k < self.latent_dim, Config, "regularized dim {k} out of range");
            ensure!(
                !self.regularized_dims[..i].contains(&k),
                Config,
                "regularized dim {k} assigned twice"
            );
        }
        Ok(())
    }

    /// Spatial side of the last encoder feature map.
    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.channels.len()
    }

    pub fn flat_features(&self) -> usize {
        self.channels.last().copied().unwrap_or(0) * self.bottleneck_size().pow(2)
    }
}

/// Posterior parameters, plus a latent sample once one has been drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentStats<F> {
    pub mu: Array2<F>,
    pub logvar: Array2<F>,
    pub z: Option<Array2<F>>,
}

#[derive(Clone, Debug)]
pub struct EncoderTape<F> {
    conv_tapes: Vec<Conv2dTape<F>>,
    activations: Vec<Array4<F>>,
    flat: Array2<F>,
    logvar_raw: Array2<F>,
}

#[derive(Clone, Debug)]
pub struct DecoderTape<F> {
    z: Array2<F>,
    fc_out: Array2<F>,
    convt_tapes: Vec<ConvTranspose2dTape<F>>,
    activations: Vec<Array4<F>>,
    output: Array4<F>,
}

#[derive(Clone, Debug)]
pub struct Vae<F> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    enc_convs: Vec<Conv2d>,
    enc_mu: Linear,
    enc_logvar: Linear,
    dec_fc: Linear,
    dec_convs: Vec<ConvTranspose2d>,
}

pub const ENCODER_PREFIX: &str = "enc.";
pub const DECODER_PREFIX: &str = "dec.";

impl<F: Real> Vae<F> {
    /// Builds a freshly initialized model; initialization draws from the
    /// `model.init` substream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "model.init", 0);
        let mut params = ParamStore::new();
        let mut enc_convs = Vec::new();
        let mut in_ch = 1;
        for (i, &c) in config.channels.iter().enumerate() {
            enc_convs.push(Conv2d::register(&mut params, &format!("enc.stage{i}"), in_ch, c, GEOMETRY, &mut rng));
            in_ch = c;
        }
        let flat = config.flat_features();
        let d = config.latent_dim;
        let enc_mu = Linear::register(&mut params, "enc.mu", flat, d, &mut rng);
        let enc_logvar = Linear::register(&mut params, "enc.logvar", flat, d, &mut rng);
        let dec_fc = Linear::register(&mut params, "dec.fc", d, flat, &mut rng);
        let mut dec_convs = Vec::new();
        let stages = config.channels.len();
        for i in 0..stages {
            let cin = config.channels[stages - 1 - i];
            let cout = if i + 1 == stages { 1 } else { config.channels[stages - 2 - i] };
            dec_convs.push(ConvTranspose2d::register(
                &mut params,
                &format!("dec.stage{i}"),
                cin,
                cout,
                GEOMETRY,
                &mut rng,
            ));
        }
        Ok(Vae {
            config,
            params,
            enc_convs,
            enc_mu,
            enc_logvar,
            dec_fc,
            dec_convs,
        })
    }

    /// Rebuilds a model from stored parameters; every registry entry must be present.
    pub fn from_tensors(config: ModelConfig, tensors: &[NamedTensor]) -> Result<Self> {
        let mut model = Vae::new(config, 0)?;
        model.params.load_named_tensors(tensors)?;
        Ok(model)
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Sets both posterior heads to zero so that mu = logvar = 0 for any input.
    pub fn zero_encoder_heads(&mut self) {
        for id in [self.enc_mu.weight, self.enc_mu.bias, self.enc_logvar.weight, self.enc_logvar.bias] {
            self.params.get_mut(id).fill(F::zero());
        }
    }

    /// Whether any encoder parameter receives gradients in `grads`.
    pub fn encoder_trainable(&self, grads: &Grads<F>) -> bool {
        self.enc_convs.iter().any(|c| grads.is_active(c.weight) || grads.is_active(c.bias))
            || [self.enc_mu.weight, self.enc_mu.bias, self.enc_logvar.weight, self.enc_logvar.bias]
                .into_iter()
                .any(|id| grads.is_active(id))
    }

    fn check_images(&self, x: &Array4<F>) -> Result<()> {
        let s = self.config.image_size;
        ensure!(
            x.dim().1 == 1 && x.dim().2 == s && x.dim().3 == s,
            Contract,
            "expected images of shape N×1×{s}×{s}, got {:?}",
            x.dim()
        );
        Ok(())
    }

    pub fn encode_with_tape(&self, x: &Array4<F>) -> Result<(LatentStats<F>, EncoderTape<F>)> {
        self.check_images(x)?;
        let act = self.config.activation;
        let mut conv_tapes = Vec::with_capacity(self.enc_convs.len());
        let mut activations: Vec<Array4<F>> = Vec::with_capacity(self.enc_convs.len());
        for conv in &self.enc_convs {
            let input = activations.last().unwrap_or(x);
            let (mut h, tape) = conv.forward(&self.params, input);
            act.forward(&mut h);
            conv_tapes.push(tape);
            activations.push(h);
        }
        let last = activations.last().expect("at least one stage");
        let n = last.dim().0;
        let flat = last
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, self.config.flat_features()))
            .expect("flatten");
        let mu = self.enc_mu.forward(&self.params, &flat);
        let logvar_raw = self.enc_logvar.forward(&self.params, &flat);
        let (lo, hi) = (F::c(LOGVAR_MIN), F::c(LOGVAR_MAX));
        let logvar = logvar_raw.mapv(|v| v.max(lo).min(hi));
        let stats = LatentStats { mu, logvar, z: None };
        Ok((
            stats,
            EncoderTape {
                conv_tapes,
                activations,
                flat,
                logvar_raw,
            },
        ))
    }

    pub fn encode(&self, x: &Array4<F>) -> Result<LatentStats<F>> {
        self.encode_with_tape(x).map(|(s, _)| s)
    }

    /// Posterior means for a large batch, processed in chunks.
    pub fn encode_mean(&self, x: &Array4<F>, chunk: usize) -> Result<Array2<F>> {
        let n = x.dim().0;
        let mut out = Array2::zeros((n, self.latent_dim()));
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let part = x.slice(ndarray::s![start..end, .., .., ..]).to_owned();
            let stats = self.encode(&part)?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&stats.mu);
            start = end;
        }
        Ok(out)
    }

    /// Backpropagates posterior gradients; returns the gradient w.r.t. the input images.
    pub fn encoder_backward(
        &self,
        tape: &EncoderTape<F>,
        d_mu: &Array2<F>,
        d_logvar: &Array2<F>,
        grads: &mut Grads<F>,
    ) -> Array4<F> {
        let (lo, hi) = (F::c(LOGVAR_MIN), F::c(LOGVAR_MAX));
        let mut d_lv = d_logvar.clone();
        Zip::from(&mut d_lv).and(&tape.logvar_raw).for_each(|g, &raw| {
            if raw < lo || raw > hi {
                *g = F::zero();
            }
        });
        let mut d_flat = self.enc_mu.backward(&self.params, &tape.flat, d_mu, grads);
        d_flat += &self.enc_logvar.backward(&self.params, &tape.flat, &d_lv, grads);
        let last_dim = tape.activations.last().expect("stage").raw_dim();
        let mut d = d_flat.into_shape_with_order(last_dim).expect("unflatten");
        let act = self.config.activation;
        for (i, conv) in self.enc_convs.iter().enumerate().rev() {
            act.backward(&tape.activations[i], &mut d);
            d = conv.backward(&self.params, &tape.conv_tapes[i], &d, grads);
        }
        d
    }

    fn check_latents(&self, z: &Array2<F>) -> Result<()> {
        ensure!(
            z.ncols() == self.latent_dim(),
            Contract,
            "expected latents with {} columns, got {}",
            self.latent_dim(),
            z.ncols()
        );
        Ok(())
    }

    pub fn decode_with_tape(&self, z: &Array2<F>) -> Result<(Array4<F>, DecoderTape<F>)> {
        self.check_latents(z)?;
        let act = self.config.activation;
        let mut fc_out = self.dec_fc.forward(&self.params, z);
        act.forward(&mut fc_out);
        let n = z.nrows();
        let s = self.config.bottleneck_size();
        let c = *self.config.channels.last().expect("stage");
        let mut h = fc_out.clone().into_shape_with_order((n, c, s, s)).expect("unflatten");
        let mut convt_tapes = Vec::with_capacity(self.dec_convs.len());
        let mut activations = Vec::with_capacity(self.dec_convs.len());
        let stages = self.dec_convs.len();
        for (i, convt) in self.dec_convs.iter().enumerate() {
            let (mut out, tape) = convt.forward(&self.params, &h);
            if i + 1 < stages {
                act.forward(&mut out);
            } else {
                out.mapv_inplace(sigmoid);
            }
            convt_tapes.push(tape);
            activations.push(std::mem::replace(&mut h, out));
        }
        Ok((
            h.clone(),
            DecoderTape {
                z: z.clone(),
                fc_out,
                convt_tapes,
                activations,
                output: h,
            },
        ))
    }

    pub fn decode(&self, z: &Array2<F>) -> Result<Array4<F>> {
        self.decode_with_tape(z).map(|(x, _)| x)
    }

    /// Backpropagates an image gradient; returns the gradient w.r.t. the latents.
    pub fn decoder_backward(&self, tape: &DecoderTape<F>, d_out: &Array4<F>, grads: &mut Grads<F>) -> Array2<F> {
        let act = self.config.activation;
        let mut d = d_out.clone();
        Zip::from(&mut d)
            .and(&tape.output)
            .for_each(|g, &y| *g = *g * y * (F::one() - y));
        let stages = self.dec_convs.len();
        for i in (0..stages).rev() {
            if i + 1 < stages {
                // activations[i + 1] is the (activated) output of stage i
                act.backward(&tape.activations[i + 1], &mut d);
            }
            d = self.dec_convs[i].backward(&self.params, &tape.convt_tapes[i], &d, grads);
        }
        let n = tape.z.nrows();
        let mut d_fc = d.into_shape_with_order((n, self.config.flat_features())).expect("flatten");
        act.backward(&tape.fc_out, &mut d_fc);
        self.dec_fc.backward(&self.params, &tape.z, &d_fc, grads)
    }
}

/// `z = mu + exp(logvar / 2) ⊙ eps`.
pub fn reparameterize_with<F: Real>(mu: &Array2<F>, logvar: &Array2<F>, eps: &Array2<F>) -> Array2<F> {
    let half = F::c(0.5);
    let mut z = mu.clone();
    Zip::from(&mut z)
        .and(logvar)
        .and(eps)
        .for_each(|z, &lv, &e| *z = *z + (lv * half).exp() * e);
    z
}

pub fn standard_normal<F: Real, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<F> {
    Array2::from_shape_simple_fn((rows, cols), || F::c(rng.sample::<f64, _>(StandardNormal)))
}

/// Draws ε ~ N(0, I) and fills `stats.z`.
pub fn reparameterize<F: Real, R: Rng>(stats: &mut LatentStats<F>, rng: &mut R) -> Result<Array2<F>> {
    ensure!(
        stats.mu.iter().chain(stats.logvar.iter()).all(|v| v.is_finite()),
        Numerical,
        "non-finite posterior statistics"
    );
    let eps = standard_normal(stats.mu.nrows(), stats.mu.ncols(), rng);
    let z = reparameterize_with(&stats.mu, &stats.logvar, &eps);
    stats.z = Some(z.clone());
    Ok(z)
}

pub fn sample_prior<F: Real, R: Rng>(n: usize, latent_dim: usize, rng: &mut R) -> Result<Array2<F>> {
    if n == 0 {
        return Err(Error::Contract("prior sample count must be at least 1".into()));
    }
    Ok(standard_normal(n, latent_dim, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            latent_dim: 4,
            regularized_dims: vec![0, 1],
            channels: vec![2, 2],
            image_size: 8,
            activation: Activation::LeakyRelu { slope: 0.2 },
        }
    }

    #[test]
    fn config_validation() {
        ModelConfig::default().validate().unwrap();
        let bad = ModelConfig {
            regularized_dims: vec![0, 0],
            ..tiny()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            regularized_dims: vec![5],
            ..tiny()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            image_size: 10,
            ..tiny()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn parameter_names_are_stable() {
        let m = Vae::<f32>::new(tiny(), 0).unwrap();
        let names: Vec<_> = m.params.iter().map(|(_, p)| p.name.clone()).collect();
        assert_eq!(
            names,
            [
                "enc.stage0.weight",
                "enc.stage0.bias",
                "enc.stage1.weight",
                "enc.stage1.bias",
                "enc.mu.weight",
                "enc.mu.bias",
                "enc.logvar.weight",
                "enc.logvar.bias",
                "dec.fc.weight",
                "dec.fc.bias",
                "dec.stage0.weight",
                "dec.stage0.bias",
                "dec.stage1.weight",
                "dec.stage1.bias",
            ]
        );
        assert!(m.params.count("") <= 500);
    }

    #[test]
    fn zero_heads_give_prior_posterior() {
        let mut m = Vae::<f64>::new(tiny(), 3).unwrap();
        m.zero_encoder_heads();
        let x = Array4::from_shape_fn((3, 1, 8, 8), |(n, _, i, j)| ((n + i * j) % 7) as f64 / 7.0);
        let s = m.encode(&x).unwrap();
        assert_eq!(s.mu.dim(), (3, 4));
        assert_eq!(s.logvar.dim(), (3, 4));
        assert!(s.mu.iter().chain(s.logvar.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn identical_images_encode_identically() {
        let m = Vae::<f32>::new(tiny(), 3).unwrap();
        let x = Array4::from_shape_fn((2, 1, 8, 8), |(_, _, i, j)| (i + j) as f32 / 16.0);
        let s = m.encode(&x).unwrap();
        assert_eq!(s.mu.row(0), s.mu.row(1));
        assert!(m.encode(&Array4::zeros((1, 1, 4, 4))).is_err());
    }

    #[test]
    fn decoder_shapes_and_range() {
        let m = Vae::<f32>::new(ModelConfig::default(), 1).unwrap();
        let mut rng = substream(5, "test.decode", 0);
        let z = standard_normal::<f32, _>(5, 16, &mut rng);
        let x = m.decode(&z).unwrap();
        assert_eq!(x.dim(), (5, 1, 64, 64));
        assert!(x.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(x, m.decode(&z).unwrap());
        assert!(m.decode(&Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn reparameterization_contracts() {
        let mu = Array2::from_elem((2, 3), 0.7f64);
        let tiny_var = Array2::from_elem((2, 3), -50.0);
        let eps = Array2::from_elem((2, 3), 1.3);
        let z = reparameterize_with(&mu, &tiny_var, &eps);
        assert!(z.iter().all(|v| (v - 0.7).abs() < 1e-9));
        let z = reparameterize_with(&Array2::zeros((2, 3)), &Array2::zeros((2, 3)), &eps);
        assert_eq!(z, eps);
    }

    #[test]
    fn monte_carlo_moments() {
        let mut rng = substream(9, "test.mc", 0);
        let mut stats = LatentStats {
            mu: Array2::from_elem((100_000, 1), 1.0f64),
            logvar: Array2::zeros((100_000, 1)),
            z: None,
        };
        let z = reparameterize(&mut stats, &mut rng).unwrap();
        assert!((z.mean().unwrap() - 1.0).abs() < 0.01);

        let mut rng = substream(10, "test.mc", 0);
        let p = sample_prior::<f64, _>(100_000, 3, &mut rng).unwrap();
        let n = p.nrows() as f64;
        for a in 0..3 {
            for b in 0..3 {
                let cov = p.column(a).iter().zip(p.column(b)).map(|(x, y)| x * y).sum::<f64>() / n;
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((cov - target).abs() < 0.02, "cov[{a},{b}] = {cov}");
            }
        }
        let mut r1 = substream(1, "prior", 0);
        let mut r2 = substream(1, "prior", 0);
        assert_eq!(
            sample_prior::<f32, _>(1, 4, &mut r1).unwrap(),
            sample_prior::<f32, _>(1, 4, &mut r2).unwrap()
        );
        assert!(sample_prior::<f32, _>(0, 4, &mut r1).is_err());
    }
}
