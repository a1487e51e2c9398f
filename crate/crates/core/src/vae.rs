//! Sequence variational autoencoder trained on raw windows.
//!
//! The encoder is two stacked LSTM layers, self-attention over the top
//! layer's per-timestep outputs, and two dense heads producing a latent
//! mean and log-variance *per timestep* (a `window x latent_dim` code per
//! segment). The decoder mirrors the LSTM stack without attention and maps
//! each timestep back to one reconstructed sample.
//!
//! Training minimizes the negative evidence lower bound
//!
//! ```text
//! loss = 1/2 * sum_t (x_t - xhat_t)^2  +  beta * KL(q(z|x) || N(0, I))
//! KL   = -1/2 * sum_{t,h} (1 + logvar - mu^2 - exp(logvar))
//! ```
//!
//! averaged over the segments of a batch. The reconstruction term is a
//! unit-variance Gaussian likelihood with constants dropped; the KL term is
//! summed (not averaged) over timesteps and latent dimensions, which keeps
//! the meaning of `beta` independent of the window length. Both choices are
//! recorded in the model file.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Adam, Tape, Tensor, Var};
use crate::nn::{self, Activation, BoundDense, BoundLstm, DenseLayer, LstmLayer};
use crate::preprocess::{Segment, SegmentSet};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_KIND: &str = "sequence-vae";
const KL_REDUCTION: &str = "sum_over_timesteps_and_latents";

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("segment length {got} does not match model window {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite encoder activation")]
    NonFiniteActivation,
    #[error("empty training set")]
    EmptyDataset,
    #[error("non-finite loss value")]
    NonFiniteLoss,
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
}

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("model file kind `{found}` is not `{expected}`")]
    WrongKind { found: String, expected: String },
    #[error("parameter `{name}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter list mismatch: expected {expected} tensors, found {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("parameter `{found}` out of order (expected `{expected}`)")]
    ParamName { expected: String, found: String },
}

/// Training hyperparameters. The random-search harness samples these from
/// the documented ranges; `train_vae` itself accepts any values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub latent_dim: usize,
    pub beta: f64,
    pub n_epochs: usize,
    pub window_size: usize,
    pub bidirectional: bool,
    /// Self-attention in the encoder; disabled only by the ablation variant.
    #[serde(default = "default_attention")]
    pub attention: bool,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub seed: u64,
}

fn default_attention() -> bool {
    true
}

fn default_batch_size() -> usize {
    256
}

impl TrainConfig {
    pub fn new(
        lr: f64,
        latent_dim: usize,
        beta: f64,
        n_epochs: usize,
        window_size: usize,
        bidirectional: bool,
        seed: u64,
    ) -> Self {
        Self {
            lr,
            latent_dim,
            beta,
            n_epochs,
            window_size,
            bidirectional,
            attention: true,
            batch_size: default_batch_size(),
            seed,
        }
    }
}

/// Encoder/decoder parameter collections plus architecture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub window: usize,
    pub latent_dim: usize,
    pub beta: f64,
    pub bidirectional: bool,
    pub attention: bool,
    pub enc1: LstmLayer,
    pub enc2: LstmLayer,
    pub mu_head: DenseLayer,
    pub logvar_head: DenseLayer,
    pub dec1: LstmLayer,
    pub dec2: LstmLayer,
    pub out_head: DenseLayer,
}

impl VaeModel {
    pub fn new(
        window: usize,
        latent_dim: usize,
        beta: f64,
        bidirectional: bool,
        attention: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(beta > 0.0, "beta must be positive");
        assert!(latent_dim >= 1, "latent_dim must be at least 1");
        let h = latent_dim;
        let enc1 = LstmLayer::new(1, h, bidirectional, rng);
        let enc2 = LstmLayer::new(enc1.output_size(), h, bidirectional, rng);
        let mu_head = DenseLayer::new(enc2.output_size(), h, Activation::None, rng);
        let logvar_head = DenseLayer::new(enc2.output_size(), h, Activation::None, rng);
        let dec1 = LstmLayer::new(h, h, bidirectional, rng);
        let dec2 = LstmLayer::new(dec1.output_size(), h, bidirectional, rng);
        let out_head = DenseLayer::new(dec2.output_size(), 1, Activation::None, rng);
        Self {
            window,
            latent_dim,
            beta,
            bidirectional,
            attention,
            enc1,
            enc2,
            mu_head,
            logvar_head,
            dec1,
            dec2,
            out_head,
        }
    }

    pub fn from_config(cfg: &TrainConfig, rng: &mut impl Rng) -> Self {
        Self::new(
            cfg.window_size,
            cfg.latent_dim,
            cfg.beta,
            cfg.bidirectional,
            cfg.attention,
            rng,
        )
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.enc1.parameters();
        p.extend(self.enc2.parameters());
        p.extend(self.mu_head.parameters());
        p.extend(self.logvar_head.parameters());
        p.extend(self.dec1.parameters());
        p.extend(self.dec2.parameters());
        p.extend(self.out_head.parameters());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.enc1.parameters_mut();
        p.extend(self.enc2.parameters_mut());
        p.extend(self.mu_head.parameters_mut());
        p.extend(self.logvar_head.parameters_mut());
        p.extend(self.dec1.parameters_mut());
        p.extend(self.dec2.parameters_mut());
        p.extend(self.out_head.parameters_mut());
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, layer) in [
            ("encoder.lstm1", &self.enc1),
            ("encoder.lstm2", &self.enc2),
        ] {
            names.extend(lstm_param_names(prefix, layer));
        }
        names.extend(dense_param_names("encoder.mu"));
        names.extend(dense_param_names("encoder.logvar"));
        for (prefix, layer) in [
            ("decoder.lstm1", &self.dec1),
            ("decoder.lstm2", &self.dec2),
        ] {
            names.extend(lstm_param_names(prefix, layer));
        }
        names.extend(dense_param_names("decoder.out"));
        names
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundVae {
        BoundVae {
            window: self.window,
            latent_dim: self.latent_dim,
            beta: self.beta,
            attention: self.attention,
            enc1: self.enc1.bind(tape, trainable),
            enc2: self.enc2.bind(tape, trainable),
            mu_head: self.mu_head.bind(tape, trainable),
            logvar_head: self.logvar_head.bind(tape, trainable),
            dec1: self.dec1.bind(tape, trainable),
            dec2: self.dec2.bind(tape, trainable),
            out_head: self.out_head.bind(tape, trainable),
        }
    }

    /// Write the model as self-describing JSON with explicit shapes.
    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelFileError> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: MODEL_KIND.to_string(),
            window: self.window,
            latent_dim: self.latent_dim,
            beta: self.beta,
            bidirectional: self.bidirectional,
            attention: self.attention,
            kl_reduction: KL_REDUCTION.to_string(),
            params: self
                .param_names()
                .into_iter()
                .zip(self.parameters())
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Load and validate a model file; shapes are checked before use.
    pub fn load(path: &std::path::Path) -> Result<Self, ModelFileError> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelFileError::FormatVersion {
                found: file.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        if file.kind != MODEL_KIND {
            return Err(ModelFileError::WrongKind {
                found: file.kind,
                expected: MODEL_KIND.to_string(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = VaeModel::new(
            file.window,
            file.latent_dim,
            file.beta,
            file.bidirectional,
            file.attention,
            &mut rng,
        );
        let names = model.param_names();
        let mut targets = model.parameters_mut();
        if file.params.len() != targets.len() {
            return Err(ModelFileError::ParamCount {
                expected: targets.len(),
                found: file.params.len(),
            });
        }
        for ((stored, name), target) in file.params.into_iter().zip(names).zip(&mut targets) {
            if stored.name != name {
                return Err(ModelFileError::ParamName {
                    expected: name,
                    found: stored.name,
                });
            }
            if stored.shape != target.shape {
                return Err(ModelFileError::ShapeMismatch {
                    name: stored.name,
                    expected: target.shape.clone(),
                    found: stored.shape,
                });
            }
            target.data = stored.data;
        }
        Ok(model)
    }
}

fn lstm_param_names(prefix: &str, layer: &LstmLayer) -> Vec<String> {
    let mut names = vec![
        format!("{prefix}.fwd.wx"),
        format!("{prefix}.fwd.wh"),
        format!("{prefix}.fwd.b"),
    ];
    if layer.bidirectional() {
        names.extend([
            format!("{prefix}.bwd.wx"),
            format!("{prefix}.bwd.wh"),
            format!("{prefix}.bwd.b"),
        ]);
    }
    names
}

fn dense_param_names(prefix: &str) -> Vec<String> {
    vec![format!("{prefix}.weight"), format!("{prefix}.bias")]
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: String,
    window: usize,
    latent_dim: usize,
    beta: f64,
    bidirectional: bool,
    attention: bool,
    kl_reduction: String,
    params: Vec<NamedTensor>,
}

/// Tape-bound view of a [`VaeModel`].
pub struct BoundVae {
    pub window: usize,
    pub latent_dim: usize,
    pub beta: f64,
    pub attention: bool,
    pub enc1: BoundLstm,
    pub enc2: BoundLstm,
    pub mu_head: BoundDense,
    pub logvar_head: BoundDense,
    pub dec1: BoundLstm,
    pub dec2: BoundLstm,
    pub out_head: BoundDense,
}

impl BoundVae {
    pub fn param_vars(&self) -> Vec<Var> {
        let mut p = self.enc1.param_vars();
        p.extend(self.enc2.param_vars());
        p.extend(self.mu_head.param_vars());
        p.extend(self.logvar_head.param_vars());
        p.extend(self.dec1.param_vars());
        p.extend(self.dec2.param_vars());
        p.extend(self.out_head.param_vars());
        p
    }

    /// Encode a `(batch, window)` matrix of segments into per-timestep
    /// latent means and log-variances, each `(batch, window, latent_dim)`.
    pub fn encode(&self, tape: &Tape, batch: &Tensor) -> (Var, Var) {
        assert_eq!(batch.rank(), 2);
        assert_eq!(
            batch.shape[1], self.window,
            "segment length does not match model window"
        );
        let xs = nn::sequence_inputs(tape, batch);
        let h1 = self.enc1.forward(tape, &xs, None);
        let h2 = self.enc2.forward(tape, &h1, None);
        let hseq = nn::stack_timesteps(&h2);
        let ctx = if self.attention {
            nn::self_attention(&hseq)
        } else {
            hseq
        };
        (self.mu_head.forward(&ctx), self.logvar_head.forward(&ctx))
    }

    /// Decode a `(batch, window, latent_dim)` code into `(batch, window)`
    /// reconstructions.
    pub fn decode(&self, tape: &Tape, z: &Var) -> Var {
        let shape = z.shape();
        assert_eq!(shape.len(), 3);
        let (batch, window, h) = (shape[0], shape[1], shape[2]);
        let zs: Vec<Var> = (0..window)
            .map(|t| z.slice(1, t, 1).reshape(&[batch, h]))
            .collect();
        let d1 = self.dec1.forward(tape, &zs, None);
        let d2 = self.dec2.forward(tape, &d1, None);
        let stacked = nn::stack_timesteps(&d2);
        self.out_head.forward(&stacked).reshape(&[batch, window])
    }

    /// Build the batch loss with the given `(batch, window, latent_dim)`
    /// noise. Returns `(loss, kl, reconstruction)` nodes; `loss` is
    /// `(recon + beta * kl) / batch`.
    pub fn loss_with_noise(&self, tape: &Tape, batch: &Tensor, eps: &Tensor) -> (Var, Var, Var) {
        let batch_size = batch.shape[0];
        let (mu, logvar) = self.encode(tape, batch);
        let z = reparameterize_vars(tape, &mu, &logvar, eps);
        let xhat = self.decode(tape, &z);
        let x = tape.constant(batch.clone());
        let recon = xhat.sub(&x).square().sum().scale(0.5);
        let kl = logvar
            .add_scalar(1.0)
            .sub(&mu.square())
            .sub(&logvar.exp())
            .sum()
            .scale(-0.5);
        let loss = recon
            .add(&kl.scale(self.beta))
            .scale(1.0 / batch_size as f64);
        (loss, kl, recon)
    }
}

/// `z = mu + exp(logvar / 2) * eps` as graph nodes; the gradient flows to
/// `mu` and `logvar`, never to the noise.
pub fn reparameterize_vars(tape: &Tape, mu: &Var, logvar: &Var, eps: &Tensor) -> Var {
    assert_eq!(mu.shape(), eps.shape, "noise shape mismatch");
    let eps = tape.constant(eps.clone());
    mu.add(&logvar.scale(0.5).exp().mul(&eps))
}

/// Sample `z = mu + exp(logvar / 2) * eps` with standard normal noise from
/// the given generator.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, rng: &mut impl Rng) -> Tensor {
    assert_eq!(mu.shape, logvar.shape, "mu/logvar shape mismatch");
    let eps = Tensor::randn(&mu.shape, rng);
    let data = mu
        .data
        .iter()
        .zip(&logvar.data)
        .zip(&eps.data)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect();
    Tensor {
        shape: mu.shape.clone(),
        data,
    }
}

/// Deterministically encode one segment to `(window, latent_dim)` latent
/// mean and log-variance matrices.
pub fn encode(model: &VaeModel, segment: &Segment) -> Result<(Tensor, Tensor), VaeError> {
    let (mu, logvar) = encode_batch(model, &[&segment.values])?;
    let h = model.latent_dim;
    let w = model.window;
    Ok((
        Tensor::new(vec![w, h], mu.data),
        Tensor::new(vec![w, h], logvar.data),
    ))
}

/// Encode many equal-length segments at once; returns a pair of
/// `(batch, window, latent_dim)` tensors.
pub fn encode_batch(model: &VaeModel, rows: &[&[f64]]) -> Result<(Tensor, Tensor), VaeError> {
    if rows.is_empty() {
        return Err(VaeError::EmptyDataset);
    }
    for row in rows {
        if row.len() != model.window {
            return Err(VaeError::LengthMismatch {
                expected: model.window,
                got: row.len(),
            });
        }
    }
    let mut data = Vec::with_capacity(rows.len() * model.window);
    for row in rows {
        data.extend_from_slice(row);
    }
    let batch = Tensor::new(vec![rows.len(), model.window], data);
    let tape = Tape::new();
    let bound = model.bind(&tape, false);
    let (mu, logvar) = bound.encode(&tape, &batch);
    let (mu, logvar) = (mu.value(), logvar.value());
    if !mu.is_finite() || !logvar.is_finite() {
        return Err(VaeError::NonFiniteActivation);
    }
    Ok((mu, logvar))
}

/// Negative ELBO of one segment with noise drawn from `rng`.
pub fn elbo_loss(model: &VaeModel, x: &Segment, rng: &mut impl Rng) -> Result<f64, VaeError> {
    let eps = Tensor::randn(&[1, model.window, model.latent_dim], rng);
    elbo_loss_with_noise(model, x, &eps)
}

/// Negative ELBO of one segment with caller-supplied noise (frozen for
/// gradient checks and variance-free evaluation).
pub fn elbo_loss_with_noise(model: &VaeModel, x: &Segment, eps: &Tensor) -> Result<f64, VaeError> {
    if x.values.len() != model.window {
        return Err(VaeError::LengthMismatch {
            expected: model.window,
            got: x.values.len(),
        });
    }
    let batch = Tensor::new(vec![1, model.window], x.values.clone());
    let tape = Tape::new();
    let bound = model.bind(&tape, false);
    let (loss, _, _) = bound.loss_with_noise(&tape, &batch, eps);
    let value = loss.item();
    if !value.is_finite() {
        return Err(VaeError::NonFiniteLoss);
    }
    Ok(value)
}

/// Training artifacts: the final model plus the per-epoch mean loss trace
/// and the smallest batch KL seen (which must stay non-negative).
#[derive(Debug)]
pub struct TrainedVae {
    pub model: VaeModel,
    pub epoch_mean_loss: Vec<f64>,
    pub min_batch_kl: f64,
}

/// Train a VAE on a pool of equal-length segments with Adam over shuffled
/// mini-batches.
pub fn train_vae(segments: &SegmentSet, cfg: &TrainConfig) -> Result<TrainedVae, VaeError> {
    if segments.is_empty() {
        return Err(VaeError::EmptyDataset);
    }
    for seg in &segments.segments {
        if seg.values.len() != cfg.window_size {
            return Err(VaeError::LengthMismatch {
                expected: cfg.window_size,
                got: seg.values.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = VaeModel::from_config(cfg, &mut rng);
    let mut adam = Adam::new(cfg.lr);
    let mut indices: Vec<usize> = (0..segments.len()).collect();
    let mut epoch_mean_loss = Vec::with_capacity(cfg.n_epochs);
    let mut min_batch_kl = f64::INFINITY;

    for epoch in 0..cfg.n_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in indices.chunks(cfg.batch_size.max(1)) {
            let mut data = Vec::with_capacity(chunk.len() * cfg.window_size);
            for &i in chunk {
                data.extend_from_slice(&segments.segments[i].values);
            }
            let batch = Tensor::new(vec![chunk.len(), cfg.window_size], data);
            let eps = Tensor::randn(&[chunk.len(), cfg.window_size, cfg.latent_dim], &mut rng);

            let tape = Tape::new();
            let bound = model.bind(&tape, true);
            let param_vars = bound.param_vars();
            let (loss, kl, _) = bound.loss_with_noise(&tape, &batch, &eps);
            let loss_value = loss.item();
            if !loss_value.is_finite() {
                return Err(VaeError::DivergedLoss { epoch });
            }
            let kl_value = kl.item();
            assert!(
                kl_value >= -1e-9,
                "KL term must be non-negative, got {kl_value}"
            );
            min_batch_kl = min_batch_kl.min(kl_value);

            loss.backward().expect("loss is scalar");
            let grads: Vec<Option<Tensor>> = param_vars.iter().map(Var::grad).collect();
            adam.step(&mut model.parameters_mut(), &grads)
                .expect("all parameters receive gradients");

            epoch_loss += loss_value * chunk.len() as f64;
            seen += chunk.len();
        }
        epoch_mean_loss.push(epoch_loss / seen as f64);
    }

    Ok(TrainedVae {
        model,
        epoch_mean_loss,
        min_batch_kl,
    })
}
