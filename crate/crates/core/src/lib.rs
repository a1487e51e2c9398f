//! Unsupervised sample-level artifact detection for minute-resolution
//! physiological time series.
//!
//! The pipeline: recordings are standardized per channel (median/IQR),
//! gaps are filled by quadratic-spline interpolation, and overlapping
//! fixed-length windows are cut with unit step. A sequence variational
//! autoencoder with a KL weight is trained on the raw (artifact-containing)
//! windows; at inference every window is encoded to per-timestep latent
//! means and the overlapping embeddings for each sample are averaged into
//! one feature row per sample. An isolation forest fitted on the pooled
//! training rows then flags artifactual samples.
//!
//! Supervised and statistical baselines (an LSTM classifier with
//! self-attention, an ARIMA residual rule, an isolation forest on raw lag
//! vectors, and an attention-free autoencoder variant) plus a metrics and
//! random-search harness reproduce the comparative protocol on a synthetic
//! labeled corpus.

pub mod autodiff;
pub mod benchmarks;
pub mod eval;
pub mod iforest;
pub mod io;
pub mod latent;
pub mod nn;
pub mod plot;
pub mod preprocess;
pub mod recording;
pub mod synth;
pub mod tsne;
pub mod vae;

pub use recording::{Recording, StandardizedRecording};
