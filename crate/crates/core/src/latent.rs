//! Sliding-window encoding of a full recording with per-sample averaging of
//! the overlapping embeddings.
//!
//! Every window of a channel is encoded to per-timestep latent means; sample
//! `t` appears in up to `window` windows, each contributing the latent
//! vector at its position within that window. Averaging those contributions
//! yields one feature row per sample (the matrix fed to the detector).

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::recording::StandardizedRecording;
use crate::vae::{encode_batch, VaeError, VaeModel};

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("recording `{recording}` has no channel `{channel}`")]
    UnknownChannel { recording: String, channel: String },
    #[error("recording length {len} is shorter than window {window}")]
    RecordingTooShort { len: usize, window: usize },
    #[error(transparent)]
    Vae(#[from] VaeError),
}

/// Averaged per-sample embedding matrix for one recording channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    /// (len, latent_dim) matrix; row `t` is the mean of the embeddings of
    /// sample `t` across all windows containing it.
    pub values: Tensor,
    /// Number of windows that contributed to each row; between 1 and
    /// `window`.
    pub coverage: Vec<usize>,
    pub recording_id: String,
    pub channel: String,
}

impl LatentSequence {
    pub fn len(&self) -> usize {
        self.values.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.values.shape[1]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let h = self.latent_dim();
        &self.values.data[t * h..(t + 1) * h]
    }

    /// Write as CSV with `latent_dim` columns and `len` rows.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), std::io::Error> {
        let mut out = String::new();
        let h = self.latent_dim();
        let header: Vec<String> = (0..h).map(|j| format!("z{j}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for t in 0..self.len() {
            let row: Vec<String> = self.row(t).iter().map(f64::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

/// Closed-form number of length-`window` step-1 windows covering sample `t`
/// of a length-`len` sequence.
pub fn coverage_at(len: usize, window: usize, t: usize) -> usize {
    debug_assert!(window >= 1 && window <= len && t < len);
    let last_start = len - window;
    let first = t.saturating_sub(window - 1);
    let last = t.min(last_start);
    last - first + 1
}

/// Coverage counts for every sample position.
pub fn coverage(len: usize, window: usize) -> Vec<usize> {
    (0..len).map(|t| coverage_at(len, window, t)).collect()
}

/// Accumulates per-position vectors from overlapping windows and averages
/// them per sample. Shared by latent extraction and by the classifier's
/// probability stitching, so both use identical coverage arithmetic.
pub struct OverlapAccumulator {
    len: usize,
    window: usize,
    width: usize,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl OverlapAccumulator {
    pub fn new(len: usize, window: usize, width: usize) -> Self {
        assert!(window >= 1 && window <= len);
        Self {
            len,
            window,
            width,
            sums: vec![0.0; len * width],
            counts: vec![0; len],
        }
    }

    /// Add one window's `(window, width)` row-major values at `start`.
    pub fn add_window(&mut self, start: usize, rows: &[f64]) {
        assert_eq!(rows.len(), self.window * self.width, "window size mismatch");
        assert!(start + self.window <= self.len, "window out of range");
        for offset in 0..self.window {
            let t = start + offset;
            self.counts[t] += 1;
            let dst = &mut self.sums[t * self.width..(t + 1) * self.width];
            let src = &rows[offset * self.width..(offset + 1) * self.width];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    /// Divide sums by counts, returning the `(len, width)` means and the
    /// coverage array. Every position must have been covered at least once.
    pub fn finish(mut self) -> (Tensor, Vec<usize>) {
        for (t, &count) in self.counts.iter().enumerate() {
            assert!(count > 0, "sample {t} covered by no window");
            let row = &mut self.sums[t * self.width..(t + 1) * self.width];
            for v in row {
                *v /= count as f64;
            }
        }
        (
            Tensor::new(vec![self.len, self.width], self.sums),
            self.counts,
        )
    }
}

/// Windows are encoded in batches of this many segments.
const ENCODE_BATCH: usize = 256;

/// Encode every step-1 window of one channel and average the overlapping
/// per-timestep latent means into a per-sample embedding matrix.
///
/// The embedding of a sample is the posterior mean (no sampling), so
/// extraction is deterministic.
pub fn extract(
    model: &VaeModel,
    rec: &StandardizedRecording,
    channel: &str,
) -> Result<LatentSequence, LatentError> {
    let series = rec
        .channel(channel)
        .ok_or_else(|| LatentError::UnknownChannel {
            recording: rec.id().to_string(),
            channel: channel.to_string(),
        })?;
    extract_series(model, series, rec.id(), channel)
}

/// As [`extract`], on a bare series.
pub fn extract_series(
    model: &VaeModel,
    series: &[f64],
    recording_id: &str,
    channel: &str,
) -> Result<LatentSequence, LatentError> {
    let len = series.len();
    let window = model.window;
    if len < window {
        return Err(LatentError::RecordingTooShort { len, window });
    }
    debug_assert!(
        series.iter().all(|v| !v.is_nan()),
        "extract expects gap-filled input"
    );
    let h = model.latent_dim;
    let mut acc = OverlapAccumulator::new(len, window, h);
    let starts: Vec<usize> = (0..=len - window).collect();
    for chunk in starts.chunks(ENCODE_BATCH) {
        let rows: Vec<&[f64]> = chunk.iter().map(|&s| &series[s..s + window]).collect();
        let (mu, _) = encode_batch(model, &rows)?;
        let per_window = window * h;
        for (i, &start) in chunk.iter().enumerate() {
            acc.add_window(start, &mu.data[i * per_window..(i + 1) * per_window]);
        }
    }
    let (values, counts) = acc.finish();
    debug_assert_eq!(counts, coverage(len, window));
    Ok(LatentSequence {
        values,
        coverage: counts,
        recording_id: recording_id.to_string(),
        channel: channel.to_string(),
    })
}
