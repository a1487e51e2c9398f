//! Preprocessing: per-channel standardization, gap filling, windowing, and
//! downsampling.
//!
//! Standardization is per recording and per channel: `x' = (x - median) / IQR`
//! with quantiles taken over that channel's own non-missing samples, so the
//! dynamics of each recording are preserved. Interior gaps are filled with a
//! quadratic interpolating spline through the non-missing samples;
//! leading/trailing gaps take the nearest known value, since the spline is
//! undefined outside its knots.

use indexmap::IndexMap;
use thiserror::Error;

use crate::recording::{ChannelScale, Recording, StandardizedRecording};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("channel `{channel}` is constant (IQR = 0), cannot standardize")]
    ZeroIqr { channel: String },
    #[error("channel `{channel}` has {got} non-missing samples, need at least {need}")]
    TooFewSamples {
        channel: String,
        got: usize,
        need: usize,
    },
    #[error("window length {window} exceeds recording length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("window length must be at least 2, got {0}")]
    WindowTooShort(usize),
    #[error("step must be nonzero")]
    ZeroStep,
    #[error("empty input")]
    EmptyInput,
    #[error("sample rate {rate_hz} Hz yields less than one sample per minute")]
    RateTooLow { rate_hz: f64 },
}

/// Linear-interpolation quantile between closest ranks (the "type 7"
/// convention used by mainstream numerical stacks).
///
/// `values` need not be sorted; `p` must lie in `[0, 1]`.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "p out of range: {p}");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Standardize every channel of a recording by its own median and IQR.
///
/// Missing samples stay missing; the scaling record is stored so that the
/// transform can be inverted. Requires at least four non-missing samples per
/// channel and a nonzero IQR.
pub fn standardize(rec: &Recording) -> Result<StandardizedRecording, PreprocessError> {
    let mut channels = IndexMap::with_capacity(rec.channels.len());
    let mut scale = IndexMap::with_capacity(rec.channels.len());
    for (name, values) in &rec.channels {
        let known: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
        if known.len() < 4 {
            return Err(PreprocessError::TooFewSamples {
                channel: name.clone(),
                got: known.len(),
                need: 4,
            });
        }
        let median = quantile(&known, 0.5);
        let iqr = quantile(&known, 0.75) - quantile(&known, 0.25);
        if iqr == 0.0 {
            return Err(PreprocessError::ZeroIqr {
                channel: name.clone(),
            });
        }
        let scaled = values
            .iter()
            .map(|v| if v.is_nan() { *v } else { (v - median) / iqr })
            .collect();
        channels.insert(name.clone(), scaled);
        scale.insert(name.clone(), ChannelScale { median, iqr });
    }
    let recording = Recording {
        id: rec.id.clone(),
        channels,
        labels: rec.labels.clone(),
        start_time: rec.start_time.clone(),
    };
    Ok(StandardizedRecording { recording, scale })
}

/// Fill missing samples in every channel.
///
/// Interior gaps are interpolated with a quadratic spline through the known
/// samples (exact on globally quadratic signals); samples before the first
/// or after the last known value take the nearest known value. Idempotent:
/// non-missing samples are never modified.
pub fn fill_gaps(rec: &StandardizedRecording) -> Result<StandardizedRecording, PreprocessError> {
    let mut channels = IndexMap::with_capacity(rec.recording.channels.len());
    for (name, values) in &rec.recording.channels {
        channels.insert(name.clone(), fill_channel(name, values)?);
    }
    let recording = Recording {
        id: rec.recording.id.clone(),
        channels,
        labels: rec.recording.labels.clone(),
        start_time: rec.recording.start_time.clone(),
    };
    Ok(StandardizedRecording {
        recording,
        scale: rec.scale.clone(),
    })
}

fn fill_channel(name: &str, values: &[f64]) -> Result<Vec<f64>, PreprocessError> {
    let knots: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .map(|(i, v)| (i, *v))
        .collect();
    if knots.len() < 3 {
        return Err(PreprocessError::TooFewSamples {
            channel: name.to_string(),
            got: knots.len(),
            need: 3,
        });
    }
    if knots.len() == values.len() {
        return Ok(values.to_vec());
    }

    let spline = QuadraticSpline::fit(&knots);
    let first = knots[0];
    let last = knots[knots.len() - 1];
    let filled = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if !v.is_nan() {
                *v
            } else if i < first.0 {
                first.1
            } else if i > last.0 {
                last.1
            } else {
                spline.eval(i as f64)
            }
        })
        .collect();
    Ok(filled)
}

/// Piecewise-quadratic C¹ interpolating spline.
///
/// On each interval the piece matches both endpoint values and the incoming
/// slope; slopes propagate by `s[i+1] = 2*(y[i+1]-y[i])/h - s[i]`. The
/// initial slope is taken from the parabola through the first three knots,
/// which makes the spline reproduce any global quadratic exactly.
struct QuadraticSpline {
    /// Knot positions, values, and incoming slopes.
    t: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
}

impl QuadraticSpline {
    fn fit(knots: &[(usize, f64)]) -> Self {
        let t: Vec<f64> = knots.iter().map(|(i, _)| *i as f64).collect();
        let y: Vec<f64> = knots.iter().map(|(_, v)| *v).collect();
        let s0 = parabola_slope(t[0], (t[0], y[0]), (t[1], y[1]), (t[2], y[2]));
        let mut s = Vec::with_capacity(t.len());
        s.push(s0);
        for i in 0..t.len() - 1 {
            let h = t[i + 1] - t[i];
            s.push(2.0 * (y[i + 1] - y[i]) / h - s[i]);
        }
        Self { t, y, s }
    }

    fn eval(&self, x: f64) -> f64 {
        // x is strictly inside [t[0], t[last]] when called from fill_channel
        let idx = match self.t.binary_search_by(|t| t.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.y[i],
            Err(i) => i - 1,
        };
        let h = self.t[idx + 1] - self.t[idx];
        let tau = x - self.t[idx];
        let a = (self.y[idx + 1] - self.y[idx] - self.s[idx] * h) / (h * h);
        self.y[idx] + self.s[idx] * tau + a * tau * tau
    }
}

/// Derivative at `x` of the parabola through three points.
fn parabola_slope(x: f64, p0: (f64, f64), p1: (f64, f64), p2: (f64, f64)) -> f64 {
    let (x0, y0) = p0;
    let (x1, y1) = p1;
    let (x2, y2) = p2;
    y0 * (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2))
        + y1 * (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2))
        + y2 * (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1))
}

/// Provenance of one window: which recording, channel, and start index it
/// was cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSource {
    pub recording_id: String,
    pub channel: String,
    pub start: usize,
}

/// One fixed-length window of a standardized channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub values: Vec<f64>,
    pub source: SegmentSource,
}

/// A pool of equal-length windows, possibly cut from many recordings and
/// channels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentSet {
    pub window: usize,
    pub segments: Vec<Segment>,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Pool another set into this one. Panics if window lengths differ.
    pub fn merge(&mut self, other: SegmentSet) {
        if self.segments.is_empty() {
            self.window = other.window;
        }
        assert_eq!(
            self.window, other.window,
            "cannot merge segment sets with different window lengths"
        );
        self.segments.extend(other.segments);
    }
}

/// Cut overlapping windows `[i, i+window)` from every channel of a
/// gap-filled recording, for `i = 0, step, 2*step, ...` up to `L - window`.
pub fn segment(
    rec: &StandardizedRecording,
    window: usize,
    step: usize,
) -> Result<SegmentSet, PreprocessError> {
    if window < 2 {
        return Err(PreprocessError::WindowTooShort(window));
    }
    if step == 0 {
        return Err(PreprocessError::ZeroStep);
    }
    let len = rec.len();
    if window > len {
        return Err(PreprocessError::WindowTooLong { window, len });
    }
    let mut segments = Vec::new();
    for (name, values) in &rec.recording.channels {
        debug_assert!(
            values.iter().all(|v| !v.is_nan()),
            "segment() expects gap-filled input"
        );
        let mut start = 0;
        while start + window <= len {
            segments.push(Segment {
                values: values[start..start + window].to_vec(),
                source: SegmentSource {
                    recording_id: rec.recording.id.clone(),
                    channel: name.clone(),
                    start,
                },
            });
            start += step;
        }
    }
    Ok(SegmentSet { window, segments })
}

/// Pool windows from several recordings into one training set.
pub fn segment_all(
    recs: &[StandardizedRecording],
    window: usize,
    step: usize,
) -> Result<SegmentSet, PreprocessError> {
    let mut pool = SegmentSet {
        window,
        segments: Vec::new(),
    };
    for rec in recs {
        pool.merge(segment(rec, window, step)?);
    }
    Ok(pool)
}

/// Reduce a high-rate signal to one sample per minute by averaging each
/// non-overlapping 60-second block. A trailing partial block is averaged
/// over the samples it has.
pub fn downsample_to_minutes(samples: &[f64], rate_hz: f64) -> Result<Vec<f64>, PreprocessError> {
    if samples.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let per_minute = rate_hz * 60.0;
    if per_minute < 1.0 {
        return Err(PreprocessError::RateTooLow { rate_hz });
    }
    let mut out = Vec::new();
    let mut block_start = 0usize;
    let mut minute = 1usize;
    while block_start < samples.len() {
        let block_end = ((per_minute * minute as f64).round() as usize).min(samples.len());
        let block = &samples[block_start..block_end];
        out.push(block.iter().sum::<f64>() / block.len() as f64);
        block_start = block_end;
        minute += 1;
    }
    Ok(out)
}
