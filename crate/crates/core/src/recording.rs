//! Domain types for minute-resolution multichannel recordings.
//!
//! A [`Recording`] holds one patient's vital-sign channels sampled once per
//! minute, with optional per-sample binary artifact labels. Missing samples
//! are represented as `f64::NAN` in memory and as empty cells in CSV.

use indexmap::IndexMap;
use thiserror::Error;

/// Per-channel scaling parameters captured during standardization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelScale {
    pub median: f64,
    pub iqr: f64,
}

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("recording `{id}` has no channels")]
    NoChannels { id: String },
    #[error("channel `{channel}` has length {got}, expected {expected}")]
    LengthMismatch {
        channel: String,
        got: usize,
        expected: usize,
    },
    #[error("label array for `{channel}` has length {got}, expected {expected}")]
    LabelLengthMismatch {
        channel: String,
        got: usize,
        expected: usize,
    },
    #[error("label array for `{channel}` contains value {value} (only 0/1 allowed)")]
    NonBinaryLabel { channel: String, value: u8 },
    #[error("labels present for unknown channel `{channel}`")]
    UnknownLabelChannel { channel: String },
}

/// One patient's multichannel minute-resolution recording.
///
/// All channel arrays share the same length `L`. Labels, when present for a
/// channel, are binary (1 = artifact) and have length `L` as well.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub channels: IndexMap<String, Vec<f64>>,
    pub labels: IndexMap<String, Vec<u8>>,
    /// ISO-8601 timestamp of the first sample. Informational only.
    pub start_time: String,
}

impl Recording {
    pub fn new(
        id: impl Into<String>,
        channels: IndexMap<String, Vec<f64>>,
        labels: IndexMap<String, Vec<u8>>,
        start_time: impl Into<String>,
    ) -> Result<Self, RecordingError> {
        let rec = Self {
            id: id.into(),
            channels,
            labels,
            start_time: start_time.into(),
        };
        rec.validate()?;
        Ok(rec)
    }

    fn validate(&self) -> Result<(), RecordingError> {
        let mut lengths = self.channels.values().map(Vec::len);
        let expected = lengths.next().ok_or_else(|| RecordingError::NoChannels {
            id: self.id.clone(),
        })?;
        for (name, values) in &self.channels {
            if values.len() != expected {
                return Err(RecordingError::LengthMismatch {
                    channel: name.clone(),
                    got: values.len(),
                    expected,
                });
            }
        }
        for (name, labels) in &self.labels {
            if !self.channels.contains_key(name) {
                return Err(RecordingError::UnknownLabelChannel {
                    channel: name.clone(),
                });
            }
            if labels.len() != expected {
                return Err(RecordingError::LabelLengthMismatch {
                    channel: name.clone(),
                    got: labels.len(),
                    expected,
                });
            }
            if let Some(&value) = labels.iter().find(|&&v| v > 1) {
                return Err(RecordingError::NonBinaryLabel {
                    channel: name.clone(),
                    value,
                });
            }
        }
        Ok(())
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.channels.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels.get(name).map(Vec::as_slice)
    }

    pub fn channel_labels(&self, name: &str) -> Option<&[u8]> {
        self.labels.get(name).map(Vec::as_slice)
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }
}

/// A recording after per-channel median/IQR standardization.
///
/// The inverse transform `x * iqr + median` recovers the original
/// non-missing samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedRecording {
    pub recording: Recording,
    pub scale: IndexMap<String, ChannelScale>,
}

impl StandardizedRecording {
    pub fn id(&self) -> &str {
        &self.recording.id
    }

    pub fn len(&self) -> usize {
        self.recording.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recording.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.recording.channel(name)
    }

    /// Undo the scaling for one channel's values.
    pub fn inverse(&self, name: &str, values: &[f64]) -> Option<Vec<f64>> {
        let scale = self.scale.get(name)?;
        Some(
            values
                .iter()
                .map(|v| v * scale.iqr + scale.median)
                .collect(),
        )
    }
}

/// Missing-data and scale summary for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelQuality {
    pub name: String,
    pub len: usize,
    pub missing: usize,
    /// Gap-length histogram buckets: 1, 2-5, 6-15, 16-60, >60 consecutive
    /// missing samples.
    pub gap_buckets: [usize; 5],
    pub longest_gap: usize,
    /// IQR of the non-missing samples, if at least one sample is present.
    pub iqr: Option<f64>,
}

/// Per-recording data-quality report.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub recording_id: String,
    pub channels: Vec<ChannelQuality>,
}

impl QualityReport {
    /// Channels containing at least one gap longer than 60 consecutive
    /// minutes. Such gaps are still filled, but interpolation across them
    /// is unreliable.
    pub fn long_gap_channels(&self) -> Vec<&str> {
        self.channels
            .iter()
            .filter(|c| c.gap_buckets[4] > 0)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("recording: {}\n", self.recording_id));
        for ch in &self.channels {
            let pct = if ch.len == 0 {
                0.0
            } else {
                100.0 * ch.missing as f64 / ch.len as f64
            };
            out.push_str(&format!(
                "channel {}: {} samples, {} missing ({:.2}%)\n",
                ch.name, ch.len, ch.missing, pct
            ));
            out.push_str(&format!(
                "  gaps by length: 1 -> {}, 2-5 -> {}, 6-15 -> {}, 16-60 -> {}, >60 -> {}\n",
                ch.gap_buckets[0],
                ch.gap_buckets[1],
                ch.gap_buckets[2],
                ch.gap_buckets[3],
                ch.gap_buckets[4]
            ));
            out.push_str(&format!("  longest gap: {} samples\n", ch.longest_gap));
            match ch.iqr {
                Some(iqr) => out.push_str(&format!("  iqr: {iqr}\n")),
                None => out.push_str("  iqr: undefined (no samples)\n"),
            }
            if ch.gap_buckets[4] > 0 {
                out.push_str("  warning: gap longer than 60 minutes; filled values are unreliable\n");
            }
        }
        out
    }
}

/// Summarize missingness and scale for every channel of a recording.
pub fn quality_report(rec: &Recording) -> QualityReport {
    let channels = rec
        .channels
        .iter()
        .map(|(name, values)| {
            let mut gap_buckets = [0usize; 5];
            let mut longest_gap = 0usize;
            let mut run = 0usize;
            let mut missing = 0usize;
            for (i, v) in values.iter().enumerate() {
                if v.is_nan() {
                    missing += 1;
                    run += 1;
                }
                if !v.is_nan() || i + 1 == values.len() {
                    if run > 0 {
                        let bucket = match run {
                            1 => 0,
                            2..=5 => 1,
                            6..=15 => 2,
                            16..=60 => 3,
                            _ => 4,
                        };
                        gap_buckets[bucket] += 1;
                        longest_gap = longest_gap.max(run);
                        run = 0;
                    }
                }
            }
            let known: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
            let iqr = if known.is_empty() {
                None
            } else {
                Some(
                    crate::preprocess::quantile(&known, 0.75)
                        - crate::preprocess::quantile(&known, 0.25),
                )
            };
            ChannelQuality {
                name: name.clone(),
                len: values.len(),
                missing,
                gap_buckets,
                longest_gap,
                iqr,
            }
        })
        .collect();
    QualityReport {
        recording_id: rec.id.clone(),
        channels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channels(pairs: &[(&str, Vec<f64>)]) -> IndexMap<String, Vec<f64>> {
        pairs
            .iter()
            .map(|(n, v)| (n.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn rejects_mismatched_channel_lengths() {
        let err = Recording::new(
            "r1",
            channels(&[("a", vec![1.0, 2.0]), ("b", vec![1.0])]),
            IndexMap::new(),
            "2010-01-01T00:00:00",
        )
        .unwrap_err();
        assert!(matches!(err, RecordingError::LengthMismatch { .. }));
    }

    #[test]
    fn rejects_non_binary_labels() {
        let mut labels = IndexMap::new();
        labels.insert("a".to_string(), vec![0u8, 2]);
        let err = Recording::new(
            "r1",
            channels(&[("a", vec![1.0, 2.0])]),
            labels,
            "2010-01-01T00:00:00",
        )
        .unwrap_err();
        assert!(matches!(err, RecordingError::NonBinaryLabel { .. }));
    }

    #[test]
    fn rejects_labels_for_unknown_channel() {
        let mut labels = IndexMap::new();
        labels.insert("b".to_string(), vec![0u8, 1]);
        let err = Recording::new(
            "r1",
            channels(&[("a", vec![1.0, 2.0])]),
            labels,
            "2010-01-01T00:00:00",
        )
        .unwrap_err();
        assert!(matches!(err, RecordingError::UnknownLabelChannel { .. }));
    }

    #[test]
    fn quality_report_counts_gaps_and_buckets() {
        let nan = f64::NAN;
        let rec = Recording::new(
            "r1",
            channels(&[(
                "a",
                vec![1.0, nan, 2.0, nan, nan, 3.0, 4.0, nan, nan, nan, nan, nan, nan, 5.0],
            )]),
            IndexMap::new(),
            "2010-01-01T00:00:00",
        )
        .unwrap();
        let report = quality_report(&rec);
        let ch = &report.channels[0];
        assert_eq!(ch.missing, 9);
        assert_eq!(ch.gap_buckets, [1, 1, 1, 0, 0]);
        assert_eq!(ch.longest_gap, 6);
        assert!(report.long_gap_channels().is_empty());
    }

    #[test]
    fn quality_report_flags_gaps_longer_than_sixty() {
        let mut values = vec![1.0; 200];
        for v in values.iter_mut().take(130).skip(50) {
            *v = f64::NAN;
        }
        let rec = Recording::new(
            "r1",
            channels(&[("a", values)]),
            IndexMap::new(),
            "2010-01-01T00:00:00",
        )
        .unwrap();
        let report = quality_report(&rec);
        assert_eq!(report.long_gap_channels(), vec!["a"]);
        assert!(report.render().contains("warning"));
    }

    #[test]
    fn trailing_gap_is_counted() {
        let rec = Recording::new(
            "r1",
            channels(&[("a", vec![1.0, 2.0, f64::NAN, f64::NAN])]),
            IndexMap::new(),
            "2010-01-01T00:00:00",
        )
        .unwrap();
        let report = quality_report(&rec);
        assert_eq!(report.channels[0].gap_buckets[1], 1);
        assert_eq!(report.channels[0].longest_gap, 2);
    }
}
