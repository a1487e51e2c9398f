//! Synthetic vital-sign corpus with ground-truth artifact labels.
//!
//! Each channel's clean baseline is a sum of slow sinusoids plus stationary
//! AR(1) noise around a base level. Artifacts are injected afterwards, so
//! the clean counterfactual is kept alongside: spikes replace 1-3
//! consecutive samples with `baseline +/- magnitude * noise_sigma`, and
//! flatlines hold the baseline value at the run start for 10-60 samples.
//! Every altered sample is labeled 1. Missing markers are inserted on clean
//! samples only.
//!
//! The three default presets differ in how much the artifact and clean
//! value ranges overlap: the `ICPm`-like preset has slow-wave swings that
//! dwarf its noise, so even a 4-5 sigma spike stays inside the clean value
//! range and is only detectable from local context.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recording::Recording;

#[derive(Debug, Error)]
#[error("invalid synth config: {0}")]
pub struct SynthError(String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidSpec {
    pub amplitude: f64,
    pub period_minutes: f64,
}

/// Baseline dynamics for one synthetic channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPreset {
    pub name: String,
    pub base_level: f64,
    pub sinusoids: Vec<SinusoidSpec>,
    /// AR(1) coefficient of the noise process.
    pub ar_coeff: f64,
    /// Stationary standard deviation of the noise process.
    pub noise_sigma: f64,
    /// Spike magnitude range in units of `noise_sigma`; at least 4.
    pub spike_magnitude: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_recordings: usize,
    pub length: usize,
    pub channels: Vec<ChannelPreset>,
    /// Expected fraction of samples replaced by spike artifacts.
    pub spike_rate: f64,
    /// Expected fraction of samples inside flatline artifacts.
    pub flatline_rate: f64,
    /// Flatline run length range in samples, within [10, 60].
    pub flatline_duration: (usize, usize),
    /// Probability that a clean sample is marked missing.
    pub missing_rate: f64,
    pub seed: u64,
}

pub fn bpm_like_preset() -> ChannelPreset {
    ChannelPreset {
        name: "BPm".to_string(),
        base_level: 85.0,
        sinusoids: vec![
            SinusoidSpec { amplitude: 5.0, period_minutes: 240.0 },
            SinusoidSpec { amplitude: 2.5, period_minutes: 720.0 },
        ],
        ar_coeff: 0.85,
        noise_sigma: 2.0,
        spike_magnitude: (6.0, 10.0),
    }
}

pub fn icpm_like_preset() -> ChannelPreset {
    ChannelPreset {
        name: "ICPm".to_string(),
        base_level: 20.0,
        sinusoids: vec![
            SinusoidSpec { amplitude: 8.0, period_minutes: 180.0 },
            SinusoidSpec { amplitude: 4.0, period_minutes: 420.0 },
            SinusoidSpec { amplitude: 2.0, period_minutes: 60.0 },
        ],
        ar_coeff: 0.9,
        noise_sigma: 1.5,
        spike_magnitude: (4.0, 5.0),
    }
}

pub fn hrt_like_preset() -> ChannelPreset {
    ChannelPreset {
        name: "HRT".to_string(),
        base_level: 98.0,
        sinusoids: vec![
            SinusoidSpec { amplitude: 6.0, period_minutes: 300.0 },
            SinusoidSpec { amplitude: 3.0, period_minutes: 900.0 },
        ],
        ar_coeff: 0.8,
        noise_sigma: 2.5,
        spike_magnitude: (5.0, 8.0),
    }
}

impl SynthConfig {
    /// The default corpus: 20 recordings of 2000 minutes across the three
    /// channel presets.
    pub fn default_corpus(seed: u64) -> Self {
        Self {
            n_recordings: 20,
            length: 2000,
            channels: vec![bpm_like_preset(), icpm_like_preset(), hrt_like_preset()],
            spike_rate: 0.015,
            flatline_rate: 0.012,
            flatline_duration: (10, 40),
            missing_rate: 0.01,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let mut problems = Vec::new();
        if self.n_recordings == 0 {
            problems.push("n_recordings must be positive".to_string());
        }
        if self.length < 4 * self.flatline_duration.1.max(1) {
            problems.push(format!(
                "length {} too short for flatlines up to {}",
                self.length, self.flatline_duration.1
            ));
        }
        if self.channels.is_empty() {
            problems.push("at least one channel preset required".to_string());
        }
        let mut names: Vec<&str> = self.channels.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.channels.len() {
            problems.push("channel names must be unique".to_string());
        }
        for rate in [self.spike_rate, self.flatline_rate, self.missing_rate] {
            if !(0.0..=1.0).contains(&rate) {
                problems.push(format!("rate {rate} outside [0, 1]"));
            }
        }
        let (flo, fhi) = self.flatline_duration;
        if !(10..=60).contains(&flo) || !(10..=60).contains(&fhi) || flo > fhi {
            problems.push(format!(
                "flatline duration range ({flo}, {fhi}) must lie within [10, 60]"
            ));
        }
        for ch in &self.channels {
            if ch.noise_sigma <= 0.0 {
                problems.push(format!("channel {}: noise_sigma must be positive", ch.name));
            }
            if !(0.0..1.0).contains(&ch.ar_coeff) {
                problems.push(format!("channel {}: ar_coeff must be in [0, 1)", ch.name));
            }
            let (lo, hi) = ch.spike_magnitude;
            if lo < 4.0 || hi < lo {
                problems.push(format!(
                    "channel {}: spike magnitude range ({lo}, {hi}) must start at >= 4 sigma",
                    ch.name
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SynthError(problems.join("; ")))
        }
    }
}

/// A generated recording together with its clean counterfactual baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRecording {
    pub recording: Recording,
    /// Per-channel baseline before artifact injection and missing markers.
    pub clean: IndexMap<String, Vec<f64>>,
}

/// Generate a labeled corpus. Deterministic for a given seed; recordings
/// use independently derived seeds.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<GeneratedRecording>, SynthError> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rec_seeds: Vec<u64> = (0..cfg.n_recordings).map(|_| master.gen()).collect();
    Ok(rec_seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| generate_recording(cfg, i, seed))
        .collect())
}

fn generate_recording(cfg: &SynthConfig, index: usize, seed: u64) -> GeneratedRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = cfg.length;
    let mut channels = IndexMap::new();
    let mut labels = IndexMap::new();
    let mut clean = IndexMap::new();

    for preset in &cfg.channels {
        let baseline = sample_baseline(preset, len, &mut rng);
        let mut values = baseline.clone();
        let mut label = vec![0u8; len];

        inject_spikes(cfg, preset, &baseline, &mut values, &mut label, &mut rng);
        inject_flatlines(cfg, &baseline, &mut values, &mut label, &mut rng);

        for (v, &l) in values.iter_mut().zip(&label) {
            if l == 0 && rng.gen::<f64>() < cfg.missing_rate {
                *v = f64::NAN;
            }
        }

        channels.insert(preset.name.clone(), values);
        labels.insert(preset.name.clone(), label);
        clean.insert(preset.name.clone(), baseline);
    }

    let recording = Recording::new(
        format!("synth-{index:03}"),
        channels,
        labels,
        "2010-01-01T00:00:00",
    )
    .expect("generated recording is structurally valid");
    GeneratedRecording { recording, clean }
}

fn sample_baseline(preset: &ChannelPreset, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let phases: Vec<f64> = preset
        .sinusoids
        .iter()
        .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
        .collect();
    let innovation = preset.noise_sigma * (1.0 - preset.ar_coeff * preset.ar_coeff).sqrt();
    let mut noise: f64 = preset.noise_sigma * rng.sample::<f64, _>(StandardNormal);
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 {
            noise = preset.ar_coeff * noise + innovation * rng.sample::<f64, _>(StandardNormal);
        }
        let mut v = preset.base_level + noise;
        for (s, phase) in preset.sinusoids.iter().zip(&phases) {
            v += s.amplitude * (std::f64::consts::TAU * t as f64 / s.period_minutes + phase).sin();
        }
        out.push(v);
    }
    out
}

/// Place a non-overlapping event of `event_len` samples, trying a bounded
/// number of random starts. Returns the start index if placed.
fn place_event(
    occupied: &[u8],
    event_len: usize,
    rng: &mut impl Rng,
) -> Option<usize> {
    let len = occupied.len();
    if event_len > len {
        return None;
    }
    for _ in 0..50 {
        let start = rng.gen_range(0..=len - event_len);
        if occupied[start..start + event_len].iter().all(|&o| o == 0) {
            return Some(start);
        }
    }
    None
}

fn inject_spikes(
    cfg: &SynthConfig,
    preset: &ChannelPreset,
    baseline: &[f64],
    values: &mut [f64],
    labels: &mut [u8],
    rng: &mut impl Rng,
) {
    let mean_len = 2.0;
    let n_events = (cfg.spike_rate * cfg.length as f64 / mean_len).round() as usize;
    for _ in 0..n_events {
        let event_len = rng.gen_range(1..=3usize);
        let Some(start) = place_event(labels, event_len, rng) else {
            continue;
        };
        let (lo, hi) = preset.spike_magnitude;
        let magnitude = rng.gen_range(lo..=hi) * preset.noise_sigma;
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        for t in start..start + event_len {
            values[t] = baseline[t] + sign * magnitude;
            labels[t] = 1;
        }
    }
}

fn inject_flatlines(
    cfg: &SynthConfig,
    baseline: &[f64],
    values: &mut [f64],
    labels: &mut [u8],
    rng: &mut impl Rng,
) {
    let (lo, hi) = cfg.flatline_duration;
    let mean_len = (lo + hi) as f64 / 2.0;
    let n_events = (cfg.flatline_rate * cfg.length as f64 / mean_len).round() as usize;
    for _ in 0..n_events {
        let event_len = rng.gen_range(lo..=hi);
        let Some(start) = place_event(labels, event_len, rng) else {
            continue;
        };
        let hold = baseline[start];
        for t in start..start + event_len {
            values[t] = hold;
            labels[t] = 1;
        }
    }
}

/// Which artifact kind a labeled sample belongs to; used to split
/// sensitivity by artifact type in evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Clean,
    Spike,
    Flatline,
}

/// Classify each sample of a generated channel against its counterfactual:
/// labeled runs where the value is held constant are flatlines, all other
/// labeled samples are spikes.
pub fn artifact_kinds(gen: &GeneratedRecording, channel: &str) -> Vec<ArtifactKind> {
    let labels = gen
        .recording
        .channel_labels(channel)
        .expect("generated channels are labeled");
    let values = gen.recording.channel(channel).expect("known channel");
    let len = labels.len();
    let mut kinds = vec![ArtifactKind::Clean; len];
    let mut t = 0;
    while t < len {
        if labels[t] == 0 {
            t += 1;
            continue;
        }
        let mut end = t;
        while end + 1 < len && labels[end + 1] == 1 {
            end += 1;
        }
        let run = &values[t..=end];
        let is_flat = run.len() >= 2 && run.windows(2).all(|w| w[0] == w[1]);
        let kind = if is_flat {
            ArtifactKind::Flatline
        } else {
            ArtifactKind::Spike
        };
        for k in &mut kinds[t..=end] {
            *k = kind;
        }
        t = end + 1;
    }
    kinds
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(seed: u64) -> SynthConfig {
        SynthConfig {
            n_recordings: 3,
            length: 400,
            channels: vec![bpm_like_preset(), icpm_like_preset()],
            spike_rate: 0.02,
            flatline_rate: 0.015,
            flatline_duration: (10, 20),
            missing_rate: 0.01,
            seed,
        }
    }

    #[test]
    fn zero_rates_give_unlabeled_clean_corpus() {
        let mut cfg = small_config(0);
        cfg.spike_rate = 0.0;
        cfg.flatline_rate = 0.0;
        cfg.missing_rate = 0.0;
        for gen in generate(&cfg).unwrap() {
            for name in gen.recording.channel_names() {
                assert!(gen
                    .recording
                    .channel_labels(name)
                    .unwrap()
                    .iter()
                    .all(|&l| l == 0));
            }
            for (name, clean) in &gen.clean {
                assert_eq!(gen.recording.channel(name).unwrap(), clean.as_slice());
            }
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = small_config(7);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&small_config(8)).unwrap();
        assert_ne!(generate(&cfg).unwrap(), other);
    }

    #[test]
    fn label_density_approximates_configured_artifact_mass() {
        let cfg = SynthConfig::default_corpus(123);
        let corpus = generate(&cfg).unwrap();
        let mut labeled = 0usize;
        let mut total = 0usize;
        for gen in &corpus {
            for name in gen.recording.channel_names() {
                let l = gen.recording.channel_labels(name).unwrap();
                labeled += l.iter().map(|&v| v as usize).sum::<usize>();
                total += l.len();
            }
        }
        let density = labeled as f64 / total as f64;
        let expected = cfg.spike_rate + cfg.flatline_rate;
        assert!(
            (density - expected).abs() / expected < 0.2,
            "density {density} vs expected {expected}"
        );
    }

    #[test]
    fn labeled_samples_differ_from_baseline_or_are_flat_runs() {
        let corpus = generate(&small_config(42)).unwrap();
        for gen in &corpus {
            for name in gen.recording.channel_names().map(str::to_string) {
                let values = gen.recording.channel(&name).unwrap();
                let labels = gen.recording.channel_labels(&name).unwrap();
                let clean = &gen.clean[&name];
                let len = labels.len();
                let mut t = 0;
                while t < len {
                    if labels[t] == 0 {
                        t += 1;
                        continue;
                    }
                    let mut end = t;
                    while end + 1 < len && labels[end + 1] == 1 {
                        end += 1;
                    }
                    let run = &values[t..=end];
                    let differs = (t..=end).all(|i| (values[i] - clean[i]).abs() > 0.0);
                    let flat = run.len() >= 2 && run.windows(2).all(|w| w[0] == w[1]);
                    assert!(
                        differs || flat,
                        "{name} run [{t}, {end}] neither differs from baseline nor is flat"
                    );
                    t = end + 1;
                }
            }
        }
    }

    #[test]
    fn missing_markers_only_on_clean_samples() {
        let corpus = generate(&small_config(9)).unwrap();
        let mut saw_missing = false;
        for gen in &corpus {
            for name in gen.recording.channel_names() {
                let values = gen.recording.channel(name).unwrap();
                let labels = gen.recording.channel_labels(name).unwrap();
                for (v, &l) in values.iter().zip(labels) {
                    if v.is_nan() {
                        saw_missing = true;
                        assert_eq!(l, 0, "missing marker on an artifact sample");
                    }
                }
            }
        }
        assert!(saw_missing, "expected some missing markers at rate 0.01");
    }

    #[test]
    fn per_recording_iqr_stays_positive() {
        use crate::preprocess::quantile;
        let corpus = generate(&SynthConfig::default_corpus(5)).unwrap();
        for gen in &corpus {
            for name in gen.recording.channel_names() {
                let known: Vec<f64> = gen
                    .recording
                    .channel(name)
                    .unwrap()
                    .iter()
                    .copied()
                    .filter(|v| !v.is_nan())
                    .collect();
                assert!(quantile(&known, 0.75) - quantile(&known, 0.25) > 0.0);
            }
        }
    }

    #[test]
    fn artifact_kinds_partition_labels() {
        let corpus = generate(&small_config(17)).unwrap();
        let gen = &corpus[0];
        let kinds = artifact_kinds(gen, "BPm");
        let labels = gen.recording.channel_labels("BPm").unwrap();
        let mut spikes = 0;
        let mut flats = 0;
        for (kind, &label) in kinds.iter().zip(labels) {
            match kind {
                ArtifactKind::Clean => assert_eq!(label, 0),
                ArtifactKind::Spike => {
                    assert_eq!(label, 1);
                    spikes += 1;
                }
                ArtifactKind::Flatline => {
                    assert_eq!(label, 1);
                    flats += 1;
                }
            }
        }
        assert!(spikes > 0, "expected spike samples");
        assert!(flats > 0, "expected flatline samples");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_config(0);
        cfg.spike_rate = 1.5;
        assert!(generate(&cfg).is_err());

        let mut cfg = small_config(0);
        cfg.flatline_duration = (5, 20);
        assert!(generate(&cfg).is_err());

        let mut cfg = small_config(0);
        cfg.channels[0].spike_magnitude = (2.0, 3.0);
        assert!(generate(&cfg).is_err());
    }
}
