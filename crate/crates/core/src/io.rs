//! Recording CSV format.
//!
//! Header: `timestamp,<chan>,<chan>_label,...` with a label column present
//! only for labeled channels. Timestamps are ISO-8601 (`%Y-%m-%dT%H:%M:%S`)
//! at a strict one-minute cadence. An empty value cell is a missing sample;
//! label cells are `0`, `1`, or empty (read as 0).

use chrono::{Duration, NaiveDateTime};
use indexmap::IndexMap;
use std::path::Path;
use thiserror::Error;

use crate::recording::{Recording, RecordingError};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Recording(#[from] RecordingError),
}

fn format_err(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

/// Write a recording; channels keep their map order and labeled channels
/// get a `<name>_label` column right after their value column.
pub fn write_recording_csv(rec: &Recording, path: &Path) -> Result<(), IoError> {
    let start = NaiveDateTime::parse_from_str(&rec.start_time, TIMESTAMP_FORMAT)
        .map_err(|e| format_err(format!("bad start_time `{}`: {e}", rec.start_time)))?;
    let mut writer = csv::Writer::from_path(path)?;

    let mut header = vec!["timestamp".to_string()];
    for name in rec.channels.keys() {
        header.push(name.clone());
        if rec.labels.contains_key(name) {
            header.push(format!("{name}_label"));
        }
    }
    writer.write_record(&header)?;

    for t in 0..rec.len() {
        let mut row = Vec::with_capacity(header.len());
        let stamp = start + Duration::minutes(t as i64);
        row.push(stamp.format(TIMESTAMP_FORMAT).to_string());
        for (name, values) in &rec.channels {
            let v = values[t];
            row.push(if v.is_nan() { String::new() } else { v.to_string() });
            if let Some(labels) = rec.labels.get(name) {
                row.push(labels[t].to_string());
            }
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a recording; the id is the file stem. Validates the one-minute
/// cadence and binary labels.
pub fn read_recording_csv(path: &Path) -> Result<Recording, IoError> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("recording")
        .to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.is_empty() || &header[0] != "timestamp" {
        return Err(format_err("first column must be `timestamp`"));
    }

    enum Column {
        Value(String),
        Label(String),
    }
    let mut columns = Vec::new();
    let mut channel_order: Vec<String> = Vec::new();
    for name in header.iter().skip(1) {
        if let Some(base) = name.strip_suffix("_label") {
            if !channel_order.iter().any(|c| c == base) {
                return Err(format_err(format!(
                    "label column `{name}` has no matching channel column"
                )));
            }
            columns.push(Column::Label(base.to_string()));
        } else {
            if channel_order.iter().any(|c| c == name) {
                return Err(format_err(format!("duplicate channel column `{name}`")));
            }
            channel_order.push(name.to_string());
            columns.push(Column::Value(name.to_string()));
        }
    }

    let mut channels: IndexMap<String, Vec<f64>> = channel_order
        .iter()
        .map(|c| (c.clone(), Vec::new()))
        .collect();
    let mut labels: IndexMap<String, Vec<u8>> = IndexMap::new();
    let mut start_time = String::new();
    let mut prev_stamp: Option<NaiveDateTime> = None;

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(format_err(format!(
                "row {}: expected {} fields, got {}",
                row_idx + 2,
                header.len(),
                record.len()
            )));
        }
        let stamp = NaiveDateTime::parse_from_str(&record[0], TIMESTAMP_FORMAT)
            .map_err(|e| format_err(format!("row {}: bad timestamp: {e}", row_idx + 2)))?;
        if let Some(prev) = prev_stamp {
            if stamp - prev != Duration::minutes(1) {
                return Err(format_err(format!(
                    "row {}: timestamps must advance by exactly one minute",
                    row_idx + 2
                )));
            }
        } else {
            start_time = record[0].to_string();
        }
        prev_stamp = Some(stamp);

        for (field, column) in record.iter().skip(1).zip(&columns) {
            match column {
                Column::Value(name) => {
                    let value = if field.is_empty() {
                        f64::NAN
                    } else {
                        field.parse::<f64>().map_err(|e| {
                            format_err(format!("row {}: channel `{name}`: {e}", row_idx + 2))
                        })?
                    };
                    channels.get_mut(name).expect("known channel").push(value);
                }
                Column::Label(name) => {
                    let label = match field {
                        "" | "0" => 0u8,
                        "1" => 1u8,
                        other => {
                            return Err(format_err(format!(
                                "row {}: label for `{name}` must be 0/1/empty, got `{other}`",
                                row_idx + 2
                            )))
                        }
                    };
                    labels.entry(name.clone()).or_default().push(label);
                }
            }
        }
    }
    if channels.values().next().is_none_or(|v| v.is_empty()) {
        return Err(format_err("no data rows"));
    }
    Ok(Recording::new(id, channels, labels, start_time)?)
}

/// Read every `*.csv` recording in a directory, sorted by file name.
/// Files ending in `.clean.csv` (counterfactual sidecars) are skipped.
pub fn read_corpus(dir: &Path) -> Result<Vec<Recording>, IoError> {
    let mut paths: Vec<std::path::PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && !p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(".clean.csv"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| read_recording_csv(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_recording() -> Recording {
        let mut channels = IndexMap::new();
        channels.insert("BPm".to_string(), vec![85.0, f64::NAN, 92.5]);
        channels.insert("HRT".to_string(), vec![100.0, 101.0, 99.0]);
        let mut labels = IndexMap::new();
        labels.insert("BPm".to_string(), vec![0u8, 0, 1]);
        Recording::new("r1", channels, labels, "2010-01-01T00:00:00").unwrap()
    }

    #[test]
    fn roundtrip_preserves_values_missing_and_labels() {
        let dir = std::env::temp_dir().join("vitalsift-io-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r1.csv");
        let rec = sample_recording();
        write_recording_csv(&rec, &path).unwrap();
        let back = read_recording_csv(&path).unwrap();
        assert_eq!(back.id, "r1");
        assert_eq!(back.channel("HRT").unwrap(), rec.channel("HRT").unwrap());
        let bpm = back.channel("BPm").unwrap();
        assert_eq!(bpm[0], 85.0);
        assert!(bpm[1].is_nan());
        assert_eq!(bpm[2], 92.5);
        assert_eq!(back.channel_labels("BPm").unwrap(), &[0, 0, 1]);
        assert!(back.channel_labels("HRT").is_none());
        assert_eq!(back.start_time, "2010-01-01T00:00:00");
    }

    #[test]
    fn header_and_cadence_are_validated() {
        let dir = std::env::temp_dir().join("vitalsift-io-bad");
        std::fs::create_dir_all(&dir).unwrap();

        let no_ts = dir.join("no_ts.csv");
        std::fs::write(&no_ts, "time,BPm\n2010-01-01T00:00:00,1\n").unwrap();
        assert!(matches!(
            read_recording_csv(&no_ts),
            Err(IoError::Format(_))
        ));

        let bad_gap = dir.join("bad_gap.csv");
        std::fs::write(
            &bad_gap,
            "timestamp,BPm\n2010-01-01T00:00:00,1\n2010-01-01T00:05:00,2\n",
        )
        .unwrap();
        assert!(matches!(
            read_recording_csv(&bad_gap),
            Err(IoError::Format(_))
        ));

        let orphan_label = dir.join("orphan.csv");
        std::fs::write(
            &orphan_label,
            "timestamp,ICP_label\n2010-01-01T00:00:00,1\n",
        )
        .unwrap();
        assert!(matches!(
            read_recording_csv(&orphan_label),
            Err(IoError::Format(_))
        ));
    }

    #[test]
    fn empty_label_cells_read_as_zero() {
        let dir = std::env::temp_dir().join("vitalsift-io-labels");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.csv");
        std::fs::write(
            &path,
            "timestamp,a,a_label\n2010-01-01T00:00:00,1.5,\n2010-01-01T00:01:00,2.5,1\n",
        )
        .unwrap();
        let rec = read_recording_csv(&path).unwrap();
        assert_eq!(rec.channel_labels("a").unwrap(), &[0, 1]);
    }

    #[test]
    fn corpus_reader_skips_clean_sidecars() {
        let dir = std::env::temp_dir().join("vitalsift-io-corpus");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let rec = sample_recording();
        write_recording_csv(&rec, &dir.join("b.csv")).unwrap();
        write_recording_csv(&rec, &dir.join("a.csv")).unwrap();
        write_recording_csv(&rec, &dir.join("a.clean.csv")).unwrap();
        let corpus = read_corpus(&dir).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0].id, "a");
        assert_eq!(corpus[1].id, "b");
    }
}
