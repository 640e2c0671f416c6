//! ECOG-BIN v1 container.
//!
//! A directory with `manifest.json` and `voltage.bin`; the binary holds
//! `n_samples × n_channels` little-endian f32 values, time-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Condition, Recording, StimEvent};
use crate::{Error, Result};

pub const FORMAT_VERSION: &str = "ecog-bin-1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOLTAGE_FILE: &str = "voltage.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub participant_id: String,
    pub condition: Condition,
    pub srate: u32,
    pub n_samples: usize,
    pub n_channels: usize,
    pub dtype: String,
    pub events: Vec<StimEvent>,
}

pub fn load_recording(dir: impl AsRef<Path>) -> Result<Recording> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest { path: manifest_path.clone(), msg: e.to_string() })?;
    let bad = |msg: String| Error::Manifest { path: manifest_path.clone(), msg };
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format_version {:?}", manifest.format_version)));
    }
    if manifest.dtype != "f32le" {
        return Err(bad(format!("unsupported dtype {:?}", manifest.dtype)));
    }
    if manifest.n_channels == 0 {
        return Err(bad("n_channels must be positive".into()));
    }

    let bin_path = dir.join(VOLTAGE_FILE);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expected = (manifest.n_samples * manifest.n_channels * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch { expected, found: bytes.len() as u64 });
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let voltages =
        Array2::from_shape_vec((manifest.n_samples, manifest.n_channels), values).map_err(|e| bad(e.to_string()))?;

    // Sorting is the only normalization applied; order violations in the file
    // surface as overlap errors below.
    let sorted = manifest.events.windows(2).all(|w| w[0].t_on <= w[1].t_on);
    if !sorted {
        let index = manifest.events.windows(2).position(|w| w[0].t_on > w[1].t_on).map_or(0, |i| i + 1);
        return Err(Error::EventOrder { index });
    }
    Recording::new(manifest.participant_id, manifest.condition, manifest.srate, voltages, manifest.events)
}

pub fn write_recording(rec: &Recording, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION.to_string(),
        participant_id: rec.participant_id().to_string(),
        condition: rec.condition(),
        srate: rec.srate(),
        n_samples: rec.n_samples(),
        n_channels: rec.channel_count(),
        dtype: "f32le".to_string(),
        events: rec.events().to_vec(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    let mut bytes = Vec::with_capacity(rec.n_samples() * rec.channel_count() * 4);
    for v in rec.voltages().iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let bin_path = dir.join(VOLTAGE_FILE);
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(dir: &Path, n_samples: usize, n_channels: usize, bytes: usize, events: &str) {
        let manifest = format!(
            r#"{{"format_version":"ecog-bin-1","participant_id":"p","condition":"real","srate":1000,
               "n_samples":{n_samples},"n_channels":{n_channels},"dtype":"f32le","events":{events}}}"#
        );
        fs::write(dir.join(MANIFEST_FILE), manifest).unwrap();
        fs::write(dir.join(VOLTAGE_FILE), vec![0u8; bytes]).unwrap();
    }

    #[test]
    fn loads_declared_shape() {
        let tmp = tempfile::tempdir().unwrap();
        write_raw(tmp.path(), 10000, 4, 160000, r#"[{"t_on":10,"t_off":20,"stim_id":11}]"#);
        let rec = load_recording(tmp.path()).unwrap();
        assert_eq!(rec.voltages().dim(), (10000, 4));
        assert_eq!(rec.condition(), Condition::Real);
    }

    #[test]
    fn event_beyond_recording_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write_raw(tmp.path(), 10000, 4, 160000, r#"[{"t_on":10,"t_off":20000,"stim_id":11}]"#);
        let err = load_recording(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("event out of range"), "{err}");
    }

    #[test]
    fn size_mismatch_and_missing_files() {
        let tmp = tempfile::tempdir().unwrap();
        write_raw(tmp.path(), 10000, 4, 159996, "[]");
        assert!(matches!(load_recording(tmp.path()), Err(Error::SizeMismatch { expected: 160000, found: 159996 })));
        assert!(matches!(load_recording(tmp.path().join("nope")), Err(Error::Io { .. })));
    }

    #[test]
    fn unsorted_events_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write_raw(
            tmp.path(),
            100,
            1,
            400,
            r#"[{"t_on":50,"t_off":60,"stim_id":11},{"t_on":10,"t_off":20,"stim_id":12}]"#,
        );
        assert!(matches!(load_recording(tmp.path()), Err(Error::EventOrder { index: 1 })));
    }

    #[test]
    fn corrupt_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join(MANIFEST_FILE), "{not json").unwrap();
        assert!(matches!(load_recording(tmp.path()), Err(Error::Manifest { .. })));
    }

    #[test]
    fn round_trip_is_bitwise() {
        let tmp = tempfile::tempdir().unwrap();
        let v = Array2::from_shape_fn((257, 3), |(t, c)| ((t * 7 + c) as f32).sin() * 1e-3);
        let rec =
            Recording::new("p7", Condition::Imagery, 1000, v, vec![StimEvent { t_on: 3, t_off: 90, stim_id: 12 }])
                .unwrap();
        write_recording(&rec, tmp.path()).unwrap();
        let back = load_recording(tmp.path()).unwrap();
        assert_eq!(back, rec);
        assert!(back.voltages().iter().zip(rec.voltages().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
