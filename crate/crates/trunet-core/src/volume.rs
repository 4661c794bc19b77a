//! Volume containers, the `VOL1` on-disk format, and dataset manifests.
//!
//! Grids are stored with axes in header order `[x, y, z]`, last axis
//! fastest: voxel `(x, y, z)` lives at `(x * ey + y) * ez + z`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{data_err, format_err, Result};

/// Integer label grid with physical voxel spacing in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub extents: [usize; 3],
    pub voxels: Vec<u8>,
    pub spacing_mm: [f64; 3],
}

impl LabelVolume {
    pub fn new(extents: [usize; 3], voxels: Vec<u8>, spacing_mm: [f64; 3]) -> Result<Self> {
        let n: usize = extents.iter().product();
        if voxels.len() != n {
            return Err(data_err!(
                "label grid has {} voxels but extents {:?} want {}",
                voxels.len(),
                extents,
                n
            ));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(data_err!("voxel spacing must be strictly positive"));
        }
        Ok(LabelVolume {
            extents,
            voxels,
            spacing_mm,
        })
    }

    pub fn numel(&self) -> usize {
        self.extents.iter().product()
    }

    /// Validates that every label is below `num_classes`.
    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        if let Some(&bad) = self.voxels.iter().find(|&&v| v as usize >= num_classes) {
            return Err(data_err!(
                "label {} out of range for {} classes",
                bad,
                num_classes
            ));
        }
        Ok(())
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.extents[1] + y) * self.extents[2] + z
    }

    /// Binary mask of one class.
    pub fn class_mask(&self, class_id: u8) -> Vec<bool> {
        self.voxels.iter().map(|&v| v == class_id).collect()
    }
}

/// One acquisition timepoint: intensities plus aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSample {
    pub intensity: Vec<f32>,
    pub labels: LabelVolume,
    pub patient_id: u32,
    /// 1-based position in the cardiac cycle.
    pub timepoint: u32,
}

impl VolumeSample {
    pub fn extents(&self) -> [usize; 3] {
        self.labels.extents
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.labels.spacing_mm
    }

    pub fn validate(&self) -> Result<()> {
        if self.intensity.len() != self.labels.numel() {
            return Err(data_err!(
                "intensity has {} voxels, labels {}",
                self.intensity.len(),
                self.labels.numel()
            ));
        }
        if self.intensity.iter().any(|v| !v.is_finite()) {
            return Err(data_err!("intensity contains non-finite values"));
        }
        if self.timepoint == 0 {
            return Err(data_err!("timepoint is 1-based"));
        }
        Ok(())
    }
}

const VOL_MAGIC: &[u8] = b"VOL1";

#[derive(Serialize, Deserialize)]
struct VolHeader {
    shape: [usize; 3],
    spacing_mm: [f64; 3],
    patient_id: u32,
    timepoint: u32,
    dtype_intensity: String,
    dtype_labels: String,
}

/// Writes a `VOL1` file: magic, u32-LE header length, JSON header, f32-LE
/// intensity payload, u8 label payload.
pub fn save_volume(sample: &VolumeSample, path: &Path) -> Result<()> {
    sample.validate()?;
    let header = VolHeader {
        shape: sample.extents(),
        spacing_mm: sample.spacing_mm(),
        patient_id: sample.patient_id,
        timepoint: sample.timepoint,
        dtype_intensity: "f32".into(),
        dtype_labels: "u8".into(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(VOL_MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    let mut payload = Vec::with_capacity(sample.intensity.len() * 4);
    for v in &sample.intensity {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    w.write_all(&sample.labels.voxels)?;
    w.flush()?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<VolumeSample> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| format_err!("volume file shorter than its magic"))?;
    if magic != VOL_MAGIC {
        return Err(format_err!(
            "bad volume magic {:?}",
            String::from_utf8_lossy(&magic)
        ));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| format_err!("volume file truncated in header length"))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| format_err!("volume file truncated inside the header"))?;
    let header: VolHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| format_err!("volume header is not valid JSON: {e}"))?;
    if header.dtype_intensity != "f32" || header.dtype_labels != "u8" {
        return Err(format_err!(
            "unsupported dtypes ({}, {})",
            header.dtype_intensity,
            header.dtype_labels
        ));
    }
    let n: usize = header.shape.iter().product();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = n * 4 + n;
    if payload.len() != expected {
        return Err(format_err!(
            "volume payload size mismatch: expected {} bytes ({} intensity + {} labels), got {}",
            expected,
            n * 4,
            n,
            payload.len()
        ));
    }
    let intensity: Vec<f32> = payload[..n * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let labels = LabelVolume::new(header.shape, payload[n * 4..].to_vec(), header.spacing_mm)?;
    Ok(VolumeSample {
        intensity,
        labels,
        patient_id: header.patient_id,
        timepoint: header.timepoint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub patient_id: u32,
    pub timepoint: u32,
    pub split: Split,
}

/// Dataset index: every volume file with its patient-level split.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads every volume of a split, in manifest order. Paths are resolved
    /// relative to `base` when not absolute.
    pub fn load_split(&self, base: &Path, split: Split) -> Result<Vec<VolumeSample>> {
        self.split_entries(split)
            .map(|e| {
                let p = if e.path.is_absolute() {
                    e.path.clone()
                } else {
                    base.join(&e.path)
                };
                load_volume(&p)
            })
            .collect()
    }

    pub fn patient_ids(&self, split: Split) -> Vec<u32> {
        let mut ids: Vec<u32> = self.split_entries(split).map(|e| e.patient_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> VolumeSample {
        let n = 4 * 3 * 2;
        VolumeSample {
            intensity: (0..n).map(|i| i as f32 * 0.5 - 1.0).collect(),
            labels: LabelVolume::new(
                [4, 3, 2],
                (0..n).map(|i| (i % 6) as u8).collect(),
                [1.0, 0.8, 0.5],
            )
            .unwrap(),
            patient_id: 3,
            timepoint: 2,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vol");
        let s = sample();
        save_volume(&s, &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back, s);
        assert!(s
            .intensity
            .iter()
            .zip(&back.intensity)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_payload_reports_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vol");
        save_volume(&sample(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_volume(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected") && msg.contains("got"), "{msg}");
    }

    #[test]
    fn payload_size_arithmetic_for_32_cube() {
        // A header-declared [32,32,32] u8-label file carries exactly 32768
        // label bytes after the f32 block.
        let n = 32 * 32 * 32;
        let s = VolumeSample {
            intensity: vec![0.0; n],
            labels: LabelVolume::new([32, 32, 32], vec![0; n], [1.0; 3]).unwrap(),
            patient_id: 1,
            timepoint: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vol");
        save_volume(&s, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let payload = bytes.len() - 8 - header_len;
        assert_eq!(payload, n * 4 + n);
    }

    #[test]
    fn manifest_round_trip_and_split_query() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = Manifest {
            entries: vec![
                ManifestEntry {
                    path: "a.vol".into(),
                    patient_id: 1,
                    timepoint: 1,
                    split: Split::Train,
                },
                ManifestEntry {
                    path: "b.vol".into(),
                    patient_id: 2,
                    timepoint: 1,
                    split: Split::Test,
                },
            ],
        };
        m.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.entries.len(), 2);
        assert_eq!(back.patient_ids(Split::Train), vec![1]);
        assert_eq!(back.split_entries(Split::Test).count(), 1);
    }
}
