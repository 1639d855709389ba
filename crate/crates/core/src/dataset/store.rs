//! On-disk dataset layout.
//!
//! A dataset is a directory holding `manifest.json` and `windows.bin`. The
//! binary file stores every single-user window back to back as 32-bit
//! little-endian floats in (window, frame, joint, coord) order. The manifest
//! lists parameters, subjects, per-window metadata and the sample index
//! triples `[left, right, class]`. Its checksum is the SHA-256 of the tensor
//! bytes followed by the manifest JSON serialized with an empty checksum.

use super::{DatasetError, DatasetManifest, PreprocessParams, Provenance, SampleRef, SourceSpan, Window, POSE_VALUES};
use crate::skeleton::{decode_pair_label, encode_pair_label, ActivityState, SubjectId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_FILE: &str = "windows.bin";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    format_version: u32,
    provenance: Provenance,
    params: PreprocessParams,
    subjects: Vec<SubjectId>,
    tensor_file: String,
    windows: Vec<WindowEntry>,
    samples: Vec<[usize; 3]>,
    checksum: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowEntry {
    subject: SubjectId,
    state: ActivityState,
    recording: String,
    start: usize,
    end: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn checksum(tensor: &[u8], body: &ManifestFile) -> Result<String, DatasetError> {
    let json = serde_json::to_vec(body).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    let mut h = Sha256::new();
    h.update(tensor);
    h.update(&json);
    Ok(hex::encode(h.finalize()))
}

fn encode(manifest: &DatasetManifest) -> Result<(Vec<u8>, Vec<u8>), DatasetError> {
    manifest.validate()?;
    let mut tensor = Vec::with_capacity(manifest.windows.len() * manifest.params.window.length * POSE_VALUES * 4);
    for w in &manifest.windows {
        for &v in &w.data {
            tensor.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = ManifestFile {
        format_version: FORMAT_VERSION,
        provenance: manifest.provenance,
        params: manifest.params.clone(),
        subjects: manifest.subjects.iter().cloned().collect(),
        tensor_file: TENSOR_FILE.to_string(),
        windows: manifest
            .windows
            .iter()
            .map(|w| WindowEntry {
                subject: w.subject.clone(),
                state: w.state,
                recording: w.span.recording.clone(),
                start: w.span.start,
                end: w.span.end,
            })
            .collect(),
        samples: manifest
            .samples
            .iter()
            .map(|s| [s.left, s.right, s.label.class_index()])
            .collect(),
        checksum: String::new(),
    };
    file.checksum = checksum(&tensor, &file)?;
    let json = serde_json::to_vec_pretty(&file).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    Ok((json, tensor))
}

/// Writes the dataset and returns its checksum.
pub fn save_dataset(manifest: &DatasetManifest, dir: &Path) -> Result<String, DatasetError> {
    let (json, tensor) = encode(manifest)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let tpath = dir.join(TENSOR_FILE);
    fs::write(&tpath, &tensor).map_err(|e| io_err(&tpath, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, &json).map_err(|e| io_err(&mpath, e))?;
    let file: ManifestFile = serde_json::from_slice(&json).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    Ok(file.checksum)
}

/// Loads a dataset directory, returning it with its checksum.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, String), DatasetError> {
    let mpath = dir.join(MANIFEST_FILE);
    let json = fs::read(&mpath).map_err(|e| io_err(&mpath, e))?;
    let file: ManifestFile = serde_json::from_slice(&json).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    if file.tensor_file.is_empty() || file.tensor_file.contains(['/', '\\']) || file.tensor_file.starts_with('.') {
        return Err(DatasetError::Malformed(format!("bad tensor file name {:?}", file.tensor_file)));
    }
    let tpath = dir.join(&file.tensor_file);
    let tensor = fs::read(&tpath).map_err(|e| io_err(&tpath, e))?;
    decode(file, &tensor)
}

/// Decodes a dataset from the manifest JSON and the tensor bytes.
pub fn load_dataset_from_parts(manifest_json: &[u8], tensor: &[u8]) -> Result<(DatasetManifest, String), DatasetError> {
    let file: ManifestFile =
        serde_json::from_slice(manifest_json).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    decode(file, tensor)
}

fn decode(mut file: ManifestFile, tensor: &[u8]) -> Result<(DatasetManifest, String), DatasetError> {
    if file.format_version != FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch {
            found: file.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let expected = std::mem::take(&mut file.checksum);
    let actual = checksum(tensor, &file)?;
    if expected != actual {
        return Err(DatasetError::ChecksumMismatch { expected, actual });
    }

    let per_window = file
        .params
        .window
        .length
        .checked_mul(POSE_VALUES)
        .ok_or_else(|| DatasetError::Malformed("window length overflows".into()))?;
    let needed = per_window
        .checked_mul(file.windows.len())
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| DatasetError::Malformed("tensor size overflows".into()))?;
    if tensor.len() != needed {
        return Err(DatasetError::Malformed(format!(
            "tensor file holds {} bytes, manifest needs {needed}",
            tensor.len()
        )));
    }

    let mut values = tensor
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let windows: Vec<Window> = file
        .windows
        .into_iter()
        .map(|e| Window {
            data: values.by_ref().take(per_window).collect(),
            subject: e.subject,
            state: e.state,
            span: SourceSpan {
                recording: e.recording,
                start: e.start,
                end: e.end,
            },
        })
        .collect();

    let mut samples = Vec::with_capacity(file.samples.len());
    for [left, right, class] in file.samples {
        let (l, r) = decode_pair_label(class).map_err(|e| DatasetError::Malformed(e.to_string()))?;
        samples.push(SampleRef {
            left,
            right,
            label: encode_pair_label(l, r),
        });
    }

    let subject_count = file.subjects.len();
    let manifest = DatasetManifest {
        params: file.params,
        provenance: file.provenance,
        subjects: file.subjects.into_iter().collect(),
        windows,
        samples,
    };
    if manifest.subjects.len() != subject_count {
        return Err(DatasetError::Malformed("duplicate subject ids".into()));
    }
    manifest.validate()?;
    Ok((manifest, expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{pair_windows, slide_windows, PoseSequence, WindowParams};
    use crate::skeleton::NormalizedPose;

    fn grouped() -> DatasetManifest {
        let params = PreprocessParams {
            window: WindowParams::new(3, 1).unwrap(),
            ..Default::default()
        };
        let mut windows = Vec::new();
        for (s, n, state) in [("A", 4, ActivityState::Working), ("B", 5, ActivityState::Requesting)] {
            let poses = (0..n)
                .map(|t| NormalizedPose::from_rows([[0.1 * t as f64, -0.3, 1.0 / 3.0]; 10]))
                .collect();
            let seq = PoseSequence {
                recording: format!("{s}.ndjson"),
                subject: SubjectId::new(s),
                state,
                poses,
            };
            windows.extend(slide_windows(&seq, &params.window));
        }
        let samples = pair_windows(&windows);
        DatasetManifest::new(params, Provenance::Grouped, windows, samples)
    }

    #[test]
    fn round_trip_is_exact() {
        let m = grouped();
        assert_eq!(m.len(), 12);
        let dir = tempfile::tempdir().unwrap();
        let sum = save_dataset(&m, dir.path()).unwrap();
        let (back, sum2) = load_dataset(dir.path()).unwrap();
        assert_eq!(sum, sum2);
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_tensor_fails_checksum() {
        let m = grouped();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&m, dir.path()).unwrap();
        let t = dir.path().join(TENSOR_FILE);
        let bytes = fs::read(&t).unwrap();
        fs::write(&t, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DatasetError::ChecksumMismatch { .. })));
    }

    #[test]
    fn version_mismatch_detected() {
        let m = grouped();
        let (json, tensor) = encode(&m).unwrap();
        let text = String::from_utf8(json).unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(
            load_dataset_from_parts(text.as_bytes(), &tensor),
            Err(DatasetError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn loaded_datasets_with_other_window_length_do_not_merge() {
        let m = grouped();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&m, dir.path()).unwrap();
        let (mut a, _) = load_dataset(dir.path()).unwrap();
        let mut other = grouped();
        other.params.window = WindowParams::new(3, 3).unwrap();
        assert!(matches!(a.merge(other), Err(DatasetError::ParameterMismatch(_))));
    }
}
