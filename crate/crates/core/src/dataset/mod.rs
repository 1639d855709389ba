//! Model-ready datasets built from preprocessed recordings.
//!
//! Single-user pose sequences are cut into overlapping windows. Grouped
//! samples pair every window of one subject with every window of every other
//! subject; pair recordings are windowed directly and labeled by their last
//! frame. Samples are kept as index triples into the window list and only
//! materialized into `T×20×3` tensors on demand.

mod loso;
mod store;

pub use loso::{build_loso_folds, Fold};
pub use store::{load_dataset, load_dataset_from_parts, save_dataset, FORMAT_VERSION, MANIFEST_FILE, TENSOR_FILE};

use crate::skeleton::{
    encode_pair_label, ActivityState, JointMap, MinMaxParams, NormalizedPose, PairLabel, SubjectId, COORDS,
    POSE_JOINTS,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const WINDOW_LENGTH: usize = 130;
pub const WINDOW_STRIDE: usize = 26;
/// Two seconds at 30 frames per second.
pub const TRANSITION_MARGIN_FRAMES: usize = 60;
/// Values per single-user frame.
pub const POSE_VALUES: usize = POSE_JOINTS * COORDS;
/// Joints per grouped frame (left user then right user).
pub const PAIR_JOINTS: usize = 2 * POSE_JOINTS;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid window parameters: length {length}, stride {stride}")]
    InvalidWindowParams { length: usize, stride: usize },
    #[error("need at least two subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("preprocessing parameters differ between datasets: {0}")]
    ParameterMismatch(String),
    #[error("unsupported dataset format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch: manifest says {expected}, data hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowParams {
    pub length: usize,
    pub stride: usize,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self {
            length: WINDOW_LENGTH,
            stride: WINDOW_STRIDE,
        }
    }
}

impl WindowParams {
    pub fn new(length: usize, stride: usize) -> Result<Self, DatasetError> {
        if length == 0 || stride == 0 || stride > length {
            return Err(DatasetError::InvalidWindowParams { length, stride });
        }
        Ok(Self { length, stride })
    }

    /// Start frames of every full window over a sequence of `total` frames.
    pub fn starts(&self, total: usize) -> impl Iterator<Item = usize> {
        let count = self.count(total);
        let stride = self.stride;
        (0..count).map(move |k| k * stride)
    }

    pub fn count(&self, total: usize) -> usize {
        if total < self.length {
            0
        } else {
            (total - self.length) / self.stride + 1
        }
    }
}

/// Frame range of a window inside its source recording. `end` is the index
/// of the last frame (inclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub recording: String,
    pub start: usize,
    pub end: usize,
}

/// One user's pose stream after pruning and normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub recording: String,
    pub subject: SubjectId,
    pub state: ActivityState,
    pub poses: Vec<NormalizedPose>,
}

/// A fixed-length single-user window, stored flat in (frame, joint, coord)
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub data: Vec<f64>,
    pub subject: SubjectId,
    pub state: ActivityState,
    pub span: SourceSpan,
}

impl Window {
    pub fn frames(&self) -> usize {
        self.data.len() / POSE_VALUES
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * POSE_VALUES..(t + 1) * POSE_VALUES]
    }
}

/// Anything cut from a recording at a known frame range.
pub trait Spanned {
    fn span(&self) -> &SourceSpan;
}

impl Spanned for Window {
    fn span(&self) -> &SourceSpan {
        &self.span
    }
}

// Window values are rounded to f32 so the on-disk format stores them exactly.
fn flatten(poses: &[NormalizedPose]) -> Vec<f64> {
    poses.iter().flat_map(|p| p.flat()).map(|v| v as f32 as f64).collect()
}

pub fn slide_windows(seq: &PoseSequence, params: &WindowParams) -> Vec<Window> {
    let total = seq.poses.len();
    if total < params.length {
        log::warn!(
            "recording {} has {total} frames, fewer than the window length {}; no windows cut",
            seq.recording,
            params.length
        );
    }
    params
        .starts(total)
        .map(|start| Window {
            data: flatten(&seq.poses[start..start + params.length]),
            subject: seq.subject.clone(),
            state: seq.state,
            span: SourceSpan {
                recording: seq.recording.clone(),
                start,
                end: start + params.length - 1,
            },
        })
        .collect()
}

/// Reference to a two-user sample: indices of the left and right window
/// plus the ordered pair label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub left: usize,
    pub right: usize,
    pub label: PairLabel,
}

/// Every ordered cross-subject pairing of windows.
///
/// Output is ordered by (left subject, right subject) and then by position of
/// each window in `windows`. Same-subject pairs are never emitted.
pub fn pair_windows(windows: &[Window]) -> Vec<SampleRef> {
    let mut by_subject: BTreeMap<&SubjectId, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_subject.entry(&w.subject).or_default().push(i);
    }
    if by_subject.len() < 2 {
        log::warn!(
            "grouped pairing needs at least two subjects, found {}; no samples",
            by_subject.len()
        );
        return Vec::new();
    }
    let mut out = Vec::new();
    for (u, left_ids) in &by_subject {
        for (v, right_ids) in &by_subject {
            if u == v {
                continue;
            }
            for &l in left_ids {
                for &r in right_ids {
                    out.push(SampleRef {
                        left: l,
                        right: r,
                        label: encode_pair_label(windows[l].state, windows[r].state),
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPoseFrame {
    pub left: NormalizedPose,
    pub right: NormalizedPose,
    pub left_state: ActivityState,
    pub right_state: ActivityState,
}

/// Two people recorded together, after per-person normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecording {
    pub recording: String,
    pub subjects: (SubjectId, SubjectId),
    pub frames: Vec<PairPoseFrame>,
}

impl PairRecording {
    /// Frames whose label pair differs from the previous frame.
    pub fn label_change_frames(&self) -> Vec<usize> {
        self.frames
            .windows(2)
            .enumerate()
            .filter(|(_, w)| (w[0].left_state, w[0].right_state) != (w[1].left_state, w[1].right_state))
            .map(|(k, _)| k + 1)
            .collect()
    }
}

/// A window cut from a pair recording, labeled by its last frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWindow {
    pub left: Window,
    pub right: Window,
    pub label: PairLabel,
}

impl Spanned for PairWindow {
    fn span(&self) -> &SourceSpan {
        &self.left.span
    }
}

pub fn window_pair_recording(rec: &PairRecording, params: &WindowParams) -> Vec<PairWindow> {
    if rec.frames.len() < params.length {
        log::warn!(
            "pair recording {} has {} frames, fewer than the window length {}",
            rec.recording,
            rec.frames.len(),
            params.length
        );
    }
    params
        .starts(rec.frames.len())
        .map(|start| {
            let end = start + params.length - 1;
            let frames = &rec.frames[start..=end];
            let last = &frames[frames.len() - 1];
            let span = SourceSpan {
                recording: rec.recording.clone(),
                start,
                end,
            };
            let left: Vec<NormalizedPose> = frames.iter().map(|f| f.left).collect();
            let right: Vec<NormalizedPose> = frames.iter().map(|f| f.right).collect();
            PairWindow {
                left: Window {
                    data: flatten(&left),
                    subject: rec.subjects.0.clone(),
                    state: last.left_state,
                    span: span.clone(),
                },
                right: Window {
                    data: flatten(&right),
                    subject: rec.subjects.1.clone(),
                    state: last.right_state,
                    span,
                },
                label: encode_pair_label(last.left_state, last.right_state),
            }
        })
        .collect()
}

/// Drops every window whose last frame lies within `margin` frames of a
/// label change.
pub fn discard_transitions<T: Spanned>(windows: Vec<T>, change_frames: &[usize], margin: usize) -> Vec<T> {
    windows
        .into_iter()
        .filter(|w| {
            let end = w.span().end;
            !change_frames
                .iter()
                .any(|&k| end + margin >= k && end <= k.saturating_add(margin))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Single-user windows only, no samples.
    Single,
    /// Cross-subject pairings of single-user windows.
    Grouped,
    /// Windows of genuine two-person recordings.
    Pair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub window: WindowParams,
    pub minmax: MinMaxParams,
    pub joint_map: JointMap,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            window: WindowParams::default(),
            minmax: MinMaxParams::default(),
            joint_map: JointMap::default(),
        }
    }
}

/// A two-user sample materialized into a `T×20×3` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSample {
    pub tensor: Vec<f64>,
    pub frames: usize,
    pub label: PairLabel,
    pub subjects: (SubjectId, SubjectId),
}

impl GroupedSample {
    pub fn shape(&self) -> [usize; 3] {
        [self.frames, PAIR_JOINTS, COORDS]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub params: PreprocessParams,
    pub provenance: Provenance,
    pub subjects: BTreeSet<SubjectId>,
    pub windows: Vec<Window>,
    pub samples: Vec<SampleRef>,
}

impl DatasetManifest {
    pub fn new(params: PreprocessParams, provenance: Provenance, windows: Vec<Window>, samples: Vec<SampleRef>) -> Self {
        let subjects = windows.iter().map(|w| w.subject.clone()).collect();
        Self {
            params,
            provenance,
            subjects,
            windows,
            samples,
        }
    }

    /// Grouped dataset over the windows of a single-user dataset.
    pub fn grouped_from(single: &DatasetManifest) -> Self {
        let samples = pair_windows(&single.windows);
        Self::new(single.params.clone(), Provenance::Grouped, single.windows.clone(), samples)
    }

    /// Pair dataset from windowed pair recordings.
    pub fn from_pair_windows(params: PreprocessParams, pair_windows: Vec<PairWindow>) -> Self {
        let mut windows = Vec::with_capacity(2 * pair_windows.len());
        let mut samples = Vec::with_capacity(pair_windows.len());
        for pw in pair_windows {
            let left = windows.len();
            windows.push(pw.left);
            windows.push(pw.right);
            samples.push(SampleRef {
                left,
                right: left + 1,
                label: pw.label,
            });
        }
        Self::new(params, Provenance::Pair, windows, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_subjects(&self, i: usize) -> (&SubjectId, &SubjectId) {
        let s = &self.samples[i];
        (&self.windows[s.left].subject, &self.windows[s.right].subject)
    }

    pub fn label(&self, i: usize) -> PairLabel {
        self.samples[i].label
    }

    /// Builds the scaled `T×20×3` tensor of sample `i`. Also returns how many
    /// coordinates fell outside the min-max source range.
    pub fn materialize(&self, i: usize) -> (GroupedSample, usize) {
        let s = &self.samples[i];
        let left = &self.windows[s.left];
        let right = &self.windows[s.right];
        let frames = left.frames();
        let mut tensor = Vec::with_capacity(frames * PAIR_JOINTS * COORDS);
        for t in 0..frames {
            tensor.extend_from_slice(left.frame(t));
            tensor.extend_from_slice(right.frame(t));
        }
        let out_of_range = self.params.minmax.scale_slice(&mut tensor);
        (
            GroupedSample {
                tensor,
                frames,
                label: s.label,
                subjects: (left.subject.clone(), right.subject.clone()),
            },
            out_of_range,
        )
    }

    /// Class counts over all samples, indexed by class.
    pub fn class_histogram(&self) -> [usize; crate::skeleton::NUM_CLASSES] {
        let mut h = [0; crate::skeleton::NUM_CLASSES];
        for s in &self.samples {
            h[s.label.class_index()] += 1;
        }
        h
    }

    pub fn check_compatible(&self, other: &DatasetManifest) -> Result<(), DatasetError> {
        if self.params != other.params {
            return Err(DatasetError::ParameterMismatch(format!(
                "{:?} vs {:?}",
                self.params, other.params
            )));
        }
        Ok(())
    }

    /// Appends another dataset's windows and samples. Both must share
    /// preprocessing parameters and provenance.
    pub fn merge(&mut self, other: DatasetManifest) -> Result<(), DatasetError> {
        self.check_compatible(&other)?;
        if self.provenance != other.provenance {
            return Err(DatasetError::ParameterMismatch(format!(
                "provenance {:?} vs {:?}",
                self.provenance, other.provenance
            )));
        }
        let offset = self.windows.len();
        self.subjects.extend(other.subjects);
        self.windows.extend(other.windows);
        self.samples.extend(other.samples.into_iter().map(|s| SampleRef {
            left: s.left + offset,
            right: s.right + offset,
            label: s.label,
        }));
        Ok(())
    }

    /// Checks the structural invariants a loaded or assembled dataset must
    /// satisfy.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let len = self.params.window.length;
        WindowParams::new(len, self.params.window.stride)?;
        for (i, w) in self.windows.iter().enumerate() {
            if w.data.len() != len * POSE_VALUES {
                return Err(DatasetError::Malformed(format!(
                    "window {i} has {} values, expected {}",
                    w.data.len(),
                    len * POSE_VALUES
                )));
            }
            if w.data.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::Malformed(format!("window {i} has non-finite values")));
            }
            if !self.subjects.contains(&w.subject) {
                return Err(DatasetError::Malformed(format!(
                    "window {i} subject {} missing from subject list",
                    w.subject
                )));
            }
        }
        if self.provenance == Provenance::Single && !self.samples.is_empty() {
            return Err(DatasetError::Malformed("single-user dataset lists samples".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            let (Some(l), Some(r)) = (self.windows.get(s.left), self.windows.get(s.right)) else {
                return Err(DatasetError::Malformed(format!("sample {i} references a missing window")));
            };
            if l.subject == r.subject {
                return Err(DatasetError::Malformed(format!("sample {i} pairs subject {} with itself", l.subject)));
            }
            if s.label != encode_pair_label(l.state, r.state) {
                return Err(DatasetError::Malformed(format!(
                    "sample {i} label {} disagrees with window states",
                    s.label.name()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::ActivityState::*;

    fn pose(v: f64) -> NormalizedPose {
        NormalizedPose::from_rows([[v; 3]; POSE_JOINTS])
    }

    fn seq(subject: &str, state: ActivityState, frames: usize) -> PoseSequence {
        PoseSequence {
            recording: format!("{subject}-{state}"),
            subject: SubjectId::new(subject),
            state,
            poses: (0..frames).map(|t| pose(t as f64 / 1000.0)).collect(),
        }
    }

    #[test]
    fn window_counts() {
        let p = WindowParams::default();
        assert_eq!(slide_windows(&seq("a", Working, 130), &p).len(), 1);
        assert_eq!(slide_windows(&seq("a", Working, 129), &p).len(), 0);
        let w = slide_windows(&seq("a", Working, 182), &p);
        let starts: Vec<usize> = w.iter().map(|w| w.span.start).collect();
        assert_eq!(starts, vec![0, 26, 52]);
        assert_eq!(w[2].span.end, 52 + 129);
        assert_eq!(w[1].frame(0)[0], (26.0f64 / 1000.0) as f32 as f64);
    }

    #[test]
    fn invalid_window_params() {
        assert!(WindowParams::new(0, 1).is_err());
        assert!(WindowParams::new(10, 0).is_err());
        assert!(WindowParams::new(10, 11).is_err());
        assert!(WindowParams::new(10, 10).is_ok());
    }

    fn windows_for(subject: &str, states: &[ActivityState]) -> Vec<Window> {
        let p = WindowParams::new(4, 4).unwrap();
        states
            .iter()
            .flat_map(|&s| slide_windows(&seq(subject, s, 4), &p))
            .collect()
    }

    #[test]
    fn pairing_cardinality_and_labels() {
        let mut ws = windows_for("A", &[Working, Working]);
        ws.extend(windows_for("B", &[Preparing, Preparing, Preparing]));
        let samples = pair_windows(&ws);
        assert_eq!(samples.len(), 12);
        for s in &samples {
            assert_ne!(ws[s.left].subject, ws[s.right].subject);
        }
        let ab = samples.iter().find(|s| ws[s.left].subject.as_str() == "A").unwrap();
        assert_eq!(ab.label, encode_pair_label(Working, Preparing));
        let ba = samples.iter().find(|s| ws[s.left].subject.as_str() == "B").unwrap();
        assert_eq!(ba.label, encode_pair_label(Preparing, Working));
    }

    #[test]
    fn single_subject_pairs_nothing() {
        assert!(pair_windows(&windows_for("A", &[Working, Requesting])).is_empty());
    }

    fn pair_rec(labels: &[(ActivityState, ActivityState)]) -> PairRecording {
        PairRecording {
            recording: "pair".into(),
            subjects: (SubjectId::new("A"), SubjectId::new("B")),
            frames: labels
                .iter()
                .enumerate()
                .map(|(t, &(l, r))| PairPoseFrame {
                    left: pose(t as f64),
                    right: pose(-(t as f64)),
                    left_state: l,
                    right_state: r,
                })
                .collect(),
        }
    }

    #[test]
    fn pair_windows_take_last_frame_label() {
        let mut labels = vec![(Working, Working); 129];
        labels.push((Working, Requesting));
        let rec = pair_rec(&labels);
        let w = window_pair_recording(&rec, &WindowParams::default());
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].label, encode_pair_label(Working, Requesting));
        assert_eq!(rec.label_change_frames(), vec![129]);

        let constant = pair_rec(&vec![(Preparing, Working); 200]);
        let w = window_pair_recording(&constant, &WindowParams::default());
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|w| w.label == encode_pair_label(Preparing, Working)));
        assert_eq!(w[1].right.frame(0)[0], -26.0);
    }

    fn spanned(end: usize) -> Window {
        Window {
            data: vec![],
            subject: SubjectId::new("a"),
            state: Working,
            span: SourceSpan {
                recording: "r".into(),
                start: end.saturating_sub(129),
                end,
            },
        }
    }

    #[test]
    fn transition_discard_examples() {
        let kept = discard_transitions(vec![spanned(190), spanned(139), spanned(261)], &[200], 60);
        let ends: Vec<usize> = kept.iter().map(|w| w.span.end).collect();
        assert_eq!(ends, vec![139, 261]);
        assert_eq!(discard_transitions(vec![spanned(190)], &[], 60).len(), 1);
        assert!(discard_transitions(vec![spanned(140), spanned(260)], &[200], 60).is_empty());
    }

    #[test]
    fn materialized_tensor_layout() {
        let mut ws = windows_for("A", &[Working]);
        ws.extend(windows_for("B", &[Requesting]));
        let m = DatasetManifest::new(
            PreprocessParams {
                window: WindowParams::new(4, 4).unwrap(),
                ..Default::default()
            },
            Provenance::Grouped,
            ws.clone(),
            pair_windows(&ws),
        );
        m.validate().unwrap();
        let (s, oor) = m.materialize(0);
        assert_eq!(oor, 0);
        assert_eq!(s.shape(), [4, 20, 3]);
        let mm = MinMaxParams::default();
        // frame 1: left joints then right joints
        assert_eq!(s.tensor[60], mm.scale(ws[0].frame(1)[0]));
        assert_eq!(s.tensor[60 + 30], mm.scale(ws[1].frame(1)[0]));
        assert!(s.tensor.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn merge_rejects_parameter_mismatch() {
        let ws = windows_for("A", &[Working]);
        let mut a = DatasetManifest::new(PreprocessParams::default(), Provenance::Single, ws.clone(), vec![]);
        let b = DatasetManifest::new(
            PreprocessParams {
                window: WindowParams::new(100, 20).unwrap(),
                ..Default::default()
            },
            Provenance::Single,
            ws,
            vec![],
        );
        assert!(matches!(a.merge(b), Err(DatasetError::ParameterMismatch(_))));
    }
}
