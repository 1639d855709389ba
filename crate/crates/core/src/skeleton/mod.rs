//! Skeleton domain types and per-frame transforms.
//!
//! A raw body-tracking frame carries 32 joints. [`prune_frame`] keeps the 11
//! joints selected by a [`JointMap`], [`normalize_pose`] expresses them
//! relative to the spine navel in units of the navel-to-neck distance and
//! drops the (then identically zero) navel row, and [`MinMaxParams`] maps the
//! result into the unit interval expected by the models.

mod labels;
pub mod recording;

pub use labels::{decode_pair_label, encode_pair_label, one_hot, ActivityState, PairLabel, NUM_CLASSES};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Joints emitted by the body tracker per frame.
pub const RAW_JOINTS: usize = 32;
/// Joints retained after pruning, spine navel included.
pub const PRUNED_JOINTS: usize = 11;
/// Joints per normalized pose (spine navel dropped).
pub const POSE_JOINTS: usize = 10;
/// Coordinates per joint.
pub const COORDS: usize = 3;

/// Frames whose navel-to-neck distance is at or below this are rejected.
pub const EPSILON_DEGENERATE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("expected {expected} joints, got {got}")]
    JointCount { expected: usize, got: usize },
    #[error("joint map index {0} out of range 0..{RAW_JOINTS}")]
    JointIndexOutOfRange(usize),
    #[error("joint map index {0} appears more than once")]
    DuplicateJointIndex(usize),
    #[error("joint map must list {PRUNED_JOINTS} indices, got {0}")]
    JointMapLength(usize),
    #[error("non-finite coordinate in joint {0}")]
    NonFinite(usize),
    #[error("degenerate frame: neck-to-navel distance {0:e} is below threshold")]
    DegenerateFrame(f64),
    #[error("invalid min-max parameters: {0}")]
    InvalidMinMax(String),
    #[error("pair class index {0} out of range 0..9")]
    ClassIndexOutOfRange(usize),
    #[error("unknown activity state {0:?}")]
    UnknownState(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectId(pub String);

impl SubjectId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Joint3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Joint3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn sub(&self, other: &Joint3D) -> Joint3D {
        Joint3D::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Joint3D {
    fn from(v: [f64; 3]) -> Self {
        Joint3D::new(v[0], v[1], v[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub joints: Vec<Joint3D>,
    pub timestamp_ns: u64,
    pub subject: SubjectId,
}

/// Body-tracker joint indices used by the default [`JointMap`].
pub mod tracker_joint {
    pub const PELVIS: usize = 0;
    pub const SPINE_NAVEL: usize = 1;
    pub const SPINE_CHEST: usize = 2;
    pub const NECK: usize = 3;
    pub const SHOULDER_LEFT: usize = 5;
    pub const ELBOW_LEFT: usize = 6;
    pub const WRIST_LEFT: usize = 7;
    pub const SHOULDER_RIGHT: usize = 12;
    pub const ELBOW_RIGHT: usize = 13;
    pub const WRIST_RIGHT: usize = 14;
    pub const HEAD: usize = 26;
}

/// Row indices of a [`NormalizedPose`] under the default joint map.
pub mod pose_joint {
    pub const NECK: usize = 0;
    pub const PELVIS: usize = 1;
    pub const SPINE_CHEST: usize = 2;
    pub const HEAD: usize = 3;
    pub const SHOULDER_LEFT: usize = 4;
    pub const ELBOW_LEFT: usize = 5;
    pub const WRIST_LEFT: usize = 6;
    pub const SHOULDER_RIGHT: usize = 7;
    pub const ELBOW_RIGHT: usize = 8;
    pub const WRIST_RIGHT: usize = 9;
}

/// Source indices of the 11 retained joints.
///
/// Position 0 must name the spine navel and position 1 the neck; the other
/// nine are kept in the listed order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct JointMap([usize; PRUNED_JOINTS]);

impl JointMap {
    pub fn new(indices: &[usize]) -> Result<Self, SkeletonError> {
        if indices.len() != PRUNED_JOINTS {
            return Err(SkeletonError::JointMapLength(indices.len()));
        }
        let mut seen = [false; RAW_JOINTS];
        for &i in indices {
            if i >= RAW_JOINTS {
                return Err(SkeletonError::JointIndexOutOfRange(i));
            }
            if seen[i] {
                return Err(SkeletonError::DuplicateJointIndex(i));
            }
            seen[i] = true;
        }
        let mut out = [0; PRUNED_JOINTS];
        out.copy_from_slice(indices);
        Ok(Self(out))
    }

    pub fn indices(&self) -> &[usize; PRUNED_JOINTS] {
        &self.0
    }
}

impl Default for JointMap {
    /// Spine navel, neck, pelvis, spine chest, head, then shoulder, elbow and
    /// wrist for the left and right arm.
    fn default() -> Self {
        use tracker_joint::*;
        Self([
            SPINE_NAVEL,
            NECK,
            PELVIS,
            SPINE_CHEST,
            HEAD,
            SHOULDER_LEFT,
            ELBOW_LEFT,
            WRIST_LEFT,
            SHOULDER_RIGHT,
            ELBOW_RIGHT,
            WRIST_RIGHT,
        ])
    }
}

impl TryFrom<Vec<usize>> for JointMap {
    type Error = SkeletonError;

    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        JointMap::new(&v)
    }
}

impl From<JointMap> for Vec<usize> {
    fn from(m: JointMap) -> Self {
        m.0.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrunedFrame {
    /// Index 0 is the spine navel, index 1 the neck.
    pub joints: [Joint3D; PRUNED_JOINTS],
}

/// A 10×3 pose relative to the spine navel, scaled by the navel-to-neck
/// distance. Row 0 is the neck and always has unit norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPose {
    rows: [[f64; COORDS]; POSE_JOINTS],
}

impl NormalizedPose {
    pub fn rows(&self) -> &[[f64; COORDS]; POSE_JOINTS] {
        &self.rows
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().flat_map(|r| r.iter().copied())
    }

    /// Rebuilds a pose from stored rows (e.g. a loaded dataset). No
    /// normalization is applied.
    pub fn from_rows(rows: [[f64; COORDS]; POSE_JOINTS]) -> Self {
        Self { rows }
    }
}

pub fn prune_frame(raw: &RawFrame, joint_map: &JointMap) -> Result<PrunedFrame, SkeletonError> {
    if raw.joints.len() != RAW_JOINTS {
        return Err(SkeletonError::JointCount {
            expected: RAW_JOINTS,
            got: raw.joints.len(),
        });
    }
    let mut joints = [Joint3D::default(); PRUNED_JOINTS];
    for (slot, &src) in joints.iter_mut().zip(joint_map.indices()) {
        let j = raw.joints[src];
        if !j.is_finite() {
            return Err(SkeletonError::NonFinite(src));
        }
        *slot = j;
    }
    Ok(PrunedFrame { joints })
}

pub fn normalize_pose(frame: &PrunedFrame) -> Result<NormalizedPose, SkeletonError> {
    let navel = frame.joints[0];
    let scale = frame.joints[1].sub(&navel).norm();
    if !(scale > EPSILON_DEGENERATE) {
        return Err(SkeletonError::DegenerateFrame(scale));
    }
    let mut rows = [[0.0; COORDS]; POSE_JOINTS];
    for (row, joint) in rows.iter_mut().zip(&frame.joints[1..]) {
        let d = joint.sub(&navel);
        *row = [d.x / scale, d.y / scale, d.z / scale];
    }
    Ok(NormalizedPose { rows })
}

/// Affine rescaling of coordinates from a fixed source range to a target
/// range. Values outside the source range are mapped linearly, not clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MinMaxRepr", into = "MinMaxRepr")]
pub struct MinMaxParams {
    old_min: f64,
    old_max: f64,
    new_min: f64,
    new_max: f64,
}

#[derive(Serialize, Deserialize)]
struct MinMaxRepr {
    old_min: f64,
    old_max: f64,
    new_min: f64,
    new_max: f64,
}

impl TryFrom<MinMaxRepr> for MinMaxParams {
    type Error = SkeletonError;

    fn try_from(r: MinMaxRepr) -> Result<Self, Self::Error> {
        MinMaxParams::new(r.old_min, r.old_max, r.new_min, r.new_max)
    }
}

impl From<MinMaxParams> for MinMaxRepr {
    fn from(p: MinMaxParams) -> Self {
        MinMaxRepr {
            old_min: p.old_min,
            old_max: p.old_max,
            new_min: p.new_min,
            new_max: p.new_max,
        }
    }
}

impl Default for MinMaxParams {
    fn default() -> Self {
        Self {
            old_min: -2.5,
            old_max: 1.75,
            new_min: 0.0,
            new_max: 1.0,
        }
    }
}

impl MinMaxParams {
    pub fn new(old_min: f64, old_max: f64, new_min: f64, new_max: f64) -> Result<Self, SkeletonError> {
        let all_finite = [old_min, old_max, new_min, new_max].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(SkeletonError::InvalidMinMax("non-finite bound".into()));
        }
        if !(old_min < old_max) {
            return Err(SkeletonError::InvalidMinMax(format!(
                "old_min {old_min} must be below old_max {old_max}"
            )));
        }
        if !(new_min < new_max) {
            return Err(SkeletonError::InvalidMinMax(format!(
                "new_min {new_min} must be below new_max {new_max}"
            )));
        }
        Ok(Self {
            old_min,
            old_max,
            new_min,
            new_max,
        })
    }

    pub fn old_range(&self) -> (f64, f64) {
        (self.old_min, self.old_max)
    }

    pub fn new_range(&self) -> (f64, f64) {
        (self.new_min, self.new_max)
    }

    pub fn scale(&self, x: f64) -> f64 {
        (x - self.old_min) / (self.old_max - self.old_min) * (self.new_max - self.new_min) + self.new_min
    }

    pub fn in_range(&self, x: f64) -> bool {
        (self.old_min..=self.old_max).contains(&x)
    }

    /// Scales in place and returns how many inputs fell outside the source
    /// range.
    pub fn scale_slice(&self, xs: &mut [f64]) -> usize {
        let mut out_of_range = 0;
        for x in xs.iter_mut() {
            if !self.in_range(*x) {
                out_of_range += 1;
            }
            *x = self.scale(*x);
        }
        out_of_range
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pruned(navel: [f64; 3], neck: [f64; 3], rest: [f64; 3]) -> PrunedFrame {
        let mut joints = [Joint3D::from(rest); PRUNED_JOINTS];
        joints[0] = navel.into();
        joints[1] = neck.into();
        PrunedFrame { joints }
    }

    fn raw_frame() -> RawFrame {
        RawFrame {
            joints: (0..RAW_JOINTS)
                .map(|i| Joint3D::new(i as f64, 2.0 * i as f64, -(i as f64)))
                .collect(),
            timestamp_ns: 0,
            subject: SubjectId::new("s"),
        }
    }

    #[test]
    fn default_map_puts_navel_first() {
        let p = prune_frame(&raw_frame(), &JointMap::default()).unwrap();
        assert_eq!(p.joints[0], raw_frame().joints[tracker_joint::SPINE_NAVEL]);
        assert_eq!(p.joints[1], raw_frame().joints[tracker_joint::NECK]);
    }

    #[test]
    fn pruning_selects_in_map_order() {
        let map = JointMap::default();
        let raw = raw_frame();
        let p = prune_frame(&raw, &map).unwrap();
        for (k, &src) in map.indices().iter().enumerate() {
            assert_eq!(p.joints[k], raw.joints[src]);
        }
    }

    #[test]
    fn joint_map_rejects_bad_indices() {
        let mut idx: Vec<usize> = (0..11).collect();
        idx[10] = 32;
        assert_eq!(JointMap::new(&idx), Err(SkeletonError::JointIndexOutOfRange(32)));
        idx[10] = 3;
        assert_eq!(JointMap::new(&idx), Err(SkeletonError::DuplicateJointIndex(3)));
        assert_eq!(JointMap::new(&idx[..5]), Err(SkeletonError::JointMapLength(5)));
    }

    #[test]
    fn wrong_joint_count_is_rejected() {
        let mut raw = raw_frame();
        raw.joints.pop();
        assert!(matches!(
            prune_frame(&raw, &JointMap::default()),
            Err(SkeletonError::JointCount { expected: 32, got: 31 })
        ));
    }

    #[test]
    fn normalize_hand_example() {
        let pose = normalize_pose(&pruned([1.0, 1.0, 1.0], [1.0, 1.0, 3.0], [1.0, 1.0, 2.0])).unwrap();
        assert_eq!(pose.rows()[5], [0.0, 0.0, 0.5]);
        assert_eq!(pose.rows()[0], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn degenerate_frame_rejected() {
        let f = pruned([1.0, 1.0, 1.0], [1.0, 1.0, 1.0 + 1e-7], [0.0; 3]);
        assert!(matches!(normalize_pose(&f), Err(SkeletonError::DegenerateFrame(_))));
    }

    #[test]
    fn translation_leaves_pose_unchanged() {
        let f = pruned([0.3, -0.2, 2.0], [0.1, 0.4, 2.2], [0.5, 0.5, 1.9]);
        let mut g = f;
        for j in g.joints.iter_mut() {
            *j = Joint3D::new(j.x + 5.0, j.y - 3.0, j.z + 2.0);
        }
        let a = normalize_pose(&f).unwrap();
        let b = normalize_pose(&g).unwrap();
        for (ra, rb) in a.rows().iter().zip(b.rows()) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn minmax_default_constants() {
        let p = MinMaxParams::default();
        assert_eq!(p.scale(-2.5), 0.0);
        assert_eq!(p.scale(1.75), 1.0);
        assert!((p.scale(0.0) - 2.5 / 4.25).abs() < 1e-15);
        assert!((p.scale(0.0) - 0.5882353).abs() < 1e-7);
    }

    #[test]
    fn minmax_rejects_degenerate_ranges() {
        assert!(MinMaxParams::new(0.0, 1.0, 0.5, 0.5).is_err());
        assert!(MinMaxParams::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(MinMaxParams::new(f64::NAN, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn minmax_counts_out_of_range() {
        let p = MinMaxParams::default();
        let mut xs = [-3.0, 0.0, 2.0, 1.75];
        assert_eq!(p.scale_slice(&mut xs), 2);
        assert!(xs[0] < 0.0 && xs[2] > 1.0);
    }

    #[test]
    fn minmax_serde_validates() {
        let bad = r#"{"old_min":1.0,"old_max":0.0,"new_min":0.0,"new_max":1.0}"#;
        assert!(serde_json::from_str::<MinMaxParams>(bad).is_err());
        let good = serde_json::to_string(&MinMaxParams::default()).unwrap();
        assert_eq!(serde_json::from_str::<MinMaxParams>(&good).unwrap(), MinMaxParams::default());
    }
}
