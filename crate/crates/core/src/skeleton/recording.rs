//! Newline-delimited JSON recordings.
//!
//! One object per line:
//!
//! ```text
//! {"subject":"S01","timestamp_ns":0,"label":"W","joints":[[x,y,z], ...32]}
//! ```
//!
//! Single-user recordings carry one label for the whole recording (every line
//! that has a label must agree). Pair recordings add a `partner` object with
//! the right-hand person and require a label on both people for every frame:
//!
//! ```text
//! {"subject":"A","timestamp_ns":0,"label":"W","joints":[...],
//!  "partner":{"subject":"B","label":"P","joints":[...]}}
//! ```
//!
//! The top-level person is the left user.

use super::{ActivityState, Joint3D, RawFrame, SubjectId, RAW_JOINTS};
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("recording is empty")]
    Empty,
    #[error("single-user recording has no label")]
    MissingLabel,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl RecordingError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        RecordingError::Line {
            line,
            message: message.into(),
        }
    }

    /// 1-based line number for errors tied to a line.
    pub fn line(&self) -> Option<usize> {
        match self {
            RecordingError::Line { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub subject: SubjectId,
    pub timestamp_ns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ActivityState>,
    pub joints: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<PartnerRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartnerRecord {
    pub subject: SubjectId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ActivityState>,
    pub joints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleRecording {
    pub subject: SubjectId,
    pub state: ActivityState,
    pub frames: Vec<RawFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawPairFrame {
    pub left: RawFrame,
    pub right: RawFrame,
    pub left_state: ActivityState,
    pub right_state: ActivityState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawPairRecording {
    pub subjects: (SubjectId, SubjectId),
    pub frames: Vec<RawPairFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recording {
    Single(SingleRecording),
    Pair(RawPairRecording),
}

impl Recording {
    pub fn frame_count(&self) -> usize {
        match self {
            Recording::Single(r) => r.frames.len(),
            Recording::Pair(r) => r.frames.len(),
        }
    }
}

fn joints_from(line: usize, who: &str, joints: &[[f64; 3]]) -> Result<Vec<Joint3D>, RecordingError> {
    if joints.len() != RAW_JOINTS {
        return Err(RecordingError::at(
            line,
            format!("{who}: expected {RAW_JOINTS} joints, got {}", joints.len()),
        ));
    }
    Ok(joints.iter().map(|&j| Joint3D::from(j)).collect())
}

enum Builder {
    Single {
        subject: SubjectId,
        state: Option<ActivityState>,
        frames: Vec<RawFrame>,
    },
    Pair {
        subjects: (SubjectId, SubjectId),
        frames: Vec<RawPairFrame>,
    },
}

pub fn parse_recording<R: BufRead>(reader: R) -> Result<Recording, RecordingError> {
    let mut builder: Option<Builder> = None;
    let mut last_ts: Option<u64> = None;

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord =
            serde_json::from_str(&line).map_err(|e| RecordingError::at(lineno, e.to_string()))?;

        if let Some(prev) = last_ts {
            if rec.timestamp_ns <= prev {
                return Err(RecordingError::at(
                    lineno,
                    format!("timestamp {} not after previous {prev}", rec.timestamp_ns),
                ));
            }
        }
        last_ts = Some(rec.timestamp_ns);

        let left = RawFrame {
            joints: joints_from(lineno, "joints", &rec.joints)?,
            timestamp_ns: rec.timestamp_ns,
            subject: rec.subject.clone(),
        };

        let b = builder.get_or_insert_with(|| match &rec.partner {
            None => Builder::Single {
                subject: rec.subject.clone(),
                state: None,
                frames: Vec::new(),
            },
            Some(p) => Builder::Pair {
                subjects: (rec.subject.clone(), p.subject.clone()),
                frames: Vec::new(),
            },
        });

        match (b, rec.partner) {
            (Builder::Single { subject, state, frames }, None) => {
                if rec.subject != *subject {
                    return Err(RecordingError::at(
                        lineno,
                        format!("subject {} differs from recording subject {subject}", rec.subject),
                    ));
                }
                if let Some(l) = rec.label {
                    match state {
                        Some(s) if *s != l => {
                            return Err(RecordingError::at(
                                lineno,
                                format!("label {l} conflicts with recording label {s}"),
                            ))
                        }
                        _ => *state = Some(l),
                    }
                }
                frames.push(left);
            }
            (Builder::Pair { subjects, frames }, Some(p)) => {
                if rec.subject != subjects.0 || p.subject != subjects.1 {
                    return Err(RecordingError::at(lineno, "pair subjects change within recording"));
                }
                if subjects.0 == subjects.1 {
                    return Err(RecordingError::at(lineno, "pair recording needs two distinct subjects"));
                }
                let (Some(left_state), Some(right_state)) = (rec.label, p.label) else {
                    return Err(RecordingError::at(lineno, "pair frame needs a label for both people"));
                };
                let right = RawFrame {
                    joints: joints_from(lineno, "partner.joints", &p.joints)?,
                    timestamp_ns: rec.timestamp_ns,
                    subject: p.subject,
                };
                frames.push(RawPairFrame {
                    left,
                    right,
                    left_state,
                    right_state,
                });
            }
            (Builder::Single { .. }, Some(_)) => {
                return Err(RecordingError::at(lineno, "partner frame in a single-user recording"));
            }
            (Builder::Pair { .. }, None) => {
                return Err(RecordingError::at(lineno, "pair recording frame without partner"));
            }
        }
    }

    match builder {
        None => Err(RecordingError::Empty),
        Some(Builder::Single { subject, state, frames }) => Ok(Recording::Single(SingleRecording {
            subject,
            state: state.ok_or(RecordingError::MissingLabel)?,
            frames,
        })),
        Some(Builder::Pair { subjects, frames }) => Ok(Recording::Pair(RawPairRecording { subjects, frames })),
    }
}

pub fn parse_recording_bytes(bytes: &[u8]) -> Result<Recording, RecordingError> {
    parse_recording(bytes)
}

fn joint_arrays(joints: &[Joint3D]) -> Vec<[f64; 3]> {
    joints.iter().map(|j| j.to_array()).collect()
}

pub fn write_recording<W: Write>(mut w: W, rec: &Recording) -> io::Result<()> {
    match rec {
        Recording::Single(r) => {
            for f in &r.frames {
                let line = FrameRecord {
                    subject: r.subject.clone(),
                    timestamp_ns: f.timestamp_ns,
                    label: Some(r.state),
                    joints: joint_arrays(&f.joints),
                    partner: None,
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n")?;
            }
        }
        Recording::Pair(r) => {
            for f in &r.frames {
                let line = FrameRecord {
                    subject: r.subjects.0.clone(),
                    timestamp_ns: f.left.timestamp_ns,
                    label: Some(f.left_state),
                    joints: joint_arrays(&f.left.joints),
                    partner: Some(PartnerRecord {
                        subject: r.subjects.1.clone(),
                        label: Some(f.right_state),
                        joints: joint_arrays(&f.right.joints),
                    }),
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}
