//! Deterministic synthetic skeleton recordings.
//!
//! Coordinates are in meters with `y` up, `x` to the subject's right and `z`
//! away from the work table. Each state has its own motion primitive:
//! working oscillates both hands over the table, preparing reaches sideways
//! with the right hand, and requesting holds the right wrist above the head.

use crate::skeleton::recording::{RawPairFrame, RawPairRecording, Recording, SingleRecording};
use crate::skeleton::{tracker_joint as tj, ActivityState, Joint3D, RawFrame, SubjectId, RAW_JOINTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    pub working_frequency_hz: f64,
    /// Radius of the hands' circular motion while working.
    pub working_amplitude: f64,
    /// Lateral distance of the preparing reach.
    pub reach_distance: f64,
    pub reach_period_s: f64,
    /// Height of the raised wrist above the head.
    pub raise_height: f64,
    /// Relative per-subject jitter of the parameters above.
    pub subject_variation: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            working_frequency_hz: 1.2,
            working_amplitude: 0.06,
            reach_distance: 0.45,
            reach_period_s: 2.5,
            raise_height: 0.1,
            subject_variation: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub subjects: usize,
    pub recordings_per_state: usize,
    pub frames: usize,
    /// Two-person recordings for each pair of neighboring subjects.
    pub pair_recordings: usize,
    pub pair_frames: usize,
    /// Frames between state changes in two-person recordings.
    pub segment_frames: usize,
    pub fps: f64,
    /// Standard deviation of per-coordinate Gaussian noise, in meters.
    pub noise: f64,
    pub motion: MotionParams,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            subjects: 6,
            recordings_per_state: 1,
            frames: 390,
            pair_recordings: 0,
            pair_frames: 1040,
            segment_frames: 260,
            fps: 30.0,
            noise: 0.01,
            motion: MotionParams::default(),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.subjects == 0 || self.recordings_per_state == 0 || self.frames == 0 {
            return Err("subjects, recordings per state and frames must be positive".into());
        }
        if self.pair_recordings > 0 && (self.subjects < 2 || self.pair_frames == 0 || self.segment_frames == 0) {
            return Err("pair recordings need two subjects and positive frame counts".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(format!("noise must be nonnegative, got {}", self.noise));
        }
        let m = &self.motion;
        let positive = [m.working_frequency_hz, m.reach_period_s, m.raise_height];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err("motion frequencies, periods and heights must be positive".into());
        }
        if !(0.0..1.0).contains(&m.subject_variation) {
            return Err("subject variation must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn subject_id(i: usize) -> SubjectId {
        SubjectId::new(format!("S{:02}", i + 1))
    }
}

/// A generated recording and the file name it should be stored under.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecording {
    pub name: String,
    pub recording: Recording,
}

/// Fixed proportions and motion style of one synthetic person.
#[derive(Debug, Clone)]
struct Body {
    scale: f64,
    shoulder: f64,
    work_freq: f64,
    work_amp: f64,
    reach: f64,
    reach_period: f64,
    raise: f64,
    lean: f64,
}

impl Body {
    fn sample(motion: &MotionParams, rng: &mut ChaCha8Rng) -> Self {
        let v = motion.subject_variation;
        let mut jitter = |x: f64| x * (1.0 + rng.random_range(-v..=v));
        Self {
            scale: jitter(1.0).clamp(0.8, 1.2),
            shoulder: jitter(0.19),
            work_freq: jitter(motion.working_frequency_hz),
            work_amp: jitter(motion.working_amplitude),
            reach: jitter(motion.reach_distance),
            reach_period: jitter(motion.reach_period_s),
            raise: jitter(motion.raise_height),
            lean: jitter(0.03),
        }
    }
}

fn add(a: Joint3D, b: [f64; 3]) -> Joint3D {
    Joint3D::new(a.x + b[0], a.y + b[1], a.z + b[2])
}

fn lerp(a: Joint3D, b: Joint3D, t: f64) -> Joint3D {
    Joint3D::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, a.z + (b.z - a.z) * t)
}

/// Elbow between shoulder and wrist, dropped slightly.
fn elbow(shoulder: Joint3D, wrist: Joint3D, s: f64) -> Joint3D {
    add(lerp(shoulder, wrist, 0.5), [0.0, -0.06 * s, 0.02 * s])
}

/// Full 32-joint skeleton of `body` at time `t` seconds while in `state`,
/// standing at `origin` (pelvis on the floor plane).
fn pose(body: &Body, state: ActivityState, t: f64, phase: f64, origin: [f64; 3]) -> Vec<Joint3D> {
    let s = body.scale;
    let sway = 0.01 * s * (TAU * 0.3 * t + phase).sin();
    let pelvis = Joint3D::new(origin[0] + sway, origin[1] + 0.95 * s, origin[2]);
    let navel = add(pelvis, [0.0, 0.12 * s, 0.0]);
    let chest = add(pelvis, [0.0, 0.33 * s, -body.lean * s]);
    let neck = add(pelvis, [0.0, 0.48 * s, -body.lean * s]);
    let head = add(neck, [0.0, 0.15 * s, -0.02 * s]);
    let sh_l = add(chest, [-body.shoulder * s, 0.08 * s, 0.0]);
    let sh_r = add(chest, [body.shoulder * s, 0.08 * s, 0.0]);
    let rest_l = add(chest, [-0.12 * s, -0.15 * s, -0.35 * s]);
    let rest_r = add(chest, [0.12 * s, -0.15 * s, -0.35 * s]);

    let (wr_l, wr_r) = match state {
        ActivityState::Working => {
            let a = TAU * body.work_freq * t + phase;
            let r = body.work_amp * s;
            (
                add(rest_l, [r * a.cos(), 0.0, r * a.sin()]),
                add(rest_r, [-r * (a + 0.5 * TAU).cos(), 0.0, r * (a + 0.5 * TAU).sin()]),
            )
        }
        ActivityState::Preparing => {
            let u = 0.7 - 0.3 * (TAU * t / body.reach_period + phase).cos();
            (rest_l, add(rest_r, [body.reach * s * u, 0.05 * s * u, 0.1 * s * u]))
        }
        ActivityState::Requesting => {
            let tremor = 0.005 * s * (TAU * 2.0 * t + phase).sin();
            (rest_l, add(head, [0.08 * s, body.raise * s + tremor, -0.05 * s]))
        }
    };
    let el_l = elbow(sh_l, wr_l, s);
    let el_r = elbow(sh_r, wr_r, s);

    let mut j = vec![pelvis; RAW_JOINTS];
    j[tj::PELVIS] = pelvis;
    j[tj::SPINE_NAVEL] = navel;
    j[tj::SPINE_CHEST] = chest;
    j[tj::NECK] = neck;
    j[4] = lerp(chest, sh_l, 0.5);
    j[tj::SHOULDER_LEFT] = sh_l;
    j[tj::ELBOW_LEFT] = el_l;
    j[tj::WRIST_LEFT] = wr_l;
    j[8] = add(wr_l, [0.0, 0.0, -0.05 * s]);
    j[9] = add(wr_l, [0.0, 0.0, -0.1 * s]);
    j[10] = add(wr_l, [0.03 * s, 0.0, -0.05 * s]);
    j[11] = lerp(chest, sh_r, 0.5);
    j[tj::SHOULDER_RIGHT] = sh_r;
    j[tj::ELBOW_RIGHT] = el_r;
    j[tj::WRIST_RIGHT] = wr_r;
    j[15] = add(wr_r, [0.0, 0.0, -0.05 * s]);
    j[16] = add(wr_r, [0.0, 0.0, -0.1 * s]);
    j[17] = add(wr_r, [-0.03 * s, 0.0, -0.05 * s]);
    for (side, base) in [(-1.0, 18), (1.0, 22)] {
        let hip = add(pelvis, [side * 0.1 * s, 0.0, 0.0]);
        let knee = add(hip, [0.0, -0.45 * s, -0.02 * s]);
        let ankle = add(knee, [0.0, -0.43 * s, 0.0]);
        j[base] = hip;
        j[base + 1] = knee;
        j[base + 2] = ankle;
        j[base + 3] = add(ankle, [0.0, -0.05 * s, -0.12 * s]);
    }
    j[tj::HEAD] = head;
    j[27] = add(head, [0.0, 0.0, -0.1 * s]);
    j[28] = add(head, [-0.03 * s, 0.03 * s, -0.08 * s]);
    j[29] = add(head, [-0.07 * s, 0.0, 0.0]);
    j[30] = add(head, [0.03 * s, 0.03 * s, -0.08 * s]);
    j[31] = add(head, [0.07 * s, 0.0, 0.0]);
    j
}

fn perturb(joints: &mut [Joint3D], noise: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) {
    if let Some(n) = noise {
        for j in joints {
            j.x += n.sample(rng);
            j.y += n.sample(rng);
            j.z += n.sample(rng);
        }
    }
}

fn timestamp(frame: usize, fps: f64) -> u64 {
    (frame as f64 * 1e9 / fps).round() as u64
}

/// Every recording described by `spec`: single-user recordings first, in
/// subject, state and repetition order, then two-person recordings.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SyntheticRecording>, String> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let bodies: Vec<Body> = (0..spec.subjects).map(|_| Body::sample(&spec.motion, &mut master)).collect();
    let noise = (spec.noise > 0.0).then(|| Normal::new(0.0, spec.noise).expect("validated noise"));
    let mut out = Vec::new();

    for (si, body) in bodies.iter().enumerate() {
        let subject = SyntheticSpec::subject_id(si);
        for state in ActivityState::ALL {
            for rep in 0..spec.recordings_per_state {
                let stream = ((si * 3 + state.ordinal()) * spec.recordings_per_state + rep) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(stream + 1);
                let phase = rng.random_range(0.0..TAU);
                let origin = [rng.random_range(-0.1..0.1), 0.0, 2.0 + rng.random_range(-0.1..0.1)];
                let frames = (0..spec.frames)
                    .map(|f| {
                        let mut joints = pose(body, state, f as f64 / spec.fps, phase, origin);
                        perturb(&mut joints, noise.as_ref(), &mut rng);
                        RawFrame {
                            joints,
                            timestamp_ns: timestamp(f, spec.fps),
                            subject: subject.clone(),
                        }
                    })
                    .collect();
                out.push(SyntheticRecording {
                    name: format!("{}_{}_{:02}", subject, state.letter(), rep + 1),
                    recording: Recording::Single(SingleRecording {
                        subject: subject.clone(),
                        state,
                        frames,
                    }),
                });
            }
        }
    }

    if spec.pair_recordings > 0 {
        for a in 0..spec.subjects {
            let b = (a + 1) % spec.subjects;
            if spec.subjects == 2 && a == 1 {
                break;
            }
            for rep in 0..spec.pair_recordings {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(1 << 32 | (a * spec.pair_recordings + rep) as u64);
                let (ids, bodies) = (
                    (SyntheticSpec::subject_id(a), SyntheticSpec::subject_id(b)),
                    (&bodies[a], &bodies[b]),
                );
                let phases = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
                let segments = spec.pair_frames.div_ceil(spec.segment_frames);
                let schedule: Vec<(ActivityState, ActivityState)> = (0..segments)
                    .map(|_| {
                        (
                            ActivityState::ALL[rng.random_range(0..3)],
                            ActivityState::ALL[rng.random_range(0..3)],
                        )
                    })
                    .collect();
                let frames = (0..spec.pair_frames)
                    .map(|f| {
                        let t = f as f64 / spec.fps;
                        let (ls, rs) = schedule[f / spec.segment_frames];
                        let mut left = pose(bodies.0, ls, t, phases.0, [-0.8, 0.0, 2.0]);
                        let mut right = pose(bodies.1, rs, t, phases.1, [0.8, 0.0, 2.0]);
                        perturb(&mut left, noise.as_ref(), &mut rng);
                        perturb(&mut right, noise.as_ref(), &mut rng);
                        let ts = timestamp(f, spec.fps);
                        RawPairFrame {
                            left: RawFrame {
                                joints: left,
                                timestamp_ns: ts,
                                subject: ids.0.clone(),
                            },
                            right: RawFrame {
                                joints: right,
                                timestamp_ns: ts,
                                subject: ids.1.clone(),
                            },
                            left_state: ls,
                            right_state: rs,
                        }
                    })
                    .collect();
                out.push(SyntheticRecording {
                    name: format!("pair_{}_{}_{:02}", ids.0, ids.1, rep + 1),
                    recording: Recording::Pair(RawPairRecording {
                        subjects: ids.clone(),
                        frames,
                    }),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            subjects: 4,
            frames: 40,
            ..Default::default()
        }
    }

    #[test]
    fn one_recording_per_subject_and_state() {
        let recs = generate(&small()).unwrap();
        assert_eq!(recs.len(), 12);
        assert_eq!(recs[0].name, "S01_W_01");
        assert_eq!(recs[11].name, "S04_R_01");
    }

    #[test]
    fn zero_noise_is_reproducible() {
        let spec = SyntheticSpec { noise: 0.0, ..small() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn requesting_raises_a_wrist_above_the_head() {
        for rec in generate(&small()).unwrap() {
            let Recording::Single(r) = rec.recording else { unreachable!() };
            let above = r
                .frames
                .iter()
                .filter(|f| f.joints[tj::WRIST_RIGHT].y.max(f.joints[tj::WRIST_LEFT].y) > f.joints[tj::HEAD].y)
                .count();
            if r.state == ActivityState::Requesting {
                assert!(above * 5 >= r.frames.len() * 4);
            } else {
                assert_eq!(above, 0);
            }
        }
    }

    #[test]
    fn pair_recordings_change_state() {
        let spec = SyntheticSpec {
            pair_recordings: 1,
            pair_frames: 300,
            segment_frames: 60,
            ..small()
        };
        let recs = generate(&spec).unwrap();
        assert_eq!(recs.len(), 16);
        let Recording::Pair(p) = &recs[12].recording else { panic!("expected a pair recording") };
        assert_eq!(p.frames.len(), 300);
        assert_eq!(p.subjects.0, SubjectId::new("S01"));
    }
}
