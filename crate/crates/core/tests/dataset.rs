use pairact_core::dataset::{
    build_loso_folds, discard_transitions, load_dataset, pair_windows, save_dataset, slide_windows, DatasetManifest,
    PoseSequence, PreprocessParams, Provenance, SourceSpan, Window, WindowParams, MANIFEST_FILE, POSE_VALUES,
    TENSOR_FILE,
};
use pairact_core::skeleton::{encode_pair_label, ActivityState, NormalizedPose, SubjectId};
use pairact_core::testing::{brute_keep, brute_pair_count, brute_window_starts};
use proptest::prelude::*;
use std::collections::BTreeSet;

const LEN: usize = 4;

fn params() -> PreprocessParams {
    PreprocessParams {
        window: WindowParams::new(LEN, 2).unwrap(),
        ..PreprocessParams::default()
    }
}

fn window(subject: usize, state: usize, end: usize, fill: f64) -> Window {
    Window {
        // stored windows hold f32-representable values
        data: vec![fill as f32 as f64; LEN * POSE_VALUES],
        subject: SubjectId::new(format!("S{subject:02}")),
        state: ActivityState::from_ordinal(state).unwrap(),
        span: SourceSpan {
            recording: format!("r{subject}"),
            start: end + 1 - LEN,
            end,
        },
    }
}

/// Windows for `(subject, state)` pairs, with values inside the min-max
/// source range.
fn windows_of(specs: &[(usize, usize)]) -> Vec<Window> {
    specs
        .iter()
        .enumerate()
        .map(|(i, &(s, st))| window(s, st, LEN - 1 + i, -2.0 + 0.1 * i as f64))
        .collect()
}

fn grouped(specs: &[(usize, usize)]) -> DatasetManifest {
    let windows = windows_of(specs);
    let samples = pair_windows(&windows);
    DatasetManifest::new(params(), Provenance::Grouped, windows, samples)
}

fn specs() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..5, 0usize..3), 0..14)
}

proptest! {
    #[test]
    fn window_starts_match_enumeration(total in 0usize..400, length in 1usize..150, stride_frac in 0.0..1.0f64) {
        let stride = 1 + ((length - 1) as f64 * stride_frac) as usize;
        let p = WindowParams::new(length, stride).unwrap();
        let brute = brute_window_starts(total, length, stride);
        prop_assert_eq!(p.starts(total).collect::<Vec<_>>(), brute.clone());
        prop_assert_eq!(p.count(total), brute.len());

        let seq = PoseSequence {
            recording: "r".into(),
            subject: SubjectId::new("S"),
            state: ActivityState::Working,
            poses: vec![NormalizedPose::from_rows([[0.0; 3]; 10]); total.min(200)],
        };
        let cut = slide_windows(&seq, &p);
        prop_assert_eq!(cut.len(), p.count(total.min(200)));
        for w in &cut {
            prop_assert_eq!(w.span.end - w.span.start + 1, length);
            prop_assert_eq!(w.frames(), length);
        }
    }

    #[test]
    fn pairing_is_every_ordered_cross_subject_pair(specs in specs()) {
        let windows = windows_of(&specs);
        let subjects: Vec<usize> = specs.iter().map(|s| s.0).collect();
        let samples = pair_windows(&windows);
        prop_assert_eq!(samples.len(), brute_pair_count(&subjects));
        let distinct: BTreeSet<(usize, usize)> = samples.iter().map(|s| (s.left, s.right)).collect();
        prop_assert_eq!(distinct.len(), samples.len());
        for s in &samples {
            prop_assert_ne!(&windows[s.left].subject, &windows[s.right].subject);
            prop_assert_eq!(s.label, encode_pair_label(windows[s.left].state, windows[s.right].state));
        }
    }

    #[test]
    fn discard_matches_interval_membership(
        ends in prop::collection::vec(0usize..600, 0..40),
        changes in prop::collection::vec(0usize..600, 0..6),
        margin in 0usize..100,
    ) {
        let windows: Vec<Window> = ends.iter().map(|&e| window(0, 0, e + LEN, 0.0)).collect();
        let expected: Vec<usize> = windows
            .iter()
            .map(|w| w.span.end)
            .filter(|&e| brute_keep(e, &changes, margin))
            .collect();
        let kept: Vec<usize> = discard_transitions(windows, &changes, margin).iter().map(|w| w.span.end).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn loso_folds_are_subject_disjoint(specs in specs()) {
        let m = grouped(&specs);
        let Ok(folds) = build_loso_folds(&m) else {
            prop_assert!(m.subjects.len() < 2);
            return Ok(());
        };
        prop_assert_eq!(folds.len(), m.subjects.len());
        let mut tested = vec![0usize; m.len()];
        for f in &folds {
            for &i in &f.train {
                let (a, b) = m.sample_subjects(i);
                prop_assert!(a != &f.held_out && b != &f.held_out);
            }
            for &i in &f.test {
                let (a, b) = m.sample_subjects(i);
                prop_assert!(a == &f.held_out || b == &f.held_out);
                tested[i] += 1;
            }
            prop_assert_eq!(f.train.len() + f.test.len(), m.len());
        }
        // grouped samples mention two subjects, so two folds test each
        prop_assert!(tested.iter().all(|&n| n == 2));
    }

    #[test]
    fn materialized_values_lie_in_unit_interval(specs in specs()) {
        let m = grouped(&specs);
        for i in 0..m.len() {
            let (s, out_of_range) = m.materialize(i);
            prop_assert_eq!(out_of_range, 0);
            prop_assert!(s.tensor.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn saved_datasets_load_back_equal(specs in specs(), flip in any::<prop::sample::Index>()) {
        let m = grouped(&specs);
        let dir = tempfile::tempdir().unwrap();
        let checksum = save_dataset(&m, dir.path()).unwrap();
        let (loaded, again) = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(&loaded, &m);
        prop_assert_eq!(&again, &checksum);

        let path = dir.path().join(TENSOR_FILE);
        let mut bytes = std::fs::read(&path).unwrap();
        if !bytes.is_empty() {
            let i = flip.index(bytes.len());
            bytes[i] ^= 0x40;
            std::fs::write(&path, &bytes).unwrap();
            prop_assert!(load_dataset(dir.path()).is_err());
        }
    }
}

#[test]
fn two_and_three_windows_give_twelve_samples() {
    let m = grouped(&[(0, 0), (0, 1), (1, 1), (1, 2), (1, 0)]);
    assert_eq!(m.len(), 12);
    let hist = m.class_histogram();
    assert_eq!(hist.iter().sum::<usize>(), 12);
    // (W,P) from subject 0 then subject 1, and its mirror
    assert_eq!(hist[1], 2);
    assert_eq!(hist[3], 2);
}

#[test]
fn manifest_rewritten_with_other_window_length_fails_to_load_or_merge() {
    let m = grouped(&[(0, 0), (1, 1)]);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&m, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"length\": 4", "\"length\": 5", 1)).unwrap();
    assert!(load_dataset(dir.path()).is_err());

    let mut other = grouped(&[(2, 0), (3, 1)]);
    other.params.window = WindowParams::new(LEN, 1).unwrap();
    let mut m = m;
    assert!(m.merge(other).is_err());
}
