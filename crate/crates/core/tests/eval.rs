use pairact_core::dataset::{
    pair_windows, DatasetManifest, PairWindow, PreprocessParams, Provenance, SourceSpan, Window, WindowParams,
    POSE_VALUES,
};
use pairact_core::eval::{
    run_cross, run_loso, ConfusionMatrix, EvalError, ExperimentConfig, MeanSd, ModelKind, ReportContext,
};
use pairact_core::models::{LstmConfig, TrainConfig};
use pairact_core::nn::AdamConfig;
use pairact_core::skeleton::{encode_pair_label, ActivityState, SubjectId, NUM_CLASSES};
use pairact_core::testing::brute_metrics;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LEN: usize = 5;

fn labels(max_len: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1..=max_len).prop_flat_map(|n| {
        (
            prop::collection::vec(0..NUM_CLASSES, n),
            prop::collection::vec(0..NUM_CLASSES, n),
        )
    })
}

proptest! {
    #[test]
    fn metrics_match_brute_force((preds, truths) in labels(100)) {
        let cm = ConfusionMatrix::from_predictions(&preds, &truths).unwrap();
        let (counts, accuracy, f) = brute_metrics(&preds, &truths);
        prop_assert_eq!(cm.counts, counts);
        prop_assert!((cm.accuracy() - accuracy).abs() <= 1e-12);
        prop_assert_eq!(cm.accuracy(), cm.trace() as f64 / cm.total() as f64);
        prop_assert!((cm.macro_f1() - f).abs() <= 1e-12);

        let (rows, empty) = cm.row_normalized();
        for (c, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if empty.contains(&c) {
                prop_assert_eq!(sum, 0.0);
            } else {
                prop_assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn macro_f_ignores_relabeling((preds, truths) in labels(60), perm_seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..NUM_CLASSES).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..NUM_CLASSES).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let p2: Vec<usize> = preds.iter().map(|&c| perm[c]).collect();
        let t2: Vec<usize> = truths.iter().map(|&c| perm[c]).collect();
        let a = ConfusionMatrix::from_predictions(&preds, &truths).unwrap().macro_f1();
        let b = ConfusionMatrix::from_predictions(&p2, &t2).unwrap().macro_f1();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}

/// Per-state prototype frames, so every sample is separable.
fn proto(state: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(state as u64);
    (0..POSE_VALUES).map(|_| rng.random_range(-2.0..1.5f32) as f64).collect()
}

fn window(subject: usize, state: usize, k: usize) -> Window {
    Window {
        data: proto(state).repeat(LEN),
        subject: SubjectId::new(format!("S{subject}")),
        state: ActivityState::from_ordinal(state).unwrap(),
        span: SourceSpan {
            recording: format!("S{subject}_{state}"),
            start: k * LEN,
            end: k * LEN + LEN - 1,
        },
    }
}

fn params() -> PreprocessParams {
    PreprocessParams {
        window: WindowParams::new(LEN, LEN).unwrap(),
        ..PreprocessParams::default()
    }
}

fn grouped(subjects: usize) -> DatasetManifest {
    let windows: Vec<Window> = (0..subjects)
        .flat_map(|s| (0..3).map(move |st| window(s, st, 0)))
        .collect();
    let samples = pair_windows(&windows);
    DatasetManifest::new(params(), Provenance::Grouped, windows, samples)
}

fn pair_data(subjects: (usize, usize)) -> DatasetManifest {
    let mut pws = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            pws.push(PairWindow {
                left: window(subjects.0, a, pws.len()),
                right: window(subjects.1, b, pws.len()),
                label: encode_pair_label(ActivityState::from_ordinal(a).unwrap(), ActivityState::from_ordinal(b).unwrap()),
            });
        }
    }
    DatasetManifest::from_pair_windows(params(), pws)
}

fn config() -> ExperimentConfig {
    let train = TrainConfig {
        epochs: 25,
        batch_size: 6,
        optimizer: AdamConfig {
            lr: 2e-2,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    ExperimentConfig {
        lstm: LstmConfig {
            layers: 1,
            hidden: 8,
            input_offset: 0.5,
            ..LstmConfig::default()
        },
        lstm_train: train,
        ..ExperimentConfig::default()
    }
}

#[test]
fn loso_reports_one_fold_per_subject_and_is_repeatable() {
    let data = grouped(3);
    let a = run_loso(&data, ModelKind::Lstm, &config(), 1, ReportContext::default()).unwrap();
    assert_eq!(a.folds.len(), 3);
    assert_eq!(a.aggregate.folds, 3);
    assert!(a.aggregate.excluded.is_empty());
    for f in &a.folds {
        assert_eq!(f.train_size, 18);
        assert_eq!(f.test_size, 36);
    }
    let acc = a.aggregate.accuracy.unwrap();
    assert!(acc.mean > 0.5, "{acc:?}");

    let b = run_loso(&data, ModelKind::Lstm, &config(), 1, ReportContext::default()).unwrap();
    assert_eq!(a, b);

    // fold order does not matter to the aggregate
    let mut values: Vec<f64> = a.folds.iter().map(|f| f.accuracy).collect();
    values.reverse();
    let shuffled = MeanSd::population(&values).unwrap();
    assert!((shuffled.mean - acc.mean).abs() <= 1e-12);
    assert!((shuffled.sd - acc.sd).abs() <= 1e-12);
}

#[test]
fn two_subjects_leave_every_fold_without_training_data() {
    let report = run_loso(&grouped(2), ModelKind::Lstm, &config(), 1, ReportContext::default()).unwrap();
    assert!(report.folds.is_empty());
    assert_eq!(report.aggregate.excluded.len(), 2);
    assert!(report.aggregate.accuracy.is_none());
}

#[test]
fn cross_evaluation_scores_every_fold_model_on_all_pair_samples() {
    let train = grouped(3);
    let test = pair_data((7, 8));
    let report = run_cross(&train, &test, ModelKind::Lstm, &config(), 2, ReportContext::default()).unwrap();
    assert_eq!(report.folds.len(), 3);
    assert!(report.folds.iter().all(|f| f.test_size == 9));
    assert_eq!(report.aggregate.test_data.name(), "pair");

    let empty = DatasetManifest::from_pair_windows(params(), Vec::new());
    let err = run_cross(&train, &empty, ModelKind::Lstm, &config(), 2, ReportContext::default()).unwrap_err();
    assert!(matches!(err, EvalError::EmptyTestSet), "{err}");
}
