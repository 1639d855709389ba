use pairact_core::eval::{DataKind, ModelKind};
use pairact_core::pipeline::{
    cmd_evaluate, cmd_gen_synthetic, cmd_preprocess, cmd_report, cmd_synthesize, cmd_train, generate, Experiment,
    PipelineConfig, PipelineError, SyntheticSpec,
};
use pairact_core::skeleton::recording::write_recording;
use std::fs;
use std::path::Path;

/// Toy-scale settings: short windows, three subjects, one-epoch models.
fn config(root: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_json(
        r#"{
            "preprocess": {"window_length": 30, "window_stride": 15, "transition_margin_seconds": 0.2},
            "model": {
                "lstm": {"layers": 1, "hidden": 4, "input_offset": 0.588},
                "lstm_train": {"epochs": 1, "batch_size": 16},
                "vae": {"channels": [2], "latent": 2, "kernel": 3, "input_offset": 0.588},
                "vae_train": {"epochs": 1, "batch_size": 16},
                "head_train": {"epochs": 1, "batch_size": 16},
                "max_train_samples": 24
            },
            "synthetic": {"subjects": 3, "frames": 60, "pair_recordings": 1, "pair_frames": 120, "segment_frames": 60},
            "seed": 3
        }"#,
    )
    .unwrap();
    cfg.paths.raw = root.join("raw");
    cfg.paths.datasets = root.join("datasets");
    cfg.paths.checkpoints = root.join("checkpoints");
    cfg.paths.reports = root.join("reports");
    cfg
}

fn prepared(root: &Path) -> PipelineConfig {
    let cfg = config(root);
    cmd_gen_synthetic(&cfg).unwrap();
    cmd_preprocess(&cfg).unwrap();
    cmd_synthesize(&cfg).unwrap();
    cfg
}

#[test]
fn full_run_fills_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let generated = cmd_gen_synthetic(&cfg).unwrap();
    // 3 subjects × 3 states, plus pair recordings of neighboring subjects
    let singles = generated.files.iter().filter(|f| !f.to_string_lossy().contains("pair")).count();
    assert_eq!(singles, 9);

    let pre = cmd_preprocess(&cfg).unwrap();
    let single = pre.single.as_ref().unwrap();
    assert_eq!(single.subjects, 3);
    assert_eq!(single.windows, 9 * 3);
    assert!(pre.pair.as_ref().unwrap().samples > 0);

    let syn = cmd_synthesize(&cfg).unwrap();
    // each subject has 9 windows: 6 ordered subject pairs × 81
    assert_eq!(syn.dataset.samples, 6 * 81);
    assert_eq!(syn.class_histogram.iter().sum::<usize>(), syn.dataset.samples);

    for model in [ModelKind::Lstm, ModelKind::Vae] {
        for data in [DataKind::Grouped, DataKind::Pair] {
            cmd_train(&cfg, model, data).unwrap();
            cmd_evaluate(&cfg, model, Experiment::Loso(data)).unwrap();
        }
        let cross = cmd_evaluate(&cfg, model, Experiment::Cross).unwrap();
        assert_eq!(cross.aggregate.context.train_dataset, syn.dataset.checksum);
        assert_eq!(cross.aggregate.context.test_dataset, pre.pair.as_ref().unwrap().checksum);
        assert_eq!(cross.aggregate.context.config_hash, cfg.config_hash());
    }

    let report = cmd_report(&cfg).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert!(report.rows.iter().all(|r| r.accuracy.is_some()));
    let text = fs::read_to_string(cfg.paths.reports.join("lstm_grouped_pair.txt")).unwrap();
    assert!(text.contains(&cfg.config_hash()));
    assert!(text.contains(&syn.dataset.checksum));
    assert!(cfg.paths.reports.join("vae_grouped_grouped_confusion").is_dir());
}

#[test]
fn reruns_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = prepared(a.path());
    let cb = prepared(b.path());
    for name in ["single", "grouped", "pair"] {
        for file in ["manifest.json", "windows.bin"] {
            let fa = fs::read(ca.paths.datasets.join(name).join(file)).unwrap();
            let fb = fs::read(cb.paths.datasets.join(name).join(file)).unwrap();
            assert!(fa == fb, "{name}/{file} differs");
        }
    }
    let ta = cmd_train(&ca, ModelKind::Lstm, DataKind::Grouped).unwrap();
    let tb = cmd_train(&cb, ModelKind::Lstm, DataKind::Grouped).unwrap();
    for (x, y) in ta.folds.iter().zip(&tb.folds) {
        assert_eq!(fs::read(&x.checkpoint).unwrap(), fs::read(&y.checkpoint).unwrap());
    }
}

#[test]
fn evaluate_before_train_names_the_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepared(dir.path());
    let err = cmd_evaluate(&cfg, ModelKind::Vae, Experiment::Loso(DataKind::Grouped)).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let msg = err.to_string();
    assert!(msg.contains("fold_01_S01.ckpt"), "{msg}");
    assert!(msg.contains("pairact train vae --data grouped"), "{msg}");
}

#[test]
fn changed_settings_invalidate_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = prepared(dir.path());
    cmd_train(&cfg, ModelKind::Lstm, DataKind::Pair).unwrap();
    cfg.seed += 1;
    let err = cmd_evaluate(&cfg, ModelKind::Lstm, Experiment::Loso(DataKind::Pair)).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)), "{err}");
}

#[test]
fn short_and_malformed_recordings() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.preprocess.window_length = 130;
    cfg.preprocess.window_stride = 26;
    let spec = SyntheticSpec {
        subjects: 2,
        frames: 129,
        ..SyntheticSpec::default()
    };
    fs::create_dir_all(&cfg.paths.raw).unwrap();
    for r in generate(&spec).unwrap() {
        let mut bytes = Vec::new();
        write_recording(&mut bytes, &r.recording).unwrap();
        fs::write(cfg.paths.raw.join(format!("{}.ndjson", r.name)), bytes).unwrap();
    }
    let pre = cmd_preprocess(&cfg).unwrap();
    assert_eq!(pre.recordings.len(), 6);
    assert!(pre.recordings.iter().all(|r| r.frames_read == 129 && r.windows_cut == 0));

    let bad = cfg.paths.raw.join("zz_bad.ndjson");
    let first = fs::read_to_string(cfg.paths.raw.join(format!("{}.ndjson", generate(&spec).unwrap()[0].name))).unwrap();
    fs::write(&bad, format!("{}\n{{\"subject\": 1}}\n", first.lines().next().unwrap())).unwrap();
    let err = cmd_preprocess(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("zz_bad.ndjson:2:"), "{err}");
}

#[test]
fn bad_settings_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.synthetic.frames = 10;
    assert_eq!(cmd_gen_synthetic(&cfg).unwrap_err().exit_code(), 2);
    let mut cfg = config(dir.path());
    cfg.preprocess.window_stride = 0;
    assert_eq!(cmd_preprocess(&cfg).unwrap_err().exit_code(), 2);
    assert!(PipelineConfig::from_json(r#"{"model": {"lstm": {"hidden": 0}}}"#)
        .unwrap()
        .validate()
        .is_err());
}
