//! File-level pipeline steps behind the command-line tool.

mod config;
pub mod synthetic;

pub use config::{Paths, PipelineConfig, PreprocessConfig};
pub use synthetic::{generate, MotionParams, SyntheticRecording, SyntheticSpec};

use crate::dataset::{
    discard_transitions, load_dataset, save_dataset, slide_windows, window_pair_recording, DatasetError,
    DatasetManifest, Fold, PairPoseFrame, PairRecording, PoseSequence, PreprocessParams, Provenance, Window,
};
use crate::eval::{
    confusion_csv, evaluate_cross, evaluate_loso, experiment_grid, fold_seed, text_table, train_folds, DataKind,
    EvalError, ExcludedFold, ExperimentConfig, ExperimentReport, GridRow, ModelKind, ReportContext,
};
use crate::models::{ModelError, TrainReport, TrainedModel};
use crate::skeleton::recording::{parse_recording, Recording, RecordingError};
use crate::skeleton::{normalize_pose, prune_frame, JointMap, NormalizedPose, RawFrame, NUM_CLASSES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Failure of a pipeline step, grouped by who has to act on it.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Training(String),
}

impl PipelineError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Training(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Data(_) => "data",
            PipelineError::Training(_) => "training",
        }
    }
}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::ParameterMismatch(_) | DatasetError::InvalidWindowParams { .. } => {
                PipelineError::Config(e.to_string())
            }
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => PipelineError::Config(e.to_string()),
            ModelError::Checkpoint(_) | ModelError::Meta(_) => PipelineError::Data(e.to_string()),
            _ => PipelineError::Training(e.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Dataset(d) => d.into(),
            EvalError::Model(m) => m.into(),
            EvalError::Fold { .. } => PipelineError::Training(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

fn io_data(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_data(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_data(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report types serialize");
    v.push(b'\n');
    v
}

/// Directory of the dataset of a given kind under the configured root.
pub fn dataset_dir(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.paths.datasets.join(name)
}

fn data_dir_name(kind: DataKind) -> &'static str {
    kind.name()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenSummary {
    pub files: Vec<PathBuf>,
}

/// Writes the synthetic recordings of `cfg.synthetic` into `cfg.paths.raw`.
pub fn cmd_gen_synthetic(cfg: &PipelineConfig) -> Result<GenSummary, PipelineError> {
    let spec = &cfg.synthetic;
    spec.validate().map_err(PipelineError::Config)?;
    if spec.frames < cfg.preprocess.window_length {
        return Err(PipelineError::Config(format!(
            "synthetic recordings of {} frames are shorter than the window length {}",
            spec.frames, cfg.preprocess.window_length
        )));
    }
    let recordings = generate(spec).map_err(PipelineError::Config)?;
    fs::create_dir_all(&cfg.paths.raw).map_err(|e| io_data(&cfg.paths.raw, e))?;
    let mut files = Vec::with_capacity(recordings.len());
    for r in recordings {
        let path = cfg.paths.raw.join(format!("{}.ndjson", r.name));
        let file = fs::File::create(&path).map_err(|e| io_data(&path, e))?;
        let mut w = BufWriter::new(file);
        crate::skeleton::recording::write_recording(&mut w, &r.recording).map_err(|e| io_data(&path, e))?;
        std::io::Write::flush(&mut w).map_err(|e| io_data(&path, e))?;
        files.push(path);
    }
    log::info!("wrote {} recordings to {}", files.len(), cfg.paths.raw.display());
    Ok(GenSummary { files })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordingStats {
    pub file: String,
    pub kind: &'static str,
    pub frames_read: usize,
    /// Frames dropped because pruning or normalization failed.
    pub frames_rejected: usize,
    pub windows_cut: usize,
    /// Pair windows dropped for ending near a label change.
    pub windows_discarded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetInfo {
    pub dir: PathBuf,
    pub subjects: usize,
    pub windows: usize,
    pub samples: usize,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessSummary {
    pub recordings: Vec<RecordingStats>,
    pub single: Option<DatasetInfo>,
    pub pair: Option<DatasetInfo>,
}

/// Maximal runs of `true`.
fn runs(valid: &[bool]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in valid.iter().chain([&false]).enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn normalize(frame: &RawFrame, map: &JointMap) -> Option<NormalizedPose> {
    prune_frame(frame, map).and_then(|p| normalize_pose(&p)).ok()
}

fn shift(mut w: Window, offset: usize) -> Window {
    w.span.start += offset;
    w.span.end += offset;
    w
}

/// Recording files of a directory, sorted by name.
pub fn list_recordings(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = fs::read_dir(dir).map_err(|e| io_data(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::Data(format!("no .ndjson recordings in {}", dir.display())));
    }
    Ok(files)
}

fn read_recording(path: &Path) -> Result<Recording, PipelineError> {
    let file = fs::File::open(path).map_err(|e| io_data(path, e))?;
    parse_recording(BufReader::new(file)).map_err(|e| match e {
        RecordingError::Line { line, message } => {
            PipelineError::Data(format!("{}:{line}: {message}", path.display()))
        }
        other => PipelineError::Data(format!("{}: {other}", path.display())),
    })
}

/// Prunes, normalizes and windows every recording. Single-user recordings
/// become the `single` dataset, two-person recordings the `pair` dataset.
pub fn cmd_preprocess(cfg: &PipelineConfig) -> Result<PreprocessSummary, PipelineError> {
    cfg.preprocess.validate()?;
    let params = cfg.preprocess.params()?;
    let map = &params.joint_map;
    let margin = cfg.preprocess.margin_frames();
    let mut stats = Vec::new();
    let mut single_windows = Vec::new();
    let mut pair_windows = Vec::new();

    for path in list_recordings(&cfg.paths.raw)? {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let rec = read_recording(&path)?;
        let mut st = RecordingStats {
            file: path.display().to_string(),
            kind: "single",
            frames_read: rec.frame_count(),
            frames_rejected: 0,
            windows_cut: 0,
            windows_discarded: 0,
        };
        match rec {
            Recording::Single(r) => {
                let poses: Vec<Option<NormalizedPose>> = r.frames.iter().map(|f| normalize(f, map)).collect();
                let valid: Vec<bool> = poses.iter().map(Option::is_some).collect();
                st.frames_rejected = valid.iter().filter(|v| !**v).count();
                for run in runs(&valid) {
                    let seq = PoseSequence {
                        recording: name.clone(),
                        subject: r.subject.clone(),
                        state: r.state,
                        poses: poses[run.clone()].iter().map(|p| p.expect("valid run")).collect(),
                    };
                    let ws = slide_windows(&seq, &params.window);
                    st.windows_cut += ws.len();
                    single_windows.extend(ws.into_iter().map(|w| shift(w, run.start)));
                }
            }
            Recording::Pair(r) => {
                st.kind = "pair";
                let frames: Vec<Option<PairPoseFrame>> = r
                    .frames
                    .iter()
                    .map(|f| {
                        Some(PairPoseFrame {
                            left: normalize(&f.left, map)?,
                            right: normalize(&f.right, map)?,
                            left_state: f.left_state,
                            right_state: f.right_state,
                        })
                    })
                    .collect();
                let whole = PairRecording {
                    recording: name.clone(),
                    subjects: r.subjects.clone(),
                    frames: r
                        .frames
                        .iter()
                        .map(|f| PairPoseFrame {
                            left: NormalizedPose::from_rows([[0.0; 3]; 10]),
                            right: NormalizedPose::from_rows([[0.0; 3]; 10]),
                            left_state: f.left_state,
                            right_state: f.right_state,
                        })
                        .collect(),
                };
                let changes = whole.label_change_frames();
                let valid: Vec<bool> = frames.iter().map(Option::is_some).collect();
                st.frames_rejected = valid.iter().filter(|v| !**v).count();
                for run in runs(&valid) {
                    let part = PairRecording {
                        recording: name.clone(),
                        subjects: r.subjects.clone(),
                        frames: frames[run.clone()].iter().map(|f| f.expect("valid run")).collect(),
                    };
                    let ws: Vec<_> = window_pair_recording(&part, &params.window)
                        .into_iter()
                        .map(|mut pw| {
                            pw.left = shift(pw.left, run.start);
                            pw.right = shift(pw.right, run.start);
                            pw
                        })
                        .collect();
                    let cut = ws.len();
                    let kept = discard_transitions(ws, &changes, margin);
                    st.windows_cut += kept.len();
                    st.windows_discarded += cut - kept.len();
                    pair_windows.extend(kept);
                }
            }
        }
        log::info!(
            "{}: {} frames read, {} rejected, {} windows cut, {} discarded near transitions",
            st.file,
            st.frames_read,
            st.frames_rejected,
            st.windows_cut,
            st.windows_discarded
        );
        stats.push(st);
    }

    let single = if stats.iter().any(|s| s.kind == "single") {
        let m = DatasetManifest::new(params.clone(), Provenance::Single, single_windows, Vec::new());
        Some(save_info(&m, &dataset_dir(cfg, "single"))?)
    } else {
        None
    };
    let pair = if stats.iter().any(|s| s.kind == "pair") {
        let m = DatasetManifest::from_pair_windows(params, pair_windows);
        Some(save_info(&m, &dataset_dir(cfg, "pair"))?)
    } else {
        None
    };
    Ok(PreprocessSummary {
        recordings: stats,
        single,
        pair,
    })
}

fn save_info(m: &DatasetManifest, dir: &Path) -> Result<DatasetInfo, PipelineError> {
    let checksum = save_dataset(m, dir)?;
    Ok(DatasetInfo {
        dir: dir.to_path_buf(),
        subjects: m.subjects.len(),
        windows: m.windows.len(),
        samples: m.len(),
        checksum,
    })
}

fn load(dir: &Path) -> Result<(DatasetManifest, String), PipelineError> {
    if !dir.join(crate::dataset::MANIFEST_FILE).exists() {
        return Err(PipelineError::Data(format!(
            "missing dataset {}; run the step that creates it first",
            dir.display()
        )));
    }
    Ok(load_dataset(dir)?)
}

fn check_params(m: &DatasetManifest, params: &PreprocessParams, dir: &Path) -> Result<(), PipelineError> {
    if &m.params != params {
        return Err(PipelineError::Config(format!(
            "dataset {} was built with different preprocessing parameters; re-run preprocess",
            dir.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesizeSummary {
    pub dataset: DatasetInfo,
    /// Sample counts by class index.
    pub class_histogram: [usize; NUM_CLASSES],
    /// Window coordinates outside the min-max source range.
    pub out_of_range_values: usize,
}

/// Pairs the single-user windows of every two distinct subjects into the
/// `grouped` dataset.
pub fn cmd_synthesize(cfg: &PipelineConfig) -> Result<SynthesizeSummary, PipelineError> {
    let dir = dataset_dir(cfg, "single");
    let (single, _) = load(&dir)?;
    check_params(&single, &cfg.preprocess.params()?, &dir)?;
    if single.subjects.len() < 2 {
        return Err(DatasetError::TooFewSubjects(single.subjects.len()).into());
    }
    let grouped = DatasetManifest::grouped_from(&single);
    let minmax = &grouped.params.minmax;
    let out_of_range_values = grouped
        .windows
        .iter()
        .flat_map(|w| w.data.iter())
        .filter(|&&v| !minmax.in_range(v))
        .count();
    let class_histogram = grouped.class_histogram();
    let dataset = save_info(&grouped, &dataset_dir(cfg, "grouped"))?;
    log::info!("grouped dataset: {} samples", dataset.samples);
    Ok(SynthesizeSummary {
        dataset,
        class_histogram,
        out_of_range_values,
    })
}

/// Provenance written next to every fold checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub model: ModelKind,
    pub data: DataKind,
    pub fold: usize,
    pub held_out: String,
    pub seed: u64,
    pub fold_seed: u64,
    pub config_hash: String,
    pub dataset_checksum: String,
    pub checkpoint_sha256: String,
    pub config: ExperimentConfig,
    pub train_report: TrainReport,
}

pub fn checkpoint_dir(cfg: &PipelineConfig, model: ModelKind, data: DataKind) -> PathBuf {
    cfg.paths.checkpoints.join(format!("{}_{}", model.name(), data.name()))
}

fn checkpoint_stem(fold: usize, held_out: &str) -> String {
    format!("fold_{:02}_{held_out}", fold + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldTrainInfo {
    pub held_out: String,
    pub train_size: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub folds: Vec<FoldTrainInfo>,
    pub excluded: Vec<ExcludedFold>,
}

/// Trains one model per LOSO fold of the chosen dataset and writes fold
/// checkpoints with sidecars.
pub fn cmd_train(cfg: &PipelineConfig, model: ModelKind, data: DataKind) -> Result<TrainSummary, PipelineError> {
    cfg.validate()?;
    let ddir = dataset_dir(cfg, data_dir_name(data));
    let (dataset, checksum) = load(&ddir)?;
    check_params(&dataset, &cfg.preprocess.params()?, &ddir)?;
    if DataKind::of(&dataset)? != data {
        return Err(PipelineError::Data(format!("{} does not hold {data} data", ddir.display())));
    }
    let dir = checkpoint_dir(cfg, model, data);
    if dir.exists() {
        for entry in fs::read_dir(&dir).map_err(|e| io_data(&dir, e))?.flatten() {
            let p = entry.path();
            if p.extension().is_some_and(|x| x == "ckpt" || x == "json") {
                fs::remove_file(&p).map_err(|e| io_data(&p, e))?;
            }
        }
    }
    let config_hash = cfg.config_hash();
    let mut folds = Vec::new();
    let excluded = train_folds(&dataset, model, &cfg.model, cfg.seed, false, |i, fold, m, report| {
        let stem = checkpoint_stem(i, fold.held_out.as_str());
        let bytes = m.to_checkpoint_bytes()?;
        let path = dir.join(format!("{stem}.ckpt"));
        write_file(&path, &bytes).map_err(|e| EvalError::Fold {
            held_out: fold.held_out.clone(),
            message: e.to_string(),
        })?;
        let sidecar = CheckpointSidecar {
            model,
            data,
            fold: i,
            held_out: fold.held_out.to_string(),
            seed: cfg.seed,
            fold_seed: fold_seed(cfg.seed, i),
            config_hash: config_hash.clone(),
            dataset_checksum: checksum.clone(),
            checkpoint_sha256: hex::encode(Sha256::digest(&bytes)),
            config: cfg.model.clone(),
            train_report: report.clone(),
        };
        write_file(&dir.join(format!("{stem}.json")), &to_json(&sidecar)).map_err(|e| EvalError::Fold {
            held_out: fold.held_out.clone(),
            message: e.to_string(),
        })?;
        folds.push(FoldTrainInfo {
            held_out: fold.held_out.to_string(),
            train_size: cfg.model.max_train_samples.map_or(fold.train.len(), |m| m.min(fold.train.len())),
            initial_loss: report.initial_loss,
            final_loss: report.epoch_losses.last().copied().unwrap_or(report.initial_loss),
            checkpoint: path,
        });
        Ok(())
    })?;
    Ok(TrainSummary { dir, folds, excluded })
}

/// Which cell of the experiment grid to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Train and test on the same dataset.
    Loso(DataKind),
    /// Grouped-trained fold models tested on the whole pair dataset.
    Cross,
}

fn load_fold_model(
    cfg: &PipelineConfig,
    dir: &Path,
    model: ModelKind,
    data: DataKind,
    dataset_checksum: &str,
    i: usize,
    fold: &Fold,
) -> Result<TrainedModel, PipelineError> {
    let stem = checkpoint_stem(i, fold.held_out.as_str());
    let path = dir.join(format!("{stem}.ckpt"));
    if !path.exists() {
        return Err(PipelineError::Data(format!(
            "missing checkpoint {}; run `pairact train {} --data {}` first",
            path.display(),
            model.name(),
            data.name()
        )));
    }
    let side_path = dir.join(format!("{stem}.json"));
    let side_text = fs::read_to_string(&side_path).map_err(|e| io_data(&side_path, e))?;
    let sidecar: CheckpointSidecar = serde_json::from_str(&side_text)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", side_path.display())))?;
    if sidecar.dataset_checksum != dataset_checksum {
        return Err(PipelineError::Config(format!(
            "checkpoint {} was trained on a different dataset; re-run `pairact train {} --data {}`",
            path.display(),
            model.name(),
            data.name()
        )));
    }
    if sidecar.config_hash != cfg.config_hash() {
        return Err(PipelineError::Config(format!(
            "checkpoint {} was trained with a different configuration; re-run training",
            path.display()
        )));
    }
    let bytes = fs::read(&path).map_err(|e| io_data(&path, e))?;
    let m = TrainedModel::from_checkpoint_bytes(&bytes).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    if m.kind() != model.name() {
        return Err(PipelineError::Data(format!("{} holds a {} model", path.display(), m.kind())));
    }
    Ok(m)
}

/// Base name of the report files of an experiment.
pub fn report_stem(model: ModelKind, train: DataKind, test: DataKind) -> String {
    format!("{}_{}_{}", model.name(), train.name(), test.name())
}

/// Evaluates stored fold checkpoints and writes the JSON report, a text
/// table and per-fold confusion matrices.
pub fn cmd_evaluate(cfg: &PipelineConfig, model: ModelKind, experiment: Experiment) -> Result<ExperimentReport, PipelineError> {
    cfg.validate()?;
    let params = cfg.preprocess.params()?;
    let (train_kind, test_kind) = match experiment {
        Experiment::Loso(d) => (d, d),
        Experiment::Cross => (DataKind::Grouped, DataKind::Pair),
    };
    let train_dir = dataset_dir(cfg, data_dir_name(train_kind));
    let (train, train_sum) = load(&train_dir)?;
    check_params(&train, &params, &train_dir)?;
    let ckpt_dir = checkpoint_dir(cfg, model, train_kind);
    let mut context = ReportContext {
        config_hash: cfg.config_hash(),
        train_dataset: train_sum.clone(),
        test_dataset: train_sum.clone(),
    };
    let mut load_err = None;
    let loader = |i: usize, fold: &Fold| {
        load_fold_model(cfg, &ckpt_dir, model, train_kind, &train_sum, i, fold).map_err(|e| {
            let msg = e.to_string();
            load_err = Some(e);
            EvalError::Fold {
                held_out: fold.held_out.clone(),
                message: msg,
            }
        })
    };
    let result = match experiment {
        Experiment::Loso(_) => evaluate_loso(&train, model, &cfg.model, cfg.seed, context.clone(), loader),
        Experiment::Cross => {
            let test_dir = dataset_dir(cfg, data_dir_name(test_kind));
            let (test, test_sum) = load(&test_dir)?;
            check_params(&test, &params, &test_dir)?;
            context.test_dataset = test_sum;
            evaluate_cross(&train, &test, model, &cfg.model, cfg.seed, context.clone(), loader)
        }
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => return Err(load_err.unwrap_or_else(|| e.into())),
    };

    let stem = report_stem(model, train_kind, test_kind);
    let reports = &cfg.paths.reports;
    write_file(&reports.join(format!("{stem}.json")), &to_json(&report))?;
    let mut text = text_table(std::slice::from_ref(&report.aggregate));
    text.push('\n');
    for f in &report.folds {
        text.push_str(&format!(
            "fold {:<8} train {:>6} test {:>6} acc {:.3} f {:.3}\n",
            f.held_out, f.train_size, f.test_size, f.accuracy, f.f_score
        ));
    }
    for x in &report.aggregate.excluded {
        text.push_str(&format!("fold {:<8} excluded: {}\n", x.held_out, x.reason));
    }
    text.push_str(&format!(
        "config {}\ntrain dataset {}\ntest dataset {}\n",
        report.aggregate.context.config_hash,
        report.aggregate.context.train_dataset,
        report.aggregate.context.test_dataset
    ));
    write_file(&reports.join(format!("{stem}.txt")), text.as_bytes())?;
    for (i, f) in report.folds.iter().enumerate() {
        let path = reports
            .join(format!("{stem}_confusion"))
            .join(format!("{}.csv", checkpoint_stem(i, f.held_out.as_str())));
        write_file(&path, confusion_csv(f).as_bytes())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub rows: Vec<GridRow>,
    pub text: String,
}

/// Collects every experiment report into the six-row grid.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<ReportSummary, PipelineError> {
    let dir = &cfg.paths.reports;
    let mut aggregates = Vec::new();
    if dir.exists() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io_data(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.ends_with("summary.json"))
            .collect();
        files.sort();
        for p in files {
            let text = fs::read_to_string(&p).map_err(|e| io_data(&p, e))?;
            match serde_json::from_str::<ExperimentReport>(&text) {
                Ok(r) => aggregates.push(r.aggregate),
                Err(e) => log::warn!("skipping {}: {e}", p.display()),
            }
        }
    }
    let (rows, text) = experiment_grid(&aggregates);
    write_file(&dir.join("summary.txt"), text.as_bytes())?;
    write_file(&dir.join("summary.json"), &to_json(&rows))?;
    Ok(ReportSummary { rows, text })
}
