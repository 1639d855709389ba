//! Leave-one-subject-out evaluation, metrics and reports.

pub mod metrics;
mod report;

pub use metrics::{accuracy, f_score, ConfusionMatrix, MeanSd};
pub use report::{confusion_csv, experiment_grid, text_table, GridRow, REFERENCE_ROWS};

use crate::dataset::{build_loso_folds, DatasetError, DatasetManifest, Fold, Provenance};
use crate::models::{
    extract_transfer_classifier, train_lstm_classifier, train_vae, Classifier, LstmConfig, ModelError, SampleSet,
    TrainConfig, TrainReport, TrainedModel, VaeConfig,
};
use crate::skeleton::{SubjectId, NUM_CLASSES};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const SD_FORMULA: &str = "population (divide by number of folds)";
pub const F_AVERAGING: &str = "macro over the classes present in each fold's truth set";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {truths} truths")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("class {0} out of range")]
    ClassOutOfRange(usize),
    #[error("no predictions to score")]
    EmptyPredictions,
    #[error("test dataset is empty")]
    EmptyTestSet,
    #[error("dataset has no two-user samples; synthesize grouped data first")]
    NotPairData,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("fold {held_out}: {message}")]
    Fold { held_out: SubjectId, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lstm,
    Vae,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Vae => "vae",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Grouped,
    Pair,
}

impl DataKind {
    pub fn of(manifest: &DatasetManifest) -> Result<Self, EvalError> {
        match manifest.provenance {
            Provenance::Grouped => Ok(DataKind::Grouped),
            Provenance::Pair => Ok(DataKind::Pair),
            Provenance::Single => Err(EvalError::NotPairData),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DataKind::Grouped => "grouped",
            DataKind::Pair => "pair",
        }
    }
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Model and training settings for both families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub lstm: LstmConfig,
    pub lstm_train: TrainConfig,
    pub vae: VaeConfig,
    /// Self-supervised VAE stage.
    pub vae_train: TrainConfig,
    /// Softmax head on the frozen encoder.
    pub head_train: TrainConfig,
    /// Deterministic subsample of each fold's training set, when set.
    pub max_train_samples: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lstm: LstmConfig::default(),
            lstm_train: TrainConfig::default(),
            vae: VaeConfig::default(),
            vae_train: TrainConfig {
                epochs: 50,
                ..TrainConfig::default()
            },
            head_train: TrainConfig::default(),
            max_train_samples: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.lstm.validate()?;
        self.vae.validate()?;
        self.lstm_train.validate()?;
        self.vae_train.validate()?;
        self.head_train.validate()?;
        if self.max_train_samples == Some(0) {
            return Err(ModelError::Config("max_train_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Metrics of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub held_out: SubjectId,
    pub train_size: usize,
    pub test_size: usize,
    pub accuracy: f64,
    pub f_score: f64,
    /// Classes absent from this fold's truth set, left out of the F average.
    pub absent_classes: Vec<usize>,
    pub precision: [f64; NUM_CLASSES],
    pub recall: [f64; NUM_CLASSES],
    pub confusion: ConfusionMatrix,
    /// Scaled test coordinates outside the min-max source range.
    pub out_of_range: usize,
}

impl FoldReport {
    pub fn from_predictions(
        held_out: SubjectId,
        train_size: usize,
        preds: &[usize],
        truths: &[usize],
        out_of_range: usize,
    ) -> Result<Self, EvalError> {
        if truths.is_empty() {
            return Err(EvalError::EmptyPredictions);
        }
        let cm = ConfusionMatrix::from_predictions(preds, truths)?;
        Ok(Self {
            held_out,
            train_size,
            test_size: truths.len(),
            accuracy: cm.accuracy(),
            f_score: cm.macro_f1(),
            absent_classes: (0..NUM_CLASSES).filter(|&c| cm.row_sum(c) == 0).collect(),
            precision: std::array::from_fn(|c| cm.precision(c)),
            recall: std::array::from_fn(|c| cm.recall(c)),
            confusion: cm,
            out_of_range,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedFold {
    pub held_out: SubjectId,
    pub reason: String,
}

/// Identifies the inputs of an experiment in its report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportContext {
    pub config_hash: String,
    pub train_dataset: String,
    pub test_dataset: String,
}

/// Fold-level metrics reduced to mean and SD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub model: ModelKind,
    pub train_data: DataKind,
    pub test_data: DataKind,
    pub seed: u64,
    pub folds: usize,
    pub excluded: Vec<ExcludedFold>,
    pub accuracy: Option<MeanSd>,
    pub f_score: Option<MeanSd>,
    pub sd_formula: String,
    pub f_averaging: String,
    pub context: ReportContext,
}

impl AggregateReport {
    pub fn from_folds(
        model: ModelKind,
        train_data: DataKind,
        test_data: DataKind,
        seed: u64,
        folds: &[FoldReport],
        excluded: Vec<ExcludedFold>,
        context: ReportContext,
    ) -> Self {
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let fs: Vec<f64> = folds.iter().map(|f| f.f_score).collect();
        Self {
            model,
            train_data,
            test_data,
            seed,
            folds: folds.len(),
            excluded,
            accuracy: MeanSd::population(&acc),
            f_score: MeanSd::population(&fs),
            sd_formula: SD_FORMULA.into(),
            f_averaging: F_AVERAGING.into(),
            context,
        }
    }
}

/// Everything an experiment produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub aggregate: AggregateReport,
    pub folds: Vec<FoldReport>,
}

/// Seed of fold `i` derived from the experiment seed.
pub fn fold_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// At most `max` of `indices`, chosen reproducibly and kept in order.
pub fn subsample(indices: &[usize], max: Option<usize>, seed: u64) -> Vec<usize> {
    match max {
        Some(m) if indices.len() > m => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked: Vec<usize> = sample(&mut rng, indices.len(), m).into_iter().collect();
            picked.sort_unstable();
            picked.into_iter().map(|i| indices[i]).collect()
        }
        _ => indices.to_vec(),
    }
}

/// Trains one model of the requested family on labeled samples.
pub fn train_model(
    kind: ModelKind,
    train: &SampleSet,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(TrainedModel, TrainReport), ModelError> {
    match kind {
        ModelKind::Lstm => {
            let (m, r) = train_lstm_classifier(train, &config.lstm, &config.lstm_train, seed)?;
            Ok((TrainedModel::Lstm(m), r))
        }
        ModelKind::Vae => {
            let (vae, vr) = train_vae(train, &config.vae, &config.vae_train, seed)?;
            log::info!(
                "vae loss {:.4} -> {:.4}",
                vr.loss.initial_loss,
                vr.loss.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
            let (clf, r) = extract_transfer_classifier(&vae, train, &config.head_train, seed.wrapping_add(1))?;
            Ok((TrainedModel::Transfer(clf), r))
        }
    }
}

/// Folds of `manifest` split into those that can be trained and evaluated
/// and those flagged for an empty side.
pub fn plan_folds(manifest: &DatasetManifest, needs_test: bool) -> Result<(Vec<(usize, Fold)>, Vec<ExcludedFold>), EvalError> {
    let mut usable = Vec::new();
    let mut excluded = Vec::new();
    for (i, fold) in build_loso_folds(manifest)?.into_iter().enumerate() {
        let reason = if fold.train.is_empty() {
            Some("empty training set")
        } else if needs_test && fold.test.is_empty() {
            Some("empty test set")
        } else {
            None
        };
        match reason {
            Some(r) => {
                log::warn!("fold {}: {r}; excluded from aggregates", fold.held_out);
                excluded.push(ExcludedFold {
                    held_out: fold.held_out,
                    reason: r.into(),
                });
            }
            None => usable.push((i, fold)),
        }
    }
    Ok((usable, excluded))
}

/// Trains a model for every usable fold of `train`, handing each to `sink`.
pub fn train_folds<F>(
    train: &DatasetManifest,
    kind: ModelKind,
    config: &ExperimentConfig,
    seed: u64,
    needs_test: bool,
    mut sink: F,
) -> Result<Vec<ExcludedFold>, EvalError>
where
    F: FnMut(usize, &Fold, TrainedModel, TrainReport) -> Result<(), EvalError>,
{
    config.validate()?;
    let (usable, excluded) = plan_folds(train, needs_test)?;
    for (i, fold) in usable {
        let s = fold_seed(seed, i);
        let picked = subsample(&fold.train, config.max_train_samples, s);
        let (set, _) = SampleSet::from_manifest(train, &picked)?;
        log::info!(
            "fold {} ({}): training {kind} on {} samples",
            i + 1,
            fold.held_out,
            set.len()
        );
        let (model, report) = train_model(kind, &set, config, s).map_err(|e| EvalError::Fold {
            held_out: fold.held_out.clone(),
            message: e.to_string(),
        })?;
        sink(i, &fold, model, report)?;
    }
    Ok(excluded)
}

/// Scores a model on the given samples of `test`.
pub fn evaluate_model(
    model: &dyn Classifier,
    test: &DatasetManifest,
    indices: &[usize],
    held_out: SubjectId,
    train_size: usize,
) -> Result<FoldReport, EvalError> {
    if indices.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let (set, out_of_range) = SampleSet::from_manifest(test, indices)?;
    let preds = model.classify_set(&set)?;
    FoldReport::from_predictions(held_out, train_size, &preds, set.labels(), out_of_range)
}

/// Which samples each fold model is scored on.
#[derive(Debug, Clone, Copy)]
enum TestScope<'a> {
    /// The fold's own held-out samples.
    HeldOut,
    /// Every sample of another dataset.
    Whole(&'a DatasetManifest),
}

fn evaluate_folds<L>(
    train: &DatasetManifest,
    scope: TestScope<'_>,
    config: &ExperimentConfig,
    mut load: L,
) -> Result<(Vec<FoldReport>, Vec<ExcludedFold>), EvalError>
where
    L: FnMut(usize, &Fold) -> Result<TrainedModel, EvalError>,
{
    let needs_test = matches!(scope, TestScope::HeldOut);
    let (usable, excluded) = plan_folds(train, needs_test)?;
    let mut reports = Vec::with_capacity(usable.len());
    for (i, fold) in usable {
        let model = load(i, &fold)?;
        let train_size = config.max_train_samples.map_or(fold.train.len(), |m| m.min(fold.train.len()));
        let report = match scope {
            TestScope::HeldOut => evaluate_model(&model, train, &fold.test, fold.held_out.clone(), train_size)?,
            TestScope::Whole(test) => {
                let all: Vec<usize> = (0..test.len()).collect();
                evaluate_model(&model, test, &all, fold.held_out.clone(), train_size)?
            }
        };
        log::info!(
            "fold {} ({}): accuracy {:.3}, F {:.3}",
            i + 1,
            fold.held_out,
            report.accuracy,
            report.f_score
        );
        reports.push(report);
    }
    Ok((reports, excluded))
}

/// Evaluates previously trained fold models on their held-out samples.
pub fn evaluate_loso<L>(
    dataset: &DatasetManifest,
    kind: ModelKind,
    config: &ExperimentConfig,
    seed: u64,
    context: ReportContext,
    load: L,
) -> Result<ExperimentReport, EvalError>
where
    L: FnMut(usize, &Fold) -> Result<TrainedModel, EvalError>,
{
    let data = DataKind::of(dataset)?;
    let (folds, excluded) = evaluate_folds(dataset, TestScope::HeldOut, config, load)?;
    Ok(ExperimentReport {
        aggregate: AggregateReport::from_folds(kind, data, data, seed, &folds, excluded, context),
        folds,
    })
}

/// Evaluates previously trained fold models of `train` on all of `test`.
pub fn evaluate_cross<L>(
    train: &DatasetManifest,
    test: &DatasetManifest,
    kind: ModelKind,
    config: &ExperimentConfig,
    seed: u64,
    context: ReportContext,
    load: L,
) -> Result<ExperimentReport, EvalError>
where
    L: FnMut(usize, &Fold) -> Result<TrainedModel, EvalError>,
{
    train.check_compatible(test)?;
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let (train_kind, test_kind) = (DataKind::of(train)?, DataKind::of(test)?);
    let (folds, excluded) = evaluate_folds(train, TestScope::Whole(test), config, load)?;
    Ok(ExperimentReport {
        aggregate: AggregateReport::from_folds(kind, train_kind, test_kind, seed, &folds, excluded, context),
        folds,
    })
}

fn take_model(models: &mut [Option<TrainedModel>], i: usize, fold: &Fold) -> Result<TrainedModel, EvalError> {
    models
        .get_mut(i)
        .and_then(Option::take)
        .ok_or_else(|| EvalError::Fold {
            held_out: fold.held_out.clone(),
            message: "no trained model".into(),
        })
}

/// Train and test on the same dataset, one fold per subject.
pub fn run_loso(
    dataset: &DatasetManifest,
    kind: ModelKind,
    config: &ExperimentConfig,
    seed: u64,
    context: ReportContext,
) -> Result<ExperimentReport, EvalError> {
    DataKind::of(dataset)?;
    let mut models: Vec<Option<TrainedModel>> = vec![None; dataset.subjects.len()];
    train_folds(dataset, kind, config, seed, true, |i, _, m, _| {
        models[i] = Some(m);
        Ok(())
    })?;
    evaluate_loso(dataset, kind, config, seed, context, |i, f| take_model(&mut models, i, f))
}

/// Train per fold on `train`, test every fold model on all of `test`.
pub fn run_cross(
    train: &DatasetManifest,
    test: &DatasetManifest,
    kind: ModelKind,
    config: &ExperimentConfig,
    seed: u64,
    context: ReportContext,
) -> Result<ExperimentReport, EvalError> {
    train.check_compatible(test)?;
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    DataKind::of(train)?;
    let mut models: Vec<Option<TrainedModel>> = vec![None; train.subjects.len()];
    train_folds(train, kind, config, seed, false, |i, _, m, _| {
        models[i] = Some(m);
        Ok(())
    })?;
    evaluate_cross(train, test, kind, config, seed, context, |i, f| take_model(&mut models, i, f))
}
