use super::{AggregateReport, DataKind, FoldReport, MeanSd, ModelKind};
use crate::skeleton::{decode_pair_label, NUM_CLASSES};
use serde::Serialize;
use std::fmt::Write;

/// Published results of the six experiments, as
/// `(model, train, test, accuracy mean, accuracy SD, F mean, F SD)`.
pub const REFERENCE_ROWS: [(ModelKind, DataKind, DataKind, f64, f64, f64, f64); 6] = [
    (ModelKind::Lstm, DataKind::Pair, DataKind::Pair, 0.548, 0.139, 0.676, 0.116),
    (ModelKind::Lstm, DataKind::Grouped, DataKind::Grouped, 0.786, 0.085, 0.776, 0.094),
    (ModelKind::Lstm, DataKind::Grouped, DataKind::Pair, 0.615, 0.111, 0.584, 0.115),
    (ModelKind::Vae, DataKind::Pair, DataKind::Pair, 0.614, 0.114, 0.586, 0.119),
    (ModelKind::Vae, DataKind::Grouped, DataKind::Grouped, 0.864, 0.110, 0.996, 0.002),
    (ModelKind::Vae, DataKind::Grouped, DataKind::Pair, 0.616, 0.029, 0.594, 0.027),
];

/// Half-width of the informational band around the reference accuracy of
/// grouped-trained, pair-tested models.
pub const CROSS_BAND: f64 = 0.15;

fn class_name(c: usize) -> String {
    let (l, r) = decode_pair_label(c).expect("class index in range");
    format!("{}{}", l.letter(), r.letter())
}

fn fmt_stat(s: Option<MeanSd>) -> (String, String) {
    match s {
        Some(s) => (format!("{:.3}", s.mean), format!("{:.3}", s.sd)),
        None => ("-".into(), "-".into()),
    }
}

/// Aligned plain-text table, one row per experiment.
pub fn text_table(reports: &[AggregateReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:<8} {:<8} {:>8} {:>8} {:>8} {:>8} {:>6}",
        "model", "train", "test", "acc", "acc_sd", "f", "f_sd", "folds"
    );
    for r in reports {
        let (am, asd) = fmt_stat(r.accuracy);
        let (fm, fsd) = fmt_stat(r.f_score);
        let _ = writeln!(
            out,
            "{:<6} {:<8} {:<8} {:>8} {:>8} {:>8} {:>8} {:>6}",
            r.model.name(),
            r.train_data.name(),
            r.test_data.name(),
            am,
            asd,
            fm,
            fsd,
            r.folds
        );
    }
    let _ = writeln!(out, "SD: {}; F: {}", super::SD_FORMULA, super::F_AVERAGING);
    out
}

/// Confusion counts of one fold as CSV; rows are truths, columns predictions.
pub fn confusion_csv(fold: &FoldReport) -> String {
    let mut out = String::from("truth\\pred");
    for c in 0..NUM_CLASSES {
        let _ = write!(out, ",{}", class_name(c));
    }
    out.push('\n');
    for (t, row) in fold.confusion.counts.iter().enumerate() {
        out.push_str(&class_name(t));
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// One line of the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub model: ModelKind,
    pub train_data: DataKind,
    pub test_data: DataKind,
    pub accuracy: Option<MeanSd>,
    pub f_score: Option<MeanSd>,
    pub reference_accuracy: f64,
    pub reference_f_score: f64,
    /// For grouped-trained, pair-tested rows that were run: whether the
    /// accuracy lies within the band around the reference. Informational.
    pub within_reference_band: Option<bool>,
}

/// All six (model, train, test) experiments, filled from whatever reports
/// exist; the last report for a cell wins.
pub fn experiment_grid(reports: &[AggregateReport]) -> (Vec<GridRow>, String) {
    let rows: Vec<GridRow> = REFERENCE_ROWS
        .iter()
        .map(|&(model, train_data, test_data, ref_acc, _, ref_f, _)| {
            let found = reports
                .iter()
                .rev()
                .find(|r| r.model == model && r.train_data == train_data && r.test_data == test_data);
            let accuracy = found.and_then(|r| r.accuracy);
            let band = (train_data == DataKind::Grouped && test_data == DataKind::Pair)
                .then(|| accuracy.map(|a| (a.mean - ref_acc).abs() <= CROSS_BAND))
                .flatten();
            GridRow {
                model,
                train_data,
                test_data,
                accuracy,
                f_score: found.and_then(|r| r.f_score),
                reference_accuracy: ref_acc,
                reference_f_score: ref_f,
                within_reference_band: band,
            }
        })
        .collect();

    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<6} {:<8} {:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}  {}",
        "model", "train", "test", "acc", "acc_sd", "f", "f_sd", "ref_acc", "ref_f", "band"
    );
    for r in &rows {
        let (am, asd) = fmt_stat(r.accuracy);
        let (fm, fsd) = fmt_stat(r.f_score);
        let band = match r.within_reference_band {
            Some(true) => "within",
            Some(false) => "outside",
            None => "",
        };
        let _ = writeln!(
            text,
            "{:<6} {:<8} {:<8} {:>8} {:>8} {:>8} {:>8} {:>8.3} {:>8.3}  {}",
            r.model.name(),
            r.train_data.name(),
            r.test_data.name(),
            am,
            asd,
            fm,
            fsd,
            r.reference_accuracy,
            r.reference_f_score,
            band
        );
    }
    let _ = writeln!(
        text,
        "band: grouped->pair accuracy within ±{CROSS_BAND} of the reference (informational only)"
    );
    (rows, text)
}
