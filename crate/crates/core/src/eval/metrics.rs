use super::EvalError;
use crate::skeleton::NUM_CLASSES;
use serde::{Deserialize, Serialize};

pub type Matrix = [[usize; NUM_CLASSES]; NUM_CLASSES];

/// `counts[truth][pred]` over the nine pair classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Matrix,
}

fn check_lengths(preds: &[usize], truths: &[usize]) -> Result<(), EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if let Some(&c) = preds.iter().chain(truths).find(|&&c| c >= NUM_CLASSES) {
        return Err(EvalError::ClassOutOfRange(c));
    }
    Ok(())
}

impl ConfusionMatrix {
    pub fn from_predictions(preds: &[usize], truths: &[usize]) -> Result<Self, EvalError> {
        check_lengths(preds, truths)?;
        let mut counts = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (&p, &t) in preds.iter().zip(truths) {
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`; zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn row_sum(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn column_sum(&self, class: usize) -> usize {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// Each cell divided by its row sum. Empty rows stay zero and their
    /// classes are returned.
    pub fn row_normalized(&self) -> ([[f64; NUM_CLASSES]; NUM_CLASSES], Vec<usize>) {
        let mut out = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        let mut empty = Vec::new();
        for (i, row) in self.counts.iter().enumerate() {
            let sum = self.row_sum(i);
            if sum == 0 {
                empty.push(i);
                continue;
            }
            for (o, &c) in out[i].iter_mut().zip(row) {
                *o = c as f64 / sum as f64;
            }
        }
        (out, empty)
    }

    /// Precision of a class; zero when the class was never predicted.
    pub fn precision(&self, class: usize) -> f64 {
        match self.column_sum(class) {
            0 => 0.0,
            n => self.counts[class][class] as f64 / n as f64,
        }
    }

    /// Recall of a class; zero when the class never occurs.
    pub fn recall(&self, class: usize) -> f64 {
        match self.row_sum(class) {
            0 => 0.0,
            n => self.counts[class][class] as f64 / n as f64,
        }
    }

    pub fn f1(&self, class: usize) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Classes that occur in the truth set.
    pub fn present_classes(&self) -> Vec<usize> {
        (0..NUM_CLASSES).filter(|&c| self.row_sum(c) > 0).collect()
    }

    /// Mean F1 over the classes present in the truth set; zero when there
    /// are none.
    pub fn macro_f1(&self) -> f64 {
        let present = self.present_classes();
        if present.is_empty() {
            return 0.0;
        }
        present.iter().map(|&c| self.f1(c)).sum::<f64>() / present.len() as f64
    }
}

/// Macro-averaged F1 over the classes present in `truths`.
pub fn f_score(preds: &[usize], truths: &[usize]) -> Result<f64, EvalError> {
    if truths.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    Ok(ConfusionMatrix::from_predictions(preds, truths)?.macro_f1())
}

pub fn accuracy(preds: &[usize], truths: &[usize]) -> Result<f64, EvalError> {
    if truths.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    Ok(ConfusionMatrix::from_predictions(preds, truths)?.accuracy())
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// `None` for an empty slice.
    pub fn population(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, sd: var.sqrt() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_example() {
        let cm = ConfusionMatrix::from_predictions(&[0, 1, 1], &[0, 0, 1]).unwrap();
        let (rows, empty) = cm.row_normalized();
        assert_eq!(rows[0][..3], [0.5, 0.5, 0.0]);
        assert_eq!(rows[1][..3], [0.0, 1.0, 0.0]);
        assert_eq!(empty, (2..9).collect::<Vec<_>>());
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn all_correct_is_identity() {
        let t: Vec<usize> = (0..9).collect();
        let (rows, empty) = ConfusionMatrix::from_predictions(&t, &t).unwrap().row_normalized();
        assert!(empty.is_empty());
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn f_score_example() {
        let f = f_score(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(f_score(&[3, 4], &[3, 4]).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            f_score(&[0], &[0, 1]),
            Err(EvalError::LengthMismatch { preds: 1, truths: 2 })
        ));
        assert!(matches!(f_score(&[], &[]), Err(EvalError::EmptyPredictions)));
    }

    #[test]
    fn identical_values_have_zero_sd() {
        let s = MeanSd::population(&[0.7; 5]).unwrap();
        assert!((s.mean - 0.7).abs() < 1e-15);
        assert!(s.sd < 1e-15);
        let s = MeanSd::population(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.sd), (2.0, 1.0));
    }
}
