use super::{DatasetError, DatasetManifest};
use crate::skeleton::SubjectId;

/// One leave-one-subject-out split, as sample indices into the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub held_out: SubjectId,
    /// Samples that do not involve `held_out` at all.
    pub train: Vec<usize>,
    /// Samples where `held_out` is either user.
    pub test: Vec<usize>,
}

pub fn build_loso_folds(manifest: &DatasetManifest) -> Result<Vec<Fold>, DatasetError> {
    if manifest.subjects.len() < 2 {
        return Err(DatasetError::TooFewSubjects(manifest.subjects.len()));
    }
    Ok(manifest
        .subjects
        .iter()
        .map(|s| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..manifest.len()).partition(|&i| {
                let (a, b) = manifest.sample_subjects(i);
                a == s || b == s
            });
            Fold {
                held_out: s.clone(),
                train,
                test,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{pair_windows, slide_windows, PoseSequence, PreprocessParams, Provenance, WindowParams};
    use crate::skeleton::{ActivityState, NormalizedPose};

    fn manifest(subjects: &[&str]) -> DatasetManifest {
        let p = WindowParams::new(2, 2).unwrap();
        let windows: Vec<_> = subjects
            .iter()
            .flat_map(|s| {
                slide_windows(
                    &PoseSequence {
                        recording: s.to_string(),
                        subject: SubjectId::new(*s),
                        state: ActivityState::Working,
                        poses: vec![NormalizedPose::from_rows([[0.0; 3]; 10]); 4],
                    },
                    &p,
                )
            })
            .collect();
        let samples = pair_windows(&windows);
        DatasetManifest::new(
            PreprocessParams {
                window: p,
                ..Default::default()
            },
            Provenance::Grouped,
            windows,
            samples,
        )
    }

    #[test]
    fn one_fold_per_subject_and_disjoint() {
        let names: Vec<String> = (0..11).map(|i| format!("S{i:02}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let m = manifest(&refs);
        let folds = build_loso_folds(&m).unwrap();
        assert_eq!(folds.len(), 11);
        for f in &folds {
            for &i in &f.train {
                let (a, b) = m.sample_subjects(i);
                assert!(a != &f.held_out && b != &f.held_out);
            }
            for &i in &f.test {
                let (a, b) = m.sample_subjects(i);
                assert!(a == &f.held_out || b == &f.held_out);
            }
            assert_eq!(f.train.len() + f.test.len(), m.len());
        }
    }

    #[test]
    fn two_subjects_leave_empty_train() {
        let m = manifest(&["A", "B"]);
        let folds = build_loso_folds(&m).unwrap();
        assert_eq!(folds.len(), 2);
        assert!(folds.iter().all(|f| f.train.is_empty() && f.test.len() == m.len()));
    }

    #[test]
    fn single_subject_is_an_error() {
        assert!(matches!(
            build_loso_folds(&manifest(&["A"])),
            Err(DatasetError::TooFewSubjects(1))
        ));
    }
}
