use serde::{Deserialize, Serialize};

use super::{Labels, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    /// Percent.
    pub emotion_acc: f64,
    /// Percent.
    pub gender_acc: f64,
    /// Years.
    pub age_rmse: f64,
    /// Rows are true classes, columns predicted classes.
    pub emotion_confusion: Vec<Vec<usize>>,
}

/// Scores `(emotion, gender, age_years)` predictions against labels.
pub fn score(preds: &[(usize, usize, f64)], labels: &[Labels], n_emotions: usize) -> Result<EvalReport, ModelError> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(ModelError::EmptyEvaluation);
    }
    let n = preds.len();
    let mut confusion = vec![vec![0; n_emotions]; n_emotions];
    let (mut emo_ok, mut gen_ok, mut sq) = (0usize, 0usize, 0.0);
    for (&(e, g, age), l) in preds.iter().zip(labels) {
        emo_ok += usize::from(e == l.emotion);
        gen_ok += usize::from(g == l.gender);
        sq += (age - l.age_years).powi(2);
        confusion[l.emotion][e] += 1;
    }
    Ok(EvalReport {
        n,
        emotion_acc: emo_ok as f64 / n as f64 * 100.0,
        gender_acc: gen_ok as f64 / n as f64 * 100.0,
        age_rmse: (sq / n as f64).sqrt(),
        emotion_confusion: confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(emotion: usize, gender: usize, age_years: f64) -> Labels {
        Labels {
            emotion,
            gender,
            age_years,
        }
    }

    #[test]
    fn gender_accuracy() {
        // M=1, F=0
        let preds = [(0, 1, 30.0), (0, 1, 30.0), (0, 0, 30.0), (0, 0, 30.0)];
        let labels = [l(0, 1, 30.0), l(0, 0, 30.0), l(0, 0, 30.0), l(0, 0, 30.0)];
        assert_eq!(score(&preds, &labels, 6).unwrap().gender_acc, 75.0);
    }

    #[test]
    fn age_rmse() {
        let r = score(&[(0, 0, 60.0), (0, 0, 50.0)], &[l(0, 0, 58.0), l(0, 0, 54.0)], 6).unwrap();
        assert!((r.age_rmse - 10f64.sqrt()).abs() < 1e-12);
        assert!((r.age_rmse - 3.1623).abs() < 1e-4);
    }

    #[test]
    fn confusion_rows_sum_to_support() {
        let labels = [l(0, 0, 1.0), l(0, 0, 1.0), l(3, 0, 1.0), l(5, 1, 1.0), l(5, 1, 1.0), l(5, 1, 1.0)];
        let preds = [(0, 0, 1.0), (2, 0, 1.0), (3, 0, 1.0), (5, 1, 1.0), (1, 1, 1.0), (5, 0, 1.0)];
        let r = score(&preds, &labels, 6).unwrap();
        let support = [2, 0, 0, 1, 0, 3];
        for (row, s) in r.emotion_confusion.iter().zip(support) {
            assert_eq!(row.iter().sum::<usize>(), s);
        }
        assert_eq!(r.emotion_confusion[5][5], 2);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [l(1, 0, 22.0), l(4, 1, 67.0)];
        let preds: Vec<_> = labels.iter().map(|l| (l.emotion, l.gender, l.age_years)).collect();
        let r = score(&preds, &labels, 6).unwrap();
        assert_eq!((r.emotion_acc, r.gender_acc, r.age_rmse), (100.0, 100.0, 0.0));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(score(&[], &[], 6).is_err());
    }
}
