use serde::{Deserialize, Serialize};

use crate::error::{KalmError, Result};

/// Classification metrics derived from a confusion matrix whose rows are true
/// classes and columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub balanced_acc: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub confusion: Vec<Vec<usize>>,
    /// Classes with no true example; their recall counts as 0.
    pub absent_classes: Vec<usize>,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|r| r.len() != c) {
            return Err(KalmError::Input("confusion matrix must be square and non-empty".into()));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(KalmError::Input("confusion matrix is empty".into()));
        }
        let correct: usize = (0..c).map(|i| confusion[i][i]).sum();
        let mut precision = vec![0.0; c];
        let mut recall = vec![0.0; c];
        let mut f1 = vec![0.0; c];
        let mut absent = Vec::new();
        for k in 0..c {
            let tp = confusion[k][k] as f64;
            let actual: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|r| r[k]).sum();
            if actual == 0 {
                absent.push(k);
                log::warn!("class {k} is absent from the evaluated split; its recall counts as 0");
            } else {
                recall[k] = tp / actual as f64;
            }
            if predicted > 0 {
                precision[k] = tp / predicted as f64;
            }
            if precision[k] + recall[k] > 0.0 {
                f1[k] = 2.0 * precision[k] * recall[k] / (precision[k] + recall[k]);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / c as f64;
        let acc = correct as f64 / total as f64;
        Ok(Self {
            acc,
            balanced_acc: mean(&recall),
            macro_f1: mean(&f1),
            micro_f1: acc,
            macro_precision: mean(&precision),
            macro_recall: mean(&recall),
            confusion,
            absent_classes: absent,
        })
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize], n_classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(KalmError::Input("labels and predictions differ in length".into()));
        }
        let mut conf = vec![vec![0; n_classes]; n_classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= n_classes || p >= n_classes {
                return Err(KalmError::Input(format!("class id out of range 0..{n_classes}")));
            }
            conf[y][p] += 1;
        }
        Self::from_confusion(conf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = Metrics::from_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        for v in [m.acc, m.balanced_acc, m.macro_f1, m.micro_f1, m.macro_precision, m.macro_recall] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn balanced_accuracy_from_confusion() {
        let m = Metrics::from_confusion(vec![vec![8, 2], vec![4, 6]]).unwrap();
        assert!((m.balanced_acc - 0.7).abs() < 1e-15);
        assert!((m.acc - 0.7).abs() < 1e-15);
        // precision 8/12 and 6/8, recall 0.8 and 0.6
        let f0 = 2.0 * (8.0 / 12.0) * 0.8 / (8.0 / 12.0 + 0.8);
        let f1 = 2.0 * 0.75 * 0.6 / (0.75 + 0.6);
        assert!((m.macro_f1 - (f0 + f1) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_has_zero_recall() {
        let m = Metrics::from_predictions(&[0, 0], &[0, 1], 2).unwrap();
        assert_eq!(m.absent_classes, vec![1]);
        assert!((m.balanced_acc - 0.25).abs() < 1e-15);
    }
}
