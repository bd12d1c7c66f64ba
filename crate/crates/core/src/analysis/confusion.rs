use serde::{Deserialize, Serialize};

use super::{AnalysisError, QdaModel, Result};
use crate::cohort::ClassLabel;

/// Rows are true labels, columns predicted labels, both in `classes` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<ClassLabel>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(classes: Vec<ClassLabel>, truth: &[ClassLabel], predicted: &[ClassLabel]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(AnalysisError::LabelCount {
                samples: predicted.len(),
                labels: truth.len(),
            });
        }
        let k = classes.len();
        let mut counts = vec![vec![0; k]; k];
        let find = |l: &ClassLabel| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| AnalysisError::UnknownClass(l.clone()))
        };
        for (t, p) in truth.iter().zip(predicted) {
            counts[find(t)?][find(p)?] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let hits: usize = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        ratio(hits, self.total())
    }

    /// Zero when the class was never predicted.
    pub fn precision(&self, class: usize) -> f64 {
        let predicted: usize = self.counts.iter().map(|row| row[class]).sum();
        ratio(self.counts[class][class], predicted)
    }

    /// Zero when the class never occurs.
    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.counts[class].iter().sum())
    }

    pub fn f1(&self, class: usize) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn macro_average(&self, f: impl Fn(usize) -> f64) -> f64 {
        let k = self.classes.len();
        (0..k).map(f).sum::<f64>() / k as f64
    }

    pub fn macro_precision(&self) -> f64 {
        self.macro_average(|c| self.precision(c))
    }

    pub fn macro_recall(&self) -> f64 {
        self.macro_average(|c| self.recall(c))
    }

    pub fn macro_f1(&self) -> f64 {
        self.macro_average(|c| self.f1(c))
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn confusion_matrix(model: &QdaModel, samples: &[Vec<f64>], labels: &[ClassLabel]) -> Result<ConfusionMatrix> {
    let predicted: Vec<ClassLabel> = samples
        .iter()
        .map(|z| Ok(model.classify(z)?.label))
        .collect::<Result<_>>()?;
    ConfusionMatrix::from_predictions(model.classes.clone(), labels, &predicted)
}
