//! Confusion matrices and the accuracy / precision / recall / F1 suite.

use std::fmt::Write as _;

use crate::data::Volume;
use crate::error::{bail, Result};
use crate::model::HcctModel;
use crate::tensor::Real;

/// Counts indexed `[true class][predicted class]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

/// How per-class metrics are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Averaging {
    /// Weighted by true-class support.
    #[default]
    Weighted,
    /// Unweighted mean over classes.
    Macro,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
            class_names: (0..num_classes).map(|k| format!("class_{k}")).collect(),
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if counts.iter().any(|row| row.len() != c) {
            bail!(Dimension, "confusion matrix must be square");
        }
        let mut cm = Self::new(c);
        cm.counts = counts;
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let c = self.num_classes();
        if truth >= c || predicted >= c {
            bail!(Contract, "class pair ({truth}, {predicted}) outside {c} classes");
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|k| self.counts[k][k]).sum()
    }

    fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    fn predicted(&self, k: usize) -> u64 {
        self.counts.iter().map(|row| row[k]).sum()
    }

    /// Rows are true classes, columns predictions.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Accuracy plus averaged precision, recall and F1.
///
/// A class that is never predicted contributes precision 0 (and F1 0).
/// Weighted terms are accumulated as `support * num / den`, which is an
/// integer whenever `den == support`; weighted recall therefore equals
/// accuracy exactly.
pub fn summarize(cm: &ConfusionMatrix, averaging: Averaging) -> Result<Summary> {
    let total = cm.total();
    if total == 0 {
        bail!(Contract, "cannot summarise an empty confusion matrix");
    }
    let c = cm.num_classes();
    let ratio = |num: u64, den: u64, weight: u64| -> f64 {
        if den == 0 {
            0.0
        } else {
            (weight * num) as f64 / den as f64
        }
    };
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for k in 0..c {
        let tp = cm.counts[k][k];
        let support = cm.support(k);
        let predicted = cm.predicted(k);
        let weight = match averaging {
            Averaging::Weighted => support,
            Averaging::Macro => 1,
        };
        precision += ratio(tp, predicted, weight);
        recall += ratio(tp, support, weight);
        f1 += ratio(2 * tp, predicted + support, weight);
    }
    let norm = match averaging {
        Averaging::Weighted => total as f64,
        Averaging::Macro => c as f64,
    };
    Ok(Summary {
        accuracy: cm.trace() as f64 / total as f64,
        precision: precision / norm,
        recall: recall / norm,
        f1: f1 / norm,
    })
}

impl Summary {
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\naccuracy,{}\nprecision,{}\nrecall,{}\nf1,{}\n",
            self.accuracy, self.precision, self.recall, self.f1
        )
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ] {
            let _ = writeln!(out, "{name:<10} {v:.4}");
        }
        out
    }
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<F: Real>(logits: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode predictions, one volume at a time.
pub fn predict<F: Real>(model: &HcctModel<F>, volumes: &[Volume]) -> Result<Vec<usize>> {
    let _guard = crate::tensor::no_grad();
    volumes
        .iter()
        .map(|v| {
            let out = model.infer(&v.to_input(), false)?;
            Ok(argmax(out.logits.data()))
        })
        .collect()
}

pub fn evaluate<F: Real>(model: &HcctModel<F>, volumes: &[Volume]) -> Result<ConfusionMatrix> {
    if volumes.is_empty() {
        bail!(Contract, "cannot evaluate on an empty split");
    }
    let mut cm = ConfusionMatrix::new(model.config.num_classes);
    for (v, p) in volumes.iter().zip(predict(model, volumes)?) {
        let Some(label) = v.label else {
            bail!(Contract, "volume {} has no label", v.source_id);
        };
        cm.record(label, p)?;
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_matrix() {
        let cm = ConfusionMatrix::from_counts(vec![vec![5, 0], vec![0, 5]]).unwrap();
        let s = summarize(&cm, Averaging::Weighted).unwrap();
        assert_eq!((s.accuracy, s.precision, s.recall, s.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn symmetric_errors() {
        let cm = ConfusionMatrix::from_counts(vec![vec![2, 1], vec![1, 2]]).unwrap();
        let s = summarize(&cm, Averaging::Weighted).unwrap();
        assert_eq!(s.accuracy, 4.0 / 6.0);
        assert_eq!(s.recall, s.accuracy);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unpredicted_class_takes_zero_precision() {
        // everything predicted as class 0
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 0], vec![1, 0]]).unwrap();
        let s = summarize(&cm, Averaging::Weighted).unwrap();
        assert_eq!(s.precision, 3.0 * 0.75 / 4.0);
        let m = summarize(&cm, Averaging::Macro).unwrap();
        assert_eq!(m.precision, 0.75 / 2.0);
        assert_eq!(m.recall, 0.5);
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(summarize(&ConfusionMatrix::new(3), Averaging::Weighted).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0f64, 0.0]), 0);
    }

    #[test]
    fn csv_layout() {
        let cm = ConfusionMatrix::from_counts(vec![vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(cm.to_csv(), "true\\predicted,class_0,class_1\nclass_0,1,2\nclass_1,3,4\n");
    }
}
