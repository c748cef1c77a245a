//! Confusion matrices, macro-averaged metrics and cross-validation summaries.

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{self, ClassifierSpec};
use crate::dataset::{Dataset, FoldPlan};
use crate::error::{Error, Result};

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|c| self.counts[c][c]).sum()
    }

    /// `(tp, fp, fn, tn)` of class `c` against the rest.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[c][c];
        let actual: u64 = self.counts[c].iter().sum();
        let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
        let fp = predicted - tp;
        let fn_ = actual - tp;
        let tn = self.total() - tp - fp - fn_;
        (tp, fp, fn_, tn)
    }
}

pub fn confusion(actual: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::validation(format!(
            "{} actual labels vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&a, &p) in actual.iter().zip(predicted) {
        if a >= n_classes || p >= n_classes {
            return Err(Error::validation(format!(
                "label pair ({a}, {p}) outside {n_classes} classes"
            )));
        }
        counts[a][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f_score: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus per-class precision, recall and F-score averaged with equal
/// class weight. A zero denominator makes that class contribute 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 || cm.n_classes() == 0 {
        return Err(Error::validation("confusion matrix is empty"));
    }
    let c = cm.n_classes();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for k in 0..c {
        let (tp, fp, fn_, _) = cm.one_vs_rest(k);
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    Ok(MetricReport {
        accuracy: ratio(cm.trace(), total),
        macro_precision: p_sum / c as f64,
        macro_recall: r_sum / c as f64,
        macro_f_score: f_sum / c as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }

    /// `"93.55 (+/- 4.12)"`, in percent.
    pub fn percent(&self) -> String {
        format!("{:.2} (+/- {:.2})", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub round: usize,
    pub fold: usize,
    pub n_test: usize,
    pub n_correct: usize,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFold {
    pub round: usize,
    pub fold: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f_score: MeanStd,
    pub fold_results: Vec<FoldResult>,
    pub skipped: Vec<SkippedFold>,
}

impl CvSummary {
    pub fn from_folds(fold_results: Vec<FoldResult>, skipped: Vec<SkippedFold>) -> Result<Self> {
        if fold_results.is_empty() {
            return Err(Error::validation("every cross-validation fold was skipped"));
        }
        let col = |f: fn(&MetricReport) -> f64| {
            MeanStd::of(&fold_results.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
        };
        Ok(CvSummary {
            accuracy: col(|m| m.accuracy),
            precision: col(|m| m.macro_precision),
            recall: col(|m| m.macro_recall),
            f_score: col(|m| m.macro_f_score),
            fold_results,
            skipped,
        })
    }
}

/// Scores `spec` on the dataset projected onto `genes` over every split of
/// `plan`. Folds whose training part lacks a class are skipped and listed.
pub fn cross_validate(
    genes: &[usize],
    ds: &Dataset,
    spec: &ClassifierSpec,
    plan: &FoldPlan,
) -> Result<CvSummary> {
    if plan.n_samples() != ds.n_samples() {
        return Err(Error::validation(format!(
            "fold plan covers {} samples, dataset has {}",
            plan.n_samples(),
            ds.n_samples()
        )));
    }
    let projected = ds.project(genes)?;
    let x = projected.values();
    let labels = projected.labels();
    let c = projected.n_classes();

    let outcomes: Vec<Result<std::result::Result<FoldResult, SkippedFold>>> = plan
        .splits()
        .into_par_iter()
        .map(|split| {
            let train_y: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
            let mut present = vec![false; c];
            train_y.iter().for_each(|&y| present[y] = true);
            if let Some(missing) = present.iter().position(|p| !p) {
                return Ok(Err(SkippedFold {
                    round: split.round,
                    fold: split.fold,
                    reason: format!("training part has no samples of class {missing}"),
                }));
            }
            let train_x = x.select(Axis(0), &split.train);
            let test_x = x.select(Axis(0), split.test);
            let test_y: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
            let mut spec = spec.clone();
            spec.knn_k = spec.knn_k.min(split.train.len());
            let model = classifiers::fit(&spec, train_x.view(), &train_y, c)?;
            let pred = model.predict(test_x.view())?;
            let cm = confusion(&test_y, &pred, c)?;
            Ok(Ok(FoldResult {
                round: split.round,
                fold: split.fold,
                n_test: test_y.len(),
                n_correct: cm.trace() as usize,
                metrics: metrics(&cm)?,
            }))
        })
        .collect();

    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o? {
            Ok(f) => folds.push(f),
            Err(s) => skipped.push(s),
        }
    }
    CvSummary::from_folds(folds, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 1], &[0, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0], vec![0, 1]]);
        let cm = confusion(&[1, 1], &[0, 0], 2).unwrap();
        assert_eq!(cm.counts[1][0], 2);
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        let a = [0, 1, 2, 2, 1, 0, 0, 1, 2, 0];
        let p = [2, 1, 0, 2, 1, 1, 0, 0, 2, 0];
        assert_eq!(confusion(&a, &p, 3).unwrap().total(), 10);
    }

    #[test]
    fn binary_worked_example() {
        // TP=3 FN=1 FP=1 TN=5 with class 1 positive.
        let cm = ConfusionMatrix {
            counts: vec![vec![5, 1], vec![1, 3]],
        };
        let r = metrics(&cm).unwrap();
        assert!((r.accuracy - 0.8).abs() < 1e-15);
        let expected_p = (0.75 + 5.0 / 6.0) / 2.0;
        assert!((r.macro_precision - expected_p).abs() < 1e-15);
        assert!((r.macro_precision - 0.7917).abs() < 1e-4);
        assert!((r.macro_recall - expected_p).abs() < 1e-15);
    }

    #[test]
    fn diagonal_is_perfect() {
        let cm = ConfusionMatrix {
            counts: vec![vec![4, 0, 0], vec![0, 2, 0], vec![0, 0, 7]],
        };
        let r = metrics(&cm).unwrap();
        assert_eq!(
            r,
            MetricReport {
                accuracy: 1.0,
                macro_precision: 1.0,
                macro_recall: 1.0,
                macro_f_score: 1.0
            }
        );
    }

    #[test]
    fn absent_class_contributes_zero() {
        let cm = ConfusionMatrix {
            counts: vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 0]],
        };
        let r = metrics(&cm).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!((r.macro_precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.macro_f_score - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_matrix_rejected() {
        let cm = ConfusionMatrix {
            counts: vec![vec![0, 0], vec![0, 0]],
        };
        assert!(metrics(&cm).is_err());
    }

    #[test]
    fn percent_format() {
        let s = MeanStd { mean: 1.0, std: 0.0 };
        assert_eq!(s.percent(), "100.00 (+/- 0.00)");
    }
}
