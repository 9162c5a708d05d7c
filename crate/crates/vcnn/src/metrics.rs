//! Classification metrics over the three age cohorts: confusion matrices,
//! row normalization, and one-vs-rest precision/recall/F1 with macro
//! averages. Zero denominators surface as `None` ("undefined"), never as a
//! silent zero.

use crate::error::{Error, Result};
use crate::model::CLASS_NAMES;

const K: usize = 3;

/// 3x3 confusion matrix; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; K]; K],
    class_names: [String; K],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; K]; K]) -> Self {
        Self {
            counts,
            class_names: CLASS_NAMES.map(|s| s.to_string()),
        }
    }

    pub fn counts(&self) -> &[[u64; K]; K] {
        &self.counts
    }

    pub fn class_names(&self) -> &[String; K] {
        &self.class_names
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }
}

/// Builds the confusion matrix of paired label lists.
pub fn confusion(true_labels: &[usize], predicted_labels: &[usize]) -> Result<ConfusionMatrix> {
    if true_labels.is_empty() {
        return Err(Error::Argument("confusion requires at least one sample".into()));
    }
    if true_labels.len() != predicted_labels.len() {
        return Err(Error::Argument(format!(
            "{} true labels vs {} predictions",
            true_labels.len(),
            predicted_labels.len()
        )));
    }
    let mut counts = [[0u64; K]; K];
    for (&t, &p) in true_labels.iter().zip(predicted_labels) {
        if t >= K || p >= K {
            return Err(Error::Argument(format!(
                "labels must be in 0..{K}, got true {t} / predicted {p}"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix::from_counts(counts))
}

/// Row-normalized matrix: each row divided by its sum. A zero row is an
/// error naming the class.
pub fn normalize(cm: &ConfusionMatrix) -> Result<[[f64; K]; K]> {
    let mut out = [[0.0f64; K]; K];
    for i in 0..K {
        let row_sum: u64 = cm.counts[i].iter().sum();
        if row_sum == 0 {
            return Err(Error::Argument(format!(
                "class \"{}\" has no samples; its normalized row is undefined",
                cm.class_names[i]
            )));
        }
        for j in 0..K {
            out[i][j] = cm.counts[i][j] as f64 / row_sum as f64;
        }
    }
    Ok(out)
}

/// One-vs-rest counts and derived metrics for one class. `None` marks an
/// undefined metric (zero denominator).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: String,
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    /// Multiclass accuracy: trace over total.
    pub accuracy: f64,
    /// Unweighted mean of per-class recalls; `None` if any is undefined.
    pub macro_sensitivity: Option<f64>,
    /// Unweighted mean of per-class TN/(TN+FP); `None` if any is undefined.
    pub macro_specificity: Option<f64>,
}

/// Per-class one-vs-rest metrics: precision = TP/(TP+FP),
/// recall = TP/(TP+FN), F1 = 2PR/(P+R).
pub fn per_class(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("empty confusion matrix".into()));
    }

    let ratio = |num: u64, den: u64| -> Option<f64> {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };

    let mut per = Vec::with_capacity(K);
    let mut specificities = Vec::with_capacity(K);
    for c in 0..K {
        let tp = cm.counts[c][c];
        let fp: u64 = (0..K).filter(|&i| i != c).map(|i| cm.counts[i][c]).sum();
        let fn_: u64 = (0..K).filter(|&j| j != c).map(|j| cm.counts[c][j]).sum();
        let tn = total - tp - fp - fn_;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        specificities.push(ratio(tn, tn + fp));
        per.push(ClassMetrics {
            class: cm.class_names[c].clone(),
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        });
    }

    let mean_if_all = |vals: Vec<Option<f64>>| -> Option<f64> {
        let defined: Option<Vec<f64>> = vals.into_iter().collect();
        defined.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };

    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        macro_sensitivity: mean_if_all(per.iter().map(|m| m.recall).collect()),
        macro_specificity: mean_if_all(specificities),
        per_class: per,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".into())
}

/// Per-class rows as CSV, followed by summary rows.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from("class,tp,fp,tn,fn,precision,recall,f1\n");
    for m in &report.per_class {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.class,
            m.true_positives,
            m.false_positives,
            m.true_negatives,
            m.false_negatives,
            opt(m.precision),
            opt(m.recall),
            opt(m.f1),
        ));
    }
    out.push_str(&format!("accuracy,,,,,{:.6},,\n", report.accuracy));
    out.push_str(&format!(
        "macro_sensitivity,,,,,{},,\n",
        opt(report.macro_sensitivity)
    ));
    out.push_str(&format!(
        "macro_specificity,,,,,{},,\n",
        opt(report.macro_specificity)
    ));
    out
}

/// Plain-text block with the row-normalized matrix (per-true-class
/// prediction fractions).
pub fn normalized_block(cm: &ConfusionMatrix) -> Result<String> {
    let norm = normalize(cm)?;
    let mut out = String::from("normalized confusion matrix (rows: true, columns: predicted)\n");
    out.push_str(&format!("{:>12}", ""));
    for name in &cm.class_names {
        out.push_str(&format!("{name:>10}"));
    }
    out.push('\n');
    for i in 0..K {
        out.push_str(&format!("{:>12}", cm.class_names[i]));
        for j in 0..K {
            out.push_str(&format!("{:>10.3}", norm[i][j]));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let mut truth = Vec::new();
        for (c, n) in [(0usize, 11), (1, 18), (2, 35)] {
            truth.extend(std::iter::repeat(c).take(n));
        }
        let cm = confusion(&truth, &truth).unwrap();
        assert_eq!(cm.counts(), &[[11, 0, 0], [0, 18, 0], [0, 0, 35]]);
        assert_eq!(normalize(&cm).unwrap(), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(per_class(&cm).unwrap().accuracy, 1.0);
    }

    #[test]
    fn empty_inputs_are_an_error() {
        assert!(matches!(confusion(&[], &[]), Err(Error::Argument(_))));
        assert!(matches!(confusion(&[0], &[0, 1]), Err(Error::Argument(_))));
        assert!(matches!(confusion(&[0], &[5]), Err(Error::Argument(_))));
    }

    #[test]
    fn hand_enumerated_counts() {
        let cm = confusion(&[0, 1, 2, 2], &[0, 1, 1, 2]).unwrap();
        assert_eq!(cm.counts(), &[[1, 0, 0], [0, 1, 0], [0, 1, 1]]);
    }

    #[test]
    fn normalize_rows_sum_to_one() {
        let cm = ConfusionMatrix::from_counts([[34, 1, 0], [5, 5, 5], [2, 3, 15]]);
        let norm = normalize(&cm).unwrap();
        for row in &norm {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!((norm[0][0] - 0.971428).abs() < 1e-3);
        assert!((norm[0][1] - 0.028571).abs() < 1e-3);
        assert_eq!(norm[1], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn zero_row_is_an_error_naming_the_class() {
        let cm = ConfusionMatrix::from_counts([[1, 0, 0], [0, 0, 0], [0, 0, 1]]);
        let err = normalize(&cm).unwrap_err().to_string();
        assert!(err.contains("1yr"), "error should name the class: {err}");
    }

    #[test]
    fn reconstructed_3d_validation_matrix() {
        // Unique matrix consistent with the published 3D per-class results
        // and validation cohort sizes 11/18/35.
        let cm = ConfusionMatrix::from_counts([[11, 0, 0], [0, 18, 0], [0, 1, 34]]);
        let report = per_class(&cm).unwrap();
        assert_eq!(report.accuracy, 63.0 / 64.0);
        let p: Vec<f64> = report.per_class.iter().map(|m| m.precision.unwrap()).collect();
        let r: Vec<f64> = report.per_class.iter().map(|m| m.recall.unwrap()).collect();
        let f: Vec<f64> = report.per_class.iter().map(|m| m.f1.unwrap()).collect();
        assert_eq!(p[0], 1.0);
        assert!((p[1] - 18.0 / 19.0).abs() < 1e-12);
        assert_eq!(p[2], 1.0);
        assert_eq!(r[0], 1.0);
        assert_eq!(r[1], 1.0);
        assert!((r[2] - 34.0 / 35.0).abs() < 1e-12);
        assert!((f[1] - 36.0 / 37.0).abs() < 1e-12);
        assert!((f[2] - 68.0 / 69.0).abs() < 1e-12);
        // Macro sensitivity: (1 + 1 + 34/35) / 3 = 0.990...
        assert!((report.macro_sensitivity.unwrap() - 0.990476).abs() < 1e-6);
    }

    #[test]
    fn reconstructed_2d_validation_matrix() {
        let cm = ConfusionMatrix::from_counts([[10, 1, 0], [0, 18, 0], [0, 2, 33]]);
        let report = per_class(&cm).unwrap();
        assert_eq!(report.accuracy, 61.0 / 64.0);
        let m1 = &report.per_class[1];
        assert!((m1.precision.unwrap() - 18.0 / 21.0).abs() < 1e-12);
        assert_eq!(m1.recall, Some(1.0));
        // F1 forced by the harmonic mean: 12/13 = 0.9231.
        assert!((m1.f1.unwrap() - 12.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn tp_sum_equals_trace_and_counts_balance() {
        let cm = ConfusionMatrix::from_counts([[7, 2, 1], [3, 9, 0], [0, 4, 12]]);
        let report = per_class(&cm).unwrap();
        let tp_sum: u64 = report.per_class.iter().map(|m| m.true_positives).sum();
        assert_eq!(tp_sum, cm.trace());
        let total = cm.total();
        for m in &report.per_class {
            assert_eq!(
                m.true_positives + m.false_positives + m.true_negatives + m.false_negatives,
                total
            );
        }
        assert_eq!(report.accuracy, cm.trace() as f64 / total as f64);
    }

    #[test]
    fn f1_is_the_harmonic_mean_when_defined() {
        let cm = ConfusionMatrix::from_counts([[5, 3, 2], [1, 8, 1], [2, 2, 6]]);
        let report = per_class(&cm).unwrap();
        for m in &report.per_class {
            if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
                assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn label_permutation_equivariance() {
        let truth = [0usize, 0, 1, 1, 1, 2, 2, 0, 1, 2, 2, 2];
        let pred = [0usize, 1, 1, 1, 0, 2, 2, 0, 2, 2, 1, 2];
        let perm = [2usize, 0, 1]; // class c becomes perm[c]
        let truth_p: Vec<usize> = truth.iter().map(|&c| perm[c]).collect();
        let pred_p: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();

        let base = per_class(&confusion(&truth, &pred).unwrap()).unwrap();
        let permuted = per_class(&confusion(&truth_p, &pred_p).unwrap()).unwrap();
        for c in 0..3 {
            let a = &base.per_class[c];
            let b = &permuted.per_class[perm[c]];
            assert_eq!(a.true_positives, b.true_positives);
            assert_eq!(a.false_positives, b.false_positives);
            assert_eq!(a.false_negatives, b.false_negatives);
            assert_eq!(a.precision, b.precision);
            assert_eq!(a.recall, b.recall);
            assert_eq!(a.f1, b.f1);
        }
        assert_eq!(base.accuracy, permuted.accuracy);
    }

    #[test]
    fn undefined_metrics_are_none_not_zero() {
        // Nothing predicted as class 0 and no true class-0 samples:
        // precision and recall are both undefined for it.
        let cm = ConfusionMatrix::from_counts([[0, 0, 0], [0, 10, 0], [0, 0, 10]]);
        let report = per_class(&cm).unwrap();
        assert_eq!(report.per_class[0].precision, None);
        assert_eq!(report.per_class[0].recall, None);
        assert_eq!(report.per_class[0].f1, None);
        assert_eq!(report.macro_sensitivity, None);
        let csv = report_csv(&report);
        assert!(csv.contains("undefined"));
    }
}
