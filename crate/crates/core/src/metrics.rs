//! Confusion matrix and the per-class classification report.
//!
//! Zero-division convention: a class that is never predicted gets precision
//! 0, a class with no true samples gets recall 0, and F1 is 0 whenever
//! `P + R = 0`. Aggregates are therefore always defined, which matters for
//! degenerate reports early in training.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>, class_names: Vec<String>) -> Result<Self> {
        let c = class_names.len();
        if counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(Error::input(format!("confusion matrix must be {c}×{c}")));
        }
        Ok(ConfusionMatrix {
            counts,
            class_names,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Row sums.
    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Column sums.
    pub fn predicted(&self) -> Vec<u64> {
        (0..self.n_classes())
            .map(|p| self.counts.iter().map(|r| r[p]).sum())
            .collect()
    }
}

/// Default names `"0"`, `"1"`, … for `c` classes.
pub fn numbered_classes(c: usize) -> Vec<String> {
    (0..c).map(|i| i.to_string()).collect()
}

pub fn confusion(true_labels: &[usize], predicted: &[usize], class_names: &[String]) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted.len() {
        return Err(Error::input(format!(
            "{} true labels but {} predictions",
            true_labels.len(),
            predicted.len()
        )));
    }
    let c = class_names.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&t, &p) in true_labels.iter().zip(predicted) {
        if t >= c || p >= c {
            return Err(Error::input(format!(
                "label pair ({t}, {p}) out of range for {c} classes"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: class_names.to_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::input("classification report over zero samples"));
    }
    let support = cm.support();
    let predicted = cm.predicted();
    let per_class: Vec<ClassMetrics> = (0..cm.n_classes())
        .map(|i| {
            let tp = cm.counts[i][i];
            let precision = ratio(tp, predicted[i]);
            let recall = ratio(tp, support[i]);
            ClassMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: support[i],
            }
        })
        .collect();
    let c = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|m| f(m) * m.support as f64)
            .sum::<f64>()
            / total as f64
    };
    let macro_avg = Averages {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    // Σ recallᵢ·supportᵢ = Σ TPᵢ, so the weighted recall is the accuracy;
    // compute it from the counts to make that identity exact.
    let accuracy = cm.correct() as f64 / total as f64;
    let weighted_avg = Averages {
        precision: weighted(|m| m.precision),
        recall: accuracy,
        f1: weighted(|m| m.f1),
    };
    Ok(ClassificationReport {
        class_names: cm.class_names.clone(),
        macro_f1: macro_avg.f1,
        per_class,
        accuracy,
        macro_avg,
        weighted_avg,
        total,
    })
}

/// Mean of per-class F1 scores.
pub fn macro_f1(per_class_f1: &[f64]) -> f64 {
    per_class_f1.iter().sum::<f64>() / per_class_f1.len() as f64
}

impl ClassificationReport {
    /// Aligned plain-text table: one row per class, then accuracy and the
    /// macro and weighted averages.
    pub fn to_table(&self) -> String {
        let name_width = self
            .class_names
            .iter()
            .map(String::len)
            .chain(["weighted avg".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>w$}  {:>9}  {:>9}  {:>9}  {:>9}",
            "",
            "precision",
            "recall",
            "f1-score",
            "support",
            w = name_width
        );
        let _ = writeln!(out);
        for (name, m) in self.class_names.iter().zip(&self.per_class) {
            let _ = writeln!(
                out,
                "{:>w$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9}",
                name,
                m.precision,
                m.recall,
                m.f1,
                m.support,
                w = name_width
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:>w$}  {:>9}  {:>9}  {:>9.2}  {:>9}",
            "accuracy",
            "",
            "",
            self.accuracy,
            self.total,
            w = name_width
        );
        for (label, avg) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{:>w$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9}",
                label,
                avg.precision,
                avg.recall,
                avg.f1,
                self.total,
                w = name_width
            );
        }
        out
    }
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}
