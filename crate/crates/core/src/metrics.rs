//! Classification measures: accuracy, precision/recall/F1 under macro and
//! weighted averaging, Cohen's kappa and macro one-vs-rest AUC, plus the
//! report layout used for model comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("input error: {0}")]
    Input(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
}

/// Rows are gold classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(MetricsError::Input(format!("confusion matrix must be {k}x{k}")));
        }
        Ok(Self { classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    fn diag(&self, c: usize) -> u64 {
        self.counts[c][c]
    }
}

pub fn confusion(golds: &[usize], preds: &[usize], classes: &[String]) -> Result<ConfusionMatrix, MetricsError> {
    if golds.len() != preds.len() {
        return Err(MetricsError::Input(format!("{} golds vs {} predictions", golds.len(), preds.len())));
    }
    if golds.is_empty() {
        return Err(MetricsError::Input("no instances".into()));
    }
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&g, &p) in golds.iter().zip(preds) {
        if g >= k || p >= k {
            return Err(MetricsError::Input(format!("label ({g}, {p}) outside {k} classes")));
        }
        counts[g][p] += 1;
    }
    Ok(ConfusionMatrix { classes: classes.to_vec(), counts })
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn nonempty(cm: &ConfusionMatrix) -> Result<(), MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::Input("empty confusion matrix".into()));
    }
    Ok(())
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    nonempty(cm)?;
    Ok(ratio((0..cm.num_classes()).map(|c| cm.diag(c)).sum(), cm.total()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Per-class scores with 0/0 taken as 0.
pub fn per_class(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..cm.num_classes())
        .map(|c| {
            let precision = ratio(cm.diag(c), cm.col_sum(c));
            let recall = ratio(cm.diag(c), cm.row_sum(c));
            ClassScores { class: cm.classes[c].clone(), precision, recall, f1: harmonic(precision, recall), support: cm.row_sum(c) }
        })
        .collect()
}

/// Macro averages every class (zero-support classes count as 0); weighted
/// averages by gold support.
pub fn prf(cm: &ConfusionMatrix, averaging: Averaging) -> Result<Prf, MetricsError> {
    nonempty(cm)?;
    let scores = per_class(cm);
    let total = cm.total() as f64;
    let weight = |s: &ClassScores| match averaging {
        Averaging::Macro => 1.0 / scores.len() as f64,
        Averaging::Weighted => s.support as f64 / total,
    };
    Ok(scores.iter().fold(Prf::default(), |acc, s| {
        let w = weight(s);
        Prf { precision: acc.precision + w * s.precision, recall: acc.recall + w * s.recall, f1: acc.f1 + w * s.f1 }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    /// Set when chance agreement is 1 and kappa is reported as 0.
    pub degenerate: bool,
}

pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<Kappa, MetricsError> {
    nonempty(cm)?;
    let n = cm.total() as f64;
    let p_o = accuracy(cm)?;
    let p_e: f64 = (0..cm.num_classes()).map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64).sum::<f64>() / (n * n);
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(Kappa { value: 0.0, degenerate: true });
    }
    Ok(Kappa { value: (p_o - p_e) / (1.0 - p_e), degenerate: false })
}

/// Macro one-vs-rest AUC over the classes present in `golds`, each from the
/// Mann-Whitney rank statistic with tied scores sharing the average rank.
pub fn auc_ovr<S: AsRef<[f64]>>(scores: &[S], golds: &[usize]) -> Result<f64, MetricsError> {
    if scores.len() != golds.len() || golds.is_empty() {
        return Err(MetricsError::Input(format!("{} score rows vs {} golds", scores.len(), golds.len())));
    }
    let k = scores[0].as_ref().len();
    if scores.iter().any(|r| r.as_ref().len() != k || r.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(MetricsError::Input("score rows must be finite and equally long".into()));
    }
    if golds.iter().any(|&g| g >= k) {
        return Err(MetricsError::Input(format!("gold label outside {k} score columns")));
    }
    let present: Vec<usize> = (0..k).filter(|c| golds.contains(c)).collect();
    if present.len() < 2 {
        return Err(MetricsError::Undefined("AUC needs at least two classes among the golds".into()));
    }
    let n = golds.len();
    let mut total = 0.0;
    for &c in &present {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[a].as_ref()[c].total_cmp(&scores[b].as_ref()[c]));
        let mut pos_rank_sum = 0.0;
        let mut i = 0;
        while i < n {
            let v = scores[order[i]].as_ref()[c];
            let mut j = i;
            while j < n && scores[order[j]].as_ref()[c] == v {
                j += 1;
            }
            // ranks i+1 ..= j share their mean
            let mean_rank = (i + 1 + j) as f64 / 2.0;
            pos_rank_sum += mean_rank * order[i..j].iter().filter(|&&r| golds[r] == c).count() as f64;
            i = j;
        }
        let pos = golds.iter().filter(|&&g| g == c).count() as f64;
        let neg = n as f64 - pos;
        total += (pos_rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
    }
    Ok(total / present.len() as f64)
}

/// Everything the comparison tables show, plus the per-class breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub auc: f64,
    pub cks: f64,
    pub cks_degenerate: bool,
    pub weighted: Prf,
    #[serde(rename = "macro")]
    pub macro_avg: Prf,
    pub per_class: Vec<ClassScores>,
    pub support: u64,
    pub confusion: ConfusionMatrix,
}

pub fn full_report<S: AsRef<[f64]>>(
    golds: &[usize],
    preds: &[usize],
    scores: &[S],
    classes: &[String],
) -> Result<EvalReport, MetricsError> {
    if scores.len() != golds.len() {
        return Err(MetricsError::Input(format!("{} score rows vs {} golds", scores.len(), golds.len())));
    }
    let cm = confusion(golds, preds, classes)?;
    let kappa = cohen_kappa(&cm)?;
    Ok(EvalReport {
        accuracy: accuracy(&cm)?,
        auc: auc_ovr(scores, golds)?,
        cks: kappa.value,
        cks_degenerate: kappa.degenerate,
        weighted: prf(&cm, Averaging::Weighted)?,
        macro_avg: prf(&cm, Averaging::Macro)?,
        per_class: per_class(&cm),
        support: cm.total(),
        confusion: cm,
    })
}

/// Side-by-side rows in the column order Accuracy, AUC, CKS | weighted
/// P/R/F1 | macro P/R/F1 | Support.
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$} | {:^20} | {:^20} | {:^20} | {:>7}",
        "", "Sample Average", "Weighted Average", "Macro Average", ""
    );
    let _ = writeln!(
        out,
        "{:<name_w$} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} | {:>7}",
        "Model", "Ac", "AUC", "CKS", "Pr", "Re", "F1", "Pr", "Re", "F1", "Support"
    );
    let _ = writeln!(out, "{}", "-".repeat(name_w + 77));
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<name_w$} | {:>6.4} {:>6.4} {:>6.4} | {:>6.4} {:>6.4} {:>6.4} | {:>6.4} {:>6.4} {:>6.4} | {:>7}",
            name,
            r.accuracy,
            r.auc,
            r.cks,
            r.weighted.precision,
            r.weighted.recall,
            r.weighted.f1,
            r.macro_avg.precision,
            r.macro_avg.recall,
            r.macro_avg.f1,
            r.support
        );
    }
    out
}

/// Per-class precision/recall/F1/support block.
pub fn render_per_class(report: &EvalReport) -> String {
    let w = report.per_class.iter().map(|c| c.class.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<w$} {:>9} {:>9} {:>9} {:>8}\n", "Class", "Precision", "Recall", "F1", "Support");
    for c in &report.per_class {
        let _ = writeln!(out, "{:<w$} {:>9.4} {:>9.4} {:>9.4} {:>8}", c.class, c.precision, c.recall, c.f1, c.support);
    }
    out
}
