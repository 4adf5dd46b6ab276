//! Prediction and feature-selection scoring: mean squared error, prediction
//! variance, false positive/negative rates at a posterior-probability
//! threshold, and the rank-based AUC.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper::ImportanceCollapse;

/// Mean of squared residuals.
pub fn mse(y: &DVector<f64>, y_hat: &DVector<f64>) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: y_hat.len(),
            context: "outcome vs predictions".into(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("no rows to score".into()));
    }
    Ok((y - y_hat).norm_squared() / y.len() as f64)
}

/// Sample variance (n - 1 denominator) of the predictions; zero for a single
/// row.
pub fn var_pred(y_hat: &DVector<f64>) -> Result<f64> {
    let n = y_hat.len();
    if n == 0 {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    if n == 1 {
        return Ok(0.0);
    }
    let mean = y_hat.mean();
    Ok(y_hat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64)
}

fn check_classes(truth: &[bool], what: &str) -> Result<(usize, usize)> {
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedRate(format!(
            "{what}: truth has {pos} positives and {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// False positive and false negative rates of `score > threshold` against a
/// binary truth.
pub fn selection_rates(scores: &[f64], truth: &[bool], threshold: f64) -> Result<(f64, f64)> {
    if scores.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: truth.len(),
            context: "scores vs truth".into(),
        });
    }
    let (pos, neg) = check_classes(truth, "selection rates")?;
    let mut fp = 0usize;
    let mut fnc = 0usize;
    for (&s, &t) in scores.iter().zip(truth) {
        let selected = s > threshold;
        if selected && !t {
            fp += 1;
        }
        if !selected && t {
            fnc += 1;
        }
    }
    Ok((fp as f64 / neg as f64, fnc as f64 / pos as f64))
}

/// Probability that a random positive scores above a random negative, ties
/// counted half: the Mann-Whitney statistic computed through mid-ranks.
pub fn auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: truth.len(),
            context: "scores vs truth".into(),
        });
    }
    let (pos, neg) = check_classes(truth, "AUC")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum_pos = 0.0;
    let mut at = 0;
    while at < order.len() {
        let mut end = at + 1;
        while end < order.len() && scores[order[end]] == scores[order[at]] {
            end += 1;
        }
        // Positions at..end (0-based) share the mid-rank of 1-based ranks.
        let mid_rank = (at + 1 + end) as f64 / 2.0;
        for &i in &order[at..end] {
            if truth[i] {
                rank_sum_pos += mid_rank;
            }
        }
        at = end;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Collapse a view's r-by-p inclusion-probability matrix to one importance
/// score per feature.
pub fn importance_scores(mpp: &DMatrix<f64>, collapse: ImportanceCollapse) -> Vec<f64> {
    let p = mpp.ncols();
    (0..p)
        .map(|j| match collapse {
            ImportanceCollapse::MaxComponent => mpp.column(j).iter().copied().fold(0.0, f64::max),
            ImportanceCollapse::AnyComponent => {
                1.0 - mpp.column(j).iter().map(|&m| 1.0 - m).product::<f64>()
            }
        })
        .collect()
}

/// Selection scores of one view.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub fpr: f64,
    pub fnr: f64,
    pub auc: f64,
}

/// Score selection per view and averaged across views.
pub fn score_selection(
    mpp_feature: &[DMatrix<f64>],
    truth: &[Vec<bool>],
    collapse: ImportanceCollapse,
    threshold: f64,
) -> Result<(Vec<SelectionMetrics>, SelectionMetrics)> {
    if mpp_feature.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: mpp_feature.len(),
            right: truth.len(),
            context: "views with probabilities vs truth masks".into(),
        });
    }
    if mpp_feature.is_empty() {
        return Err(Error::EmptyInput("no views to score".into()));
    }
    let mut per_view = Vec::with_capacity(truth.len());
    for (mpp, mask) in mpp_feature.iter().zip(truth) {
        let scores = importance_scores(mpp, collapse);
        let (fpr, fnr) = selection_rates(&scores, mask, threshold)?;
        let auc = auc(&scores, mask)?;
        per_view.push(SelectionMetrics { fpr, fnr, auc });
    }
    let k = per_view.len() as f64;
    let avg = SelectionMetrics {
        fpr: per_view.iter().map(|m| m.fpr).sum::<f64>() / k,
        fnr: per_view.iter().map(|m| m.fnr).sum::<f64>() / k,
        auc: per_view.iter().map(|m| m.auc).sum::<f64>() / k,
    };
    Ok((per_view, avg))
}

/// One row of the benchmark report. Selection columns are absent for methods
/// without posterior inclusion probabilities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub method: String,
    /// Replicate number, or "mean" / "sd" for the summary rows.
    pub replicate: String,
    pub mse: f64,
    pub var_yhat: f64,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub auc: Option<f64>,
}

/// Per-view selection breakdown row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerViewRow {
    pub scenario: String,
    pub method: String,
    pub replicate: String,
    pub view: String,
    pub fpr: f64,
    pub fnr: f64,
    pub auc: f64,
}

/// The full benchmark report: main rows (view-averaged selection metrics)
/// plus the per-view breakdown.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub per_view: Vec<PerViewRow>,
    /// Set when any method ran with a single replicate, making the sd rows
    /// degenerate.
    pub single_replicate: bool,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn optional_mean_sd(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let present: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    if present.len() != values.len() || present.is_empty() {
        return (None, None);
    }
    let (m, s) = mean_sd(&present);
    (Some(m), Some(s))
}

/// Append mean and sd summary rows per (scenario, method) group, in first
/// appearance order of the groups.
pub fn append_summary_rows(report: &mut MetricsReport) {
    let mut groups: Vec<(String, String)> = Vec::new();
    for row in &report.rows {
        let key = (row.scenario.clone(), row.method.clone());
        if row.replicate != "mean" && row.replicate != "sd" && !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut summary = Vec::new();
    for (scenario, method) in groups {
        let rows: Vec<&MetricsRow> = report
            .rows
            .iter()
            .filter(|r| {
                r.scenario == scenario
                    && r.method == method
                    && r.replicate != "mean"
                    && r.replicate != "sd"
            })
            .collect();
        if rows.is_empty() {
            continue;
        }
        if rows.len() == 1 {
            report.single_replicate = true;
        }
        let (mse_m, mse_s) = mean_sd(&rows.iter().map(|r| r.mse).collect::<Vec<_>>());
        let (var_m, var_s) = mean_sd(&rows.iter().map(|r| r.var_yhat).collect::<Vec<_>>());
        let (fpr_m, fpr_s) = optional_mean_sd(&rows.iter().map(|r| r.fpr).collect::<Vec<_>>());
        let (fnr_m, fnr_s) = optional_mean_sd(&rows.iter().map(|r| r.fnr).collect::<Vec<_>>());
        let (auc_m, auc_s) = optional_mean_sd(&rows.iter().map(|r| r.auc).collect::<Vec<_>>());
        summary.push(MetricsRow {
            scenario: scenario.clone(),
            method: method.clone(),
            replicate: "mean".into(),
            mse: mse_m,
            var_yhat: var_m,
            fpr: fpr_m,
            fnr: fnr_m,
            auc: auc_m,
        });
        summary.push(MetricsRow {
            scenario,
            method,
            replicate: "sd".into(),
            mse: mse_s,
            var_yhat: var_s,
            fpr: fpr_s,
            fnr: fnr_s,
            auc: auc_s,
        });
    }
    report.rows.extend(summary);
}
