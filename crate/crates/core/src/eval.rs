//! Forecast-error metrics and the paired-error t-test.
//!
//! Note the relative-error convention: MRE divides by the *prediction*, not
//! the actual, with an epsilon guard that excludes (and counts) near-zero
//! predictions. RMSE is the square root of MSE, so `rmse^2 == mse` holds by
//! construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{student_t_cdf, student_t_quantile};
use crate::tensor::Tensor2;

pub const MRE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Mean of |actual - predicted| / |predicted|, as a fraction.
    pub mre: f64,
    /// Terms dropped from the MRE because |predicted| < epsilon.
    pub mre_excluded: usize,
    pub n: usize,
    /// Per-node mean absolute error; empty when the inputs carry no node
    /// structure.
    pub per_node_mae: Vec<f64>,
    /// Squared error per (sample, node) pair, sample-major.
    pub squared_errors: Vec<f64>,
}

fn core_metrics(pred: &[f64], actual: &[f64]) -> Result<(f64, f64, f64, f64, usize)> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("metrics over zero observations".into()));
    }
    if pred.len() != actual.len() {
        return Err(Error::ShapeError(format!(
            "prediction length {} vs actual length {}",
            pred.len(),
            actual.len()
        )));
    }
    let n = pred.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut rel_sum = 0.0;
    let mut rel_n = 0usize;
    for (p, a) in pred.iter().zip(actual) {
        let err = a - p;
        abs_sum += err.abs();
        sq_sum += err * err;
        if p.abs() >= MRE_EPSILON {
            rel_sum += err.abs() / p.abs();
            rel_n += 1;
        }
    }
    let mae = abs_sum / n;
    let mse = sq_sum / n;
    let mre = if rel_n > 0 { rel_sum / rel_n as f64 } else { 0.0 };
    Ok((mae, mse, mse.sqrt(), mre, pred.len() - rel_n))
}

/// Flat metrics over paired vectors.
pub fn metrics(pred: &[f64], actual: &[f64]) -> Result<MetricsReport> {
    let (mae, mse, rmse, mre, mre_excluded) = core_metrics(pred, actual)?;
    let squared_errors = pred.iter().zip(actual).map(|(p, a)| (a - p) * (a - p)).collect();
    Ok(MetricsReport {
        mae,
        mse,
        rmse,
        mre,
        mre_excluded,
        n: pred.len(),
        per_node_mae: Vec::new(),
        squared_errors,
    })
}

/// Metrics over per-sample prediction blocks (each `n_nodes x width`),
/// filling the per-node error vector.
pub fn metrics_grid(preds: &[Tensor2], actuals: &[Tensor2]) -> Result<MetricsReport> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("metrics over zero samples".into()));
    }
    if preds.len() != actuals.len() {
        return Err(Error::ShapeError(format!(
            "{} prediction blocks vs {} actual blocks",
            preds.len(),
            actuals.len()
        )));
    }
    let shape = preds[0].shape();
    let n_nodes = shape.0;
    let mut flat_pred = Vec::new();
    let mut flat_actual = Vec::new();
    let mut node_abs = vec![0.0; n_nodes];
    let mut node_count = vec![0usize; n_nodes];
    for (p, a) in preds.iter().zip(actuals) {
        if p.shape() != shape || a.shape() != shape {
            return Err(Error::ShapeError("ragged prediction blocks".into()));
        }
        for i in 0..n_nodes {
            for j in 0..shape.1 {
                flat_pred.push(p.get(i, j));
                flat_actual.push(a.get(i, j));
                node_abs[i] += (a.get(i, j) - p.get(i, j)).abs();
                node_count[i] += 1;
            }
        }
    }
    let mut report = metrics(&flat_pred, &flat_actual)?;
    report.per_node_mae = node_abs
        .iter()
        .zip(&node_count)
        .map(|(s, c)| s / *c as f64)
        .collect();
    Ok(report)
}

/// One row of the error-metrics summary table.
pub fn format_metrics_row(label: &str, m: &MetricsReport) -> String {
    format!(
        "{label:<20} {:>8.4} {:>8.4} {:>8.4} {:>7.2}%",
        m.mae,
        m.mse,
        m.rmse,
        m.mre * 100.0
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TTestResult {
    pub mean_diff: f64,
    pub t_stat: f64,
    /// One-sided, left tail.
    pub p_value: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub df: usize,
    pub n: usize,
}

/// Left-tailed one-sample t-test on paired differences: H0 mean = 0 against
/// HA mean < 0. The 95% interval is the usual two-sided one.
pub fn t_test_left(diffs: &[f64]) -> Result<TTestResult> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!(
            "t-test needs at least 2 differences, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var <= 0.0 {
        return Err(Error::DegenerateSample(
            "zero variance in paired differences".into(),
        ));
    }
    let se = (var / nf).sqrt();
    let t_stat = mean / se;
    let df = n - 1;
    let p_value = student_t_cdf(t_stat, df as f64);
    let tq = student_t_quantile(0.975, df as f64);
    Ok(TTestResult {
        mean_diff: mean,
        t_stat,
        p_value,
        ci95_low: mean - tq * se,
        ci95_high: mean + tq * se,
        df,
        n,
    })
}

/// Text block shaped like the one-sample t-test summary table.
pub fn format_t_test_report(r: &TTestResult) -> String {
    let p = if r.p_value < 0.00001 {
        "<0.00001".to_string()
    } else {
        format!("{:.5}", r.p_value)
    };
    let mut out = String::new();
    out.push_str("One-sample t-test results\n");
    out.push_str(&format!(
        "{:>12} {:>12} {:>12}   {}\n",
        "Mean", "T-test", "P-value", "95% Confidence Interval"
    ));
    out.push_str(&format!(
        "{:>12.7} {:>12.4} {:>12}   [{:.7}, {:.7}]\n",
        r.mean_diff, r.t_stat, p, r.ci95_low, r.ci95_high
    ));
    out.push_str(&format!("n = {}, df = {}\n", r.n, r.df));
    out.push_str("H0: mean = 0\n");
    out.push_str("HA: mean < 0\n");
    out
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r_squared(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::ShapeError(format!(
            "prediction length {} vs actual length {}",
            pred.len(),
            actual.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::DegenerateSample(
            "r-squared needs at least 2 observations".into(),
        ));
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateSample("constant actuals".into()));
    }
    let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}
