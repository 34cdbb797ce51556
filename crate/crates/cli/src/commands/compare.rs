use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use tgf_core::eval::{format_t_test_report, t_test_left};
use tgf_core::Error;

use crate::commands::ensure_out_dir;

/// How squared errors are paired before the t-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// One difference per (date, ticker) observation.
    Observation,
    /// One difference per ticker, averaging squared errors over dates.
    Ticker,
}

struct PredRow {
    date: String,
    ticker: String,
    actual: f64,
    predicted: f64,
}

fn load_predictions(dir: &Path) -> Result<Vec<PredRow>> {
    let path = dir.join("predictions.csv");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "date,ticker,actual,predicted" {
                bail!("{}: unexpected header {line:?}", path.display());
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            bail!("{}: line {}: expected 4 fields", path.display(), i + 1);
        }
        rows.push(PredRow {
            date: parts[0].to_string(),
            ticker: parts[1].to_string(),
            actual: parts[2].parse().with_context(|| format!("line {}", i + 1))?,
            predicted: parts[3].parse().with_context(|| format!("line {}", i + 1))?,
        });
    }
    if rows.is_empty() {
        bail!("{}: no prediction rows", path.display());
    }
    Ok(rows)
}

/// Paired squared-error differences (run A minus run B) aligned by
/// (date, ticker); a negative mean favors run A.
fn paired_differences(a: &[PredRow], b: &[PredRow], pairing: Pairing) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::AlignmentError(format!(
            "{} rows vs {} rows",
            a.len(),
            b.len()
        ))
        .into());
    }
    let mut per_obs = Vec::with_capacity(a.len());
    let mut per_ticker: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for (ra, rb) in a.iter().zip(b) {
        if ra.date != rb.date || ra.ticker != rb.ticker {
            return Err(Error::AlignmentError(format!(
                "row ({}, {}) vs ({}, {})",
                ra.date, ra.ticker, rb.date, rb.ticker
            ))
            .into());
        }
        if (ra.actual - rb.actual).abs() > 1e-9 {
            return Err(Error::AlignmentError(format!(
                "actuals differ at ({}, {}): {} vs {}",
                ra.date, ra.ticker, ra.actual, rb.actual
            ))
            .into());
        }
        let ea = (ra.actual - ra.predicted).powi(2);
        let eb = (rb.actual - rb.predicted).powi(2);
        per_obs.push(ea - eb);
        let entry = per_ticker.entry(ra.ticker.clone()).or_insert((0.0, 0.0, 0));
        entry.0 += ea;
        entry.1 += eb;
        entry.2 += 1;
    }
    Ok(match pairing {
        Pairing::Observation => per_obs,
        Pairing::Ticker => per_ticker
            .values()
            .map(|(sa, sb, n)| (sa - sb) / *n as f64)
            .collect(),
    })
}

/// Compares two runs' prediction grids with the left-tailed paired t-test and
/// prints the report block.
pub fn run(run_a: &Path, run_b: &Path, pairing: Pairing, out: Option<&Path>) -> Result<()> {
    let a = load_predictions(run_a)?;
    let b = load_predictions(run_b)?;
    let diffs = paired_differences(&a, &b, pairing)?;
    let result = t_test_left(&diffs).map_err(|e| match e {
        Error::DegenerateSample(msg) => Error::DegenerateSample(format!(
            "{msg}; identical runs cannot be compared with a t-test"
        )),
        other => other,
    })?;
    let mut report = format_t_test_report(&result);
    report.push_str(&format!(
        "pairing: per {}, A = {}, B = {}\n",
        match pairing {
            Pairing::Observation => "observation",
            Pairing::Ticker => "ticker",
        },
        run_a.display(),
        run_b.display()
    ));
    print!("{report}");
    if let Some(out) = out {
        ensure_out_dir(out)?;
        std::fs::write(out.join("ttest.txt"), &report)?;
        std::fs::write(
            out.join("ttest.json"),
            serde_json::to_string_pretty(&result)? + "\n",
        )?;
    }
    Ok(())
}
