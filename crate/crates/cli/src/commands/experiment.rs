use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use tgf_core::eval::format_metrics_row;
use tgf_core::train::{run_grid, PredictionRow, RunOutcome};

use crate::commands::{ensure_out_dir, load_dataset, record_inputs};
use crate::config::AppConfig;
use crate::manifest::RunManifest;

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("date,ticker,actual,predicted\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.date.format("%Y-%m-%d"),
            r.ticker,
            r.actual,
            r.predicted
        )
        .expect("string write");
    }
    out
}

fn loss_curve_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,train_loss\n");
    for (i, loss) in losses.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, loss).expect("string write");
    }
    out
}

/// Runs the configuration grid and writes one directory per version plus the
/// shared summary, records, and manifest. Returns the exit code: 0 when every
/// run succeeded, otherwise the highest failure class (2 data, 3 numeric).
pub fn run(cfg: &AppConfig, out: &Path) -> Result<i32> {
    let dataset = load_dataset(cfg)?;
    let grid = cfg.grid();
    let (prepared, outcomes) =
        run_grid(&dataset.panel, dataset.ratios.as_ref(), &cfg.pipeline, &grid, &cfg.optim)?;
    ensure_out_dir(out)?;

    let mut manifest = RunManifest::new("experiment", cfg.optim.seed, &cfg.raw_text);
    record_inputs(&mut manifest, cfg)?;
    manifest.set_data_range(
        dataset.panel.n_tickers(),
        dataset.panel.n_dates(),
        dataset.panel.dates[0],
        *dataset.panel.dates.last().expect("nonempty panel"),
    );

    if let Some(log) = &dataset.cleaning_log {
        std::fs::write(out.join("cleaning_report.txt"), log.to_string())?;
        manifest.add_output("cleaning_report.txt");
    }

    let mut summary = String::from("Error metrics of the tested versions\n");
    writeln!(
        summary,
        "{:<20} {:>8} {:>8} {:>8} {:>8}",
        "Version", "MAE", "MSE", "RMSE", "MRE"
    )?;
    let mut exit = 0i32;
    for outcome in &outcomes {
        match outcome {
            RunOutcome::Success { record, predictions } => {
                let run_dir = out.join(&record.id);
                ensure_out_dir(&run_dir)?;
                std::fs::write(
                    run_dir.join("record.json"),
                    serde_json::to_string_pretty(record)? + "\n",
                )?;
                std::fs::write(run_dir.join("loss_curve.csv"), loss_curve_csv(&record.epoch_losses))?;
                std::fs::write(run_dir.join("predictions.csv"), predictions_csv(predictions))?;
                for name in ["record.json", "loss_curve.csv", "predictions.csv"] {
                    manifest.add_output(&format!("{}/{name}", record.id));
                }
                writeln!(summary, "{}", format_metrics_row(&record.label, &record.metrics))?;
            }
            RunOutcome::Failure { label, error, numeric, .. } => {
                writeln!(summary, "{label:<20} failed: {error}")?;
                exit = exit.max(if *numeric { 3 } else { 2 });
            }
        }
    }
    writeln!(
        summary,
        "\ngraph: mode {}, threshold {}, {} edges, {} unconnected nodes",
        prepared.graph.mode.as_str(),
        prepared.graph.threshold_used,
        prepared.diagnostics.n_edges,
        prepared.diagnostics.unconnected_nodes.len()
    )?;
    std::fs::write(out.join("summary.txt"), &summary)?;
    manifest.add_output("summary.txt");

    let records: Vec<&RunOutcome> = outcomes.iter().collect();
    std::fs::write(
        out.join("records.json"),
        serde_json::to_string_pretty(&records)? + "\n",
    )?;
    manifest.add_output("records.json");
    manifest.write(out)?;

    print!("{summary}");
    println!("outputs -> {}", out.display());
    Ok(exit)
}
