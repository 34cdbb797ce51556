use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use tgf_core::train::{learning_curve, GridConfig};
use tgf_core::Panel;

use crate::commands::{ensure_out_dir, load_dataset, record_inputs};
use crate::config::AppConfig;
use crate::manifest::RunManifest;

fn subset_panel(panel: &Panel, cfg: &AppConfig) -> Panel {
    let (start, end) = (cfg.curve.start, cfg.curve.end);
    if start.is_none() && end.is_none() {
        return panel.clone();
    }
    let keep: Vec<usize> = (0..panel.n_dates())
        .filter(|&t| {
            let d = panel.dates[t];
            start.map(|s| d >= s).unwrap_or(true) && end.map(|e| d <= e).unwrap_or(true)
        })
        .collect();
    let t = panel.n_dates();
    Panel {
        tickers: panel.tickers.clone(),
        dates: keep.iter().map(|&k| panel.dates[k]).collect(),
        sectors: panel.sectors.clone(),
        closes: (0..panel.n_tickers())
            .flat_map(|i| keep.iter().map(move |&k| (i, k)))
            .map(|(i, k)| panel.closes[i * t + k])
            .collect(),
    }
}

/// Trains one configuration with a validation tail, recording per-epoch
/// losses and the minimum-validation-error epoch.
pub fn run(cfg: &AppConfig, out: &Path) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let panel = subset_panel(&dataset.panel, cfg);
    let gc = GridConfig { seq_len: cfg.curve.seq_len, future_window: cfg.curve.horizon };
    let curve = learning_curve(
        &panel,
        dataset.ratios.as_ref(),
        &cfg.pipeline,
        &gc,
        &cfg.optim,
        cfg.curve.max_epochs,
        cfg.curve.patience,
    )?;
    ensure_out_dir(out)?;

    let mut csv = String::from("epoch,train_loss,val_mae\n");
    for p in &curve.points {
        writeln!(csv, "{},{},{}", p.epoch, p.train_loss, p.val_mae)?;
    }
    std::fs::write(out.join("curve.csv"), &csv)?;
    std::fs::write(
        out.join("curve.json"),
        serde_json::to_string_pretty(&curve)? + "\n",
    )?;

    let mut manifest = RunManifest::new("curve", cfg.optim.seed, &cfg.raw_text);
    record_inputs(&mut manifest, cfg)?;
    manifest.set_data_range(
        panel.n_tickers(),
        panel.n_dates(),
        panel.dates[0],
        *panel.dates.last().expect("nonempty panel"),
    );
    manifest.add_output("curve.csv");
    manifest.add_output("curve.json");
    manifest.write(out)?;

    let best = &curve.points[curve.best_epoch - 1];
    println!(
        "learning curve over {} epochs ({}): best epoch {} (validation MAE {:.6})",
        curve.points.len(),
        gc.id(),
        curve.best_epoch,
        best.val_mae
    );
    println!("outputs -> {}", out.display());
    Ok(())
}
