use std::path::Path;

use anyhow::Result;

use crate::commands::{ensure_out_dir, load_dataset, record_inputs};
use crate::config::AppConfig;
use crate::manifest::RunManifest;

/// Ingests the CSV contracts, writes the cleaned panel and the cleaning
/// report, and prints the report.
pub fn run(cfg: &AppConfig, out: &Path) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let panel = &dataset.panel;
    ensure_out_dir(out)?;

    panel.save_json(&out.join("panel.json"))?;
    let report = match &dataset.cleaning_log {
        Some(log) => log.to_string(),
        None => "panel loaded from panel.json; no cleaning applied\n".to_string(),
    };
    std::fs::write(out.join("cleaning_report.txt"), &report)?;

    let mut manifest = RunManifest::new("ingest", cfg.optim.seed, &cfg.raw_text);
    record_inputs(&mut manifest, cfg)?;
    manifest.set_data_range(
        panel.n_tickers(),
        panel.n_dates(),
        panel.dates[0],
        *panel.dates.last().expect("nonempty panel"),
    );
    manifest.add_output("panel.json");
    manifest.add_output("cleaning_report.txt");
    manifest.write(out)?;

    print!("{report}");
    println!(
        "panel: {} tickers x {} dates -> {}",
        panel.n_tickers(),
        panel.n_dates(),
        out.join("panel.json").display()
    );
    Ok(())
}
