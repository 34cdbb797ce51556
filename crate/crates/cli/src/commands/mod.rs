pub mod compare;
pub mod curve;
pub mod describe;
pub mod experiment;
pub mod features;
pub mod graph;
pub mod ingest;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tgf_core::ingest::{clean_panel, load_prices, load_ratios, load_sectors, CleaningLog, Panel, RatioTable};

use crate::config::AppConfig;
use crate::manifest::RunManifest;

pub struct Dataset {
    pub panel: Panel,
    pub ratios: Option<RatioTable>,
    pub cleaning_log: Option<CleaningLog>,
}

pub fn price_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading price directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .csv files under {}", dir.display());
    }
    Ok(paths)
}

/// Loads the panel either from a saved `panel.json` or by ingesting the raw
/// CSV contracts; ratios ride along whenever their path is configured.
pub fn load_dataset(cfg: &AppConfig) -> Result<Dataset> {
    let ratios = match &cfg.ratios {
        Some(path) => Some(load_ratios(path)?),
        None => None,
    };
    if let Some(panel_path) = &cfg.panel {
        let panel = Panel::load_json(panel_path)?;
        return Ok(Dataset { panel, ratios, cleaning_log: None });
    }
    let sectors_path = cfg.sectors.as_ref().expect("validated by config::load");
    let prices_dir = cfg.prices_dir.as_ref().expect("validated by config::load");
    let ratios = ratios.expect("validated by config::load");
    let sectors = load_sectors(sectors_path)?;
    let series = load_prices(&price_paths(prices_dir)?)?;
    let (panel, log) = clean_panel(&series, &sectors, &ratios, cfg.study_start, cfg.study_end)?;
    Ok(Dataset { panel, ratios: Some(ratios), cleaning_log: Some(log) })
}

/// Registers every configured input file in the manifest.
pub fn record_inputs(manifest: &mut RunManifest, cfg: &AppConfig) -> Result<()> {
    if let Some(p) = &cfg.panel {
        manifest.add_input(p)?;
    } else {
        manifest.add_input(cfg.sectors.as_ref().expect("validated"))?;
        manifest.add_input_dir(cfg.prices_dir.as_ref().expect("validated"), "csv")?;
    }
    if let Some(p) = &cfg.ratios {
        manifest.add_input(p)?;
    }
    Ok(())
}

pub fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
}
