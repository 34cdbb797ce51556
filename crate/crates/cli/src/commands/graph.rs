use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use tgf_core::train::{prepare, PipelineConfig};

use crate::commands::{ensure_out_dir, load_dataset, record_inputs};
use crate::config::AppConfig;
use crate::manifest::RunManifest;

/// Composes the graph from training-range data and exports the edge list,
/// diagnostics, and the normalized operator.
pub fn build(cfg: &AppConfig, out: &Path, pipeline: &PipelineConfig) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let prepared = prepare(&dataset.panel, dataset.ratios.as_ref(), pipeline)?;
    ensure_out_dir(out)?;

    let tickers = &dataset.panel.tickers;
    let mut edges = String::from("src_ticker,dst_ticker\n");
    for (i, j) in prepared.graph.edges() {
        writeln!(edges, "{},{}", tickers[i], tickers[j])?;
    }
    std::fs::write(out.join("edges.csv"), &edges)?;

    std::fs::write(
        out.join("diagnostics.json"),
        serde_json::to_string_pretty(&prepared.diagnostics)? + "\n",
    )?;

    let mut normalized = String::from("ticker,");
    normalized.push_str(&tickers.join(","));
    normalized.push('\n');
    for i in 0..tickers.len() {
        normalized.push_str(&tickers[i]);
        for j in 0..tickers.len() {
            write!(normalized, ",{}", prepared.graph.normalized.get(i, j))?;
        }
        normalized.push('\n');
    }
    std::fs::write(out.join("normalized.csv"), &normalized)?;

    let mut manifest = RunManifest::new("graph build", cfg.optim.seed, &cfg.raw_text);
    record_inputs(&mut manifest, cfg)?;
    manifest.set_data_range(
        dataset.panel.n_tickers(),
        dataset.panel.n_dates(),
        dataset.panel.dates[0],
        *dataset.panel.dates.last().expect("nonempty panel"),
    );
    for name in ["edges.csv", "diagnostics.json", "normalized.csv"] {
        manifest.add_output(name);
    }
    manifest.write(out)?;

    let d = &prepared.diagnostics;
    println!(
        "graph: mode {}, threshold {}, {} nodes, {} edges, {} unconnected (hash {})",
        prepared.graph.mode.as_str(),
        prepared.graph.threshold_used,
        d.n_nodes,
        d.n_edges,
        d.unconnected_nodes.len(),
        &prepared.graph.content_hash_hex()[..12],
    );
    if !d.unconnected_nodes.is_empty() {
        println!("unconnected: {}", d.unconnected_nodes.join(", "));
    }
    Ok(())
}
