//! Shared fixtures for the benchmarks and the trend-calibration example.

use tgf_core::synthetic::{generate, SyntheticConfig};
use tgf_core::train::{run_one, prepare, GridConfig, OptimSettings, PipelineConfig};
use tgf_core::Panel;

pub fn bench_panel(n_nodes: usize, n_days: usize) -> Panel {
    generate(&SyntheticConfig { n_nodes, n_days, ..Default::default() }).panel
}

/// Test MAE of one configuration trained with one seed.
pub fn trained_mae(panel: &Panel, gc: GridConfig, seed: u64, epochs: usize) -> f64 {
    let cfg = PipelineConfig::default();
    let prepared = prepare(panel, None, &cfg).expect("prepare");
    let settings = OptimSettings { seed, epochs, ..Default::default() };
    let (record, _) = run_one(&prepared, &gc, &cfg, &settings).expect("run");
    record.metrics.mae
}
