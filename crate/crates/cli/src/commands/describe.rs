use anyhow::Result;
use tgf_core::model::{A3tGcn, ModelConfig};

use crate::commands::load_dataset;
use crate::config::AppConfig;

/// Prints the layer/shape listing for the configured model dimensions.
pub fn run(cfg: &AppConfig, seq_len: Option<usize>, horizon: Option<usize>) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let seq_len = seq_len.unwrap_or(cfg.grid_seq_lens[0]);
    let future_window = horizon.unwrap_or(cfg.grid_horizons[0]);
    let width = if cfg.pipeline.multi_output { future_window } else { 1 };
    let mut model_cfg = ModelConfig::new(dataset.panel.n_tickers(), seq_len, width);
    model_cfg.cell2_gates = cfg.pipeline.cell2_gates;
    let model = A3tGcn::new(model_cfg)?;
    print!("{}", model.describe());
    println!(
        "future window: {future_window} day(s), target: {}",
        if cfg.pipeline.multi_output { "all offsets" } else { "single offset" }
    );
    Ok(())
}
