use std::path::Path;

use anyhow::Result;
use tgf_core::features::{
    build_feature_tensor, warmup_len, FeatureTensor, FEATURE_NAMES,
};
use tgf_core::train::SplitSpec;

use crate::commands::{ensure_out_dir, load_dataset, record_inputs};
use crate::config::AppConfig;
use crate::manifest::RunManifest;

fn compute_tensor(cfg: &AppConfig) -> Result<(FeatureTensor, tgf_core::NormalizationStats)> {
    let dataset = load_dataset(cfg)?;
    let split = SplitSpec::from_dates(&dataset.panel.dates, cfg.pipeline.train_fraction)?;
    let fit_range = (dataset.panel.dates[0], split.boundary);
    Ok(build_feature_tensor(&dataset.panel, fit_range, &cfg.pipeline.features)?)
}

/// Computes the tensor and writes it as a binary blob plus the fitted
/// normalization statistics.
pub fn build(cfg: &AppConfig, out: &Path) -> Result<()> {
    let (tensor, stats) = compute_tensor(cfg)?;
    ensure_out_dir(out)?;
    tensor.save(&out.join("features.bin"))?;
    std::fs::write(
        out.join("normalization_stats.json"),
        serde_json::to_string_pretty(&stats)? + "\n",
    )?;

    let mut manifest = RunManifest::new("features build", cfg.optim.seed, &cfg.raw_text);
    record_inputs(&mut manifest, cfg)?;
    manifest.set_data_range(
        tensor.n_tickers(),
        tensor.n_dates(),
        tensor.dates[0],
        *tensor.dates.last().expect("nonempty tensor"),
    );
    manifest.add_output("features.bin");
    manifest.add_output("normalization_stats.json");
    manifest.write(out)?;

    println!(
        "feature tensor: {} tickers x {} features x {} dates (warm-up {} rows) -> {}",
        tensor.n_tickers(),
        FEATURE_NAMES.len(),
        tensor.n_dates(),
        warmup_len(&cfg.pipeline.features),
        out.join("features.bin").display()
    );
    Ok(())
}

/// Prints per-feature summary statistics of the tensor.
pub fn inspect(cfg: &AppConfig, tensor_path: Option<&Path>) -> Result<()> {
    let tensor = match tensor_path {
        Some(path) => FeatureTensor::load(path)?,
        None => compute_tensor(cfg)?.0,
    };
    println!(
        "feature tensor: {} tickers x {} features x {} dates",
        tensor.n_tickers(),
        FEATURE_NAMES.len(),
        tensor.n_dates()
    );
    println!("{:<8} {:>12} {:>12} {:>12} {:>12}", "feature", "min", "max", "mean", "std");
    for (f, name) in FEATURE_NAMES.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..tensor.n_tickers() {
            for &v in tensor.series(i, f) {
                lo = lo.min(v);
                hi = hi.max(v);
                sum += v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let mut var = 0.0;
        for i in 0..tensor.n_tickers() {
            for &v in tensor.series(i, f) {
                var += (v - mean) * (v - mean);
            }
        }
        let std = (var / count as f64).sqrt();
        println!("{name:<8} {lo:>12.6} {hi:>12.6} {mean:>12.6} {std:>12.6}");
    }
    Ok(())
}
