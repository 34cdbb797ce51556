//! Trend calibration harness: prints per-seed and median test MAE for the
//! horizon sweep and the sequence-length crossover on one synthetic
//! generator configuration.
//!
//! ```bash
//! cargo run -p tgf-bench --release --example calibrate -- [epochs [data_seed]]
//! ```

use rayon::prelude::*;
use tgf_core::synthetic::{generate, SyntheticConfig};
use tgf_core::train::{median, prepare, run_one, GridConfig, OptimSettings, PipelineConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().map(|v| v.parse().unwrap()).unwrap_or(10);
    let data_seed: u64 = args.get(1).map(|v| v.parse().unwrap()).unwrap_or(7);

    let gen_cfg = SyntheticConfig { seed: data_seed, ..Default::default() };
    eprintln!("generator: {gen_cfg:?}, epochs {epochs}");
    let panel = generate(&gen_cfg).panel;
    let cfg = PipelineConfig::default();
    let prepared = prepare(&panel, None, &cfg).expect("prepare");
    eprintln!(
        "graph: {} edges, {} unconnected",
        prepared.diagnostics.n_edges,
        prepared.diagnostics.unconnected_nodes.len()
    );

    let mut jobs = Vec::new();
    for seq_len in [5usize, 30] {
        for future_window in [1usize, 2, 3, 8] {
            for seed in 1..=5u64 {
                jobs.push((GridConfig { seq_len, future_window }, seed));
            }
        }
    }
    let started = std::time::Instant::now();
    let results: Vec<((usize, usize, u64), f64)> = jobs
        .par_iter()
        .map(|(gc, seed)| {
            let settings = OptimSettings { seed: *seed, epochs, ..Default::default() };
            let (record, _) = run_one(&prepared, gc, &cfg, &settings).expect("run");
            ((gc.seq_len, gc.future_window, *seed), record.metrics.mae)
        })
        .collect();
    eprintln!("ran {} jobs in {:.1}s", jobs.len(), started.elapsed().as_secs_f64());

    for seq_len in [5usize, 30] {
        for future_window in [1usize, 2, 3, 8] {
            let maes: Vec<f64> = results
                .iter()
                .filter(|((s, f, _), _)| *s == seq_len && *f == future_window)
                .map(|(_, m)| *m)
                .collect();
            println!(
                "{:>2}SL{}D  median {:.4}  seeds {:?}",
                seq_len,
                future_window,
                median(&maes),
                maes.iter().map(|m| (m * 1e4).round() / 1e4).collect::<Vec<_>>()
            );
        }
    }
}
