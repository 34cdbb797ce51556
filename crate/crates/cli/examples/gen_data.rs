//! Writes a synthetic dataset in the CSV contracts plus a ready-to-run
//! config file.
//!
//! ```bash
//! cargo run -p tgf-cli --example gen_data -- demo [n_nodes n_days seed]
//! tgf experiment --config demo/experiment.conf --out runs/demo
//! ```

use std::path::PathBuf;

use tgf_core::synthetic::{generate, write_csv, SyntheticConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = PathBuf::from(args.first().map(String::as_str).unwrap_or("demo"));
    let mut cfg = SyntheticConfig::default();
    if let Some(n) = args.get(1) {
        cfg.n_nodes = n.parse()?;
    }
    if let Some(d) = args.get(2) {
        cfg.n_days = d.parse()?;
    }
    if let Some(s) = args.get(3) {
        cfg.seed = s.parse()?;
    }

    let data = generate(&cfg);
    std::fs::create_dir_all(&dir)?;
    write_csv(&data, &dir)?;

    let config = format!(
        "# synthetic demo dataset ({} nodes x {} days, seed {})\n\
         paths.sectors = sectors.csv\n\
         paths.prices_dir = prices\n\
         paths.ratios = ratios.csv\n\
         study.start = {}\n\
         study.end = {}\n\
         graph.mode = returns\n\
         seed = 42\n\
         # full grid: grid.seq_lens = 5,30 and grid.horizons = 1,2,3,8\n\
         grid.seq_lens = 5\n\
         grid.horizons = 1,8\n\
         curve.max_epochs = 30\n",
        cfg.n_nodes,
        cfg.n_days,
        cfg.seed,
        data.panel.dates[0].format("%Y-%m-%d"),
        data.panel.dates.last().unwrap().format("%Y-%m-%d"),
    );
    std::fs::write(dir.join("experiment.conf"), config)?;
    println!(
        "wrote {} tickers x {} days under {} (config: {})",
        cfg.n_nodes,
        cfg.n_days,
        dir.display(),
        dir.join("experiment.conf").display()
    );
    Ok(())
}
