//! Seeded synthetic equity panels.
//!
//! Log prices combine a slow per-sector wave, an optional regime drift that
//! flips sign on a fixed schedule, and AR(1) noise whose innovations are
//! correlated inside a sector. Sector-mates therefore co-move (the
//! correlation graph picks them up) while horizons decay in predictability,
//! which is what the trend-style acceptance checks need.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::ingest::{Panel, PriceSeries, RatioTable, SectorRow, SectorTable, RATIO_NAMES};

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_nodes: usize,
    pub n_days: usize,
    pub n_sectors: usize,
    pub seed: u64,
    /// Trading-day period of the slow sector wave.
    pub wave_period: f64,
    /// Log-price amplitude of the wave.
    pub wave_amplitude: f64,
    /// AR(1) coefficient of the noise component.
    pub ar_phi: f64,
    /// Innovation standard deviation of the noise component.
    pub ar_sigma: f64,
    /// Share of each innovation drawn from the sector-common shock.
    pub sector_mix: f64,
    /// Drift magnitude of the regime component (0 disables it).
    pub trend_magnitude: f64,
    /// Trading days between regime sign flips.
    pub trend_flip_days: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_nodes: 20,
            n_days: 600,
            n_sectors: 4,
            seed: 7,
            wave_period: 40.0,
            wave_amplitude: 0.20,
            ar_phi: 0.85,
            ar_sigma: 0.02,
            sector_mix: 0.6,
            trend_magnitude: 0.0,
            trend_flip_days: 35,
        }
    }
}

pub struct SyntheticDataset {
    pub panel: Panel,
    pub sectors: SectorTable,
    pub ratios: RatioTable,
    pub series: Vec<PriceSeries>,
}

/// Consecutive business days starting 2007-01-02.
pub fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = NaiveDate::from_ymd_opt(2007, 1, 2).expect("valid date");
    while out.len() < n {
        if d.weekday() != Weekday::Sat && d.weekday() != Weekday::Sun {
            out.push(d);
        }
        d = d.succ_opt().expect("date range");
    }
    out
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticDataset {
    assert!(cfg.n_sectors > 0 && cfg.n_nodes >= cfg.n_sectors);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dates = business_days(cfg.n_days);
    let n = cfg.n_nodes;

    let sector_of = |i: usize| i % cfg.n_sectors;
    let sector_name = |s: usize| format!("Sector {}", (b'A' + s as u8) as char);
    let tickers: Vec<String> = (0..n).map(|i| format!("SYN{i:02}.L")).collect();

    // Per-sector wave phases, evenly spaced with jitter so that no two
    // sectors end up nearly in phase by accident; per-node amplitudes and
    // base levels are jittered too.
    let phases: Vec<f64> = (0..cfg.n_sectors)
        .map(|s| {
            std::f64::consts::TAU * s as f64 / cfg.n_sectors as f64 + rng.gen_range(-0.2..0.2)
        })
        .collect();
    let amplitudes: Vec<f64> = (0..n)
        .map(|_| cfg.wave_amplitude * rng.gen_range(0.8..1.2))
        .collect();
    let bases: Vec<f64> = (0..n).map(|_| rng.gen_range(20.0_f64..100.0).ln()).collect();

    let omega = std::f64::consts::TAU / cfg.wave_period;
    let mut noise = vec![0.0_f64; n];
    let mut closes = vec![0.0; n * cfg.n_days];
    for t in 0..cfg.n_days {
        let sector_shocks: Vec<f64> = (0..cfg.n_sectors)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        for i in 0..n {
            let s = sector_of(i);
            let own: f64 = rng.sample(StandardNormal);
            let mix = cfg.sector_mix;
            let shock = mix * sector_shocks[s] + (1.0 - mix * mix).sqrt() * own;
            noise[i] = cfg.ar_phi * noise[i] + cfg.ar_sigma * shock;
            let wave = amplitudes[i] * (omega * t as f64 + phases[s]).sin();
            let regime = if cfg.trend_magnitude > 0.0 {
                // Triangle wave: drift runs one way for `flip` days, then
                // reverses; sectors are phase-offset from each other.
                let flip = cfg.trend_flip_days;
                let phase = (t + s * flip / cfg.n_sectors) % (2 * flip);
                let tri = if phase < flip { phase } else { 2 * flip - phase };
                cfg.trend_magnitude * (tri as f64 - flip as f64 / 2.0)
            } else {
                0.0
            };
            closes[i * cfg.n_days + t] = (bases[i] + wave + regime + noise[i]).exp();
        }
    }

    let sectors = SectorTable::new(
        (0..n)
            .map(|i| SectorRow {
                ticker: tickers[i].clone(),
                company_name: format!("Synthetic Company {i:02}"),
                sector: sector_name(sector_of(i)),
            })
            .collect(),
    )
    .expect("unique tickers");

    // Ratio vectors: a per-sector base profile with mild per-node jitter, on
    // ratio-typical scales; never exactly zero.
    let scales: [f64; 28] = [
        1.5, 1.2, 0.15, 0.45, 0.2, 0.08, 0.15, 3.0, 18.0, 15.0, 3.5, 12.0, 80.0, 0.08, 0.1, 5.0,
        0.4, 0.03, 0.035, 0.1, 1.0, 1.0e9, 1.0e8, 1.0e8, 1.0e9, 4.0, 1.2, 1.3,
    ];
    let sector_profiles: Vec<Vec<f64>> = (0..cfg.n_sectors)
        .map(|_| {
            scales
                .iter()
                .map(|s| s * rng.gen_range(0.6..1.4))
                .collect()
        })
        .collect();
    let mut ratio_values = Vec::with_capacity(n * RATIO_NAMES.len());
    for i in 0..n {
        let profile = &sector_profiles[sector_of(i)];
        for v in profile {
            ratio_values.push(Some(v * rng.gen_range(0.9..1.1)));
        }
    }
    let ratios = RatioTable::new(tickers.clone(), ratio_values).expect("consistent table");

    let series: Vec<PriceSeries> = (0..n)
        .map(|i| {
            PriceSeries::new(
                tickers[i].clone(),
                dates
                    .iter()
                    .copied()
                    .zip(closes[i * cfg.n_days..(i + 1) * cfg.n_days].iter().copied())
                    .collect(),
            )
            .expect("positive closes")
        })
        .collect();

    let panel = Panel {
        tickers: tickers.clone(),
        dates,
        sectors: (0..n).map(|i| sector_name(sector_of(i))).collect(),
        closes,
    };
    SyntheticDataset { panel, sectors, ratios, series }
}

/// Writes the dataset in the CSV contracts: `sectors.csv`,
/// `prices/<ticker>.csv`, `ratios.csv`.
pub fn write_csv(dataset: &SyntheticDataset, dir: &std::path::Path) -> Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(dir.join("prices"))?;
    let mut sectors = std::fs::File::create(dir.join("sectors.csv"))?;
    writeln!(sectors, "ticker,name,sector")?;
    for row in dataset.sectors.rows() {
        writeln!(sectors, "{},{},{}", row.ticker, row.company_name, row.sector)?;
    }
    for series in &dataset.series {
        let mut f = std::fs::File::create(dir.join("prices").join(format!("{}.csv", series.ticker)))?;
        writeln!(f, "date,close")?;
        for (date, close) in &series.observations {
            writeln!(f, "{},{}", date.format("%Y-%m-%d"), close)?;
        }
    }
    let mut ratios = std::fs::File::create(dir.join("ratios.csv"))?;
    writeln!(ratios, "ticker,{}", RATIO_NAMES.join(","))?;
    for ticker in dataset.ratios.tickers() {
        let row = dataset.ratios.row(ticker).expect("own ticker");
        let cells: Vec<String> = row
            .iter()
            .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
            .collect();
        writeln!(ratios, "{},{}", ticker, cells.join(","))?;
    }
    Ok(())
}
