//! Per-ticker feature engineering on close prices.
//!
//! Each node carries an 8-feature vector per day, in this fixed order:
//! RSI, MACD, ALR1W, ALR2W, ALR1M, ALR2M, NormR, LogR. The first
//! [`warmup_len`] trading days are dropped so every tensor cell is finite.
//! Normalization statistics are fitted on a caller-supplied date range so
//! that nothing outside that range can leak into them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Panel;
use crate::tensor::Tensor2;

/// Feature axis order of the tensor.
pub const FEATURE_NAMES: [&str; 8] = [
    "RSI", "MACD", "ALR1W", "ALR2W", "ALR1M", "ALR2M", "NormR", "LogR",
];

/// Rolling windows for the annualized log returns, in trading days
/// (1 week, 2 weeks, 1 month, 2 months).
pub const ALR_WINDOWS: [usize; 4] = [5, 10, 21, 42];

/// Trading days per year used to annualize windowed log returns.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CloseNorm {
    MinMax,
    ZScore,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub rsi_period: usize,
    pub macd_fast: usize,
    pub macd_slow: usize,
    pub close_norm: CloseNorm,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { rsi_period: 14, macd_fast: 12, macd_slow: 26, close_norm: CloseNorm::MinMax }
    }
}

/// Rows trimmed from the head of the date axis so that every feature is
/// defined: the longest ALR window dominates the indicator warm-ups.
pub fn warmup_len(cfg: &FeatureConfig) -> usize {
    ALR_WINDOWS[3].max(cfg.rsi_period).max(cfg.macd_slow)
}

/// Per-ticker normalization statistics fitted on the fitting range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerStats {
    pub close_min: f64,
    pub close_max: f64,
    pub close_mean: f64,
    pub close_std: f64,
    pub ret_mean: f64,
    pub ret_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub tickers: Vec<String>,
    pub per_ticker: Vec<TickerStats>,
    pub fit_start: NaiveDate,
    pub fit_end: NaiveDate,
}

/// (stocks x features x timestamps) array plus its axis labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// n_tickers x 8 x dates.len(), ticker-major then feature-major.
    values: Vec<f64>,
}

impl FeatureTensor {
    /// Assembles a tensor from raw parts (ticker-major, then feature-major
    /// values). Rejects wrong lengths and non-finite cells.
    pub fn from_values(
        tickers: Vec<String>,
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != tickers.len() * FEATURE_NAMES.len() * dates.len() {
            return Err(Error::ShapeError(format!(
                "expected {} tensor cells, got {}",
                tickers.len() * FEATURE_NAMES.len() * dates.len(),
                values.len()
            )));
        }
        let tensor = Self { tickers, dates, values };
        if !tensor.is_finite() {
            return Err(Error::DegenerateSeries("non-finite feature cell".into()));
        }
        Ok(tensor)
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn value(&self, ticker: usize, feature: usize, t: usize) -> f64 {
        self.values[(ticker * FEATURE_NAMES.len() + feature) * self.dates.len() + t]
    }

    /// One ticker's series for one feature, contiguous over time.
    pub fn series(&self, ticker: usize, feature: usize) -> &[f64] {
        let t = self.dates.len();
        let base = (ticker * FEATURE_NAMES.len() + feature) * t;
        &self.values[base..base + t]
    }

    /// Node feature block for one timestamp: n_tickers x 8.
    pub fn step_input(&self, t: usize) -> Tensor2 {
        let n = self.n_tickers();
        Tensor2::from_fn(n, FEATURE_NAMES.len(), |i, f| self.value(i, f, t))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    const MAGIC: &'static [u8; 4] = b"TGFT";
    const VERSION: u32 = 1;

    /// Writes the tensor as a single little-endian binary blob.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.tickers.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dates.len() as u64).to_le_bytes())?;
        for t in &self.tickers {
            write_str(&mut w, t)?;
        }
        for d in &self.dates {
            write_str(&mut w, &d.format("%Y-%m-%d").to_string())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::CheckpointFormat("bad feature tensor magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != Self::VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported feature tensor version {version}"
            )));
        }
        let n = read_u64(&mut r)? as usize;
        let t = read_u64(&mut r)? as usize;
        let tickers = (0..n).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
        let dates = (0..t)
            .map(|_| {
                let s = read_str(&mut r)?;
                NaiveDate::parse_from_str(&s, "%Y-%m-%d")
                    .map_err(|e| Error::CheckpointFormat(format!("bad date {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values = vec![0.0; n * FEATURE_NAMES.len() * t];
        let mut buf = [0u8; 8];
        for v in &mut values {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(Self { tickers, dates, values })
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::CheckpointFormat(format!("bad utf-8: {e}")))
}

/// Daily log returns: `r[k] = ln(closes[k+1] / closes[k])`.
pub fn log_returns(closes: &[f64]) -> Result<Vec<f64>> {
    if closes.len() < 2 {
        return Err(Error::InsufficientHistory(format!(
            "log returns need at least 2 closes, got {}",
            closes.len()
        )));
    }
    Ok(closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Annualized log return over a rolling window:
/// `(252 / w) * ln(P_t / P_{t-w})`, undefined for the first `w` entries.
pub fn annualized_log_return(closes: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    if !ALR_WINDOWS.contains(&window) {
        return Err(Error::BadWindow(window));
    }
    if closes.len() <= window {
        return Err(Error::InsufficientHistory(format!(
            "ALR window {window} needs more than {window} closes, got {}",
            closes.len()
        )));
    }
    let scale = TRADING_DAYS_PER_YEAR / window as f64;
    Ok((0..closes.len())
        .map(|t| {
            if t < window {
                None
            } else {
                Some(scale * (closes[t] / closes[t - window]).ln())
            }
        })
        .collect())
}

/// Wilder-smoothed relative strength index in [0, 100], undefined for the
/// first `period` entries. An all-gain window reads 100, an all-loss window 0.
pub fn rsi(closes: &[f64], period: usize) -> Result<Vec<Option<f64>>> {
    if period == 0 {
        return Err(Error::InvalidArgument("RSI period must be positive".into()));
    }
    if closes.len() <= period {
        return Err(Error::InsufficientHistory(format!(
            "RSI period {period} needs more than {period} closes, got {}",
            closes.len()
        )));
    }
    let mut out = vec![None; closes.len()];
    let mut avg_gain = 0.0;
    let mut avg_loss = 0.0;
    for t in 1..=period {
        let delta = closes[t] - closes[t - 1];
        if delta >= 0.0 {
            avg_gain += delta;
        } else {
            avg_loss -= delta;
        }
    }
    avg_gain /= period as f64;
    avg_loss /= period as f64;
    out[period] = Some(rsi_value(avg_gain, avg_loss));
    let p = period as f64;
    for t in period + 1..closes.len() {
        let delta = closes[t] - closes[t - 1];
        let (gain, loss) = if delta >= 0.0 { (delta, 0.0) } else { (0.0, -delta) };
        avg_gain = (avg_gain * (p - 1.0) + gain) / p;
        avg_loss = (avg_loss * (p - 1.0) + loss) / p;
        out[t] = Some(rsi_value(avg_gain, avg_loss));
    }
    Ok(out)
}

fn rsi_value(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_loss == 0.0 {
        100.0
    } else if avg_gain == 0.0 {
        0.0
    } else {
        100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    }
}

/// MACD line: fast EMA minus slow EMA of the close, both seeded at the first
/// price with smoothing `2 / (n + 1)`. No signal line.
pub fn macd(closes: &[f64], fast: usize, slow: usize) -> Result<Vec<f64>> {
    if closes.is_empty() {
        return Err(Error::InsufficientHistory("MACD needs a nonempty series".into()));
    }
    if fast == 0 || slow == 0 || fast >= slow {
        return Err(Error::InvalidArgument(format!(
            "MACD spans must satisfy 0 < fast < slow, got {fast}/{slow}"
        )));
    }
    let ema_fast = ema(closes, fast);
    let ema_slow = ema(closes, slow);
    Ok(ema_fast.iter().zip(&ema_slow).map(|(f, s)| f - s).collect())
}

fn ema(series: &[f64], span: usize) -> Vec<f64> {
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(series.len());
    let mut prev = series[0];
    out.push(prev);
    for &v in &series[1..] {
        prev = alpha * v + (1.0 - alpha) * prev;
        out.push(prev);
    }
    out
}

/// Z-scores log returns with fitting-range statistics.
pub fn normalized_returns(log_rets: &[f64], mean: f64, std: f64) -> Result<Vec<f64>> {
    if !(std > 0.0) {
        return Err(Error::DegenerateSeries(format!(
            "normalized returns need positive std, got {std}"
        )));
    }
    Ok(log_rets.iter().map(|r| (r - mean) / std).collect())
}

fn fit_stats(
    closes: &[f64],
    dates: &[NaiveDate],
    fit_start: NaiveDate,
    fit_end: NaiveDate,
    ticker: &str,
) -> Result<TickerStats> {
    let in_fit = |d: NaiveDate| d >= fit_start && d <= fit_end;
    let fit_closes: Vec<f64> = dates
        .iter()
        .zip(closes)
        .filter(|(d, _)| in_fit(**d))
        .map(|(_, c)| *c)
        .collect();
    if fit_closes.len() < 2 {
        return Err(Error::InsufficientHistory(format!(
            "fitting range holds {} closes for {ticker}; need at least 2",
            fit_closes.len()
        )));
    }
    // Returns whose both endpoints sit inside the fitting range, so that
    // closes outside the range cannot influence the statistics.
    let fit_rets: Vec<f64> = (1..closes.len())
        .filter(|&t| in_fit(dates[t - 1]) && in_fit(dates[t]))
        .map(|t| (closes[t] / closes[t - 1]).ln())
        .collect();
    if fit_rets.len() < 2 {
        return Err(Error::InsufficientHistory(format!(
            "fitting range holds {} returns for {ticker}; need at least 2",
            fit_rets.len()
        )));
    }
    let close_min = fit_closes.iter().copied().fold(f64::INFINITY, f64::min);
    let close_max = fit_closes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (close_mean, close_std) = mean_std(&fit_closes);
    let (ret_mean, ret_std) = mean_std(&fit_rets);
    if !(close_max > close_min) {
        return Err(Error::DegenerateSeries(format!(
            "constant close over the fitting range for {ticker}"
        )));
    }
    if !(ret_std > 0.0) {
        return Err(Error::DegenerateSeries(format!(
            "zero return variance over the fitting range for {ticker}"
        )));
    }
    Ok(TickerStats { close_min, close_max, close_mean, close_std, ret_mean, ret_std })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Computes the full 8-feature tensor from a panel, trimming the warm-up
/// rows, and returns it with the statistics fitted on `fit_range`.
pub fn build_feature_tensor(
    panel: &Panel,
    fit_range: (NaiveDate, NaiveDate),
    cfg: &FeatureConfig,
) -> Result<(FeatureTensor, NormalizationStats)> {
    let warmup = warmup_len(cfg);
    let t_full = panel.n_dates();
    if t_full <= warmup {
        return Err(Error::InsufficientHistory(format!(
            "panel holds {t_full} dates; warm-up needs more than {warmup}"
        )));
    }
    let (fit_start, fit_end) = fit_range;
    if fit_start < panel.dates[0] || fit_end > panel.dates[t_full - 1] || fit_start > fit_end {
        return Err(Error::InvalidArgument(format!(
            "fitting range {fit_start}..{fit_end} outside panel dates"
        )));
    }
    let n = panel.n_tickers();
    let t_out = t_full - warmup;
    let mut values = vec![0.0; n * FEATURE_NAMES.len() * t_out];
    let mut per_ticker = Vec::with_capacity(n);

    for i in 0..n {
        let closes = panel.closes_of(i);
        let stats = fit_stats(closes, &panel.dates, fit_start, fit_end, &panel.tickers[i])?;
        let rsi_series = rsi(closes, cfg.rsi_period)?;
        let macd_series = macd(closes, cfg.macd_fast, cfg.macd_slow)?;
        let alrs: Vec<Vec<Option<f64>>> = ALR_WINDOWS
            .iter()
            .map(|&w| annualized_log_return(closes, w))
            .collect::<Result<_>>()?;
        let rets = log_returns(closes)?;
        let norm_rets = normalized_returns(&rets, stats.ret_mean, stats.ret_std)?;

        for j in 0..t_out {
            let t = j + warmup;
            let row = [
                rsi_series[t].expect("t beyond RSI warm-up"),
                macd_series[t],
                alrs[0][t].expect("t beyond ALR1W warm-up"),
                alrs[1][t].expect("t beyond ALR2W warm-up"),
                alrs[2][t].expect("t beyond ALR1M warm-up"),
                alrs[3][t].expect("t beyond ALR2M warm-up"),
                norm_rets[t - 1],
                rets[t - 1],
            ];
            for (f, v) in row.into_iter().enumerate() {
                values[(i * FEATURE_NAMES.len() + f) * t_out + j] = v;
            }
        }
        per_ticker.push(stats);
    }

    let tensor = FeatureTensor {
        tickers: panel.tickers.clone(),
        dates: panel.dates[warmup..].to_vec(),
        values,
    };
    if !tensor.is_finite() {
        return Err(Error::DegenerateSeries("non-finite feature cell".into()));
    }
    let stats = NormalizationStats {
        tickers: panel.tickers.clone(),
        per_ticker,
        fit_start,
        fit_end,
    };
    Ok((tensor, stats))
}

/// Normalized close levels aligned with the tensor's trimmed date axis;
/// these are the prediction targets.
pub fn normalized_closes(
    panel: &Panel,
    stats: &NormalizationStats,
    mode: CloseNorm,
    warmup: usize,
) -> Result<Tensor2> {
    let t_full = panel.n_dates();
    if t_full <= warmup {
        return Err(Error::InsufficientHistory(format!(
            "panel holds {t_full} dates; warm-up needs more than {warmup}"
        )));
    }
    let n = panel.n_tickers();
    if stats.per_ticker.len() != n {
        return Err(Error::ShapeError(format!(
            "stats cover {} tickers, panel has {n}",
            stats.per_ticker.len()
        )));
    }
    let t_out = t_full - warmup;
    Ok(Tensor2::from_fn(n, t_out, |i, j| {
        let s = &stats.per_ticker[i];
        let close = panel.close(i, j + warmup);
        match mode {
            CloseNorm::MinMax => (close - s.close_min) / (s.close_max - s.close_min),
            CloseNorm::ZScore => (close - s.close_mean) / s.close_std,
        }
    }))
}
