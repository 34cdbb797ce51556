//! CSV ingestion and panel cleaning.
//!
//! Three tables feed the pipeline: a sector classification, one close-price
//! series per ticker, and a table of 28 fundamental ratios. [`clean_panel`]
//! reduces them to a rectangular (ticker x date) close matrix in three
//! ordered steps, recording how many companies and observations each step
//! removed.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 28 fundamental ratio columns, in the order the `ratios.csv` contract
/// fixes them.
pub const RATIO_NAMES: [&str; 28] = [
    "currentRatio",
    "quickRatio",
    "profitMargins",
    "grossMargins",
    "operatingMargins",
    "returnOnAssets",
    "returnOnEquity",
    "priceToBook",
    "trailingPE",
    "forwardPE",
    "enterpriseToRevenue",
    "enterpriseToEbitda",
    "debtToEquity",
    "revenueGrowth",
    "earningsGrowth",
    "revenuePerShare",
    "payoutRatio",
    "trailingAnnualDividendYield",
    "fiveYearAvgDividendYield",
    "52WeekChange",
    "beta",
    "totalRevenue",
    "totalDebt",
    "totalCash",
    "sharesOutstanding",
    "bookValue",
    "trailingEps",
    "forwardEps",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectorRow {
    pub ticker: String,
    pub company_name: String,
    pub sector: String,
}

/// Ticker -> sector classification table.
#[derive(Debug, Clone, Default)]
pub struct SectorTable {
    rows: Vec<SectorRow>,
    index: HashMap<String, usize>,
}

impl SectorTable {
    pub fn new(rows: Vec<SectorRow>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            if row.sector.trim().is_empty() {
                return Err(Error::SchemaViolation(format!(
                    "empty sector for ticker {}",
                    row.ticker
                )));
            }
            if index.insert(row.ticker.clone(), i).is_some() {
                return Err(Error::DuplicateTicker(row.ticker.clone()));
            }
        }
        Ok(Self { rows, index })
    }

    pub fn rows(&self) -> &[SectorRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sector_of(&self, ticker: &str) -> Option<&str> {
        self.index.get(ticker).map(|&i| self.rows[i].sector.as_str())
    }
}

/// Dated close prices for one ticker, sorted ascending by date.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceSeries {
    pub ticker: String,
    pub observations: Vec<(NaiveDate, f64)>,
}

impl PriceSeries {
    pub fn new(ticker: String, mut observations: Vec<(NaiveDate, f64)>) -> Result<Self> {
        for (date, close) in &observations {
            if !close.is_finite() || *close <= 0.0 {
                return Err(Error::SchemaViolation(format!(
                    "non-positive close {close} for {ticker} on {date}"
                )));
            }
        }
        observations.sort_by_key(|(d, _)| *d);
        for pair in observations.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::SchemaViolation(format!(
                    "duplicate date {} for {ticker}",
                    pair[0].0
                )));
            }
        }
        Ok(Self { ticker, observations })
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.observations.first().map(|(d, _)| *d)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.observations.last().map(|(d, _)| *d)
    }
}

/// Fundamental ratio values per ticker. `None` marks a value absent from the
/// source; an exact `0.0` is treated as missing data by [`RatioTable::is_missing`].
#[derive(Debug, Clone)]
pub struct RatioTable {
    tickers: Vec<String>,
    values: Vec<Option<f64>>, // tickers.len() x 28, row-major
    index: HashMap<String, usize>,
}

impl RatioTable {
    pub fn new(tickers: Vec<String>, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != tickers.len() * RATIO_NAMES.len() {
            return Err(Error::SchemaViolation(format!(
                "expected {} ratio cells, got {}",
                tickers.len() * RATIO_NAMES.len(),
                values.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, t) in tickers.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::DuplicateTicker(t.clone()));
            }
        }
        Ok(Self { tickers, values, index })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn contains(&self, ticker: &str) -> bool {
        self.index.contains_key(ticker)
    }

    pub fn row(&self, ticker: &str) -> Option<&[Option<f64>]> {
        let n = RATIO_NAMES.len();
        self.index.get(ticker).map(|&i| &self.values[i * n..(i + 1) * n])
    }

    /// A ticker is flagged missing-data when it is absent from the table or
    /// any of its 28 values is absent or exactly zero.
    pub fn is_missing(&self, ticker: &str) -> bool {
        match self.row(ticker) {
            None => true,
            Some(row) => row.iter().any(|v| match v {
                None => true,
                Some(x) => *x == 0.0,
            }),
        }
    }

    /// Min-max normalizes each ratio column over the given tickers, returning
    /// one length-28 vector per ticker in `order`. Constant columns map to
    /// zero. Errors if a requested ticker has missing values.
    pub fn normalized(&self, order: &[String]) -> Result<Vec<Vec<f64>>> {
        let n_ratios = RATIO_NAMES.len();
        let mut raw = Vec::with_capacity(order.len());
        for t in order {
            let row = self.row(t).ok_or_else(|| Error::MissingTicker(t.clone()))?;
            let mut vals = Vec::with_capacity(n_ratios);
            for (k, v) in row.iter().enumerate() {
                match v {
                    Some(x) => vals.push(*x),
                    None => {
                        return Err(Error::SchemaViolation(format!(
                            "missing ratio {} for {}",
                            RATIO_NAMES[k], t
                        )))
                    }
                }
            }
            raw.push(vals);
        }
        let mut out = vec![vec![0.0; n_ratios]; order.len()];
        for k in 0..n_ratios {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for row in &raw {
                lo = lo.min(row[k]);
                hi = hi.max(row[k]);
            }
            let span = hi - lo;
            for (i, row) in raw.iter().enumerate() {
                out[i][k] = if span > 0.0 { (row[k] - lo) / span } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Rectangular close-price panel: every ticker has a close on every date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub sectors: Vec<String>,
    /// tickers.len() x dates.len(), row-major by ticker.
    pub closes: Vec<f64>,
}

impl Panel {
    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn close(&self, ticker: usize, date: usize) -> f64 {
        self.closes[ticker * self.dates.len() + date]
    }

    pub fn closes_of(&self, ticker: usize) -> &[f64] {
        let t = self.dates.len();
        &self.closes[ticker * t..(ticker + 1) * t]
    }

    pub fn observations(&self) -> usize {
        self.closes.len()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer(file, self)
            .map_err(|e| Error::SchemaViolation(format!("panel serialization: {e}")))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        serde_json::from_reader(file)
            .map_err(|e| Error::SchemaViolation(format!("panel parse: {e}")))
    }

    /// Sector table restricted to the panel's tickers, in panel order.
    pub fn sector_table(&self) -> SectorTable {
        let rows = self
            .tickers
            .iter()
            .zip(&self.sectors)
            .map(|(t, s)| SectorRow {
                ticker: t.clone(),
                company_name: String::new(),
                sector: s.clone(),
            })
            .collect();
        SectorTable::new(rows).expect("panel tickers are unique")
    }
}

/// Counts removed by each cleaning step, mirroring the shape of the data
/// processing summary table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningLog {
    pub initial_companies: usize,
    pub initial_observations: usize,
    pub incomplete_companies: usize,
    pub incomplete_observations: usize,
    pub missing_ratio_companies: usize,
    pub missing_ratio_observations: usize,
    pub incomplete_dates: usize,
    pub incomplete_date_observations: usize,
    pub final_companies: usize,
    pub final_observations: usize,
}

fn thousands(v: usize) -> String {
    let s = v.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl fmt::Display for CleaningLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, String, String); 5] = [
            (
                "Initial population in study window",
                thousands(self.initial_companies),
                thousands(self.initial_observations),
            ),
            (
                "Less: companies without complete data for the period",
                format!("({})", thousands(self.incomplete_companies)),
                format!("({})", thousands(self.incomplete_observations)),
            ),
            (
                "Less: companies missing ratios from the database",
                format!("({})", thousands(self.missing_ratio_companies)),
                format!("({})", thousands(self.missing_ratio_observations)),
            ),
            (
                "Less: dates where at least 1 company had a missing day",
                "\u{2014}".to_string(),
                format!("({})", thousands(self.incomplete_date_observations)),
            ),
            (
                "Number of observations in the final population",
                thousands(self.final_companies),
                thousands(self.final_observations),
            ),
        ];
        writeln!(f, "Data processing")?;
        writeln!(f, "{:<56} {:>10} {:>14}", "", "Companies", "Observations")?;
        for (label, companies, obs) in rows {
            writeln!(f, "{label:<56} {companies:>10} {obs:>14}")?;
        }
        Ok(())
    }
}

/// Loads `sectors.csv` (header `ticker,name,sector`).
pub fn load_sectors(path: &Path) -> Result<SectorTable> {
    let mut reader = csv::Reader::from_path(path)?;
    expect_headers(&mut reader, &["ticker", "name", "sector"], path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::SchemaViolation(format!("{}: {e}", path.display())))?;
        if record.len() != 3 {
            return Err(Error::SchemaViolation(format!(
                "{}: expected 3 fields, got {}",
                path.display(),
                record.len()
            )));
        }
        rows.push(SectorRow {
            ticker: record[0].trim().to_string(),
            company_name: record[1].trim().to_string(),
            sector: record[2].trim().to_string(),
        });
    }
    SectorTable::new(rows)
}

/// Loads one `prices/<ticker>.csv` file (header `date,close`); the ticker is
/// taken from the file stem.
pub fn load_price_file(path: &Path) -> Result<PriceSeries> {
    let ticker = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::SchemaViolation(format!("bad price file name {}", path.display())))?
        .to_string();
    let mut reader = csv::Reader::from_path(path)?;
    expect_headers(&mut reader, &["date", "close"], path)?;
    let mut observations = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::SchemaViolation(format!("{}: {e}", path.display())))?;
        let date = NaiveDate::parse_from_str(record[0].trim(), "%Y-%m-%d").map_err(|e| {
            Error::SchemaViolation(format!("{}: bad date {:?}: {e}", path.display(), &record[0]))
        })?;
        let close: f64 = record[1].trim().parse().map_err(|e| {
            Error::SchemaViolation(format!("{}: bad close {:?}: {e}", path.display(), &record[1]))
        })?;
        observations.push((date, close));
    }
    PriceSeries::new(ticker, observations)
}

/// Loads every price file, sorted by path for a deterministic ticker order.
pub fn load_prices(paths: &[std::path::PathBuf]) -> Result<Vec<PriceSeries>> {
    let mut paths = paths.to_vec();
    paths.sort();
    paths.iter().map(|p| load_price_file(p)).collect()
}

/// Loads `ratios.csv` (header `ticker` followed by the 28 ratio names in
/// [`RATIO_NAMES`] order). Empty cells become `None`.
pub fn load_ratios(path: &Path) -> Result<RatioTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut expected = vec!["ticker"];
    expected.extend(RATIO_NAMES);
    expect_headers(&mut reader, &expected, path)?;
    let mut tickers = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::SchemaViolation(format!("{}: {e}", path.display())))?;
        if record.len() != RATIO_NAMES.len() + 1 {
            return Err(Error::SchemaViolation(format!(
                "{}: expected {} fields, got {}",
                path.display(),
                RATIO_NAMES.len() + 1,
                record.len()
            )));
        }
        tickers.push(record[0].trim().to_string());
        for field in record.iter().skip(1) {
            let field = field.trim();
            if field.is_empty() {
                values.push(None);
            } else {
                let v: f64 = field.parse().map_err(|e| {
                    Error::SchemaViolation(format!("{}: bad ratio {field:?}: {e}", path.display()))
                })?;
                values.push(Some(v));
            }
        }
    }
    RatioTable::new(tickers, values)
}

fn expect_headers(
    reader: &mut csv::Reader<File>,
    expected: &[&str],
    path: &Path,
) -> Result<()> {
    let headers = reader
        .headers()
        .map_err(|e| Error::SchemaViolation(format!("{}: {e}", path.display())))?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::SchemaViolation(format!(
            "{}: expected header {:?}, got {:?}",
            path.display(),
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

/// Applies the three cleaning steps, in order:
///
/// 1. drop tickers whose series does not cover both study endpoints;
/// 2. drop tickers flagged missing-data in the ratio table;
/// 3. drop dates absent from at least one surviving ticker.
///
/// Observation counts are measured inside `[study_start, study_end]`.
pub fn clean_panel(
    series: &[PriceSeries],
    sectors: &SectorTable,
    ratios: &RatioTable,
    study_start: NaiveDate,
    study_end: NaiveDate,
) -> Result<(Panel, CleaningLog)> {
    if study_start >= study_end {
        return Err(Error::InvalidArgument(format!(
            "study_start {study_start} must precede study_end {study_end}"
        )));
    }
    for s in series {
        if sectors.sector_of(&s.ticker).is_none() {
            return Err(Error::MissingTicker(format!(
                "{} absent from sector table",
                s.ticker
            )));
        }
    }

    let in_window: Vec<Vec<(NaiveDate, f64)>> = series
        .iter()
        .map(|s| {
            s.observations
                .iter()
                .filter(|(d, _)| *d >= study_start && *d <= study_end)
                .cloned()
                .collect()
        })
        .collect();
    let initial_companies = series.len();
    let initial_observations: usize = in_window.iter().map(Vec::len).sum();

    // Step 1: endpoint coverage, judged on the full series bounds so that
    // pre-window history counts toward coverage.
    let mut covered = Vec::new();
    let mut incomplete_companies = 0;
    let mut incomplete_observations = 0;
    for (i, s) in series.iter().enumerate() {
        let complete = match (s.first_date(), s.last_date()) {
            (Some(first), Some(last)) => first <= study_start && last >= study_end,
            _ => false,
        };
        if complete {
            covered.push(i);
        } else {
            incomplete_companies += 1;
            incomplete_observations += in_window[i].len();
        }
    }

    // Step 2: ratio availability.
    let mut with_ratios = Vec::new();
    let mut missing_ratio_companies = 0;
    let mut missing_ratio_observations = 0;
    for &i in &covered {
        if ratios.is_missing(&series[i].ticker) {
            missing_ratio_companies += 1;
            missing_ratio_observations += in_window[i].len();
        } else {
            with_ratios.push(i);
        }
    }
    if with_ratios.is_empty() {
        return Err(Error::EmptyPanel(
            "no tickers survive the cleaning steps".to_string(),
        ));
    }

    // Step 3: intersect trading calendars.
    let mut union_dates = BTreeSet::new();
    let mut per_ticker_dates: Vec<HashSet<NaiveDate>> = Vec::new();
    for &i in &with_ratios {
        let dates: HashSet<NaiveDate> = in_window[i].iter().map(|(d, _)| *d).collect();
        union_dates.extend(dates.iter().copied());
        per_ticker_dates.push(dates);
    }
    let mut shared_dates = Vec::new();
    let mut incomplete_dates = 0;
    let mut incomplete_date_observations = 0;
    for date in union_dates {
        if per_ticker_dates.iter().all(|set| set.contains(&date)) {
            shared_dates.push(date);
        } else {
            incomplete_dates += 1;
            incomplete_date_observations +=
                per_ticker_dates.iter().filter(|set| set.contains(&date)).count();
        }
    }
    if shared_dates.is_empty() {
        return Err(Error::EmptyPanel("no shared trading dates".to_string()));
    }

    let n = with_ratios.len();
    let t = shared_dates.len();
    let mut closes = Vec::with_capacity(n * t);
    let mut tickers = Vec::with_capacity(n);
    let mut panel_sectors = Vec::with_capacity(n);
    let shared_set: HashSet<NaiveDate> = shared_dates.iter().copied().collect();
    for &i in &with_ratios {
        tickers.push(series[i].ticker.clone());
        panel_sectors.push(
            sectors
                .sector_of(&series[i].ticker)
                .expect("checked above")
                .to_string(),
        );
        closes.extend(
            in_window[i]
                .iter()
                .filter(|(d, _)| shared_set.contains(d))
                .map(|(_, c)| *c),
        );
    }
    debug_assert_eq!(closes.len(), n * t);

    let log = CleaningLog {
        initial_companies,
        initial_observations,
        incomplete_companies,
        incomplete_observations,
        missing_ratio_companies,
        missing_ratio_observations,
        incomplete_dates,
        incomplete_date_observations,
        final_companies: n,
        final_observations: n * t,
    };
    let panel = Panel { tickers, dates: shared_dates, sectors: panel_sectors, closes };
    Ok((panel, log))
}
