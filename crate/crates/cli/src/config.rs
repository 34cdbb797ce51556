//! Plain-text key-value experiment configuration.
//!
//! One `key = value` pair per line, `#` starts a comment line, unknown keys
//! are rejected. Relative paths resolve against the config file's directory.
//! The verbatim text is kept for the run manifest.

use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use tgf_core::features::CloseNorm;
use tgf_core::graph::{CorrelationMode, ThresholdRule};
use tgf_core::model::GateStyle;
use tgf_core::train::{GridConfig, OptimSettings, PipelineConfig};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
pub struct CurveConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub seq_len: usize,
    pub horizon: usize,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

#[derive(Debug, Clone)]
pub struct AppConfig {
    pub raw_text: String,
    pub sectors: Option<PathBuf>,
    pub prices_dir: Option<PathBuf>,
    pub ratios: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub study_start: NaiveDate,
    pub study_end: NaiveDate,
    pub pipeline: PipelineConfig,
    pub optim: OptimSettings,
    pub grid_seq_lens: Vec<usize>,
    pub grid_horizons: Vec<usize>,
    pub curve: CurveConfig,
}

impl AppConfig {
    pub fn grid(&self) -> Vec<GridConfig> {
        let mut out = Vec::new();
        for &seq_len in &self.grid_seq_lens {
            for &future_window in &self.grid_horizons {
                out.push(GridConfig { seq_len, future_window });
            }
        }
        out
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

fn parse_date(key: &str, value: &str) -> Result<NaiveDate, ConfigError> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|e| ConfigError(format!("{key}: bad date {value:?}: {e}")))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError(format!("{key}: bad value {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|v| parse_num::<usize>(key, v.trim()))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => err(format!("{key}: expected true/false, got {other:?}")),
    }
}

pub fn load(path: &Path) -> Result<AppConfig, ConfigError> {
    let raw_text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let resolve = |v: &str| -> PathBuf {
        let p = PathBuf::from(v);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };

    let mut cfg = AppConfig {
        raw_text: raw_text.clone(),
        sectors: None,
        prices_dir: None,
        ratios: None,
        panel: None,
        study_start: NaiveDate::from_ymd_opt(2007, 1, 1).expect("valid"),
        study_end: NaiveDate::from_ymd_opt(2024, 12, 30).expect("valid"),
        pipeline: PipelineConfig::default(),
        optim: OptimSettings::default(),
        grid_seq_lens: vec![5, 30],
        grid_horizons: vec![1, 2, 3, 8],
        curve: CurveConfig {
            max_epochs: 60,
            patience: 0,
            seq_len: 5,
            horizon: 1,
            start: None,
            end: None,
        },
    };

    for (lineno, line) in raw_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!("line {}: expected `key = value`", lineno + 1));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "paths.sectors" => cfg.sectors = Some(resolve(value)),
            "paths.prices_dir" => cfg.prices_dir = Some(resolve(value)),
            "paths.ratios" => cfg.ratios = Some(resolve(value)),
            "paths.panel" => cfg.panel = Some(resolve(value)),
            "study.start" => cfg.study_start = parse_date(key, value)?,
            "study.end" => cfg.study_end = parse_date(key, value)?,
            "graph.mode" => {
                cfg.pipeline.graph_mode = match value {
                    "returns" => CorrelationMode::PearsonReturns,
                    "ratios" => CorrelationMode::SpearmanRatios,
                    other => return err(format!("graph.mode: returns or ratios, got {other:?}")),
                }
            }
            "graph.threshold" => cfg.pipeline.graph_threshold = Some(parse_num(key, value)?),
            "graph.rule" => {
                cfg.pipeline.threshold_rule = match value {
                    "absolute" => ThresholdRule::Absolute,
                    "signed" => ThresholdRule::Signed,
                    other => return err(format!("graph.rule: absolute or signed, got {other:?}")),
                }
            }
            "features.rsi_period" => cfg.pipeline.features.rsi_period = parse_num(key, value)?,
            "features.macd_fast" => cfg.pipeline.features.macd_fast = parse_num(key, value)?,
            "features.macd_slow" => cfg.pipeline.features.macd_slow = parse_num(key, value)?,
            "features.close_norm" => {
                cfg.pipeline.features.close_norm = match value {
                    "minmax" => CloseNorm::MinMax,
                    "zscore" => CloseNorm::ZScore,
                    other => {
                        return err(format!("features.close_norm: minmax or zscore, got {other:?}"))
                    }
                }
            }
            "train.fraction" => cfg.pipeline.train_fraction = parse_num(key, value)?,
            "target.multi_output" => cfg.pipeline.multi_output = parse_bool(key, value)?,
            "model.cell2_gates" => {
                cfg.pipeline.cell2_gates = match value {
                    "wide" => GateStyle::WideContext,
                    "conv" => GateStyle::ConvOnly,
                    other => return err(format!("model.cell2_gates: wide or conv, got {other:?}")),
                }
            }
            "optim.learning_rate" => cfg.optim.learning_rate = parse_num(key, value)?,
            "optim.weight_decay" => cfg.optim.weight_decay = parse_num(key, value)?,
            "optim.batch_size" => cfg.optim.batch_size = parse_num(key, value)?,
            "optim.epochs" => cfg.optim.epochs = parse_num(key, value)?,
            "seed" => cfg.optim.seed = parse_num(key, value)?,
            "grid.seq_lens" => cfg.grid_seq_lens = parse_list(key, value)?,
            "grid.horizons" => cfg.grid_horizons = parse_list(key, value)?,
            "curve.max_epochs" => cfg.curve.max_epochs = parse_num(key, value)?,
            "curve.patience" => cfg.curve.patience = parse_num(key, value)?,
            "curve.seq_len" => cfg.curve.seq_len = parse_num(key, value)?,
            "curve.horizon" => cfg.curve.horizon = parse_num(key, value)?,
            "curve.start" => cfg.curve.start = Some(parse_date(key, value)?),
            "curve.end" => cfg.curve.end = Some(parse_date(key, value)?),
            other => return err(format!("line {}: unknown key {other:?}", lineno + 1)),
        }
    }

    if cfg.panel.is_none() && (cfg.sectors.is_none() || cfg.prices_dir.is_none() || cfg.ratios.is_none())
    {
        return err(
            "either paths.panel or all of paths.sectors, paths.prices_dir, paths.ratios must be set",
        );
    }
    if cfg.study_start >= cfg.study_end {
        return err("study.start must precede study.end");
    }
    if cfg.grid_seq_lens.is_empty() || cfg.grid_horizons.is_empty() {
        return err("grid.seq_lens and grid.horizons must be nonempty");
    }
    Ok(cfg)
}
