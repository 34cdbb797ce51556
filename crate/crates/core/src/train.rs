//! Sample windowing, the chronological split, and training.
//!
//! Targets are normalized close levels. A run with future window `k`
//! predicts the single level `k` days past the end of its input window
//! (`multi_output` switches to predicting all `k` offsets at once). The
//! 90/10 boundary is a calendar position on the panel's date axis; test
//! samples whose input window straddles the boundary are dropped.

use std::collections::HashMap;
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParameterStore, Tape};
use crate::error::{Error, Result};
use crate::eval::{metrics_grid, MetricsReport};
use crate::features::{
    build_feature_tensor, normalized_closes, warmup_len, FeatureConfig, FeatureTensor,
    NormalizationStats,
};
use crate::graph::{
    compose, diagnostics, pearson_returns_correlation, sector_adjacency,
    spearman_ratio_correlation, ComposedGraph, CorrelationMode, GraphDiagnostics, ThresholdRule,
};
use crate::ingest::{Panel, RatioTable};
use crate::model::{forward, A3tGcn, GateStyle, ModelConfig};
use crate::tensor::Tensor2;

/// Default correlation thresholds per graph mode.
pub fn default_threshold(mode: CorrelationMode) -> f64 {
    match mode {
        CorrelationMode::PearsonReturns => 0.50,
        CorrelationMode::SpearmanRatios => 0.55,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimSettings {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OptimSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            weight_decay: 0.00001,
            batch_size: 32,
            epochs: 10,
            seed: 42,
        }
    }
}

impl OptimSettings {
    fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0
            || self.weight_decay < 0.0
            || self.batch_size == 0
            || self.epochs == 0
        {
            return Err(Error::InvalidArgument(
                "optimizer settings must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer with L2 weight decay folded into the gradient.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl Adam {
    pub fn new(settings: &OptimSettings, store: &ParameterStore) -> Self {
        let zeros: Vec<Tensor2> = store
            .names()
            .iter()
            .map(|n| {
                let (r, c) = store.get(n).expect("name from store").shape();
                Tensor2::zeros(r, c)
            })
            .collect();
        Self {
            lr: settings.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: settings.weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for idx in 0..store.len() {
            let grad = store
                .grad_at(idx)
                .ok_or_else(|| Error::InvalidArgument("missing gradient".into()))?
                .clone();
            let theta = store.value_at(idx).clone();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let value = store.value_at_mut(idx);
            for k in 0..grad.len() {
                let g = grad.data()[k] + self.weight_decay * theta.data()[k];
                m.data_mut()[k] = self.beta1 * m.data()[k] + (1.0 - self.beta1) * g;
                v.data_mut()[k] = self.beta2 * v.data()[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m.data()[k] / bc1;
                let v_hat = v.data()[k] / bc2;
                value.data_mut()[k] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// One (input window, target) pair. Input columns are tensor time indices
/// `[input_start, anchor)`; targets sit at `anchor + k - 1` (or all offsets
/// up to it when multi-output).
#[derive(Debug, Clone)]
pub struct Sample {
    pub anchor: usize,
    pub input_start: usize,
    pub target_index: usize,
    pub target: Tensor2,
    pub target_date: NaiveDate,
}

/// Windows the tensor into samples, one per admissible anchor, in
/// chronological order.
pub fn make_samples(
    tensor: &FeatureTensor,
    targets: &Tensor2,
    seq_len: usize,
    future_window: usize,
    multi_output: bool,
) -> Result<Vec<Sample>> {
    if seq_len == 0 || future_window == 0 {
        return Err(Error::InvalidArgument(
            "sequence length and future window must be positive".into(),
        ));
    }
    let t_len = tensor.n_dates();
    if targets.shape() != (tensor.n_tickers(), t_len) {
        return Err(Error::ShapeError(format!(
            "targets {:?} vs tensor ({}, {})",
            targets.shape(),
            tensor.n_tickers(),
            t_len
        )));
    }
    if t_len < seq_len + future_window {
        return Err(Error::InsufficientHistory(format!(
            "{t_len} timestamps cannot host seq_len {seq_len} + future window {future_window}"
        )));
    }
    let n = tensor.n_tickers();
    let width = if multi_output { future_window } else { 1 };
    let mut samples = Vec::new();
    for anchor in seq_len..=t_len - future_window {
        let target_index = anchor + future_window - 1;
        let target = Tensor2::from_fn(n, width, |i, o| {
            let col = if multi_output { anchor + o } else { target_index };
            targets.get(i, col)
        });
        samples.push(Sample {
            anchor,
            input_start: anchor - seq_len,
            target_index,
            target,
            target_date: tensor.dates[target_index],
        });
    }
    Ok(samples)
}

/// Chronological split specification: everything whose target falls at or
/// before the boundary date trains.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub boundary: NaiveDate,
}

impl SplitSpec {
    /// Boundary at the `fraction` calendar position of the date axis.
    pub fn from_dates(dates: &[NaiveDate], fraction: f64) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::EmptyInput("no dates to split".into()));
        }
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction must lie in (0, 1), got {fraction}"
            )));
        }
        let n_train = ((dates.len() as f64 * fraction).floor() as usize).clamp(1, dates.len() - 1);
        Ok(Self { train_fraction: fraction, boundary: dates[n_train - 1] })
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Test-range samples whose input window straddled the boundary.
    pub dropped: usize,
}

/// Splits samples at the boundary. A sample trains iff its target date is at
/// or before the boundary; a test-range sample is dropped when its input
/// window starts on or before the boundary index but ends after it.
pub fn chrono_split(samples: &[Sample], dates: &[NaiveDate], spec: &SplitSpec) -> Result<Split> {
    let boundary_index = match dates.iter().rposition(|d| *d <= spec.boundary) {
        Some(b) => b,
        None => {
            return Err(Error::DegenerateSplit(format!(
                "boundary {} precedes every sample date",
                spec.boundary
            )))
        }
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut dropped = 0;
    for s in samples {
        let input_end = s.anchor - 1;
        if s.target_index <= boundary_index {
            train.push(s.clone());
        } else if s.input_start <= boundary_index && input_end > boundary_index {
            dropped += 1;
        } else {
            test.push(s.clone());
        }
    }
    if train.is_empty() {
        return Err(Error::DegenerateSplit("empty training side".into()));
    }
    if test.is_empty() {
        return Err(Error::DegenerateSplit("empty test side".into()));
    }
    Ok(Split { train, test, dropped })
}

fn batch_loss(
    model: &A3tGcn,
    store: &mut ParameterStore,
    graph: &ComposedGraph,
    step_inputs: &[Tensor2],
    batch: &[Sample],
    update: Option<&mut Adam>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, store)?;
    let adj = tape.constant(graph.normalized.clone());
    let seq_len = model.config().seq_len;
    let mut losses = Vec::with_capacity(batch.len());
    for sample in batch {
        let xs: Vec<_> = (sample.input_start..sample.input_start + seq_len)
            .map(|t| tape.constant(step_inputs[t].clone()))
            .collect();
        let pred = forward(&mut tape, &bound, adj, &xs)?;
        losses.push(tape.mse(pred, &sample.target)?);
    }
    let loss = tape.mean_scalars(&losses)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::DivergenceDetected(format!(
            "non-finite batch loss {value}"
        )));
    }
    if let Some(adam) = update {
        tape.backward(loss, store)?;
        adam.step(store)?;
    }
    Ok(value)
}

fn train_epoch(
    model: &A3tGcn,
    store: &mut ParameterStore,
    graph: &ComposedGraph,
    step_inputs: &[Tensor2],
    samples: &[Sample],
    batch_size: usize,
    adam: &mut Adam,
) -> Result<f64> {
    let mut weighted = 0.0;
    for batch in samples.chunks(batch_size) {
        let loss = batch_loss(model, store, graph, step_inputs, batch, Some(adam))?;
        weighted += loss * batch.len() as f64;
    }
    Ok(weighted / samples.len() as f64)
}

/// Mini-batch training with the standard settings; batches iterate in fixed
/// chronological order and the final partial batch is kept. Returns one
/// training-loss value per epoch.
pub fn train_loop(
    model: &A3tGcn,
    store: &mut ParameterStore,
    graph: &ComposedGraph,
    step_inputs: &[Tensor2],
    train_samples: &[Sample],
    settings: &OptimSettings,
) -> Result<Vec<f64>> {
    settings.validate()?;
    if train_samples.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    let mut adam = Adam::new(settings, store);
    let mut curve = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let loss = train_epoch(
            model,
            store,
            graph,
            step_inputs,
            train_samples,
            settings.batch_size,
            &mut adam,
        )
        .map_err(|e| match e {
            Error::DivergenceDetected(msg) => {
                Error::DivergenceDetected(format!("epoch {}: {msg}", epoch + 1))
            }
            other => other,
        })?;
        curve.push(loss);
    }
    Ok(curve)
}

/// Forward-only predictions for a set of samples.
pub fn predict_samples(
    model: &A3tGcn,
    store: &ParameterStore,
    graph: &ComposedGraph,
    step_inputs: &[Tensor2],
    samples: &[Sample],
) -> Result<Vec<Tensor2>> {
    let seq_len = model.config().seq_len;
    samples
        .iter()
        .map(|sample| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, store)?;
            let adj = tape.constant(graph.normalized.clone());
            let xs: Vec<_> = (sample.input_start..sample.input_start + seq_len)
                .map(|t| tape.constant(step_inputs[t].clone()))
                .collect();
            let pred = forward(&mut tape, &bound, adj, &xs)?;
            Ok(tape.value(pred).clone())
        })
        .collect()
}

fn mean_abs_error(preds: &[Tensor2], samples: &[Sample]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, s) in preds.iter().zip(samples) {
        for (pv, tv) in p.data().iter().zip(s.target.data()) {
            total += (pv - tv).abs();
            count += 1;
        }
    }
    total / count as f64
}

/// Everything the grid shares across configurations: features, targets,
/// normalization statistics, the composed graph, and the split boundary.
pub struct Prepared {
    pub tensor: FeatureTensor,
    pub stats: NormalizationStats,
    pub targets: Tensor2,
    pub graph: ComposedGraph,
    pub diagnostics: GraphDiagnostics,
    pub split: SplitSpec,
    pub step_inputs: Vec<Tensor2>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub graph_mode: CorrelationMode,
    /// Defaults per mode when absent.
    pub graph_threshold: Option<f64>,
    pub threshold_rule: ThresholdRule,
    pub train_fraction: f64,
    pub multi_output: bool,
    pub cell2_gates: GateStyle,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            graph_mode: CorrelationMode::PearsonReturns,
            graph_threshold: None,
            threshold_rule: ThresholdRule::Absolute,
            train_fraction: 0.90,
            multi_output: false,
            cell2_gates: GateStyle::WideContext,
        }
    }
}

/// Builds features, targets, and the fixed graph from training-range data
/// only.
pub fn prepare(
    panel: &Panel,
    ratios: Option<&RatioTable>,
    cfg: &PipelineConfig,
) -> Result<Prepared> {
    let split = SplitSpec::from_dates(&panel.dates, cfg.train_fraction)?;
    let fit_range = (panel.dates[0], split.boundary);
    let (tensor, stats) = build_feature_tensor(panel, fit_range, &cfg.features)?;
    let targets = normalized_closes(panel, &stats, cfg.features.close_norm, warmup_len(&cfg.features))?;

    let sector = sector_adjacency(&panel.sector_table(), &panel.tickers)?;
    let corr = match cfg.graph_mode {
        CorrelationMode::PearsonReturns => {
            let fit_rets: Vec<Vec<f64>> = (0..panel.n_tickers())
                .map(|i| {
                    let closes = panel.closes_of(i);
                    (1..panel.n_dates())
                        .filter(|&t| panel.dates[t] <= split.boundary)
                        .map(|t| (closes[t] / closes[t - 1]).ln())
                        .collect()
                })
                .collect();
            pearson_returns_correlation(&fit_rets)?
        }
        CorrelationMode::SpearmanRatios => {
            let ratios = ratios.ok_or_else(|| {
                Error::InvalidArgument("ratios table required for the ratios graph mode".into())
            })?;
            let rows = ratios.normalized(&panel.tickers)?;
            spearman_ratio_correlation(&rows)?
        }
    };
    let threshold = cfg.graph_threshold.unwrap_or_else(|| default_threshold(cfg.graph_mode));
    let graph = compose(&sector, &corr, threshold, cfg.threshold_rule)?;
    let diag = diagnostics(&graph, &panel.tickers);
    let step_inputs: Vec<Tensor2> = (0..tensor.n_dates()).map(|t| tensor.step_input(t)).collect();
    Ok(Prepared {
        tensor,
        stats,
        targets,
        graph,
        diagnostics: diag,
        split,
        step_inputs,
    })
}

/// One grid entry: past window x future window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub seq_len: usize,
    pub future_window: usize,
}

impl GridConfig {
    pub fn id(&self) -> String {
        format!("{}SL{}D", self.seq_len, self.future_window)
    }

    pub fn label(&self, version: usize) -> String {
        format!("Version {version} ({})", self.id())
    }
}

/// The standard eight-configuration grid.
pub fn standard_grid() -> Vec<GridConfig> {
    let mut out = Vec::new();
    for seq_len in [5usize, 30] {
        for future_window in [1usize, 2, 3, 8] {
            out.push(GridConfig { seq_len, future_window });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub date: NaiveDate,
    pub ticker: String,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub label: String,
    pub seq_len: usize,
    pub future_window: usize,
    pub seed: u64,
    pub epoch_losses: Vec<f64>,
    pub metrics: MetricsReport,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum RunOutcome {
    Success {
        record: RunRecord,
        predictions: Vec<PredictionRow>,
    },
    Failure {
        id: String,
        label: String,
        error: String,
        numeric: bool,
    },
}

impl RunOutcome {
    pub fn id(&self) -> &str {
        match self {
            RunOutcome::Success { record, .. } => &record.id,
            RunOutcome::Failure { id, .. } => id,
        }
    }

    pub fn record(&self) -> Option<&RunRecord> {
        match self {
            RunOutcome::Success { record, .. } => Some(record),
            RunOutcome::Failure { .. } => None,
        }
    }
}

/// Trains and evaluates one configuration end to end.
pub fn run_one(
    prepared: &Prepared,
    gc: &GridConfig,
    cfg: &PipelineConfig,
    settings: &OptimSettings,
) -> Result<(RunRecord, Vec<PredictionRow>)> {
    let started = Instant::now();
    let width = if cfg.multi_output { gc.future_window } else { 1 };
    let n = prepared.tensor.n_tickers();
    let mut model_cfg = ModelConfig::new(n, gc.seq_len, width);
    model_cfg.cell2_gates = cfg.cell2_gates;
    let model = A3tGcn::new(model_cfg)?;

    let samples = make_samples(
        &prepared.tensor,
        &prepared.targets,
        gc.seq_len,
        gc.future_window,
        cfg.multi_output,
    )?;
    let split = chrono_split(&samples, &prepared.tensor.dates, &prepared.split)?;
    let mut store = model.init_params(settings.seed);
    let epoch_losses = train_loop(
        &model,
        &mut store,
        &prepared.graph,
        &prepared.step_inputs,
        &split.train,
        settings,
    )?;
    if !prepared.graph.verify_unchanged() {
        return Err(Error::InvalidArgument(
            "graph content hash changed during training".into(),
        ));
    }
    let preds = predict_samples(
        &model,
        &store,
        &prepared.graph,
        &prepared.step_inputs,
        &split.test,
    )?;
    let actuals: Vec<Tensor2> = split.test.iter().map(|s| s.target.clone()).collect();
    let metrics = metrics_grid(&preds, &actuals)?;

    let mut predictions = Vec::new();
    for (sample, pred) in split.test.iter().zip(&preds) {
        for o in 0..width {
            let date_index = if cfg.multi_output { sample.anchor + o } else { sample.target_index };
            let date = prepared.tensor.dates[date_index];
            for i in 0..n {
                predictions.push(PredictionRow {
                    date,
                    ticker: prepared.tensor.tickers[i].clone(),
                    actual: sample.target.get(i, o),
                    predicted: pred.get(i, o),
                });
            }
        }
    }

    let record = RunRecord {
        id: gc.id(),
        label: gc.id(),
        seq_len: gc.seq_len,
        future_window: gc.future_window,
        seed: settings.seed,
        epoch_losses,
        metrics,
        duration_secs: started.elapsed().as_secs_f64(),
    };
    Ok((record, predictions))
}

/// Runs every grid configuration over one prepared dataset. Failures are
/// recorded and the grid continues; configurations run in parallel, each
/// fully deterministic given the seed.
pub fn run_grid(
    panel: &Panel,
    ratios: Option<&RatioTable>,
    cfg: &PipelineConfig,
    grid: &[GridConfig],
    settings: &OptimSettings,
) -> Result<(Prepared, Vec<RunOutcome>)> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("empty configuration grid".into()));
    }
    let prepared = prepare(panel, ratios, cfg)?;
    let outcomes: Vec<RunOutcome> = grid
        .par_iter()
        .enumerate()
        .map(|(i, gc)| match run_one(&prepared, gc, cfg, settings) {
            Ok((mut record, predictions)) => {
                record.label = gc.label(i + 1);
                RunOutcome::Success { record, predictions }
            }
            Err(e) => RunOutcome::Failure {
                id: gc.id(),
                label: gc.label(i + 1),
                error: e.to_string(),
                numeric: matches!(e.class(), crate::error::ErrorClass::Numeric),
            },
        })
        .collect();
    Ok((prepared, outcomes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mae: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    /// 1-based epoch with the lowest validation MAE (first minimum on ties).
    pub best_epoch: usize,
}

/// Trains up to `max_epochs`, validating on the final tenth of the training
/// range each epoch. `patience > 0` stops early after that many epochs
/// without a new validation minimum.
pub fn learning_curve(
    panel: &Panel,
    ratios: Option<&RatioTable>,
    cfg: &PipelineConfig,
    gc: &GridConfig,
    settings: &OptimSettings,
    max_epochs: usize,
    patience: usize,
) -> Result<LearningCurve> {
    if max_epochs == 0 {
        return Err(Error::InvalidArgument("max_epochs must be positive".into()));
    }
    let prepared = prepare(panel, ratios, cfg)?;
    let width = if cfg.multi_output { gc.future_window } else { 1 };
    let mut model_cfg = ModelConfig::new(prepared.tensor.n_tickers(), gc.seq_len, width);
    model_cfg.cell2_gates = cfg.cell2_gates;
    let model = A3tGcn::new(model_cfg)?;

    let samples = make_samples(
        &prepared.tensor,
        &prepared.targets,
        gc.seq_len,
        gc.future_window,
        cfg.multi_output,
    )?;
    let split = chrono_split(&samples, &prepared.tensor.dates, &prepared.split)?;
    // Validation slice: the tail of the training range, split at the same
    // fraction of the training calendar.
    let train_dates: Vec<NaiveDate> = panel
        .dates
        .iter()
        .copied()
        .filter(|d| *d <= prepared.split.boundary)
        .collect();
    let val_spec = SplitSpec::from_dates(&train_dates, cfg.train_fraction)?;
    let inner = chrono_split(&split.train, &prepared.tensor.dates, &val_spec).map_err(|e| {
        Error::DegenerateSplit(format!("validation slice: {e}"))
    })?;

    let mut store = model.init_params(settings.seed);
    let mut adam = Adam::new(settings, &store);
    let mut points = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    for epoch in 1..=max_epochs {
        let train_loss = train_epoch(
            &model,
            &mut store,
            &prepared.graph,
            &prepared.step_inputs,
            &inner.train,
            settings.batch_size,
            &mut adam,
        )?;
        let train_preds = predict_samples(
            &model,
            &store,
            &prepared.graph,
            &prepared.step_inputs,
            &inner.train,
        )?;
        let val_preds = predict_samples(
            &model,
            &store,
            &prepared.graph,
            &prepared.step_inputs,
            &inner.test,
        )?;
        let train_mae = mean_abs_error(&train_preds, &inner.train);
        let val_mae = mean_abs_error(&val_preds, &inner.test);
        points.push(CurvePoint { epoch, train_loss, train_mae, val_mae });
        if val_mae < best_val {
            best_val = val_mae;
            best_epoch = epoch;
        } else if patience > 0 && epoch - best_epoch >= patience {
            break;
        }
    }
    Ok(LearningCurve { points, best_epoch })
}

/// Median over an odd or even count (midpoint convention).
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Groups run outcomes by id, keeping insertion order of ids.
pub fn outcomes_by_id(outcomes: &[RunOutcome]) -> HashMap<String, &RunOutcome> {
    outcomes.iter().map(|o| (o.id().to_string(), o)).collect()
}
