//! Pipeline-level training behavior: leakage isolation, determinism, grid
//! mechanics, and the horizon trend on synthetic data.

use tgf_core::features::warmup_len;
use tgf_core::synthetic::{generate, SyntheticConfig};
use tgf_core::train::{
    chrono_split, learning_curve, make_samples, prepare, run_grid, run_one, train_loop,
    GridConfig, OptimSettings, PipelineConfig, RunOutcome,
};
use tgf_core::{A3tGcn, Error, ModelConfig, Panel};

fn small_panel(n_nodes: usize, n_days: usize, seed: u64) -> Panel {
    generate(&SyntheticConfig {
        n_nodes,
        n_days,
        n_sectors: 3.min(n_nodes),
        seed,
        ..Default::default()
    })
    .panel
}

fn quick_settings() -> OptimSettings {
    OptimSettings { epochs: 2, ..Default::default() }
}

#[test]
fn training_ignores_test_range_sentinel() {
    let panel_a = small_panel(10, 240, 3);
    let mut panel_b = panel_a.clone();
    // Plant an anomaly well past the split boundary (last 2% of dates).
    let t = panel_b.n_dates();
    let sentinel_t = t - 3;
    for i in 0..panel_b.n_tickers() {
        panel_b.closes[i * t + sentinel_t] *= 5.0;
    }

    let cfg = PipelineConfig::default();
    let gc = GridConfig { seq_len: 5, future_window: 1 };
    let settings = quick_settings();

    let train_params = |panel: &Panel| {
        let prepared = prepare(panel, None, &cfg).unwrap();
        assert!(prepared.tensor.dates[prepared.tensor.n_dates() - 3] > prepared.split.boundary);
        let samples =
            make_samples(&prepared.tensor, &prepared.targets, gc.seq_len, gc.future_window, false)
                .unwrap();
        let split = chrono_split(&samples, &prepared.tensor.dates, &prepared.split).unwrap();
        let model = A3tGcn::new(ModelConfig::new(panel.n_tickers(), gc.seq_len, 1)).unwrap();
        let mut store = model.init_params(settings.seed);
        train_loop(
            &model,
            &mut store,
            &prepared.graph,
            &prepared.step_inputs,
            &split.train,
            &settings,
        )
        .unwrap();
        store
    };

    let store_a = train_params(&panel_a);
    let store_b = train_params(&panel_b);
    for name in store_a.names() {
        let a = store_a.get(name).unwrap();
        let b = store_b.get(name).unwrap();
        assert!(
            a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "sentinel leaked into {name}"
        );
    }
}

#[test]
fn run_one_is_deterministic() {
    let panel = small_panel(8, 200, 5);
    let cfg = PipelineConfig::default();
    let settings = quick_settings();
    let gc = GridConfig { seq_len: 5, future_window: 2 };
    let prepared = prepare(&panel, None, &cfg).unwrap();
    let (rec_a, pred_a) = run_one(&prepared, &gc, &cfg, &settings).unwrap();
    let (rec_b, pred_b) = run_one(&prepared, &gc, &cfg, &settings).unwrap();
    assert_eq!(rec_a.epoch_losses.len(), settings.epochs);
    assert!(rec_a
        .epoch_losses
        .iter()
        .zip(&rec_b.epoch_losses)
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(pred_a.len(), pred_b.len());
    assert!(pred_a
        .iter()
        .zip(&pred_b)
        .all(|(x, y)| x.predicted.to_bits() == y.predicted.to_bits()));
}

#[test]
fn grid_records_partial_failures_and_continues() {
    // 54 panel days leave 12 tensor timestamps: enough for 5SL1D, not 5SL8D.
    let panel = small_panel(6, 54, 7);
    let cfg = PipelineConfig::default();
    let grid = vec![
        GridConfig { seq_len: 5, future_window: 1 },
        GridConfig { seq_len: 5, future_window: 8 },
    ];
    let (prepared, outcomes) = run_grid(&panel, None, &cfg, &grid, &quick_settings()).unwrap();
    assert_eq!(warmup_len(&cfg.features), 42);
    assert_eq!(prepared.tensor.n_dates(), 12);
    assert_eq!(outcomes.len(), 2);
    assert!(matches!(&outcomes[0], RunOutcome::Success { record, .. } if record.id == "5SL1D"));
    match &outcomes[1] {
        RunOutcome::Failure { id, error, .. } => {
            assert_eq!(id, "5SL8D");
            assert!(error.contains("insufficient history"), "{error}");
        }
        RunOutcome::Success { .. } => panic!("5SL8D cannot fit 12 timestamps"),
    }
}

#[test]
fn absurd_learning_rate_reports_divergence() {
    let panel = small_panel(6, 140, 23);
    let cfg = PipelineConfig::default();
    let prepared = prepare(&panel, None, &cfg).unwrap();
    let gc = GridConfig { seq_len: 5, future_window: 1 };
    let samples =
        make_samples(&prepared.tensor, &prepared.targets, gc.seq_len, gc.future_window, false)
            .unwrap();
    let split = chrono_split(&samples, &prepared.tensor.dates, &prepared.split).unwrap();
    let model = A3tGcn::new(ModelConfig::new(6, 5, 1)).unwrap();
    let mut store = model.init_params(1);
    let settings = OptimSettings { learning_rate: 1e160, epochs: 3, ..Default::default() };
    let err = train_loop(
        &model,
        &mut store,
        &prepared.graph,
        &prepared.step_inputs,
        &split.train,
        &settings,
    )
    .unwrap_err();
    assert!(matches!(err, Error::DivergenceDetected(_)), "{err}");
    assert!(err.to_string().contains("epoch"), "diagnostics should name the epoch: {err}");
}

#[test]
fn full_grid_yields_eight_records() {
    let panel = small_panel(6, 170, 29);
    let cfg = PipelineConfig::default();
    let grid = tgf_core::train::standard_grid();
    let settings = OptimSettings { epochs: 1, ..Default::default() };
    let (_, outcomes) = run_grid(&panel, None, &cfg, &grid, &settings).unwrap();
    assert_eq!(outcomes.len(), 8);
    let labels: Vec<String> = outcomes
        .iter()
        .map(|o| o.record().expect("every configuration fits").label.clone())
        .collect();
    assert_eq!(labels[0], "Version 1 (5SL1D)");
    assert_eq!(labels[7], "Version 8 (30SL8D)");
}

#[test]
fn longer_horizon_degrades_accuracy_on_synthetic_data() {
    let panel = small_panel(12, 400, 11);
    let cfg = PipelineConfig::default();
    let grid = vec![
        GridConfig { seq_len: 5, future_window: 1 },
        GridConfig { seq_len: 5, future_window: 8 },
    ];
    let (_, outcomes) = run_grid(&panel, None, &cfg, &grid, &OptimSettings::default()).unwrap();
    let mae: Vec<f64> = outcomes
        .iter()
        .map(|o| o.record().expect("both runs fit").metrics.mae)
        .collect();
    assert!(
        mae[1] > mae[0],
        "8-day-ahead MAE {} should exceed next-day MAE {}",
        mae[1],
        mae[0]
    );
}

#[test]
fn learning_curve_shapes_and_tie_breaking() {
    let panel = small_panel(6, 220, 13);
    let cfg = PipelineConfig::default();
    let gc = GridConfig { seq_len: 5, future_window: 1 };
    let settings = quick_settings();

    let curve = learning_curve(&panel, None, &cfg, &gc, &settings, 1, 0).unwrap();
    assert_eq!(curve.points.len(), 1);
    assert_eq!(curve.best_epoch, 1);

    let curve = learning_curve(&panel, None, &cfg, &gc, &settings, 4, 0).unwrap();
    assert_eq!(curve.points.len(), 4);
    let best = curve.best_epoch;
    let best_val = curve.points[best - 1].val_mae;
    for p in &curve.points {
        if p.epoch < best {
            assert!(p.val_mae > best_val); // strictly better than all earlier
        } else {
            assert!(p.val_mae >= best_val); // first minimum wins ties
        }
    }
}

#[test]
fn learning_curve_patience_stops_early() {
    let panel = small_panel(6, 220, 17);
    let cfg = PipelineConfig::default();
    let gc = GridConfig { seq_len: 5, future_window: 1 };
    // Zero learning rate: validation MAE never improves after epoch 1, so
    // patience 2 must stop the run at epoch 3.
    let settings = OptimSettings { learning_rate: 0.0, epochs: 1, ..Default::default() };
    let curve = learning_curve(&panel, None, &cfg, &gc, &settings, 10, 2).unwrap();
    assert_eq!(curve.best_epoch, 1);
    assert_eq!(curve.points.len(), 3);
}

#[test]
fn ratios_mode_requires_ratio_table() {
    let panel = small_panel(6, 100, 19);
    let cfg = PipelineConfig {
        graph_mode: tgf_core::CorrelationMode::SpearmanRatios,
        ..Default::default()
    };
    assert!(matches!(
        prepare(&panel, None, &cfg),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn ratios_mode_builds_with_table() {
    let data = generate(&SyntheticConfig { n_nodes: 8, n_days: 120, ..Default::default() });
    let cfg = PipelineConfig {
        graph_mode: tgf_core::CorrelationMode::SpearmanRatios,
        ..Default::default()
    };
    let prepared = prepare(&data.panel, Some(&data.ratios), &cfg).unwrap();
    assert_eq!(prepared.graph.threshold_used, 0.55);
    assert!(prepared.graph.verify_unchanged());
}
