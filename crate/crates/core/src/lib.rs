//! Close-price forecasting over a fixed stock graph.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`ingest`] loads sector, price, and fundamental-ratio CSVs and cleans
//!    them into a rectangular [`Panel`].
//! 2. [`features`] derives the 8-feature node vectors (RSI, MACD, four
//!    annualized log-return windows, normalized and raw log returns) and the
//!    normalized close targets, with statistics fitted on the training range.
//! 3. [`graph`] composes the fixed adjacency from sector identity plus a
//!    thresholded correlation matrix and normalizes it for convolution.
//! 4. [`model`] and [`autodiff`] implement the attention temporal graph
//!    network and the reverse-mode engine that trains it.
//! 5. [`train`] and [`eval`] window the data chronologically, run the
//!    configuration grid, and score predictions (MAE/MSE/RMSE/MRE, paired
//!    t-test, R^2).
//!
//! [`synthetic`] generates seeded panels for experiments and tests.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod stats;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use autodiff::{ParameterStore, Tape};
pub use error::{Error, ErrorClass, Result};
pub use eval::{MetricsReport, TTestResult};
pub use features::{FeatureTensor, NormalizationStats};
pub use graph::{ComposedGraph, CorrelationMode, GraphDiagnostics};
pub use ingest::{CleaningLog, Panel, PriceSeries, RatioTable, SectorTable};
pub use model::{A3tGcn, ModelConfig};
pub use tensor::Tensor2;
pub use train::{GridConfig, OptimSettings, RunOutcome, RunRecord, SplitSpec};
