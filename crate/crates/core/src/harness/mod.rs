//! Command-level entry points: dataset generation, training, evaluation,
//! the single-Gaussian experiment and self-checks.

pub mod check;
pub mod config;
pub mod dataset;
pub mod fit_single;
pub mod train;

pub use check::{run_check, CheckKind, CheckReport};
pub use config::RunConfig;
pub use dataset::{generate, load_dataset, Dataset};
pub use fit_single::{fit_single, FitSingleReport};
pub use train::{eval, evaluate, read_metrics, train, EvalReport, MetricsRow, TrainOutcome, METRICS_HEADER};
