//! Desk-scale benchmark for the evidential fusion losses: a seeded synthetic
//! multi-region dataset, a tiny affine scorer in place of a vision backbone,
//! a reproducible training loop with hand-written backpropagation, and the
//! evaluation metrics.

pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod scorer;
pub mod train;

pub use dataset::{
    generate_dataset, read_dataset_csv, split_dataset, write_dataset_csv, Sample, SynthConfig,
    QUALITY_LEVELS,
};
pub use error::{BenchError, Result};
pub use gradcheck::{gradcheck_end_to_end, gradcheck_evidential, GradCheckReport, GroupReport};
pub use metrics::{
    evaluate, normality_diag, plcc, render_metrics, srcc, write_metrics, MetricsReport,
};
pub use scorer::{ScorerDims, TinyScorer, KAPPA_INIT};
pub use train::{train, write_history_csv, EpochRecord, TrainConfig, TrainOutcome};
