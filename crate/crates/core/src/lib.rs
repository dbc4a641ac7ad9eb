//! Graph-guided classification of irregularly sampled multivariate time series.

pub mod data;
pub mod experiment;
pub mod gradcheck;
pub mod graph_export;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use data::{Dataset, DatasetHeader, ObservationEvent, SampleRecord, Split, SplitSpec};
pub use experiment::{ExperimentSpec, ExperimentTable, ModelSource};
pub use metrics::{MetricSummary, MetricsReport};
pub use model::{GraphState, ModelConfig, ModelError, ModelParams};
pub use tensor::{Tape, Tensor, TensorError, Var};
pub use train::{TrainConfig, TrainError, TrainOutcome};
