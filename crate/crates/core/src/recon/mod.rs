//! Turning solver output back into a network, and scoring it.

pub mod extract;
pub mod metrics;
pub mod net;

pub use extract::{audit, reconstruct, recorded_outputs};
pub use metrics::{conv_table, dense_table, direct_objective, metrics, render_kv, MetricsReport, ObjectiveBreakdown};
pub use net::{canonicalize, ConvNet, DenseLayer, DenseNet, TrainedNet};
