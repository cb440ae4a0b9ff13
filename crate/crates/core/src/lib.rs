//! Out-of-core dot-product join between a stream of sparse vectors and a
//! dense model kept in fixed-size pages on disk, plus gradient-descent
//! trainers that read and update the model through the same machinery.

pub mod batcher;
pub mod buffer_manager;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod gradient_descent;
pub mod metrics;
pub mod model_store;
pub mod operator;
pub mod reorder;
pub mod sparse_data;

pub use buffer_manager::{BufferManager, MetricsSnapshot};
pub use error::{Error, ErrorKind, Result};
pub use metrics::MetricsReport;
pub use model_store::{InitSpec, ModelStore, PageId, PageLayout};
pub use operator::{DotProductJoin, DotProductResult, OperatorConfig};
pub use reorder::Heuristic;
pub use sparse_data::{Dataset, PageRequestSet, SparseVector};
