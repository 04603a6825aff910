//! Synthetic multi-scale heatmap task: data, backbone, head, loss, and
//! stand-alone training.

pub mod data;
pub mod model;
pub mod standalone;

pub use data::{generate_dataset, BlobConfig, Dataset, Sample};
pub use model::{proxy_loss, proxy_loss_value, Backbone, Head, Predictor};
pub use standalone::{full_train, train_standalone, FullTrainConfig, FullTrainResult, ProxyModel};
