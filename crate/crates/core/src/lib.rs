//! Time-series deep learning from scratch: tensors, layers, graphs, a model
//! zoo, training, and data preparation.

pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use graph::{GraphBuilder, Model, NodeSpec};
pub use tensor::Tensor;
