pub mod aggregator;
pub mod corpus;
pub mod dataset;
pub mod distortions;
pub mod error;
pub mod grade;
pub mod gradcheck;
pub mod imageio;
pub mod model_io;
pub mod network;
pub mod nn;
pub mod pooling;
pub mod scalar;
pub mod scenes;
pub mod training;

pub use error::{Error, Result};
pub use grade::{QualityGrade, NUM_GRADES};
pub use network::{DeepQualityNet, GradientTape, Gradients, NetWidths, PatchScore};
pub use nn::Tensor;
pub use scalar::Real;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Net32 = DeepQualityNet<f32>;
pub type Net64 = DeepQualityNet<f64>;
