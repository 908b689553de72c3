//! Multi-style pastiche engine.
//!
//! A single feed-forward style transfer network whose convolution kernels
//! are shared by every style. Each style is a row of per-channel scale and
//! shift parameters applied after instance normalization, so styles can be
//! added, blended and shipped independently of the network.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod imageio;
pub mod loss;
pub mod net;
pub mod ops;
pub mod optim;
pub mod pixel;
pub mod style;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use checkpoint::{Checkpoint, StyleFile};
pub use error::{Error, Result};
pub use loss::{ExtractorConfig, FeatureExtractor, LossReport, LossWeights, StyleTarget};
pub use net::{ModelWeights, NetworkConfig, ParameterCount};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use style::{cin_forward, BlendWeights, StyleBank, StyleLayer, StyleVector};
pub use tensor::{Element, Shape, Tensor};
pub use train::{Corpus, LearningCurve, TrainConfig, TrainMode};
