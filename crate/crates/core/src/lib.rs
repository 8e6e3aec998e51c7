//! Single-image dehazing by progressive residual learning: a recurrent
//! model-free dehazer whose residual estimates drive a scattering-model
//! stage, together with the synthetic-data, training and evaluation tooling
//! around it.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod haze_physics;
pub mod model;
pub mod model_free;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod physics_dehazer;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use data::{DatasetManifest, Sample, Split};
pub use error::{Error, Result};
pub use eval::{EvalRecord, EvalSummary};
pub use haze_physics::{AtmosphericLight, Image, PhysicsConstants, ResidualMap, TransmissionMap};
pub use model::{Dehazer, Inference, ModelConfig};
pub use model_free::{DehazerConfig, IterationTrace, ModelFreeDehazer, RecurrentState};
pub use objectives::{LossReport, LossWeights, PixelNorm};
pub use physics_dehazer::{PhysicsConfig, PhysicsDehazer, StageOutputs};
pub use tensor::{Scalar, Shape, Tensor};
pub use train::{TrainConfig, Trainer};
