//! Training: Winograd-aware layers with analytic gradients, standard
//! layers, losses, optimizers and the training and adaptation loops.

mod param;

pub mod adapt;
pub mod checkpoint;
pub mod layers;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod presets;
pub mod trainer;
pub mod wa;

pub use adapt::{adapt, AdaptReport};
pub use model::{ConvSpec, Layer, LayerSpec, Model, ModelSpec, Node, Tape};
pub use optim::{OptimKind, Optimizer, Schedule};
pub use param::{Param, ParamKind};
pub use presets::PresetOpts;
pub use trainer::{evaluate, train, warmup, TrainConfig, TrainReport};
pub use wa::{WaLayer, WaNodes};
