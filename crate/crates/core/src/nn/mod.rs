//! Minimal float64 neural-network engine: layers with hand-written
//! backprop, cross-entropy loss, SGD with momentum.

pub mod arch;
pub mod eval;
pub mod layer;
pub mod model;
pub mod optim;

pub use arch::ArchSpec;
pub use eval::{evaluate, Evaluation};
pub use layer::{Layer, LayerKind};
pub use model::{Gradients, LayeredModel};
pub use optim::{sgd_step, OptimizerState};
