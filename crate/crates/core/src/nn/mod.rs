//! Minimal differentiable tensor toolkit used by the translator and the
//! reference detector. Everything runs in `f64` on the CPU and is
//! deterministic: the same inputs always give bitwise-equal outputs.

pub mod graph;
pub mod network;
pub mod optim;
pub mod store;
pub mod tensor;

pub use graph::{ConvGeometry, Gradients, Graph, Padding, ParamKey, Var};
pub use network::{Architecture, Init, LayerSpec, Network};
pub use optim::Adam;
pub use tensor::Tensor;
