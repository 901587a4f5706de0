//! Model builders, the pair-concatenation forward path, the siamese
//! baseline and the three training losses.

pub mod loss;
mod network;
mod params;
mod spec;

pub use loss::{loss_bce, loss_contrastive, loss_mse, LossKind};
pub use network::{Architecture, Network, PairExample, PairLabel, PairScorer, DEFAULT_MARGIN};
pub use params::{Params, PARAMS_MAGIC, PARAMS_VERSION};
pub use spec::{build_cnn, build_mlp, LayerSpec, ModelKind, ModelSpec, OutputConvention};
