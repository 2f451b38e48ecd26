//! Neural models: the parameter prediction net, the deep and wide branches,
//! their merge and the ablation variants.
//!
//! All networks run on the CPU through `candle`. Weights live in a
//! [`ParamStore`] so they can be enumerated, optimized and checkpointed by
//! name.

pub mod checkpoint;
pub mod conv;
pub mod deep;
pub mod dparnet;
pub mod layers;
pub mod param_net;
pub mod tensor;
pub mod wide;

pub use checkpoint::{Checkpoint, CurvePoint, NetConfig, OptimizerState};
pub use dparnet::{count_flops, count_params, dparnet_forward, DparNet, ModelConfig, Restoration, Variant};
pub use layers::ParamStore;
pub use param_net::{param_net_forward, ParamNet, ParamNetConfig};
