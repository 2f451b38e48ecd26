//! Degradation-parameter-assisted wide & deep multi-frame image restoration.
//!
//! The crate covers the whole workflow:
//!
//! - [`field`], [`frame`], [`pmap`]: value-domain types, seeded smooth random
//!   fields and the on-disk formats (PNG frames, PMAP parameter maps).
//! - [`degrade`]: the forward operator `D = H(C; P)` for turbulence (warp +
//!   spatially varying blur) and spatially varying additive noise.
//! - [`data`]: paired dataset synthesis, manifests, splits and augmentation.
//! - [`models`]: the parameter prediction network, the bidirectional
//!   recurrent deep model, the wide model, their merge and the ablation
//!   variants.
//! - [`train`]: losses, Adam, and the training loops.
//! - [`eval`]: PSNR / SSIM / NRMSE / VI, temporal profiles, efficiency
//!   benchmarking and report aggregation.
//! - [`cli`]: the subcommands behind the `dparnet` binary.

// NaN-rejecting checks are written as `!(x >= 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cli;
pub mod data;
pub mod degrade;
pub mod error;
pub mod eval;
pub mod field;
pub mod frame;
pub mod models;
pub mod pmap;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use frame::{Frame, Sequence};
pub use pmap::{DegradationKind, ParamMap};
