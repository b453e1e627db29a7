//! Alpha-GAN: a variational auto-encoder / GAN hybrid with four networks,
//! trained against GAN, WGAN-GP, AGE and VAE baselines on desk-scale data.
//!
//! Everything runs on the small reverse-mode tape in [`autodiff`]; the
//! networks are MLPs and the datasets are synthetic mixtures, procedural
//! raster shapes, or IDX files.

pub mod autodiff;

pub use autodiff::{Tape, Tensor, TensorError, Var};
pub mod networks;
pub mod losses;
pub mod data;
pub mod trainers;
pub mod eval;
pub mod artifacts;
