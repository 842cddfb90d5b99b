//! Continuous conditional GANs at desk scale.
//!
//! The crate covers the full pipeline for generative modeling conditional on a
//! scalar regression label:
//!
//! - [`vicinal`]: label normalization, rule-of-thumb hyper-parameters, label
//!   KDE and hard/soft vicinal conditional estimates.
//! - [`sampler`]: per-iteration vicinal batch assembly.
//! - [`losses`]: HVDL, SVDL, hinge SVDL, the noisy-label generator loss and
//!   the class-conditional baseline losses, with gradients w.r.t. scores.
//! - [`netcore`]: a small dense tensor engine with reverse-mode
//!   differentiation, Adam and checkpoints.
//! - [`conditioning`]: NLI, ILI, concat and class-binned label input, plus the
//!   label embedding pipeline.
//! - [`eval`]: Fréchet distance, SFID, Intra-FID, label score and diversity.
//! - [`bounds`]: Monte-Carlo terms of the discriminator error bounds.
//! - [`data`]: synthetic conditional distributions and CSV IO.
//! - [`trainer`]: training loops for CcGAN and the baselines.
//! - [`config`]: the flat `key = value` configuration used by the CLI.

pub mod bounds;
pub mod conditioning;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod losses;
pub mod netcore;
pub mod sampler;
pub mod trainer;
pub mod vicinal;

pub use error::{Error, Result};

/// Formats a float with 17 significant digits so it re-parses exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}
