//! Training-free text-region localization and glyph injection for diffusion
//! transformers.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numerical piece of
//! the toolkit:
//!
//! * [`localize`] turns per-(timestep, layer) image-to-text attention into a
//!   localization map for a text span,
//! * [`topology`] refines that map into a single binary writing mask,
//! * [`fft`] and [`sgmi`] build a band-passed, noise-aligned glyph latent and
//!   blend it into a denoising trajectory,
//! * [`clt`] scores prompt difficulty for long-tail text benchmarks,
//! * [`sim`] generates synthetic attention with known ground truth,
//! * [`pipeline`] composes localization and injection.
//!
//! File formats, CLI and run orchestration live in the `inkspot` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

mod error;
mod grid;
mod stats;

pub mod clt;
pub mod fft;
pub mod localize;
pub mod pipeline;
pub mod sgmi;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
pub use grid::{Grid, Latent};
pub use stats::{mean_and_variance, quantile_linear};
