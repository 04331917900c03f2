//! Structure-preserving stain color normalization for histology images of
//! any size.
//!
//! A slide is fitted once: bright pixels give the background intensity,
//! a sparse non-negative factorization of sampled optical densities gives a
//! two-column stain basis (hematoxylin, eosin), and coded densities give
//! robust per-stain maxima. Normalization then maps each pixel's densities
//! onto a target's basis and range, streaming full-width strips so memory
//! stays bounded regardless of slide size.
//!
//! ```no_run
//! use spcn::pipeline::{fit_file, transform_file, FitConfig, TransformOptions};
//!
//! let cfg = FitConfig::default();
//! let source = fit_file("source.tif", &cfg)?.params;
//! let target = fit_file("target.png", &cfg)?.params;
//! transform_file("source.tif", "normalized.tif", &source, &target, &TransformOptions::default())?;
//! # Ok::<(), spcn::Error>(())
//! ```

pub mod bench;
pub mod cli;
pub mod error;
pub mod image_io;
pub mod normalize;
pub mod optics;
pub mod pipeline;
pub mod profile;
pub mod stain_sep;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result, Stage, Warning};
pub use image_io::{open_slide, PixelBlock, SlideSource, StripSink};
pub use normalize::{FitParams, StainStats};
pub use optics::MaxIntensity;
pub use pipeline::{fit, transform, FitConfig, FitReport, RunStats, TransformOptions};
pub use stain_sep::{StainBasis, SnmfConfig};
