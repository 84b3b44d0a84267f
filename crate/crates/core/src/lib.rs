//! Unpaired phased-to-linear ultrasound envelope translation with a
//! constrained cycle-consistent GAN, plus the evaluation stack used to judge
//! it: point-target FWHM, Nakagami speckle statistics, SSIM/PSNR and
//! cross-correlation speckle tracking.
//!
//! Heavy inner loops (per-sample convolutions, per-node correlation search,
//! per-frame rendering and metrics) go through [`par`], which uses rayon
//! with the default `parallel` feature and plain iterators without it.

pub mod container;
pub mod dataset;
pub mod envelope;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod par;
pub mod phantom;
pub mod tracking;
pub mod training;

pub use error::{Error, ErrorClass, Result};
pub use image::{DomainTag, EnvelopeImage, Grid, Spacing};
