//! Blind deconvolution with a low-rank (log-det) regularization on the
//! blur kernel, plus a numerical laboratory for studying how declared
//! kernel size degrades estimation quality.

pub mod analysis;
pub mod convops;
pub mod error;
mod fft2;
pub mod io;
pub mod kstep;
pub mod metrics;
pub mod nonblind;
pub mod pipeline;
pub mod types;
pub mod xstep;

pub use error::{Error, Result};
pub use types::{default_config, validate_config, DeblurConfig, GradientPair, Image, Kernel};
