//! Undersampled MRI reconstruction: sub-Nyquist Cartesian sampling,
//! Poisson-summation folding, a U-net that unfolds aliased images and a
//! k-space data-consistency correction.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod image;
pub mod io;
pub mod kspace;
pub mod metrics;
pub mod phantom;
pub mod reconstruction;
pub mod training;
pub mod unet;

pub use error::{Error, Result};
pub use image::Image;
