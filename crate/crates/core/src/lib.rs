//! Lesion-aware encoder-decoder networks for diabetic retinopathy: four-class
//! lesion segmentation (LANet) and binary NoDR/NPDR screening (LASNet), with
//! the fundus preprocessing, losses, metrics and training workflows around them.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod lesion;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod training;

pub use error::{Error, Result};
pub use lesion::Lesion;
