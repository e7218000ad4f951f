//! Semantic segmentation under point, image-level, squiggle, full and hybrid
//! supervision.
//!
//! The crate covers the per-image training losses and their gradients, the
//! objectness prior, a small trainable segmentation network with an SGD
//! recipe, mIOU evaluation and the annotation-time budget model, and a
//! synthetic data and annotator simulator used to compare supervision regimes.

pub mod annosim;
pub mod budget;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod model;
pub mod objectness;
pub mod rng;
pub mod seg;
pub mod supervision;

pub use error::{Error, Result};
