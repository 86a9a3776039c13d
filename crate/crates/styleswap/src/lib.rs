//! Patch-based artistic style transfer.
//!
//! The pipeline: encode content and style images into an activation space,
//! replace every content activation patch with its best-matching style patch
//! under normalized cross-correlation ([`swap`]), then recover an image
//! either by TV-regularized gradient optimization ([`optim`]) or in a single
//! pass through a trained inverse network ([`invnet`]).
//!
//! The `parallel` feature (on by default) runs the data-parallel inner loops
//! on rayon; without it the same code compiles to sequential loops. Results
//! are bitwise identical either way.

pub mod encoder;
pub mod error;
pub mod invnet;
pub mod io;
pub mod nn;
pub mod optim;
mod parallel;
pub mod rng;
pub mod swap;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::{Scalar, Tensor};
