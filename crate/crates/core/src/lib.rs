//! Chest X-ray classification pipeline built from first principles.
//!
//! The crate covers the whole workflow: 3×3 raster filters and rotation
//! balancing of class-labelled image folders, a fixed two-convolution CNN
//! trained with hand-written backpropagation and Adam, Hyperband search over
//! its hyperparameters, and evaluation outputs (confusion matrices,
//! classification reports, per-filter feature maps).
//!
//! Data flows through the modules in this order:
//!
//! ```text
//! dataset::scan_dataset -> dataset::balance -> dataset::split_train_val
//!     -> dataset::Dataset::load (rotate, filter, resize, normalize)
//!     -> train::train (nn + adam) -> report
//! ```

pub mod adam;
pub mod dataset;
mod error;
pub mod hyperband;
pub mod nn;
pub mod raster;
pub mod report;
pub mod seed;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatFault, Result};
pub use tensor::{Array, Element, Tensor, Tensor64};
