//! Underwater image preprocessing and detection evaluation.
//!
//! - [`iem`]: percentile RGB stretching plus CIELab L/a/b stretching.
//! - [`stabilize`]: gray-world channel rescaling (`grand_mean / channel_mean`).
//! - [`augment`]: unsharp-mask sharpening and box-aware geometric augmentations.
//! - [`annotations`]: COCO ground truth I/O and transform replay.
//! - [`detmetrics`]: COCO-style AP / AP50 / AP75 / APS / APM / APL.
//! - [`pipeline`]: deterministic batch runs over a directory.

pub mod annotations;
pub mod augment;
pub mod bbox;
pub mod colorspace;
pub mod detmetrics;
pub mod error;
pub mod iem;
pub mod imagecore;
pub mod pipeline;
pub mod stabilize;

pub use error::{Error, Result};
pub use imagecore::{FloatImage, Image};
