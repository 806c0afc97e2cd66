//! Crowd-counting ground truth and multi-stream counting networks.
//!
//! * [`density`]: impulse maps, truncated Gaussian splats, fixed and k-NN
//!   adaptive kernels, count-preserving downscaling.
//! * [`hybrid`]: face-detection-assisted kernels with crowding detection.
//! * [`augment`]: sliding-window patches and photometric noise.
//! * [`tensor`], [`msnn`], [`gradcheck`]: a small CPU network engine with
//!   hand-written gradients, the multi-stream presets and training.
//! * [`metrics`]: MAE / RMSE over per-image counts.

pub mod annotations;
pub mod augment;
pub mod density;
pub mod error;
pub mod formats;
pub mod gradcheck;
pub mod hybrid;
pub mod metrics;
pub mod msnn;
pub mod tensor;

pub use annotations::{BBox, DetectionSet, ImageAnnotation, Point2D};
pub use density::{DensityMap, KernelSpec, KnnConfig};
pub use error::{Error, Result};
pub use hybrid::FaceGtConfig;
pub use msnn::{Msnn, NetworkSpec};
pub use tensor::Tensor;
