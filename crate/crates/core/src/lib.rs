//! Numerical toolkit for fisheye semantic segmentation experiments:
//! restricted deformable convolutions (2D and factorized 1D), a
//! pinhole-to-fisheye zoom augmentation, multi-domain training with
//! per-domain normalization statistics and hybrid loss weightings, and
//! mean-IoU evaluation. All heavy loops are data-parallel by default and
//! bitwise deterministic either way; disable the `parallel` feature for a
//! sequential build.

pub mod checkpoint;
pub mod deform;
pub mod error;
pub mod eval;
pub mod fisheye;
pub mod gradcheck;
pub mod labels;
pub mod netpbm;
pub mod ops;
pub mod par;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
