//! Real-time anomaly detection and localization for fixed-camera crowd video.
//!
//! A video is cut into non-overlapping spatio-temporal cubes. Each cube is
//! described twice: a *global* view (features learned by a sparse
//! auto-encoder on small normal cubes, mean-pooled over a big cube) and a
//! *local* view (SSIM similarities to neighbouring cubes and between
//! consecutive frames inside the cube). Each view is scored by a Gaussian
//! model with the Mahalanobis distance and the two verdicts are fused.
//!
//! Module map:
//!
//! * [`videoio`]: frame volumes, PGM ingestion, the cube grid.
//! * [`ssim`]: global (single window) SSIM on frames and cubes.
//! * [`localdesc`]: the 13-dimensional local descriptor.
//! * [`autoenc`]: sparse auto-encoder training and feature encoding.
//! * [`classify`]: Gaussian models, thresholds, fusion.
//! * [`detector`]: training and streaming detection pipeline.
//! * [`eval`]: frame, pixel and dual-pixel measures, ROC, EER, AUC.
//! * [`synthgen`]: deterministic synthetic crowd scenes with ground truth.

pub mod autoenc;
pub mod classify;
mod codec;
pub mod detector;
mod error;
pub mod eval;
pub mod localdesc;
mod par;
pub mod pgm;
pub mod ssim;
pub mod synthgen;
pub mod videoio;

pub use error::{Error, Result};
