//! One-shot pose-driven face animation.
//!
//! The crate is split along the platform workflow:
//!
//! * [`pose`] acquires and rasterizes facial pose sequences (preset library,
//!   video landmark extraction, audio-driven mouth motion).
//! * [`conditioning`] holds the face locator and the motion-frame stacking
//!   that feed the reference branch.
//! * [`engine`] is the dual-UNet latent diffusion generator: tensors with
//!   reverse-mode autodiff, the noise schedule, reference net, pose guider,
//!   denoising UNet, training and clip-by-clip inference.

pub mod conditioning;
pub mod engine;
pub mod frame;
pub mod parallel;
pub mod pose;
pub mod synthetic;

pub use frame::RgbFrame;
