//! Single-image deraining with a dual-transmission rain model.
//!
//! Rain streaks and vapor are both treated as transmission media:
//! `I = (Ts + Tv) J + (1 - Ts - Tv) A`. The crate provides the model and its
//! inversion ([`rain_model`]), synthetic data ([`synth`]), the three
//! networks and their autodiff substrate ([`nn`]), the staged training
//! protocol ([`training`]), inference ([`pipeline`]) and PSNR/SSIM
//! evaluation ([`metrics`]).

pub mod config;
pub mod error;
pub mod fsutil;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rain_model;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use image::{AtmosphereLight, Field, Image, Mask, TransmissionMap};
pub use rain_model::{compose, effective_transmission, recover_background, RainScene, DEFAULT_EPS};
