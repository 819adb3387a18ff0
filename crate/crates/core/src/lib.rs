//! Self-supervised iterative denoising by learned noise subtraction.
//!
//! A forward process ([`noise`]) repeatedly corrupts samples. A step
//! predictor learns how far along that process an input sits, and a noise
//! predictor learns the per-step increment ([`networks`], [`trainer`]).
//! At inference the [`denoiser`] estimates the step and subtracts predicted
//! increments one step at a time back to zero.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod datagen;
pub mod denoiser;
pub mod error;
pub mod hash;
pub mod metrics;
pub mod networks;
pub mod noise;
pub mod numerics;
pub mod trainer;

pub use error::{MidError, Result};
