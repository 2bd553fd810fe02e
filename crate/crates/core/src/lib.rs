//! Numerics for running transformer-style inference on low-precision
//! accelerators.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure
//! computation:
//!
//! - [`floatsim`]: bit-accurate rounding into arbitrary binary float formats.
//! - [`prenorm`]: layer normalization, L_p pre-normalizers and the oracles
//!   that check their bounds.
//! - [`softmax`]: conditional input rescaling and a table-driven exponential.
//! - [`convsub`]: convolution subsampling stacks, MAC accounting and
//!   dynamic-range profiles.
//! - [`graphir`]: a small tensor IR with layout, chunking and einsum passes
//!   for multi-head attention.
//!
//! File formats, report emission and the command-line front end live in the
//! `fpstab` crate.

#![no_std]

extern crate alloc;

pub mod convsub;
mod error;
pub mod floatsim;
pub mod graphir;
pub mod prenorm;
pub mod rng;
pub mod softmax;

pub use crate::error::{Error, Result};
pub use crate::floatsim::{Accumulation, FloatFormat, OverflowStats, Precision, QuantizeStatus};
