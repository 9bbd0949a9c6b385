//! Voxel set attention over point clouds.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`]: dense arrays with tape-based reverse-mode differentiation
//!   and a central-difference gradient checker.
//! - [`scatter`]: segment (per-voxel) reductions with deterministic order.
//! - [`pcio`]: point-cloud I/O, range cropping, voxelisation and synthetic
//!   labelled scenes.
//! - [`vsa`]: the voxel set attention block (encoder, sparse ConvFFN,
//!   decoder, Fourier positional embedding) and its loop reference.
//! - [`backbone`]: stacked MLP + attention stages, BEV soft-pooling and the
//!   two-stride BEV CNN.
//! - [`detect`]: rotated BEV IoU, box codec, anchor matching, loss, NMS,
//!   toy training and evaluation.
//! - [`optim`], [`checkpoint`]: AdamW and the binary parameter format.
//! - [`selftest`], [`bench`]: built-in verification suites and timing.

pub mod backbone;
pub mod bench;
pub mod checkpoint;
pub mod detect;
pub mod diffcore;
pub mod error;
pub mod nn;
pub mod optim;
pub mod pcio;
pub mod scatter;
pub mod selftest;
pub mod vsa;

pub use diffcore::{DiffArray, Real, Tape, Tensor};
pub use error::{Error, Result};
