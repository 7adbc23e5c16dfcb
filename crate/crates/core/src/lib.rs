//! Lorentz-manifold feature encoding and hypergraph high-order relation
//! learning for infrared small target segmentation.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: tensors, the gradient tape, gradient checking and the
//!   `LOHGW001` weight container.
//! * [`lorentz`]: Lorentz-model primitives and the hyperbolic encoder.
//! * [`euclid`]: the parallel Euclidean encoder.
//! * [`horl`]: hypergraph construction, sparsification and propagation.
//! * [`model`]: branch fusion, the decoder, the loss and training.
//! * [`metrics`]: IoU, nIoU, F-measure, Pd and Fa.
//! * [`synth`]: synthetic scenes and PGM I/O.
//! * [`gradchecks`]: finite-difference sweeps over every differentiable piece.
//! * [`config`], [`cli`], [`selftest`]: configuration and the command line.

pub mod cli;
pub mod config;
mod error;
pub mod euclid;
pub mod gradchecks;
pub mod horl;
pub mod layers;
pub mod lorentz;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod selftest;
pub mod synth;

pub use error::{Error, Result};
