//! hairfield: single-image-style 3D hair modeling on implicit neural fields.
//!
//! The pipeline infers 3D orientation/occupancy fields from 2D maps with a
//! voxel-aligned implicit network and grows strand models in parallel with a
//! patch-local implicit growth network, verified against a traditional tracer.

pub mod bust;
pub mod err;
pub mod field;
pub mod fmt_io;
pub mod nn;
pub mod rng;
pub mod strand;
pub mod synth;

pub use err::{Error, Result};
