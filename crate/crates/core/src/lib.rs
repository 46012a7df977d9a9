//! Roto-translation equivariant convolutions on the pixel grid and the
//! learned proximal-gradient reconstruction networks built from them.
//!
//! The crate is `no_std` (with `alloc`): everything here is a pure function
//! of its inputs. File formats, configuration and the command line live in
//! the `equirecon` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod eval;
pub mod group;
pub mod learned_recon;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod steerable;
pub mod variational;

pub use error::{Error, Result};
