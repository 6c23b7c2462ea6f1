//! Joint shape completion and partial rigid point-set registration through a
//! latent code shared by two auto-decoders.

// Config checks are written `!(x > 0.0)` so that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod completion;
pub mod corpus;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod netcore;
pub mod registration;
pub mod trainer;

pub use error::{Error, Result};
