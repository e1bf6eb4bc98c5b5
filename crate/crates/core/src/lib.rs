//! Numerical core for compositional avatars: a skinned parametric head/body
//! mesh with a painted UV texture, plus detachable radiance-field components
//! learned in the mesh's canonical space.
//!
//! The crate is `no_std` (with `alloc`); file formats, the oracle transport and
//! the command line live in the companion `compavatar` crate.

#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod avatar_compose;
pub mod body_model;
pub mod bvh;
pub mod camera;
pub mod error;
pub mod guidance_losses;
pub mod image;
pub mod landmark_fit;
pub mod math;
pub mod mesh;
pub mod optim;
pub mod oracle;
pub mod radiance_component;
pub mod texture_paint;

pub use error::{Error, OracleError, Result};
