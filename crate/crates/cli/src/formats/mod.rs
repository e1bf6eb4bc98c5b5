//! On-disk formats.

pub mod bmdl;
pub mod bundle;
pub mod container;
pub mod landmarks;
pub mod obj;
pub mod paint_state;
pub mod rfc;
pub mod schedule;
pub mod texture;
