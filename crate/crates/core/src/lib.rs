//! Persistent 3D scene memory: ingest, storage, tools, a small query language
//! and an agent loop that answers questions grounded in component ids.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod association;
pub mod bundle;
pub mod clients;
pub mod connectivity;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod inventory;
pub mod memory;
pub mod pipeline;
pub mod smql;
pub mod tools;

pub use error::{Error, Result};
