//! Packed-register linear algebra and neural-network training over an
//! instrumented slot-arithmetic engine.
//!
//! The crate is organized around four pieces:
//!
//! - [`engine`]: cyclic registers of real slots with plain/cipher tagging,
//!   multiplicative-level accounting and operation counters;
//! - [`packing`] and [`cost`]: row and diagonal matrix packings, packed
//!   matrix-vector products, the rotation-only packed transpose, and a
//!   closed-form cost predictor;
//! - [`nn`] and [`plain`]: dense networks with square activations trained by
//!   SGD on packed registers, plus the plaintext reference trainer used as a
//!   lockstep oracle;
//! - [`iris`], [`metrics`], [`checkpoint`]: dataset ingestion and the file
//!   formats produced by the command-line front end.

pub mod checkpoint;
pub mod cost;
pub mod engine;
mod error;
pub mod iris;
pub mod metrics;
pub mod nn;
pub mod opcount;
pub mod packing;
pub mod plain;

pub use engine::{CounterSnapshot, EngineContext, RegisterKind, SlotRegister};
pub use error::{Error, Result};
pub use packing::{Layout, MatrixShape, PackedMatrix};
