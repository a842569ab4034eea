//! Multilingual knowledge graph completion toolkit.
//!
//! The pipeline retrieves candidate tails with TransE, picks among them with a
//! small host network whose feed-forward layers carry a grouped mixture of
//! low-rank experts (one expert per sample, chosen from the head, relation and
//! candidate representations), and reorders candidates by iterative
//! selection.

// Validation uses `!(x > 0.0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod harness;
pub mod ier;
pub mod kg;
pub mod kge;
pub mod klgmoe;
pub mod prompt;
pub mod selector;
