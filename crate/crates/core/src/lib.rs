//! Primal-dual constrained learning and dual-driven batch active learning.
//!
//! Models are trained with per-sample loss constraints; the resulting
//! multipliers measure how hard each labeled sample is to fit. A small
//! regression head learns to predict them from embeddings, and the
//! unlabeled samples it scores highest, spread across k-means clusters,
//! form the next query batch.

pub mod data;
pub mod dualhead;
pub mod duality;
pub mod error;
pub mod generate;
pub mod harness;
pub mod losses;
pub mod numerics;
pub mod pdcl;
pub mod selection;

pub use error::{Error, Result};
