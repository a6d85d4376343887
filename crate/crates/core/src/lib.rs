//! Two-pass generative dialogue state tracking: a basic pass generates a
//! primitive state from the current turn and the previous state, and an
//! amending pass rewrites it into the final state.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod linearize;
pub mod negsample;
pub mod neural;
pub mod state;
pub mod strategy;
pub mod two_pass;
pub mod vocab;

pub use error::{Error, Result};
