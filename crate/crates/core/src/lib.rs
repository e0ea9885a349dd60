//! Causal multi-head attention computed two ways: as a batched matrix
//! operation, and as a stateless controller streaming tokens into
//! write-once key/value memories read by content. The crate checks that
//! the two agree, that cross-attention is a read from a sealed encoder
//! memory, and that the analytic gradients match finite differences.

pub mod attention;
pub mod cli;
pub mod controller;
pub mod ddouble;
pub mod equivalence;
pub mod grad;
pub mod error;
pub mod init;
pub mod linalg;
pub mod memory;
pub mod par;
pub mod sdnc;

pub use error::{Error, Result};
