//! Cross-architecture federated knowledge transfer on desk-scale synthetic
//! data: a large server encoder distills into a small client encoder plus
//! translator, then only the shared linear decoder is trained federatedly.

// `!(x >= 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fed;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{ClassifierWeights, FeatureBatch, SyntheticEncoder, Translator};
