// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod hierarchy;
pub mod hypspace;
pub mod metrics;
pub mod model;
pub mod nmf;
pub mod pipeline;
pub mod sparse;
pub mod synthetic;

pub use error::{Error, Result};
