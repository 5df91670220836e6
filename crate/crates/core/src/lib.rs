//! Hierarchy-aware address matching.
//!
//! The pipeline has three trained stages:
//!
//! 1. [`resolver`] tags each character of an address with a hierarchy level
//!    (province, city, road, POI, room, ...) using a linear-chain tagger.
//! 2. [`repr`] pretrains a small transformer encoder by masked-character
//!    prediction, masking whole address elements at a time.
//! 3. [`matcher`] splices the elements of two addresses per level group,
//!    encodes every splice plus the whole pair, runs a bidirectional LSTM per
//!    branch and classifies the pair as no-match, partial match or exact match.
//!
//! [`corpus`] generates the synthetic training data and [`eval`] holds the
//! metrics and the ablation harness.

pub mod bio;
pub mod codec;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod matcher;
pub mod nn;
pub mod registry;
pub mod repr;
pub mod resolver;
pub mod types;

pub use error::{Error, Result};
pub use registry::{HierLevel, LabelRegistry, LevelId};
pub use types::{tokenize, ElementSpan, MatchLabel, MatchPair, TaggedAddress, Token};
