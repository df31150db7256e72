//! Building blocks for a vision-language model that predicts every output,
//! dense maps included, as tokens of one unified vocabulary.
//!
//! Modules are layered bottom-up: [`vocab`] defines the id space,
//! [`grammar`], [`mask`] and [`depth`] serialize structured outputs into it,
//! [`tokenizer`] produces the image codes, [`decode`] turns vision-token
//! logits back into pixel maps, [`losses`] and [`model`] train on the unified
//! stream, and [`metrics`] scores and filters the results.

pub mod decode;
pub mod depth;
pub mod grammar;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod tokenizer;
pub mod vocab;

pub use vocab::{Axis, TokenId, UnifiedVocab, VocabConfig};
