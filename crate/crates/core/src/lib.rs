//! Training sequence models from partially-specified sequences.
//!
//! Partial observations (labels, masked words, forbidden phrases) are compiled
//! to finite state automata; constrained beam search finds the most probable
//! complete sequence each automaton accepts; the completed data then trains an
//! autoregressive model by maximum likelihood.

pub mod automaton;
pub mod decode;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod model;
pub mod oracle;
pub mod ps3;

pub use automaton::{ConstraintSpec, Fsa, GapSpec, PatternItem, StateId};
pub use decode::{DecodeConfig, DecodeMode, Hypothesis, Scorer};
pub use error::{Error, Result};
pub use lexicon::{DisjunctiveSet, TokenId, Vocabulary, EOS};
pub use model::{ContextVector, ModelConfig, ModelParams};
