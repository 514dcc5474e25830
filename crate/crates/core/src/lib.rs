//! Stochastic semantics-native communication between a speaker and a
//! listener that share a world of actions and concepts.
//!
//! The crate is layered bottom-up: [`prob`] holds distributions and
//! information measures, [`world`] the relevance models, [`system1`] the
//! extraction-and-coding path, [`reasoning`] the contextual reasoning
//! iterations, [`dialogue`] the multi-round protocol, [`channel`] the
//! erasure channel, and [`harness`] the Monte Carlo experiments.

pub mod channel;
pub mod dialogue;
pub mod harness;
pub mod prob;
pub mod reasoning;
pub mod system1;
pub mod world;

pub use prob::{ContextMatrix, Dist, Matrix, ProbError, Rng};
pub use system1::{BitString, Codebook, SemanticRep};
pub use world::{AgentProfile, RelevanceModel, SymbolTable, World};
