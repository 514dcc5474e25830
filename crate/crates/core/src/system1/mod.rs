//! System 1 semantic coding: concept extraction, A2C / C2A conditionals,
//! semantic representations and their source-coded bit lengths.

mod code;

pub use code::{huffman, BitString, CodeError, Codebook};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{argmax, Dist, Matrix, ProbError};
use crate::world::{ActionId, AgentProfile, ConceptId, SymbolId, SymbolTable};

/// Default extraction threshold on `p(X_c = TRUE | a)`.
pub const DEFAULT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum System1Error {
    #[error("unknown action {0}")]
    UnknownAction(ActionId),
    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("action {0} has no relevant concept")]
    AllZero(ActionId),
    #[error("concept {0} has zero probability under the prior")]
    ZeroEvidence(ConceptId),
    #[error("no concept of action {0} clears the extraction threshold")]
    EmptySr(ActionId),
    #[error("symbol {0} has no codeword")]
    UnknownSymbol(SymbolId),
    #[error("prior has {got} entries, expected {expected}")]
    PriorShape { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, System1Error>;

/// Ordered, distinct symbols describing one intended action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticRep {
    pub symbols: Vec<SymbolId>,
    pub origin_action: ActionId,
}

fn check_action(agent: &AgentProfile, a: ActionId) -> Result<()> {
    if a >= agent.relevance.num_actions() {
        return Err(System1Error::UnknownAction(a));
    }
    Ok(())
}

fn check_prior(agent: &AgentProfile, prior: &Dist) -> Result<()> {
    let expected = agent.relevance.num_actions();
    if prior.len() != expected {
        return Err(System1Error::PriorShape {
            expected,
            got: prior.len(),
        });
    }
    Ok(())
}

/// Concepts with `p(X_c = TRUE | a) ≥ threshold`, ascending. May be empty.
pub fn extract_concepts(
    agent: &AgentProfile,
    action: ActionId,
    threshold: f64,
) -> Result<Vec<ConceptId>> {
    check_action(agent, action)?;
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(System1Error::InvalidThreshold(threshold));
    }
    Ok(agent
        .relevance
        .row(action)
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(c, _)| c)
        .collect())
}

/// Like [`extract_concepts`], but an empty extraction falls back to the
/// single most relevant concept. The flag reports whether that happened.
pub fn extract_or_argmax(
    agent: &AgentProfile,
    action: ActionId,
    threshold: f64,
) -> Result<(Vec<ConceptId>, bool)> {
    let concepts = extract_concepts(agent, action, threshold)?;
    if !concepts.is_empty() {
        return Ok((concepts, false));
    }
    let c = argmax(agent.relevance.row(action)).expect("rows are nonempty");
    Ok((vec![c], true))
}

/// `p(c | a)`: the relevance row normalized over concepts.
pub fn a2c(agent: &AgentProfile, action: ActionId) -> Result<Dist> {
    check_action(agent, action)?;
    Dist::from_raw(agent.relevance.row(action)).map_err(|e| match e {
        ProbError::AllZero => System1Error::AllZero(action),
        other => panic!("relevance rows are valid: {other}"),
    })
}

/// A2C for every action, as a row-stochastic matrix.
pub fn a2c_matrix(agent: &AgentProfile) -> Matrix {
    let m = agent.relevance.matrix();
    let mut out = m.clone();
    for a in 0..m.rows() {
        let sum: f64 = m.row(a).iter().sum();
        for x in out.row_mut(a) {
            *x /= sum;
        }
    }
    out
}

/// Bayes inversion of A2C: `p(a | c) ∝ p(c | a) p(a)`.
pub fn c2a(agent: &AgentProfile, concept: ConceptId, prior: &Dist) -> Result<Dist> {
    check_prior(agent, prior)?;
    if concept >= agent.relevance.num_concepts() {
        return Err(System1Error::UnknownConcept(concept));
    }
    let joint: Vec<f64> = (0..agent.relevance.num_actions())
        .map(|a| {
            let row = agent.relevance.row(a);
            row[concept] / row.iter().sum::<f64>() * prior.get(a)
        })
        .collect();
    Dist::from_raw(&joint).map_err(|_| System1Error::ZeroEvidence(concept))
}

/// Symbolize the extracted concepts of `action`.
pub fn build_sr(
    agent: &AgentProfile,
    action: ActionId,
    threshold: f64,
    table: &SymbolTable,
) -> Result<SemanticRep> {
    let concepts = extract_concepts(agent, action, threshold)?;
    if concepts.is_empty() {
        return Err(System1Error::EmptySr(action));
    }
    Ok(SemanticRep {
        symbols: concepts.iter().map(|&c| table.to_symbol(c)).collect(),
        origin_action: action,
    })
}

/// `p(X_c = TRUE) = Σ_a p(X_c = TRUE | a) p(a)` for every concept.
pub fn relevance_marginal(agent: &AgentProfile, prior: &Dist) -> Result<Vec<f64>> {
    check_prior(agent, prior)?;
    let m = agent.relevance.matrix();
    let mut out = vec![0.0; m.cols()];
    for a in 0..m.rows() {
        let pa = prior.get(a);
        if pa == 0.0 {
            continue;
        }
        for (o, &p) in out.iter_mut().zip(m.row(a)) {
            *o += p * pa;
        }
    }
    Ok(out)
}

/// Relative frequency `f_c` with which each concept is extracted.
pub fn relative_frequencies(agent: &AgentProfile, prior: &Dist) -> Result<Dist> {
    let marginal = relevance_marginal(agent, prior)?;
    Ok(Dist::from_raw(&marginal).expect("relevance rows carry positive mass"))
}

/// Lower and upper bounds on an expected SR length, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitBounds {
    pub lower: f64,
    pub upper: f64,
}

impl BitBounds {
    pub fn contains(&self, x: f64, tol: f64) -> bool {
        self.lower - tol <= x && x <= self.upper + tol
    }
}

/// Entropy-style bounds on the System 1 SR length.
///
/// `lower = -Σ_c p(X_c) log₂ f_c` and `upper = Σ_c p(X_c) ⌈-log₂ f_c⌉`.
pub fn s1_bitlength_bounds(agent: &AgentProfile, prior: &Dist) -> Result<BitBounds> {
    let marginal = relevance_marginal(agent, prior)?;
    let total: f64 = marginal.iter().sum();
    let mut lower = 0.0;
    let mut upper = 0.0;
    for &p in &marginal {
        if p > 0.0 {
            let info = -(p / total).log2();
            lower += p * info;
            upper += p * info.ceil();
        }
    }
    Ok(BitBounds { lower, upper })
}

/// Huffman codebook over the relative extraction frequencies.
pub fn s1_codebook(agent: &AgentProfile, prior: &Dist) -> Result<Codebook> {
    Ok(huffman(relative_frequencies(agent, prior)?.as_slice()))
}

/// `Σ_c p(X_c = TRUE) ℓ_c`: the expected length under the probabilistic
/// relevance model, which is what the entropy bounds sandwich.
pub fn s1_model_expected_length(
    agent: &AgentProfile,
    prior: &Dist,
    codebook: &Codebook,
) -> Result<f64> {
    let marginal = relevance_marginal(agent, prior)?;
    let mut total = 0.0;
    for (c, &p) in marginal.iter().enumerate() {
        if p > 0.0 {
            let l = codebook.length(c).ok_or(System1Error::UnknownSymbol(c))?;
            total += p * l as f64;
        }
    }
    Ok(total)
}

/// Expected realized SR length under threshold extraction:
/// `Σ_a p(a) Σ_{c ∈ extract(a)} ℓ_c`.
pub fn s1_expected_sr_length(
    agent: &AgentProfile,
    prior: &Dist,
    threshold: f64,
    codebook: &Codebook,
) -> Result<f64> {
    check_prior(agent, prior)?;
    let mut total = 0.0;
    for a in 0..agent.relevance.num_actions() {
        let pa = prior.get(a);
        if pa == 0.0 {
            continue;
        }
        let concepts = extract_concepts(agent, a, threshold)?;
        if concepts.is_empty() {
            return Err(System1Error::EmptySr(a));
        }
        let mut bits = 0usize;
        for c in concepts {
            bits += codebook.length(c).ok_or(System1Error::UnknownSymbol(c))?;
        }
        total += pa * bits as f64;
    }
    Ok(total)
}
