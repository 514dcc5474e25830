//! Multi-round greedy dialogue.
//!
//! Each round both agents run self-SNC under the current priors. The speaker
//! sends the not-yet-sent concept with the largest rational A2C mass for its
//! intended action; the listener replaces its action prior by the rational
//! C2A row of that concept. The concept prior is then zeroed on the sent
//! concept and renormalized, so no concept is sent twice.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{argmax, normalize, CondMatrix, Dist};
use crate::reasoning::{self, run_self_snc, ReasoningError, ReasoningOutcome, ReasoningParams};
use crate::system1::{huffman, BitBounds, BitString};
use crate::world::{ActionId, AgentProfile, ConceptId, World};

/// Slack allowed when checking that the listener posterior never decreases.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DialogueError {
    #[error("invalid dialogue configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown action {0}")]
    UnknownAction(ActionId),
    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),
    #[error("concept {0} was already sent")]
    ConceptAlreadySent(ConceptId),
    #[error("no concept is left to send")]
    Exhausted,
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
}

pub type Result<T> = std::result::Result<T, DialogueError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueConfig {
    pub k_max: usize,
    pub reasoning: ReasoningParams,
    /// Stop once the listener's largest posterior reaches `1 - δ`.
    pub stop_confidence: f64,
}

impl DialogueConfig {
    pub fn new(k_max: usize, reasoning: ReasoningParams) -> Result<Self> {
        let cfg = Self {
            k_max,
            reasoning,
            stop_confidence: 0.01,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_stop_confidence(mut self, delta: f64) -> Self {
        self.stop_confidence = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(DialogueError::InvalidConfig(
                "k_max must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.stop_confidence) {
            return Err(DialogueError::InvalidConfig(format!(
                "stop_confidence must lie in [0, 1), got {}",
                self.stop_confidence
            )));
        }
        self.reasoning.validate()?;
        Ok(())
    }
}

/// Priors and history carried between rounds. Everything a round computes
/// depends only on this state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub prior_a: Dist,
    /// Zero exactly on the sent concepts; all zero once every concept is sent.
    pub prior_c: Vec<f64>,
    pub remaining: Vec<bool>,
    pub transcript: Vec<(ConceptId, Dist)>,
}

impl DialogueState {
    pub fn new(prior_a: Dist, prior_c: Dist) -> Self {
        let remaining = vec![true; prior_c.len()];
        Self {
            prior_a,
            prior_c: prior_c.into_inner(),
            remaining,
            transcript: Vec::new(),
        }
    }

    pub fn from_world(world: &World) -> Self {
        Self::new(world.prior_actions.clone(), world.prior_concepts.clone())
    }

    pub fn round(&self) -> usize {
        self.transcript.len()
    }

    pub fn sent(&self) -> Vec<ConceptId> {
        self.transcript.iter().map(|(c, _)| *c).collect()
    }

    pub fn num_remaining(&self) -> usize {
        self.remaining.iter().filter(|&&r| r).count()
    }

    /// The concept prior as a distribution; fails once it has no mass left.
    pub fn prior_c_dist(&self) -> Result<Dist> {
        Dist::from_raw(&self.prior_c).map_err(|_| DialogueError::Exhausted)
    }
}

/// Record a sent concept: the action prior becomes `rc2a_row` and the
/// concept prior loses `c_k`.
pub fn update_priors(
    state: &DialogueState,
    c_k: ConceptId,
    rc2a_row: Dist,
) -> Result<DialogueState> {
    if c_k >= state.remaining.len() {
        return Err(DialogueError::UnknownConcept(c_k));
    }
    if !state.remaining[c_k] {
        return Err(DialogueError::ConceptAlreadySent(c_k));
    }
    let mut next = state.clone();
    next.remaining[c_k] = false;
    next.prior_c[c_k] = 0.0;
    next.prior_c = normalize(&next.prior_c).unwrap_or_else(|_| vec![0.0; next.prior_c.len()]);
    next.prior_a = rc2a_row.clone();
    next.transcript.push((c_k, rc2a_row));
    Ok(next)
}

/// Everything recorded about one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub concept: ConceptId,
    /// Listener posterior over actions after this round.
    pub posterior: Dist,
    /// `p^k_C(c) = Σ_a rA2C(c|a) p^{k-1}_A(a)`, restricted to unsent concepts.
    pub concept_marginal: Vec<f64>,
    pub bounds: BitBounds,
    /// Expected length of the Huffman code over `concept_marginal`.
    pub expected_bits: f64,
    /// Codeword actually sent; empty when only one concept has mass.
    pub codeword: BitString,
    /// Whether the sent concept had no mass under `concept_marginal` and
    /// was charged a fixed-length index instead of a codeword.
    pub uncoded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueReport {
    pub intended: ActionId,
    pub sent_concepts: Vec<ConceptId>,
    pub listener_guess: ActionId,
    pub success: bool,
    /// `p^k(a*|c_k)` after each round.
    pub posterior_trace: Vec<f64>,
    pub per_round_bit_bounds: Vec<BitBounds>,
    pub rounds: Vec<RoundRecord>,
    /// Every concept was sent before `k_max` rounds and without reaching the
    /// stopping confidence.
    pub exhausted: bool,
    pub stopped_early: bool,
}

impl DialogueReport {
    /// Bits actually put on the wire over all rounds.
    pub fn realized_bits(&self) -> usize {
        self.rounds.iter().map(|r| r.codeword.len()).sum()
    }

    pub fn expected_bits(&self) -> f64 {
        self.rounds.iter().map(|r| r.expected_bits).sum()
    }

    /// Concatenated codewords of all rounds.
    pub fn payload(&self) -> BitString {
        let mut out = BitString::new();
        for r in &self.rounds {
            out.extend_from(&r.codeword);
        }
        out
    }

    pub fn bounds(&self) -> BitBounds {
        s2_bitlength_bounds(&self.per_round_bit_bounds)
    }
}

/// Which agent's self-SNC is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Speaker,
    Listener,
}

/// `p^k_C` for one round: the speaker's rational A2C averaged over the
/// previous action prior, masked to `remaining` and renormalized.
pub fn concept_marginal(ra2c: &CondMatrix, prior_a: &Dist, remaining: &[bool]) -> Vec<f64> {
    let mut out = vec![0.0; ra2c.cols()];
    for a in 0..ra2c.rows() {
        let pa = prior_a.get(a);
        if pa == 0.0 {
            continue;
        }
        for (c, (o, &p)) in out.iter_mut().zip(ra2c.row(a)).enumerate() {
            if remaining[c] {
                *o += p * pa;
            }
        }
    }
    normalize(&out).unwrap_or(out)
}

/// Per-round bounds: `lower = H₂(p)`, `upper = Σ p ⌈-log₂ p⌉`.
pub fn round_bounds(p_c: &[f64]) -> BitBounds {
    let mut lower = 0.0;
    let mut upper = 0.0;
    for &p in p_c {
        if p > 0.0 {
            let info = -p.log2();
            lower += p * info;
            upper += p * info.ceil();
        }
    }
    BitBounds { lower, upper }
}

/// Bounds on the total over rounds.
pub fn s2_bitlength_bounds(per_round: &[BitBounds]) -> BitBounds {
    BitBounds {
        lower: per_round.iter().map(|b| b.lower).sum(),
        upper: per_round.iter().map(|b| b.upper).sum(),
    }
}

/// True when the posterior trace never decreases by more than the slack.
pub fn belief_is_monotone(report: &DialogueReport) -> bool {
    trace_is_monotone(&report.posterior_trace)
}

pub fn trace_is_monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - MONOTONE_SLACK)
}

/// Code one round's concept. A round whose marginal has a single positive
/// entry needs no bits: both sides already know which concept comes next.
fn code_round(p_c: &[f64], concept: ConceptId) -> (f64, BitString, bool) {
    let support = p_c.iter().filter(|&&p| p > 0.0).count();
    if support <= 1 {
        let uncoded = p_c[concept] == 0.0;
        return (0.0, BitString::new(), uncoded);
    }
    let cb = huffman(p_c);
    let expected = cb.expected_length(p_c);
    match cb.code(concept) {
        Some(w) => (expected, w.clone(), false),
        None => {
            let n = p_c.len().max(2);
            let bits = usize::BITS - (n - 1).leading_zeros();
            (
                expected,
                BitString::from_bits(vec![false; bits as usize]),
                true,
            )
        }
    }
}

fn masked_argmax(row: &[f64], remaining: &[bool]) -> Option<ConceptId> {
    let masked: Vec<f64> = row
        .iter()
        .zip(remaining)
        .map(|(&p, &r)| if r { p } else { f64::NEG_INFINITY })
        .collect();
    argmax(&masked).filter(|&c| remaining[c])
}

/// Solver for one round: returns the self-SNC outcome of the given side.
pub type Solver<'a> =
    dyn FnMut(Side, &DialogueState) -> reasoning::Result<Arc<ReasoningOutcome>> + 'a;

/// Drive a dialogue from explicit per-agent states.
///
/// With `symmetric` set the two agents share one model pair, so the solver
/// is only asked for the speaker side and the listener state mirrors the
/// speaker's.
pub fn run_dialogue_from(
    a_star: ActionId,
    cfg: &DialogueConfig,
    mut speaker_state: DialogueState,
    mut listener_state: DialogueState,
    symmetric: bool,
    solve: &mut Solver<'_>,
) -> Result<DialogueReport> {
    cfg.validate()?;
    if a_star >= speaker_state.prior_a.len() {
        return Err(DialogueError::UnknownAction(a_star));
    }
    let mut rounds = Vec::new();
    let mut exhausted = false;
    let mut stopped_early = false;

    while rounds.len() < cfg.k_max {
        if speaker_state.num_remaining() == 0 || speaker_state.prior_c_dist().is_err() {
            exhausted = true;
            break;
        }
        let spk = solve(Side::Speaker, &speaker_state)?;
        let lis = if symmetric {
            spk.clone()
        } else {
            solve(Side::Listener, &listener_state)?
        };
        let c_k = masked_argmax(spk.ra2c.row(a_star), &speaker_state.remaining)
            .ok_or(DialogueError::Exhausted)?;
        if !listener_state.remaining[c_k] {
            return Err(DialogueError::ConceptAlreadySent(c_k));
        }

        let p_c = concept_marginal(&spk.ra2c, &speaker_state.prior_a, &speaker_state.remaining);
        let bounds = round_bounds(&p_c);
        let (expected_bits, codeword, uncoded) = code_round(&p_c, c_k);

        let posterior = lis.rc2a.row_dist(c_k);
        let speaker_posterior = if symmetric {
            posterior.clone()
        } else {
            spk.rc2a.row_dist(c_k)
        };
        speaker_state = update_priors(&speaker_state, c_k, speaker_posterior)?;
        listener_state = update_priors(&listener_state, c_k, posterior.clone())?;
        rounds.push(RoundRecord {
            concept: c_k,
            posterior,
            concept_marginal: p_c,
            bounds,
            expected_bits,
            codeword,
            uncoded,
        });
        if listener_state.prior_a.max() >= 1.0 - cfg.stop_confidence && rounds.len() < cfg.k_max {
            stopped_early = true;
            break;
        }
    }

    let listener_guess = listener_state.prior_a.argmax();
    Ok(DialogueReport {
        intended: a_star,
        sent_concepts: rounds.iter().map(|r| r.concept).collect(),
        listener_guess,
        success: listener_guess == a_star,
        posterior_trace: rounds.iter().map(|r| r.posterior.get(a_star)).collect(),
        per_round_bit_bounds: rounds.iter().map(|r| r.bounds).collect(),
        rounds,
        exhausted,
        stopped_early,
    })
}

/// Dialogue between agents that share the models `speaker` and `listener`.
pub fn run_dialogue(
    speaker: &AgentProfile,
    listener: &AgentProfile,
    world: &World,
    a_star: ActionId,
    cfg: &DialogueConfig,
) -> Result<DialogueReport> {
    let state = DialogueState::from_world(world);
    let mut solve = |_: Side, st: &DialogueState| {
        let prior_c = Dist::from_raw(&st.prior_c)?;
        run_self_snc(speaker, listener, &st.prior_a, &prior_c, &cfg.reasoning).map(Arc::new)
    };
    run_dialogue_from(a_star, cfg, state.clone(), state, true, &mut solve)
}

/// How one agent models the pair: its own model on its side and its belief
/// about the counterpart's model on the other.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub speaker_model: &'a AgentProfile,
    pub listener_model: &'a AgentProfile,
}

/// Dialogue where the speaker and the listener reason with different model
/// pairs. Each agent updates its own priors from its own reasoning.
pub fn run_dialogue_views(
    speaker_view: View<'_>,
    listener_view: View<'_>,
    world: &World,
    a_star: ActionId,
    cfg: &DialogueConfig,
) -> Result<DialogueReport> {
    let state = DialogueState::from_world(world);
    let mut solve = |side: Side, st: &DialogueState| {
        let v = match side {
            Side::Speaker => speaker_view,
            Side::Listener => listener_view,
        };
        let prior_c = Dist::from_raw(&st.prior_c)?;
        run_self_snc(
            v.speaker_model,
            v.listener_model,
            &st.prior_a,
            &prior_c,
            &cfg.reasoning,
        )
        .map(Arc::new)
    };
    run_dialogue_from(a_star, cfg, state.clone(), state, false, &mut solve)
}
