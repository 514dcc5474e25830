//! Contextual reasoning ("self-SNC").
//!
//! An agent simulates a dialogue with a virtual counterpart by alternating
//! updates of a speaker context `S` and a listener context `L`, both joint
//! distributions over actions × concepts. Each half-step mixes the two into
//! a mutual context `M = λS + (1-λ)L` and sharpens it with an exponent:
//! `α` for the speaker, `β` for the listener.
//!
//! Two normalizations of the sharpened context are supported, see
//! [`ContextUpdate`]. Both are exact coordinate-descent steps on the
//! objective computed by [`objective_g`], so the recorded objective never
//! increases.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{CondMatrix, ContextMatrix, Dist, Matrix, ProbError};
use crate::world::AgentProfile;

/// Entries below this are flushed to zero after every update. This keeps
/// subnormals out of the hot loops and out of `ln`.
pub const FLUSH_BELOW: f64 = 1e-300;

/// Entries at or below this are ignored by [`support_is_uniform`].
pub const SUPPORT_FLOOR: f64 = 1e-8;

pub const MAX_EXPONENT: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasoningError {
    #[error("invalid reasoning parameters: {0}")]
    InvalidParams(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("the listener context has no mass under the given concept prior")]
    ZeroEvidence,
    #[error("mutual context has no mass at cell ({action}, {concept}) where a context does")]
    SupportMismatch { action: usize, concept: usize },
    #[error(transparent)]
    Prob(#[from] ProbError),
}

pub type Result<T> = std::result::Result<T, ReasoningError>;

/// How the sharpened mutual context is turned back into an individual one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextUpdate {
    /// `S' = M^α / Σ M^α` over the whole table, and the same for `L'` with `β`.
    /// Unconstrained minimization of the objective; tends to concentrate all
    /// mass on a few cells.
    Joint,
    /// `S'(a,c) = p_A(a) M^α(a,c) / Σ_c' M^α(a,c')` and
    /// `L'(a,c) = p_C(c) M^β(a,c) / Σ_a' M^β(a',c)`, where `p_A` is the
    /// action marginal of `S` and `p_C` the concept marginal of `L`. This is
    /// the minimization with those marginals held fixed, so each context
    /// keeps the prior it was initialized with.
    #[default]
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Maximum number of full iterations (speaker update + listener update).
    pub max_depth: usize,
    /// Stop early once the objective moves less than this across one
    /// full iteration.
    pub g_tolerance: Option<f64>,
    pub update: ContextUpdate,
    /// Record the objective after every half-step.
    pub record_trace: bool,
}

impl ReasoningParams {
    pub fn new(alpha: f64, beta: f64, lambda: f64, max_depth: usize) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            lambda,
            max_depth,
            g_tolerance: None,
            update: ContextUpdate::default(),
            record_trace: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.g_tolerance = Some(tol);
        self
    }

    pub fn with_update(mut self, update: ContextUpdate) -> Self {
        self.update = update;
        self
    }

    pub fn with_trace(mut self, record: bool) -> Self {
        self.record_trace = record;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(1.0..=MAX_EXPONENT).contains(&v) {
                return Err(ReasoningError::InvalidParams(format!(
                    "{name} must lie in [1, {MAX_EXPONENT}], got {v}"
                )));
            }
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(ReasoningError::InvalidParams(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        if self.max_depth == 0 {
            return Err(ReasoningError::InvalidParams(
                "max_depth must be at least 1".into(),
            ));
        }
        if let Some(t) = self.g_tolerance {
            if t.is_nan() || t <= 0.0 {
                return Err(ReasoningError::InvalidParams(format!(
                    "g_tolerance must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// The four contexts produced by one full iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub m1: ContextMatrix,
    pub s: ContextMatrix,
    pub m2: ContextMatrix,
    pub l: ContextMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningOutcome {
    /// Mutual context of the last listener half-step.
    pub mutual: ContextMatrix,
    pub speaker_ctx: ContextMatrix,
    pub listener_ctx: ContextMatrix,
    /// Rational A2C, one row per action.
    pub ra2c: CondMatrix,
    /// Rational C2A, one row per concept giving a distribution over actions.
    pub rc2a: CondMatrix,
    /// Objective (nats) after every half-step, if recorded.
    pub g_trace: Vec<f64>,
    /// Objective at the final contexts.
    pub g_final: f64,
    pub depth_used: usize,
    /// Whether the tolerance stopping rule fired.
    pub converged: bool,
    /// Actions whose ra2c row had no mass and was replaced by uniform.
    pub ra2c_fallback: Vec<usize>,
    /// Concepts whose rc2a row had no mass and was replaced by uniform.
    pub rc2a_fallback: Vec<usize>,
}

fn check_shape(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(ReasoningError::ShapeMismatch(format!(
            "{what}: expected {expected}, got {got}"
        )));
    }
    Ok(())
}

/// Initial speaker and listener contexts.
///
/// `S0(a,c) = p(c|a) p_A(a)` with `p(c|a)` the speaker's normalized relevance
/// row. `L0(a,c) ∝ p(a|X_c) p_C(c)` with `p(a|X_c) ∝ p(X_c = TRUE|a) p_A(a)`
/// the listener's Bayes posterior. A concept that no action makes relevant
/// gets an all-zero column in `L0`.
pub fn init_contexts(
    speaker: &AgentProfile,
    listener: &AgentProfile,
    prior_a: &Dist,
    prior_c: &Dist,
) -> Result<(ContextMatrix, ContextMatrix)> {
    let (na, nc) = (
        speaker.relevance.num_actions(),
        speaker.relevance.num_concepts(),
    );
    check_shape("listener actions", na, listener.relevance.num_actions())?;
    check_shape("listener concepts", nc, listener.relevance.num_concepts())?;
    check_shape("action prior", na, prior_a.len())?;
    check_shape("concept prior", nc, prior_c.len())?;

    let mut s = Matrix::zeros(na, nc);
    for a in 0..na {
        let row = speaker.relevance.row(a);
        let sum: f64 = row.iter().sum();
        let pa = prior_a.get(a);
        for (x, &p) in s.row_mut(a).iter_mut().zip(row) {
            *x = p / sum * pa;
        }
    }

    let lis = listener.relevance.matrix();
    let mut l = Matrix::zeros(na, nc);
    for c in 0..nc {
        let evidence: f64 = (0..na).map(|a| lis.get(a, c) * prior_a.get(a)).sum();
        if evidence == 0.0 {
            continue;
        }
        let pc = prior_c.get(c);
        for a in 0..na {
            l.set(a, c, lis.get(a, c) * prior_a.get(a) / evidence * pc);
        }
    }
    let s = ContextMatrix::from_raw(s)?;
    let l = ContextMatrix::from_raw(l).map_err(|e| match e {
        ProbError::AllZero => ReasoningError::ZeroEvidence,
        other => other.into(),
    })?;
    Ok((s, l))
}

fn flush(x: f64) -> f64 {
    if x < FLUSH_BELOW {
        0.0
    } else {
        x
    }
}

fn mix(s: &Matrix, l: &Matrix, lambda: f64) -> Matrix {
    let data = s
        .as_slice()
        .iter()
        .zip(l.as_slice())
        .map(|(&x, &y)| lambda * x + (1.0 - lambda) * y)
        .collect();
    Matrix::from_vec(s.rows(), s.cols(), data).expect("same shape")
}

/// `(x / scale)^e`, with the exponent skipped when it is one.
fn scaled_pow(x: f64, scale: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if e == 1.0 {
        x / scale
    } else {
        (x / scale).powf(e)
    }
}

/// `M^e` normalized over the whole table.
fn pow_normalize_joint(m: &Matrix, e: f64) -> Matrix {
    let max = m.as_slice().iter().cloned().fold(0.0, f64::max);
    let mut out = m.clone();
    let mut sum = 0.0;
    for x in out.as_mut_slice() {
        *x = flush(scaled_pow(*x, max, e));
        sum += *x;
    }
    for x in out.as_mut_slice() {
        *x = flush(*x / sum);
    }
    out
}

/// `M^e` normalized within each row, rows scaled by `weights`. Rows with no
/// mass stay zero and are reported.
fn pow_normalize_rows(m: &Matrix, e: f64, weights: Option<&[f64]>) -> (Matrix, Vec<usize>) {
    let mut out = m.clone();
    let mut empty = Vec::new();
    for a in 0..m.rows() {
        let w = weights.map_or(1.0, |w| w[a]);
        let row = out.row_mut(a);
        let max = row.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            empty.push(a);
            continue;
        }
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = scaled_pow(*x, max, e);
            sum += *x;
        }
        for x in row.iter_mut() {
            *x = flush(*x / sum * w);
        }
    }
    (out, empty)
}

/// `M^e` normalized within each column, columns scaled by `weights`.
fn pow_normalize_cols(m: &Matrix, e: f64, weights: Option<&[f64]>) -> (Matrix, Vec<usize>) {
    let (rows, cols) = m.shape();
    let mut max = vec![0.0f64; cols];
    for a in 0..rows {
        for (mx, &x) in max.iter_mut().zip(m.row(a)) {
            *mx = mx.max(x);
        }
    }
    let mut out = m.clone();
    let mut sum = vec![0.0; cols];
    for a in 0..rows {
        for (c, x) in out.row_mut(a).iter_mut().enumerate() {
            *x = scaled_pow(*x, max[c], e);
            sum[c] += *x;
        }
    }
    for a in 0..rows {
        for (c, x) in out.row_mut(a).iter_mut().enumerate() {
            if sum[c] > 0.0 {
                *x = flush(*x / sum[c] * weights.map_or(1.0, |w| w[c]));
            }
        }
    }
    let empty = (0..cols).filter(|&c| sum[c] == 0.0).collect();
    (out, empty)
}

fn row_sums(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|a| m.row(a).iter().sum()).collect()
}

fn col_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for a in 0..m.rows() {
        for (o, &x) in out.iter_mut().zip(m.row(a)) {
            *o += x;
        }
    }
    out
}

fn check_pair(s: &ContextMatrix, l: &ContextMatrix) -> Result<()> {
    if s.shape() != l.shape() {
        return Err(ReasoningError::ShapeMismatch(format!(
            "speaker context is {:?}, listener context is {:?}",
            s.shape(),
            l.shape()
        )));
    }
    Ok(())
}

fn speaker_update(m1: &Matrix, s: &Matrix, p: &ReasoningParams) -> Matrix {
    match p.update {
        ContextUpdate::Joint => pow_normalize_joint(m1, p.alpha),
        ContextUpdate::Marginal => pow_normalize_rows(m1, p.alpha, Some(&row_sums(s))).0,
    }
}

fn listener_update(m2: &Matrix, l: &Matrix, p: &ReasoningParams) -> Matrix {
    match p.update {
        ContextUpdate::Joint => pow_normalize_joint(m2, p.beta),
        ContextUpdate::Marginal => pow_normalize_cols(m2, p.beta, Some(&col_sums(l))).0,
    }
}

/// One full iteration with the update rule chosen in `p`.
pub fn step(s: &ContextMatrix, l: &ContextMatrix, p: &ReasoningParams) -> Result<StepResult> {
    check_pair(s, l)?;
    let m1 = mix(s.matrix(), l.matrix(), p.lambda);
    let s_next = speaker_update(&m1, s.matrix(), p);
    let m2 = mix(&s_next, l.matrix(), p.lambda);
    let l_next = listener_update(&m2, l.matrix(), p);
    Ok(StepResult {
        m1: ContextMatrix::from_matrix_unchecked(m1),
        s: ContextMatrix::from_matrix_unchecked(s_next),
        m2: ContextMatrix::from_matrix_unchecked(m2),
        l: ContextMatrix::from_matrix_unchecked(l_next),
    })
}

/// One iteration of the jointly normalized update:
/// `M1 = λS + (1-λ)L`, `S' ∝ M1^α`, `M2 = λS' + (1-λ)L`, `L' ∝ M2^β`.
pub fn reasoning_step(
    s: &ContextMatrix,
    l: &ContextMatrix,
    p: &ReasoningParams,
) -> Result<StepResult> {
    step(s, l, &p.clone().with_update(ContextUpdate::Joint))
}

/// One iteration of the marginal-preserving update.
pub fn anchored_step(
    s: &ContextMatrix,
    l: &ContextMatrix,
    p: &ReasoningParams,
) -> Result<StepResult> {
    step(s, l, &p.clone().with_update(ContextUpdate::Marginal))
}

fn objective_raw(s: &Matrix, l: &Matrix, m: &Matrix, p: &ReasoningParams) -> Result<f64> {
    let cols = s.cols();
    let mut speaker = 0.0;
    let mut listener = 0.0;
    for (i, ((&x, &y), &z)) in s
        .as_slice()
        .iter()
        .zip(l.as_slice())
        .zip(m.as_slice())
        .enumerate()
    {
        if x == 0.0 && y == 0.0 {
            continue;
        }
        if z == 0.0 {
            return Err(ReasoningError::SupportMismatch {
                action: i / cols,
                concept: i % cols,
            });
        }
        let lz = z.ln();
        if x > 0.0 {
            speaker += x * (x.ln() / p.alpha - lz);
        }
        if y > 0.0 {
            listener += y * (y.ln() / p.beta - lz);
        }
    }
    Ok(p.lambda * speaker + (1.0 - p.lambda) * listener)
}

/// `G = λ[H(S,M) - H(S)/α] + (1-λ)[H(L,M) - H(L)/β]` in nats.
pub fn objective_g(
    s: &ContextMatrix,
    l: &ContextMatrix,
    m: &ContextMatrix,
    p: &ReasoningParams,
) -> Result<f64> {
    check_pair(s, l)?;
    check_pair(s, m)?;
    objective_raw(s.matrix(), l.matrix(), m.matrix(), p)
}

fn uniform_fallback(m: &mut Matrix, rows: &[usize]) {
    let n = m.cols() as f64;
    for &r in rows {
        for x in m.row_mut(r) {
            *x = 1.0 / n;
        }
    }
}

/// Rational A2C: rows of `M1^α` normalized over concepts.
pub fn extract_ra2c(m1: &ContextMatrix, alpha: f64) -> (CondMatrix, Vec<usize>) {
    let (mut m, empty) = pow_normalize_rows(m1.matrix(), alpha, None);
    uniform_fallback(&mut m, &empty);
    (CondMatrix::from_matrix_unchecked(m), empty)
}

/// Rational C2A: columns of `M2^β` normalized over actions, returned with
/// one row per concept.
pub fn extract_rc2a(m2: &ContextMatrix, beta: f64) -> (CondMatrix, Vec<usize>) {
    let (m, empty) = pow_normalize_cols(m2.matrix(), beta, None);
    let mut t = m.transpose();
    uniform_fallback(&mut t, &empty);
    (CondMatrix::from_matrix_unchecked(t), empty)
}

/// Iterate from given initial contexts.
pub fn run_from(
    s0: ContextMatrix,
    l0: ContextMatrix,
    p: &ReasoningParams,
) -> Result<ReasoningOutcome> {
    p.validate()?;
    check_pair(&s0, &l0)?;
    let mut s = s0.into_matrix();
    let mut l = l0.into_matrix();
    let mut g_trace = Vec::new();
    let mut prev_g: Option<f64> = None;
    let mut g_final = None;
    let mut converged = false;
    let mut depth = 0;
    let mut m1 = Matrix::zeros(0, 0);
    let mut m2 = Matrix::zeros(0, 0);
    let track_g = p.record_trace || p.g_tolerance.is_some();

    while depth < p.max_depth {
        m1 = mix(&s, &l, p.lambda);
        s = speaker_update(&m1, &s, p);
        if p.record_trace {
            g_trace.push(objective_raw(&s, &l, &m1, p)?);
        }
        m2 = mix(&s, &l, p.lambda);
        l = listener_update(&m2, &l, p);
        depth += 1;
        if track_g {
            let g = objective_raw(&s, &l, &m2, p)?;
            if p.record_trace {
                g_trace.push(g);
            }
            g_final = Some(g);
            if let (Some(tol), Some(prev)) = (p.g_tolerance, prev_g) {
                if (g - prev).abs() < tol {
                    converged = true;
                    break;
                }
            }
            prev_g = Some(g);
        }
    }

    if g_final.is_none() {
        g_final = Some(objective_raw(&s, &l, &m2, p)?);
    }
    let m1 = ContextMatrix::from_matrix_unchecked(m1);
    let m2 = ContextMatrix::from_matrix_unchecked(m2);
    let (ra2c, ra2c_fallback) = extract_ra2c(&m1, p.alpha);
    let (rc2a, rc2a_fallback) = extract_rc2a(&m2, p.beta);
    Ok(ReasoningOutcome {
        mutual: m2,
        speaker_ctx: ContextMatrix::from_matrix_unchecked(s),
        listener_ctx: ContextMatrix::from_matrix_unchecked(l),
        ra2c,
        rc2a,
        g_trace,
        g_final: g_final.expect("set above"),
        depth_used: depth,
        converged,
        ra2c_fallback,
        rc2a_fallback,
    })
}

/// Self-SNC from the agents' models and the current priors.
pub fn run_self_snc(
    speaker: &AgentProfile,
    listener: &AgentProfile,
    prior_a: &Dist,
    prior_c: &Dist,
    p: &ReasoningParams,
) -> Result<ReasoningOutcome> {
    p.validate()?;
    let (s0, l0) = init_contexts(speaker, listener, prior_a, prior_c)?;
    run_from(s0, l0, p)
}

/// True when every entry of `m` above [`SUPPORT_FLOOR`] lies within relative
/// `rel_tol` of the largest one.
pub fn support_is_uniform(m: &ContextMatrix, rel_tol: f64) -> bool {
    let live: Vec<f64> = m
        .matrix()
        .as_slice()
        .iter()
        .cloned()
        .filter(|&x| x > SUPPORT_FLOOR)
        .collect();
    let Some(max) = live.iter().cloned().reduce(f64::max) else {
        return true;
    };
    let min = live.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min <= rel_tol * max
}

/// Largest entrywise spread of `m`'s entries above the floor, relative to the largest.
pub fn support_spread(m: &ContextMatrix) -> f64 {
    let live = m
        .matrix()
        .as_slice()
        .iter()
        .cloned()
        .filter(|&x| x > SUPPORT_FLOOR);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for x in live {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if hi == 0.0 {
        0.0
    } else {
        (hi - lo) / hi
    }
}
