//! Worlds, agent relevance models, symbol tables and the world file format.
//!
//! A relevance model stores one independent Bernoulli parameter
//! `p(X_c = TRUE | a)` per (action, concept) cell. Rows are not normalized.

use std::fs;
use std::path::Path;

use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{Dist, Matrix, ProbError, Rng};

pub type ActionId = usize;
pub type ConceptId = usize;
pub type SymbolId = usize;

/// Current world file format version.
pub const WORLD_FORMAT_VERSION: u32 = 1;

/// How many times a degenerate (all-zero) row is redrawn before giving up.
const MAX_ROW_REDRAWS: usize = 10_000;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("quantization step must lie in (0, 1], got {0}")]
    InvalidStep(f64),
    #[error("relevance entry ({action}, {concept}) = {value} lies outside [0, 1]")]
    EntryOutOfRange {
        action: ActionId,
        concept: ConceptId,
        value: f64,
    },
    #[error("relevance row {0} has no positive entry")]
    ZeroRow(ActionId),
    #[error("symbol table is not a bijection: {0}")]
    NotBijective(String),
    #[error("{field}: {message}")]
    Schema { field: String, message: String },
    #[error("could not parse world file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("world file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

pub type Result<T> = std::result::Result<T, WorldError>;

/// `p(X_c = TRUE | a; t)` for every action and concept.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceModel {
    p_true: Matrix,
}

impl RelevanceModel {
    pub fn new(p_true: Matrix) -> Result<Self> {
        if p_true.rows() == 0 || p_true.cols() == 0 {
            return Err(WorldError::InvalidParams(
                "relevance model needs at least one action and one concept".into(),
            ));
        }
        for a in 0..p_true.rows() {
            for (c, &value) in p_true.row(a).iter().enumerate() {
                if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                    return Err(WorldError::EntryOutOfRange {
                        action: a,
                        concept: c,
                        value,
                    });
                }
            }
            if !p_true.row(a).iter().any(|&x| x > 0.0) {
                return Err(WorldError::ZeroRow(a));
            }
        }
        Ok(Self { p_true })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn num_actions(&self) -> usize {
        self.p_true.rows()
    }

    pub fn num_concepts(&self) -> usize {
        self.p_true.cols()
    }

    pub fn get(&self, a: ActionId, c: ConceptId) -> f64 {
        self.p_true.get(a, c)
    }

    pub fn row(&self, a: ActionId) -> &[f64] {
        self.p_true.row(a)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p_true
    }
}

/// One-to-one map between concepts and symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    to_symbol: Vec<SymbolId>,
    from_symbol: Vec<ConceptId>,
}

impl SymbolTable {
    pub fn identity(n: usize) -> Self {
        Self {
            to_symbol: (0..n).collect(),
            from_symbol: (0..n).collect(),
        }
    }

    /// `to_symbol[c]` is the symbol for concept `c`.
    pub fn from_mapping(to_symbol: Vec<SymbolId>) -> Result<Self> {
        let n = to_symbol.len();
        let mut from_symbol = vec![usize::MAX; n];
        for (c, &s) in to_symbol.iter().enumerate() {
            if s >= n {
                return Err(WorldError::NotBijective(format!(
                    "symbol {s} out of range for {n} concepts"
                )));
            }
            if from_symbol[s] != usize::MAX {
                return Err(WorldError::NotBijective(format!(
                    "symbol {s} assigned to concepts {} and {c}",
                    from_symbol[s]
                )));
            }
            from_symbol[s] = c;
        }
        Ok(Self {
            to_symbol,
            from_symbol,
        })
    }

    pub fn len(&self) -> usize {
        self.to_symbol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_symbol.is_empty()
    }

    pub fn to_symbol(&self, c: ConceptId) -> SymbolId {
        self.to_symbol[c]
    }

    pub fn from_symbol(&self, s: SymbolId) -> ConceptId {
        self.from_symbol[s]
    }

    pub fn mapping(&self) -> &[SymbolId] {
        &self.to_symbol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub num_actions: usize,
    pub num_concepts: usize,
    pub prior_actions: Dist,
    pub prior_concepts: Dist,
    pub symbol_table: SymbolTable,
}

impl World {
    /// Uniform priors and the identity symbol table.
    pub fn uniform(num_actions: usize, num_concepts: usize) -> Self {
        Self {
            num_actions,
            num_concepts,
            prior_actions: Dist::uniform(num_actions),
            prior_concepts: Dist::uniform(num_concepts),
            symbol_table: SymbolTable::identity(num_concepts),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentProfile {
    pub task_id: String,
    pub relevance: RelevanceModel,
}

impl AgentProfile {
    pub fn new(task_id: impl Into<String>, relevance: RelevanceModel) -> Self {
        Self {
            task_id: task_id.into(),
            relevance,
        }
    }

    pub fn with_relevance(&self, relevance: RelevanceModel) -> Self {
        Self {
            task_id: self.task_id.clone(),
            relevance,
        }
    }
}

/// Draw a world whose relevance entries are independent Beta(a, b) variables.
///
/// A two-parameter Dirichlet over the binary `X_c` is a Beta draw, so each
/// cell gets its own. Rows that come out all-zero are redrawn.
pub fn gen_world(
    num_actions: usize,
    num_concepts: usize,
    dirichlet: (f64, f64),
    rng: &mut Rng,
) -> Result<(World, AgentProfile)> {
    if num_actions == 0 || num_concepts == 0 {
        return Err(WorldError::InvalidParams(format!(
            "counts must be at least 1, got {num_actions}x{num_concepts}"
        )));
    }
    let (a, b) = dirichlet;
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(WorldError::InvalidParams(format!(
            "Dirichlet parameters must be positive, got ({a}, {b})"
        )));
    }
    let beta = Beta::new(a, b).map_err(|e| WorldError::InvalidParams(e.to_string()))?;
    let mut p = Matrix::zeros(num_actions, num_concepts);
    for r in 0..num_actions {
        let mut attempts = 0;
        loop {
            for x in p.row_mut(r) {
                *x = beta.sample(rng.inner_mut());
            }
            if p.row(r).iter().any(|&x| x > 0.0) {
                break;
            }
            attempts += 1;
            if attempts >= MAX_ROW_REDRAWS {
                return Err(WorldError::InvalidParams(
                    "could not draw a relevance row with positive mass".into(),
                ));
            }
        }
    }
    let relevance = RelevanceModel::new(p)?;
    Ok((
        World::uniform(num_actions, num_concepts),
        AgentProfile::new("t0", relevance),
    ))
}

pub const RABBIT: ConceptId = 0;
pub const JUMPING: ConceptId = 1;
pub const RING: ConceptId = 2;

/// Three-action referential game: a rabbit sitting, jumping, and jumping
/// through a ring, described by the concepts rabbit, jumping and ring.
pub fn rabbit_fixture() -> (World, AgentProfile) {
    let relevance = RelevanceModel::from_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![1.0, 1.0, 0.0],
        vec![1.0, 1.0, 1.0],
    ])
    .expect("fixture is valid");
    (World::uniform(3, 3), AgentProfile::new("rabbit", relevance))
}

/// Add independent `U[-ε, ε]` noise to every entry and clamp to `[0, 1]`.
///
/// A row that clamps to all zeros is re-perturbed; after repeated failure the
/// original row's largest entry is kept.
pub fn perturb_model(m: &RelevanceModel, epsilon: f64, rng: &mut Rng) -> RelevanceModel {
    assert!(epsilon >= 0.0, "epsilon must be nonnegative");
    if epsilon == 0.0 {
        return m.clone();
    }
    let mut p = m.p_true.clone();
    for a in 0..p.rows() {
        let original = m.row(a);
        let mut attempts = 0;
        loop {
            for (x, &o) in p.row_mut(a).iter_mut().zip(original) {
                *x = (o + rng.uniform_range(-epsilon, epsilon)).clamp(0.0, 1.0);
            }
            if p.row(a).iter().any(|&x| x > 0.0) {
                break;
            }
            attempts += 1;
            if attempts >= MAX_ROW_REDRAWS {
                let c = crate::prob::argmax(original).expect("nonempty row");
                p.set(a, c, original[c]);
                break;
            }
        }
    }
    RelevanceModel { p_true: p }
}

fn quantize_value(x: f64, step: f64) -> f64 {
    ((x / step + 0.5).floor() * step).clamp(0.0, 1.0)
}

/// Round every entry to the nearest multiple of `step` (ties up).
///
/// A row that rounds to all zeros gets `step` at its original argmax.
pub fn quantize_model(m: &RelevanceModel, step: f64) -> Result<RelevanceModel> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(WorldError::InvalidStep(step));
    }
    let mut p = m.p_true.clone();
    for x in p.as_mut_slice() {
        *x = quantize_value(*x, step);
    }
    for a in 0..p.rows() {
        if !p.row(a).iter().any(|&x| x > 0.0) {
            let c = crate::prob::argmax(m.row(a)).expect("nonempty row");
            p.set(a, c, quantize_value(step, step));
        }
    }
    Ok(RelevanceModel { p_true: p })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentRecord {
    task_id: String,
    /// Row-major `num_actions × num_concepts`.
    p_true: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldRecord {
    version: u32,
    num_actions: usize,
    num_concepts: usize,
    prior_actions: Vec<f64>,
    prior_concepts: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    symbols: Option<Vec<SymbolId>>,
    agents: Vec<AgentRecord>,
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> WorldError {
    WorldError::Schema {
        field: field.into(),
        message: message.into(),
    }
}

fn check_prior(field: &str, v: Vec<f64>, n: usize) -> Result<Dist> {
    if v.len() != n {
        return Err(schema(
            field,
            format!("expected {n} entries, got {}", v.len()),
        ));
    }
    Dist::new(v).map_err(|e| schema(field, e.to_string()))
}

impl WorldRecord {
    fn from_parts(world: &World, agents: &[AgentProfile]) -> Self {
        let identity = world.symbol_table == SymbolTable::identity(world.num_concepts);
        Self {
            version: WORLD_FORMAT_VERSION,
            num_actions: world.num_actions,
            num_concepts: world.num_concepts,
            prior_actions: world.prior_actions.as_slice().to_vec(),
            prior_concepts: world.prior_concepts.as_slice().to_vec(),
            symbols: (!identity).then(|| world.symbol_table.mapping().to_vec()),
            agents: agents
                .iter()
                .map(|a| AgentRecord {
                    task_id: a.task_id.clone(),
                    p_true: a.relevance.matrix().as_slice().to_vec(),
                })
                .collect(),
        }
    }

    fn into_parts(self) -> Result<(World, Vec<AgentProfile>)> {
        if self.version != WORLD_FORMAT_VERSION {
            return Err(schema(
                "version",
                format!("unsupported version {}", self.version),
            ));
        }
        let (na, nc) = (self.num_actions, self.num_concepts);
        if na == 0 {
            return Err(schema("num_actions", "must be at least 1"));
        }
        if nc == 0 {
            return Err(schema("num_concepts", "must be at least 1"));
        }
        let prior_actions = check_prior("prior_actions", self.prior_actions, na)?;
        let prior_concepts = check_prior("prior_concepts", self.prior_concepts, nc)?;
        let symbol_table = match self.symbols {
            None => SymbolTable::identity(nc),
            Some(s) if s.len() != nc => {
                return Err(schema(
                    "symbols",
                    format!("expected {nc} entries, got {}", s.len()),
                ))
            }
            Some(s) => {
                SymbolTable::from_mapping(s).map_err(|e| schema("symbols", e.to_string()))?
            }
        };
        if self.agents.is_empty() {
            return Err(schema("agents", "at least one agent is required"));
        }
        let mut agents = Vec::with_capacity(self.agents.len());
        for (i, rec) in self.agents.into_iter().enumerate() {
            let field = format!("agents[{i}].p_true");
            if rec.p_true.len() != na * nc {
                return Err(schema(
                    field,
                    format!("expected {} entries, got {}", na * nc, rec.p_true.len()),
                ));
            }
            let m = Matrix::from_vec(na, nc, rec.p_true)?;
            let relevance = RelevanceModel::new(m).map_err(|e| match e {
                WorldError::ZeroRow(a) => {
                    schema(format!("{field} row {a}"), "row has no positive entry")
                }
                WorldError::EntryOutOfRange {
                    action,
                    concept,
                    value,
                } => schema(
                    format!("{field} row {action}"),
                    format!("entry {concept} = {value} lies outside [0, 1]"),
                ),
                other => schema(field.clone(), other.to_string()),
            })?;
            agents.push(AgentProfile::new(rec.task_id, relevance));
        }
        let world = World {
            num_actions: na,
            num_concepts: nc,
            prior_actions,
            prior_concepts,
            symbol_table,
        };
        Ok((world, agents))
    }
}

/// Serialize a world and its agents as pretty JSON.
pub fn world_to_string(world: &World, agents: &[AgentProfile]) -> String {
    serde_json::to_string_pretty(&WorldRecord::from_parts(world, agents))
        .expect("world record always serializes")
}

pub fn world_from_str(s: &str) -> Result<(World, Vec<AgentProfile>)> {
    let rec: WorldRecord = serde_json::from_str(s)?;
    rec.into_parts()
}

pub fn save_world(path: impl AsRef<Path>, world: &World, agents: &[AgentProfile]) -> Result<()> {
    let mut text = world_to_string(world, agents);
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_world(path: impl AsRef<Path>) -> Result<(World, Vec<AgentProfile>)> {
    world_from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_world_shape_and_range() {
        let (w, agent) = gen_world(100, 100, (0.1, 0.1), &mut Rng::new(1)).unwrap();
        assert_eq!((w.num_actions, w.num_concepts), (100, 100));
        assert_eq!(agent.relevance.matrix().shape(), (100, 100));
        assert!(agent
            .relevance
            .matrix()
            .as_slice()
            .iter()
            .all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(w.prior_actions, Dist::uniform(100));
        assert_eq!(w.prior_concepts, Dist::uniform(100));
    }

    #[test]
    fn gen_world_is_deterministic() {
        let a = gen_world(10, 20, (0.1, 0.1), &mut Rng::new(9)).unwrap();
        let b = gen_world(10, 20, (0.1, 0.1), &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gen_world_rejects_bad_params() {
        assert!(gen_world(0, 3, (1.0, 1.0), &mut Rng::new(0)).is_err());
        assert!(gen_world(3, 3, (0.0, 1.0), &mut Rng::new(0)).is_err());
        assert!(gen_world(3, 3, (1.0, -1.0), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn single_cell_beta_one_one_is_uniform() {
        let mut rng = Rng::new(3);
        let n = 20_000;
        let mean = (0..n)
            .map(|_| {
                gen_world(1, 1, (1.0, 1.0), &mut rng)
                    .unwrap()
                    .1
                    .relevance
                    .get(0, 0)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn rabbit_rows() {
        let (w, agent) = rabbit_fixture();
        assert_eq!(w.num_actions, 3);
        assert_eq!(agent.relevance.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(agent.relevance.row(1), &[1.0, 1.0, 0.0]);
        assert_eq!(agent.relevance.row(2), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn perturb_zero_is_identity() {
        let (_, agent) = gen_world(8, 8, (0.1, 0.1), &mut Rng::new(2)).unwrap();
        let p = perturb_model(&agent.relevance, 0.0, &mut Rng::new(5));
        assert_eq!(p, agent.relevance);
    }

    #[test]
    fn perturb_respects_clamp_bounds() {
        let m = RelevanceModel::from_rows(&[vec![0.95, 0.5]]).unwrap();
        let mut rng = Rng::new(4);
        for _ in 0..1000 {
            let p = perturb_model(&m, 0.1, &mut rng);
            let x = p.get(0, 0);
            assert!((0.85..=1.0).contains(&x), "{x}");
        }
    }

    #[test]
    fn perturb_mean_absolute_change() {
        let m = RelevanceModel::new(Matrix::from_fn(100, 100, |_, _| 0.5)).unwrap();
        let p = perturb_model(&m, 0.1, &mut Rng::new(11));
        let mean = m
            .matrix()
            .as_slice()
            .iter()
            .zip(p.matrix().as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - 0.05).abs() < 0.005, "mean change {mean}");
    }

    #[test]
    fn quantize_examples() {
        let m = RelevanceModel::from_rows(&[vec![0.9500001, 0.04, 0.3]]).unwrap();
        let q = quantize_model(&m, 0.1).unwrap();
        assert_eq!(q.get(0, 0), 1.0);
        assert_eq!(q.get(0, 1), 0.0);
        assert!((q.get(0, 2) - 0.3).abs() < 1e-12);
        assert!(matches!(
            quantize_model(&m, 0.0),
            Err(WorldError::InvalidStep(_))
        ));
        assert!(matches!(
            quantize_model(&m, 1.5),
            Err(WorldError::InvalidStep(_))
        ));
    }

    #[test]
    fn quantize_restores_zero_rows() {
        let m = RelevanceModel::from_rows(&[vec![0.01, 0.04, 0.02]]).unwrap();
        let q = quantize_model(&m, 0.1).unwrap();
        assert_eq!(q.row(0), &[0.0, 0.1, 0.0]);
        assert_eq!(quantize_model(&q, 0.1).unwrap(), q);
    }

    #[test]
    fn quantize_absorbs_small_perturbations() {
        // Entries farther than ε from every rounding boundary (k + 0.5)·step
        // must round to the same grid point after a perturbation of size ≤ ε.
        let eps = 0.04;
        let mut rng = Rng::new(21);
        for trial in 0..50 {
            let (_, agent) = gen_world(10, 10, (0.5, 0.5), &mut Rng::new(trial)).unwrap();
            let m = &agent.relevance;
            let far = m.matrix().as_slice().iter().all(|&x| {
                let frac = (x / 0.1).fract();
                (frac - 0.5).abs() * 0.1 > eps + 1e-12
            });
            let p = perturb_model(m, eps, &mut rng);
            let qm = quantize_model(m, 0.1).unwrap();
            let qp = quantize_model(&p, 0.1).unwrap();
            if far {
                assert_eq!(qm, qp);
            } else {
                for (i, (&x, (&a, &b))) in m
                    .matrix()
                    .as_slice()
                    .iter()
                    .zip(qm.matrix().as_slice().iter().zip(qp.matrix().as_slice()))
                    .enumerate()
                {
                    let frac = (x / 0.1).fract();
                    if (frac - 0.5).abs() * 0.1 > eps + 1e-12 {
                        assert_eq!(a, b, "entry {i} moved across a grid boundary");
                    }
                }
            }
        }
    }

    #[test]
    fn symbol_table_bijection() {
        let t = SymbolTable::from_mapping(vec![2, 0, 1]).unwrap();
        for c in 0..3 {
            assert_eq!(t.from_symbol(t.to_symbol(c)), c);
        }
        assert!(SymbolTable::from_mapping(vec![0, 0]).is_err());
        assert!(SymbolTable::from_mapping(vec![0, 5]).is_err());
    }

    #[test]
    fn world_round_trip() {
        let (w, agent) = rabbit_fixture();
        let text = world_to_string(&w, std::slice::from_ref(&agent));
        let (w2, agents) = world_from_str(&text).unwrap();
        assert_eq!(w, w2);
        assert_eq!(agents, vec![agent]);
    }

    #[test]
    fn world_round_trip_is_bit_exact() {
        let (w, agent) = gen_world(12, 7, (0.1, 0.1), &mut Rng::new(77)).unwrap();
        let (w2, agents) =
            world_from_str(&world_to_string(&w, std::slice::from_ref(&agent))).unwrap();
        assert_eq!(w, w2);
        let a = agent.relevance.matrix().as_slice();
        let b = agents[0].relevance.matrix().as_slice();
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn load_rejects_zero_row_naming_it() {
        let text = r#"{"version":1,"num_actions":2,"num_concepts":2,
            "prior_actions":[0.5,0.5],"prior_concepts":[0.5,0.5],
            "agents":[{"task_id":"t","p_true":[1.0,0.0,0.0,0.0]}]}"#;
        let err = world_from_str(text).unwrap_err();
        match err {
            WorldError::Schema { field, .. } => assert_eq!(field, "agents[0].p_true row 1"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn load_rejects_bad_prior_and_unknown_keys() {
        let text = r#"{"version":1,"num_actions":2,"num_concepts":1,
            "prior_actions":[0.5,0.6],"prior_concepts":[1.0],
            "agents":[{"task_id":"t","p_true":[1.0,1.0]}]}"#;
        assert!(matches!(
            world_from_str(text),
            Err(WorldError::Schema { ref field, .. }) if field == "prior_actions"
        ));
        let text = r#"{"version":1,"num_actions":1,"num_concepts":1,"extra":3,
            "prior_actions":[1.0],"prior_concepts":[1.0],
            "agents":[{"task_id":"t","p_true":[1.0]}]}"#;
        assert!(matches!(world_from_str(text), Err(WorldError::Parse(_))));
    }

    #[test]
    fn load_truncated_file_fails() {
        let (w, agent) = rabbit_fixture();
        let text = world_to_string(&w, &[agent]);
        let cut = &text[..text.len() / 2];
        assert!(matches!(world_from_str(cut), Err(WorldError::Parse(_))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let (w, agent) = rabbit_fixture();
        save_world(&path, &w, std::slice::from_ref(&agent)).unwrap();
        let (w2, agents) = load_world(&path).unwrap();
        assert_eq!((w, vec![agent]), (w2, agents));
    }
}
