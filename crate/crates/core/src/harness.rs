//! Monte Carlo experiments: reliability sweeps, SR-length comparisons and
//! robustness to perturbed agent models.
//!
//! Every random quantity is drawn from a stream derived from the base seed
//! and the role of the draw (world, intended action, perturbation, channel),
//! never from scheduling order. A sweep's CSV output is therefore a pure
//! function of its [`ExperimentConfig`], whether trials run in parallel or not.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{transmit, ChannelSpec};
use crate::dialogue::{
    belief_is_monotone, run_dialogue_from, DialogueConfig, DialogueError, DialogueReport,
    DialogueState, Side,
};
use crate::prob::{Dist, Rng};
use crate::reasoning::{self, run_self_snc, ContextUpdate, ReasoningOutcome, ReasoningParams};
use crate::system1::{extract_or_argmax, s1_codebook, BitString, Codebook, System1Error};
use crate::world::{
    gen_world, load_world, perturb_model, quantize_model, ActionId, AgentProfile, ConceptId, World,
    WorldError,
};

/// Version of the CSV column layout.
pub const REPORT_FORMAT_VERSION: u32 = 1;

const STREAM_WORLD: u64 = 1;
const STREAM_TRIAL: u64 = 2;
const STREAM_PERTURB: u64 = 3;
const STREAM_CHANNEL: u64 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("no results to report")]
    EmptyResults,
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    System1(#[from] System1Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Reliability,
    SrLength,
    Perturbation,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Reliability => "reliability",
            ExperimentKind::SrLength => "srlength",
            ExperimentKind::Perturbation => "perturbation",
        }
    }
}

/// How the `alphas` and `betas` lists are combined into cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Every combination.
    #[default]
    Grid,
    /// Element-wise pairs; both lists must have equal length.
    Diagonal,
}

fn default_lambda() -> f64 {
    0.5
}
fn default_dirichlet() -> [f64; 2] {
    [0.1, 0.1]
}
fn default_stop() -> f64 {
    0.01
}
fn default_threshold() -> f64 {
    0.9
}
fn default_erasure() -> Vec<f64> {
    vec![0.0]
}
fn default_eps() -> Vec<f64> {
    vec![0.0]
}
fn default_step() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

/// Experiment description. Read from TOML; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub num_actions: usize,
    pub num_concepts: usize,
    #[serde(default = "default_dirichlet")]
    pub dirichlet: [f64; 2],
    /// Load the world from a file instead of drawing it.
    #[serde(default)]
    pub world_path: Option<PathBuf>,
    /// Draw a fresh world for every trial.
    #[serde(default)]
    pub resample_world: bool,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    #[serde(default)]
    pub pairing: Pairing,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub depths: Vec<usize>,
    pub rounds: Vec<usize>,
    pub trials: usize,
    #[serde(default = "default_stop")]
    pub stop_confidence: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_erasure")]
    pub erasure_probs: Vec<f64>,
    #[serde(default = "default_eps")]
    pub epsilons: Vec<f64>,
    /// In perturbation experiments, also run the quantized initialization.
    #[serde(default = "default_true")]
    pub quantize: bool,
    #[serde(default = "default_step")]
    pub quantize_step: f64,
    #[serde(default)]
    pub update: ContextUpdate,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The `(α, β)` pairs of the sweep.
    pub fn exponent_pairs(&self) -> Vec<(f64, f64)> {
        match self.pairing {
            Pairing::Grid => self
                .alphas
                .iter()
                .flat_map(|&a| self.betas.iter().map(move |&b| (a, b)))
                .collect(),
            Pairing::Diagonal => self
                .alphas
                .iter()
                .cloned()
                .zip(self.betas.iter().cloned())
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name {:?} is not a plain file stem", self.name));
        }
        if self.num_actions == 0 || self.num_concepts == 0 {
            return bad("num_actions and num_concepts must be positive".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        for (field, empty) in [
            ("alphas", self.alphas.is_empty()),
            ("betas", self.betas.is_empty()),
            ("depths", self.depths.is_empty()),
            ("rounds", self.rounds.is_empty()),
            ("erasure_probs", self.erasure_probs.is_empty()),
            ("epsilons", self.epsilons.is_empty()),
        ] {
            if empty {
                return bad(format!("{field} must not be empty"));
            }
        }
        if self.pairing == Pairing::Diagonal && self.alphas.len() != self.betas.len() {
            return bad("diagonal pairing needs alphas and betas of equal length".into());
        }
        for &(a, b) in &self.exponent_pairs() {
            for &d in &self.depths {
                ReasoningParams::new(a, b, self.lambda, d)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
            }
        }
        if self.rounds.contains(&0) {
            return bad("rounds must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.stop_confidence) {
            return bad("stop_confidence must lie in [0, 1)".into());
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold must lie in (0, 1]".into());
        }
        if let Some(p) = self.erasure_probs.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return bad(format!("erasure probability {p} outside [0, 1)"));
        }
        if let Some(e) = self
            .epsilons
            .iter()
            .find(|e| !(**e >= 0.0 && e.is_finite()))
        {
            return bad(format!("epsilon {e} must be finite and nonnegative"));
        }
        if !(self.quantize_step > 0.0 && self.quantize_step <= 1.0) {
            return bad("quantize_step must lie in (0, 1]".into());
        }
        if !(self.dirichlet[0] > 0.0 && self.dirichlet[1] > 0.0) {
            return bad("dirichlet parameters must be positive".into());
        }
        Ok(())
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &[
    "fig4",
    "fig5",
    "fig6",
    "fig7",
    "fig4-small",
    "fig5-small",
    "fig6-small",
    "fig7-small",
];

/// Shipped configurations. The `-small` variants use 30×30 worlds and fewer
/// trials so they finish in seconds.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (base, small) = match name.strip_suffix("-small") {
        Some(b) => (b, true),
        None => (name, false),
    };
    let n = if small { 30 } else { 100 };
    let trials = if small { 100 } else { 500 };
    let mut cfg = ExperimentConfig {
        name: name.to_string(),
        experiment: ExperimentKind::Reliability,
        seed: 0,
        num_actions: n,
        num_concepts: n,
        dirichlet: default_dirichlet(),
        world_path: None,
        resample_world: false,
        alphas: vec![1.1, 1.5, 2.0],
        betas: vec![1.1, 1.5, 2.0],
        pairing: Pairing::Grid,
        lambda: 0.5,
        depths: vec![20, 100, 200],
        rounds: vec![1],
        trials,
        stop_confidence: 0.01,
        threshold: 0.9,
        erasure_probs: vec![0.0],
        epsilons: vec![0.0],
        quantize: true,
        quantize_step: 0.1,
        update: ContextUpdate::Marginal,
        parallel: true,
    };
    match base {
        "fig4" => {}
        "fig5" => {
            cfg.pairing = Pairing::Diagonal;
            cfg.depths = vec![10, 20, 200];
            cfg.rounds = vec![1, 2, 3, 4, 5, 6];
        }
        "fig6" => {
            cfg.experiment = ExperimentKind::SrLength;
            cfg.alphas = vec![1.5, 2.0];
            cfg.betas = vec![1.5, 2.0];
            cfg.pairing = Pairing::Diagonal;
            cfg.depths = vec![10, 20, 100];
            cfg.rounds = vec![20];
            cfg.erasure_probs = vec![0.0, 0.1, 0.2];
        }
        "fig7" => {
            cfg.experiment = ExperimentKind::Perturbation;
            cfg.alphas = vec![1.1];
            cfg.betas = vec![1.1];
            cfg.depths = vec![200];
            cfg.epsilons = vec![0.0, 0.05, 0.1, 0.15];
            if small {
                cfg.trials = 200;
            }
        }
        _ => return Err(HarnessError::UnknownPreset(name.to_string())),
    }
    Ok(cfg)
}

/// Either a preset name or a path to a TOML config.
pub fn resolve_config(spec: &str) -> Result<ExperimentConfig> {
    if PRESETS.contains(&spec) {
        preset(spec)
    } else if Path::new(spec).exists() {
        ExperimentConfig::load(spec)
    } else {
        Err(HarnessError::UnknownPreset(spec.to_string()))
    }
}

/// One row of an experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub experiment: String,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub depth: usize,
    pub rounds: usize,
    pub erasure_prob: f64,
    pub epsilon: f64,
    /// `shared` when both agents hold the true models, else `raw` or `quantized`.
    pub init: String,
    pub trials: usize,
    pub successes: usize,
    pub reliability: f64,
    pub mean_rounds_used: f64,
    pub mean_s1_bits: f64,
    pub mean_s2_bits: f64,
    pub mean_s2_expected_bits: f64,
    pub mean_s1_channel_uses: f64,
    pub mean_s2_channel_uses: f64,
    pub mean_g_final: f64,
    pub monotonicity_violations: usize,
    pub bound_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct TrialRecord {
    success: bool,
    rounds_used: usize,
    s1_bits: usize,
    s2_bits: usize,
    s2_expected_bits: f64,
    g_final: f64,
    monotone: bool,
    within_bounds: bool,
    /// Channel uses for (System 1, System 2) per erasure probability.
    channel_uses: Vec<(u64, u64)>,
}

/// Cell coordinates other than the erasure probability, which is reported
/// from the same trials.
#[derive(Debug, Clone, Copy)]
struct Cell {
    alpha: f64,
    beta: f64,
    depth: usize,
    rounds: usize,
    epsilon: f64,
    epsilon_index: usize,
    init: InitMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitMode {
    Shared,
    Raw,
    Quantized,
}

impl InitMode {
    fn as_str(&self) -> &'static str {
        match self {
            InitMode::Shared => "shared",
            InitMode::Raw => "raw",
            InitMode::Quantized => "quantized",
        }
    }
}

/// World and System 1 codebook used by a trial.
struct Setting {
    world: World,
    agent: AgentProfile,
    s1: Codebook,
}

impl Setting {
    fn new(world: World, agent: AgentProfile) -> Result<Self> {
        let s1 = s1_codebook(&agent, &world.prior_actions)?;
        Ok(Self { world, agent, s1 })
    }
}

fn experiment_world(cfg: &ExperimentConfig, trial: Option<usize>) -> Result<Setting> {
    if let (Some(path), None) = (&cfg.world_path, trial) {
        let (world, agents) = load_world(path)?;
        let agent = agents
            .into_iter()
            .next()
            .ok_or_else(|| HarnessError::Config("world file has no agent".into()))?;
        return Setting::new(world, agent);
    }
    let mut path = vec![STREAM_WORLD];
    if let Some(t) = trial {
        path.push(t as u64);
    }
    let (world, agent) = gen_world(
        cfg.num_actions,
        cfg.num_concepts,
        (cfg.dirichlet[0], cfg.dirichlet[1]),
        &mut Rng::derive(cfg.seed, &path),
    )?;
    Setting::new(world, agent)
}

/// Self-SNC outcomes of a symmetric dialogue keyed by the concepts sent so
/// far. With both agents holding the same models the round state is a
/// function of that prefix, so trials sharing a prefix share the work.
struct PrefixMemo<'a> {
    agent: &'a AgentProfile,
    params: &'a ReasoningParams,
    map: Mutex<HashMap<Vec<ConceptId>, Arc<ReasoningOutcome>>>,
}

impl<'a> PrefixMemo<'a> {
    fn new(agent: &'a AgentProfile, params: &'a ReasoningParams) -> Self {
        Self {
            agent,
            params,
            map: Mutex::new(HashMap::new()),
        }
    }

    fn solve(&self, st: &DialogueState) -> reasoning::Result<Arc<ReasoningOutcome>> {
        let key = st.sent();
        if let Some(hit) = self.map.lock().expect("memo lock").get(&key) {
            return Ok(hit.clone());
        }
        let prior_c = Dist::from_raw(&st.prior_c)?;
        let out = Arc::new(run_self_snc(
            self.agent,
            self.agent,
            &st.prior_a,
            &prior_c,
            self.params,
        )?);
        self.map.lock().expect("memo lock").insert(key, out.clone());
        Ok(out)
    }
}

fn sample_action(cfg: &ExperimentConfig, world: &World, trial: usize) -> ActionId {
    Rng::derive(cfg.seed, &[STREAM_TRIAL, trial as u64]).sample(&world.prior_actions)
}

fn s1_bits(setting: &Setting, a: ActionId, threshold: f64) -> Result<usize> {
    let (concepts, _) = extract_or_argmax(&setting.agent, a, threshold)?;
    concepts
        .iter()
        .map(|&c| {
            setting
                .s1
                .length(setting.world.symbol_table.to_symbol(c))
                .ok_or(HarnessError::System1(System1Error::UnknownSymbol(c)))
        })
        .sum()
}

fn finish_trial(
    cfg: &ExperimentConfig,
    trial: usize,
    report: &DialogueReport,
    s1: usize,
    g_final: f64,
    check_monotone: bool,
) -> TrialRecord {
    let s2 = report.payload();
    let s1_payload = BitString::from_bits(vec![false; s1]);
    let channel_uses = cfg
        .erasure_probs
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let spec = ChannelSpec::new(p).expect("validated");
            let mut rng = Rng::derive(cfg.seed, &[STREAM_CHANNEL, trial as u64, j as u64]);
            let (_, l1) = transmit(&s1_payload, &spec, &mut rng);
            let (_, l2) = transmit(&s2, &spec, &mut rng);
            (l1.total_channel_uses, l2.total_channel_uses)
        })
        .collect();
    TrialRecord {
        success: report.success,
        rounds_used: report.rounds.len(),
        s1_bits: s1,
        s2_bits: report.realized_bits(),
        s2_expected_bits: report.expected_bits(),
        g_final,
        monotone: !check_monotone || belief_is_monotone(report),
        within_bounds: report
            .rounds
            .iter()
            .all(|r| r.bounds.contains(r.expected_bits, 1e-9)),
        channel_uses,
    }
}

fn dialogue_config(cfg: &ExperimentConfig, cell: &Cell) -> DialogueConfig {
    let reasoning = ReasoningParams::new(cell.alpha, cell.beta, cfg.lambda, cell.depth)
        .expect("validated")
        .with_update(cfg.update)
        .with_trace(false);
    DialogueConfig::new(cell.rounds, reasoning)
        .expect("validated")
        .with_stop_confidence(cfg.stop_confidence)
}

fn is_unit(cell: &Cell) -> bool {
    cell.alpha == 1.0 && cell.beta == 1.0
}

fn map_trials<F>(cfg: &ExperimentConfig, f: F) -> Result<Vec<TrialRecord>>
where
    F: Fn(usize) -> Result<TrialRecord> + Sync + Send,
{
    if cfg.parallel {
        (0..cfg.trials).into_par_iter().map(f).collect()
    } else {
        (0..cfg.trials).map(f).collect()
    }
}

fn shared_cell(
    cfg: &ExperimentConfig,
    fixed: Option<&Setting>,
    cell: &Cell,
) -> Result<Vec<TrialRecord>> {
    let dcfg = dialogue_config(cfg, cell);
    let memo = fixed.map(|s| PrefixMemo::new(&s.agent, &dcfg.reasoning));
    map_trials(cfg, |t| {
        let owned;
        let setting = match fixed {
            Some(s) => s,
            None => {
                owned = experiment_world(cfg, Some(t))?;
                &owned
            }
        };
        let a_star = sample_action(cfg, &setting.world, t);
        let mut last_g = f64::NAN;
        let local = PrefixMemo::new(&setting.agent, &dcfg.reasoning);
        let memo = memo.as_ref().unwrap_or(&local);
        let mut solve = |_: Side, st: &DialogueState| {
            let out = memo.solve(st)?;
            last_g = out.g_final;
            Ok(out)
        };
        let state = DialogueState::from_world(&setting.world);
        let report = run_dialogue_from(a_star, &dcfg, state.clone(), state, true, &mut solve)?;
        let s1 = s1_bits(setting, a_star, cfg.threshold)?;
        Ok(finish_trial(cfg, t, &report, s1, last_g, !is_unit(cell)))
    })
}

fn perturbed_cell(
    cfg: &ExperimentConfig,
    fixed: Option<&Setting>,
    cell: &Cell,
) -> Result<Vec<TrialRecord>> {
    let dcfg = dialogue_config(cfg, cell);
    map_trials(cfg, |t| {
        let owned;
        let setting = match fixed {
            Some(s) => s,
            None => {
                owned = experiment_world(cfg, Some(t))?;
                &owned
            }
        };
        let a_star = sample_action(cfg, &setting.world, t);
        // Perturbations depend on (ε, trial) only, so raw and quantized
        // modes see the same draws.
        let mut rng = Rng::derive(
            cfg.seed,
            &[STREAM_PERTURB, cell.epsilon_index as u64, t as u64],
        );
        let own = &setting.agent;
        let spk_seen_by_lis =
            own.with_relevance(perturb_model(&own.relevance, cell.epsilon, &mut rng));
        let lis_seen_by_spk =
            own.with_relevance(perturb_model(&own.relevance, cell.epsilon, &mut rng));
        let (own, spk_copy, lis_copy) = match cell.init {
            InitMode::Quantized => {
                let q = |a: &AgentProfile| -> Result<AgentProfile> {
                    Ok(a.with_relevance(quantize_model(&a.relevance, cfg.quantize_step)?))
                };
                (q(own)?, q(&spk_seen_by_lis)?, q(&lis_seen_by_spk)?)
            }
            _ => (own.clone(), spk_seen_by_lis, lis_seen_by_spk),
        };
        let mut last_g = f64::NAN;
        let mut solve = |side: Side, st: &DialogueState| {
            let prior_c = Dist::from_raw(&st.prior_c)?;
            let (s_model, l_model) = match side {
                Side::Speaker => (&own, &lis_copy),
                Side::Listener => (&spk_copy, &own),
            };
            let out = run_self_snc(s_model, l_model, &st.prior_a, &prior_c, &dcfg.reasoning)?;
            if side == Side::Speaker {
                last_g = out.g_final;
            }
            Ok(Arc::new(out))
        };
        let state = DialogueState::from_world(&setting.world);
        let report = run_dialogue_from(a_star, &dcfg, state.clone(), state, false, &mut solve)?;
        let s1 = s1_bits(setting, a_star, cfg.threshold)?;
        // Monotonicity is not guaranteed once the agents disagree, so it is
        // only counted, never required.
        Ok(finish_trial(cfg, t, &report, s1, last_g, !is_unit(cell)))
    })
}

fn mean<I: Iterator<Item = f64>>(it: I, n: usize) -> f64 {
    it.sum::<f64>() / n as f64
}

fn aggregate(cfg: &ExperimentConfig, cell: &Cell, records: &[TrialRecord]) -> Vec<CellResult> {
    let n = records.len();
    let successes = records.iter().filter(|r| r.success).count();
    let probs: Vec<(usize, f64)> = match cfg.experiment {
        ExperimentKind::SrLength => cfg.erasure_probs.iter().cloned().enumerate().collect(),
        _ => vec![(0, cfg.erasure_probs[0])],
    };
    probs
        .into_iter()
        .map(|(j, p)| CellResult {
            experiment: cfg.experiment.as_str().to_string(),
            alpha: cell.alpha,
            beta: cell.beta,
            lambda: cfg.lambda,
            depth: cell.depth,
            rounds: cell.rounds,
            erasure_prob: p,
            epsilon: cell.epsilon,
            init: cell.init.as_str().to_string(),
            trials: n,
            successes,
            reliability: successes as f64 / n as f64,
            mean_rounds_used: mean(records.iter().map(|r| r.rounds_used as f64), n),
            mean_s1_bits: mean(records.iter().map(|r| r.s1_bits as f64), n),
            mean_s2_bits: mean(records.iter().map(|r| r.s2_bits as f64), n),
            mean_s2_expected_bits: mean(records.iter().map(|r| r.s2_expected_bits), n),
            mean_s1_channel_uses: mean(records.iter().map(|r| r.channel_uses[j].0 as f64), n),
            mean_s2_channel_uses: mean(records.iter().map(|r| r.channel_uses[j].1 as f64), n),
            mean_g_final: mean(records.iter().map(|r| r.g_final), n),
            monotonicity_violations: records.iter().filter(|r| !r.monotone).count(),
            bound_violations: records.iter().filter(|r| !r.within_bounds).count(),
        })
        .collect()
}

fn cells(cfg: &ExperimentConfig, modes: &[InitMode], epsilons: &[f64]) -> Vec<Cell> {
    let mut out = Vec::new();
    for (alpha, beta) in cfg.exponent_pairs() {
        for &depth in &cfg.depths {
            for &rounds in &cfg.rounds {
                for (epsilon_index, &epsilon) in epsilons.iter().enumerate() {
                    for &init in modes {
                        out.push(Cell {
                            alpha,
                            beta,
                            depth,
                            rounds,
                            epsilon,
                            epsilon_index,
                            init,
                        });
                    }
                }
            }
        }
    }
    out
}

fn run_cells(cfg: &ExperimentConfig, cells: &[Cell]) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let fixed = if cfg.resample_world {
        None
    } else {
        Some(experiment_world(cfg, None)?)
    };
    let mut out = Vec::new();
    for cell in cells {
        let records = match cell.init {
            InitMode::Shared => shared_cell(cfg, fixed.as_ref(), cell)?,
            _ => perturbed_cell(cfg, fixed.as_ref(), cell)?,
        };
        out.extend(aggregate(cfg, cell, &records));
    }
    Ok(out)
}

/// γ over the (α, β) × depth × rounds grid with shared models.
pub fn run_reliability_sweep(cfg: &ExperimentConfig) -> Result<Vec<CellResult>> {
    run_cells(cfg, &cells(cfg, &[InitMode::Shared], &[0.0]))
}

/// System 1 and System 2 SR lengths, plus channel uses for every erasure
/// probability in the config. One row per cell and erasure probability.
pub fn run_srlength_experiment(cfg: &ExperimentConfig) -> Result<Vec<CellResult>> {
    let cfg = ExperimentConfig {
        experiment: ExperimentKind::SrLength,
        ..cfg.clone()
    };
    run_cells(&cfg, &cells(&cfg, &[InitMode::Shared], &[0.0]))
}

/// γ when each agent initializes self-SNC with a perturbed copy of the
/// other's model, with and without quantization.
pub fn run_perturbation_experiment(cfg: &ExperimentConfig) -> Result<Vec<CellResult>> {
    let modes: &[InitMode] = if cfg.quantize {
        &[InitMode::Raw, InitMode::Quantized]
    } else {
        &[InitMode::Raw]
    };
    run_cells(cfg, &cells(cfg, modes, &cfg.epsilons))
}

/// Dispatch on `cfg.experiment`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<CellResult>> {
    match cfg.experiment {
        ExperimentKind::Reliability => run_reliability_sweep(cfg),
        ExperimentKind::SrLength => run_srlength_experiment(cfg),
        ExperimentKind::Perturbation => run_perturbation_experiment(cfg),
    }
}

/// CSV text of a report: a header row, then one row per cell.
pub fn to_csv(results: &[CellResult]) -> Result<String> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub experiment: String,
    pub seed: u64,
    pub crate_version: String,
    pub report_format_version: u32,
    pub csv_file: String,
    pub rows: usize,
    pub wall_clock_seconds: f64,
    pub config: ExperimentConfig,
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

/// Write `<dir>/<name>.csv` and `<dir>/<name>.json`. Nothing is written for
/// an empty result set.
pub fn emit_report(
    results: &[CellResult],
    cfg: &ExperimentConfig,
    wall_clock_seconds: f64,
    dir: impl AsRef<Path>,
) -> Result<ReportFiles> {
    let text = to_csv(results)?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{}.csv", cfg.name));
    let manifest_path = dir.join(format!("{}.json", cfg.name));
    fs::write(&csv_path, text)?;
    let manifest = Manifest {
        name: cfg.name.clone(),
        experiment: cfg.experiment.as_str().to_string(),
        seed: cfg.seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        report_format_version: REPORT_FORMAT_VERSION,
        csv_file: format!("{}.csv", cfg.name),
        rows: results.len(),
        wall_clock_seconds,
        config: cfg.clone(),
    };
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(ReportFiles {
        csv: csv_path,
        manifest: manifest_path,
    })
}

/// Run an experiment and write its report.
pub fn run_and_emit(
    cfg: &ExperimentConfig,
    dir: impl AsRef<Path>,
) -> Result<(Vec<CellResult>, ReportFiles)> {
    let start = Instant::now();
    let results = run_experiment(cfg)?;
    let files = emit_report(&results, cfg, start.elapsed().as_secs_f64(), dir)?;
    Ok((results, files))
}
