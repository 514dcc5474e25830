//! Python bindings, importable as `snc`.
//!
//! Worlds, reasoning parameters, reasoning outcomes and dialogue reports are
//! exposed as classes; matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use snc_core::dialogue::{self, DialogueConfig};
use snc_core::harness::{self, CellResult};
use snc_core::reasoning::{self, ContextUpdate};
use snc_core::system1::{s1_bitlength_bounds, s1_codebook, s1_model_expected_length};
use snc_core::world::{self, AgentProfile};
use snc_core::{Matrix, Rng};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.to_rows()
}

fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| snc_core::prob::argmax(m.row(r)).unwrap_or(0))
        .collect()
}

fn parse_update(s: &str) -> PyResult<ContextUpdate> {
    match s {
        "marginal" => Ok(ContextUpdate::Marginal),
        "joint" => Ok(ContextUpdate::Joint),
        other => Err(value_err(format!(
            "update must be 'marginal' or 'joint', got {other:?}"
        ))),
    }
}

/// A world with uniform or given priors and one relevance model.
#[pyclass(module = "snc", frozen, skip_from_py_object)]
#[derive(Clone)]
struct World {
    world: world::World,
    agent: AgentProfile,
}

#[pymethods]
impl World {
    /// Random world with independent Beta(a, b) relevance entries.
    #[staticmethod]
    #[pyo3(signature = (actions, concepts, seed, dirichlet = (0.1, 0.1)))]
    fn random(actions: usize, concepts: usize, seed: u64, dirichlet: (f64, f64)) -> PyResult<Self> {
        let (world, agent) = world::gen_world(actions, concepts, dirichlet, &mut Rng::new(seed))
            .map_err(value_err)?;
        Ok(Self { world, agent })
    }

    /// The three-action rabbit referential game.
    #[staticmethod]
    fn rabbit() -> Self {
        let (world, agent) = world::rabbit_fixture();
        Self { world, agent }
    }

    /// Relevance rows `p(X_c = TRUE | a)` with uniform priors.
    #[staticmethod]
    fn from_relevance(relevance: Vec<Vec<f64>>) -> PyResult<Self> {
        let m = world::RelevanceModel::from_rows(&relevance).map_err(value_err)?;
        let w = world::World::uniform(m.num_actions(), m.num_concepts());
        Ok(Self {
            world: w,
            agent: AgentProfile::new("t0", m),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (world, mut agents) =
            world::load_world(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self {
            world,
            agent: agents.remove(0),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        world::save_world(path, &self.world, std::slice::from_ref(&self.agent))
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn to_json(&self) -> String {
        world::world_to_string(&self.world, std::slice::from_ref(&self.agent))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (world, mut agents) = world::world_from_str(text).map_err(value_err)?;
        Ok(Self {
            world,
            agent: agents.remove(0),
        })
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.world.num_actions
    }

    #[getter]
    fn num_concepts(&self) -> usize {
        self.world.num_concepts
    }

    #[getter]
    fn relevance(&self) -> Vec<Vec<f64>> {
        rows(self.agent.relevance.matrix())
    }

    /// Copy with `U[-epsilon, epsilon]` noise added to the relevance model,
    /// optionally rounded to multiples of `quantize`.
    #[pyo3(signature = (epsilon, seed, quantize = None))]
    fn perturbed(&self, epsilon: f64, seed: u64, quantize: Option<f64>) -> PyResult<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(value_err(format!(
                "epsilon must be nonnegative, got {epsilon}"
            )));
        }
        let mut m = world::perturb_model(&self.agent.relevance, epsilon, &mut Rng::new(seed));
        if let Some(step) = quantize {
            m = world::quantize_model(&m, step).map_err(value_err)?;
        }
        Ok(Self {
            world: self.world.clone(),
            agent: self.agent.with_relevance(m),
        })
    }

    /// `(lower, upper, huffman)` expected System 1 SR lengths in bits.
    fn s1_bits(&self) -> PyResult<(f64, f64, f64)> {
        let prior = &self.world.prior_actions;
        let b = s1_bitlength_bounds(&self.agent, prior).map_err(value_err)?;
        let cb = s1_codebook(&self.agent, prior).map_err(value_err)?;
        let l = s1_model_expected_length(&self.agent, prior, &cb).map_err(value_err)?;
        Ok((b.lower, b.upper, l))
    }

    fn __repr__(&self) -> String {
        format!(
            "World(actions={}, concepts={})",
            self.world.num_actions, self.world.num_concepts
        )
    }
}

#[pyclass(module = "snc", frozen, skip_from_py_object)]
#[derive(Clone)]
struct ReasoningParams {
    inner: reasoning::ReasoningParams,
}

#[pymethods]
impl ReasoningParams {
    #[new]
    #[pyo3(signature = (alpha = 1.5, beta = 1.5, lam = 0.5, depth = 200, update = "marginal", tolerance = None))]
    fn new(
        alpha: f64,
        beta: f64,
        lam: f64,
        depth: usize,
        update: &str,
        tolerance: Option<f64>,
    ) -> PyResult<Self> {
        let mut inner = reasoning::ReasoningParams::new(alpha, beta, lam, depth)
            .map_err(value_err)?
            .with_update(parse_update(update)?);
        if let Some(t) = tolerance {
            inner = inner.with_tolerance(t);
        }
        Ok(Self { inner })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.max_depth
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "ReasoningParams(alpha={}, beta={}, lam={}, depth={}, update={:?})",
            p.alpha, p.beta, p.lambda, p.max_depth, p.update
        )
    }
}

#[pyclass(module = "snc", frozen)]
struct ReasoningOutcome {
    inner: reasoning::ReasoningOutcome,
}

#[pymethods]
impl ReasoningOutcome {
    /// Rational A2C, one row per action.
    #[getter]
    fn ra2c(&self) -> Vec<Vec<f64>> {
        rows(self.inner.ra2c.matrix())
    }

    /// Rational C2A, one row per concept.
    #[getter]
    fn rc2a(&self) -> Vec<Vec<f64>> {
        rows(self.inner.rc2a.matrix())
    }

    #[getter]
    fn mutual(&self) -> Vec<Vec<f64>> {
        rows(self.inner.mutual.matrix())
    }

    #[getter]
    fn g_trace(&self) -> Vec<f64> {
        self.inner.g_trace.clone()
    }

    #[getter]
    fn g_final(&self) -> f64 {
        self.inner.g_final
    }

    #[getter]
    fn depth_used(&self) -> usize {
        self.inner.depth_used
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    fn ra2c_argmax(&self) -> Vec<usize> {
        argmax_rows(self.inner.ra2c.matrix())
    }

    fn rc2a_argmax(&self) -> Vec<usize> {
        argmax_rows(self.inner.rc2a.matrix())
    }
}

#[pyclass(module = "snc", frozen)]
struct DialogueReport {
    inner: dialogue::DialogueReport,
}

#[pymethods]
impl DialogueReport {
    #[getter]
    fn intended(&self) -> usize {
        self.inner.intended
    }

    #[getter]
    fn sent_concepts(&self) -> Vec<usize> {
        self.inner.sent_concepts.clone()
    }

    #[getter]
    fn listener_guess(&self) -> usize {
        self.inner.listener_guess
    }

    #[getter]
    fn success(&self) -> bool {
        self.inner.success
    }

    #[getter]
    fn posterior_trace(&self) -> Vec<f64> {
        self.inner.posterior_trace.clone()
    }

    #[getter]
    fn realized_bits(&self) -> usize {
        self.inner.realized_bits()
    }

    #[getter]
    fn expected_bits(&self) -> f64 {
        self.inner.expected_bits()
    }

    /// `(lower, upper)` on the expected System 2 length.
    #[getter]
    fn bit_bounds(&self) -> (f64, f64) {
        let b = self.inner.bounds();
        (b.lower, b.upper)
    }

    fn __repr__(&self) -> String {
        format!(
            "DialogueReport(intended={}, sent={:?}, guess={}, success={})",
            self.inner.intended,
            self.inner.sent_concepts,
            self.inner.listener_guess,
            self.inner.success
        )
    }
}

/// Self-SNC reasoning where both agents hold the world's relevance model.
#[pyfunction]
#[pyo3(signature = (world, params = None, record_trace = true))]
fn run_reasoning(
    world: &World,
    params: Option<&ReasoningParams>,
    record_trace: bool,
) -> PyResult<ReasoningOutcome> {
    let p = match params {
        Some(p) => p.inner.clone(),
        None => ReasoningParams::new(1.5, 1.5, 0.5, 200, "marginal", None)?.inner,
    }
    .with_trace(record_trace);
    let w = &world.world;
    let inner = reasoning::run_self_snc(
        &world.agent,
        &world.agent,
        &w.prior_actions,
        &w.prior_concepts,
        &p,
    )
    .map_err(value_err)?;
    Ok(ReasoningOutcome { inner })
}

/// One dialogue about `action`, optionally against a listener that holds a
/// different copy of the relevance model.
#[pyfunction]
#[pyo3(signature = (world, action, params = None, rounds = 1, stop_confidence = 0.01, listener = None))]
fn run_dialogue(
    world: &World,
    action: usize,
    params: Option<&ReasoningParams>,
    rounds: usize,
    stop_confidence: f64,
    listener: Option<&World>,
) -> PyResult<DialogueReport> {
    let p = match params {
        Some(p) => p.inner.clone(),
        None => ReasoningParams::new(1.5, 1.5, 0.5, 200, "marginal", None)?.inner,
    };
    let cfg = DialogueConfig::new(rounds, p)
        .map_err(value_err)?
        .with_stop_confidence(stop_confidence);
    let inner = match listener {
        None => dialogue::run_dialogue(&world.agent, &world.agent, &world.world, action, &cfg),
        Some(other) => {
            if other.world.num_actions != world.world.num_actions
                || other.world.num_concepts != world.world.num_concepts
            {
                return Err(value_err("listener world has a different shape"));
            }
            let own = &world.agent;
            let theirs = &other.agent;
            let speaker_view = dialogue::View {
                speaker_model: own,
                listener_model: own,
            };
            let listener_view = dialogue::View {
                speaker_model: theirs,
                listener_model: theirs,
            };
            dialogue::run_dialogue_views(speaker_view, listener_view, &world.world, action, &cfg)
        }
    }
    .map_err(value_err)?;
    Ok(DialogueReport { inner })
}

fn cell_dict<'py>(py: Python<'py>, r: &CellResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("experiment", &r.experiment)?;
    d.set_item("alpha", r.alpha)?;
    d.set_item("beta", r.beta)?;
    d.set_item("lambda", r.lambda)?;
    d.set_item("depth", r.depth)?;
    d.set_item("rounds", r.rounds)?;
    d.set_item("erasure_prob", r.erasure_prob)?;
    d.set_item("epsilon", r.epsilon)?;
    d.set_item("init", &r.init)?;
    d.set_item("trials", r.trials)?;
    d.set_item("successes", r.successes)?;
    d.set_item("reliability", r.reliability)?;
    d.set_item("mean_rounds_used", r.mean_rounds_used)?;
    d.set_item("mean_s1_bits", r.mean_s1_bits)?;
    d.set_item("mean_s2_bits", r.mean_s2_bits)?;
    d.set_item("mean_s2_expected_bits", r.mean_s2_expected_bits)?;
    d.set_item("mean_s1_channel_uses", r.mean_s1_channel_uses)?;
    d.set_item("mean_s2_channel_uses", r.mean_s2_channel_uses)?;
    d.set_item("mean_g_final", r.mean_g_final)?;
    d.set_item("monotonicity_violations", r.monotonicity_violations)?;
    d.set_item("bound_violations", r.bound_violations)?;
    Ok(d)
}

/// Run a preset or TOML config. Rows come back as dicts; when `out` is given
/// the CSV and manifest are also written there.
#[pyfunction]
#[pyo3(signature = (config, seed, trials = None, update = None, out = None))]
fn run_sweep<'py>(
    py: Python<'py>,
    config: &str,
    seed: u64,
    trials: Option<usize>,
    update: Option<&str>,
    out: Option<&str>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg = harness::resolve_config(config)
        .map_err(value_err)?
        .with_seed(seed);
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(u) = update {
        cfg.update = parse_update(u)?;
    }
    cfg.validate().map_err(value_err)?;
    let results = py
        .detach(|| match out {
            Some(dir) => harness::run_and_emit(&cfg, dir).map(|(r, _)| r),
            None => harness::run_experiment(&cfg),
        })
        .map_err(value_err)?;
    results.iter().map(|r| cell_dict(py, r)).collect()
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    harness::PRESETS.to_vec()
}

#[pymodule]
fn snc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<World>()?;
    m.add_class::<ReasoningParams>()?;
    m.add_class::<ReasoningOutcome>()?;
    m.add_class::<DialogueReport>()?;
    m.add_function(wrap_pyfunction!(run_reasoning, m)?)?;
    m.add_function(wrap_pyfunction!(run_dialogue, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    Ok(())
}
