//! `snc` command line: generate worlds, run contextual reasoning and
//! dialogues on them, perturb models, and run experiment sweeps.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use snc_core::dialogue::{run_dialogue, DialogueConfig};
use snc_core::harness::{resolve_config, run_and_emit};
use snc_core::reasoning::{run_self_snc, ContextUpdate, ReasoningParams};
use snc_core::world::{
    gen_world, load_world, perturb_model, quantize_model, rabbit_fixture, save_world,
    world_to_string, AgentProfile, World,
};
use snc_core::Rng;

#[derive(Parser)]
#[command(
    name = "snc",
    version,
    about = "Semantics-native communication experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random world and write it as JSON.
    GenWorld {
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        concepts: usize,
        #[arg(long)]
        seed: u64,
        /// Beta parameters of each relevance entry, as `a,b`.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.1, 0.1])]
        dirichlet: Vec<f64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run self-SNC reasoning and print the outcome as JSON.
    RunReasoning {
        #[command(flatten)]
        world: WorldArg,
        #[command(flatten)]
        reasoning: ReasoningArgs,
        /// Stop once G changes by less than this between iterations.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Include the full contexts and conditional tables.
        #[arg(long)]
        full: bool,
    },
    /// Run one dialogue about an intended action and print the report.
    RunDialogue {
        #[command(flatten)]
        world: WorldArg,
        #[command(flatten)]
        reasoning: ReasoningArgs,
        #[arg(long)]
        action: usize,
        /// Maximum number of rounds.
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        /// Stop once the listener's belief reaches `1 - delta`.
        #[arg(long, default_value_t = 0.01)]
        stop_confidence: f64,
    },
    /// Add uniform noise to a world's relevance models.
    Perturb {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        seed: u64,
        /// Round the perturbed entries to this step.
        #[arg(long)]
        quantize: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment preset or TOML config and write `<name>.csv` and
    /// `<name>.json`.
    Sweep {
        /// Preset name (fig4, fig5, fig6, fig7 and their -small variants) or
        /// a path to a TOML config.
        config: String,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Override the number of trials per cell.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum)]
        update: Option<Update>,
    },
}

#[derive(Args)]
struct WorldArg {
    /// World JSON file, or `rabbit` for the built-in three-action game.
    #[arg(long, default_value = "rabbit")]
    world: String,
}

#[derive(Args)]
struct ReasoningArgs {
    #[arg(long, default_value_t = 1.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.5)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Number of reasoning iterations.
    #[arg(long, default_value_t = 200)]
    depth: usize,
    #[arg(long, value_enum, default_value_t = Update::Marginal)]
    update: Update,
}

#[derive(Clone, Copy, ValueEnum)]
enum Update {
    Joint,
    Marginal,
}

impl From<Update> for ContextUpdate {
    fn from(u: Update) -> Self {
        match u {
            Update::Joint => ContextUpdate::Joint,
            Update::Marginal => ContextUpdate::Marginal,
        }
    }
}

impl ReasoningArgs {
    fn params(&self) -> Result<ReasoningParams> {
        Ok(
            ReasoningParams::new(self.alpha, self.beta, self.lambda, self.depth)?
                .with_update(self.update.into()),
        )
    }
}

fn load(spec: &str) -> Result<(World, AgentProfile)> {
    if spec == "rabbit" {
        return Ok(rabbit_fixture());
    }
    let (world, mut agents) = load_world(spec).with_context(|| format!("loading world {spec}"))?;
    Ok((world, agents.remove(0)))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n"))
            .with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn argmax_rows(rows: usize, row: impl Fn(usize) -> Vec<f64>) -> Vec<usize> {
    (0..rows)
        .map(|r| snc_core::prob::argmax(&row(r)).unwrap_or(0))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorld {
            actions,
            concepts,
            seed,
            dirichlet,
            out,
        } => {
            let (world, agent) = gen_world(
                actions,
                concepts,
                (dirichlet[0], dirichlet[1]),
                &mut Rng::new(seed),
            )?;
            match out {
                Some(path) => save_world(&path, &world, &[agent])?,
                None => println!("{}", world_to_string(&world, &[agent])),
            }
        }
        Command::RunReasoning {
            world,
            reasoning,
            tolerance,
            full,
        } => {
            let (w, agent) = load(&world.world)?;
            let mut p = reasoning.params()?.with_trace(true);
            if let Some(t) = tolerance {
                p = p.with_tolerance(t);
            }
            let out = run_self_snc(&agent, &agent, &w.prior_actions, &w.prior_concepts, &p)?;
            let value = if full {
                serde_json::to_value(&out)?
            } else {
                json!({
                    "depth_used": out.depth_used,
                    "converged": out.converged,
                    "g_final": out.g_final,
                    "g_trace": out.g_trace,
                    "ra2c_argmax": argmax_rows(out.ra2c.rows(), |a| out.ra2c.row(a).to_vec()),
                    "rc2a_argmax": argmax_rows(out.rc2a.rows(), |c| out.rc2a.row(c).to_vec()),
                })
            };
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
        Command::RunDialogue {
            world,
            reasoning,
            action,
            rounds,
            stop_confidence,
        } => {
            let (w, agent) = load(&world.world)?;
            let cfg = DialogueConfig::new(rounds, reasoning.params()?)?
                .with_stop_confidence(stop_confidence);
            let report = run_dialogue(&agent, &agent, &w, action, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Perturb {
            world,
            epsilon,
            seed,
            quantize,
            out,
        } => {
            if !(epsilon >= 0.0 && epsilon.is_finite()) {
                bail!("epsilon must be a nonnegative number, got {epsilon}");
            }
            let (w, agents) =
                load_world(&world).with_context(|| format!("loading world {}", world.display()))?;
            let mut rng = Rng::new(seed);
            let mut noisy = Vec::with_capacity(agents.len());
            for agent in &agents {
                let mut m = perturb_model(&agent.relevance, epsilon, &mut rng);
                if let Some(step) = quantize {
                    m = quantize_model(&m, step)?;
                }
                noisy.push(agent.with_relevance(m));
            }
            emit(&world_to_string(&w, &noisy), out.as_deref())?;
        }
        Command::Sweep {
            config,
            seed,
            out,
            trials,
            update,
        } => {
            let mut cfg = resolve_config(&config)?.with_seed(seed);
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(u) = update {
                cfg.update = u.into();
            }
            cfg.validate()?;
            let (rows, files) = run_and_emit(&cfg, &out)?;
            eprintln!(
                "{} rows written to {} and {}",
                rows.len(),
                files.csv.display(),
                files.manifest.display()
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
