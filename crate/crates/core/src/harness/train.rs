//! The ES training loop, run logs, checkpoints and evaluation.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::rollout;
use crate::error::{Error, Result};
use crate::es_opt::{action_tower_active, antithetic_from_returns, es_step, lazy_mask};
use crate::numerics::{mean, orthogonal_gaussian_ensemble, percentile, Rng};
use crate::policy::{sample_actions, ActionSet, ResampleMode};

use super::agent::{ActionArtifacts, Agent, Architecture};
use super::config::TrainConfig;

const ENSEMBLE: u64 = 1;
const ROLLOUT: u64 = 2;
const ACTIONS: u64 = 3;
const EVAL: u64 = 4;
const TRAIN_EVAL: u64 = 5;
const ARTIFACTS: u64 = 6;

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const LOG_HEADER: &str = "iter,reward_mean,reward_p10,reward_p90,wall_ms,tower_updated";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub reward_mean: f64,
    pub reward_p10: f64,
    pub reward_p90: f64,
    pub wall_ms: Option<f64>,
    pub tower_updated: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<IterationRecord>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            let wall = r.wall_ms.map(|w| format!("{w:.3}")).unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.iteration, r.reward_mean, r.reward_p10, r.reward_p90, wall, r.tower_updated as u8
            )
            .unwrap();
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub theta: Vec<f64>,
    pub iteration: usize,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if c.format_version != CHECKPOINT_FORMAT {
            return Err(Error::invalid(
                "checkpoint",
                format!("unsupported format version {}", c.format_version),
            ));
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

impl EvalSummary {
    fn from_returns(returns: Vec<f64>) -> Self {
        let mean = mean(&returns);
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / returns.len() as f64;
        Self {
            mean,
            std: var.sqrt(),
            returns,
        }
    }
}

/// Everything one seed of a training run produced.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub log: RunLog,
    pub checkpoint: Checkpoint,
    /// `(iterations completed, evaluation mean)` for every periodic evaluation.
    pub evals: Vec<(usize, f64)>,
    /// Iterations completed when an evaluation first reached the target.
    pub solved_at: Option<usize>,
    pub final_eval: EvalSummary,
    /// Action artifacts built once per iteration and shared by every rollout.
    pub shared_builds: usize,
    /// Action artifacts built inside individual rollouts.
    pub private_builds: usize,
}

fn pool(cfg: &TrainConfig) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.run.workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| Error::invalid("worker pool", e.to_string()))
}

/// Runs `episodes` rollouts of `theta`; episode `k` uses `derive(seed, [EVAL, k])`.
pub fn evaluate_theta(cfg: &TrainConfig, theta: &[f64], episodes: usize, seed: u64) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::invalid("episode count", "must be at least 1"));
    }
    let arch = Architecture::from_config(cfg)?;
    let discrete_set = discrete_candidates(cfg)?;
    let returns = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let mut agent = Agent::new(cfg, &arch, theta, Rng::derive(seed, &[EVAL, k as u64]))?
                .with_candidates(discrete_set.as_ref());
            let env_seed = agent.rng().next_seed();
            Ok(rollout(&cfg.env, |o| agent.act(o), env_seed)?.total_reward)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalSummary::from_returns(returns))
}

pub fn evaluate(checkpoint: &Checkpoint, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let arch = Architecture::from_config(&checkpoint.config)?;
    if checkpoint.theta.len() != arch.param_count() {
        return Err(Error::invalid(
            "checkpoint",
            format!(
                "{} parameters stored, the configured policy needs {}",
                checkpoint.theta.len(),
                arch.param_count()
            ),
        ));
    }
    evaluate_theta(&checkpoint.config, &checkpoint.theta, episodes, seed)
}

fn discrete_candidates(cfg: &TrainConfig) -> Result<Option<ActionSet>> {
    if cfg.env.action_space.is_discrete() {
        Ok(Some(sample_actions(&cfg.env.action_space, 0, &mut Rng::new(0))?))
    } else {
        Ok(None)
    }
}

pub fn train_seed(cfg: &TrainConfig, seed: u64) -> Result<SeedOutcome> {
    let pool = pool(cfg)?;
    pool.install(|| train_seed_inner(cfg, seed))
}

fn train_seed_inner(cfg: &TrainConfig, seed: u64) -> Result<SeedOutcome> {
    let arch = Architecture::from_config(cfg)?;
    let dim = arch.param_count();
    let layout = arch.layout();
    cfg.es.validate(dim)?;
    let m = cfg.es.num_perturbations;
    let sigma = cfg.es.sigma;
    let lazy = arch.is_two_tower() && cfg.es.lazy_period > 1;
    let discrete_set = discrete_candidates(cfg)?;
    let per_iter = cfg.es.resample_mode == ResampleMode::PerIter;

    let mut theta = vec![0.0; dim];
    let mut log = RunLog::default();
    let mut evals = Vec::new();
    let mut solved_at = None;
    let mut shared_builds = 0;
    let mut private_builds = 0;
    // θ2 changes only on iterations where the action tower is active
    let mut theta2_version = 0usize;
    let mut cache: Option<((usize, usize), Arc<ActionArtifacts>)> = None;

    let mut completed = 0;
    for it in 0..cfg.es.iterations {
        let start = Instant::now();
        let tower_active = !arch.is_two_tower() || action_tower_active(it, cfg.es.lazy_period);
        let mut eps = orthogonal_gaussian_ensemble::<f64>(m, dim, &mut Rng::derive(seed, &[ENSEMBLE, it as u64]))?;
        if lazy {
            eps = lazy_mask(&eps, layout, it, cfg.es.lazy_period)?;
        }

        let iter_set = match (&discrete_set, per_iter) {
            (Some(s), _) => Some(s.clone()),
            (None, true) => Some(sample_actions(
                &cfg.env.action_space,
                cfg.num_actions,
                &mut Rng::derive(seed, &[ACTIONS, it as u64]),
            )?),
            (None, false) => None,
        };
        // one shared build when every rollout sees the same θ2 and candidate set
        let set_key = if per_iter && discrete_set.is_none() { it } else { 0 };
        let shared = match &iter_set {
            Some(set) if !tower_active && arch.is_two_tower() => {
                let key = (theta2_version, set_key);
                match &cache {
                    Some((k, a)) if *k == key => Some(a.clone()),
                    _ => {
                        let a = Arc::new(ActionArtifacts::build(
                            cfg,
                            &arch,
                            &theta,
                            set.clone(),
                            &mut Rng::derive(seed, &[ARTIFACTS, it as u64]),
                        )?);
                        shared_builds += 1;
                        cache = Some((key, a.clone()));
                        Some(a)
                    }
                }
            }
            _ => None,
        };

        let results: Vec<(f64, usize)> = (0..2 * m)
            .into_par_iter()
            .map(|job| {
                let (worker, sign) = (job / 2, job % 2);
                let s = if sign == 0 { sigma } else { -sigma };
                let params: Vec<f64> = theta.iter().zip(eps.row(worker)).map(|(t, e)| t + s * e).collect();
                let run = || -> Result<(f64, usize)> {
                    let rng = Rng::derive(seed, &[ROLLOUT, it as u64, worker as u64, sign as u64]);
                    let mut agent = Agent::new(cfg, &arch, &params, rng)?
                        .with_shared(shared.as_deref())
                        .with_candidates(iter_set.as_ref());
                    let env_seed = agent.rng().next_seed();
                    let stats = rollout(&cfg.env, |o| agent.act(o), env_seed)?;
                    Ok((stats.total_reward, agent.builds()))
                };
                run().map_err(|e| Error::Worker {
                    iteration: it,
                    worker,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;

        let plus: Vec<f64> = results.iter().step_by(2).map(|r| r.0).collect();
        let minus: Vec<f64> = results.iter().skip(1).step_by(2).map(|r| r.0).collect();
        private_builds += results.iter().map(|r| r.1).sum::<usize>();
        let grad = antithetic_from_returns(&eps, &plus, &minus, sigma)?;
        theta = es_step(&theta, &grad, cfg.es.eta)?;
        if tower_active {
            theta2_version += 1;
        }

        let returns: Vec<f64> = results.iter().map(|r| r.0).collect();
        log.records.push(IterationRecord {
            iteration: it,
            reward_mean: mean(&returns),
            reward_p10: percentile(&returns, 10.0)?,
            reward_p90: percentile(&returns, 90.0)?,
            wall_ms: cfg.run.record_timing.then(|| start.elapsed().as_secs_f64() * 1e3),
            tower_updated: tower_active,
        });
        completed = it + 1;

        if cfg.run.eval_every > 0 && completed % cfg.run.eval_every == 0 {
            let eval_seed = Rng::derive(seed, &[TRAIN_EVAL, it as u64]).next_seed();
            let score = evaluate_theta(cfg, &theta, cfg.run.eval_episodes, eval_seed)?.mean;
            evals.push((completed, score));
            if solved_at.is_none() && cfg.run.target_score.is_some_and(|t| score >= t) {
                solved_at = Some(completed);
                if cfg.run.stop_at_target {
                    break;
                }
            }
        }
    }

    let final_eval = evaluate_theta(cfg, &theta, cfg.run.eval_episodes, seed)?;
    Ok(SeedOutcome {
        seed,
        log,
        checkpoint: Checkpoint {
            format_version: CHECKPOINT_FORMAT,
            config: cfg.clone(),
            theta,
            iteration: completed,
            seed,
        },
        evals,
        solved_at,
        final_eval,
        shared_builds,
        private_builds,
    })
}

/// Trains every configured seed and writes `seed_<s>/log.csv`,
/// `seed_<s>/checkpoint.json` and `scores.csv` under the output directory.
pub fn train(cfg: &TrainConfig) -> Result<Vec<SeedOutcome>> {
    let outcomes = cfg
        .run
        .seeds
        .iter()
        .map(|&s| train_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    write_outputs(&cfg.run.out_dir, &outcomes)?;
    Ok(outcomes)
}

pub fn scores_csv(outcomes: &[SeedOutcome]) -> String {
    let mut s = String::from("seed,score\n");
    for o in outcomes {
        writeln!(s, "{},{}", o.seed, o.final_eval.mean).unwrap();
    }
    s
}

pub fn write_outputs(dir: &Path, outcomes: &[SeedOutcome]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for o in outcomes {
        let sub = dir.join(format!("seed_{}", o.seed));
        std::fs::create_dir_all(&sub)?;
        std::fs::write(sub.join("log.csv"), o.log.to_csv())?;
        o.checkpoint.save(&sub.join("checkpoint.json"))?;
    }
    std::fs::write(dir.join("scores.csv"), scores_csv(outcomes))?;
    Ok(())
}
