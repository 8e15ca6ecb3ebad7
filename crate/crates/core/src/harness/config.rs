//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::es_opt::EsConfig;
use crate::policy::ResampleMode;
use crate::towers::{Activation, KernelKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Itt,
    Iot,
    Explicit,
}

/// How an ITT policy turns scores into an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Argmax,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub state_layers: usize,
    pub action_layers: usize,
    /// Layer count of the single IOT / explicit network.
    pub layers: usize,
    pub activation: Activation,
    pub kernel: KernelKind,
    pub selection: Selection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FastMode {
    None,
    Srp { m: usize, budget: usize, median_shift: bool },
    Rft { features: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub eval_episodes: usize,
    /// Evaluate every this many iterations (0 disables).
    pub eval_every: usize,
    pub target_score: Option<f64>,
    pub stop_at_target: bool,
    pub record_timing: bool,
    pub workers: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvSpec,
    pub policy: PolicyConfig,
    pub num_actions: usize,
    pub fast: FastMode,
    pub es: EsConfig,
    pub run: RunConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    env: RawEnv,
    #[serde(default)]
    policy: RawPolicy,
    #[serde(default)]
    actions: RawActions,
    #[serde(default)]
    fast: RawFast,
    #[serde(default)]
    es: RawEs,
    #[serde(default)]
    run: RawRun,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnv {
    id: String,
    max_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    kind: Option<PolicyKind>,
    latent_dim: Option<usize>,
    hidden_dim: Option<usize>,
    state_layers: Option<usize>,
    action_layers: Option<usize>,
    layers: Option<usize>,
    activation: Option<Activation>,
    kernel: Option<KernelKind>,
    selection: Option<Selection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawActions {
    num_samples: Option<usize>,
    resample: Option<ResampleMode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFast {
    mode: Option<String>,
    srp_m: Option<usize>,
    srp_budget: Option<usize>,
    median_shift: Option<bool>,
    rft_features: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEs {
    sigma: Option<f64>,
    learning_rate: Option<f64>,
    perturbations: Option<usize>,
    iterations: Option<usize>,
    lazy_period: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    seeds: Option<Vec<u64>>,
    out_dir: Option<PathBuf>,
    eval_episodes: Option<usize>,
    eval_every: Option<usize>,
    target_score: Option<f64>,
    stop_at_target: Option<bool>,
    record_timing: Option<bool>,
    workers: Option<usize>,
}

/// Per-environment defaults: σ and the layer counts
/// `(state tower, action tower, single network)`.
pub fn env_defaults(id: EnvId) -> (f64, usize, usize, usize) {
    match id {
        EnvId::Cartpole | EnvId::Mountaincar => (1.0, 2, 1, 3),
        EnvId::MountaincarContinuous => (1.0, 1, 1, 2),
        EnvId::Pendulum => (1.0, 2, 1, 3),
    }
}

pub const DEFAULT_NUM_ACTIONS: usize = 1000;
pub const DEFAULT_EVAL_EPISODES: usize = 10;
pub const DEFAULT_SRP_M: usize = 6;
pub const DEFAULT_SRP_BUDGET: usize = 128;
pub const DEFAULT_RFT_FEATURES: usize = 256;

/// Byte offset of `line`/`col` style spans back to the `section.key` they sit on.
fn key_at(src: &str, offset: usize) -> String {
    let mut section = String::new();
    let mut pos = 0;
    for line in src.split_inclusive('\n') {
        let end = pos + line.len();
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if offset < end {
            if let Some((k, _)) = t.split_once('=') {
                let k = k.trim();
                return if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            }
            return if section.is_empty() { "<root>".into() } else { section };
        }
        pos = end;
    }
    section
}

fn toml_error(src: &str, e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let key = match e.span() {
        Some(span) => {
            let k = key_at(src, span.start);
            // unknown fields are reported on the field name itself
            match msg.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
                Some(f) if !k.ends_with(f) => format!("{k}.{f}"),
                _ => k,
            }
        }
        None => "<file>".into(),
    };
    Error::config(key, msg)
}

pub fn parse_config(src: &str) -> Result<TrainConfig> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| toml_error(src, e))?;
    resolve(raw)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
    parse_config(&src)
}

fn positive(key: &str, v: usize) -> Result<usize> {
    if v == 0 {
        Err(Error::config(key, "must be at least 1"))
    } else {
        Ok(v)
    }
}

fn resolve(raw: RawConfig) -> Result<TrainConfig> {
    let id: EnvId = raw.env.id.parse()?;
    let env = match raw.env.max_steps {
        Some(s) => EnvSpec::with_max_steps(id, s)?,
        None => EnvSpec::new(id),
    };
    let (sigma, state_layers, action_layers, layers) = env_defaults(id);
    let action_dim = env.action_space.dim();

    let p = raw.policy;
    let kind = p.kind.unwrap_or(PolicyKind::Itt);
    let latent_dim = positive("policy.latent_dim", p.latent_dim.unwrap_or(action_dim))?;
    let policy = PolicyConfig {
        kind,
        latent_dim,
        hidden_dim: positive("policy.hidden_dim", p.hidden_dim.unwrap_or(latent_dim))?,
        state_layers: positive("policy.state_layers", p.state_layers.unwrap_or(state_layers))?,
        action_layers: positive("policy.action_layers", p.action_layers.unwrap_or(action_layers))?,
        layers: positive("policy.layers", p.layers.unwrap_or(layers))?,
        activation: p.activation.unwrap_or_default(),
        kernel: p.kernel.unwrap_or_default(),
        selection: p.selection.unwrap_or_default(),
    };

    let fast = match raw.fast.mode.as_deref().unwrap_or("none") {
        "none" => FastMode::None,
        "srp" => {
            let m = raw.fast.srp_m.unwrap_or(DEFAULT_SRP_M);
            if !(1..=64).contains(&m) {
                return Err(Error::config("fast.srp_m", "must lie in 1..=64"));
            }
            FastMode::Srp {
                m,
                budget: positive("fast.srp_budget", raw.fast.srp_budget.unwrap_or(DEFAULT_SRP_BUDGET))?,
                median_shift: raw.fast.median_shift.unwrap_or(true),
            }
        }
        "rft" => FastMode::Rft {
            features: positive("fast.rft_features", raw.fast.rft_features.unwrap_or(DEFAULT_RFT_FEATURES))?,
        },
        other => return Err(Error::config("fast.mode", format!("unknown mode `{other}` (none, srp, rft)"))),
    };
    if fast != FastMode::None && kind != PolicyKind::Itt {
        return Err(Error::config("fast.mode", "fast selection backends require policy.kind = \"itt\""));
    }
    if policy.selection == Selection::Softmax && kind != PolicyKind::Itt {
        return Err(Error::config("policy.selection", "softmax selection requires policy.kind = \"itt\""));
    }

    let num_actions = positive("actions.num_samples", raw.actions.num_samples.unwrap_or(DEFAULT_NUM_ACTIONS))?;
    let resample = raw.actions.resample.unwrap_or_default();

    let run = RunConfig {
        seeds: raw.run.seeds.unwrap_or_else(|| vec![0]),
        out_dir: raw.run.out_dir.unwrap_or_else(|| PathBuf::from("runs")),
        eval_episodes: positive("run.eval_episodes", raw.run.eval_episodes.unwrap_or(DEFAULT_EVAL_EPISODES))?,
        eval_every: raw.run.eval_every.unwrap_or(0),
        target_score: raw.run.target_score,
        stop_at_target: raw.run.stop_at_target.unwrap_or(false),
        record_timing: raw.run.record_timing.unwrap_or(false),
        workers: raw.run.workers.map(|w| positive("run.workers", w)).transpose()?,
    };
    if run.seeds.is_empty() {
        return Err(Error::config("run.seeds", "need at least one seed"));
    }
    if run.stop_at_target && (run.target_score.is_none() || run.eval_every == 0) {
        return Err(Error::config("run.stop_at_target", "needs run.target_score and run.eval_every > 0"));
    }

    let mut cfg = TrainConfig {
        env,
        policy,
        num_actions,
        fast,
        es: EsConfig {
            sigma: raw.es.sigma.unwrap_or(sigma),
            eta: raw.es.learning_rate.unwrap_or(EsConfig::DEFAULT_ETA),
            num_perturbations: 0,
            iterations: raw.es.iterations.unwrap_or(100),
            lazy_period: raw.es.lazy_period.unwrap_or(1),
            resample_mode: resample,
        },
        run,
    };
    let dim = super::Architecture::from_config(&cfg)?.param_count();
    cfg.es.num_perturbations = raw.es.perturbations.unwrap_or(dim);
    cfg.es.validate(dim)?;
    Ok(cfg)
}

impl TrainConfig {
    /// Short label such as `itt`, `itt-srp` or `itt-lazy5`.
    pub fn arch_label(&self) -> String {
        let mut s = match self.policy.kind {
            PolicyKind::Itt => "itt",
            PolicyKind::Iot => "iot",
            PolicyKind::Explicit => "explicit",
        }
        .to_string();
        match self.fast {
            FastMode::None => {}
            FastMode::Srp { .. } => s.push_str("-srp"),
            FastMode::Rft { .. } => s.push_str("-rft"),
        }
        if self.es.lazy_period > 1 {
            s.push_str(&format!("-lazy{}", self.es.lazy_period));
        }
        s
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.run.seeds = seeds;
        self
    }

    pub fn with_out_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.run.out_dir = dir.into();
        self
    }
}
