//! Network layout per architecture and the per-rollout acting loop.

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::policy::{
    action_latents, explicit_act, iot_select, itt_select_latent, itt_softmax_sample, sample_actions, ActionSet,
    ResampleMode,
};
use crate::rft::RftSampler;
use crate::srp_index::SrpIndex;
use crate::towers::{split_params, TowerSpec};

use super::config::{FastMode, PolicyKind, Selection, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    Itt { state: TowerSpec, action: TowerSpec },
    Iot { energy: TowerSpec },
    Explicit { net: TowerSpec },
}

impl Architecture {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        let p = &cfg.policy;
        let obs = cfg.env.obs_dim;
        let adim = cfg.env.action_space.dim();
        Ok(match p.kind {
            PolicyKind::Itt => Architecture::Itt {
                state: TowerSpec::uniform(obs, p.hidden_dim, p.latent_dim, p.state_layers, p.activation)?,
                action: TowerSpec::uniform(adim, p.hidden_dim, p.latent_dim, p.action_layers, p.activation)?,
            },
            PolicyKind::Iot => Architecture::Iot {
                energy: TowerSpec::uniform(obs + adim, p.hidden_dim, 1, p.layers, p.activation)?,
            },
            PolicyKind::Explicit => Architecture::Explicit {
                net: TowerSpec::uniform(obs, p.hidden_dim, adim, p.layers, p.activation)?,
            },
        })
    }

    pub fn param_count(&self) -> usize {
        let (a, b) = self.layout();
        a + b
    }

    /// `(D1, D2)`: state- and action-tower parameter counts; single-network
    /// architectures report `(D, 0)`.
    pub fn layout(&self) -> (usize, usize) {
        match self {
            Architecture::Itt { state, action } => (state.param_count(), action.param_count()),
            Architecture::Iot { energy } => (energy.param_count(), 0),
            Architecture::Explicit { net } => (net.param_count(), 0),
        }
    }

    pub fn is_two_tower(&self) -> bool {
        matches!(self, Architecture::Itt { .. })
    }
}

/// Everything derived from `θ2` and a candidate set: the set itself, its
/// latents, and the optional search structure.
#[derive(Clone, Debug)]
pub struct ActionArtifacts {
    pub set: ActionSet,
    pub srp: Option<SrpIndex>,
    pub rft: Option<RftSampler>,
}

impl ActionArtifacts {
    pub fn build(cfg: &TrainConfig, arch: &Architecture, theta: &[f64], mut set: ActionSet, rng: &mut Rng) -> Result<Self> {
        let (mut srp, mut rft) = (None, None);
        if let Architecture::Itt { state, action } = arch {
            let (_, theta2) = split_params(theta, state, action)?;
            let latents = set.cache_latents(action, theta2)?;
            match cfg.fast {
                FastMode::None => {}
                FastMode::Srp { m, median_shift, .. } => srp = Some(SrpIndex::build(latents, m, median_shift, rng)?),
                FastMode::Rft { features } => rft = Some(RftSampler::build(latents, features, rng)?),
            }
        }
        Ok(Self { set, srp, rft })
    }

    pub fn latents(&self) -> Result<&crate::numerics::Matrix> {
        self.set
            .latents()
            .ok_or_else(|| Error::invalid("action artifacts", "latents were not computed"))
    }
}

/// Acts in one rollout for fixed parameters. Candidate sets come from the
/// shared artifacts when given, otherwise from `candidates` or are sampled
/// from the agent's own stream (once for discrete / per-iteration sets, at
/// every step for per-step resampling).
pub struct Agent<'a> {
    cfg: &'a TrainConfig,
    arch: &'a Architecture,
    theta: &'a [f64],
    shared: Option<&'a ActionArtifacts>,
    candidates: Option<&'a ActionSet>,
    own: Option<ActionArtifacts>,
    rng: Rng,
    builds: usize,
}

impl<'a> Agent<'a> {
    pub fn new(cfg: &'a TrainConfig, arch: &'a Architecture, theta: &'a [f64], rng: Rng) -> Result<Self> {
        if theta.len() != arch.param_count() {
            return Err(Error::shape(format!(
                "parameter vector of length {} for an architecture with {} parameters",
                theta.len(),
                arch.param_count()
            )));
        }
        Ok(Self {
            cfg,
            arch,
            theta,
            shared: None,
            candidates: None,
            own: None,
            rng,
            builds: 0,
        })
    }

    pub fn with_shared(mut self, shared: Option<&'a ActionArtifacts>) -> Self {
        self.shared = shared;
        self
    }

    pub fn with_candidates(mut self, candidates: Option<&'a ActionSet>) -> Self {
        self.candidates = candidates;
        self
    }

    pub fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }

    /// Artifacts this agent built for itself.
    pub fn builds(&self) -> usize {
        self.builds
    }

    fn artifacts(&mut self) -> Result<&ActionArtifacts> {
        if let Some(s) = self.shared {
            return Ok(s);
        }
        let space = &self.cfg.env.action_space;
        let fresh = space.is_discrete() || self.cfg.es.resample_mode == ResampleMode::PerIter;
        if self.own.is_none() || !fresh {
            let set = match self.candidates {
                Some(c) => c.clone(),
                None => sample_actions(space, self.cfg.num_actions, &mut self.rng)?,
            };
            self.own = Some(ActionArtifacts::build(self.cfg, self.arch, self.theta, set, &mut self.rng)?);
            if self.arch.is_two_tower() {
                self.builds += 1;
            }
        }
        Ok(self.own.as_ref().expect("just built"))
    }

    pub fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        let (cfg, arch, theta) = (self.cfg, self.arch, self.theta);
        match arch {
            Architecture::Explicit { net } => explicit_act(obs, net, theta, &cfg.env.action_space),
            Architecture::Iot { energy } => {
                let art = self.artifacts()?;
                Ok(iot_select(obs, energy, theta, &art.set)?.0)
            }
            Architecture::Itt { state, action } => {
                let (theta1, _) = split_params(theta, state, action)?;
                let ls = state.forward(theta1, obs)?;
                // the artifacts borrow self, so sampling backends get a forked stream
                let mut pick_rng = Rng::new(self.rng.next_seed());
                let art = self.artifacts()?;
                let j = match (&cfg.fast, cfg.policy.selection) {
                    (FastMode::Srp { budget, .. }, _) => {
                        art.srp.as_ref().expect("built for srp").query(&ls, *budget)?.index
                    }
                    (FastMode::Rft { .. }, _) => art.rft.as_ref().expect("built for rft").sample(&ls, &mut pick_rng)?,
                    (FastMode::None, Selection::Argmax) => itt_select_latent(&ls, art.latents()?)?,
                    (FastMode::None, Selection::Softmax) => itt_softmax_sample(&ls, art.latents()?, &mut pick_rng)?,
                };
                Ok(art.set.action(j).to_vec())
            }
        }
    }
}

/// Latents of a candidate set under the action tower of `theta`.
pub fn latents_for(arch: &Architecture, theta: &[f64], set: &ActionSet) -> Result<crate::numerics::Matrix> {
    match arch {
        Architecture::Itt { state, action } => {
            let (_, theta2) = split_params(theta, state, action)?;
            action_latents(action, theta2, set)
        }
        _ => Err(Error::invalid("architecture", "only two-tower policies have action latents")),
    }
}
