//! Per-query cost of the action-selection backends on shared instances.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::numerics::{gaussian_matrix, Rng};
use crate::policy::{iot_select, ActionSpace, itt_select_latent, sample_actions, ActionSet};
use crate::rft::RftSampler;
use crate::srp_index::SrpIndex;
use crate::towers::{split_params, TowerSpec};

use super::agent::{latents_for, Architecture};
use super::config::{FastMode, PolicyKind, TrainConfig, DEFAULT_RFT_FEATURES, DEFAULT_SRP_BUDGET, DEFAULT_SRP_M};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub backend: &'static str,
    pub n: usize,
    pub mean_candidates: f64,
    pub mean_us: f64,
    /// Fraction of queries answered with the brute-force index.
    pub exact_fraction: f64,
}

const REPEATS: usize = 3;

/// Runs `f` `REPEATS` times; returns the last result and the fastest
/// per-query time in microseconds.
fn timed<R>(trials: usize, mut f: impl FnMut() -> Result<R>) -> Result<(R, f64)> {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..REPEATS {
        let t = Instant::now();
        let r = f()?;
        best = best.min(t.elapsed().as_secs_f64() * 1e6 / trials as f64);
        out = Some(r);
    }
    Ok((out.expect("REPEATS > 0"), best))
}

fn random_theta(len: usize, rng: &mut Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gaussian()).collect()
}

/// Times (best of three passes) brute-force two-tower selection, the SRP index, RFT sampling and
/// one-tower per-pair evaluation on identical states and candidate sets.
/// The SRP settings come from `[fast]` when it selects `srp`.
///
/// `action_dim` replaces the environment's action space by `[-1, 1]^k`;
/// with a one-dimensional action the latents lie on a curve and every
/// median-shifted hyperplane cuts it at the same point.
pub fn bench_select(
    cfg: &TrainConfig,
    action_dim: Option<usize>,
    n_list: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if trials == 0 || n_list.is_empty() {
        return Err(Error::invalid("benchmark", "need at least one size and one trial"));
    }
    let mut cfg = cfg.clone();
    if let Some(k) = action_dim {
        cfg.env.action_space = ActionSpace::boxed(vec![-1.0; k], vec![1.0; k])?;
    }
    let cfg = &cfg;
    if cfg.env.action_space.is_discrete() {
        return Err(Error::config("env.id", "benchmarks need a continuous action space"));
    }
    let (m, budget, median_shift) = match cfg.fast {
        FastMode::Srp { m, budget, median_shift } => (m, budget, median_shift),
        _ => (DEFAULT_SRP_M, DEFAULT_SRP_BUDGET, true),
    };
    let features = match cfg.fast {
        FastMode::Rft { features } => features,
        _ => DEFAULT_RFT_FEATURES,
    };
    let mut itt_cfg = cfg.clone();
    itt_cfg.policy.kind = PolicyKind::Itt;
    let arch = Architecture::from_config(&itt_cfg)?;
    let Architecture::Itt { state, action } = &arch else { unreachable!() };
    let p = &cfg.policy;
    let energy = TowerSpec::uniform(
        cfg.env.obs_dim + cfg.env.action_space.dim(),
        p.hidden_dim,
        1,
        p.layers,
        p.activation,
    )?;

    let mut rng = Rng::derive(seed, &[0xbe4c]);
    let theta = random_theta(arch.param_count(), &mut rng);
    let theta_iot = random_theta(energy.param_count(), &mut rng);
    let (theta1, _) = split_params(&theta, state, action)?;
    let states = gaussian_matrix::<f64>(trials, cfg.env.obs_dim, &mut rng)?;

    let mut rows = Vec::new();
    for &n in n_list {
        let set: ActionSet = sample_actions(&cfg.env.action_space, n, &mut rng)?;
        let latents = latents_for(&arch, &theta, &set)?;
        let index = SrpIndex::build(&latents, m, median_shift, &mut rng)?;
        let sampler = RftSampler::build(&latents, features, &mut rng)?;
        let state_latents: Vec<Vec<f64>> = states
            .iter_rows()
            .map(|s| state.forward(theta1, s))
            .collect::<Result<_>>()?;

        let (truth, brute_us) = timed(trials, || {
            state_latents
                .iter()
                .map(|ls| itt_select_latent(black_box(ls), &latents))
                .collect::<Result<Vec<usize>>>()
        })?;
        rows.push(BenchRow {
            backend: "brute",
            n,
            mean_candidates: n as f64,
            mean_us: brute_us,
            exact_fraction: 1.0,
        });

        let (answers, srp_us) = timed(trials, || {
            state_latents
                .iter()
                .map(|ls| index.query(black_box(ls), budget))
                .collect::<Result<Vec<_>>>()
        })?;
        rows.push(BenchRow {
            backend: "srp",
            n,
            mean_candidates: answers.iter().map(|a| a.candidates_examined as f64).sum::<f64>() / trials as f64,
            mean_us: srp_us,
            exact_fraction: agreement(answers.iter().map(|a| a.index), &truth),
        });

        let mut sample_rng = Rng::derive(seed, &[0x4f7, n as u64]);
        let (draws, rft_us) = timed(trials, || {
            state_latents
                .iter()
                .map(|ls| sampler.sample(black_box(ls), &mut sample_rng))
                .collect::<Result<Vec<_>>>()
        })?;
        rows.push(BenchRow {
            backend: "rft",
            n,
            mean_candidates: sampler.tree().depth() as f64,
            mean_us: rft_us,
            exact_fraction: agreement(draws.into_iter(), &truth),
        });

        let (picks, iot_us) = timed(trials, || {
            states
                .iter_rows()
                .map(|s| iot_select(black_box(s), &energy, &theta_iot, &set).map(|r| r.1))
                .collect::<Result<Vec<_>>>()
        })?;
        black_box(picks);
        rows.push(BenchRow {
            backend: "iot",
            n,
            mean_candidates: n as f64,
            mean_us: iot_us,
            exact_fraction: f64::NAN,
        });
    }
    Ok(rows)
}

fn agreement(got: impl Iterator<Item = usize>, truth: &[usize]) -> f64 {
    got.zip(truth).filter(|(a, b)| a == *b).count() as f64 / truth.len() as f64
}

/// Least-squares slope of `ln(mean_us)` against `ln(n)` for one backend.
pub fn log_log_slope(rows: &[BenchRow], backend: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.backend == backend && r.mean_us > 0.0)
        .map(|r| ((r.n as f64).ln(), r.mean_us.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("backend,n,mean_candidates,mean_us,exact_fraction\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{:.4},{}",
            r.backend, r.n, r.mean_candidates, r.mean_us, r.exact_fraction
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_config;

    #[test]
    fn unlimited_budget_matches_brute_force() {
        let c = parse_config(
            "[env]\nid = \"pendulum\"\n[policy]\nlatent_dim = 4\n[fast]\nmode = \"srp\"\nsrp_m = 3\nsrp_budget = 4096\n",
        )
        .unwrap();
        let rows = bench_select(&c, None, &[256, 1024], 50, 1).unwrap();
        for r in rows.iter().filter(|r| r.backend == "srp") {
            assert_eq!(r.mean_candidates, r.n as f64);
            assert_eq!(r.exact_fraction, 1.0);
        }
    }

    #[test]
    fn srp_examines_few_candidates() {
        let c = parse_config(
            "[env]\nid = \"pendulum\"\n[policy]\nlatent_dim = 8\nhidden_dim = 8\n[fast]\nmode = \"srp\"\nsrp_m = 3\nsrp_budget = 128\n",
        )
        .unwrap();
        let rows = bench_select(&c, Some(8), &[1024], 200, 2).unwrap();
        let srp = rows.iter().find(|r| r.backend == "srp").unwrap();
        assert!(srp.mean_candidates <= 256.0, "{}", srp.mean_candidates);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let rows: Vec<BenchRow> = [1usize, 2, 4, 8]
            .iter()
            .map(|&n| BenchRow {
                backend: "x",
                n,
                mean_candidates: 0.0,
                mean_us: 3.0 * (n as f64).powf(0.5),
                exact_fraction: 1.0,
            })
            .collect();
        assert!((log_log_slope(&rows, "x").unwrap() - 0.5).abs() < 1e-12);
        assert!(log_log_slope(&rows, "y").is_none());
    }

    #[test]
    fn discrete_env_rejected() {
        let c = parse_config("[env]\nid = \"cartpole\"\n").unwrap();
        assert!(bench_select(&c, None, &[16], 1, 0).is_err());
    }
}
