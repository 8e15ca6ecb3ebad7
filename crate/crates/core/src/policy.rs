//! Action selection for two-tower (ITT), one-tower (IOT) and explicit
//! policies, plus sampling of the candidate action set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax_first, argmin_first, Matrix, Real, Rng};
use crate::towers::TowerSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete(usize),
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl ActionSpace {
    pub fn discrete(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("action space", "discrete spaces need k >= 2"));
        }
        Ok(Self::Discrete(k))
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::invalid("action space", "box bounds must be non-empty and equal length"));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::invalid(
                    "action space",
                    format!("coordinate {i}: need finite lo < hi, got [{l}, {h}]"),
                ));
            }
        }
        Ok(Self::Box { lo, hi })
    }

    /// Width of the action vector fed to networks (one-hot width for discrete spaces).
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(k) => *k,
            ActionSpace::Box { lo, .. } => lo.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }
}

/// How often the candidate action set is redrawn during a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    /// Fresh candidates at every environment transition.
    #[default]
    PerStep,
    /// One candidate set per optimizer iteration.
    PerIter,
}

/// Candidate actions `A* = {a_1, ..., a_N}` and, optionally, their latents.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSet<T: Real = f64> {
    actions: Matrix<T>,
    latents: Option<Matrix<T>>,
    stale: bool,
}

impl<T: Real> ActionSet<T> {
    pub fn new(actions: Matrix<T>) -> Result<Self> {
        if actions.rows() == 0 {
            return Err(Error::Empty);
        }
        Ok(Self {
            actions,
            latents: None,
            stale: false,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.rows() == 0
    }

    pub fn actions(&self) -> &Matrix<T> {
        &self.actions
    }

    pub fn action(&self, i: usize) -> &[T] {
        self.actions.row(i)
    }

    /// Computes and stores the latents of every action under `θ₂`.
    pub fn cache_latents(&mut self, action_spec: &TowerSpec, theta2: &[T]) -> Result<&Matrix<T>> {
        let latents = action_latents(action_spec, theta2, self)?;
        self.stale = false;
        Ok(self.latents.insert(latents))
    }

    pub fn latents(&self) -> Option<&Matrix<T>> {
        self.latents.as_ref()
    }

    /// Marks cached latents as computed from an older `θ₂` (lazy mode).
    pub fn mark_stale(&mut self) {
        self.stale = self.latents.is_some();
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }
}

pub fn sample_actions<T: Real>(space: &ActionSpace, n: usize, rng: &mut Rng) -> Result<ActionSet<T>> {
    match space {
        ActionSpace::Discrete(k) => {
            let mut m = Matrix::zeros(*k, *k);
            for i in 0..*k {
                m.set(i, i, T::one());
            }
            ActionSet::new(m)
        }
        ActionSpace::Box { lo, hi } => {
            if n == 0 {
                return Err(Error::invalid("action sample count", "must be at least 1"));
            }
            let a = lo.len();
            let mut data = Vec::with_capacity(n * a);
            for _ in 0..n {
                for (l, h) in lo.iter().zip(hi) {
                    data.push(T::of(rng.uniform_range(*l, *h)));
                }
            }
            ActionSet::new(Matrix::new(n, a, data)?)
        }
    }
}

/// Row `i` is the action tower applied to `a_i`.
pub fn action_latents<T: Real>(
    action_spec: &TowerSpec,
    theta2: &[T],
    set: &ActionSet<T>,
) -> Result<Matrix<T>> {
    if set.actions.cols() != action_spec.input_dim() {
        return Err(Error::shape(format!(
            "actions have width {}, action tower expects {}",
            set.actions.cols(),
            action_spec.input_dim()
        )));
    }
    let d = action_spec.output_dim();
    let mut data = Vec::with_capacity(set.len() * d);
    for a in set.actions.iter_rows() {
        data.extend(action_spec.forward(theta2, a)?);
    }
    Matrix::new(set.len(), d, data)
}

/// Index of the best-scoring latent for a state latent (brute-force MIP).
pub fn itt_select_latent<T: Real>(state_latent: &[T], latents: &Matrix<T>) -> Result<usize> {
    if latents.rows() == 0 {
        return Err(Error::Empty);
    }
    if latents.cols() != state_latent.len() {
        return Err(Error::shape(format!(
            "state latent has width {}, action latents {}",
            state_latent.len(),
            latents.cols()
        )));
    }
    let scores = latents.matvec(state_latent)?;
    argmax_first(&scores)
}

/// Picks `a_j` with `j = argmax_i l_A(a_i)ᵀ l_S(s)`, i.e. the minimum-energy action.
pub fn itt_select<T: Real>(
    state: &[T],
    state_spec: &TowerSpec,
    theta1: &[T],
    latents: &Matrix<T>,
    set: &ActionSet<T>,
) -> Result<(Vec<T>, usize)> {
    if set.is_empty() {
        return Err(Error::Empty);
    }
    if latents.rows() != set.len() {
        return Err(Error::shape(format!(
            "{} latents for {} actions",
            latents.rows(),
            set.len()
        )));
    }
    let state_latent = state_spec.forward(theta1, state)?;
    let j = itt_select_latent(&state_latent, latents)?;
    Ok((set.action(j).to_vec(), j))
}

/// Draws an index from the softmax over scores `z = latents · state_latent`.
pub fn itt_softmax_sample<T: Real>(state_latent: &[T], latents: &Matrix<T>, rng: &mut Rng) -> Result<usize> {
    if latents.rows() == 0 {
        return Err(Error::Empty);
    }
    let scores = latents.matvec(state_latent)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let top = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let weights: Vec<f64> = scores.iter().map(|&z| (z - top).to_f64_lossy().exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return Ok(i);
        }
        u -= w;
    }
    // rounding can leave u marginally above the last weight
    Ok(weights.iter().rposition(|&w| w > 0.0).unwrap_or(0))
}

/// Minimum-energy action under a one-tower energy net on `[s; a]`.
pub fn iot_select<T: Real>(
    state: &[T],
    energy_spec: &TowerSpec,
    theta: &[T],
    set: &ActionSet<T>,
) -> Result<(Vec<T>, usize)> {
    if set.is_empty() {
        return Err(Error::Empty);
    }
    if energy_spec.output_dim() != 1 || energy_spec.input_dim() != state.len() + set.actions.cols() {
        return Err(Error::shape(format!(
            "energy net {:?} does not fit state width {} + action width {} -> 1",
            energy_spec.layer_dims(),
            state.len(),
            set.actions.cols()
        )));
    }
    let mut input = Vec::with_capacity(energy_spec.input_dim());
    let mut energies = Vec::with_capacity(set.len());
    for a in set.actions.iter_rows() {
        input.clear();
        input.extend_from_slice(state);
        input.extend_from_slice(a);
        energies.push(energy_spec.forward(theta, &input)?[0]);
    }
    let j = argmin_first(&energies)?;
    Ok((set.action(j).to_vec(), j))
}

/// Direct state-to-action network: clamped outputs for boxes, one-hot argmax
/// for discrete spaces.
pub fn explicit_act<T: Real>(
    state: &[T],
    net_spec: &TowerSpec,
    theta: &[T],
    space: &ActionSpace,
) -> Result<Vec<T>> {
    if net_spec.output_dim() != space.dim() {
        return Err(Error::shape(format!(
            "explicit net outputs {} values, action space needs {}",
            net_spec.output_dim(),
            space.dim()
        )));
    }
    let out = net_spec.forward(theta, state)?;
    match space {
        ActionSpace::Discrete(k) => {
            let j = argmax_first(&out)?;
            let mut a = vec![T::zero(); *k];
            a[j] = T::one();
            Ok(a)
        }
        ActionSpace::Box { lo, hi } => Ok(out
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&v, (&l, &h))| v.max(T::of(l)).min(T::of(h)))
            .collect()),
    }
}

/// Exact probabilities of [`itt_softmax_sample`].
pub fn softmax_probabilities<T: Real>(state_latent: &[T], latents: &Matrix<T>) -> Result<Vec<f64>> {
    let scores = latents.matvec(state_latent)?;
    let top = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let w: Vec<f64> = scores.iter().map(|&z| (z - top).to_f64_lossy().exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}
