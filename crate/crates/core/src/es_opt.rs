//! Evolution-strategy gradient estimators over orthogonal Gaussian
//! perturbations, the ascent step, lazy action-tower scheduling, and
//! Monte Carlo tools for checking estimator error on quadratic objectives.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, gaussian_matrix, norm_squared, orthogonal_gaussian_ensemble, Matrix, Real, Rng};
use crate::policy::ResampleMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    pub sigma: f64,
    pub eta: f64,
    pub num_perturbations: usize,
    pub iterations: usize,
    pub lazy_period: usize,
    pub resample_mode: ResampleMode,
}

impl EsConfig {
    pub const DEFAULT_ETA: f64 = 0.01;

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("es.sigma", "must be a positive finite number"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("es.learning_rate", "must be a positive finite number"));
        }
        if self.num_perturbations == 0 || self.num_perturbations > dim {
            return Err(Error::config(
                "es.perturbations",
                format!("must lie in 1..={dim} (parameter count)"),
            ));
        }
        if self.lazy_period == 0 {
            return Err(Error::config("es.lazy_period", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// `(1/2σM) Σ [F(θ+σε_i) - F(θ-σε_i)] ε_i`
    Antithetic,
    /// `(1/σM) Σ [F(θ+σε_i) - F(θ)] ε_i`
    ForwardDifference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate<T: Real = f64> {
    pub gradient: Vec<T>,
    pub kind: EstimatorKind,
    pub num_perturbations: usize,
    pub sigma: T,
}

fn perturbed<T: Real>(theta: &[T], eps: &[T], scale: T) -> Vec<T> {
    theta.iter().zip(eps).map(|(&t, &e)| t + scale * e).collect()
}

fn check_finite<T: Real>(v: T, index: usize) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteObjective { index })
    }
}

/// Antithetic estimate from already-evaluated returns, folded in row order.
pub fn antithetic_from_returns<T: Real>(ensemble: &Matrix<T>, plus: &[T], minus: &[T], sigma: T) -> Result<Vec<T>> {
    let m = ensemble.rows();
    if plus.len() != m || minus.len() != m {
        return Err(Error::shape(format!(
            "{m} perturbations but {} / {} returns",
            plus.len(),
            minus.len()
        )));
    }
    let mut grad = vec![T::zero(); ensemble.cols()];
    for (i, eps) in ensemble.iter_rows().enumerate() {
        let w = check_finite(plus[i], i)? - check_finite(minus[i], i)?;
        for (g, &e) in grad.iter_mut().zip(eps) {
            *g += w * e;
        }
    }
    let scale = T::one() / (T::of(2.0) * sigma * T::of(m as f64));
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

/// Forward-difference estimate from already-evaluated returns.
pub fn forward_difference_from_returns<T: Real>(ensemble: &Matrix<T>, plus: &[T], base: T, sigma: T) -> Result<Vec<T>> {
    let m = ensemble.rows();
    if plus.len() != m {
        return Err(Error::shape(format!("{m} perturbations but {} returns", plus.len())));
    }
    let base = check_finite(base, m)?;
    let mut grad = vec![T::zero(); ensemble.cols()];
    for (i, eps) in ensemble.iter_rows().enumerate() {
        let w = check_finite(plus[i], i)? - base;
        for (g, &e) in grad.iter_mut().zip(eps) {
            *g += w * e;
        }
    }
    let scale = T::one() / (sigma * T::of(m as f64));
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

fn check_args<T: Real>(theta: &[T], sigma: T, ensemble: &Matrix<T>) -> Result<()> {
    if !(sigma > T::zero()) {
        return Err(Error::invalid("sigma", "must be positive"));
    }
    if ensemble.cols() != theta.len() {
        return Err(Error::shape(format!(
            "perturbations have width {}, parameters {}",
            ensemble.cols(),
            theta.len()
        )));
    }
    Ok(())
}

/// Antithetic estimate over a given perturbation block; `2M` oracle calls.
pub fn at_gradient_with<T: Real, F: FnMut(&[T]) -> T>(
    mut objective: F,
    theta: &[T],
    sigma: T,
    ensemble: &Matrix<T>,
) -> Result<GradientEstimate<T>> {
    check_args(theta, sigma, ensemble)?;
    let mut plus = Vec::with_capacity(ensemble.rows());
    let mut minus = Vec::with_capacity(ensemble.rows());
    for eps in ensemble.iter_rows() {
        plus.push(objective(&perturbed(theta, eps, sigma)));
        minus.push(objective(&perturbed(theta, eps, -sigma)));
    }
    Ok(GradientEstimate {
        gradient: antithetic_from_returns(ensemble, &plus, &minus, sigma)?,
        kind: EstimatorKind::Antithetic,
        num_perturbations: ensemble.rows(),
        sigma,
    })
}

/// Forward-difference estimate over a given perturbation block; `M + 1` oracle calls.
pub fn fd_gradient_with<T: Real, F: FnMut(&[T]) -> T>(
    mut objective: F,
    theta: &[T],
    sigma: T,
    ensemble: &Matrix<T>,
) -> Result<GradientEstimate<T>> {
    check_args(theta, sigma, ensemble)?;
    let base = objective(theta);
    let plus: Vec<T> = ensemble
        .iter_rows()
        .map(|eps| objective(&perturbed(theta, eps, sigma)))
        .collect();
    Ok(GradientEstimate {
        gradient: forward_difference_from_returns(ensemble, &plus, base, sigma)?,
        kind: EstimatorKind::ForwardDifference,
        num_perturbations: ensemble.rows(),
        sigma,
    })
}

/// Antithetic estimator with a fresh orthogonal ensemble of `m` rows.
pub fn at_gradient<T: Real, F: FnMut(&[T]) -> T>(
    objective: F,
    theta: &[T],
    sigma: T,
    m: usize,
    rng: &mut Rng,
) -> Result<GradientEstimate<T>> {
    let ensemble = orthogonal_gaussian_ensemble(m, theta.len(), rng)?;
    at_gradient_with(objective, theta, sigma, &ensemble)
}

/// Forward-difference estimator with a fresh orthogonal ensemble of `m` rows.
pub fn fd_gradient<T: Real, F: FnMut(&[T]) -> T>(
    objective: F,
    theta: &[T],
    sigma: T,
    m: usize,
    rng: &mut Rng,
) -> Result<GradientEstimate<T>> {
    let ensemble = orthogonal_gaussian_ensemble(m, theta.len(), rng)?;
    fd_gradient_with(objective, theta, sigma, &ensemble)
}

pub fn estimate<T: Real, F: FnMut(&[T]) -> T>(
    kind: EstimatorKind,
    objective: F,
    theta: &[T],
    sigma: T,
    m: usize,
    rng: &mut Rng,
) -> Result<GradientEstimate<T>> {
    match kind {
        EstimatorKind::Antithetic => at_gradient(objective, theta, sigma, m, rng),
        EstimatorKind::ForwardDifference => fd_gradient(objective, theta, sigma, m, rng),
    }
}

/// Ascent step `θ + η ĝ`.
pub fn es_step<T: Real>(theta: &[T], gradient: &[T], eta: T) -> Result<Vec<T>> {
    if theta.len() != gradient.len() {
        return Err(Error::shape(format!(
            "parameters have length {}, gradient {}",
            theta.len(),
            gradient.len()
        )));
    }
    Ok(theta.iter().zip(gradient).map(|(&t, &g)| t + eta * g).collect())
}

/// `F(θ) = c + gᵀθ + ½ θᵀHθ`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticObjective<T: Real = f64> {
    g: Vec<T>,
    h: Matrix<T>,
    c: T,
}

impl<T: Real> QuadraticObjective<T> {
    pub fn new(g: Vec<T>, h: Matrix<T>, c: T) -> Result<Self> {
        let d = g.len();
        if h.rows() != d || h.cols() != d {
            return Err(Error::shape(format!("Hessian is {}x{}, gradient has {d}", h.rows(), h.cols())));
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (h.get(i, j), h.get(j, i));
                if (a - b).abs() > T::of(1e-12) * (T::one() + a.abs().max(b.abs())) {
                    return Err(Error::invalid("Hessian", format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { g, h, c })
    }

    /// Linear objective `gᵀθ`.
    pub fn linear(g: Vec<T>) -> Self {
        let d = g.len();
        Self {
            g,
            h: Matrix::zeros(d, d),
            c: T::zero(),
        }
    }

    /// Gaussian gradient, symmetrized Gaussian Hessian scaled by `1/sqrt(D)`.
    pub fn random(dim: usize, rng: &mut Rng) -> Result<Self> {
        let g: Vec<T> = (0..dim).map(|_| T::of(rng.gaussian())).collect();
        let a: Matrix<T> = gaussian_matrix(dim, dim, rng)?;
        let scale = T::one() / T::of(2.0 * (dim as f64).sqrt());
        let mut h = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                h.set(i, j, (a.get(i, j) + a.get(j, i)) * scale);
            }
        }
        let c = T::of(rng.gaussian());
        Self::new(g, h, c)
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn hessian(&self) -> &Matrix<T> {
        &self.h
    }

    pub fn value(&self, theta: &[T]) -> T {
        let quad = self.h.iter_rows().zip(theta).map(|(row, &t)| t * dot(row, theta)).fold(T::zero(), |a, b| a + b);
        self.c + dot(&self.g, theta) + quad / T::of(2.0)
    }

    /// `∇F(θ) = g + Hθ`; also the gradient of the Gaussian smoothing.
    pub fn gradient(&self, theta: &[T]) -> Vec<T> {
        self.g
            .iter()
            .zip(self.h.iter_rows())
            .map(|(&g, row)| g + dot(row, theta))
            .collect()
    }

    pub fn hessian_frobenius_sq(&self) -> T {
        norm_squared(self.h.data())
    }
}

/// `((D+2)/M - 1) |∇F(θ)|²`, the antithetic orthogonal estimator's MSE on a
/// quadratic.
pub fn at_mse_closed_form<T: Real>(q: &QuadraticObjective<T>, theta: &[T], m: usize) -> Result<T> {
    let d = q.dim();
    if m > d {
        return Err(Error::EnsembleTooLarge { count: m, dim: d });
    }
    if m == 0 {
        return Err(Error::invalid("perturbation count", "must be at least 1"));
    }
    let factor = T::of((d as f64 + 2.0) / m as f64 - 1.0);
    Ok(factor * norm_squared(&q.gradient(theta)))
}

const MC_CHUNK: usize = 2048;

/// Runs `trials` independent evaluations of `per_trial` in fixed-size chunks
/// on the rayon pool; chunk `k` draws from `derive(base, [k])`, so the result
/// does not depend on scheduling.
fn chunked_sum<R, F>(trials: usize, base: u64, zero: R, per_trial: F, add: fn(R, R) -> R) -> R
where
    R: Send + Sync + Clone,
    F: Fn(&mut Rng, &mut R) + Sync,
{
    let chunks = trials.div_ceil(MC_CHUNK);
    let partials: Vec<R> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = Rng::derive(base, &[k as u64]);
            let mut acc = zero.clone();
            let n = MC_CHUNK.min(trials - k * MC_CHUNK);
            for _ in 0..n {
                per_trial(&mut rng, &mut acc);
            }
            acc
        })
        .collect();
    partials.into_iter().fold(zero, add)
}

/// Monte Carlo mean squared error `E|ĝ - ∇F_σ(θ)|²` of an estimator on a
/// quadratic objective (where `∇F_σ = ∇F`).
pub fn mc_mse<T: Real>(
    kind: EstimatorKind,
    q: &QuadraticObjective<T>,
    theta: &[T],
    sigma: T,
    m: usize,
    trials: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::invalid("trial count", "must be at least 1"));
    }
    if m > theta.len() {
        return Err(Error::EnsembleTooLarge { count: m, dim: theta.len() });
    }
    let truth = q.gradient(theta);
    let base = rng.next_seed();
    let total = chunked_sum(
        trials,
        base,
        0.0f64,
        |rng, acc| {
            let est = estimate(kind, |x| q.value(x), theta, sigma, m, rng).expect("shapes checked");
            *acc += est
                .gradient
                .iter()
                .zip(&truth)
                .map(|(&a, &b)| (a - b).to_f64_lossy().powi(2))
                .sum::<f64>();
        },
        |a, b| a + b,
    );
    Ok(total / trials as f64)
}

/// Average estimate over `trials` independent draws.
pub fn mc_mean_gradient<T: Real, F: Fn(&[T]) -> T + Sync>(
    kind: EstimatorKind,
    objective: F,
    theta: &[T],
    sigma: T,
    m: usize,
    trials: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::invalid("trial count", "must be at least 1"));
    }
    if m > theta.len() {
        return Err(Error::EnsembleTooLarge { count: m, dim: theta.len() });
    }
    let base = rng.next_seed();
    let sum = chunked_sum(
        trials,
        base,
        vec![0.0f64; theta.len()],
        |rng, acc| {
            let est = estimate(kind, &objective, theta, sigma, m, rng).expect("shapes checked");
            for (a, g) in acc.iter_mut().zip(&est.gradient) {
                *a += g.to_f64_lossy();
            }
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    );
    Ok(sum.into_iter().map(|s| s / trials as f64).collect())
}

/// Plain Monte Carlo `(1/σn) Σ F(θ+σε_j) ε_j` with iid Gaussian `ε_j`: an
/// unbiased estimate of the smoothed gradient.
pub fn smoothing_gradient_mc<T: Real, F: Fn(&[T]) -> T + Sync>(
    objective: F,
    theta: &[T],
    sigma: T,
    samples: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::invalid("sample count", "must be at least 1"));
    }
    let dim = theta.len();
    let base = rng.next_seed();
    let sum = chunked_sum(
        samples,
        base,
        vec![0.0f64; dim],
        |rng, acc| {
            let eps: Vec<T> = (0..dim).map(|_| T::of(rng.gaussian())).collect();
            let f = objective(&perturbed(theta, &eps, sigma)).to_f64_lossy();
            for (a, e) in acc.iter_mut().zip(&eps) {
                *a += f * e.to_f64_lossy();
            }
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    );
    let scale = 1.0 / (sigma.to_f64_lossy() * samples as f64);
    Ok(sum.into_iter().map(|s| s * scale).collect())
}

/// Whether the action tower is perturbed and updated on `iteration`.
pub fn action_tower_active(iteration: usize, lazy_period: usize) -> bool {
    lazy_period <= 1 || iteration % lazy_period == 0
}

/// Zeroes the action-tower columns (the last `d2`) of every perturbation on
/// iterations where the action tower is frozen.
pub fn lazy_mask<T: Real>(
    ensemble: &Matrix<T>,
    layout: (usize, usize),
    iteration: usize,
    lazy_period: usize,
) -> Result<Matrix<T>> {
    let (d1, d2) = layout;
    if d1 + d2 != ensemble.cols() {
        return Err(Error::shape(format!(
            "layout {d1} + {d2} does not match perturbation width {}",
            ensemble.cols()
        )));
    }
    let mut out = ensemble.clone();
    if !action_tower_active(iteration, lazy_period) {
        for r in 0..out.rows() {
            out.row_mut(r)[d1..].iter_mut().for_each(|x| *x = T::zero());
        }
    }
    Ok(out)
}
