//! Monte Carlo checks of the ES estimators on quadratic objectives.

use std::fmt::Write as _;

use crate::error::Result;
use crate::es_opt::{
    at_mse_closed_form, at_gradient_with, fd_gradient_with, mc_mean_gradient, mc_mse, EstimatorKind,
    QuadraticObjective,
};
use crate::numerics::{norm, orthogonal_gaussian_ensemble, Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyRow {
    pub check: &'static str,
    pub dim: usize,
    pub m: usize,
    pub fixture: usize,
    pub measured: f64,
    pub reference: f64,
    pub rel_err: f64,
    /// `None` for rows that are reported but not asserted.
    pub tolerance: Option<f64>,
}

impl VerifyRow {
    pub fn pass(&self) -> bool {
        match self.tolerance {
            Some(t) => self.rel_err <= t,
            None => true,
        }
    }
}

fn row(check: &'static str, dim: usize, m: usize, fixture: usize, measured: f64, reference: f64, tol: Option<f64>) -> VerifyRow {
    let rel_err = if reference == 0.0 {
        measured.abs()
    } else {
        (measured - reference).abs() / reference.abs()
    };
    VerifyRow {
        check,
        dim,
        m,
        fixture,
        measured,
        reference,
        rel_err,
        tolerance: tol,
    }
}

fn random_point(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.gaussian()).collect()
}

pub const AT_GRID: [(usize, usize); 4] = [(4, 2), (4, 4), (16, 4), (16, 16)];

/// Monte Carlo MSE of the antithetic estimator against `((D+2)/M - 1)|∇F|²`
/// on five random quadratics per `(D, M)`.
pub fn check_at_closed_form(trials: usize, seed: u64) -> Result<Vec<VerifyRow>> {
    let mut rows = Vec::new();
    for (g, &(d, m)) in AT_GRID.iter().enumerate() {
        for f in 0..5 {
            let mut rng = Rng::derive(seed, &[1, g as u64, f as u64]);
            let q = QuadraticObjective::random(d, &mut rng)?;
            let theta = random_point(d, &mut rng);
            let sigma = 0.5 + rng.uniform();
            let mc = mc_mse(EstimatorKind::Antithetic, &q, &theta, sigma, m, trials, &mut rng)?;
            let cf = at_mse_closed_form(&q, &theta, m)?;
            rows.push(row("at_mse_closed_form", d, m, f, mc, cf, Some(0.02)));
        }
    }
    Ok(rows)
}

/// Mean antithetic estimate against `∇F(θ)` on linear and quadratic fixtures
/// (relative error of the whole vector).
pub fn check_unbiasedness(trials: usize, seed: u64) -> Result<Vec<VerifyRow>> {
    let mut rows = Vec::new();
    for (f, &(d, m)) in [(4usize, 4usize), (8, 8), (4, 2)].iter().enumerate() {
        for quadratic in [false, true] {
            let mut rng = Rng::derive(seed, &[2, f as u64, quadratic as u64]);
            let q = if quadratic {
                QuadraticObjective::random(d, &mut rng)?
            } else {
                QuadraticObjective::linear(random_point(d, &mut rng))
            };
            let theta = random_point(d, &mut rng);
            let truth = q.gradient(&theta);
            let mean = mc_mean_gradient(EstimatorKind::Antithetic, |x: &[f64]| q.value(x), &theta, 1.0, m, trials, &mut rng)?;
            let diff: Vec<f64> = mean.iter().zip(&truth).map(|(a, b)| a - b).collect();
            let name = if quadratic { "at_unbiased_quadratic" } else { "at_unbiased_linear" };
            let mut r = row(name, d, m, f, norm(&mean), norm(&truth), Some(0.01));
            r.rel_err = norm(&diff) / norm(&truth);
            rows.push(r);
        }
    }
    Ok(rows)
}

/// `E|ĝ_FD - ∇F|²` for orthogonal forward differences on a quadratic:
/// `((D+2)/M - 1)|∇F|² + σ²(D+4)/(4M) ((tr H)² + 2|H|²_F)`.
pub fn fd_mse_reference(q: &QuadraticObjective, theta: &[f64], sigma: f64, m: usize) -> f64 {
    let d = q.dim() as f64;
    let h = q.hessian();
    let trace: f64 = (0..q.dim()).map(|i| h.get(i, i)).sum();
    let g2: f64 = q.gradient(theta).iter().map(|v| v * v).sum();
    ((d + 2.0) / m as f64 - 1.0) * g2 + sigma * sigma * (d + 4.0) / (4.0 * m as f64) * (trace * trace + 2.0 * q.hessian_frobenius_sq())
}

fn identity_fixture(d: usize) -> Result<QuadraticObjective> {
    let mut h = Matrix::zeros(d, d);
    for i in 0..d {
        h.set(i, i, 1.0);
    }
    let mut g = vec![0.0; d];
    g[0] = 1.0;
    QuadraticObjective::new(g, h, 0.0)
}

/// FD against AT at `σ = 1`: the FD error must exceed the AT error on every
/// fixture, and the FD Monte Carlo must agree with an independent run of
/// `oracle_trials` within 3%. The analytic FD expression is reported only.
pub fn check_fd_vs_at(trials: usize, oracle_trials: usize, seed: u64) -> Result<Vec<VerifyRow>> {
    let mut rows = Vec::new();
    let mut fixtures = vec![(identity_fixture(4)?, vec![0.0; 4], 4usize), (identity_fixture(8)?, vec![0.0; 8], 4)];
    for f in 0..3 {
        let mut rng = Rng::derive(seed, &[3, f]);
        let q = QuadraticObjective::random(6, &mut rng)?;
        let theta = random_point(6, &mut rng);
        fixtures.push((q, theta, 3));
    }
    for (f, (q, theta, m)) in fixtures.iter().enumerate() {
        let d = q.dim();
        let mut rng = Rng::derive(seed, &[4, f as u64]);
        let at = mc_mse(EstimatorKind::Antithetic, q, theta, 1.0, *m, trials, &mut rng)?;
        let fd = mc_mse(EstimatorKind::ForwardDifference, q, theta, 1.0, *m, trials, &mut rng)?;
        let mut r = row("fd_exceeds_at", d, *m, f, fd, at, None);
        r.rel_err = if fd > at { 0.0 } else { 1.0 };
        r.tolerance = Some(0.0);
        rows.push(r);
        if f == 0 {
            let mut oracle_rng = Rng::derive(seed, &[5, f as u64]);
            let oracle = mc_mse(EstimatorKind::ForwardDifference, q, theta, 1.0, *m, oracle_trials, &mut oracle_rng)?;
            rows.push(row("fd_mc_vs_oracle", d, *m, f, fd, oracle, Some(0.03)));
        }
        rows.push(row("fd_mc_vs_analytic", d, *m, f, fd, fd_mse_reference(q, theta, 1.0, *m), None));
    }
    Ok(rows)
}

/// Each antithetic term equals `(∇Fᵀε)ε` on a quadratic, and the estimators
/// issue `2M` and `M + 1` oracle calls.
pub fn check_exactness(seed: u64) -> Result<Vec<VerifyRow>> {
    let mut rows = Vec::new();
    for f in 0..5 {
        let mut rng = Rng::derive(seed, &[6, f]);
        let d = 6;
        let q = QuadraticObjective::random(d, &mut rng)?;
        let theta = random_point(d, &mut rng);
        let g = q.gradient(&theta);
        let eps: Matrix = orthogonal_gaussian_ensemble(1, d, &mut rng)?;
        let sigma = 0.3 + rng.uniform();
        let mut calls = 0;
        let est = at_gradient_with(|x: &[f64]| {
            calls += 1;
            q.value(x)
        }, &theta, sigma, &eps)?;
        let e = eps.row(0);
        let ge: f64 = g.iter().zip(e).map(|(a, b)| a * b).sum();
        let want: Vec<f64> = e.iter().map(|v| ge * v).collect();
        let diff: Vec<f64> = est.gradient.iter().zip(&want).map(|(a, b)| a - b).collect();
        let mut r = row("at_term_exact", d, 1, f as usize, norm(&est.gradient), norm(&want), Some(1e-10));
        r.rel_err = norm(&diff) / norm(&want);
        rows.push(r);

        let m = 3;
        let ens: Matrix = orthogonal_gaussian_ensemble(m, d, &mut rng)?;
        let mut at_calls = 0;
        at_gradient_with(|x: &[f64]| {
            at_calls += 1;
            q.value(x)
        }, &theta, sigma, &ens)?;
        let mut fd_calls = 0;
        fd_gradient_with(|x: &[f64]| {
            fd_calls += 1;
            q.value(x)
        }, &theta, sigma, &ens)?;
        rows.push(row("query_count_at", d, m, f as usize, at_calls as f64, (2 * m) as f64, Some(0.0)));
        rows.push(row("query_count_fd", d, m, f as usize, fd_calls as f64, (m + 1) as f64, Some(0.0)));
        let _ = calls;
    }
    Ok(rows)
}

/// Full suite; the FD oracle runs `100 * trials` trials.
pub fn verify_es(trials: usize, seed: u64) -> Result<Vec<VerifyRow>> {
    let mut rows = check_at_closed_form(trials, seed)?;
    rows.extend(check_unbiasedness(trials, seed)?);
    rows.extend(check_fd_vs_at(trials, trials * 100, seed)?);
    rows.extend(check_exactness(seed)?);
    Ok(rows)
}

pub fn verify_csv(rows: &[VerifyRow]) -> String {
    let mut s = String::from("check,dim,m,fixture,measured,reference,rel_err,tolerance,pass\n");
    for r in rows {
        let tol = r.tolerance.map(|t| t.to_string()).unwrap_or_else(|| "report".into());
        writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{:.3e},{},{}",
            r.check,
            r.dim,
            r.m,
            r.fixture,
            r.measured,
            r.reference,
            r.rel_err,
            tol,
            r.pass()
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactness_rows_pass() {
        let rows = check_exactness(1).unwrap();
        assert!(rows.iter().all(|r| r.pass()), "{}", verify_csv(&rows));
    }

    #[test]
    fn fd_reference_identity_example() {
        let q = identity_fixture(4).unwrap();
        assert!((fd_mse_reference(&q, &[0.0; 4], 1.0, 4) - 12.5).abs() < 1e-12);
        let mc = mc_mse(EstimatorKind::ForwardDifference, &q, &[0.0; 4], 1.0, 4, 200_000, &mut Rng::new(3)).unwrap();
        assert!((mc - 12.5).abs() / 12.5 < 0.05, "{mc}");
    }

    #[test]
    fn small_suite_runs() {
        let rows = verify_es(2000, 0).unwrap();
        assert!(rows.len() > 20);
        assert!(verify_csv(&rows).starts_with("check,"));
    }
}
