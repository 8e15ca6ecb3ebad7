//! Paired t-tests and multi-architecture comparisons.

use std::fmt::Write as _;
use std::path::Path;

use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::numerics::mean;

use super::config::TrainConfig;
use super::train::{train, SeedOutcome};

/// Two-sided paired t-test on `xs - ys`. Returns `(t, p)`.
pub fn paired_t_test(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::shape(format!("paired samples of lengths {} and {}", xs.len(), ys.len())));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::DegenerateSample);
    }
    let d: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    if let Some(i) = d.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return if m == 0.0 { Ok((0.0, 1.0)) } else { Err(Error::DegenerateSample) };
    }
    let t = m / (var / n as f64).sqrt();
    Ok((t, student_t_two_sided(t, (n - 1) as f64)))
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Clone, Debug)]
pub struct ComparisonRow {
    pub task: String,
    pub arch: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
    pub scores: Vec<(u64, f64)>,
}

#[derive(Clone, Debug)]
pub struct PairwiseTest {
    pub arch_a: String,
    pub arch_b: String,
    pub t: f64,
    pub p: f64,
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn comparison_row(cfg: &TrainConfig, outcomes: &[SeedOutcome]) -> ComparisonRow {
    let scores: Vec<(u64, f64)> = outcomes.iter().map(|o| (o.seed, o.final_eval.mean)).collect();
    let values: Vec<f64> = scores.iter().map(|s| s.1).collect();
    ComparisonRow {
        task: cfg.env.id.to_string(),
        arch: cfg.arch_label(),
        mean: mean(&values),
        std: sample_std(&values),
        seeds: values.len(),
        scores,
    }
}

/// Scores of two rows matched by seed.
pub fn paired_scores(a: &ComparisonRow, b: &ComparisonRow) -> (Vec<f64>, Vec<f64>) {
    a.scores
        .iter()
        .filter_map(|(s, x)| b.scores.iter().find(|(t, _)| t == s).map(|(_, y)| (*x, *y)))
        .unzip()
}

pub fn pairwise_tests(rows: &[ComparisonRow]) -> Vec<PairwiseTest> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (xs, ys) = paired_scores(&rows[i], &rows[j]);
            let (t, p) = paired_t_test(&xs, &ys).unwrap_or((f64::NAN, f64::NAN));
            out.push(PairwiseTest {
                arch_a: rows[i].arch.clone(),
                arch_b: rows[j].arch.clone(),
                t,
                p,
            });
        }
    }
    out
}

pub fn summary_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("task,arch,mean,std,seeds\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.task, r.arch, r.mean, r.std, r.seeds).unwrap();
    }
    s
}

pub fn tests_csv(tests: &[PairwiseTest]) -> String {
    let mut s = String::from("arch_a,arch_b,t,p\n");
    for t in tests {
        writeln!(s, "{},{},{},{}", t.arch_a, t.arch_b, t.t, t.p).unwrap();
    }
    s
}

/// Trains every config (each into `<out>/<index>_<arch>`) and writes
/// `compare.csv` and `ttest.csv` under `out`.
pub fn compare(configs: &[TrainConfig], out: &Path) -> Result<(Vec<ComparisonRow>, Vec<PairwiseTest>)> {
    if configs.len() < 2 {
        return Err(Error::config("compare", "need at least two configs"));
    }
    let env = configs[0].env.id;
    if let Some(c) = configs.iter().find(|c| c.env.id != env) {
        return Err(Error::config(
            "env.id",
            format!("configs mix environments {} and {}", env, c.env.id),
        ));
    }
    let mut rows = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        let c = c.clone().with_out_dir(out.join(format!("{i}_{}", c.arch_label())));
        let outcomes = train(&c)?;
        rows.push(comparison_row(&c, &outcomes));
    }
    let tests = pairwise_tests(&rows);
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("compare.csv"), summary_csv(&rows))?;
    std::fs::write(out.join("ttest.csv"), tests_csv(&tests))?;
    Ok((rows, tests))
}

/// Reads a `seed,score` file as written by training.
pub fn read_scores(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::invalid("scores file", format!("{}:{}: expected `seed,score`", path.display(), n + 1));
        let (s, v) = line.split_once(',').ok_or_else(bad)?;
        out.push((s.trim().parse().map_err(|_| bad())?, v.trim().parse().map_err(|_| bad())?));
    }
    Ok(out)
}
