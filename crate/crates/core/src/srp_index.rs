//! Maximum-inner-product search over action latents through signed random
//! projections.
//!
//! Action latents are lifted onto a sphere of radius `C` by appending
//! `sqrt(C² - |l|²)`; state latents get a trailing zero. Inner products are
//! unchanged, so the best action is the one closest in angle, which the sign
//! pattern of a few Gaussian projections approximates. Candidate buckets are
//! probed in order of Hamming distance from the state's code and the visited
//! candidates are rescored exactly.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{dot, median, norm, norm_squared, orthogonal_gaussian_ensemble, Matrix, Real, Rng};

const NORM_SLACK: f64 = 1e-12;

/// Appends `sqrt(C² - |latent|²)`; the result has norm `C`.
pub fn augment_action<T: Real>(latent: &[T], bound: T) -> Result<Vec<T>> {
    let sq = norm_squared(latent);
    let radicand = bound * bound - sq;
    let tolerance = T::of(NORM_SLACK) * (T::one()).max(bound * bound);
    if radicand < -tolerance {
        return Err(Error::NormBound {
            norm: sq.sqrt().to_f64_lossy(),
            bound: bound.to_f64_lossy(),
        });
    }
    let mut out = Vec::with_capacity(latent.len() + 1);
    out.extend_from_slice(latent);
    out.push(radicand.max(T::zero()).sqrt());
    Ok(out)
}

/// Appends a zero coordinate.
pub fn augment_state<T: Real>(latent: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(latent.len() + 1);
    out.extend_from_slice(latent);
    out.push(T::zero());
    out
}

/// Bit `i` is set iff `ω_iᵀx - b_i > 0`. Supports up to 64 projections.
pub fn srp_hash<T: Real>(projections: &Matrix<T>, offsets: &[T], x: &[T]) -> u64 {
    debug_assert!(projections.rows() <= 64);
    projections
        .iter_rows()
        .zip(offsets)
        .enumerate()
        .fold(0u64, |code, (i, (w, &b))| {
            if dot(w, x) - b > T::zero() {
                code | (1 << i)
            } else {
                code
            }
        })
}

/// `m` Gaussian projections in `dim` dimensions, orthogonal within blocks of
/// at most `dim` rows.
pub fn block_orthogonal_projections<T: Real>(m: usize, dim: usize, rng: &mut Rng) -> Result<Matrix<T>> {
    let mut data = Vec::with_capacity(m * dim);
    let mut remaining = m;
    while remaining > 0 {
        let block = remaining.min(dim);
        let e: Matrix<T> = orthogonal_gaussian_ensemble(block, dim, rng)?;
        data.extend_from_slice(e.data());
        remaining -= block;
    }
    Matrix::new(m, dim, data)
}

/// Sign-feature estimate `φ(x)ᵀφ(y)` of the angular kernel `1 - 2θ/π`.
pub fn angular_kernel_estimate<T: Real>(x: &[T], y: &[T], projections: &Matrix<T>) -> Result<T> {
    if norm(x) == T::zero() || norm(y) == T::zero() {
        return Err(Error::ZeroVector);
    }
    if x.len() != projections.cols() || y.len() != projections.cols() {
        return Err(Error::shape("angular kernel: vector width differs from projections"));
    }
    let sign = |v: T| if v > T::zero() { 1i64 } else { -1 };
    let agree: i64 = projections
        .iter_rows()
        .map(|w| sign(dot(w, x)) * sign(dot(w, y)))
        .sum();
    Ok(T::of(agree as f64 / projections.rows() as f64))
}

/// Result of a bucket-probing query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryResult {
    pub index: usize,
    pub candidates_examined: usize,
    pub buckets_probed: usize,
}

#[derive(Clone, Debug)]
pub struct SrpIndex<T: Real = f64> {
    projections: Matrix<T>,
    offsets: Vec<T>,
    norm_bound: T,
    latents: Matrix<T>,
    augmented: Matrix<T>,
    codes: Vec<u64>,
    buckets: Vec<(u64, Vec<usize>)>,
}

impl<T: Real> SrpIndex<T> {
    /// Hashes every action latent with `m` block-orthogonal projections.
    /// With `median_shift`, each projection is offset by its median over the
    /// lifted action latents so the two half-spaces hold equal counts.
    pub fn build(latents: &Matrix<T>, m: usize, median_shift: bool, rng: &mut Rng) -> Result<Self> {
        if latents.rows() == 0 {
            return Err(Error::Empty);
        }
        if m == 0 || m > 64 {
            return Err(Error::invalid("projection count", format!("{m} not in 1..=64")));
        }
        let dim = latents.cols() + 1;
        let norm_bound = latents.iter_rows().map(norm).fold(T::zero(), T::max);
        let mut aug = Vec::with_capacity(latents.rows() * dim);
        for l in latents.iter_rows() {
            aug.extend(augment_action(l, norm_bound)?);
        }
        let augmented = Matrix::new(latents.rows(), dim, aug)?;
        let projections = block_orthogonal_projections(m, dim, rng)?;
        let offsets = if median_shift {
            projections
                .iter_rows()
                .map(|w| {
                    let proj: Vec<T> = augmented.iter_rows().map(|a| dot(w, a)).collect();
                    median(&proj)
                })
                .collect::<Result<Vec<T>>>()?
        } else {
            vec![T::zero(); m]
        };
        let codes: Vec<u64> = augmented
            .iter_rows()
            .map(|a| srp_hash(&projections, &offsets, a))
            .collect();
        let mut map: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, &c) in codes.iter().enumerate() {
            map.entry(c).or_default().push(i);
        }
        Ok(Self {
            projections,
            offsets,
            norm_bound,
            latents: latents.clone(),
            augmented,
            codes,
            buckets: map.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.latents.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.rows() == 0
    }

    pub fn num_projections(&self) -> usize {
        self.projections.rows()
    }

    pub fn projections(&self) -> &Matrix<T> {
        &self.projections
    }

    pub fn offsets(&self) -> &[T] {
        &self.offsets
    }

    pub fn norm_bound(&self) -> T {
        self.norm_bound
    }

    pub fn codes(&self) -> &[u64] {
        &self.codes
    }

    pub fn augmented_latents(&self) -> &Matrix<T> {
        &self.augmented
    }

    /// Non-empty buckets in ascending code order.
    pub fn buckets(&self) -> impl Iterator<Item = (u64, &[usize])> + '_ {
        self.buckets.iter().map(|(c, v)| (*c, v.as_slice()))
    }

    pub fn state_code(&self, state_latent: &[T]) -> u64 {
        srp_hash(&self.projections, &self.offsets, &augment_state(state_latent))
    }

    /// Visits buckets by increasing Hamming distance from the state's code
    /// (ties by ascending code) until at least `budget` candidates were
    /// collected, then returns the exact best candidate.
    pub fn query(&self, state_latent: &[T], budget: usize) -> Result<QueryResult> {
        if self.is_empty() {
            return Err(Error::Empty);
        }
        if budget == 0 {
            return Err(Error::invalid("probe budget", "must be at least 1"));
        }
        if state_latent.len() != self.latents.cols() {
            return Err(Error::shape(format!(
                "state latent has width {}, index holds width {}",
                state_latent.len(),
                self.latents.cols()
            )));
        }
        let code = self.state_code(state_latent);
        let mut order: Vec<(u32, usize)> = self
            .buckets
            .iter()
            .enumerate()
            .map(|(i, (c, _))| ((c ^ code).count_ones(), i))
            .collect();
        // buckets are stored by ascending code, so index order breaks distance ties
        order.sort_unstable();

        let mut best: Option<(T, usize)> = None;
        let mut examined = 0;
        let mut probed = 0;
        for (_, b) in order {
            for &i in &self.buckets[b].1 {
                let s = dot(self.latents.row(i), state_latent);
                if !s.is_finite() {
                    return Err(Error::NonFinite(i));
                }
                best = match best {
                    Some((bs, bi)) if bs > s || (bs == s && bi < i) => Some((bs, bi)),
                    _ => Some((s, i)),
                };
            }
            examined += self.buckets[b].1.len();
            probed += 1;
            if examined >= budget {
                break;
            }
        }
        let (_, index) = best.expect("index is non-empty");
        Ok(QueryResult {
            index,
            candidates_examined: examined,
            buckets_probed: probed,
        })
    }
}

pub fn build_index<T: Real>(latents: &Matrix<T>, m: usize, median_shift: bool, rng: &mut Rng) -> Result<SrpIndex<T>> {
    SrpIndex::build(latents, m, median_shift, rng)
}
