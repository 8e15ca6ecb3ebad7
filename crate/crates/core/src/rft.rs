//! Random Feature Tree: approximate softmax sampling over `N` actions in
//! `O(log N)` binary decisions.
//!
//! Positive random features `ψ` satisfy `E[ψ(x)ᵀψ(y)] = exp(xᵀy)`. Each tree
//! node stores `ξ(v) = Σ_{a under v} ψ(l_A(a))`, so the probability of
//! descending left is `ψ(s)ᵀξ(left) / ψ(s)ᵀ(ξ(left) + ξ(right))`. The product
//! along a root-to-leaf path telescopes to `ψ(s)ᵀψ(a_i) / Σ_j ψ(s)ᵀψ(a_j)`.

use crate::error::{Error, Result};
use crate::numerics::{dot, gaussian_matrix, norm_squared, Matrix, Real, Rng};
use crate::srp_index::block_orthogonal_projections;

/// Feature map `ψ(x) = r^{-1/2} exp(-|x|²/2) (exp(ω_1ᵀx), ..., exp(ω_rᵀx))`.
#[derive(Clone, Debug)]
pub struct FavorFeatures<T: Real = f64> {
    omega: Matrix<T>,
}

impl<T: Real> FavorFeatures<T> {
    pub fn new(num_features: usize, dim: usize, orthogonal: bool, rng: &mut Rng) -> Result<Self> {
        if num_features == 0 || dim == 0 {
            return Err(Error::invalid("feature map", "feature count and dimension must be positive"));
        }
        let omega = if orthogonal {
            block_orthogonal_projections(num_features, dim, rng)?
        } else {
            gaussian_matrix(num_features, dim, rng)?
        };
        Ok(Self { omega })
    }

    pub fn from_projections(omega: Matrix<T>) -> Result<Self> {
        if omega.rows() == 0 || omega.cols() == 0 {
            return Err(Error::invalid("feature map", "empty projection matrix"));
        }
        Ok(Self { omega })
    }

    pub fn num_features(&self) -> usize {
        self.omega.rows()
    }

    pub fn dim(&self) -> usize {
        self.omega.cols()
    }

    /// Exponents `ω_iᵀx - |x|²/2` before the `exp`.
    pub fn log_features(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::shape(format!(
                "feature map expects width {}, got {}",
                self.dim(),
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let half = norm_squared(x) / T::of(2.0);
        Ok(self.omega.iter_rows().map(|w| dot(w, x) - half).collect())
    }

    pub fn psi(&self, x: &[T]) -> Result<Vec<T>> {
        self.psi_shifted(x, T::zero())
    }

    /// `e^{-shift} ψ(x)`. A shift shared by every vector entering one
    /// sampling problem leaves all branch probabilities unchanged.
    pub fn psi_shifted(&self, x: &[T], shift: T) -> Result<Vec<T>> {
        let scale = T::one() / T::of(self.num_features() as f64).sqrt();
        let out: Vec<T> = self
            .log_features(x)?
            .into_iter()
            .map(|e| (e - shift).exp() * scale)
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::FeatureOverflow);
        }
        Ok(out)
    }

    /// `ψ` of every row, all scaled by one common shift so the largest
    /// entry is `r^{-1/2}`. Returns the features and the shift.
    pub fn psi_rows(&self, xs: &Matrix<T>) -> Result<(Matrix<T>, T)> {
        let logs: Vec<Vec<T>> = xs.iter_rows().map(|x| self.log_features(x)).collect::<Result<_>>()?;
        let shift = logs.iter().flatten().copied().fold(T::neg_infinity(), T::max);
        let scale = T::one() / T::of(self.num_features() as f64).sqrt();
        let data: Vec<T> = logs.iter().flatten().map(|&e| (e - shift).exp() * scale).collect();
        Ok((Matrix::new(xs.rows(), self.num_features(), data)?, shift))
    }

    /// `ψ(x)` rescaled so its largest entry is `r^{-1/2}`.
    pub fn psi_normalized(&self, x: &[T]) -> Result<Vec<T>> {
        let logs = self.log_features(x)?;
        let shift = logs.iter().copied().fold(T::neg_infinity(), T::max);
        let scale = T::one() / T::of(self.num_features() as f64).sqrt();
        Ok(logs.into_iter().map(|e| (e - shift).exp() * scale).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Node {
    Leaf(usize),
    Inner { left: usize, right: usize },
}

/// Binary tree over action indices with per-node feature aggregates `ξ(v)`.
#[derive(Clone, Debug)]
pub struct RftTree<T: Real = f64> {
    nodes: Vec<Node>,
    xi: Matrix<T>,
    root: usize,
    depth: usize,
}

impl<T: Real> RftTree<T> {
    /// Shuffles the action indices, then splits each node into halves of
    /// sizes `⌈n/2⌉` and `⌊n/2⌋`.
    pub fn build(psi_rows: &Matrix<T>, rng: &mut Rng) -> Result<Self> {
        let n = psi_rows.rows();
        if n == 0 {
            return Err(Error::Empty);
        }
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let r = psi_rows.cols();
        let mut nodes = Vec::with_capacity(2 * n - 1);
        let mut xi = Vec::with_capacity((2 * n - 1) * r);
        let mut depth = 0;
        let root = Self::grow(psi_rows, &order, 0, &mut nodes, &mut xi, &mut depth);
        Ok(Self {
            xi: Matrix::new(nodes.len(), r, xi)?,
            nodes,
            root,
            depth,
        })
    }

    fn grow(
        psi_rows: &Matrix<T>,
        slice: &[usize],
        level: usize,
        nodes: &mut Vec<Node>,
        xi: &mut Vec<T>,
        depth: &mut usize,
    ) -> usize {
        *depth = (*depth).max(level);
        let r = psi_rows.cols();
        if let [leaf] = slice {
            nodes.push(Node::Leaf(*leaf));
            xi.extend_from_slice(psi_rows.row(*leaf));
            return nodes.len() - 1;
        }
        let mid = slice.len().div_ceil(2);
        let left = Self::grow(psi_rows, &slice[..mid], level + 1, nodes, xi, depth);
        let right = Self::grow(psi_rows, &slice[mid..], level + 1, nodes, xi, depth);
        for k in 0..r {
            let v = xi[left * r + k] + xi[right * r + k];
            xi.push(v);
        }
        nodes.push(Node::Inner { left, right });
        nodes.len() - 1
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.len().div_ceil(2)
    }

    /// Longest root-to-leaf path, `⌈log₂ N⌉`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn root_aggregate(&self) -> &[T] {
        self.xi.row(self.root)
    }

    /// Leaf action indices in tree order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_leaves());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            match self.nodes[v] {
                Node::Leaf(i) => out.push(i),
                Node::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// Largest `|ξ(v) - ξ(left) - ξ(right)|` over internal nodes.
    pub fn aggregate_residual(&self) -> T {
        let mut worst = T::zero();
        for (v, node) in self.nodes.iter().enumerate() {
            if let Node::Inner { left, right } = *node {
                for ((&p, &l), &r) in self.xi.row(v).iter().zip(self.xi.row(left)).zip(self.xi.row(right)) {
                    worst = worst.max((p - l - r).abs());
                }
            }
        }
        worst
    }

    fn branch_weights(&self, v: usize, left: usize, right: usize, psi_state: &[T]) -> Result<(f64, f64)> {
        let a = dot(psi_state, self.xi.row(left)).to_f64_lossy();
        let b = dot(psi_state, self.xi.row(right)).to_f64_lossy();
        let total = a + b;
        if !(total.is_finite() && total > 0.0) || a < 0.0 || b < 0.0 {
            return Err(Error::DegenerateBranch { node: v });
        }
        Ok((a, b))
    }

    /// Samples a leaf; also returns the number of binary decisions taken.
    pub fn sample_traced(&self, psi_state: &[T], rng: &mut Rng) -> Result<(usize, usize)> {
        if psi_state.len() != self.xi.cols() {
            return Err(Error::shape(format!(
                "state features have width {}, tree holds {}",
                psi_state.len(),
                self.xi.cols()
            )));
        }
        let mut v = self.root;
        let mut decisions = 0;
        loop {
            match self.nodes[v] {
                Node::Leaf(i) => return Ok((i, decisions)),
                Node::Inner { left, right } => {
                    let (a, b) = self.branch_weights(v, left, right, psi_state)?;
                    v = if rng.uniform() * (a + b) < a { left } else { right };
                    decisions += 1;
                }
            }
        }
    }

    pub fn sample(&self, psi_state: &[T], rng: &mut Rng) -> Result<usize> {
        self.sample_traced(psi_state, rng).map(|(i, _)| i)
    }

    /// Probability of reaching each action's leaf, as a product of branch
    /// probabilities along its path.
    pub fn path_probabilities(&self, psi_state: &[T]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_leaves()];
        let mut stack = vec![(self.root, 1.0f64)];
        while let Some((v, p)) = stack.pop() {
            match self.nodes[v] {
                Node::Leaf(i) => out[i] = p,
                Node::Inner { left, right } => {
                    let (a, b) = self.branch_weights(v, left, right, psi_state)?;
                    stack.push((left, p * (a / (a + b))));
                    stack.push((right, p * (b / (a + b))));
                }
            }
        }
        Ok(out)
    }
}

pub fn build_tree<T: Real>(psi_rows: &Matrix<T>, rng: &mut Rng) -> Result<RftTree<T>> {
    RftTree::build(psi_rows, rng)
}

pub fn sample_action<T: Real>(tree: &RftTree<T>, psi_state: &[T], rng: &mut Rng) -> Result<usize> {
    tree.sample(psi_state, rng)
}

/// `p_i ∝ psi_stateᵀψ(a_i)`: the distribution the tree realizes.
pub fn flat_distribution<T: Real>(psi_rows: &Matrix<T>, psi_state: &[T]) -> Result<Vec<f64>> {
    let w: Vec<f64> = psi_rows.matvec(psi_state)?.into_iter().map(Real::to_f64_lossy).collect();
    let total: f64 = w.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::ZeroNormalizer);
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Softmax over `z = latents · state_latent`.
pub fn exact_softmax_distribution<T: Real>(latents: &Matrix<T>, state_latent: &[T]) -> Result<Vec<f64>> {
    crate::policy::softmax_probabilities(state_latent, latents)
}

/// Features, tree and the action latents they were built from.
#[derive(Clone, Debug)]
pub struct RftSampler<T: Real = f64> {
    features: FavorFeatures<T>,
    tree: RftTree<T>,
}

impl<T: Real> RftSampler<T> {
    pub fn build(latents: &Matrix<T>, num_features: usize, rng: &mut Rng) -> Result<Self> {
        let features = FavorFeatures::new(num_features, latents.cols(), true, rng)?;
        let (psi, _) = features.psi_rows(latents)?;
        let tree = RftTree::build(&psi, rng)?;
        Ok(Self { features, tree })
    }

    pub fn tree(&self) -> &RftTree<T> {
        &self.tree
    }

    pub fn features(&self) -> &FavorFeatures<T> {
        &self.features
    }

    pub fn sample(&self, state_latent: &[T], rng: &mut Rng) -> Result<usize> {
        let psi = self.features.psi_normalized(state_latent)?;
        self.tree.sample(&psi, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm;

    fn random_positive(n: usize, r: usize, rng: &mut Rng) -> Matrix {
        let data = (0..n * r).map(|_| rng.uniform() + 0.01).collect();
        Matrix::new(n, r, data).unwrap()
    }

    #[test]
    fn psi_at_origin() {
        let f: FavorFeatures = FavorFeatures::new(16, 3, false, &mut Rng::new(0)).unwrap();
        let p = f.psi(&[0.0; 3]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!((dot(&p, &p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psi_overflow_detected() {
        let f: FavorFeatures = FavorFeatures::from_projections(Matrix::from_rows(&[vec![1000.0]]).unwrap()).unwrap();
        assert!(matches!(f.psi(&[1.5]), Err(Error::FeatureOverflow)));
        assert!(f.psi_normalized(&[1.5]).unwrap()[0].is_finite());
    }

    #[test]
    fn psi_estimates_softmax_kernel() {
        let mut rng = Rng::new(17);
        let f: FavorFeatures = FavorFeatures::new(100_000, 3, false, &mut rng).unwrap();
        let x = [0.6, 0.8, 0.0];
        let px = f.psi(&x).unwrap();
        let k = dot(&px, &px);
        assert!((k - std::f64::consts::E).abs() < 0.15, "{k}");
        let y = [0.0, 0.0, 1.0];
        let k = dot(&px, &f.psi(&y).unwrap());
        assert!((k - 1.0).abs() < 0.05, "{k}");
    }

    #[test]
    fn small_trees() {
        let mut rng = Rng::new(1);
        let one = random_positive(1, 4, &mut rng);
        let t = RftTree::build(&one, &mut rng).unwrap();
        assert_eq!(t.root_aggregate(), one.row(0));
        assert_eq!(t.depth(), 0);
        assert_eq!(t.sample(&[1.0; 4], &mut rng).unwrap(), 0);

        let two = random_positive(2, 4, &mut rng);
        let t = RftTree::build(&two, &mut rng).unwrap();
        assert_eq!(t.root_aggregate(), two.column_sums().as_slice());
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn eight_leaves() {
        let mut rng = Rng::new(2);
        let rows = random_positive(8, 5, &mut rng);
        let t = RftTree::build(&rows, &mut rng).unwrap();
        assert_eq!(t.depth(), 3);
        let sums = rows.column_sums();
        for (a, b) in t.root_aggregate().iter().zip(&sums) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut leaves = t.leaves();
        leaves.sort();
        assert_eq!(leaves, (0..8).collect::<Vec<_>>());
        assert!(t.aggregate_residual() < 1e-12);
    }

    #[test]
    fn uneven_sizes() {
        let mut rng = Rng::new(3);
        for n in [3usize, 5, 6, 7, 9, 100] {
            let rows = random_positive(n, 2, &mut rng);
            let t = RftTree::build(&rows, &mut rng).unwrap();
            assert_eq!(t.depth(), n.next_power_of_two().trailing_zeros() as usize);
            let mut leaves = t.leaves();
            leaves.sort();
            assert_eq!(leaves, (0..n).collect::<Vec<_>>());
            let p = t.path_probabilities(&[1.0, 1.0]).unwrap();
            let q = flat_distribution(&rows, &[1.0, 1.0]).unwrap();
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_leaf_branch_probability() {
        // ψ(s)ᵀψ(a_0) = 1, ψ(s)ᵀψ(a_1) = 3
        let rows = Matrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let mut rng = Rng::new(4);
        let t = RftTree::build(&rows, &mut rng).unwrap();
        let p = t.path_probabilities(&[1.0]).unwrap();
        assert_eq!(p, vec![0.25, 0.75]);
        let n = 100_000;
        let zeros = (0..n).filter(|_| t.sample(&[1.0], &mut rng).unwrap() == 0).count();
        assert!((zeros as f64 / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn identical_actions_sample_uniformly() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let rows = Matrix::from_rows(&vec![vec![0.3, 0.7]; 8]).unwrap();
        let mut rng = Rng::new(5);
        let t = RftTree::build(&rows, &mut rng).unwrap();
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let (i, decisions) = t.sample_traced(&[0.5, 0.5], &mut rng).unwrap();
            assert_eq!(decisions, 3);
            counts[i] += 1;
        }
        let e = n as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(1.0 - ChiSquared::new(7.0).unwrap().cdf(chi2) > 0.01, "chi2 {chi2}");
    }

    #[test]
    fn degenerate_branch_errors() {
        let rows = Matrix::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
        let t = RftTree::build(&rows, &mut Rng::new(0)).unwrap();
        assert!(matches!(t.sample(&[1.0], &mut Rng::new(0)), Err(Error::DegenerateBranch { .. })));
        assert!(matches!(flat_distribution(&rows, &[1.0]), Err(Error::ZeroNormalizer)));
    }

    #[test]
    fn flat_distribution_examples() {
        let one = Matrix::from_rows(&[vec![2.0, 1.0]]).unwrap();
        assert_eq!(flat_distribution(&one, &[0.5, 0.5]).unwrap(), vec![1.0]);
        let two = Matrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(flat_distribution(&two, &[1.0]).unwrap(), vec![0.25, 0.75]);
        let mut rng = Rng::new(6);
        let rows = random_positive(16, 7, &mut rng);
        let s: Vec<f64> = (0..7).map(|_| rng.uniform()).collect();
        let p = flat_distribution(&rows, &s).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_softmax_examples() {
        let l = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        for p in exact_softmax_distribution(&l, &[0.4]).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let l = Matrix::from_rows(&[vec![0.0], vec![3.0f64.ln()]]).unwrap();
        let p = exact_softmax_distribution(&l, &[1.0]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn shifted_features_preserve_distribution() {
        let mut rng = Rng::new(7);
        let f: FavorFeatures = FavorFeatures::new(32, 3, true, &mut rng).unwrap();
        let latents: Matrix = gaussian_matrix(10, 3, &mut rng).unwrap();
        let s = [0.3, -0.2, 0.9];
        let raw: Vec<Vec<f64>> = latents.iter_rows().map(|x| f.psi(x).unwrap()).collect();
        let raw = Matrix::from_rows(&raw).unwrap();
        let (shifted, _) = f.psi_rows(&latents).unwrap();
        let p = flat_distribution(&raw, &f.psi(&s).unwrap()).unwrap();
        let q = flat_distribution(&shifted, &f.psi_normalized(&s).unwrap()).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sampler_prefers_aligned_actions() {
        let mut rng = Rng::new(8);
        let latents = Matrix::from_rows(&[vec![1.5, 0.0], vec![-1.5, 0.0], vec![0.0, 0.0]]).unwrap();
        let s = RftSampler::build(&latents, 1024, &mut rng).unwrap();
        let hits = (0..2000).filter(|_| s.sample(&[1.0, 0.0], &mut rng).unwrap() == 0).count();
        // exact softmax gives e^1.5 / (e^1.5 + e^-1.5 + 1) ≈ 0.79
        assert!(hits > 1400, "{hits}");
        assert!(norm(s.tree().root_aggregate()) > 0.0);
    }
}
