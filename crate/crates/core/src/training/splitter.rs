//! Split learners for tree nodes: decision stumps picked by randomized
//! search over information gain, and per-group subspace models routed by
//! minimum reconstruction residual.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::training::Dataset;

/// Which child a split sends a point to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Left,
    Right,
}

/// A fitted split at one internal tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitModel {
    /// Axis-aligned split: left iff `x[feature] <= threshold`.
    Stump { feature: usize, threshold: f64 },
    /// Per-branch PCA subspace; left iff the left residual is <= the right.
    Subspace(Box<SubspaceSplit>),
    /// Degenerate node: routes everything to one branch.
    Passthrough { branch: Branch },
}

/// Two group models plus the cached quantities routing needs.
///
/// Routing compares squared residuals; the shared `||x||^2` term cancels, so
/// the decision reduces to dot products of `x` against the mean difference
/// and the basis rows:
/// `score_L - score_R = -2 (mu_L - mu_R).x + (|mu_L|^2 - |mu_R|^2)
///                      - sum_j ((u_Lj.x) - u_Lj.mu_L)^2
///                      + sum_j ((u_Rj.x) - u_Rj.mu_R)^2`,
/// left iff the difference is <= 0. For identical groups every term cancels
/// exactly, so ties go left.
#[derive(Debug, Clone)]
pub struct SubspaceSplit {
    left: GroupModel,
    right: GroupModel,
    mean_diff: Vec<f64>,
    mean_norm_diff: f64,
    proj_left: Vec<f64>,
    proj_right: Vec<f64>,
}

impl SubspaceSplit {
    pub fn new(left: GroupModel, right: GroupModel) -> Self {
        let mean_diff: Vec<f64> = left
            .mean()
            .iter()
            .zip(right.mean())
            .map(|(a, b)| a - b)
            .collect();
        let mean_norm_diff = dot(left.mean(), left.mean()) - dot(right.mean(), right.mean());
        let proj = |g: &GroupModel| -> Vec<f64> {
            (0..g.rank()).map(|j| dot(g.basis_component(j), g.mean())).collect()
        };
        let proj_left = proj(&left);
        let proj_right = proj(&right);
        SubspaceSplit {
            left,
            right,
            mean_diff,
            mean_norm_diff,
            proj_left,
            proj_right,
        }
    }

    pub fn left(&self) -> &GroupModel {
        &self.left
    }

    pub fn right(&self) -> &GroupModel {
        &self.right
    }

    fn route_left(&self, x: &[f64]) -> bool {
        let mut diff = -2.0 * dot(&self.mean_diff, x) + self.mean_norm_diff;
        for (j, &c) in self.proj_left.iter().enumerate() {
            let g = dot(self.left.basis_component(j), x) - c;
            diff -= g * g;
        }
        for (j, &c) in self.proj_right.iter().enumerate() {
            let g = dot(self.right.basis_component(j), x) - c;
            diff += g * g;
        }
        diff <= 0.0
    }

    /// Lane-batched [`route_left`](Self::route_left): identical per-lane
    /// operation order, so it matches the scalar path bit for bit.
    pub(crate) fn route_left_block(
        &self,
        block: &crate::training::batch::FeatureBlock,
        go_left: &mut [bool; crate::training::batch::LANES],
        scratch: &mut [f64; crate::training::batch::LANES],
        diff: &mut [f64; crate::training::batch::LANES],
    ) {
        block.dot_all(&self.mean_diff, scratch);
        for b in 0..go_left.len() {
            diff[b] = -2.0 * scratch[b] + self.mean_norm_diff;
        }
        for (j, &c) in self.proj_left.iter().enumerate() {
            block.dot_all(self.left.basis_component(j), scratch);
            for b in 0..go_left.len() {
                let g = scratch[b] - c;
                diff[b] -= g * g;
            }
        }
        for (j, &c) in self.proj_right.iter().enumerate() {
            block.dot_all(self.right.basis_component(j), scratch);
            for b in 0..go_left.len() {
                let g = scratch[b] - c;
                diff[b] += g * g;
            }
        }
        for b in 0..go_left.len() {
            go_left[b] = diff[b] <= 0.0;
        }
    }
}

/// Cached routing fields are pure functions of the groups.
impl PartialEq for SubspaceSplit {
    fn eq(&self, other: &Self) -> bool {
        self.left == other.left && self.right == other.right
    }
}

/// Unrolled dot product: four independent accumulators, fixed summation
/// order, vectorizes without reassociation.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (a4, a_rest) = a.split_at(a.len() - a.len() % 4);
    let (b4, b_rest) = b.split_at(a4.len());
    for (ca, cb) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in a_rest.iter().zip(b_rest) {
        tail += x * y;
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// `sum_i u[i] * (x[i] - m[i])`, same accumulator scheme as [`dot`].
fn dot_diff(u: &[f64], x: &[f64], m: &[f64]) -> f64 {
    debug_assert!(u.len() == x.len() && x.len() == m.len());
    let n4 = u.len() - u.len() % 4;
    let mut acc = [0.0f64; 4];
    for i in (0..n4).step_by(4) {
        let (u, x, m) = (&u[i..i + 4], &x[i..i + 4], &m[i..i + 4]);
        acc[0] += u[0] * (x[0] - m[0]);
        acc[1] += u[1] * (x[1] - m[1]);
        acc[2] += u[2] * (x[2] - m[2]);
        acc[3] += u[3] * (x[3] - m[3]);
    }
    let mut tail = 0.0;
    for i in n4..u.len() {
        tail += u[i] * (x[i] - m[i]);
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// `sum_i (x[i] - m[i])^2`, same accumulator scheme as [`dot`].
fn diff_norm_sq(x: &[f64], m: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), m.len());
    let n4 = x.len() - x.len() % 4;
    let mut acc = [0.0f64; 4];
    for i in (0..n4).step_by(4) {
        let (x, m) = (&x[i..i + 4], &m[i..i + 4]);
        let d0 = x[0] - m[0];
        let d1 = x[1] - m[1];
        let d2 = x[2] - m[2];
        let d3 = x[3] - m[3];
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
        acc[2] += d2 * d2;
        acc[3] += d3 * d3;
    }
    let mut tail = 0.0;
    for i in n4..x.len() {
        let d = x[i] - m[i];
        tail += d * d;
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Mean and orthonormal principal basis of one sample group. The basis is
/// stored row-per-component (each row has the feature dimension).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupModel {
    mean: Vec<f64>,
    basis: Vec<f64>,
}

impl GroupModel {
    pub fn from_parts(mean: Vec<f64>, basis: Vec<f64>) -> Result<Self> {
        if !mean.is_empty() && basis.len() % mean.len() != 0 {
            return Err(Error::validation(
                "basis length is not a multiple of the feature dimension".to_string(),
            ));
        }
        Ok(GroupModel { mean, basis })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        if self.mean.is_empty() {
            0
        } else {
            self.basis.len() / self.mean.len()
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis_component(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.basis[j * d..(j + 1) * d]
    }

    /// Squared distance from `x` to its projection onto the affine subspace
    /// `mean + span(basis)`: `||r||^2 - sum_j (u_j . r)^2` with `r = x - mean`.
    pub fn residual_sq(&self, x: &[f64]) -> f64 {
        let mut acc = diff_norm_sq(x, &self.mean);
        for j in 0..self.rank() {
            let g = dot_diff(self.basis_component(j), x, &self.mean);
            acc -= g * g;
        }
        acc.max(0.0)
    }

    /// Fits mean + top principal directions of the rows, keeping at most
    /// `max_rank` components and dropping near-zero-variance directions.
    pub fn fit(data: &Dataset, rows: &[u32], max_rank: usize) -> Self {
        let dim = data.dim();
        let n = rows.len();
        assert!(n >= 1, "group must have at least one sample");

        let mut mean = vec![0.0f64; dim];
        for &r in rows {
            for (m, &v) in mean.iter_mut().zip(data.row(r as usize)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }

        let target = max_rank.min(n.saturating_sub(1)).min(dim);
        if target == 0 {
            return GroupModel { mean, basis: Vec::new() };
        }

        // Centered sample matrix, rows = samples.
        let xc = DMatrix::from_fn(n, dim, |i, j| data.row(rows[i] as usize)[j] - mean[j]);

        // Eigendecompose the smaller of the Gram (n x n) and scatter
        // (dim x dim) matrices; both share the top spectrum.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(target);
        if n <= dim {
            let gram = &xc * xc.transpose();
            let eig = gram.symmetric_eigen();
            let order = sorted_desc(eig.eigenvalues.as_slice());
            let lambda_max = eig.eigenvalues[order[0]].max(0.0);
            for &idx in order.iter().take(target) {
                let lambda = eig.eigenvalues[idx];
                if !keep_eigenvalue(lambda, lambda_max) {
                    break;
                }
                let v = eig.eigenvectors.column(idx);
                let sigma = lambda.sqrt();
                // u = Xc^T v / sigma
                let mut u = vec![0.0f64; dim];
                for i in 0..n {
                    let w = v[i] / sigma;
                    let row = xc.row(i);
                    for j in 0..dim {
                        u[j] += w * row[j];
                    }
                }
                basis.push(u);
            }
        } else {
            let scatter = xc.tr_mul(&xc);
            let eig = scatter.symmetric_eigen();
            let order = sorted_desc(eig.eigenvalues.as_slice());
            let lambda_max = eig.eigenvalues[order[0]].max(0.0);
            for &idx in order.iter().take(target) {
                let lambda = eig.eigenvalues[idx];
                if !keep_eigenvalue(lambda, lambda_max) {
                    break;
                }
                basis.push(eig.eigenvectors.column(idx).iter().copied().collect());
            }
        }

        let basis = orthonormalize(basis, dim);
        GroupModel {
            mean,
            basis: basis.into_iter().flatten().collect(),
        }
    }
}

fn keep_eigenvalue(lambda: f64, lambda_max: f64) -> bool {
    lambda > (lambda_max * 1e-12).max(1e-18)
}

fn sorted_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Modified Gram-Schmidt; drops components that lose rank.
fn orthonormalize(mut vs: Vec<Vec<f64>>, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
    for v in vs.iter_mut() {
        for u in &out {
            let dot: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            for i in 0..dim {
                v[i] -= dot * u[i];
            }
        }
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for a in v.iter_mut() {
                *a /= norm;
            }
            out.push(std::mem::take(v));
        }
    }
    out
}

impl SplitModel {
    /// Deterministic routing. Stump boundary goes left; subspace residual
    /// ties go left.
    pub fn route(&self, x: &[f64]) -> Result<Branch> {
        match self {
            SplitModel::Stump { feature, threshold } => {
                if *feature >= x.len() {
                    return Err(Error::validation(format!(
                        "stump feature {} out of range for {}-dim point",
                        feature,
                        x.len()
                    )));
                }
                Ok(if x[*feature] <= *threshold {
                    Branch::Left
                } else {
                    Branch::Right
                })
            }
            SplitModel::Subspace(s) => {
                if s.left().dim() != x.len() || s.right().dim() != x.len() {
                    return Err(Error::validation(format!(
                        "subspace split expects {}-dim point, got {}",
                        s.left().dim(),
                        x.len()
                    )));
                }
                Ok(if s.route_left(x) {
                    Branch::Left
                } else {
                    Branch::Right
                })
            }
            SplitModel::Passthrough { branch } => Ok(*branch),
        }
    }
}

/// Information gain (bits) of a binary split over the two group labels:
/// `H(parent) - (n_l/n) H(left) - (n_r/n) H(right)`. Always in [0, 1].
pub fn info_gain(
    parent_counts: (usize, usize),
    left_counts: (usize, usize),
    right_counts: (usize, usize),
) -> f64 {
    debug_assert_eq!(parent_counts.0, left_counts.0 + right_counts.0);
    debug_assert_eq!(parent_counts.1, left_counts.1 + right_counts.1);
    let n = (parent_counts.0 + parent_counts.1) as f64;
    let nl = (left_counts.0 + left_counts.1) as f64;
    let nr = (right_counts.0 + right_counts.1) as f64;
    let gain = binary_entropy(parent_counts) - (nl / n) * binary_entropy(left_counts)
        - (nr / n) * binary_entropy(right_counts);
    gain.max(0.0)
}

fn binary_entropy((a, b): (usize, usize)) -> f64 {
    let n = a + b;
    if n == 0 || a == 0 || b == 0 {
        return 0.0;
    }
    let pa = a as f64 / n as f64;
    let pb = b as f64 / n as f64;
    -(pa * pa.log2() + pb * pb.log2())
}

/// Picks the best of `candidates` random (feature, threshold) stumps by
/// information gain over the binary group labels. Ties keep the first
/// candidate evaluated. Returns a passthrough when every node sample is
/// identical.
pub fn fit_stump<R: Rng>(
    data: &Dataset,
    rows: &[u32],
    group_of: &[u8],
    candidates: usize,
    rng: &mut R,
) -> SplitModel {
    debug_assert_eq!(rows.len(), group_of.len());
    let dim = data.dim();

    let first = data.row(rows[0] as usize);
    let identical = rows
        .iter()
        .all(|&r| data.row(r as usize).iter().zip(first).all(|(a, b)| a == b));
    if identical {
        return SplitModel::Passthrough { branch: Branch::Left };
    }

    let parent = count_groups(group_of);
    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    for _ in 0..candidates {
        let feature = rng.gen_range(0..dim);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &r in rows {
            let v = data.row(r as usize)[feature];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let threshold = if lo == hi { lo } else { rng.gen_range(lo..hi) };

        let mut left = (0usize, 0usize);
        for (&r, &g) in rows.iter().zip(group_of) {
            if data.row(r as usize)[feature] <= threshold {
                if g == 0 {
                    left.0 += 1;
                } else {
                    left.1 += 1;
                }
            }
        }
        let right = (parent.0 - left.0, parent.1 - left.1);
        let gain = info_gain(parent, left, right);
        if best.map_or(true, |(bg, _, _)| gain > bg) {
            best = Some((gain, feature, threshold));
        }
    }
    let (_, feature, threshold) = best.expect("at least one candidate");
    SplitModel::Stump { feature, threshold }
}

/// Fits one PCA subspace per group; routing later compares reconstruction
/// residuals. A single-sample group gets an empty basis (distance to mean).
pub fn fit_subspace(data: &Dataset, rows: &[u32], group_of: &[u8], rank: usize) -> SplitModel {
    debug_assert_eq!(rows.len(), group_of.len());
    let left_rows: Vec<u32> = rows
        .iter()
        .zip(group_of)
        .filter(|(_, &g)| g == 0)
        .map(|(&r, _)| r)
        .collect();
    let right_rows: Vec<u32> = rows
        .iter()
        .zip(group_of)
        .filter(|(_, &g)| g == 1)
        .map(|(&r, _)| r)
        .collect();
    debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());
    SplitModel::Subspace(Box::new(SubspaceSplit::new(
        GroupModel::fit(data, &left_rows, rank),
        GroupModel::fit(data, &right_rows, rank),
    )))
}

fn count_groups(group_of: &[u8]) -> (usize, usize) {
    let ones = group_of.iter().filter(|&&g| g == 1).count();
    (group_of.len() - ones, ones)
}
