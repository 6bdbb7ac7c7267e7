//! Lane-batched encoding: routes blocks of 32 samples through a tree with
//! split weights kept hot in cache.
//!
//! Per-lane arithmetic replicates the scalar kernels in `splitter` exactly
//! (same accumulator split, same combination order), so batched and
//! per-point encodes produce identical codes bit for bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::training::splitter::SplitModel;
use crate::training::{Dataset, Forest, Tree};

pub(crate) const LANES: usize = 32;

/// Lane-major transpose of up to [`LANES`] dataset rows: feature `i` of
/// lane `b` sits at `feats[i * LANES + b]`. Unused lanes are zero-padded
/// and evaluated full-width, then discarded.
pub(crate) struct FeatureBlock {
    dim: usize,
    feats: Vec<f64>,
}

impl FeatureBlock {
    pub(crate) fn from_rows(data: &Dataset, start: usize, width: usize) -> Self {
        let dim = data.dim();
        let mut feats = vec![0.0f64; dim * LANES];
        for b in 0..width {
            let row = data.row(start + b);
            for (i, &v) in row.iter().enumerate() {
                feats[i * LANES + b] = v;
            }
        }
        FeatureBlock { dim, feats }
    }

    #[inline]
    pub(crate) fn feature(&self, i: usize, lane: usize) -> f64 {
        self.feats[i * LANES + lane]
    }

    /// Per-lane dot products against `w`, each lane matching the scalar
    /// `dot` kernel's summation order exactly (same four-way accumulator
    /// split, same combination order).
    pub(crate) fn dot_all(&self, w: &[f64], out: &mut [f64; LANES]) {
        debug_assert_eq!(w.len(), self.dim);
        let mut acc = [[0.0f64; LANES]; 4];
        let n4 = self.dim - self.dim % 4;
        for (wc, fc) in w[..n4]
            .chunks_exact(4)
            .zip(self.feats[..n4 * LANES].chunks_exact(4 * LANES))
        {
            for j in 0..4 {
                let wj = wc[j];
                let row = &fc[j * LANES..(j + 1) * LANES];
                for (a, &v) in acc[j].iter_mut().zip(row) {
                    *a += wj * v;
                }
            }
        }
        let mut tail = [0.0f64; LANES];
        for (&wi, row) in w[n4..]
            .iter()
            .zip(self.feats[n4 * LANES..].chunks_exact(LANES))
        {
            for (t, &v) in tail.iter_mut().zip(row) {
                *t += wi * v;
            }
        }
        for b in 0..LANES {
            out[b] = (acc[0][b] + acc[2][b]) + (acc[1][b] + acc[3][b]) + tail[b];
        }
    }
}

/// Leaf index per lane after routing the whole block through `tree`.
/// Caller must have checked the feature dimension.
pub(crate) fn tree_leaves(tree: &Tree, block: &FeatureBlock) -> [u16; LANES] {
    let shape = tree.shape();
    let mut node = [0usize; LANES];
    let mut go_left = [false; LANES];
    let mut scratch = [0.0f64; LANES];
    let mut diff = [0.0f64; LANES];
    for level in 0..shape.depth() - 1 {
        let lo = (1usize << level) - 1;
        let hi = (1usize << (level + 1)) - 1;
        for n in lo..hi {
            if !node.iter().any(|&h| h == n) {
                continue;
            }
            route_block(&tree.splits()[n], block, &mut go_left, &mut scratch, &mut diff);
            for b in 0..LANES {
                if node[b] == n {
                    node[b] = 2 * n + 1 + usize::from(!go_left[b]);
                }
            }
        }
    }
    let first_leaf = shape.first_leaf_heap();
    let mut leaves = [0u16; LANES];
    for b in 0..LANES {
        leaves[b] = (node[b] - first_leaf) as u16;
    }
    leaves
}

fn route_block(
    split: &SplitModel,
    block: &FeatureBlock,
    go_left: &mut [bool; LANES],
    scratch: &mut [f64; LANES],
    diff: &mut [f64; LANES],
) {
    match split {
        SplitModel::Stump { feature, threshold } => {
            for b in 0..LANES {
                go_left[b] = block.feature(*feature, b) <= *threshold;
            }
        }
        SplitModel::Subspace(s) => {
            s.route_left_block(block, go_left, scratch, diff);
        }
        SplitModel::Passthrough { branch } => {
            let left = *branch == crate::training::splitter::Branch::Left;
            go_left.fill(left);
        }
    }
}

/// Leaf ids for every (tree, row) pair: `result[tree][row]`. Parallel over
/// row blocks with ordered assembly, so the output is schedule-independent.
pub(crate) fn forest_leaves(forest: &Forest, data: &Dataset) -> Result<Vec<Vec<u16>>> {
    if !data.is_empty() && data.dim() != forest.feature_dim() {
        return Err(Error::validation(format!(
            "dataset dimension {} does not match forest dimension {}",
            data.dim(),
            forest.feature_dim()
        )));
    }
    let n = data.len();
    let m = forest.num_trees();
    if n == 0 {
        return Ok(vec![Vec::new(); m]);
    }
    let num_blocks = n.div_ceil(LANES);
    let per_block: Vec<Vec<[u16; LANES]>> = (0..num_blocks)
        .into_par_iter()
        .map(|bi| {
            let start = bi * LANES;
            let width = LANES.min(n - start);
            let block = FeatureBlock::from_rows(data, start, width);
            forest
                .trees()
                .iter()
                .map(|tree| tree_leaves(tree, &block))
                .collect()
        })
        .collect();
    let mut out = vec![vec![0u16; n]; m];
    for (bi, block_leaves) in per_block.iter().enumerate() {
        let start = bi * LANES;
        let width = LANES.min(n - start);
        for (t, lanes) in block_leaves.iter().enumerate() {
            out[t][start..start + width].copy_from_slice(&lanes[..width]);
        }
    }
    Ok(out)
}

