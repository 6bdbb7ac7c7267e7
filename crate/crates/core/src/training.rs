//! Forest training and encoding.
//!
//! Each tree is a complete depth-`d` binary tree trained on its own
//! without-replacement subsample. At every internal node the classes present
//! are randomly bipartitioned into two super-groups, and a split learner
//! (stump or subspace) is fitted to separate them. Encoding pushes a point
//! from the root to a leaf and sets the bit of every non-root node visited.

pub(crate) mod batch;
pub mod splitter;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hashcore::{BitVec, PathCode, TreeShape};
use splitter::{Branch, SplitModel};

/// Split learner family used at every internal node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Splitter {
    Stump,
    Subspace,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub depth: u32,
    pub splitter: Splitter,
    /// Max principal components per subspace group.
    pub subspace_rank: usize,
    /// Without-replacement per-tree sample fraction, in (0, 1].
    pub sample_fraction: f64,
    /// Random (feature, threshold) candidates per stump fit.
    pub stump_candidates: usize,
    /// Nodes with fewer samples become passthroughs.
    pub min_node_samples: usize,
    pub master_seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            num_trees: 64,
            depth: 3,
            splitter: Splitter::Subspace,
            subspace_rank: 3,
            sample_fraction: 0.5,
            stump_candidates: 100,
            min_node_samples: 4,
            master_seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::config("num_trees must be >= 1".to_string()));
        }
        TreeShape::new(self.depth)?;
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::config(format!(
                "sample_fraction must be in (0, 1], got {}",
                self.sample_fraction
            )));
        }
        if self.stump_candidates == 0 {
            return Err(Error::config("stump_candidates must be >= 1".to_string()));
        }
        if self.min_node_samples < 2 {
            return Err(Error::config("min_node_samples must be >= 2".to_string()));
        }
        if self.splitter == Splitter::Subspace && self.subspace_rank > feature_dim {
            return Err(Error::config(format!(
                "subspace_rank {} exceeds feature dimension {}",
                self.subspace_rank, feature_dim
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> TreeShape {
        TreeShape::new(self.depth).expect("validated depth")
    }
}

/// Row-major feature matrix with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Option<Vec<u32>>,
    num_classes: u32,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Option<Vec<u32>>) -> Result<Self> {
        if dim == 0 && !features.is_empty() {
            return Err(Error::validation(
                "feature dimension 0 with nonempty data".to_string(),
            ));
        }
        let n = if dim == 0 { 0 } else { features.len() / dim };
        if dim != 0 && features.len() % dim != 0 {
            return Err(Error::validation(format!(
                "feature buffer length {} is not a multiple of dimension {}",
                features.len(),
                dim
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite feature value at row {}, column {}",
                pos / dim.max(1),
                pos % dim.max(1)
            )));
        }
        let num_classes = match &labels {
            Some(l) => {
                if l.len() != n {
                    return Err(Error::validation(format!(
                        "label count {} does not match sample count {}",
                        l.len(),
                        n
                    )));
                }
                l.iter().max().map_or(0, |&m| m + 1)
            }
            None => 0,
        };
        Ok(Dataset {
            features,
            dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.features.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Number of distinct class ids assuming ids are dense; equals max+1.
    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }
}

/// One trained tree: split models for the internal nodes in heap order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    shape: TreeShape,
    splits: Vec<SplitModel>,
}

impl Tree {
    pub fn new(shape: TreeShape, splits: Vec<SplitModel>) -> Result<Self> {
        if splits.len() != shape.internal_count() {
            return Err(Error::validation(format!(
                "tree of depth {} needs {} splits, got {}",
                shape.depth(),
                shape.internal_count(),
                splits.len()
            )));
        }
        Ok(Tree { shape, splits })
    }

    pub fn shape(&self) -> TreeShape {
        self.shape
    }

    pub fn splits(&self) -> &[SplitModel] {
        &self.splits
    }
}

/// A trained forest; immutable after training and shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    config: ForestConfig,
    feature_dim: usize,
    trees: Vec<Tree>,
}

impl Forest {
    pub fn from_parts(config: ForestConfig, feature_dim: usize, trees: Vec<Tree>) -> Result<Self> {
        if trees.len() != config.num_trees {
            return Err(Error::validation(format!(
                "forest expects {} trees, got {}",
                config.num_trees,
                trees.len()
            )));
        }
        let shape = config.shape();
        if trees.iter().any(|t| t.shape() != shape) {
            return Err(Error::validation(
                "all trees must share the configured shape".to_string(),
            ));
        }
        Ok(Forest {
            config,
            feature_dim,
            trees,
        })
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn shape(&self) -> TreeShape {
        self.config.shape()
    }
}

/// All path codes one tree assigns to a dataset (one code per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBlock {
    shape: TreeShape,
    codes: Vec<PathCode>,
}

impl CodeBlock {
    pub fn new(shape: TreeShape, codes: Vec<PathCode>) -> Self {
        CodeBlock { shape, codes }
    }

    pub fn shape(&self) -> TreeShape {
        self.shape
    }

    pub fn codes(&self) -> &[PathCode] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Per-tree seed derivation (splitmix64-style finalizer), so results do not
/// depend on the parallel schedule.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains `config.num_trees` trees, each on its own seeded subsample.
/// The result is identical for a fixed master seed regardless of how the
/// per-tree work is scheduled.
pub fn train_forest(data: &Dataset, config: &ForestConfig) -> Result<Forest> {
    if data.is_empty() {
        return Err(Error::validation("cannot train on an empty dataset".to_string()));
    }
    let labels = data
        .labels()
        .ok_or_else(|| Error::validation("training requires labels".to_string()))?;
    config.validate(data.dim())?;
    let mut distinct: Vec<u32> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::config(
            "training requires at least 2 classes".to_string(),
        ));
    }
    if data.len() < config.min_node_samples {
        return Err(Error::validation(format!(
            "dataset has {} samples, below min_node_samples {}",
            data.len(),
            config.min_node_samples
        )));
    }

    let trees: Result<Vec<Tree>> = (0..config.num_trees)
        .into_par_iter()
        .map(|i| train_tree(data, labels, config, derive_seed(config.master_seed, i as u64)))
        .collect();
    Forest::from_parts(config.clone(), data.dim(), trees?)
}

fn train_tree(data: &Dataset, labels: &[u32], config: &ForestConfig, seed: u64) -> Result<Tree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = config.shape();
    let n = data.len();
    let take = ((config.sample_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut sample: Vec<u32> = rand::seq::index::sample(&mut rng, n, take)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    sample.sort_unstable();

    // Breadth-first over internal nodes; children inherit the routed rows.
    let total_nodes = 2 * shape.leaf_count() - 1;
    let mut node_rows: Vec<Vec<u32>> = vec![Vec::new(); total_nodes];
    node_rows[0] = sample;
    let mut splits = Vec::with_capacity(shape.internal_count());
    for h in 0..shape.internal_count() {
        let rows = std::mem::take(&mut node_rows[h]);
        let split = fit_node(data, labels, &rows, config, &mut rng);
        let (left, right) = partition_rows(&split, data, &rows)?;
        node_rows[2 * h + 1] = left;
        node_rows[2 * h + 2] = right;
        splits.push(split);
    }
    Tree::new(shape, splits)
}

fn fit_node<R: Rng>(
    data: &Dataset,
    labels: &[u32],
    rows: &[u32],
    config: &ForestConfig,
    rng: &mut R,
) -> SplitModel {
    if rows.len() < config.min_node_samples {
        return SplitModel::Passthrough { branch: Branch::Left };
    }
    let mut classes: Vec<u32> = rows.iter().map(|&r| labels[r as usize]).collect();
    classes.sort_unstable();
    classes.dedup();
    let (group_left, group_right) =
        bipartition_classes(&classes, rng).expect("node has at least one class");
    if group_right.is_empty() {
        return SplitModel::Passthrough { branch: Branch::Left };
    }
    let mut is_left_class = vec![false; data.num_classes() as usize];
    for &c in &group_left {
        is_left_class[c as usize] = true;
    }
    let group_of: Vec<u8> = rows
        .iter()
        .map(|&r| u8::from(!is_left_class[labels[r as usize] as usize]))
        .collect();
    match config.splitter {
        Splitter::Stump => splitter::fit_stump(data, rows, &group_of, config.stump_candidates, rng),
        Splitter::Subspace => splitter::fit_subspace(data, rows, &group_of, config.subspace_rank),
    }
}

fn partition_rows(split: &SplitModel, data: &Dataset, rows: &[u32]) -> Result<(Vec<u32>, Vec<u32>)> {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &r in rows {
        match split.route(data.row(r as usize))? {
            Branch::Left => left.push(r),
            Branch::Right => right.push(r),
        }
    }
    Ok((left, right))
}

/// Randomly partitions the classes at a node into two non-empty groups.
/// A single class comes back as `(class, empty)`; the caller then emits a
/// passthrough split.
pub fn bipartition_classes<R: Rng>(classes: &[u32], rng: &mut R) -> Result<(Vec<u32>, Vec<u32>)> {
    if classes.is_empty() {
        return Err(Error::validation(
            "cannot bipartition an empty class set".to_string(),
        ));
    }
    if classes.len() == 1 {
        return Ok((classes.to_vec(), Vec::new()));
    }
    let mut shuffled = classes.to_vec();
    shuffled.shuffle(rng);
    let cut = rng.gen_range(1..shuffled.len());
    let mut left = shuffled[..cut].to_vec();
    let mut right = shuffled[cut..].to_vec();
    left.sort_unstable();
    right.sort_unstable();
    Ok((left, right))
}

/// Pushes `x` through one tree, setting the bit of every non-root node
/// visited; the result always has exactly `d - 1` ones.
pub fn encode_point(tree: &Tree, x: &[f64]) -> Result<PathCode> {
    let shape = tree.shape();
    let mut bits = BitVec::zeroed(shape.node_count());
    let mut h = 0usize;
    for _ in 0..shape.path_ones() {
        let child = match tree.splits()[h].route(x)? {
            Branch::Left => 2 * h + 1,
            Branch::Right => 2 * h + 2,
        };
        bits.set(child - 1, true);
        h = child;
    }
    Ok(PathCode::from_bits_unchecked(bits))
}

/// Pushes `x` through every tree of the forest.
pub fn encode_forest(forest: &Forest, x: &[f64]) -> Result<Vec<PathCode>> {
    if x.len() != forest.feature_dim() {
        return Err(Error::validation(format!(
            "point dimension {} does not match forest dimension {}",
            x.len(),
            forest.feature_dim()
        )));
    }
    forest.trees().iter().map(|t| encode_point(t, x)).collect()
}

/// Encodes every dataset row under every tree; block `i` holds tree `i`'s
/// codes for all rows. Batched over rows, parallel, deterministic.
pub fn encode_dataset(forest: &Forest, data: &Dataset) -> Result<Vec<CodeBlock>> {
    let leaves = batch::forest_leaves(forest, data)?;
    let shape = forest.shape();
    leaves
        .into_par_iter()
        .map(|tree_leaves| {
            let codes: Result<Vec<PathCode>> = tree_leaves
                .iter()
                .map(|&l| crate::hashcore::leaf_to_path(l as usize, shape))
                .collect();
            Ok(CodeBlock::new(shape, codes?))
        })
        .collect()
}
