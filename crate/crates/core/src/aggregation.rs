//! Code aggregation: estimate mutual information between per-tree code
//! blocks (and class labels) and greedily pick the k blocks whose
//! concatenation forms the final hash.
//!
//! Path codes biject with leaf ids, so each block is recoded as a small
//! categorical variable and all entropies use plug-in (maximum-likelihood)
//! estimates in bits. The selection objective is the pairwise cross sum
//!
//! `J(S) = sum_{i in S, j not in S} I(B_i; B_j) + lambda * sum_{i in S} I(B_i; C)`
//!
//! which is evaluated exactly and maximized greedily; an exhaustive
//! maximizer over all k-subsets serves as the test oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hashcore::path_to_leaf;
use crate::training::CodeBlock;

/// A code block recoded as leaf indices: one value in `[0, 2^(d-1))` per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafVariable {
    values: Vec<u16>,
    arity: usize,
}

impl LeafVariable {
    pub fn new(values: Vec<u16>, arity: usize) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|&&v| v as usize >= arity) {
            return Err(Error::validation(format!(
                "leaf value {bad} outside arity {arity}"
            )));
        }
        Ok(LeafVariable { values, arity })
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How blocks are chosen for the final hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMethod {
    /// Greedy mutual-information maximization.
    Mi,
    /// Uniform random k-subset (the baseline scheme).
    Random,
}

/// Aggregation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationConfig {
    /// Target hash length in bits; the effective length is
    /// `floor(target_bits / block_bits) * block_bits`.
    pub target_bits: usize,
    /// Weight of the label term.
    pub lambda: f64,
    pub method: SelectionMethod,
    /// Fraction of samples (a deterministic prefix) used for the
    /// block-block term; 1.0 means all samples. The label term always uses
    /// all labeled rows, so the two terms can be fed different samples.
    pub mi_sample_split: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            target_bits: 36,
            lambda: 1.0,
            method: SelectionMethod::Mi,
            mi_sample_split: 1.0,
        }
    }
}

/// The chosen block indices, in selection order, with the objective value
/// reached (absent for random selection).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSelection {
    pub indices: Vec<usize>,
    pub objective_value: Option<f64>,
}

impl BlockSelection {
    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

/// Recodes a block's columns as leaf indices; every column must be a valid
/// path code.
pub fn block_to_leaf_variable(block: &CodeBlock) -> Result<LeafVariable> {
    let shape = block.shape();
    let values: Result<Vec<u16>> = block
        .codes()
        .iter()
        .map(|c| path_to_leaf(c, shape).map(|l| l as u16))
        .collect();
    LeafVariable::new(values?, shape.leaf_count())
}

/// Plug-in entropy of a histogram, in bits.
pub fn entropy(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::validation(
            "entropy of an all-zero histogram".to_string(),
        ));
    }
    let n = total as f64;
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.log2();
        }
    }
    Ok(h)
}

/// Plug-in mutual information `H(X) + H(Y) - H(X,Y)` from empirical joint
/// counts, in bits.
pub fn pairwise_mi(x: &LeafVariable, y: &LeafVariable) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::validation(format!(
            "mutual information needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::validation(
            "mutual information of empty variables".to_string(),
        ));
    }
    let mut joint = vec![0u64; x.arity() * y.arity()];
    for (&a, &b) in x.values().iter().zip(y.values()) {
        joint[a as usize * y.arity() + b as usize] += 1;
    }
    mi_from_joint(&joint, x.arity(), y.arity())
}

fn mi_from_joint(joint: &[u64], ax: usize, ay: usize) -> Result<f64> {
    let mut mx = vec![0u64; ax];
    let mut my = vec![0u64; ay];
    for a in 0..ax {
        for b in 0..ay {
            mx[a] += joint[a * ay + b];
            my[b] += joint[a * ay + b];
        }
    }
    Ok(entropy(&mx)? + entropy(&my)? - entropy(joint)?)
}

/// Plug-in mutual information between a leaf variable and class labels,
/// restricted to the labeled rows.
pub fn label_mi(x: &LeafVariable, labels: &[u32], labeled_mask: &[bool]) -> Result<f64> {
    if labels.len() != x.len() || labeled_mask.len() != x.len() {
        return Err(Error::validation(
            "labels and mask must align with the variable".to_string(),
        ));
    }
    let num_classes = labels
        .iter()
        .zip(labeled_mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l + 1)
        .max()
        .ok_or_else(|| Error::validation("no labeled rows".to_string()))?
        as usize;
    let mut joint = vec![0u64; x.arity() * num_classes];
    for ((&v, &l), &m) in x.values().iter().zip(labels).zip(labeled_mask) {
        if m {
            joint[v as usize * num_classes + l as usize] += 1;
        }
    }
    mi_from_joint(&joint, x.arity(), num_classes)
}

/// Symmetric matrix of pairwise block MI; the diagonal holds `I(X,X) = H(X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MiMatrix {
    size: usize,
    vals: Vec<f64>,
}

impl MiMatrix {
    pub fn from_values(size: usize, vals: Vec<f64>) -> Result<Self> {
        if vals.len() != size * size {
            return Err(Error::validation(format!(
                "MI matrix needs {} entries, got {}",
                size * size,
                vals.len()
            )));
        }
        Ok(MiMatrix { size, vals })
    }

    /// Computes all pairwise MIs; entries are independent and run in parallel.
    pub fn from_variables(vars: &[LeafVariable]) -> Result<Self> {
        let m = vars.len();
        let pairs: Result<Vec<((usize, usize), f64)>> = (0..m)
            .flat_map(|i| (i..m).map(move |j| (i, j)))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(i, j)| Ok(((i, j), pairwise_mi(&vars[i], &vars[j])?)))
            .collect();
        let mut vals = vec![0.0; m * m];
        for ((i, j), v) in pairs? {
            vals[i * m + j] = v;
            vals[j * m + i] = v;
        }
        Ok(MiMatrix { size: m, vals })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.vals[i * self.size + j]
    }

    /// Off-diagonal row sum: the k=1 objective for block `i`.
    pub fn row_sum(&self, i: usize) -> f64 {
        (0..self.size).filter(|&j| j != i).map(|j| self.get(i, j)).sum()
    }
}

/// `J(S) = sum_{i in S, j not in S} mi[i][j] + lambda * sum_{i in S} label_mi[i]`.
pub fn objective(selected: &[usize], mi: &MiMatrix, label_mi_vec: &[f64], lambda: f64) -> f64 {
    let mut in_set = vec![false; mi.size()];
    for &i in selected {
        in_set[i] = true;
    }
    let mut j_val = 0.0;
    for &i in selected {
        for (j, &inside) in in_set.iter().enumerate() {
            if !inside {
                j_val += mi.get(i, j);
            }
        }
        j_val += lambda * label_mi_vec[i];
    }
    j_val
}

/// Greedy forward selection of k blocks; each round adds the block whose
/// addition maximizes the objective, ties resolved to the lowest index.
pub fn greedy_select(
    mi: &MiMatrix,
    label_mi_vec: &[f64],
    k: usize,
    lambda: f64,
) -> Result<BlockSelection> {
    let m = mi.size();
    if k > m {
        return Err(Error::config(format!(
            "cannot select {k} blocks out of {m}"
        )));
    }
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut in_set = vec![false; m];
    for _ in 0..k {
        let mut best: Option<(f64, usize)> = None;
        for b in 0..m {
            if in_set[b] {
                continue;
            }
            selected.push(b);
            let val = objective(&selected, mi, label_mi_vec, lambda);
            selected.pop();
            if best.map_or(true, |(bv, _)| val > bv) {
                best = Some((val, b));
            }
        }
        let (_, b) = best.expect("k <= m leaves a candidate");
        selected.push(b);
        in_set[b] = true;
    }
    let value = objective(&selected, mi, label_mi_vec, lambda);
    Ok(BlockSelection {
        indices: selected,
        objective_value: Some(value),
    })
}

/// Exact maximizer over all k-subsets (test oracle for [`greedy_select`]);
/// ties resolve to the lexicographically smallest subset. Refuses instances
/// with more than 10^6 subsets.
pub fn exhaustive_select(
    mi: &MiMatrix,
    label_mi_vec: &[f64],
    k: usize,
    lambda: f64,
) -> Result<BlockSelection> {
    let m = mi.size();
    if k > m {
        return Err(Error::config(format!(
            "cannot select {k} blocks out of {m}"
        )));
    }
    let combos = binomial(m, k);
    if combos > 1_000_000 {
        return Err(Error::config(format!(
            "C({m},{k}) = {combos} exceeds the exhaustive budget of 10^6"
        )));
    }
    // Lexicographic enumeration; strict improvement keeps the smallest.
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let val = objective(&subset, mi, label_mi_vec, lambda);
        if best.as_ref().map_or(true, |(bv, _)| val > *bv) {
            best = Some((val, subset.clone()));
        }
        // next combination
        let mut i = k;
        loop {
            if i == 0 {
                let (value, indices) = best.expect("at least one subset");
                return Ok(BlockSelection {
                    indices,
                    objective_value: Some(value),
                });
            }
            i -= 1;
            if subset[i] != i + m - k {
                subset[i] += 1;
                for j in i + 1..k {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

/// Seeded uniform k-subset without replacement, indices ascending.
pub fn random_select(m: usize, k: usize, seed: u64) -> Result<BlockSelection> {
    if k > m {
        return Err(Error::config(format!(
            "cannot select {k} blocks out of {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = rand::seq::index::sample(&mut rng, m, k).into_vec();
    indices.sort_unstable();
    Ok(BlockSelection {
        indices,
        objective_value: None,
    })
}

/// Outcome of [`aggregate`]: the selection plus the effective code length.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutcome {
    pub selection: BlockSelection,
    pub effective_bits: usize,
    /// Set when `target_bits` was not a multiple of the block size.
    pub truncation_warning: Option<String>,
}

/// Full aggregation pipeline over trained code blocks: recode to leaf
/// variables, build the MI matrix (block term on the configured sample
/// prefix) and the label-MI vector (all labeled rows), then select.
///
/// This runs once at training time; encode/query paths only ever see the
/// frozen [`BlockSelection`].
pub fn aggregate(
    blocks: &[CodeBlock],
    labels: Option<&[u32]>,
    config: &AggregationConfig,
    seed: u64,
) -> Result<AggregationOutcome> {
    if blocks.is_empty() {
        return Err(Error::validation("no code blocks to aggregate".to_string()));
    }
    let m = blocks.len();
    let block_bits = blocks[0].shape().node_count();
    let k = config.target_bits / block_bits;
    if k == 0 {
        return Err(Error::config(format!(
            "target_bits {} is below the block size {}",
            config.target_bits, block_bits
        )));
    }
    if k > m {
        return Err(Error::config(format!(
            "target_bits {} needs {} blocks but only {} trees exist",
            config.target_bits, k, m
        )));
    }
    let effective_bits = k * block_bits;
    let truncation_warning = (effective_bits != config.target_bits).then(|| {
        format!(
            "target bits {} is not a multiple of the block size {}; using k={} ({} bits)",
            config.target_bits, block_bits, k, effective_bits
        )
    });

    let selection = match config.method {
        SelectionMethod::Random => random_select(m, k, seed)?,
        SelectionMethod::Mi => {
            if !(config.mi_sample_split > 0.0 && config.mi_sample_split <= 1.0) {
                return Err(Error::config(format!(
                    "mi_sample_split must be in (0, 1], got {}",
                    config.mi_sample_split
                )));
            }
            let n = blocks[0].len();
            if n == 0 {
                return Err(Error::validation(
                    "cannot estimate MI from zero samples".to_string(),
                ));
            }
            let vars: Result<Vec<LeafVariable>> =
                blocks.iter().map(block_to_leaf_variable).collect();
            let vars = vars?;
            let prefix = ((config.mi_sample_split * n as f64).ceil() as usize).clamp(1, n);
            let block_vars: Vec<LeafVariable> = if prefix == n {
                vars.clone()
            } else {
                vars.iter()
                    .map(|v| {
                        LeafVariable::new(v.values()[..prefix].to_vec(), v.arity())
                            .expect("prefix of a valid variable")
                    })
                    .collect()
            };
            let mi = MiMatrix::from_variables(&block_vars)?;
            let label_vec = match labels {
                Some(l) if config.lambda > 0.0 => {
                    let mask = vec![true; n];
                    vars.iter()
                        .map(|v| label_mi(v, l, &mask))
                        .collect::<Result<Vec<f64>>>()?
                }
                _ => vec![0.0; m],
            };
            greedy_select(&mi, &label_vec, k, config.lambda)?
        }
    };
    Ok(AggregationOutcome {
        selection,
        effective_bits,
        truncation_warning,
    })
}
