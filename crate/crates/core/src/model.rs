//! A trained forest plus its frozen block selection.
//!
//! Aggregation happens once at training time; encoding takes the frozen
//! selection and never touches the mutual-information machinery.

use crate::aggregation::BlockSelection;
use crate::error::{Error, Result};
use crate::hashcore::{concat_codes, leaf_to_path, BitVec, HashCode, PathCode, TreeShape};
use crate::training::{encode_forest, Dataset, Forest};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub forest: Forest,
    pub selection: Option<BlockSelection>,
}

impl Model {
    pub fn new(forest: Forest, selection: Option<BlockSelection>) -> Result<Self> {
        if let Some(sel) = &selection {
            let m = forest.num_trees();
            let mut seen = vec![false; m];
            for &i in &sel.indices {
                if i >= m {
                    return Err(Error::validation(format!(
                        "selection index {i} out of range for {m} trees"
                    )));
                }
                if seen[i] {
                    return Err(Error::validation(format!("duplicate selection index {i}")));
                }
                seen[i] = true;
            }
        }
        Ok(Model { forest, selection })
    }

    fn selection_or_err(&self) -> Result<&BlockSelection> {
        self.selection.as_ref().ok_or_else(|| {
            Error::validation(
                "model has no block selection; aggregate or reselect first".to_string(),
            )
        })
    }

    /// Hash length in bits, when a selection is present.
    pub fn code_bits(&self) -> Option<usize> {
        self.selection
            .as_ref()
            .map(|s| s.indices.len() * self.forest.shape().node_count())
    }

    /// Routes `x` through every tree and concatenates the selected blocks.
    pub fn encode(&self, x: &[f64]) -> Result<HashCode> {
        let selection = self.selection_or_err()?;
        let blocks = encode_forest(&self.forest, x)?;
        concat_codes(&blocks, &selection.indices)
    }

    /// Encodes every row; batched and parallel, output in row order and
    /// bit-identical to per-row [`encode`](Self::encode).
    pub fn encode_many(&self, data: &Dataset) -> Result<Vec<HashCode>> {
        let selection = self.selection_or_err()?;
        let leaves = crate::training::batch::forest_leaves(&self.forest, data)?;
        assemble_codes(&leaves, &selection.indices, self.forest.shape())
    }
}

/// Concatenates the selected trees' path codes for every row, given the
/// per-tree leaf ids. Shared by dataset encoding and the encode benchmark.
pub(crate) fn assemble_codes(
    leaves: &[Vec<u16>],
    selection: &[usize],
    shape: TreeShape,
) -> Result<Vec<HashCode>> {
    let table: Vec<PathCode> = (0..shape.leaf_count())
        .map(|l| leaf_to_path(l, shape))
        .collect::<Result<_>>()?;
    let block_bits = shape.node_count();
    let n = leaves.first().map_or(0, |t| t.len());
    let mut out = Vec::with_capacity(n);
    for row in 0..n {
        let mut bits = BitVec::zeroed(selection.len() * block_bits);
        for (slot, &t) in selection.iter().enumerate() {
            let code = &table[leaves[t][row] as usize];
            let base = slot * block_bits;
            for p in code.bits().ones() {
                bits.set(base + p, true);
            }
        }
        out.push(HashCode::from_bits(bits));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{train_forest, ForestConfig, Splitter};

    fn toy() -> (Dataset, Forest) {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            feats.extend([c as f64 * 5.0 + (i % 4) as f64 * 0.1, (i % 3) as f64]);
            labels.push(c as u32);
        }
        let data = Dataset::new(feats, 2, Some(labels)).unwrap();
        let config = ForestConfig {
            num_trees: 8,
            depth: 3,
            splitter: Splitter::Stump,
            master_seed: 31,
            ..ForestConfig::default()
        };
        let forest = train_forest(&data, &config).unwrap();
        (data, forest)
    }

    #[test]
    fn encode_requires_selection() {
        let (data, forest) = toy();
        let bare = Model::new(forest.clone(), None).unwrap();
        assert!(bare.encode(data.row(0)).is_err());

        let model = Model::new(
            forest,
            Some(BlockSelection {
                indices: vec![1, 3, 5],
                objective_value: None,
            }),
        )
        .unwrap();
        let code = model.encode(data.row(0)).unwrap();
        assert_eq!(code.len(), 18);
        assert_eq!(model.code_bits(), Some(18));
        assert_eq!(code.bits().popcount(), 6); // 3 blocks x (d-1)=2 ones
    }

    #[test]
    fn selection_indices_validated() {
        let (_, forest) = toy();
        assert!(Model::new(
            forest.clone(),
            Some(BlockSelection { indices: vec![8], objective_value: None })
        )
        .is_err());
        assert!(Model::new(
            forest,
            Some(BlockSelection { indices: vec![2, 2], objective_value: None })
        )
        .is_err());
    }

    #[test]
    fn encode_many_matches_encode() {
        let (data, forest) = toy();
        let model = Model::new(
            forest,
            Some(BlockSelection {
                indices: vec![0, 4],
                objective_value: None,
            }),
        )
        .unwrap();
        let all = model.encode_many(&data).unwrap();
        assert_eq!(all.len(), data.len());
        for i in 0..data.len() {
            assert_eq!(all[i], model.encode(data.row(i)).unwrap());
        }
    }
}
