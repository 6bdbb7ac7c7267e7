//! Code geometry for complete binary trees: node indexing, sparse path
//! codes, bit packing and Hamming distance.
//!
//! A tree of depth `d` (levels counted including the root) has `2^d - 1`
//! nodes in heap numbering (root 0, children of `h` at `2h+1`/`2h+2`).
//! Codes cover the `2^d - 2` non-root nodes: bit position `p` corresponds
//! to heap index `p + 1`. A root-to-leaf traversal visits `d - 1` non-root
//! nodes, so every path code has exactly `d - 1` ones.

use crate::error::{Error, Result};

/// Geometry of a complete binary tree of fixed depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeShape {
    depth: u32,
}

impl TreeShape {
    /// Depth must be at least 2 (one split level). Depths above 16 are
    /// rejected to keep code lengths sane.
    pub fn new(depth: u32) -> Result<Self> {
        if !(2..=16).contains(&depth) {
            return Err(Error::config(format!(
                "tree depth must be in [2, 16], got {depth}"
            )));
        }
        Ok(TreeShape { depth })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Number of non-root nodes, i.e. bits per path code: `2^d - 2`.
    pub fn node_count(&self) -> usize {
        (1usize << self.depth) - 2
    }

    /// Number of leaves: `2^(d-1)`.
    pub fn leaf_count(&self) -> usize {
        1usize << (self.depth - 1)
    }

    /// Number of internal (splitting) nodes: `2^(d-1) - 1`.
    pub fn internal_count(&self) -> usize {
        self.leaf_count() - 1
    }

    /// Heap index of the first leaf: `2^(d-1) - 1`.
    pub fn first_leaf_heap(&self) -> usize {
        self.leaf_count() - 1
    }

    /// Ones per path code: `d - 1`.
    pub fn path_ones(&self) -> usize {
        (self.depth - 1) as usize
    }
}

/// A packed bit vector. Bit `p` lives in byte `p / 8` at bit `p % 8`
/// (least-significant-first); storage is little-endian u64 words, so the
/// byte serialization is the words' LE bytes truncated to `ceil(len/8)`.
///
/// Bits past `len` are kept zero so word-wise XOR+popcount is exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitVec {
    words: Vec<u64>,
    len: usize,
}

impl BitVec {
    pub fn zeroed(len: usize) -> Self {
        BitVec {
            words: vec![0u64; len.div_ceil(64)],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, pos: usize) -> bool {
        assert!(pos < self.len, "bit index {pos} out of range {}", self.len);
        self.words[pos / 64] >> (pos % 64) & 1 == 1
    }

    pub fn set(&mut self, pos: usize, value: bool) {
        assert!(pos < self.len, "bit index {pos} out of range {}", self.len);
        let mask = 1u64 << (pos % 64);
        if value {
            self.words[pos / 64] |= mask;
        } else {
            self.words[pos / 64] &= !mask;
        }
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Positions of set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&p| self.get(p))
    }

    /// Number of differing positions. Both vectors must have equal length.
    pub fn hamming(&self, other: &BitVec) -> Result<usize> {
        if self.len != other.len {
            return Err(Error::validation(format!(
                "hamming distance needs equal lengths, got {} and {}",
                self.len, other.len
            )));
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Packed bytes, `ceil(len/8)` of them.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n_bytes = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(n_bytes);
        for i in 0..n_bytes {
            out.push((self.words[i / 8] >> (8 * (i % 8))) as u8);
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). Trailing bits beyond `len`
    /// in the last byte must be zero.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::validation(format!(
                "expected {} bytes for {} bits, got {}",
                len.div_ceil(8),
                len,
                bytes.len()
            )));
        }
        let mut v = BitVec::zeroed(len);
        for (i, &b) in bytes.iter().enumerate() {
            v.words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        if len % 64 != 0 {
            if let Some(last) = v.words.last() {
                let tail = last >> (len % 64) << (len % 64);
                if tail != 0 {
                    return Err(Error::validation(
                        "nonzero padding bits past code length".to_string(),
                    ));
                }
            }
        }
        Ok(v)
    }

    /// Raw words (little-endian bit order), for word-wise scans.
    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

/// The `(2^d - 2)`-bit indicator of the non-root nodes visited on one
/// root-to-leaf traversal; exactly `d - 1` ones, forming an ancestor chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathCode {
    bits: BitVec,
}

impl PathCode {
    /// Validates length, popcount and the parent-chain invariant.
    pub fn from_bits(bits: BitVec, shape: TreeShape) -> Result<Self> {
        validate_path_bits(&bits, shape)?;
        Ok(PathCode { bits })
    }

    pub fn bits(&self) -> &BitVec {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub(crate) fn from_bits_unchecked(bits: BitVec) -> Self {
        PathCode { bits }
    }
}

/// Concatenation of selected path-code blocks; length `k * (2^d - 2)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashCode {
    bits: BitVec,
}

impl HashCode {
    pub fn bits(&self) -> &BitVec {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn hamming(&self, other: &HashCode) -> Result<usize> {
        self.bits.hamming(&other.bits)
    }

    pub fn from_bits(bits: BitVec) -> Self {
        HashCode { bits }
    }
}

/// Path code for a leaf: sets the bits of the leaf's non-root ancestors
/// (the leaf itself included).
pub fn leaf_to_path(leaf_index: usize, shape: TreeShape) -> Result<PathCode> {
    if leaf_index >= shape.leaf_count() {
        return Err(Error::validation(format!(
            "leaf index {} out of range [0, {})",
            leaf_index,
            shape.leaf_count()
        )));
    }
    let mut bits = BitVec::zeroed(shape.node_count());
    let mut heap = leaf_index + shape.first_leaf_heap();
    while heap > 0 {
        bits.set(heap - 1, true);
        heap = (heap - 1) / 2;
    }
    Ok(PathCode { bits })
}

fn validate_path_bits(bits: &BitVec, shape: TreeShape) -> Result<()> {
    if bits.len() != shape.node_count() {
        return Err(Error::validation(format!(
            "path code length {} does not match shape ({} bits)",
            bits.len(),
            shape.node_count()
        )));
    }
    if bits.popcount() != shape.path_ones() {
        return Err(Error::validation(format!(
            "path code must have exactly {} ones, got {}",
            shape.path_ones(),
            bits.popcount()
        )));
    }
    for p in bits.ones() {
        let heap = p + 1;
        if heap > 2 {
            let parent = (heap - 1) / 2;
            if !bits.get(parent - 1) {
                return Err(Error::validation(format!(
                    "broken ancestor chain: bit {} set but parent bit {} clear",
                    p,
                    parent - 1
                )));
            }
        }
    }
    Ok(())
}

/// Leaf index encoded by a path code. Inverse of [`leaf_to_path`].
///
/// Re-validates the code, since blocks may come from deserialized files.
pub fn path_to_leaf(code: &PathCode, shape: TreeShape) -> Result<usize> {
    validate_path_bits(&code.bits, shape)?;
    let deepest = code
        .bits
        .ones()
        .last()
        .expect("path code has d-1 >= 1 ones");
    let heap = deepest + 1;
    if heap < shape.first_leaf_heap() {
        return Err(Error::validation(
            "path code does not reach a leaf".to_string(),
        ));
    }
    Ok(heap - shape.first_leaf_heap())
}

/// Count of differing positions between two equal-length bit vectors.
pub fn hamming(a: &BitVec, b: &BitVec) -> Result<usize> {
    a.hamming(b)
}

/// Concatenates the blocks picked by `selection`, in selection order.
/// All blocks must share one shape; indices must be distinct and in range.
pub fn concat_codes(block_codes: &[PathCode], selection: &[usize]) -> Result<HashCode> {
    if block_codes.is_empty() {
        return Err(Error::validation("no code blocks to concatenate".to_string()));
    }
    let block_len = block_codes[0].len();
    if block_codes.iter().any(|c| c.len() != block_len) {
        return Err(Error::validation(
            "code blocks do not share one tree shape".to_string(),
        ));
    }
    let mut seen = vec![false; block_codes.len()];
    for &i in selection {
        if i >= block_codes.len() {
            return Err(Error::validation(format!(
                "selection index {} out of range [0, {})",
                i,
                block_codes.len()
            )));
        }
        if seen[i] {
            return Err(Error::validation(format!("duplicate selection index {i}")));
        }
        seen[i] = true;
    }
    let mut bits = BitVec::zeroed(selection.len() * block_len);
    for (slot, &i) in selection.iter().enumerate() {
        let base = slot * block_len;
        for p in block_codes[i].bits().ones() {
            bits.set(base + p, true);
        }
    }
    Ok(HashCode { bits })
}
