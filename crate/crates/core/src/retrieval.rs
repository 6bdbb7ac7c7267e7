//! Hamming-radius search over packed codes and precision/recall evaluation.
//!
//! The index is a flat word array scanned with XOR+popcount; the scan is the
//! reference semantics, and returned indices are always ascending.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::aggregation::BlockSelection;
use crate::error::{Error, Result};
use crate::hashcore::HashCode;
use crate::training::{Dataset, Forest};

/// Packed database codes plus aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    code_bits: usize,
    words_per_code: usize,
    words: Vec<u64>,
    labels: Vec<u32>,
}

/// Retrieval quality at one radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    /// Mean precision (%) over queries that retrieved anything.
    pub precision: f64,
    /// Mean recall (%) over all queries with at least one relevant item.
    pub recall: f64,
    /// Mean per-query search time in microseconds.
    pub mean_query_time_us: f64,
    /// Queries whose radius-r ball was empty (excluded from precision).
    pub queries_rejected: usize,
    pub num_queries: usize,
    pub radius: usize,
}

impl RetrievalIndex {
    pub fn build(codes: &[HashCode], labels: &[u32]) -> Result<Self> {
        if codes.len() != labels.len() {
            return Err(Error::validation(format!(
                "{} codes but {} labels",
                codes.len(),
                labels.len()
            )));
        }
        let code_bits = codes.first().map_or(0, |c| c.len());
        if codes.iter().any(|c| c.len() != code_bits) {
            return Err(Error::validation(
                "database codes must share one length".to_string(),
            ));
        }
        let words_per_code = code_bits.div_ceil(64);
        let mut words = Vec::with_capacity(codes.len() * words_per_code);
        for c in codes {
            words.extend_from_slice(c.bits().words());
        }
        Ok(RetrievalIndex {
            code_bits,
            words_per_code,
            words,
            labels: labels.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn code_bits(&self) -> usize {
        self.code_bits
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Indices of every database code within Hamming distance `r` of `q`,
    /// ascending.
    pub fn query_radius(&self, q: &HashCode, r: usize) -> Result<Vec<usize>> {
        if !self.is_empty() && q.len() != self.code_bits {
            return Err(Error::validation(format!(
                "query length {} does not match index code length {}",
                q.len(),
                self.code_bits
            )));
        }
        let qw = q.bits().words();
        let mut hits = Vec::new();
        for i in 0..self.len() {
            let base = i * self.words_per_code;
            let mut dist = 0usize;
            for (w, &qword) in self.words[base..base + self.words_per_code].iter().zip(qw) {
                dist += (w ^ qword).count_ones() as usize;
            }
            if dist <= r {
                hits.push(i);
            }
        }
        Ok(hits)
    }

    /// Precision/recall at radius `r`.
    ///
    /// Precision averages `|retrieved ∩ relevant| / |retrieved|` over the
    /// queries that retrieved at least one item; empty-retrieval queries are
    /// counted as rejected instead. Recall averages
    /// `|retrieved ∩ relevant| / |relevant|` over every query that has at
    /// least one relevant database item (rejected queries contribute 0).
    pub fn evaluate(
        &self,
        queries: &[HashCode],
        query_labels: &[u32],
        r: usize,
    ) -> Result<RetrievalMetrics> {
        if queries.is_empty() {
            return Err(Error::validation("empty query set".to_string()));
        }
        if queries.len() != query_labels.len() {
            return Err(Error::validation(format!(
                "{} queries but {} labels",
                queries.len(),
                query_labels.len()
            )));
        }
        let mut relevant_count: HashMap<u32, usize> = HashMap::new();
        for &l in &self.labels {
            *relevant_count.entry(l).or_insert(0) += 1;
        }

        struct PerQuery {
            precision: Option<f64>,
            recall: Option<f64>,
            rejected: bool,
            elapsed_us: f64,
        }

        let per_query: Result<Vec<PerQuery>> = queries
            .par_iter()
            .zip(query_labels.par_iter())
            .map(|(q, &label)| {
                let start = Instant::now();
                let hits = self.query_radius(q, r)?;
                let elapsed_us = start.elapsed().as_secs_f64() * 1e6;
                let relevant = relevant_count.get(&label).copied().unwrap_or(0);
                let good = hits.iter().filter(|&&i| self.labels[i] == label).count();
                Ok(PerQuery {
                    precision: (!hits.is_empty()).then(|| good as f64 / hits.len() as f64),
                    recall: (relevant > 0).then(|| good as f64 / relevant as f64),
                    rejected: hits.is_empty(),
                    elapsed_us,
                })
            })
            .collect();
        let per_query = per_query?;

        // Fixed-order reduction keeps the result schedule-independent.
        let mut precision_sum = 0.0;
        let mut precision_n = 0usize;
        let mut recall_sum = 0.0;
        let mut recall_n = 0usize;
        let mut rejected = 0usize;
        let mut time_sum = 0.0;
        for q in &per_query {
            if let Some(p) = q.precision {
                precision_sum += p;
                precision_n += 1;
            }
            if let Some(c) = q.recall {
                recall_sum += c;
                recall_n += 1;
            }
            rejected += usize::from(q.rejected);
            time_sum += q.elapsed_us;
        }
        Ok(RetrievalMetrics {
            precision: if precision_n > 0 {
                100.0 * precision_sum / precision_n as f64
            } else {
                0.0
            },
            recall: if recall_n > 0 {
                100.0 * recall_sum / recall_n as f64
            } else {
                0.0
            },
            mean_query_time_us: time_sum / queries.len() as f64,
            queries_rejected: rejected,
            num_queries: queries.len(),
            radius: r,
        })
    }
}

/// Per-repetition mean encode times (microseconds per sample) for the full
/// pipeline: route every tree over the whole dataset, then concatenate the
/// selected blocks. Throughput semantics: the dataset pass is batched and
/// uses the ambient thread pool.
pub fn encode_timing(
    forest: &Forest,
    selection: &BlockSelection,
    data: &Dataset,
    repetitions: usize,
) -> Result<Vec<f64>> {
    if repetitions == 0 {
        return Err(Error::validation("repetitions must be >= 1".to_string()));
    }
    if data.is_empty() {
        return Err(Error::validation("cannot benchmark on empty data".to_string()));
    }
    let model = crate::model::Model::new(forest.clone(), Some(selection.clone()))?;
    let mut per_rep = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let codes = model.encode_many(data)?;
        let elapsed = start.elapsed().as_secs_f64();
        std::hint::black_box(codes);
        per_rep.push(elapsed * 1e6 / data.len() as f64);
    }
    Ok(per_rep)
}

/// Mean wall-clock encode time in microseconds per sample.
pub fn bench_encode(
    forest: &Forest,
    selection: &BlockSelection,
    data: &Dataset,
    repetitions: usize,
) -> Result<f64> {
    let times = encode_timing(forest, selection, data, repetitions)?;
    Ok(times.iter().sum::<f64>() / times.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashcore::BitVec;
    use crate::training::{train_forest, ForestConfig, Splitter};

    fn code_from_bits(pattern: &[usize], len: usize) -> HashCode {
        let mut bits = BitVec::zeroed(len);
        for &p in pattern {
            bits.set(p, true);
        }
        HashCode::from_bits(bits)
    }

    #[test]
    fn query_radius_examples() {
        let c = code_from_bits(&[0, 5], 12);
        let index = RetrievalIndex::build(&[c.clone()], &[7]).unwrap();
        assert_eq!(index.query_radius(&c, 0).unwrap(), vec![0]);

        // db at distances {0, 2, 4} from q; r=2 keeps the first two.
        let q = code_from_bits(&[0, 1], 12);
        let db = vec![
            code_from_bits(&[0, 1], 12),
            code_from_bits(&[0, 2], 12),
            code_from_bits(&[3, 4], 12),
        ];
        let index = RetrievalIndex::build(&db, &[0, 0, 0]).unwrap();
        assert_eq!(index.query_radius(&q, 2).unwrap(), vec![0, 1]);

        // rejection: nothing within r=0
        assert_eq!(
            index.query_radius(&code_from_bits(&[7, 8], 12), 0).unwrap(),
            Vec::<usize>::new()
        );

        let wrong_len = code_from_bits(&[0], 8);
        assert!(index.query_radius(&wrong_len, 0).is_err());
    }

    #[test]
    fn evaluate_worked_example() {
        // db: two label-A codes at distance 0, one label-B at 0, one label-A
        // at distance 4. Query label A at r=0 retrieves {A, A, B}: precision
        // 2/3, recall 2/3.
        let near = code_from_bits(&[0, 1], 12);
        let far = code_from_bits(&[2, 3, 4, 5, 0, 1], 12);
        let db = vec![near.clone(), near.clone(), near.clone(), far];
        let labels = [0u32, 0, 1, 0];
        let index = RetrievalIndex::build(&db, &labels).unwrap();
        let m = index.evaluate(&[near], &[0], 0).unwrap();
        assert!((m.precision - 200.0 / 3.0).abs() < 1e-9, "precision {}", m.precision);
        assert!((m.recall - 200.0 / 3.0).abs() < 1e-9, "recall {}", m.recall);
        assert_eq!(m.queries_rejected, 0);
    }

    #[test]
    fn evaluate_trivial_and_rejection_cases() {
        let a = code_from_bits(&[0], 12);
        let b = code_from_bits(&[1], 12);
        let index = RetrievalIndex::build(&[a.clone(), b.clone()], &[5, 5]).unwrap();

        // All db items share the query label; r = L retrieves everything.
        let m = index.evaluate(&[a.clone()], &[5], 12).unwrap();
        assert_eq!(m.precision, 100.0);
        assert_eq!(m.recall, 100.0);

        // Nothing within r=0 of an unlike query: all rejected, recall 0.
        let q = code_from_bits(&[4, 5, 6], 12);
        let m = index.evaluate(&[q], &[5], 0).unwrap();
        assert_eq!(m.queries_rejected, 1);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.precision, 0.0);

        assert!(index.evaluate(&[], &[], 0).is_err());
    }

    #[test]
    fn radius_monotonicity() {
        let mut state = 11u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let len = 36;
        let db: Vec<HashCode> = (0..200)
            .map(|_| {
                let mut bits = BitVec::zeroed(len);
                for p in 0..len {
                    bits.set(p, next() % 3 == 0);
                }
                HashCode::from_bits(bits)
            })
            .collect();
        let labels: Vec<u32> = (0..200).map(|_| (next() % 4) as u32).collect();
        let index = RetrievalIndex::build(&db, &labels).unwrap();
        let q = db[17].clone();
        let mut prev_hits: Vec<usize> = Vec::new();
        let mut prev_recall = -1.0;
        for r in 0..=8 {
            let hits = index.query_radius(&q, r).unwrap();
            assert!(prev_hits.iter().all(|h| hits.contains(h)), "subset violated at r={r}");
            let m = index.evaluate(std::slice::from_ref(&q), &[labels[17]], r).unwrap();
            assert!(m.recall >= prev_recall, "recall decreased at r={r}");
            prev_hits = hits;
            prev_recall = m.recall;
        }
    }

    /// Bit-by-bit scan, deliberately independent of the word-wise path.
    fn brute_force_radius(db: &[HashCode], q: &HashCode, r: usize) -> Vec<usize> {
        db.iter()
            .enumerate()
            .filter(|(_, c)| {
                let mut dist = 0;
                for p in 0..c.len() {
                    if c.bits().get(p) != q.bits().get(p) {
                        dist += 1;
                    }
                }
                dist <= r
            })
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn query_radius_matches_bitwise_oracle() {
        let mut state = 3u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for &len in &[12usize, 36, 64] {
            let db: Vec<HashCode> = (0..300)
                .map(|_| {
                    let mut bits = BitVec::zeroed(len);
                    for p in 0..len {
                        bits.set(p, next() % 2 == 0);
                    }
                    HashCode::from_bits(bits)
                })
                .collect();
            let labels = vec![0u32; db.len()];
            let index = RetrievalIndex::build(&db, &labels).unwrap();
            for _ in 0..10 {
                let mut bits = BitVec::zeroed(len);
                for p in 0..len {
                    bits.set(p, next() % 2 == 0);
                }
                let q = HashCode::from_bits(bits);
                let r = (next() % (len as u64 / 2)) as usize;
                assert_eq!(index.query_radius(&q, r).unwrap(), brute_force_radius(&db, &q, r));
            }
        }
    }

    #[test]
    fn bench_encode_sanity() {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            feats.extend([c as f64 * 8.0 + (i % 5) as f64 * 0.1, (i % 3) as f64]);
            labels.push(c as u32);
        }
        let data = Dataset::new(feats, 2, Some(labels)).unwrap();
        let config = ForestConfig {
            num_trees: 6,
            depth: 3,
            splitter: Splitter::Stump,
            master_seed: 2,
            ..ForestConfig::default()
        };
        let forest = train_forest(&data, &config).unwrap();
        let selection = BlockSelection {
            indices: vec![0, 2, 4],
            objective_value: None,
        };
        let t = bench_encode(&forest, &selection, &data, 3).unwrap();
        assert!(t.is_finite() && t > 0.0);
        assert!(bench_encode(&forest, &selection, &data, 0).is_err());
        let empty = Dataset::new(Vec::new(), 2, None).unwrap();
        assert!(bench_encode(&forest, &selection, &empty, 1).is_err());
    }
}
