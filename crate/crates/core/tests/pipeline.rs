//! End-to-end pipeline checks on synthetic data: train -> aggregate ->
//! encode -> search, schedule-independence of the produced bytes, and the
//! splitter consistency property that motivates the subspace learner.

use foresthash_core::aggregation::{aggregate, AggregationConfig, SelectionMethod};
use foresthash_core::hashcore::path_to_leaf;
use foresthash_core::io::{codes_to_bytes, model_to_bytes};
use foresthash_core::retrieval::RetrievalIndex;
use foresthash_core::training::{encode_dataset, train_forest, Dataset, ForestConfig, Splitter};
use foresthash_core::Model;

/// Deterministic Gaussian class clusters (xorshift + Box-Muller).
struct Synth {
    state: u64,
}

impl Synth {
    fn new(seed: u64) -> Self {
        Synth { state: seed | 1 }
    }

    fn next_u64(&mut self) -> u64 {
        self.state ^= self.state << 13;
        self.state ^= self.state >> 7;
        self.state ^= self.state << 17;
        self.state
    }

    fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-15);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// `classes` clusters in `dim`-D with the given center separation and
    /// unit within-class spread.
    fn gaussian_classes(
        &mut self,
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
    ) -> Dataset {
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|c| {
                (0..dim)
                    .map(|j| if j % classes == c { separation } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut feats = Vec::with_capacity(classes * per_class * dim);
        let mut labels = Vec::with_capacity(classes * per_class);
        for c in 0..classes {
            for _ in 0..per_class {
                for j in 0..dim {
                    feats.push(centers[c][j] + self.normal());
                }
                labels.push(c as u32);
            }
        }
        Dataset::new(feats, dim, Some(labels)).unwrap()
    }
}

#[test]
fn pipeline_on_separated_gaussians() {
    let mut synth = Synth::new(2024);
    let data = synth.gaussian_classes(4, 60, 10, 40.0);

    let config = ForestConfig {
        num_trees: 16,
        depth: 3,
        splitter: Splitter::Subspace,
        subspace_rank: 3,
        master_seed: 5,
        ..ForestConfig::default()
    };
    let forest = train_forest(&data, &config).unwrap();
    let blocks = encode_dataset(&forest, &data).unwrap();
    let agg = AggregationConfig {
        target_bits: 24,
        lambda: 1.0,
        method: SelectionMethod::Mi,
        mi_sample_split: 1.0,
    };
    let out = aggregate(&blocks, data.labels(), &agg, config.master_seed).unwrap();
    assert_eq!(out.selection.k(), 4);
    assert_eq!(out.effective_bits, 24);
    assert!(out.truncation_warning.is_none());

    let model = Model::new(forest, Some(out.selection)).unwrap();
    let codes = model.encode_many(&data).unwrap();
    let index = RetrievalIndex::build(&codes, data.labels().unwrap()).unwrap();
    let metrics = index
        .evaluate(&codes, data.labels().unwrap(), 0)
        .unwrap();
    // Cleanly separated clusters should collide same-class, not cross-class.
    assert!(metrics.precision >= 80.0, "precision {}", metrics.precision);
    assert!(metrics.recall >= 50.0, "recall {}", metrics.recall);
    assert_eq!(metrics.queries_rejected, 0);
}

#[test]
fn produced_bytes_are_schedule_independent() {
    let mut synth = Synth::new(7);
    let data = synth.gaussian_classes(3, 40, 8, 30.0);
    let config = ForestConfig {
        num_trees: 12,
        depth: 3,
        splitter: Splitter::Subspace,
        subspace_rank: 2,
        master_seed: 99,
        ..ForestConfig::default()
    };
    let agg = AggregationConfig {
        target_bits: 18,
        ..AggregationConfig::default()
    };

    let run = |threads: usize| -> (Vec<u8>, Vec<u8>) {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let forest = train_forest(&data, &config).unwrap();
            let blocks = encode_dataset(&forest, &data).unwrap();
            let out = aggregate(&blocks, data.labels(), &agg, config.master_seed).unwrap();
            let model = Model::new(forest, Some(out.selection)).unwrap();
            let codes = model.encode_many(&data).unwrap();
            (
                model_to_bytes(&model),
                codes_to_bytes(&codes, data.labels()).unwrap(),
            )
        })
    };

    let (model1, codes1) = run(1);
    let (model8, codes8) = run(8);
    assert_eq!(model1, model8, "model bytes differ across thread counts");
    assert_eq!(codes1, codes8, "code bytes differ across thread counts");
}

/// Same-class same-leaf collision fraction, averaged over trees.
fn collision_fraction(data: &Dataset, config: &ForestConfig) -> f64 {
    let forest = train_forest(data, config).unwrap();
    let blocks = encode_dataset(&forest, data).unwrap();
    let labels = data.labels().unwrap();
    let mut total = 0.0;
    for block in &blocks {
        let leaves: Vec<usize> = block
            .codes()
            .iter()
            .map(|c| path_to_leaf(c, block.shape()).unwrap())
            .collect();
        let mut same = 0usize;
        let mut pairs = 0usize;
        for i in 0..leaves.len() {
            for j in (i + 1)..leaves.len() {
                if labels[i] == labels[j] {
                    pairs += 1;
                    same += usize::from(leaves[i] == leaves[j]);
                }
            }
        }
        total += same as f64 / pairs as f64;
    }
    total / blocks.len() as f64
}

#[test]
fn subspace_collisions_at_least_stump_on_separated_gaussians() {
    // Inter-class mean distance (30) far above the within-class sigma (1):
    // the subspace learner should collide same-class pairs at least as
    // often as stumps, averaged over 10 seeds.
    let mut sub_mean = 0.0;
    let mut stump_mean = 0.0;
    for seed in 0..10u64 {
        let mut synth = Synth::new(1000 + seed);
        let data = synth.gaussian_classes(4, 30, 10, 30.0);
        let base = ForestConfig {
            num_trees: 8,
            depth: 3,
            master_seed: seed,
            ..ForestConfig::default()
        };
        let sub = ForestConfig {
            splitter: Splitter::Subspace,
            subspace_rank: 3,
            ..base.clone()
        };
        let stump = ForestConfig {
            splitter: Splitter::Stump,
            ..base
        };
        sub_mean += collision_fraction(&data, &sub);
        stump_mean += collision_fraction(&data, &stump);
    }
    sub_mean /= 10.0;
    stump_mean /= 10.0;
    assert!(
        sub_mean + 1e-12 >= stump_mean,
        "subspace collision {sub_mean} below stump {stump_mean}"
    );
}

#[test]
fn coordinate_separable_classes_route_purely() {
    // Two classes separable on coordinate 0 alone; every tree's root split
    // must put each class wholly on one side.
    let mut synth = Synth::new(31);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for i in 0..80 {
        let c = i % 2;
        feats.push(c as f64 * 20.0 + synth.normal() * 0.5);
        for _ in 1..6 {
            feats.push(synth.normal());
        }
        labels.push(c as u32);
    }
    let data = Dataset::new(feats, 6, Some(labels)).unwrap();
    let config = ForestConfig {
        num_trees: 10,
        depth: 2,
        splitter: Splitter::Subspace,
        subspace_rank: 2,
        sample_fraction: 1.0,
        master_seed: 17,
        ..ForestConfig::default()
    };
    let forest = train_forest(&data, &config).unwrap();
    let blocks = encode_dataset(&forest, &data).unwrap();
    let labels = data.labels().unwrap();
    for block in &blocks {
        let leaves: Vec<usize> = block
            .codes()
            .iter()
            .map(|c| path_to_leaf(c, block.shape()).unwrap())
            .collect();
        let leaf0 = leaves[0];
        let leaf1 = leaves
            .iter()
            .zip(labels)
            .find(|(_, &l)| l == 1)
            .map(|(&leaf, _)| leaf)
            .unwrap();
        for (leaf, &label) in leaves.iter().zip(labels) {
            let expect = if label == 0 { leaf0 } else { leaf1 };
            assert_eq!(*leaf, expect, "impure routing for label {label}");
        }
        assert_ne!(leaf0, leaf1, "classes collapsed to one leaf");
    }
}
