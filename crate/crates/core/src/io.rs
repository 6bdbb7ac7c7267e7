//! Dataset ingestion (IDX, CSV, raw) and bit-exact model/code files.
//!
//! All binary formats are fixed-width little-endian (IDX being the
//! big-endian exception, per its own convention) with magic, version and a
//! CRC32 trailer, so files written on any platform load on any other.

pub mod binfmt;
pub mod code_file;
pub mod model_file;

use std::path::Path;

use crate::error::{Error, Result};
use crate::training::Dataset;
use binfmt::ByteReader;

pub use code_file::{codes_from_bytes, codes_to_bytes, load_codes, save_codes};
pub use model_file::{load_model, model_from_bytes, model_to_bytes, save_model};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an MNIST-style IDX image/label pair. Pixels are scaled to [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (features, dim, n) = read_idx_images(&std::fs::read(images_path)?)?;
    let labels = read_idx_labels(&std::fs::read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::format(
            4,
            format!(
                "count mismatch: {n} images in {} but {} labels in {}",
                images_path.display(),
                labels.len(),
                labels_path.display()
            ),
        ));
    }
    Dataset::new(features, dim, Some(labels))
}

/// Loads IDX images without labels.
pub fn load_idx_images(images_path: &Path) -> Result<Dataset> {
    let (features, dim, _) = read_idx_images(&std::fs::read(images_path)?)?;
    Dataset::new(features, dim, None)
}

fn read_idx_images(buf: &[u8]) -> Result<(Vec<f64>, usize, usize)> {
    let mut r = ByteReader::new(buf);
    let magic = r.u32_be("IDX magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            0,
            format!("bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = r.u32_be("image count")? as usize;
    let rows = r.u32_be("row count")? as usize;
    let cols = r.u32_be("column count")? as usize;
    let dim = rows * cols;
    let pixels = r.bytes(n * dim, "pixel data")?;
    r.expect_eof()?;
    let features: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok((features, dim, n))
}

fn read_idx_labels(buf: &[u8]) -> Result<Vec<u32>> {
    let mut r = ByteReader::new(buf);
    let magic = r.u32_be("IDX magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            0,
            format!("bad IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n = r.u32_be("label count")? as usize;
    let raw = r.bytes(n, "label data")?;
    r.expect_eof()?;
    Ok(raw.iter().map(|&b| b as u32).collect())
}

/// Loads a headerless numeric CSV (RFC-4180 subset: comma-separated, no
/// quoted fields). When `label_column` is given, that column is parsed as
/// integer class ids and excluded from the features.
pub fn load_csv(path: &Path, label_column: Option<usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut offset = 0u64;
    for (line_no, raw_line) in text.split('\n').enumerate() {
        let line_start = offset;
        offset += raw_line.len() as u64 + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.is_empty() {
            continue;
        }
        let row = line_no + 1;
        let cells: Vec<&str> = line.split(',').collect();
        match width {
            None => {
                if let Some(lc) = label_column {
                    if lc >= cells.len() {
                        return Err(Error::format(
                            line_start,
                            format!(
                                "row {row}: label column {lc} out of range for {} columns",
                                cells.len()
                            ),
                        ));
                    }
                }
                width = Some(cells.len());
            }
            Some(w) if cells.len() != w => {
                return Err(Error::format(
                    line_start,
                    format!("row {row}: ragged row with {} cells, expected {w}", cells.len()),
                ));
            }
            _ => {}
        }
        for (col, cell) in cells.iter().enumerate() {
            if Some(col) == label_column {
                let v: i64 = cell.trim().parse().map_err(|_| {
                    Error::format(
                        line_start,
                        format!("row {row}: label cell {col} is not an integer: {cell:?}"),
                    )
                })?;
                if !(0..=u32::MAX as i64).contains(&v) {
                    return Err(Error::format(
                        line_start,
                        format!("row {row}: label {v} out of range"),
                    ));
                }
                labels.push(v as u32);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::format(
                        line_start,
                        format!("row {row}: cell {col} is not numeric: {cell:?}"),
                    )
                })?;
                features.push(v);
            }
        }
    }
    let width = width.unwrap_or(0);
    let dim = width - usize::from(label_column.is_some() && width > 0);
    Dataset::new(features, dim, label_column.map(|_| labels))
}

/// Loads a raw f32-little-endian feature file described by a small text
/// descriptor of the form `N=<count>,D=<dim>,dtype=f32le` (separators may
/// be commas or whitespace).
pub fn load_raw(data_path: &Path, descriptor_path: &Path) -> Result<Dataset> {
    let desc = std::fs::read_to_string(descriptor_path)?;
    let mut n: Option<usize> = None;
    let mut d: Option<usize> = None;
    let mut dtype: Option<String> = None;
    for token in desc.split([',', '\n', ' ', '\t']) {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let (key, value) = token.split_once('=').ok_or_else(|| {
            Error::format(0, format!("descriptor token {token:?} is not key=value"))
        })?;
        match key.trim() {
            "N" => {
                n = Some(value.trim().parse().map_err(|_| {
                    Error::format(0, format!("descriptor N is not an integer: {value:?}"))
                })?)
            }
            "D" => {
                d = Some(value.trim().parse().map_err(|_| {
                    Error::format(0, format!("descriptor D is not an integer: {value:?}"))
                })?)
            }
            "dtype" => dtype = Some(value.trim().to_string()),
            other => {
                return Err(Error::format(
                    0,
                    format!("unknown descriptor key {other:?}"),
                ))
            }
        }
    }
    let n = n.ok_or_else(|| Error::format(0, "descriptor missing N"))?;
    let d = d.ok_or_else(|| Error::format(0, "descriptor missing D"))?;
    match dtype.as_deref() {
        Some("f32le") => {}
        other => {
            return Err(Error::format(
                0,
                format!("unsupported dtype {other:?}, only f32le is supported"),
            ))
        }
    }
    let bytes = std::fs::read(data_path)?;
    let expected = n * d * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            0,
            format!(
                "raw file {} is {} bytes, descriptor implies {expected} (N={n}, D={d}, 4 bytes each)",
                data_path.display(),
                bytes.len()
            ),
        ));
    }
    let features: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Dataset::new(features, d, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::BlockSelection;
    use crate::model::Model;
    use crate::training::splitter::{Branch, GroupModel, SplitModel, SubspaceSplit};
    use crate::training::{train_forest, Forest, ForestConfig, Splitter, Tree};
    use crate::hashcore::{BitVec, HashCode, TreeShape};
    use proptest::prelude::*;
    use std::io::Write;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        buf.extend_from_slice(&n.to_be_bytes());
        buf.extend_from_slice(&rows.to_be_bytes());
        buf.extend_from_slice(&cols.to_be_bytes());
        buf.extend_from_slice(pixels);
        buf
    }

    fn idx_labels(n: u32, labels: &[u8]) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        buf.extend_from_slice(&n.to_be_bytes());
        buf.extend_from_slice(labels);
        buf
    }

    fn write_temp(bytes: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn idx_roundtrip_and_scaling() {
        let img = write_temp(&idx_images(2, 2, 2, &[0, 51, 102, 255, 255, 204, 153, 0]));
        let lab = write_temp(&idx_labels(2, &[3, 9]));
        let data = load_idx(img.path(), lab.path()).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dim(), 4);
        assert_eq!(data.labels().unwrap(), &[3, 9]);
        assert!((data.row(0)[1] - 0.2).abs() < 1e-12);
        assert_eq!(data.row(0)[3], 1.0);
        assert_eq!(data.num_classes(), 10);
    }

    #[test]
    fn idx_empty_file() {
        let img = write_temp(&idx_images(0, 28, 28, &[]));
        let lab = write_temp(&idx_labels(0, &[]));
        let data = load_idx(img.path(), lab.path()).unwrap();
        assert_eq!(data.len(), 0);
        assert_eq!(data.dim(), 784);
    }

    #[test]
    fn idx_error_paths() {
        // count mismatch 10 vs 9
        let img = write_temp(&idx_images(10, 1, 1, &[0; 10]));
        let lab = write_temp(&idx_labels(9, &[0; 9]));
        match load_idx(img.path(), lab.path()) {
            Err(Error::Format { msg, .. }) => assert!(msg.contains("count mismatch"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
        // bad magic reports offset 0
        let bad = write_temp(&[0xDE, 0xAD, 0xBE, 0xEF, 0, 0, 0, 0]);
        let lab2 = write_temp(&idx_labels(0, &[]));
        match load_idx(bad.path(), lab2.path()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
        // truncated pixel payload
        let img = write_temp(&idx_images(4, 2, 2, &[0; 7]));
        let lab3 = write_temp(&idx_labels(4, &[0; 4]));
        assert!(matches!(
            load_idx(img.path(), lab3.path()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn csv_with_label_column() {
        let f = write_temp(b"1.0,2.0,0\n3.5,4.5,1\n5.0,6.0,0\n");
        let data = load_csv(f.path(), Some(2)).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.dim(), 2);
        assert_eq!(data.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(data.row(1), &[3.5, 4.5]);
    }

    #[test]
    fn csv_error_paths() {
        let ragged = write_temp(b"1,2\n3\n");
        match load_csv(ragged.path(), None) {
            Err(Error::Format { msg, .. }) => assert!(msg.contains("row 2"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
        let non_numeric = write_temp(b"1,2\n3,dog\n");
        match load_csv(non_numeric.path(), None) {
            Err(Error::Format { msg, .. }) => assert!(msg.contains("row 2"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
        let bad_label = write_temp(b"1,2.5\n");
        assert!(matches!(
            load_csv(bad_label.path(), Some(1)),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn raw_with_descriptor() {
        let vals: Vec<f32> = vec![1.5, -2.0, 0.25, 8.0, 0.0, 3.5];
        let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        let data_f = write_temp(&bytes);
        let desc = write_temp(b"N=2,D=3,dtype=f32le");
        let data = load_raw(data_f.path(), desc.path()).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dim(), 3);
        assert_eq!(data.row(0), &[1.5, -2.0, 0.25]);

        let wrong = write_temp(b"N=3,D=3,dtype=f32le");
        match load_raw(data_f.path(), wrong.path()) {
            Err(Error::Format { msg, .. }) => {
                assert!(msg.contains("24 bytes") && msg.contains("36"), "{msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
        let bad_dtype = write_temp(b"N=2,D=3,dtype=f64le");
        assert!(load_raw(data_f.path(), bad_dtype.path()).is_err());
    }

    fn trained_model(splitter: Splitter, with_selection: bool) -> Model {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let c = i % 3;
            feats.extend([
                c as f64 * 4.0 + (i % 4) as f64 * 0.2,
                (i % 5) as f64 * 0.5,
                c as f64,
            ]);
            labels.push(c as u32);
        }
        let data = Dataset::new(feats, 3, Some(labels)).unwrap();
        let config = ForestConfig {
            num_trees: 5,
            depth: 3,
            splitter,
            subspace_rank: 2,
            master_seed: 77,
            ..ForestConfig::default()
        };
        let forest = train_forest(&data, &config).unwrap();
        let selection = with_selection.then(|| BlockSelection {
            indices: vec![4, 0, 2],
            objective_value: Some(1.25),
        });
        Model::new(forest, selection).unwrap()
    }

    #[test]
    fn model_roundtrip_trained() {
        for splitter in [Splitter::Stump, Splitter::Subspace] {
            for with_sel in [false, true] {
                let model = trained_model(splitter, with_sel);
                let bytes = model_to_bytes(&model);
                let back = model_from_bytes(&bytes).unwrap();
                assert_eq!(back, model);
                // byte-identical re-save
                assert_eq!(model_to_bytes(&back), bytes);
            }
        }
    }

    #[test]
    fn model_file_error_paths() {
        let model = trained_model(Splitter::Stump, true);
        let bytes = model_to_bytes(&model);

        // flipped byte -> CRC error
        let mut corrupt = bytes.clone();
        corrupt[20] ^= 0x40;
        assert!(matches!(
            model_from_bytes(&corrupt),
            Err(Error::Corrupt { .. })
        ));

        // version bump -> version error (re-seal CRC so it gets that far)
        let mut versioned = bytes.clone();
        versioned[4] = 0xFF;
        let body_len = versioned.len() - 4;
        versioned.truncate(body_len);
        crate::io::binfmt::append_crc(&mut versioned);
        assert!(matches!(
            model_from_bytes(&versioned),
            Err(Error::Version { found: 0xFF, .. })
        ));

        // truncation -> format or CRC error
        assert!(model_from_bytes(&bytes[..bytes.len() / 2]).is_err());
    }

    #[test]
    fn code_file_size_formula() {
        // 36-bit codes, N=1000, labels: header 19 + 1000*5 + 4000 + CRC 4.
        let codes: Vec<HashCode> = (0..1000)
            .map(|i| {
                let mut bits = BitVec::zeroed(36);
                bits.set(i % 36, true);
                HashCode::from_bits(bits)
            })
            .collect();
        let labels: Vec<u32> = (0..1000).map(|i| (i % 10) as u32).collect();
        let bytes = codes_to_bytes(&codes, Some(&labels)).unwrap();
        assert_eq!(bytes.len(), 19 + 1000 * 5 + 4 * 1000 + 4);
        let (back, back_labels) = codes_from_bytes(&bytes).unwrap();
        assert_eq!(back, codes);
        assert_eq!(back_labels.unwrap(), labels);
    }

    #[test]
    fn code_file_error_paths() {
        let codes = vec![HashCode::from_bits(BitVec::zeroed(12))];
        let bytes = codes_to_bytes(&codes, None).unwrap();
        let mut corrupt = bytes.clone();
        *corrupt.last_mut().unwrap() ^= 1;
        assert!(matches!(
            codes_from_bytes(&corrupt),
            Err(Error::Corrupt { .. })
        ));
        // mixed lengths rejected at write time
        let mixed = vec![
            HashCode::from_bits(BitVec::zeroed(12)),
            HashCode::from_bits(BitVec::zeroed(24)),
        ];
        assert!(codes_to_bytes(&mixed, None).is_err());
        // label count mismatch
        assert!(codes_to_bytes(&codes, Some(&[1, 2])).is_err());
    }

    #[test]
    fn model_file_roundtrips_through_disk() {
        let model = trained_model(Splitter::Subspace, true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fh");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
    }

    // Randomized structural round-trips.

    fn arb_group(dim: usize) -> impl Strategy<Value = GroupModel> {
        let mean = proptest::collection::vec(-10.0f64..10.0, dim);
        let rank = 0..=dim.min(3);
        (mean, rank).prop_flat_map(move |(mean, rank)| {
            proptest::collection::vec(-1.0f64..1.0, rank * dim)
                .prop_map(move |basis| GroupModel::from_parts(mean.clone(), basis).unwrap())
        })
    }

    fn arb_split(dim: usize) -> impl Strategy<Value = SplitModel> {
        prop_oneof![
            (0..dim, -5.0f64..5.0)
                .prop_map(|(feature, threshold)| SplitModel::Stump { feature, threshold }),
            (arb_group(dim), arb_group(dim)).prop_map(|(left, right)| SplitModel::Subspace(
                Box::new(SubspaceSplit::new(left, right))
            )),
            prop_oneof![Just(Branch::Left), Just(Branch::Right)]
                .prop_map(|branch| SplitModel::Passthrough { branch }),
        ]
    }

    fn arb_model() -> impl Strategy<Value = Model> {
        (1usize..=4, 2u32..=4, 1usize..=4).prop_flat_map(|(num_trees, depth, dim)| {
            let shape = TreeShape::new(depth).unwrap();
            let tree = proptest::collection::vec(arb_split(dim), shape.internal_count())
                .prop_map(move |splits| Tree::new(shape, splits).unwrap());
            let trees = proptest::collection::vec(tree, num_trees);
            let selection = proptest::option::of(1usize..=num_trees);
            (trees, selection, any::<u64>()).prop_map(move |(trees, sel_k, seed)| {
                let config = ForestConfig {
                    num_trees,
                    depth,
                    splitter: Splitter::Subspace,
                    subspace_rank: dim.min(3),
                    master_seed: seed,
                    ..ForestConfig::default()
                };
                let forest = Forest::from_parts(config, dim, trees).unwrap();
                let selection = sel_k.map(|k| BlockSelection {
                    indices: (0..k).collect(),
                    objective_value: (seed % 2 == 0).then_some(seed as f64 * 0.5),
                });
                Model::new(forest, selection).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn model_roundtrip_randomized(model in arb_model()) {
            let bytes = model_to_bytes(&model);
            let back = model_from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &model);
            prop_assert_eq!(model_to_bytes(&back), bytes);
        }

        #[test]
        fn code_roundtrip_randomized(
            len in 1usize..=128,
            n in 0usize..=20,
            with_labels in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let mut state = seed | 1;
            let mut next = move || {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17; state
            };
            let codes: Vec<HashCode> = (0..n).map(|_| {
                let mut bits = BitVec::zeroed(len);
                for p in 0..len {
                    bits.set(p, next() % 2 == 0);
                }
                HashCode::from_bits(bits)
            }).collect();
            let labels: Option<Vec<u32>> = with_labels.then(|| (0..n).map(|_| (next() % 100) as u32).collect());
            let bytes = codes_to_bytes(&codes, labels.as_deref()).unwrap();
            let (back, back_labels) = codes_from_bytes(&bytes).unwrap();
            prop_assert_eq!(back, codes);
            prop_assert_eq!(back_labels, labels);
        }
    }
}
