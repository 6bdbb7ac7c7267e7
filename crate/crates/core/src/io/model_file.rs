//! Model file format "FHM1": forest config, per-tree split records and an
//! optional block selection, all fixed-width little-endian with a CRC32
//! trailer. Round-trips are byte-identical.

use std::path::Path;

use crate::aggregation::BlockSelection;
use crate::error::{Error, Result};
use crate::io::binfmt::{check_version, ByteReader, ByteWriter, FORMAT_VERSION};
use crate::model::Model;
use crate::training::splitter::{Branch, GroupModel, SplitModel, SubspaceSplit};
use crate::training::{Forest, ForestConfig, Splitter, Tree};

const MAGIC: &[u8; 4] = b"FHM1";

const TAG_STUMP: u8 = 0;
const TAG_SUBSPACE: u8 = 1;
const TAG_PASSTHROUGH: u8 = 2;

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.raw(MAGIC);
    w.u16(FORMAT_VERSION);

    let cfg = model.forest.config();
    w.u32(cfg.num_trees as u32);
    w.u32(cfg.depth);
    w.u8(match cfg.splitter {
        Splitter::Stump => 0,
        Splitter::Subspace => 1,
    });
    w.u32(cfg.subspace_rank as u32);
    w.f64(cfg.sample_fraction);
    w.u32(cfg.stump_candidates as u32);
    w.u32(cfg.min_node_samples as u32);
    w.u64(cfg.master_seed);
    w.u32(model.forest.feature_dim() as u32);

    for tree in model.forest.trees() {
        for split in tree.splits() {
            write_split(&mut w, split);
        }
    }

    match &model.selection {
        None => w.u8(0),
        Some(sel) => {
            w.u8(1);
            w.u32(sel.indices.len() as u32);
            for &i in &sel.indices {
                w.u32(i as u32);
            }
            match sel.objective_value {
                None => w.u8(0),
                Some(v) => {
                    w.u8(1);
                    w.f64(v);
                }
            }
        }
    }
    w.finish()
}

fn write_split(w: &mut ByteWriter, split: &SplitModel) {
    match split {
        SplitModel::Stump { feature, threshold } => {
            w.u8(TAG_STUMP);
            w.u32(*feature as u32);
            w.f64(*threshold);
        }
        SplitModel::Subspace(s) => {
            w.u8(TAG_SUBSPACE);
            write_group(w, s.left());
            write_group(w, s.right());
        }
        SplitModel::Passthrough { branch } => {
            w.u8(TAG_PASSTHROUGH);
            w.u8(match branch {
                Branch::Left => 0,
                Branch::Right => 1,
            });
        }
    }
}

fn write_group(w: &mut ByteWriter, g: &GroupModel) {
    for &v in g.mean() {
        w.f64(v);
    }
    w.u32(g.rank() as u32);
    for j in 0..g.rank() {
        for &v in g.basis_component(j) {
            w.f64(v);
        }
    }
}

pub fn model_from_bytes(buf: &[u8]) -> Result<Model> {
    let payload = crate::io::binfmt::strip_crc(buf)?;
    let mut r = ByteReader::new(payload);
    r.expect_magic(MAGIC)?;
    check_version(r.u16("version")?)?;

    let num_trees = r.u32("num_trees")? as usize;
    let depth = r.u32("depth")?;
    let splitter = match r.u8("splitter")? {
        0 => Splitter::Stump,
        1 => Splitter::Subspace,
        other => {
            return Err(Error::format(
                r.pos() - 1,
                format!("unknown splitter tag {other}"),
            ))
        }
    };
    let config = ForestConfig {
        num_trees,
        depth,
        splitter,
        subspace_rank: r.u32("subspace_rank")? as usize,
        sample_fraction: r.f64("sample_fraction")?,
        stump_candidates: r.u32("stump_candidates")? as usize,
        min_node_samples: r.u32("min_node_samples")? as usize,
        master_seed: r.u64("master_seed")?,
    };
    let feature_dim = r.u32("feature_dim")? as usize;
    config
        .validate(feature_dim)
        .map_err(|e| Error::format(r.pos(), format!("invalid stored config: {e}")))?;

    let shape = config.shape();
    let mut trees = Vec::with_capacity(num_trees);
    for _ in 0..num_trees {
        let mut splits = Vec::with_capacity(shape.internal_count());
        for _ in 0..shape.internal_count() {
            splits.push(read_split(&mut r, feature_dim)?);
        }
        let tree = Tree::new(shape, splits)
            .map_err(|e| Error::format(r.pos(), format!("invalid tree: {e}")))?;
        trees.push(tree);
    }
    let forest = Forest::from_parts(config, feature_dim, trees)
        .map_err(|e| Error::format(r.pos(), format!("invalid forest: {e}")))?;

    let selection = match r.u8("selection flag")? {
        0 => None,
        1 => {
            let k = r.u32("selection size")? as usize;
            let mut indices = Vec::with_capacity(k);
            for _ in 0..k {
                indices.push(r.u32("selection index")? as usize);
            }
            let objective_value = match r.u8("objective flag")? {
                0 => None,
                1 => Some(r.f64("objective value")?),
                other => {
                    return Err(Error::format(
                        r.pos() - 1,
                        format!("bad objective flag {other}"),
                    ))
                }
            };
            Some(BlockSelection {
                indices,
                objective_value,
            })
        }
        other => {
            return Err(Error::format(
                r.pos() - 1,
                format!("bad selection flag {other}"),
            ))
        }
    };
    r.expect_eof()?;
    Model::new(forest, selection).map_err(|e| Error::format(0, format!("invalid model: {e}")))
}

fn read_split(r: &mut ByteReader, dim: usize) -> Result<SplitModel> {
    match r.u8("split tag")? {
        TAG_STUMP => {
            let feature = r.u32("stump feature")? as usize;
            let threshold = r.f64("stump threshold")?;
            if feature >= dim {
                return Err(Error::format(
                    r.pos(),
                    format!("stump feature {feature} out of range for dim {dim}"),
                ));
            }
            Ok(SplitModel::Stump { feature, threshold })
        }
        TAG_SUBSPACE => {
            let left = read_group(r, dim)?;
            let right = read_group(r, dim)?;
            Ok(SplitModel::Subspace(Box::new(SubspaceSplit::new(left, right))))
        }
        TAG_PASSTHROUGH => {
            let branch = match r.u8("passthrough branch")? {
                0 => Branch::Left,
                1 => Branch::Right,
                other => {
                    return Err(Error::format(
                        r.pos() - 1,
                        format!("bad branch tag {other}"),
                    ))
                }
            };
            Ok(SplitModel::Passthrough { branch })
        }
        other => Err(Error::format(r.pos() - 1, format!("unknown split tag {other}"))),
    }
}

fn read_group(r: &mut ByteReader, dim: usize) -> Result<GroupModel> {
    let mut mean = Vec::with_capacity(dim);
    for _ in 0..dim {
        mean.push(r.f64("group mean")?);
    }
    let rank = r.u32("group rank")? as usize;
    if rank > dim {
        return Err(Error::format(
            r.pos(),
            format!("group rank {rank} exceeds dimension {dim}"),
        ));
    }
    let mut basis = Vec::with_capacity(rank * dim);
    for _ in 0..rank * dim {
        basis.push(r.f64("group basis")?);
    }
    GroupModel::from_parts(mean, basis)
        .map_err(|e| Error::format(r.pos(), format!("invalid group model: {e}")))
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let buf = std::fs::read(path)?;
    model_from_bytes(&buf)
}
