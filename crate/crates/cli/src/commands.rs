//! Subcommand implementations.

use std::path::Path;

use foresthash_core::aggregation::{aggregate, AggregationConfig, SelectionMethod};
use foresthash_core::io;
use foresthash_core::retrieval::{encode_timing, RetrievalIndex};
use foresthash_core::training::{encode_dataset, train_forest, Dataset, ForestConfig, Splitter};
use foresthash_core::Model;

use crate::{
    BenchArgs, CliError, DataArgs, EncodeArgs, EvalArgs, FormatArg, MethodArg, ReselectArgs,
    SplitterArg, TrainArgs,
};

fn resolve_format(args: &DataArgs) -> Result<FormatArg, CliError> {
    if args.format != FormatArg::Auto {
        return Ok(args.format);
    }
    if args.descriptor.is_some() {
        return Ok(FormatArg::Raw);
    }
    let name = args
        .data
        .file_name()
        .map(|n| n.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if name.ends_with(".csv") {
        Ok(FormatArg::Csv)
    } else if name.contains("idx") || name.contains("ubyte") {
        Ok(FormatArg::Idx)
    } else {
        Err(CliError::Usage(format!(
            "cannot infer format of {:?}; pass --format idx|csv|raw",
            args.data
        )))
    }
}

fn load_dataset(args: &DataArgs) -> Result<Dataset, CliError> {
    let format = resolve_format(args)?;
    let data = match format {
        FormatArg::Idx => match &args.labels {
            Some(labels) => io::load_idx(&args.data, labels)?,
            None => io::load_idx_images(&args.data)?,
        },
        FormatArg::Csv => io::load_csv(&args.data, args.label_column)?,
        FormatArg::Raw => {
            let descriptor = args.descriptor.as_ref().ok_or_else(|| {
                CliError::Usage("raw format needs --descriptor".to_string())
            })?;
            io::load_raw(&args.data, descriptor)?
        }
        FormatArg::Auto => unreachable!("resolved above"),
    };
    Ok(data)
}

fn selection_method(m: MethodArg) -> SelectionMethod {
    match m {
        MethodArg::Mi => SelectionMethod::Mi,
        MethodArg::Random => SelectionMethod::Random,
    }
}

/// Flag-level consistency checks for `train`; violations are usage errors.
fn validate_train_flags(args: &TrainArgs) -> Result<(), CliError> {
    let usage = |msg: String| Err(CliError::Usage(msg));
    if args.trees == 0 {
        return usage("--trees must be >= 1".to_string());
    }
    if !(2..=16).contains(&args.depth) {
        return usage(format!("--depth must be in [2, 16], got {}", args.depth));
    }
    if !(args.sample_fraction > 0.0 && args.sample_fraction <= 1.0) {
        return usage(format!(
            "--sample-fraction must be in (0, 1], got {}",
            args.sample_fraction
        ));
    }
    if args.candidates == 0 {
        return usage("--candidates must be >= 1".to_string());
    }
    if args.min_node < 2 {
        return usage("--min-node must be >= 2".to_string());
    }
    if args.lambda < 0.0 {
        return usage(format!("--lambda must be >= 0, got {}", args.lambda));
    }
    if !(args.mi_sample_split > 0.0 && args.mi_sample_split <= 1.0) {
        return usage(format!(
            "--mi-sample-split must be in (0, 1], got {}",
            args.mi_sample_split
        ));
    }
    let block_bits = (1usize << args.depth) - 2;
    let k = args.bits / block_bits;
    if k == 0 {
        return usage(format!(
            "--bits {} is below the {block_bits}-bit block size of depth {}",
            args.bits, args.depth
        ));
    }
    if k > args.trees {
        return usage(format!(
            "--bits {} needs {k} blocks but --trees is only {}",
            args.bits, args.trees
        ));
    }
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    validate_train_flags(args)?;
    let data = load_dataset(&args.data)?;
    let config = ForestConfig {
        num_trees: args.trees,
        depth: args.depth,
        splitter: match args.splitter {
            SplitterArg::Stump => Splitter::Stump,
            SplitterArg::Subspace => Splitter::Subspace,
        },
        subspace_rank: args.rank,
        sample_fraction: args.sample_fraction,
        stump_candidates: args.candidates,
        min_node_samples: args.min_node,
        master_seed: args.seed,
    };
    let forest = train_forest(&data, &config)?;
    let blocks = encode_dataset(&forest, &data)?;
    let agg = AggregationConfig {
        target_bits: args.bits,
        lambda: args.lambda,
        method: selection_method(args.method),
        mi_sample_split: args.mi_sample_split,
    };
    let outcome = aggregate(&blocks, data.labels(), &agg, args.seed)?;
    if let Some(warning) = &outcome.truncation_warning {
        eprintln!("warning: {warning}");
    }
    let k = outcome.selection.k();
    let bits = outcome.effective_bits;
    let objective = outcome
        .selection
        .objective_value
        .map_or("n/a".to_string(), |v| format!("{v:.6}"));
    let model = Model::new(forest, Some(outcome.selection))?;
    io::save_model(&model, &args.out)?;
    println!(
        "trees={} depth={} k={k} bits={bits} method={} objective={objective}",
        args.trees,
        args.depth,
        match args.method {
            MethodArg::Mi => "mi",
            MethodArg::Random => "random",
        }
    );
    println!("wrote model to {}", args.out.display());
    Ok(())
}

pub fn reselect(args: &ReselectArgs) -> Result<(), CliError> {
    let model = io::load_model(&args.model)?;
    let data = load_dataset(&args.data)?;
    let blocks = encode_dataset(&model.forest, &data)?;
    let agg = AggregationConfig {
        target_bits: args.bits,
        lambda: args.lambda,
        method: selection_method(args.method),
        mi_sample_split: args.mi_sample_split,
    };
    let outcome = aggregate(&blocks, data.labels(), &agg, args.seed)?;
    if let Some(warning) = &outcome.truncation_warning {
        eprintln!("warning: {warning}");
    }
    let k = outcome.selection.k();
    let bits = outcome.effective_bits;
    let objective = outcome
        .selection
        .objective_value
        .map_or("n/a".to_string(), |v| format!("{v:.6}"));
    let config = model.forest.config().clone();
    let reselected = Model::new(model.forest, Some(outcome.selection))?;
    io::save_model(&reselected, &args.out)?;
    println!(
        "trees={} depth={} k={k} bits={bits} method={} objective={objective}",
        config.num_trees,
        config.depth,
        match args.method {
            MethodArg::Mi => "mi",
            MethodArg::Random => "random",
        }
    );
    println!("wrote model to {}", args.out.display());
    Ok(())
}

pub fn encode(args: &EncodeArgs) -> Result<(), CliError> {
    let model = io::load_model(&args.model)?;
    let data = load_dataset(&args.data)?;
    let codes = model.encode_many(&data)?;
    io::save_codes(&codes, data.labels(), &args.out)?;
    println!(
        "encoded n={} bits={} labels={} -> {}",
        codes.len(),
        model.code_bits().unwrap_or(0),
        data.labels().is_some(),
        args.out.display()
    );
    Ok(())
}

fn load_labeled_codes(
    path: &Path,
    role: &str,
) -> Result<(Vec<foresthash_core::HashCode>, Vec<u32>), CliError> {
    let (codes, labels) = io::load_codes(path)?;
    let labels = labels.ok_or_else(|| {
        CliError::Data(format!("{role} code file {} has no labels", path.display()))
    })?;
    Ok((codes, labels))
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let (db_codes, db_labels) = load_labeled_codes(&args.db, "database")?;
    let (query_codes, query_labels) = load_labeled_codes(&args.queries, "query")?;
    let index = RetrievalIndex::build(&db_codes, &db_labels)?;
    let m = index.evaluate(&query_codes, &query_labels, args.radius)?;
    println!(
        "precision={:.2}% recall={:.2}% rejected={} n_queries={} radius={}",
        m.precision, m.recall, m.queries_rejected, m.num_queries, m.radius
    );
    println!();
    println!("  metric       value");
    println!("  ---------    -----");
    println!("  precision    {:.2}%", m.precision);
    println!("  recall       {:.2}%", m.recall);
    println!("  rejected     {} of {} queries", m.queries_rejected, m.num_queries);
    println!("  mean query   {:.1} us", m.mean_query_time_us);
    println!("  db size      {}", index.len());
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be >= 1".to_string()));
    }
    let model = io::load_model(&args.model)?;
    let selection = model
        .selection
        .as_ref()
        .ok_or_else(|| CliError::Data("model has no block selection".to_string()))?;
    let data = load_dataset(&args.data)?;
    let times = encode_timing(&model.forest, selection, &data, args.reps)?;
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>()
        / times.len() as f64;
    let stddev = var.sqrt();
    println!(
        "encode_us_mean={mean:.3} encode_us_stddev={stddev:.3} reps={} n={}",
        args.reps,
        data.len()
    );
    println!(
        "encode time: {mean:.2} +- {stddev:.2} us/sample ({} trees, {} samples, {} reps)",
        model.forest.num_trees(),
        data.len(),
        args.reps
    );
    Ok(())
}
