//! Command-line surface: train a baseline, compress it under a pruning or
//! quantization regime, analyze sparse storage, compare the two pruning
//! regimes at matched accuracy, and recompute published result tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nncompress::admm::{
    masked_map_retrain_quant, progressive_prune, AccuracyGuard, AdmmEngine, CompressionPlan,
};
use nncompress::compare::{
    calibrated_levels, run_comparison, AdmmQuantizer, ComparisonOptions, OverallVerdict,
};
use nncompress::config::{CompressionConfig, ExperimentConfig};
use nncompress::error::{Error, Result};
use nncompress::model::{build_architecture, Model};
use nncompress::projection::ConstraintSpec;
use nncompress::storage::{
    encode_csr_absolute, format_storage, optimize_index_bits, storage_report, SparseMatrixFile,
    StorageReport, DEFAULT_BLOCK,
};
use nncompress::tables;
use nncompress::train::{self, LoopOptions, TrainConfig};
use nncompress::verify::verify_checkpoint;

#[derive(Parser)]
#[command(name = "nncompress", version, about = "ADMM weight pruning/quantization with sparse-storage accounting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides, e.g. --set train.epochs=4
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
            overrides.push(format!("train.seed={seed}"));
        }
        ExperimentConfig::load(&self.config, &overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Regime {
    /// Non-structured (element) pruning, progressive two rounds.
    Ns,
    /// Structured pruning: columns, then filters with channel propagation.
    Struct,
    /// Equal-distance quantization only.
    Quant,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    /// CSR with bounded-width relative indices (storage-friendly).
    Rel,
    /// Blocked CSR with absolute indices (hardware-friendly).
    Abs,
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline model and write its checkpoint.
    Train(ConfigArgs),
    /// Compress a trained baseline under one regime.
    Compress {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        regime: Regime,
        /// Baseline checkpoint (defaults to <output_dir>/baseline.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from the last completed iteration of an interrupted run.
        #[arg(long)]
        resume: bool,
    },
    /// Storage accounting for a checkpoint or a standalone sparse matrix.
    Analyze {
        #[arg(long, conflicts_with = "matrix")]
        checkpoint: Option<PathBuf>,
        /// JSON file with {rows, cols, values}.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Weight bits after quantization.
        #[arg(long)]
        bits: u32,
        #[arg(long, value_enum, default_value = "rel")]
        scheme: SchemeArg,
        /// Account conv layers only.
        #[arg(long)]
        conv_only: bool,
        /// Structured result: no index storage at all.
        #[arg(long)]
        structured: bool,
        /// Emit the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run both pruning pipelines at matched accuracy and compare them.
    Compare(ConfigArgs),
    /// Recompute storage columns of the bundled (or supplied) result rows.
    Tables {
        /// Rows JSON (defaults to the bundled reference set).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Also write the table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Check recomputed columns against the printed figures.
        #[arg(long)]
        check: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train(args) => cmd_train(&args.load()?),
        Command::Compress { config, regime, checkpoint, resume } => {
            cmd_compress(&config.load()?, regime, checkpoint.as_deref(), resume)
        }
        Command::Analyze { checkpoint, matrix, bits, scheme, conv_only, structured, json } => {
            cmd_analyze(checkpoint.as_deref(), matrix.as_deref(), bits, scheme, conv_only, structured, json)
        }
        Command::Compare(args) => cmd_compare(&args.load()?),
        Command::Tables { input, csv, check } => cmd_tables(input.as_deref(), csv.as_deref(), check),
    }
}

fn prepare_run_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir)?;
    config.save_snapshot(&dir.join("config.json"))?;
    Ok(dir)
}

fn train_baseline(config: &ExperimentConfig, log_path: Option<&Path>) -> Result<(Model, f64)> {
    let (train_set, eval_set) = config.load_datasets()?;
    let mut model = build_architecture(&config.architecture, config.seed)?;
    let mut log = match log_path {
        Some(p) => Some(std::io::BufWriter::new(fs::File::create(p)?)),
        None => None,
    };
    let opts = LoopOptions {
        eval: Some(&eval_set),
        log: log.as_mut().map(|l| l as &mut dyn std::io::Write),
        ..Default::default()
    };
    train::run_epochs(&mut model, &train_set, &config.train, opts)?;
    let accuracy = train::evaluate(&model, &eval_set, 256)?;
    Ok((model, accuracy))
}

fn cmd_train(config: &ExperimentConfig) -> Result<ExitCode> {
    let dir = prepare_run_dir(config)?;
    let (model, accuracy) = train_baseline(config, Some(&dir.join("train_log.csv")))?;
    let ckpt = dir.join("baseline.json");
    model.save(&ckpt)?;
    println!("baseline accuracy {:.4} -> {}", accuracy, ckpt.display());
    Ok(ExitCode::SUCCESS)
}

fn compression_config(config: &ExperimentConfig) -> Result<&CompressionConfig> {
    config
        .compression
        .as_ref()
        .ok_or_else(|| Error::Config("config has no 'compression' section".into()))
}

fn load_baseline(config: &ExperimentConfig, explicit: Option<&Path>) -> Result<Model> {
    let path = explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.join("baseline.json"));
    if !path.exists() {
        return Err(Error::Config(format!(
            "baseline checkpoint {} not found; run `nncompress train` first",
            path.display()
        )));
    }
    Model::load(&path)
}

fn budget_specs(
    budgets: &Option<Vec<Option<usize>>>,
    make: impl Fn(usize) -> ConstraintSpec,
    layers: usize,
) -> Result<Option<Vec<Option<ConstraintSpec>>>> {
    match budgets {
        None => Ok(None),
        Some(b) => {
            if b.len() != layers {
                return Err(Error::Config(format!(
                    "budget vector has {} slots for {layers} layers",
                    b.len()
                )));
            }
            Ok(Some(b.iter().map(|x| x.map(&make)).collect()))
        }
    }
}

fn cmd_compress(
    config: &ExperimentConfig,
    regime: Regime,
    checkpoint: Option<&Path>,
    resume: bool,
) -> Result<ExitCode> {
    let dir = prepare_run_dir(config)?;
    let comp = compression_config(config)?;
    let (train_set, eval_set) = config.load_datasets()?;
    let layers = build_architecture(&config.architecture, config.seed)?.layers.len();

    let (name, specs_for_verify, compressed): (&str, Vec<Option<ConstraintSpec>>, Model) = match regime {
        Regime::Ns => {
            let r1 = budget_specs(
                &comp.nonstructured_round1,
                |max_nonzero| ConstraintSpec::NonStructured { max_nonzero },
                layers,
            )?;
            let Some(r1) = r1 else {
                // Constraints disabled: identical to plain baseline training.
                let (model, accuracy) = train_baseline(config, None)?;
                let path = dir.join("compressed_ns.json");
                model.save(&path)?;
                println!("no non-structured budgets configured; trained plain baseline");
                println!("accuracy {:.4} -> {}", accuracy, path.display());
                return Ok(ExitCode::SUCCESS);
            };
            let r2 = budget_specs(
                &comp.nonstructured_round2,
                |max_nonzero| ConstraintSpec::NonStructured { max_nonzero },
                layers,
            )?;
            let baseline = load_baseline(config, checkpoint)?;
            let mut rounds = vec![r1];
            rounds.extend(r2);
            let plan = CompressionPlan {
                rounds,
                schedule: comp.schedule.clone(),
                epochs_per_iteration: comp.epochs_per_iteration,
                retrain_epochs: comp.retrain_epochs,
                quant_epsilon_fraction: comp.quant_epsilon_fraction,
            };
            let manifest_dir = dir.join("admm_run_ns");
            let (model, _) = progressive_prune_resumable(
                baseline,
                &plan,
                &train_set,
                &config.train,
                Some(&eval_set),
                Some(&manifest_dir),
                resume,
            )?;
            let specs = plan.rounds.last().unwrap().clone();
            ("ns", specs, model)
        }
        Regime::Struct => {
            let columns = budget_specs(
                &comp.column_budgets,
                |max_columns| ConstraintSpec::Column { max_columns },
                layers,
            )?
            .ok_or_else(|| Error::Config("compression.column_budgets required for --regime struct".into()))?;
            let filters = budget_specs(
                &comp.filter_budgets,
                |max_filters| ConstraintSpec::Filter { max_filters },
                layers,
            )?;
            let baseline = load_baseline(config, checkpoint)?;
            let col_plan = CompressionPlan::single_round(
                columns.clone(),
                comp.schedule.clone(),
                comp.epochs_per_iteration,
                comp.retrain_epochs,
            );
            let (mut model, _) = progressive_prune_resumable(
                baseline,
                &col_plan,
                &train_set,
                &config.train,
                Some(&eval_set),
                Some(&dir.join("admm_run_struct_columns")),
                resume,
            )?;
            let mut specs = columns;
            if let Some(filters) = filters {
                let filter_plan = CompressionPlan::single_round(
                    filters.clone(),
                    comp.schedule.clone(),
                    comp.epochs_per_iteration,
                    comp.retrain_epochs,
                );
                let (pruned, _) = progressive_prune_resumable(
                    model,
                    &filter_plan,
                    &train_set,
                    &config.train,
                    Some(&eval_set),
                    Some(&dir.join("admm_run_struct_filters")),
                    resume,
                )?;
                model = pruned;
                for li in 0..model.layers.len() {
                    if filters[li].is_none() {
                        continue;
                    }
                    let dead: std::collections::BTreeSet<usize> =
                        (0..model.layers[li].weights.num_filters())
                            .filter(|&f| {
                                model.layers[li]
                                    .weights
                                    .group_indices(nncompress::tensor::StructuredAxis::Filter, f)
                                    .iter()
                                    .all(|&i| model.layers[li].weights.values()[i] == 0.0)
                            })
                            .collect();
                    let (next, _) = model.propagate_filter_pruning(li, &dead)?;
                    model = next;
                }
                for (slot, f) in specs.iter_mut().zip(&filters) {
                    if slot.is_none() {
                        *slot = f.clone();
                    }
                }
            }
            ("struct", specs, model)
        }
        Regime::Quant => {
            let q = comp
                .quantization
                .as_ref()
                .ok_or_else(|| Error::Config("compression.quantization required for --regime quant".into()))?;
            let baseline = load_baseline(config, checkpoint)?;
            let levels = calibrated_levels(&baseline, q.bits, &q.skip_layers);
            let specs: Vec<Option<ConstraintSpec>> = levels
                .iter()
                .map(|l| l.clone().map(|levels| ConstraintSpec::Quantization { levels }))
                .collect();
            let manifest_dir = dir.join("admm_run_quant");
            let mut engine = if resume && manifest_dir.join("admm_checkpoint.json").exists() {
                AdmmEngine::resume(&manifest_dir)?
            } else {
                AdmmEngine::new(baseline, specs.clone(), comp.schedule.clone())?
            };
            engine.run(
                &train_set,
                &config.train,
                comp.epochs_per_iteration,
                Some(&eval_set),
                Some(&manifest_dir),
            )?;
            let mut retrain_cfg = config.train.clone();
            retrain_cfg.epochs = comp.retrain_epochs;
            let (model, _) = masked_map_retrain_quant(
                engine.model,
                &levels,
                comp.quant_epsilon_fraction,
                &train_set,
                &retrain_cfg,
                Some(&eval_set),
                Some(AccuracyGuard::default()),
            )?;
            ("quant", specs, model)
        }
    };

    let accuracy = train::evaluate(&compressed, &eval_set, 256)?;
    let path = dir.join(format!("compressed_{name}.json"));
    compressed.save(&path)?;
    let verification = verify_checkpoint(&compressed, Some(&specs_for_verify));
    fs::write(
        dir.join(format!("verification_{name}.json")),
        serde_json::to_string_pretty(&verification)?,
    )?;
    if !verification.feasible {
        return Err(Error::Constraint(format!(
            "compressed checkpoint failed verification: {:?}",
            verification.messages
        )));
    }
    let rate = compressed.pruning_rate();
    println!(
        "regime {name}: accuracy {accuracy:.4}, overall rate {:.1}x ({} of {} weights), conv rate {:.1}x",
        rate.ratio(),
        rate.nonzero,
        rate.total,
        compressed.conv_pruning_rate().ratio(),
    );
    println!("checkpoint -> {}", path.display());
    Ok(ExitCode::SUCCESS)
}

/// progressive_prune with per-round resume from saved engine checkpoints.
fn progressive_prune_resumable(
    model: Model,
    plan: &CompressionPlan,
    dataset: &nncompress::data::Dataset,
    train_cfg: &TrainConfig,
    eval: Option<&nncompress::data::Dataset>,
    manifest_dir: Option<&Path>,
    resume: bool,
) -> Result<(Model, Vec<nncompress::admm::AdmmState>)> {
    if !resume {
        return progressive_prune(model, plan, dataset, train_cfg, eval, None, manifest_dir);
    }
    // Resume the highest checkpointed round, then continue the plan.
    let mut current = model;
    let mut states = Vec::new();
    for (round, specs) in plan.rounds.iter().enumerate() {
        let dir = manifest_dir.map(|d| d.join(format!("round{}", round + 1)));
        let mut engine = match &dir {
            Some(d) if d.join("admm_checkpoint.json").exists() => AdmmEngine::resume(d)?,
            _ => AdmmEngine::new(current, specs.clone(), plan.schedule.clone())?,
        };
        engine.run(dataset, train_cfg, plan.epochs_per_iteration, eval, dir.as_deref())?;
        let mut retrain_cfg = train_cfg.clone();
        retrain_cfg.epochs = plan.retrain_epochs.max(1);
        retrain_cfg.seed = train_cfg.seed.wrapping_add(1000 + round as u64);
        let (next, _) = nncompress::admm::masked_map_retrain_prune(
            engine.model, specs, dataset, &retrain_cfg, eval, None,
        )?;
        states.push(engine.state);
        current = next;
    }
    Ok((current, states))
}

fn print_report(report: &StorageReport, scheme: SchemeArg) {
    println!("dense baseline : {}", format_storage(report.dense_baseline_bytes));
    println!(
        "weights        : {} of {} nonzero at {} bits -> {}",
        report.weight_count,
        report.dense_count,
        report.quant_bits,
        format_storage(report.weight_store_bytes)
    );
    match report.index_bits {
        Some(bits) => println!(
            "relative scheme: {} index bits, {} dummy zeros -> {}",
            bits,
            report.dummy_zeros,
            format_storage(report.weight_index_relative_bytes)
        ),
        None => println!("structured     : no index storage"),
    }
    if let Some(abs) = report.weight_index_absolute_bytes {
        println!("absolute scheme: {}", format_storage(abs));
    }
    let headline = match (scheme, report.weight_index_absolute_bytes) {
        (SchemeArg::Abs, Some(abs)) => abs,
        _ => report.weight_index_relative_bytes,
    };
    println!(
        "compression    : {:.1}x vs 32-bit dense ({} total)",
        report.compression_rate,
        format_storage(headline)
    );
}

fn cmd_analyze(
    checkpoint: Option<&Path>,
    matrix: Option<&Path>,
    bits: u32,
    scheme: SchemeArg,
    conv_only: bool,
    structured: bool,
    json: bool,
) -> Result<ExitCode> {
    let report = match (checkpoint, matrix) {
        (Some(ckpt), None) => {
            let model = Model::load(ckpt)?;
            storage_report(&model, bits, conv_only, structured)
        }
        (None, Some(path)) => {
            let m = SparseMatrixFile::load(path)?;
            if structured {
                let n = m.values.iter().filter(|v| **v != 0.0).count();
                nncompress::storage::report_from_counts(m.rows * m.cols, n, bits, None, 0, None, true)
            } else {
                let (_, mut report) = optimize_index_bits(&m.values, m.rows, m.cols, bits);
                let abs = encode_csr_absolute(&m.values, m.rows, m.cols, DEFAULT_BLOCK)?;
                report.weight_index_absolute_bytes = Some(
                    report.weight_store_bytes + abs.index_bits_total() as f64 / 8.0,
                );
                report
            }
        }
        _ => return Err(Error::Config("pass exactly one of --checkpoint or --matrix".into())),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print_report(&report, scheme);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(config: &ExperimentConfig) -> Result<ExitCode> {
    let dir = prepare_run_dir(config)?;
    let comp = compression_config(config)?;
    let cmp = config
        .comparison
        .as_ref()
        .ok_or_else(|| Error::Config("config has no 'comparison' section".into()))?;
    let (train_set, eval_set) = config.load_datasets()?;
    let baseline = load_baseline(config, None)?;
    let layers = baseline.layers.len();
    let opts = ComparisonOptions {
        accuracy_band: cmp.accuracy_band,
        quant_bits: cmp.quant_bits,
        ppr: cmp.ppr,
        train: config.train.clone(),
        schedule: comp.schedule.clone(),
        epochs_per_iteration: comp.epochs_per_iteration,
        retrain_epochs: comp.retrain_epochs,
        ns_round1: comp
            .nonstructured_round1
            .clone()
            .ok_or_else(|| Error::Config("compression.nonstructured_round1 required".into()))?,
        ns_round2: comp
            .nonstructured_round2
            .clone()
            .unwrap_or_else(|| vec![None; layers]),
        column_budgets: comp
            .column_budgets
            .clone()
            .ok_or_else(|| Error::Config("compression.column_budgets required".into()))?,
        filter_budgets: comp.filter_budgets.clone().unwrap_or_else(|| vec![None; layers]),
        backoff_retries: cmp.backoff_retries,
    };
    let quantizer = AdmmQuantizer {
        schedule: comp.schedule.clone(),
        epochs_per_iteration: comp.epochs_per_iteration,
        epsilon_fraction: comp.quant_epsilon_fraction,
    };
    let (report, ns_model, s_model) =
        run_comparison(&baseline, &train_set, &eval_set, &opts, &quantizer)?;
    ns_model.save(&dir.join("compare_ns.json"))?;
    s_model.save(&dir.join("compare_struct.json"))?;
    fs::write(dir.join("comparison_report.json"), serde_json::to_string_pretty(&report)?)?;

    println!("baseline accuracy {:.4}", report.baseline_accuracy);
    print!("{}", nncompress::compare::render_report_table(&report));
    if let Some(note) = &report.storage_decision.annotation {
        println!("note: {note}");
    }
    // Exit code encodes the overall verdict for scripting.
    Ok(match report.overall {
        OverallVerdict::Structured => ExitCode::SUCCESS,
        OverallVerdict::NonStructured => ExitCode::from(10),
        OverallVerdict::Mixed => ExitCode::from(11),
    })
}

fn cmd_tables(input: Option<&Path>, csv: Option<&Path>, check: bool) -> Result<ExitCode> {
    let rows = match input {
        Some(path) => tables::load_rows(path)?,
        None => tables::reference_rows(),
    };
    print!("{}", tables::render_table(&rows));
    if let Some(csv_path) = csv {
        fs::write(csv_path, tables::render_csv(&rows))?;
        println!("csv -> {}", csv_path.display());
    }
    if check {
        let mut all_ok = true;
        for row in &rows {
            let c = tables::check_row(row);
            let rel_note = match c.relative_within_upper_bound {
                Some(true) => ", rel within bound",
                Some(false) => ", rel EXCEEDS bound",
                None => "",
            };
            let ok = c.store_rel_error <= 0.02 && c.relative_within_upper_bound != Some(false);
            all_ok &= ok;
            println!(
                "{} {}/{}: store err {:.2}%{}",
                if ok { "ok  " } else { "FAIL" },
                c.family,
                c.method,
                c.store_rel_error * 100.0,
                rel_note
            );
        }
        if !all_ok {
            return Err(Error::Constraint("table arithmetic check failed".into()));
        }
    }
    Ok(ExitCode::SUCCESS)
}
