//! The pipeline commands: evolve a block, stack it, train the selected
//! network, transfer a block to a new dataset, and compare result samples.
//! Each command validates its inputs, writes its artifacts into the
//! configured output directory, and returns a structured outcome.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use blockswarm::data::{sample_subset, AugmentationPolicy};
use blockswarm::disteval::{DistConfig, DistributedEvaluator, EvalServer, SubsetRef, WorkerOptions};
use blockswarm::fitness::evaluate_block;
use blockswarm::netspec::{build_network, BlockSpec, NetworkGraph};
use blockswarm::stacker::{candidates_to_csv, stack_and_select, StackSelection};
use blockswarm::stats::{two_sample_t_test, TTestResult};
use blockswarm::swarm::{evolve, SwarmHistory};
use blockswarm::trainer::checkpoint::save_checkpoint;
use blockswarm::trainer::optim::SgdOptimizer;
use blockswarm::trainer::{
    curves_to_csv, initialize_parameters, seeded_rng, train_epochs, EpochStats, TrainError,
};

use crate::config::RunConfig;
use crate::CliError;

/// A block plus how many times it is stacked; the handoff between the
/// stacking and final-training phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub block: BlockSpec,
    pub stack_count: u32,
}

/// How fitness is obtained during evolution.
pub enum EvalMode {
    /// Train candidates in-process.
    Local,
    /// Serve jobs to remote workers over TCP.
    Distributed {
        bind: String,
        heartbeat: Duration,
    },
    /// Replace training with a monotone sphere surrogate centred here;
    /// used for search-correctness checks.
    SurrogateSphere { layers: f64, growth: f64 },
}

pub struct EvolveOutcome {
    pub block: BlockSpec,
    pub history: SwarmHistory,
    pub evaluations: u64,
    pub duration: Duration,
    pub spec_file: PathBuf,
    pub history_file: PathBuf,
}

fn ensure_output_dir(config: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&config.run_output_dir)
        .map_err(|e| CliError::Data(format!("cannot create output directory: {e}")))
}

fn write_output(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write `{}`: {e}", path.display())))
}

/// Samples the search subset and runs the swarm; writes the trajectory CSV
/// and the evolved block file.
pub fn cmd_evolve(
    config: &RunConfig,
    mode: &EvalMode,
    announce: &mut dyn FnMut(String),
) -> Result<EvolveOutcome, CliError> {
    config.validate()?;
    ensure_output_dir(config)?;
    let swarm_config = config.swarm_config();
    let bounds = config.bounds();
    let started = Instant::now();

    let (block, history) = match mode {
        EvalMode::SurrogateSphere { layers, growth } => {
            let (cl, cg) = (*layers, *growth);
            announce(format!("surrogate fitness centred at ({cl}, {cg})"));
            evolve(&swarm_config, &bounds, &mut |spec: BlockSpec| {
                let dl = spec.num_layers as f64 - cl;
                let dg = spec.growth_rate as f64 - cg;
                1.0 / (1.0 + dl * dl + dg * dg)
            })
        }
        EvalMode::Local => {
            let train = config.load_train()?;
            let subset = sample_subset(&train, config.data_subset_fraction, config.run_seed)
                .map_err(|e| CliError::Data(e.to_string()))?;
            announce(format!(
                "search subset: {} of {} examples from {}",
                subset.len(),
                train.len(),
                train.name
            ));
            let fitness_config = config.fitness_config();
            let mut evaluated = 0u32;
            evolve(&swarm_config, &bounds, &mut |spec: BlockSpec| {
                let result = evaluate_block(spec, &subset, &fitness_config);
                evaluated += 1;
                announce(format!(
                    "trained block {spec}: fitness {:.4} in {} epochs{}",
                    result.fitness,
                    result.epochs_trained,
                    result
                        .failure
                        .map(|f| format!(" [{}]", f.as_str()))
                        .unwrap_or_default()
                ));
                result.fitness
            })
        }
        EvalMode::Distributed { bind, heartbeat } => {
            let dist = DistConfig {
                heartbeat_interval: *heartbeat,
                missed_intervals: 3,
            };
            let server = EvalServer::bind(bind, dist)
                .map_err(|e| CliError::Data(format!("cannot bind `{bind}`: {e}")))?;
            announce(format!("listening on {}", server.local_addr()));
            let subset_ref = SubsetRef {
                dataset: config.data_train.clone(),
                seed: config.run_seed,
                fraction: config.data_subset_fraction,
            };
            let mut evaluator =
                DistributedEvaluator::new(&server, subset_ref, config.fitness_config());
            let out = evolve(&swarm_config, &bounds, &mut evaluator);
            announce(format!("{} jobs dispatched", evaluator.jobs_dispatched));
            server.shutdown();
            out
        }
    };

    let spec_file = config.run_output_dir.join("evolved_block.txt");
    write_output(&spec_file, &format_block_spec(block))?;
    let history_file = config.run_output_dir.join("history.csv");
    write_output(&history_file, &history.to_csv())?;

    let evaluations = history.evaluations.len() as u64;
    announce(format!(
        "evolved block {block} after {evaluations} evaluations"
    ));
    Ok(EvolveOutcome {
        block,
        history,
        evaluations,
        duration: started.elapsed(),
        spec_file,
        history_file,
    })
}

pub struct StackOutcome {
    pub selection: StackSelection,
    pub architecture: Architecture,
    pub duration: Duration,
    pub arch_file: PathBuf,
    pub candidates_file: PathBuf,
}

/// Progressively stacks the block on the full training set and writes the
/// candidates CSV, the architecture file, and the network description.
pub fn cmd_stack(
    config: &RunConfig,
    block: BlockSpec,
    announce: &mut dyn FnMut(String),
) -> Result<StackOutcome, CliError> {
    config.validate()?;
    ensure_output_dir(config)?;
    let train = config.load_train()?;
    let started = Instant::now();
    let selection = stack_and_select(
        block,
        &train,
        &config.fitness_config(),
        &config.budget(),
        config.stack_options(),
    )
    .map_err(|e| CliError::Data(e.to_string()))?;

    for c in &selection.candidates {
        announce(match (c.held_out_accuracy, c.over_budget) {
            (Some(acc), _) => format!("stack {} -> accuracy {acc:.4}", c.stack_count),
            (None, true) => format!("stack {} -> over budget", c.stack_count),
            (None, false) => format!("stack {} -> diverged", c.stack_count),
        });
    }

    let best = selection.best();
    let graph = best.graph.as_ref().ok_or_else(|| {
        CliError::Data("no stack candidate fits the budget at this input size".into())
    })?;
    let architecture = Architecture {
        block,
        stack_count: best.stack_count,
    };
    announce(format!(
        "selected stack count {} ({} parameters)",
        best.stack_count, graph.total_parameters
    ));

    let candidates_file = config.run_output_dir.join("candidates.csv");
    write_output(&candidates_file, &candidates_to_csv(&selection.candidates))?;
    let arch_file = config.run_output_dir.join("architecture.txt");
    write_output(&arch_file, &format_architecture(architecture))?;
    write_output(
        &config.run_output_dir.join("network.txt"),
        &graph.describe(),
    )?;

    Ok(StackOutcome {
        selection,
        architecture,
        duration: started.elapsed(),
        arch_file,
        candidates_file,
    })
}

pub struct TrainOutcome {
    pub final_test_error: f64,
    pub parameters: u64,
    pub epochs: u32,
    pub curves: Vec<EpochStats>,
    pub duration: Duration,
    pub checkpoint_file: PathBuf,
    pub curves_file: PathBuf,
}

/// Retrains the selected architecture from scratch with the scheduled
/// Nesterov SGD and augmentation; writes the checkpoint and the curves CSV.
pub fn cmd_train_final(
    config: &RunConfig,
    architecture: Architecture,
    epochs_override: Option<u32>,
    announce: &mut dyn FnMut(String),
) -> Result<TrainOutcome, CliError> {
    config.validate()?;
    ensure_output_dir(config)?;
    let train = config.load_train()?;
    let test = config.load_test()?;
    let graph = build_graph(config, architecture, &train.shape(), train.class_count)?;
    let epochs = epochs_override.unwrap_or(config.train_epochs);
    let schedule = config.sgd_schedule(epochs);
    announce(format!(
        "training {} parameters for {} epochs (rate drops at {:?})",
        graph.total_parameters,
        epochs,
        schedule.drop_epochs()
    ));

    let policy = AugmentationPolicy::for_dataset(
        &train,
        config.augment_pad,
        config.augment_flip_probability,
    );
    let started = Instant::now();
    let mut params = initialize_parameters(&graph, config.run_seed.wrapping_add(1));
    let mut optimizer = SgdOptimizer::new(schedule);
    // final-training shuffle stream, decoupled from the fitness streams
    let mut rng = seeded_rng(config.run_seed.wrapping_add(3));
    let curves = train_epochs(
        &graph,
        &mut params,
        &train.examples(),
        &test.examples(),
        &mut optimizer,
        epochs,
        config.train_batch_size,
        &mut rng,
        &policy,
    )
    .map_err(|e| match e {
        TrainError::Diverged { epoch, batch } => CliError::Divergence(format!(
            "training diverged at epoch {epoch}, batch {batch}"
        )),
        other => CliError::Divergence(other.to_string()),
    })?;

    let curves_file = config.run_output_dir.join("final_curves.csv");
    write_output(&curves_file, &curves_to_csv(&curves))?;
    let checkpoint_file = config.run_output_dir.join("final_model.bswm");
    save_checkpoint(&params, &checkpoint_file)
        .map_err(|e| CliError::Data(format!("cannot write checkpoint: {e}")))?;

    let final_test_error = curves.last().map(|c| c.eval_error).unwrap_or(1.0);
    let duration = started.elapsed();
    write_output(
        &config.run_output_dir.join("summary.txt"),
        &format!(
            "block_layers = {}\nblock_growth = {}\nstack_count = {}\nparameters = {}\nepochs = {}\nfinal_test_error = {}\ntrain_seconds = {:.3}\n",
            architecture.block.num_layers,
            architecture.block.growth_rate,
            architecture.stack_count,
            graph.total_parameters,
            epochs,
            final_test_error,
            duration.as_secs_f64(),
        ),
    )?;
    announce(format!("final test error {final_test_error:.4}"));
    Ok(TrainOutcome {
        final_test_error,
        parameters: graph.total_parameters,
        epochs,
        curves,
        duration,
        checkpoint_file,
        curves_file,
    })
}

pub struct TransferOutcome {
    pub stack: StackOutcome,
    pub train: TrainOutcome,
    /// Always zero: transfer never invokes the swarm.
    pub swarm_evaluations: u64,
    pub evolve_duration: Duration,
    pub summary_file: PathBuf,
}

/// Reuses an evolved block on a new dataset: stacking and final training
/// only, no evolution.
pub fn cmd_transfer(
    config: &RunConfig,
    block: BlockSpec,
    train_ref: &str,
    test_ref: &str,
    announce: &mut dyn FnMut(String),
) -> Result<TransferOutcome, CliError> {
    let mut target = config.clone();
    target.data_train = train_ref.to_string();
    target.data_test = test_ref.to_string();
    announce(format!("transferring block {block} to {train_ref}"));

    let stack = cmd_stack(&target, block, announce)?;
    let train = cmd_train_final(&target, stack.architecture, None, announce)?;

    let summary = format!(
        "block_layers = {}\nblock_growth = {}\nstack_count = {}\nparameters = {}\nfinal_test_error = {}\nswarm_evaluations = 0\nevolve_seconds = 0\nstack_seconds = {:.3}\ntrain_seconds = {:.3}\n",
        block.num_layers,
        block.growth_rate,
        stack.architecture.stack_count,
        train.parameters,
        train.final_test_error,
        stack.duration.as_secs_f64(),
        train.duration.as_secs_f64(),
    );
    let summary_file = target.run_output_dir.join("summary.txt");
    write_output(&summary_file, &summary)?;

    Ok(TransferOutcome {
        stack,
        train,
        swarm_evaluations: 0,
        evolve_duration: Duration::ZERO,
        summary_file,
    })
}

/// Pooled two-sample t-test over two accuracy files.
pub fn cmd_ttest(sample_a: &[f64], sample_b: &[f64]) -> Result<TTestResult, CliError> {
    two_sample_t_test(sample_a, sample_b).map_err(|e| CliError::Usage(e.to_string()))
}

/// Human-readable layer table for an architecture on the configured data.
pub fn cmd_describe(config: &RunConfig, architecture: Architecture) -> Result<String, CliError> {
    config.validate()?;
    let train = config.load_train()?;
    let graph = build_graph(config, architecture, &train.shape(), train.class_count)?;
    Ok(graph.describe())
}

/// Runs a worker against a search server until it says shutdown.
pub fn run_worker(
    server: &str,
    data_root: PathBuf,
    heartbeat: Duration,
) -> Result<(), CliError> {
    let options = WorkerOptions {
        worker_id: format!("worker-{}", std::process::id()),
        data_root,
        heartbeat_interval: heartbeat,
    };
    blockswarm::disteval::work(server, &options).map_err(|e| CliError::Data(e.to_string()))
}

fn build_graph(
    _config: &RunConfig,
    architecture: Architecture,
    shape: &(usize, usize, usize),
    num_classes: usize,
) -> Result<NetworkGraph, CliError> {
    build_network(architecture.block, architecture.stack_count, *shape, num_classes)
        .map_err(|e| CliError::Usage(e.to_string()))
}

pub fn format_block_spec(block: BlockSpec) -> String {
    format!("layers = {}\ngrowth = {}\n", block.num_layers, block.growth_rate)
}

pub fn format_architecture(arch: Architecture) -> String {
    format!(
        "layers = {}\ngrowth = {}\nstack_count = {}\n",
        arch.block.num_layers, arch.block.growth_rate, arch.stack_count
    )
}

fn parse_kv_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read `{}`: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Data(format!("malformed line in `{}`: `{raw}`", path.display()))
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn kv_u32(pairs: &[(String, String)], key: &str, path: &Path) -> Result<u32, CliError> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .ok_or_else(|| CliError::Data(format!("`{}` is missing key `{key}`", path.display())))?
        .1
        .parse()
        .map_err(|_| CliError::Data(format!("`{}`: key `{key}` is not an integer", path.display())))
}

pub fn read_block_spec(path: &Path) -> Result<BlockSpec, CliError> {
    let pairs = parse_kv_file(path)?;
    Ok(BlockSpec::new(
        kv_u32(&pairs, "layers", path)?,
        kv_u32(&pairs, "growth", path)?,
    ))
}

pub fn read_architecture(path: &Path) -> Result<Architecture, CliError> {
    let pairs = parse_kv_file(path)?;
    Ok(Architecture {
        block: BlockSpec::new(kv_u32(&pairs, "layers", path)?, kv_u32(&pairs, "growth", path)?),
        stack_count: kv_u32(&pairs, "stack_count", path)?,
    })
}

/// Reads a sample file for the t-test: numbers separated by commas and/or
/// newlines; a leading non-numeric line is treated as a header.
pub fn load_sample(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read `{}`: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).filter(|f| !f.is_empty()).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(mut v) => values.append(&mut v),
            Err(_) if i == 0 => continue, // header row
            Err(_) => {
                return Err(CliError::Data(format!(
                    "`{}` line {}: not numeric",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(values)
}
