use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use blockswarm_cli::{
    cmd_describe, cmd_evolve, cmd_stack, cmd_train_final, cmd_transfer, cmd_ttest,
    config::key_help_text, load_sample, read_architecture, read_block_spec, run_worker,
    Architecture, CliError, EvalMode, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "blockswarm",
    version,
    about = "Dense-block architecture search: evolve a block on a data subset, stack it, train the result"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set swarm.population=6
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed (run.seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (run.output_dir)
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for pair in &self.set {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("--set expects KEY=VALUE, got `{pair}`"))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            config.run_seed = seed;
        }
        if let Some(dir) = &self.output_dir {
            config.run_output_dir = dir.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// List every config key with a short description
    Config,
    /// Evolve the block hyperparameters on a subset of the training set
    Evolve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Particles per generation (swarm.population)
        #[arg(long)]
        population: Option<u32>,
        /// Number of generations (swarm.generations)
        #[arg(long)]
        generations: Option<u32>,
        /// Serve fitness jobs to remote workers instead of training locally
        #[arg(long)]
        distributed: bool,
        /// Bind address for --distributed
        #[arg(long, default_value = "127.0.0.1:0")]
        bind: String,
        /// Heartbeat interval for --distributed, in milliseconds
        #[arg(long, default_value_t = 10_000)]
        heartbeat_ms: u64,
        /// Replace training with a sphere surrogate centred at "L,G"
        #[arg(long, value_name = "L,G")]
        surrogate: Option<String>,
    },
    /// Stack an evolved block progressively and select the best candidate
    Stack {
        #[command(flatten)]
        config: ConfigArgs,
        /// Evolved block file written by `evolve`
        #[arg(long)]
        spec_file: PathBuf,
        /// Extra non-improving candidates to train before stopping
        #[arg(long)]
        explore_past_failure: Option<u32>,
    },
    /// Train the selected architecture from scratch with scheduled SGD
    TrainFinal {
        #[command(flatten)]
        config: ConfigArgs,
        /// Architecture file written by `stack`
        #[arg(long)]
        arch_file: PathBuf,
        /// Override train.epochs
        #[arg(long)]
        epochs: Option<u32>,
        /// Print the learning-rate schedule and exit without training
        #[arg(long)]
        dry_run_schedule: bool,
    },
    /// Reuse an evolved block on a new dataset without re-evolving it
    Transfer {
        #[command(flatten)]
        config: ConfigArgs,
        /// Evolved block file
        #[arg(long)]
        spec_file: PathBuf,
        /// Training-set reference of the target dataset
        #[arg(long)]
        train_data: String,
        /// Test-set reference of the target dataset
        #[arg(long)]
        test_data: String,
    },
    /// Two-sample Student's t-test over two accuracy CSV files
    Ttest {
        sample_a: PathBuf,
        sample_b: PathBuf,
    },
    /// Print the layer table of a block or architecture file
    Describe {
        #[command(flatten)]
        config: ConfigArgs,
        /// Evolved block file (stacked --stack times)
        #[arg(long, conflicts_with = "arch_file")]
        spec_file: Option<PathBuf>,
        /// Architecture file (carries its own stack count)
        #[arg(long)]
        arch_file: Option<PathBuf>,
        /// Stack count when describing a block file
        #[arg(long, default_value_t = 1)]
        stack: u32,
    },
    /// Evaluate fitness jobs for a remote search server
    Worker {
        /// Server address, e.g. 127.0.0.1:7700
        #[arg(long)]
        server: String,
        /// Directory that dataset references resolve against
        #[arg(long, default_value = ".")]
        data_root: PathBuf,
        /// Heartbeat interval in milliseconds
        #[arg(long, default_value_t = 10_000)]
        heartbeat_ms: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with exit 0
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut announce = |line: String| println!("{line}");
    match cli.command {
        Cmd::Config => {
            print!("{}", key_help_text());
            Ok(())
        }
        Cmd::Evolve {
            config,
            population,
            generations,
            distributed,
            bind,
            heartbeat_ms,
            surrogate,
        } => {
            let mut run_config = config.build()?;
            if let Some(p) = population {
                run_config.set("swarm.population", &p.to_string())?;
            }
            if let Some(g) = generations {
                run_config.set("swarm.generations", &g.to_string())?;
            }
            run_config.validate()?;
            let mode = if let Some(centre) = surrogate {
                let (l, g) = centre
                    .split_once(',')
                    .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                    .ok_or_else(|| {
                        CliError::Usage(format!("--surrogate expects \"L,G\", got `{centre}`"))
                    })?;
                EvalMode::SurrogateSphere { layers: l, growth: g }
            } else if distributed {
                EvalMode::Distributed {
                    bind,
                    heartbeat: Duration::from_millis(heartbeat_ms),
                }
            } else {
                EvalMode::Local
            };
            let outcome = cmd_evolve(&run_config, &mode, &mut announce)?;
            println!(
                "wrote {} and {}",
                outcome.spec_file.display(),
                outcome.history_file.display()
            );
            Ok(())
        }
        Cmd::Stack {
            config,
            spec_file,
            explore_past_failure,
        } => {
            let mut run_config = config.build()?;
            if let Some(k) = explore_past_failure {
                run_config.set("stack.explore_past_failure", &k.to_string())?;
            }
            let block = read_block_spec(&spec_file)?;
            let outcome = cmd_stack(&run_config, block, &mut announce)?;
            println!(
                "wrote {} and {}",
                outcome.arch_file.display(),
                outcome.candidates_file.display()
            );
            Ok(())
        }
        Cmd::TrainFinal {
            config,
            arch_file,
            epochs,
            dry_run_schedule,
        } => {
            let run_config = config.build()?;
            let architecture = read_architecture(&arch_file)?;
            if dry_run_schedule {
                let total = epochs.unwrap_or(run_config.train_epochs);
                let schedule = run_config.sgd_schedule(total);
                println!("epochs = {total}");
                for (i, drop) in schedule.drop_epochs().iter().enumerate() {
                    println!("drop_{} = {}", i + 1, drop);
                }
                for epoch in [0, total / 2, 3 * total / 4, total.saturating_sub(1)] {
                    println!("lr[{epoch}] = {}", schedule.learning_rate(epoch));
                }
                return Ok(());
            }
            let outcome = cmd_train_final(&run_config, architecture, epochs, &mut announce)?;
            println!(
                "wrote {} and {}",
                outcome.checkpoint_file.display(),
                outcome.curves_file.display()
            );
            Ok(())
        }
        Cmd::Transfer {
            config,
            spec_file,
            train_data,
            test_data,
        } => {
            let run_config = config.build()?;
            let block = read_block_spec(&spec_file)?;
            let outcome = cmd_transfer(&run_config, block, &train_data, &test_data, &mut announce)?;
            println!(
                "transfer complete: stack {} final test error {:.4} ({})",
                outcome.stack.architecture.stack_count,
                outcome.train.final_test_error,
                outcome.summary_file.display()
            );
            Ok(())
        }
        Cmd::Ttest { sample_a, sample_b } => {
            let a = load_sample(&sample_a)?;
            let b = load_sample(&sample_b)?;
            let r = cmd_ttest(&a, &b)?;
            println!("t = {}", r.t);
            println!("df = {}", r.degrees_of_freedom);
            println!("p = {}", r.p);
            Ok(())
        }
        Cmd::Describe {
            config,
            spec_file,
            arch_file,
            stack,
        } => {
            let run_config = config.build()?;
            let architecture = match (spec_file, arch_file) {
                (Some(spec), None) => Architecture {
                    block: read_block_spec(&spec)?,
                    stack_count: stack,
                },
                (None, Some(arch)) => read_architecture(&arch)?,
                _ => {
                    return Err(CliError::Usage(
                        "describe needs exactly one of --spec-file or --arch-file".into(),
                    ))
                }
            };
            print!("{}", cmd_describe(&run_config, architecture)?);
            Ok(())
        }
        Cmd::Worker {
            server,
            data_root,
            heartbeat_ms,
        } => run_worker(&server, data_root, Duration::from_millis(heartbeat_ms)),
    }
}
