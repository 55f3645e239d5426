//! Run configuration: a `key = value` text file with `#` comments, unknown
//! keys rejected, every value validated against its owning type before a
//! command runs. Command-line `--set key=value` overrides reuse the same
//! parser.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use blockswarm::data::{load_dataset_ref, DataError, Dataset};
use blockswarm::fitness::FitnessConfig;
use blockswarm::stacker::StackOptions;
use blockswarm::swarm::{Bounds, SwarmConfig};
use blockswarm::trainer::optim::SgdSchedule;
use blockswarm::MemoryBudget;

use crate::CliError;

/// Everything a pipeline run needs, with defaults reproducing the standard
/// parameter table (inertia 0.7298, c1 = c2 = 1.49618, population 20,
/// generations 20, layers 6..=32, growth 12..=32, patience 5).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub swarm_inertia: f64,
    pub swarm_accel_personal: f64,
    pub swarm_accel_global: f64,
    pub swarm_population: u32,
    pub swarm_generations: u32,
    pub swarm_velocity_cap_fraction: f64,

    pub bounds_layers_min: u32,
    pub bounds_layers_max: u32,
    pub bounds_growth_min: u32,
    pub bounds_growth_max: u32,

    pub fitness_patience: u32,
    pub fitness_max_epochs: u32,
    pub fitness_split_fraction: f64,
    pub fitness_batch_size: usize,

    pub budget_max_parameters: u64,
    pub budget_max_activation_bytes: u64,

    pub data_train: String,
    pub data_test: String,
    pub data_root: PathBuf,
    pub data_subset_fraction: f64,

    pub augment_pad: usize,
    pub augment_flip_probability: f64,

    pub train_epochs: u32,
    pub train_initial_lr: f64,
    pub train_momentum: f64,
    pub train_weight_decay: f64,
    pub train_batch_size: usize,

    pub stack_explore_past_failure: u32,

    pub run_seed: u64,
    pub run_output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            swarm_inertia: 0.7298,
            swarm_accel_personal: 1.49618,
            swarm_accel_global: 1.49618,
            swarm_population: 20,
            swarm_generations: 20,
            swarm_velocity_cap_fraction: 0.5,

            bounds_layers_min: 6,
            bounds_layers_max: 32,
            bounds_growth_min: 12,
            bounds_growth_max: 32,

            fitness_patience: 5,
            fitness_max_epochs: 50,
            fitness_split_fraction: 0.8,
            fitness_batch_size: 64,

            budget_max_parameters: 10_000_000,
            budget_max_activation_bytes: 8 << 30,

            data_train: "synthetic:classes=10,per_class=200,size=8,difficulty=1,seed=100".into(),
            data_test: "synthetic:classes=10,per_class=50,size=8,difficulty=1,seed=101".into(),
            data_root: PathBuf::from("."),
            data_subset_fraction: 0.1,

            augment_pad: 4,
            augment_flip_probability: 0.5,

            train_epochs: 300,
            train_initial_lr: 0.1,
            train_momentum: 0.9,
            train_weight_decay: 1e-4,
            train_batch_size: 64,

            stack_explore_past_failure: 0,

            run_seed: 42,
            run_output_dir: PathBuf::from("out"),
        }
    }
}

/// The full key list, with a one-line description each; `blockswarm config`
/// prints it and the README documents it.
pub const KEY_HELP: &[(&str, &str)] = &[
    ("swarm.inertia", "PSO inertia weight w"),
    ("swarm.accel_personal", "personal-best acceleration c1"),
    ("swarm.accel_global", "global-best acceleration c2"),
    ("swarm.population", "particles per generation"),
    ("swarm.generations", "number of generations"),
    ("swarm.velocity_cap_fraction", "velocity cap as a fraction of each bound width, in (0,1]"),
    ("bounds.layers_min", "minimum block layers"),
    ("bounds.layers_max", "maximum block layers"),
    ("bounds.growth_min", "minimum growth rate"),
    ("bounds.growth_max", "maximum growth rate"),
    ("fitness.patience", "early-stop patience in epochs"),
    ("fitness.max_epochs", "hard cap on fitness-evaluation epochs"),
    ("fitness.split_fraction", "training share of the evaluation split"),
    ("fitness.batch_size", "batch size for fitness evaluation and stacking"),
    ("budget.max_parameters", "parameter budget for candidate networks"),
    ("budget.max_activation_bytes", "activation-memory budget in bytes"),
    ("data.train", "training dataset reference (synthetic:..., cifar10:..., cifar100:..., svhn:...)"),
    ("data.test", "test dataset reference"),
    ("data.root", "directory that file dataset references resolve against"),
    ("data.subset_fraction", "fraction of the training set sampled for the search"),
    ("augment.pad", "padding pixels for random crops in final training"),
    ("augment.flip_probability", "horizontal flip probability in final training"),
    ("train.epochs", "final-training epochs"),
    ("train.initial_lr", "final-training initial learning rate"),
    ("train.momentum", "Nesterov momentum"),
    ("train.weight_decay", "L2 weight decay on conv/FC weights"),
    ("train.batch_size", "final-training batch size"),
    ("stack.explore_past_failure", "extra non-improving stack candidates to train before stopping"),
    ("run.seed", "master seed for the whole pipeline"),
    ("run.output_dir", "directory all outputs are written to"),
];

pub fn key_help_text() -> String {
    let mut out = String::new();
    for (key, help) in KEY_HELP {
        let _ = writeln!(out, "{key:<32} {help}");
    }
    out
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config `{}`: {e}", path.display())))?;
        Self::from_str_checked(&text)
    }

    pub fn from_str_checked(text: &str) -> Result<Self, CliError> {
        let mut config = Self::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("line {}: expected `key = value`", line_no + 1)))?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
            value
                .parse()
                .map_err(|_| usage(format!("invalid value `{value}` for key `{key}`")))
        }
        match key {
            "swarm.inertia" => self.swarm_inertia = parse(key, value)?,
            "swarm.accel_personal" => self.swarm_accel_personal = parse(key, value)?,
            "swarm.accel_global" => self.swarm_accel_global = parse(key, value)?,
            "swarm.population" => self.swarm_population = parse(key, value)?,
            "swarm.generations" => self.swarm_generations = parse(key, value)?,
            "swarm.velocity_cap_fraction" => {
                self.swarm_velocity_cap_fraction = parse(key, value)?
            }
            "bounds.layers_min" => self.bounds_layers_min = parse(key, value)?,
            "bounds.layers_max" => self.bounds_layers_max = parse(key, value)?,
            "bounds.growth_min" => self.bounds_growth_min = parse(key, value)?,
            "bounds.growth_max" => self.bounds_growth_max = parse(key, value)?,
            "fitness.patience" => self.fitness_patience = parse(key, value)?,
            "fitness.max_epochs" => self.fitness_max_epochs = parse(key, value)?,
            "fitness.split_fraction" => self.fitness_split_fraction = parse(key, value)?,
            "fitness.batch_size" => self.fitness_batch_size = parse(key, value)?,
            "budget.max_parameters" => self.budget_max_parameters = parse(key, value)?,
            "budget.max_activation_bytes" => {
                self.budget_max_activation_bytes = parse(key, value)?
            }
            "data.train" => self.data_train = value.to_string(),
            "data.test" => self.data_test = value.to_string(),
            "data.root" => self.data_root = PathBuf::from(value),
            "data.subset_fraction" => self.data_subset_fraction = parse(key, value)?,
            "augment.pad" => self.augment_pad = parse(key, value)?,
            "augment.flip_probability" => self.augment_flip_probability = parse(key, value)?,
            "train.epochs" => self.train_epochs = parse(key, value)?,
            "train.initial_lr" => self.train_initial_lr = parse(key, value)?,
            "train.momentum" => self.train_momentum = parse(key, value)?,
            "train.weight_decay" => self.train_weight_decay = parse(key, value)?,
            "train.batch_size" => self.train_batch_size = parse(key, value)?,
            "stack.explore_past_failure" => {
                self.stack_explore_past_failure = parse(key, value)?
            }
            "run.seed" => self.run_seed = parse(key, value)?,
            "run.output_dir" => self.run_output_dir = PathBuf::from(value),
            other => return Err(usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Validates every field against its owning type's invariants.
    pub fn validate(&self) -> Result<(), CliError> {
        self.swarm_config().validate().map_err(usage)?;
        self.bounds().validate().map_err(usage)?;
        if !(self.fitness_split_fraction > 0.0 && self.fitness_split_fraction < 1.0) {
            return Err(usage("fitness.split_fraction must lie in (0, 1)"));
        }
        if self.fitness_patience < 1 || self.fitness_max_epochs < 1 {
            return Err(usage("fitness.patience and fitness.max_epochs must be at least 1"));
        }
        if self.fitness_batch_size == 0 || self.train_batch_size == 0 {
            return Err(usage("batch sizes must be positive"));
        }
        if self.budget_max_parameters == 0 || self.budget_max_activation_bytes == 0 {
            return Err(usage("budget values must be strictly positive"));
        }
        if !(self.data_subset_fraction > 0.0 && self.data_subset_fraction <= 1.0) {
            return Err(usage("data.subset_fraction must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.augment_flip_probability) {
            return Err(usage("augment.flip_probability must lie in [0, 1]"));
        }
        if self.train_epochs < 1 {
            return Err(usage("train.epochs must be at least 1"));
        }
        if !(self.train_initial_lr > 0.0) {
            return Err(usage("train.initial_lr must be positive"));
        }
        Ok(())
    }

    pub fn swarm_config(&self) -> SwarmConfig {
        SwarmConfig {
            inertia: self.swarm_inertia,
            accel_personal: self.swarm_accel_personal,
            accel_global: self.swarm_accel_global,
            population_size: self.swarm_population,
            generations: self.swarm_generations,
            rng_seed: self.run_seed,
            velocity_cap_fraction: self.swarm_velocity_cap_fraction,
        }
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            layers_min: self.bounds_layers_min,
            layers_max: self.bounds_layers_max,
            growth_min: self.bounds_growth_min,
            growth_max: self.bounds_growth_max,
        }
    }

    pub fn budget(&self) -> MemoryBudget {
        MemoryBudget::new(self.budget_max_parameters, self.budget_max_activation_bytes)
    }

    pub fn fitness_config(&self) -> FitnessConfig {
        FitnessConfig {
            patience: self.fitness_patience,
            max_epochs_cap: self.fitness_max_epochs,
            split_fraction: self.fitness_split_fraction,
            batch_size: self.fitness_batch_size,
            budget: self.budget(),
            rng_seed: self.run_seed,
        }
    }

    pub fn stack_options(&self) -> StackOptions {
        StackOptions {
            explore_past_failure: self.stack_explore_past_failure,
        }
    }

    pub fn sgd_schedule(&self, epochs: u32) -> SgdSchedule {
        SgdSchedule {
            initial_lr: self.train_initial_lr,
            momentum: self.train_momentum,
            weight_decay: self.train_weight_decay,
            total_epochs: epochs,
            drop_points: vec![0.5, 0.75],
            drop_factor: 10.0,
        }
    }

    pub fn load_train(&self) -> Result<Dataset, CliError> {
        self.load_ref(&self.data_train)
    }

    pub fn load_test(&self) -> Result<Dataset, CliError> {
        self.load_ref(&self.data_test)
    }

    pub fn load_ref(&self, reference: &str) -> Result<Dataset, CliError> {
        load_dataset_ref(reference, &self.data_root).map_err(|e| match e {
            DataError::BadReference { .. } | DataError::BadClassCount(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_the_standard_table() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.swarm_inertia, 0.7298);
        assert_eq!(c.swarm_accel_personal, 1.49618);
        assert_eq!(c.swarm_accel_global, 1.49618);
        assert_eq!(c.swarm_population, 20);
        assert_eq!(c.swarm_generations, 20);
        let b = c.bounds();
        assert_eq!((b.layers_min, b.layers_max), (6, 32));
        assert_eq!((b.growth_min, b.growth_max), (12, 32));
        assert_eq!(c.fitness_patience, 5);
    }

    #[test]
    fn file_parsing_with_comments_and_overrides() {
        let text = "\n# a comment\nswarm.population = 6  # inline comment\nbounds.layers_min=2\nbounds.layers_max = 6\nrun.seed = 7\n";
        let mut c = RunConfig::from_str_checked(text).unwrap();
        assert_eq!(c.swarm_population, 6);
        assert_eq!(c.bounds_layers_min, 2);
        assert_eq!(c.run_seed, 7);
        c.set("swarm.generations", "3").unwrap();
        assert_eq!(c.swarm_generations, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_str_checked("swarm.popsize = 6\n").unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(err.to_string().contains("swarm.popsize"));
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(RunConfig::from_str_checked("swarm.population = many\n").is_err());
        assert!(RunConfig::from_str_checked("no equals sign here\n").is_err());
        let mut c = RunConfig::default();
        c.set("fitness.split_fraction", "1.5").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("bounds.layers_min", "9").unwrap();
        c.set("bounds.layers_max", "3").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_documented_key_is_settable() {
        let mut c = RunConfig::default();
        for (key, _) in KEY_HELP {
            let probe = match *key {
                "data.train" | "data.test" => "synthetic:classes=2,per_class=4,size=8,difficulty=0,seed=1".to_string(),
                "data.root" | "run.output_dir" => "somewhere".to_string(),
                "swarm.inertia" | "swarm.accel_personal" | "swarm.accel_global" => "0.5".to_string(),
                "swarm.velocity_cap_fraction" | "fitness.split_fraction" | "data.subset_fraction"
                | "augment.flip_probability" | "train.initial_lr" | "train.momentum"
                | "train.weight_decay" => "0.5".to_string(),
                _ => "4".to_string(),
            };
            c.set(key, &probe).unwrap_or_else(|e| panic!("key {key}: {e}"));
        }
        c.validate().unwrap();
    }
}
