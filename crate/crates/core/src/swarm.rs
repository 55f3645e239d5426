//! Inertia-weight particle swarm over the bounded two-dimensional block
//! space (number of layers, growth rate).
//!
//! The loop follows the classic ordering: move every particle, evaluate the
//! decoded positions, update personal bests on strict improvement, then
//! update the global best after the population pass in particle-index order.
//! Positions stay continuous for the dynamics; decoding rounds half away
//! from zero at evaluation time, and a fitness cache keyed by the decoded
//! integer pair guarantees the evaluator runs at most once per block.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netspec::BlockSpec;

/// Inclusive integer bounds of the search box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub layers_min: u32,
    pub layers_max: u32,
    pub growth_min: u32,
    pub growth_max: u32,
}

impl Default for Bounds {
    /// The default search box: 6..=32 layers, growth 12..=32.
    fn default() -> Self {
        Self {
            layers_min: 6,
            layers_max: 32,
            growth_min: 12,
            growth_max: 32,
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<(), String> {
        if self.layers_min < 1 || self.growth_min < 1 {
            return Err("bounds must start at 1 or above".into());
        }
        if self.layers_min > self.layers_max || self.growth_min > self.growth_max {
            return Err(format!(
                "empty bounds: layers [{}, {}], growth [{}, {}]",
                self.layers_min, self.layers_max, self.growth_min, self.growth_max
            ));
        }
        Ok(())
    }

    fn low(&self, dim: usize) -> f64 {
        match dim {
            0 => self.layers_min as f64,
            _ => self.growth_min as f64,
        }
    }

    fn high(&self, dim: usize) -> f64 {
        match dim {
            0 => self.layers_max as f64,
            _ => self.growth_max as f64,
        }
    }

    fn width(&self, dim: usize) -> f64 {
        self.high(dim) - self.low(dim)
    }

    pub fn contains(&self, position: [f64; 2]) -> bool {
        (0..2).all(|d| position[d] >= self.low(d) && position[d] <= self.high(d))
    }

    /// All integer (layers, growth) pairs in the box, for exhaustive scans.
    pub fn grid(&self) -> Vec<BlockSpec> {
        let mut cells = Vec::new();
        for l in self.layers_min..=self.layers_max {
            for g in self.growth_min..=self.growth_max {
                cells.push(BlockSpec::new(l, g));
            }
        }
        cells
    }
}

/// PSO constants and run shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwarmConfig {
    pub inertia: f64,
    pub accel_personal: f64,
    pub accel_global: f64,
    pub population_size: u32,
    pub generations: u32,
    pub rng_seed: u64,
    /// Velocity cap per dimension, as a fraction of that dimension's width.
    pub velocity_cap_fraction: f64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            inertia: 0.7298,
            accel_personal: 1.49618,
            accel_global: 1.49618,
            population_size: 20,
            generations: 20,
            rng_seed: 0,
            velocity_cap_fraction: 0.5,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.population_size < 1 || self.generations < 1 {
            return Err("population size and generations must be at least 1".into());
        }
        if self.inertia < 0.0 || self.accel_personal < 0.0 || self.accel_global < 0.0 {
            return Err("inertia and acceleration coefficients must be non-negative".into());
        }
        if !(self.velocity_cap_fraction > 0.0 && self.velocity_cap_fraction <= 1.0) {
            return Err("velocity cap fraction must lie in (0, 1]".into());
        }
        Ok(())
    }
}

/// One particle: continuous position and velocity plus its personal-best
/// record. The best fitness starts unset and compares below everything.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub personal_best_position: [f64; 2],
    pub personal_best_fitness: Option<f64>,
    /// History row that produced the current personal best.
    best_eval_index: Option<usize>,
}

impl ParticleState {
    pub fn new(
        position: [f64; 2],
        velocity: [f64; 2],
        personal_best_position: [f64; 2],
        personal_best_fitness: Option<f64>,
    ) -> Self {
        Self {
            position,
            velocity,
            personal_best_position,
            personal_best_fitness,
            best_eval_index: None,
        }
    }
}

/// One evaluation row: where a particle sat, what it decoded to, what it
/// scored, and whether this row became the global best of its generation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub generation: u32,
    pub particle_index: u32,
    pub position: [f64; 2],
    pub spec: BlockSpec,
    pub fitness: f64,
    pub is_global_best: bool,
}

/// Global-best snapshot at the end of a generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: u32,
    pub best_position: [f64; 2],
    pub best_spec: BlockSpec,
    pub best_fitness: f64,
}

/// Everything a run did: every evaluation plus the per-generation trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SwarmHistory {
    pub evaluations: Vec<EvalRecord>,
    pub generations: Vec<GenerationRecord>,
}

impl SwarmHistory {
    /// CSV with one row per evaluation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "generation,particle_index,pos_layers,pos_growth,decoded_layers,decoded_growth,fitness,is_global_best\n",
        );
        for r in &self.evaluations {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.generation,
                r.particle_index,
                r.position[0],
                r.position[1],
                r.spec.num_layers,
                r.spec.growth_rate,
                r.fitness,
                r.is_global_best
            ));
        }
        out
    }
}

/// Produces fitness values for a whole generation's decoded blocks. A plain
/// `FnMut(BlockSpec) -> f64` evaluates sequentially; the distributed harness
/// fans a batch out to workers.
pub trait FitnessEvaluator {
    fn evaluate_batch(&mut self, specs: &[BlockSpec]) -> Vec<f64>;
}

impl<F: FnMut(BlockSpec) -> f64> FitnessEvaluator for F {
    fn evaluate_batch(&mut self, specs: &[BlockSpec]) -> Vec<f64> {
        specs.iter().map(|&s| self(s)).collect()
    }
}

/// Uniformly random positions inside the bounds, zero velocities, personal
/// bests at the starting position with fitness unset.
pub fn initialize_swarm(config: &SwarmConfig, bounds: &Bounds) -> Vec<ParticleState> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    initialize_with(config, bounds, &mut rng)
}

fn initialize_with(
    config: &SwarmConfig,
    bounds: &Bounds,
    rng: &mut ChaCha8Rng,
) -> Vec<ParticleState> {
    (0..config.population_size)
        .map(|_| {
            let position = [
                rng.gen_range(bounds.low(0)..=bounds.high(0)),
                rng.gen_range(bounds.low(1)..=bounds.high(1)),
            ];
            ParticleState {
                position,
                velocity: [0.0, 0.0],
                personal_best_position: position,
                personal_best_fitness: None,
                best_eval_index: None,
            }
        })
        .collect()
}

/// The velocity rule, component-wise:
/// `w*v + c1*r1*(p_best - x) + c2*r2*(g_best - x)`, then clamped to the
/// per-dimension cap. `r1`/`r2` carry one draw per dimension.
pub fn update_velocity(
    particle: &ParticleState,
    global_best: [f64; 2],
    config: &SwarmConfig,
    bounds: &Bounds,
    r1: [f64; 2],
    r2: [f64; 2],
) -> [f64; 2] {
    let mut v = [0.0; 2];
    for d in 0..2 {
        let raw = config.inertia * particle.velocity[d]
            + config.accel_personal * r1[d] * (particle.personal_best_position[d] - particle.position[d])
            + config.accel_global * r2[d] * (global_best[d] - particle.position[d]);
        let cap = config.velocity_cap_fraction * bounds.width(d);
        v[d] = raw.clamp(-cap, cap);
    }
    v
}

/// The position rule: `x + v`, with out-of-range components rectified to the
/// violated bound.
pub fn update_position(
    particle: &ParticleState,
    new_velocity: [f64; 2],
    bounds: &Bounds,
) -> [f64; 2] {
    let mut x = [0.0; 2];
    for d in 0..2 {
        x[d] = (particle.position[d] + new_velocity[d]).clamp(bounds.low(d), bounds.high(d));
    }
    x
}

/// Rounds each component to the nearest integer (ties away from zero) and
/// re-clamps into the integer bounds.
pub fn decode_position(position: [f64; 2], bounds: &Bounds) -> BlockSpec {
    let layers = (position[0].round() as i64).clamp(bounds.layers_min as i64, bounds.layers_max as i64);
    let growth = (position[1].round() as i64).clamp(bounds.growth_min as i64, bounds.growth_max as i64);
    BlockSpec::new(layers as u32, growth as u32)
}

/// Runs the full search and returns the decoded global best with the
/// complete history. The evaluator is assumed total; failure cases must
/// already map to zero fitness.
pub fn evolve<E: FitnessEvaluator>(
    config: &SwarmConfig,
    bounds: &Bounds,
    evaluator: &mut E,
) -> (BlockSpec, SwarmHistory) {
    config.validate().expect("invalid swarm config");
    bounds.validate().expect("invalid bounds");

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut particles = initialize_with(config, bounds, &mut rng);
    let mut cache: HashMap<BlockSpec, f64> = HashMap::new();
    let mut history = SwarmHistory::default();
    let mut global_best: Option<(f64, [f64; 2], usize)> = None; // fitness, position, history row

    for generation in 0..config.generations {
        // move every particle; with no global best yet the social term
        // vanishes (the particle's own position stands in)
        for p in particles.iter_mut() {
            let r1 = [rng.gen::<f64>(), rng.gen::<f64>()];
            let r2 = [rng.gen::<f64>(), rng.gen::<f64>()];
            let g = global_best.map(|(_, pos, _)| pos).unwrap_or(p.position);
            let v = update_velocity(p, g, config, bounds, r1, r2);
            let x = update_position(p, v, bounds);
            p.velocity = v;
            p.position = x;
        }

        // evaluate this generation's decoded blocks, serving repeats from
        // the cache so each block trains at most once per run
        let specs: Vec<BlockSpec> = particles
            .iter()
            .map(|p| decode_position(p.position, bounds))
            .collect();
        let mut misses = Vec::new();
        for &spec in &specs {
            if !cache.contains_key(&spec) && !misses.contains(&spec) {
                misses.push(spec);
            }
        }
        if !misses.is_empty() {
            let results = evaluator.evaluate_batch(&misses);
            assert_eq!(results.len(), misses.len(), "evaluator result count mismatch");
            for (spec, fitness) in misses.into_iter().zip(results) {
                cache.insert(spec, fitness);
            }
        }

        // assign fitness and update personal bests in index order
        for (i, p) in particles.iter_mut().enumerate() {
            let spec = specs[i];
            let fitness = cache[&spec];
            history.evaluations.push(EvalRecord {
                generation,
                particle_index: i as u32,
                position: p.position,
                spec,
                fitness,
                is_global_best: false,
            });
            if p.personal_best_fitness.map_or(true, |best| fitness > best) {
                p.personal_best_fitness = Some(fitness);
                p.personal_best_position = p.position;
                p.best_eval_index = Some(history.evaluations.len() - 1);
            }
        }

        // global best after the population loop, strict improvement only
        for p in particles.iter() {
            if let (Some(fitness), Some(row)) = (p.personal_best_fitness, p.best_eval_index) {
                if global_best.map_or(true, |(best, _, _)| fitness > best) {
                    global_best = Some((fitness, p.personal_best_position, row));
                }
            }
        }
        let (best_fitness, best_position, best_row) =
            global_best.expect("at least one evaluation per generation");
        history.evaluations[best_row].is_global_best = true;
        history.generations.push(GenerationRecord {
            generation,
            best_position,
            best_spec: decode_position(best_position, bounds),
            best_fitness,
        });
    }

    let (_, best_position, _) = global_best.expect("at least one generation");
    (decode_position(best_position, bounds), history)
}
