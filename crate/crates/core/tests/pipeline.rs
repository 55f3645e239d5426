//! The library surface end to end at miniature scale: sample a subset,
//! evolve a block with real fitness evaluation, stack it, and confirm the
//! whole chain is deterministic.

use blockswarm::data::{generate_synthetic, sample_subset};
use blockswarm::fitness::{evaluate_block, FitnessConfig};
use blockswarm::netspec::MemoryBudget;
use blockswarm::stacker::{stack_and_select, StackOptions};
use blockswarm::swarm::{evolve, Bounds, SwarmConfig};
use blockswarm::BlockSpec;

fn search_once(seed: u64) -> (BlockSpec, String, u32) {
    let data = generate_synthetic(3, 20, 8, 0.5, 41);
    let subset = sample_subset(&data, 0.5, seed).unwrap();
    let fitness_config = FitnessConfig {
        patience: 2,
        max_epochs_cap: 3,
        batch_size: 8,
        rng_seed: seed,
        ..Default::default()
    };
    let swarm_config = SwarmConfig {
        population_size: 4,
        generations: 3,
        rng_seed: seed,
        ..Default::default()
    };
    let bounds = Bounds {
        layers_min: 1,
        layers_max: 3,
        growth_min: 4,
        growth_max: 6,
    };
    let (block, history) = evolve(&swarm_config, &bounds, &mut |spec: BlockSpec| {
        evaluate_block(spec, &subset, &fitness_config).fitness
    });

    let selection = stack_and_select(
        block,
        &data,
        &fitness_config,
        &MemoryBudget::new(u64::MAX, u64::MAX),
        StackOptions::default(),
    )
    .unwrap();
    (block, history.to_csv(), selection.best().stack_count)
}

#[test]
fn subset_search_and_stacking_run_deterministically() {
    let (block_a, history_a, stack_a) = search_once(11);
    let (block_b, history_b, stack_b) = search_once(11);
    assert_eq!(block_a, block_b);
    assert_eq!(history_a, history_b);
    assert_eq!(stack_a, stack_b);

    assert_eq!(history_a.lines().count(), 1 + 12, "header plus 4 x 3 rows");
    assert!(stack_a >= 1);
    let bounds_ok = (1..=3).contains(&block_a.num_layers) && (4..=6).contains(&block_a.growth_rate);
    assert!(bounds_ok, "evolved block {block_a} escaped its bounds");
}

#[test]
fn different_seeds_may_change_the_outcome_but_never_the_contract() {
    let (block, history, _) = search_once(12);
    // fitness values are accuracies: always within [0, 1]
    for line in history.lines().skip(1) {
        let fitness: f64 = line.split(',').nth(6).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&fitness));
    }
    assert!((1..=3).contains(&block.num_layers));
}
