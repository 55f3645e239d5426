//! Progressive stacking: replicate the evolved block 1, 2, 3, ... times,
//! train each candidate on a split of the full training set under the same
//! early-stopping contract as fitness evaluation, and stop the first time a
//! candidate fails to strictly beat the incumbent (or cannot fit the budget).

use crate::data::{DataError, Dataset};
use crate::fitness::{train_block_early_stopped, FitnessConfig};
use crate::netspec::{build_network, check_budget, BlockSpec, MemoryBudget, NetworkGraph};

/// One stacked candidate. An over-budget candidate is recorded but never
/// trained, so it carries no accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct StackCandidate {
    pub stack_count: u32,
    /// Absent only when the input geometry cannot carry this many blocks.
    pub graph: Option<NetworkGraph>,
    pub held_out_accuracy: Option<f64>,
    pub over_budget: bool,
}

/// The chosen candidate plus everything that was visited.
#[derive(Debug, Clone, PartialEq)]
pub struct StackSelection {
    pub best_index: usize,
    pub candidates: Vec<StackCandidate>,
}

impl StackSelection {
    pub fn best(&self) -> &StackCandidate {
        &self.candidates[self.best_index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StackOptions {
    /// Number of additional non-improving candidates to train before
    /// stopping, instead of stopping at the first one.
    pub explore_past_failure: u32,
}

/// What training one candidate produced.
pub enum CandidateOutcome {
    Trained { accuracy: f64 },
    Diverged,
}

/// The stacking loop with an injectable trainer: builds the graph for each
/// stack count in order, stops on budget breach or geometry exhaustion
/// before training, otherwise calls `train` and applies the
/// strict-improvement stop rule.
pub fn run_stacking(
    block: BlockSpec,
    input_shape: (usize, usize, usize),
    num_classes: usize,
    budget: &MemoryBudget,
    batch_size: usize,
    options: StackOptions,
    mut train: impl FnMut(u32, &NetworkGraph) -> CandidateOutcome,
) -> StackSelection {
    let mut candidates: Vec<StackCandidate> = Vec::new();
    let mut best_index: Option<usize> = None;
    let mut non_improvements = 0u32;

    for stack_count in 1u32.. {
        let graph = match build_network(block, stack_count, input_shape, num_classes) {
            Ok(g) => g,
            Err(_) => {
                // geometry exhausted: record a resource-limited candidate
                candidates.push(StackCandidate {
                    stack_count,
                    graph: None,
                    held_out_accuracy: None,
                    over_budget: true,
                });
                break;
            }
        };
        if !check_budget(&graph, budget, batch_size) {
            candidates.push(StackCandidate {
                stack_count,
                graph: Some(graph),
                held_out_accuracy: None,
                over_budget: true,
            });
            break;
        }
        match train(stack_count, &graph) {
            CandidateOutcome::Trained { accuracy } => {
                candidates.push(StackCandidate {
                    stack_count,
                    graph: Some(graph),
                    held_out_accuracy: Some(accuracy),
                    over_budget: false,
                });
                let improved = match best_index {
                    None => true,
                    Some(i) => accuracy > candidates[i].held_out_accuracy.unwrap(),
                };
                if improved {
                    best_index = Some(candidates.len() - 1);
                } else {
                    non_improvements += 1;
                    if non_improvements > options.explore_past_failure {
                        break;
                    }
                }
            }
            CandidateOutcome::Diverged => {
                candidates.push(StackCandidate {
                    stack_count,
                    graph: Some(graph),
                    held_out_accuracy: None,
                    over_budget: false,
                });
                break;
            }
        }
    }

    StackSelection {
        // a diverged or over-budget first candidate still needs an answer;
        // fall back to the first entry
        best_index: best_index.unwrap_or(0),
        candidates,
    }
}

/// Trains real candidates: splits the full training set once, then runs the
/// fitness-style early-stopped Adam training per stack count.
pub fn stack_and_select(
    block: BlockSpec,
    full_training_set: &Dataset,
    config: &FitnessConfig,
    budget: &MemoryBudget,
    options: StackOptions,
) -> Result<StackSelection, DataError> {
    let (train, test) = crate::fitness::split_subset(
        full_training_set,
        config.split_fraction,
        config.rng_seed,
    )?;
    Ok(run_stacking(
        block,
        full_training_set.shape(),
        full_training_set.class_count,
        budget,
        config.batch_size,
        options,
        |_, graph| {
            let outcome = train_block_early_stopped(graph, &train, &test, config, |_, _| {});
            if outcome.diverged {
                CandidateOutcome::Diverged
            } else {
                CandidateOutcome::Trained {
                    accuracy: outcome.best_accuracy,
                }
            }
        },
    ))
}

/// CSV with one row per visited candidate
/// (`stack_count,parameters,accuracy,over_budget`).
pub fn candidates_to_csv(candidates: &[StackCandidate]) -> String {
    let mut out = String::from("stack_count,parameters,accuracy,over_budget\n");
    for c in candidates {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.stack_count,
            c.graph.as_ref().map(|g| g.total_parameters).unwrap_or(0),
            c.held_out_accuracy
                .map(|a| a.to_string())
                .unwrap_or_default(),
            c.over_budget
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn injected(seq: &[f64]) -> impl FnMut(u32, &NetworkGraph) -> CandidateOutcome + '_ {
        |stack_count, _| CandidateOutcome::Trained {
            accuracy: seq[(stack_count - 1) as usize],
        }
    }

    const SHAPE: (usize, usize, usize) = (3, 32, 32);
    const NO_LIMIT: MemoryBudget = MemoryBudget {
        max_parameters: u64::MAX,
        max_activation_bytes: u64::MAX,
    };

    #[test]
    fn rising_then_falling_selects_the_peak() {
        let seq = [0.80, 0.86, 0.89, 0.88];
        let sel = run_stacking(
            BlockSpec::new(4, 8),
            SHAPE,
            10,
            &NO_LIMIT,
            16,
            StackOptions::default(),
            injected(&seq),
        );
        assert_eq!(sel.candidates.len(), 4); // the failing candidate is trained
        assert_eq!(sel.best().stack_count, 3);
        assert_eq!(sel.best().held_out_accuracy, Some(0.89));
    }

    #[test]
    fn immediate_decline_stops_after_two_trainings() {
        let seq = [0.90, 0.85];
        let mut trained = 0;
        let sel = run_stacking(
            BlockSpec::new(4, 8),
            SHAPE,
            10,
            &NO_LIMIT,
            16,
            StackOptions::default(),
            |stack_count, _| {
                trained += 1;
                CandidateOutcome::Trained {
                    accuracy: seq[(stack_count - 1) as usize],
                }
            },
        );
        assert_eq!(trained, 2);
        assert_eq!(sel.best().stack_count, 1);
    }

    #[test]
    fn budget_stops_before_training_the_oversized_candidate() {
        let block = BlockSpec::new(4, 8);
        // pin the budget between the stack-1 and stack-2 parameter counts
        let p1 = build_network(block, 1, SHAPE, 10).unwrap().total_parameters;
        let p2 = build_network(block, 2, SHAPE, 10).unwrap().total_parameters;
        assert!(p2 > p1);
        let budget = MemoryBudget::new((p1 + p2) / 2, u64::MAX);

        let mut trained = 0;
        let sel = run_stacking(
            block,
            SHAPE,
            10,
            &budget,
            16,
            StackOptions::default(),
            |_, _| {
                trained += 1;
                CandidateOutcome::Trained { accuracy: 0.7 }
            },
        );
        assert_eq!(trained, 1);
        assert_eq!(sel.candidates.len(), 2);
        assert!(sel.candidates[1].over_budget);
        assert_eq!(sel.candidates[1].held_out_accuracy, None);
        assert_eq!(sel.best().stack_count, 1);
    }

    #[test]
    fn geometry_exhaustion_ends_the_loop() {
        // 8x8 input: stack 4 needs three halvings down to 1x1, rejected
        let seq = [0.5, 0.6, 0.7, 0.9];
        let sel = run_stacking(
            BlockSpec::new(2, 4),
            (3, 8, 8),
            5,
            &NO_LIMIT,
            8,
            StackOptions::default(),
            injected(&seq),
        );
        assert_eq!(sel.candidates.len(), 4);
        assert!(sel.candidates[3].over_budget);
        assert!(sel.candidates[3].graph.is_none());
        assert_eq!(sel.best().stack_count, 3);
    }

    #[test]
    fn explore_past_failure_trains_extra_candidates() {
        let seq = [0.8, 0.7, 0.85, 0.9, 0.84];
        let sel = run_stacking(
            BlockSpec::new(4, 8),
            SHAPE,
            10,
            &NO_LIMIT,
            16,
            StackOptions {
                explore_past_failure: 1,
            },
            injected(&seq),
        );
        // stack 2 fails (allowance used), 3 and 4 improve, 5 fails and stops
        assert_eq!(sel.candidates.len(), 5);
        assert_eq!(sel.best().stack_count, 4);
    }

    #[test]
    fn stack_counts_are_consecutive_and_best_is_strictly_greatest() {
        let seq = [0.3, 0.5, 0.5, 0.4, 0.45];
        let sel = run_stacking(
            BlockSpec::new(4, 8),
            SHAPE,
            10,
            &NO_LIMIT,
            16,
            StackOptions {
                explore_past_failure: 2,
            },
            injected(&seq),
        );
        for (i, c) in sel.candidates.iter().enumerate() {
            assert_eq!(c.stack_count as usize, i + 1);
        }
        // the 0.5 tie keeps the earlier candidate
        assert_eq!(sel.best().stack_count, 2);
        let best_acc = sel.best().held_out_accuracy.unwrap();
        for (i, c) in sel.candidates.iter().enumerate() {
            if i != sel.best_index {
                if let Some(acc) = c.held_out_accuracy {
                    assert!(acc <= best_acc);
                }
            }
        }
    }

    #[test]
    fn divergence_stops_gracefully() {
        let sel = run_stacking(
            BlockSpec::new(4, 8),
            SHAPE,
            10,
            &NO_LIMIT,
            16,
            StackOptions::default(),
            |stack_count, _| {
                if stack_count == 2 {
                    CandidateOutcome::Diverged
                } else {
                    CandidateOutcome::Trained { accuracy: 0.6 }
                }
            },
        );
        assert_eq!(sel.candidates.len(), 2);
        assert_eq!(sel.best().stack_count, 1);
        assert_eq!(sel.candidates[1].held_out_accuracy, None);
        assert!(!sel.candidates[1].over_budget);
    }

    #[test]
    fn real_training_path_runs_and_is_deterministic() {
        let d = generate_synthetic(2, 10, 8, 0.0, 31);
        let config = FitnessConfig {
            patience: 1,
            max_epochs_cap: 3,
            batch_size: 8,
            rng_seed: 5,
            ..Default::default()
        };
        let a = stack_and_select(
            BlockSpec::new(1, 4),
            &d,
            &config,
            &NO_LIMIT,
            StackOptions::default(),
        )
        .unwrap();
        let b = stack_and_select(
            BlockSpec::new(1, 4),
            &d,
            &config,
            &NO_LIMIT,
            StackOptions::default(),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(!a.candidates.is_empty());
        assert!(a.best().held_out_accuracy.is_some());
    }

    #[test]
    fn csv_lists_every_candidate() {
        let seq = [0.9, 0.1];
        let sel = run_stacking(
            BlockSpec::new(2, 4),
            SHAPE,
            10,
            &NO_LIMIT,
            8,
            StackOptions::default(),
            injected(&seq),
        );
        let csv = candidates_to_csv(&sel.candidates);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("stack_count,parameters,accuracy,over_budget"));
        assert!(lines[1].contains("0.9"));
    }
}
