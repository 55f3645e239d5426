//! Shared fixtures for the criterion benchmarks.

use blockswarm::data::{generate_synthetic, Dataset};
use blockswarm::netspec::{build_network, BlockSpec, NetworkGraph};
use blockswarm::trainer::{initialize_parameters, ParamStore, Tensor};

/// A small single-block network at search-time shapes.
pub fn search_net() -> (NetworkGraph, ParamStore) {
    let graph = build_network(BlockSpec::new(4, 8), 1, (3, 8, 8), 10).unwrap();
    let params = initialize_parameters(&graph, 7);
    (graph, params)
}

/// A batch shaped like the search-time training batches.
pub fn search_batch(batch: usize) -> (Tensor, Vec<u32>) {
    let d = bench_dataset();
    let item = 3 * 8 * 8;
    let values = d.images.values[..batch * item].to_vec();
    let labels = d.labels[..batch].to_vec();
    (Tensor::from_values(vec![batch, 3, 8, 8], values), labels)
}

pub fn bench_dataset() -> Dataset {
    generate_synthetic(10, 64, 8, 1.0, 99)
}
