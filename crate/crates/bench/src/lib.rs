//! Shared inputs for the kernel benchmarks.

use good_core::gcn::{GcnModel, LabeledTrainingSet};
use good_core::graph::{build_normalized_adjacency, NormAdj, TagGraph};
use good_core::synth::{sbm_graph, SbmSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub graph: TagGraph,
    pub adj: NormAdj,
    pub model: GcnModel,
    pub train: LabeledTrainingSet,
}

/// SBM graph with `blocks` blocks of `block_size` nodes, a Glorot-initialized
/// model and every tenth node labeled.
pub fn fixture(blocks: usize, block_size: usize, hidden: usize) -> Fixture {
    let spec = SbmSpec {
        block_sizes: vec![block_size; blocks],
        p_in: 0.05,
        p_out: 0.005,
        feature_dim: 64.max(blocks),
        mean_scale: 3.0,
        noise_std: 1.0,
        seed: 7,
        zero_mean_blocks: vec![],
    };
    let graph = sbm_graph(&spec);
    let adj = build_normalized_adjacency(&graph);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = GcnModel::glorot(graph.feature_dim(), hidden, blocks, &mut rng);
    let nodes: Vec<usize> = (0..graph.num_nodes()).step_by(10).collect();
    let labels = nodes.iter().map(|&v| graph.label(v)).collect();
    let train = LabeledTrainingSet::oracle(nodes, labels).expect("distinct nodes");
    Fixture {
        graph,
        adj,
        model,
        train,
    }
}
