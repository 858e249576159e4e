//! Cross-module integration checks that exercise the full build pipeline at
//! a moderate scale.

use cardgrid_core::armodel::TrainConfig;
use cardgrid_core::bench::{generate_workload, q_error, WorkloadConfig};
use cardgrid_core::estimator::{CardGrid, EngineConfig};
use cardgrid_core::grid::GridMode;
use cardgrid_core::oracle::true_cardinality_single;
use cardgrid_core::synth::mixed_table;

/// Training must improve held-out likelihood epoch over epoch, within a 5%
/// tolerance for mini-batch noise.
#[test]
fn holdout_nll_non_increasing_within_tolerance() {
    let table = mixed_table(8_000, 0xFADE);
    let config = EngineConfig {
        mode: GridMode::Cdf,
        bucket_counts: Some(vec![8, 8, 8]),
        tree_depth: 5,
        gamma: 2000,
        emb_dim: 16,
        hidden_sizes: vec![128, 128],
        train: TrainConfig {
            epochs: 8,
            batch_size: 256,
            learning_rate: 1e-2,
            wildcard_dropout: 0.25,
            seed: 0xFADE,
        },
        holdout_fraction: 0.1,
    };
    let (_, stats) = CardGrid::build(&table, config).unwrap();
    assert_eq!(stats.holdout_nll.len(), 8);
    for (e, pair) in stats.holdout_nll.windows(2).enumerate() {
        assert!(
            pair[1] <= pair[0] * 1.05,
            "held-out NLL rose beyond tolerance at epoch {}: {} -> {} (full: {:?})",
            e + 1,
            pair[0],
            pair[1],
            stats.holdout_nll
        );
    }
}

/// A small end-to-end smoke: build with near-default settings and check
/// that estimates track the oracle on an anchored workload.
#[test]
fn end_to_end_estimates_track_truth() {
    let table = mixed_table(6_000, 0xE2E);
    let config = EngineConfig {
        bucket_counts: Some(vec![10, 10, 10]),
        hidden_sizes: vec![128, 128],
        emb_dim: 16,
        train: TrainConfig {
            epochs: 6,
            ..TrainConfig::defaults(0xE2E)
        },
        ..EngineConfig::defaults(0xE2E)
    };
    let (engine, _) = CardGrid::build(&table, config).unwrap();
    let queries = generate_workload(&table, &WorkloadConfig::defaults(40, 0xAB));
    let mut qerrs: Vec<f64> = queries
        .iter()
        .map(|q| {
            let truth = true_cardinality_single(&table, q).unwrap();
            let est = engine.estimate(q).unwrap().cardinality;
            q_error(truth as f64, est)
        })
        .collect();
    qerrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = qerrs[qerrs.len() / 2];
    assert!(median < 5.0, "median q-error {median} unexpectedly large");
}
