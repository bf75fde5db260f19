//! The production engine folds each family of per-pair consensus
//! multipliers into one aggregate per (node, task). These tests run the
//! unreduced formulation — every auxiliary variable and split multiplier
//! kept explicit — side by side with the engine and confirm the reduction
//! is exact, not approximate.

use dtsvm::core::{project_common, Hyperparams, LabeledDataset};
use dtsvm::datakit::{gen_synthetic, partition, PartitionPlan, SyntheticSpec};
use dtsvm::engine::Engine;
use dtsvm::topology::{build_topology, TopologyKind};
use dtsvm::unreduced::UnreducedRunner;

fn shared_setup() -> (Engine, UnreducedRunner) {
    let spec = SyntheticSpec {
        p: 2,
        tasks: 2,
        relatedness: 0.8,
        noise_sigma: 0.5,
        train_per_class: 50,
        test_per_class: 10,
        seed: 7,
    };
    let tasks = gen_synthetic(&spec).unwrap();
    let mut assignments: Vec<(usize, LabeledDataset)> = Vec::new();
    for task in &tasks {
        let plan = PartitionPlan { per_node: vec![(2, 2); 3], seed: 13 + task.train.task_id as u64 };
        for (node, part) in partition(&task.train, &plan).unwrap().into_iter().enumerate() {
            assignments.push((node, part));
        }
    }
    let hyper = Hyperparams::new(0.5, 1.0, 1.0, 1.0, 1.0).unwrap();
    let topo = build_topology(&TopologyKind::Full, 3).unwrap();
    let engine = Engine::new(topo.clone(), hyper.clone(), assignments.clone()).unwrap();
    let runner = UnreducedRunner::new(topo, hyper, assignments).unwrap();
    (engine, runner)
}

#[test]
fn aggregated_engine_tracks_unreduced_formulation() {
    let (mut engine, mut runner) = shared_setup();
    for round in 0..10 {
        engine.run_round();
        runner.run_round();
        for key in runner.keys() {
            let eng_r = engine.state(key.0, key.1).unwrap().r.as_array();
            let unred_r = runner.r(key.0, key.1).unwrap();
            for i in 0..eng_r.len() {
                let diff = (eng_r[i] - unred_r[i]).abs();
                assert!(
                    diff <= 1e-10,
                    "round {round} {key:?} coord {i}: engine {} vs unreduced {} (diff {diff:e})",
                    eng_r[i],
                    unred_r[i]
                );
            }
        }
    }
}

#[test]
fn split_multiplier_pairs_collapse() {
    // Each auxiliary consensus constraint carries two multipliers; zero
    // initialization keeps them equal at every iteration, which is what
    // licenses storing a single aggregate.
    let (_, mut runner) = shared_setup();
    for round in 0..10 {
        runner.run_round();
        for (key, a1, a2) in runner.alpha_pairs() {
            for i in 0..a1.len() {
                assert!(
                    (a1[i] - a2[i]).abs() <= 1e-13,
                    "round {round} alpha pair {key:?} coord {i}: {} vs {}",
                    a1[i],
                    a2[i]
                );
            }
        }
        for (key, b1, b2) in runner.beta_pairs() {
            for i in 0..b1.len() {
                assert!(
                    (b1[i] - b2[i]).abs() <= 1e-13,
                    "round {round} beta pair {key:?} coord {i}: {} vs {}",
                    b1[i],
                    b2[i]
                );
            }
        }
    }
}

#[test]
fn auxiliary_variables_follow_closed_form() {
    // With paired multipliers the per-pair auxiliary optimum is the
    // midpoint of the two shared-part iterates.
    let (_, mut runner) = shared_setup();
    for round in 0..6 {
        runner.run_round();
        for (v, t) in runner.keys() {
            for (v2, s) in runner.keys() {
                if v2 != v || s == t {
                    continue;
                }
                let Some(phi) = runner.phi(v, t, s) else { continue };
                let sum = runner.r(v, t).unwrap() + runner.r(v, s).unwrap();
                let mid = project_common(sum.view());
                for i in 0..phi.len() {
                    assert!(
                        (phi[i] - 0.5 * mid[i]).abs() <= 1e-12,
                        "round {round} phi({v},{t},{s}) coord {i}"
                    );
                }
            }
        }
    }
}

#[test]
fn engine_alpha_is_sum_of_split_multipliers() {
    let (mut engine, mut runner) = shared_setup();
    for round in 0..10 {
        engine.run_round();
        runner.run_round();
        for (v, t) in runner.keys() {
            let agg = runner.alpha_aggregate(v, t);
            let eng = &engine.state(v, t).unwrap().alpha;
            for i in 0..agg.len() {
                assert!(
                    (agg[i] - eng[i]).abs() <= 1e-12,
                    "round {round} ({v},{t}) coord {i}: sum {} vs engine {}",
                    agg[i],
                    eng[i]
                );
            }
        }
    }
}
