//! Turning a validated config plus one seed into run records.
//!
//! Everything downstream of the seed is deterministic: the seed fans out
//! into independent streams for topology sampling, data generation, and
//! partitioning, so changing e.g. the topology draw never perturbs the data.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array1;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use dtsvm::baselines::{train_csvm, BaselineError, DEFAULT_BIAS_RIDGE};
use dtsvm::core::{concat_datasets, CoreError, Hyperparams, LabeledDataset};
use dtsvm::datakit::{
    gen_synthetic, load_idx, make_task, partition, pca_fit, pca_transform, DatakitError,
    PartitionPlan, RawDataset, SyntheticSpec, TaskData,
};
use dtsvm::engine::{Engine, EngineError, RoundReport, StageDelta};
use dtsvm::topology::{build_topology, Topology, TopologyError, TopologyKind};

use crate::config::{ConfigError, DataSpec, Mode, ScenarioConfig, TopologySpec};
use crate::csvout::RunRecord;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Datakit(#[from] DatakitError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

/// Independent RNG streams fanned out from the run seed.
#[derive(Debug, Clone, Copy)]
pub struct DerivedSeeds {
    pub topology: u64,
    pub data: u64,
    pub partition: u64,
}

pub fn derive_seeds(seed: u64) -> DerivedSeeds {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    DerivedSeeds {
        topology: rng.next_u64(),
        data: rng.next_u64(),
        partition: rng.next_u64(),
    }
}

/// Fully materialized inputs for one run: the graph, each task's train/test
/// pools, and the per-node training shards.
pub struct Prepared {
    pub topology: Topology,
    pub tasks: Vec<TaskData>,
    /// task → (node, that node's training shard), holders in ascending order.
    pub holdings: BTreeMap<usize, Vec<(usize, LabeledDataset)>>,
}

pub fn prepare(cfg: &ScenarioConfig, seed: u64) -> Result<Prepared, ScenarioError> {
    let seeds = derive_seeds(seed);

    let kind = match &cfg.topology {
        TopologySpec::Full => TopologyKind::Full,
        TopologySpec::Ring => TopologyKind::Ring,
        TopologySpec::Random { edge_prob } => TopologyKind::Random {
            edge_prob: *edge_prob,
            seed: seeds.topology,
        },
        TopologySpec::Explicit { edges } => TopologyKind::Explicit(edges.clone()),
    };
    let topology = build_topology(&kind, cfg.nodes)?;

    let tasks = match &cfg.data {
        DataSpec::Synthetic {
            p,
            tasks,
            relatedness,
            noise_sigma,
            train_per_class,
            test_per_class,
        } => gen_synthetic(&SyntheticSpec {
            p: *p,
            tasks: *tasks,
            relatedness: *relatedness,
            noise_sigma: *noise_sigma,
            train_per_class: *train_per_class,
            test_per_class: *test_per_class,
            seed: seeds.data,
        })?,
        DataSpec::Mnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
            pca_k,
            digit_pairs,
        } => {
            let raw_train = load_idx(train_images, train_labels)?;
            let raw_test = load_idx(test_images, test_labels)?;
            let model = pca_fit(&raw_train.images, *pca_k)?;
            let train_proj = RawDataset {
                images: pca_transform(&model, &raw_train.images)?,
                labels: raw_train.labels,
            };
            let test_proj = RawDataset {
                images: pca_transform(&model, &raw_test.images)?,
                labels: raw_test.labels,
            };
            digit_pairs
                .iter()
                .enumerate()
                .map(|(t, &(pos, neg))| {
                    Ok(TaskData {
                        train: make_task(&train_proj, pos, neg, t)?,
                        test: make_task(&test_proj, pos, neg, t)?,
                    })
                })
                .collect::<Result<Vec<_>, DatakitError>>()?
        }
    };

    let mut holdings = BTreeMap::new();
    for a in &cfg.assignments {
        let holders = cfg.holder_nodes(a);
        let plan = PartitionPlan {
            per_node: vec![a.per_node; holders.len()],
            seed: seeds.partition.wrapping_add(a.task as u64),
        };
        let shards = partition(&tasks[a.task].train, &plan)?;
        holdings.insert(a.task, holders.into_iter().zip(shards).collect());
    }

    Ok(Prepared {
        topology,
        tasks,
        holdings,
    })
}

fn hyper_of(cfg: &ScenarioConfig) -> Result<Hyperparams, ScenarioError> {
    let h = Hyperparams::new(
        cfg.hyper.c,
        cfg.hyper.eps1,
        cfg.hyper.eps2,
        cfg.hyper.eta1,
        cfg.hyper.eta2,
    )?;
    Ok(match cfg.hyper.penalty {
        Some(x) => h.with_penalty(x),
        None => h,
    })
}

/// Rows for the stride rounds of a report stream: per task one network-wide
/// row (node = global) followed by one row per holding node.
fn records_from_reports(name: &str, seed: u64, reports: &[RoundReport]) -> Vec<RunRecord> {
    let mut out = Vec::new();
    for rep in reports {
        let (Some(per_task), Some(per_node)) = (&rep.per_task_risk, &rep.per_node_risk) else {
            continue;
        };
        for (&task, &risk) in per_task {
            out.push(RunRecord {
                scenario: name.to_string(),
                seed,
                round: rep.round as usize,
                task,
                node: None,
                risk,
                cross_node_residual: rep.cross_node_residual,
                cross_task_residual: rep.cross_task_residual,
                objective: rep.objective,
            });
            for (&(node, t), &node_risk) in per_node.iter().filter(|&(&(_, t), _)| t == task) {
                debug_assert_eq!(t, task);
                out.push(RunRecord {
                    scenario: name.to_string(),
                    seed,
                    round: rep.round as usize,
                    task,
                    node: Some(node),
                    risk: node_risk,
                    cross_node_residual: rep.cross_node_residual,
                    cross_task_residual: rep.cross_task_residual,
                    objective: rep.objective,
                });
            }
        }
    }
    out
}

fn consensus_records(
    cfg: &ScenarioConfig,
    seed: u64,
    prep: &Prepared,
    train_tasks: &[usize],
) -> Result<Vec<RunRecord>, ScenarioError> {
    let mut datasets = Vec::new();
    for &t in train_tasks {
        for (node, shard) in &prep.holdings[&t] {
            datasets.push((*node, shard.clone()));
        }
    }
    let mut engine = Engine::new(prep.topology.clone(), hyper_of(cfg)?, datasets)?;
    for &t in train_tasks {
        engine.attach_test(prep.tasks[t].test.clone())?;
    }
    engine.set_risk_stride(cfg.risk_stride)?;
    let reports = engine.run(cfg.max_rounds, cfg.consensus_tol);
    Ok(records_from_reports(&cfg.name, seed, &reports))
}

fn csvm_records(
    cfg: &ScenarioConfig,
    seed: u64,
    prep: &Prepared,
) -> Result<Vec<RunRecord>, ScenarioError> {
    let mut out = Vec::new();
    for (&task, shards) in &prep.holdings {
        let parts: Vec<LabeledDataset> = shards.iter().map(|(_, d)| d.clone()).collect();
        let pooled = concat_datasets(&parts)?;
        let (w, b) = train_csvm(&pooled, cfg.hyper.c, DEFAULT_BIAS_RIDGE)?;
        out.push(RunRecord {
            scenario: cfg.name.clone(),
            seed,
            round: 0,
            task,
            node: None,
            risk: holdout_risk(&w, b, &prep.tasks[task].test),
            cross_node_residual: 0.0,
            cross_task_residual: 0.0,
            objective: csvm_objective(&w, b, &pooled, cfg.hyper.c),
        });
    }
    Ok(out)
}

fn holdout_risk(w: &Array1<f64>, b: f64, test: &LabeledDataset) -> f64 {
    let scores = test.features.dot(w) + b;
    let wrong = scores
        .iter()
        .zip(test.labels.iter())
        .filter(|&(&s, &y)| {
            let pred = if s >= 0.0 { 1.0 } else { -1.0 };
            pred != y
        })
        .count();
    wrong as f64 / test.labels.len() as f64
}

fn csvm_objective(w: &Array1<f64>, b: f64, data: &LabeledDataset, c: f64) -> f64 {
    let mut hinge = 0.0;
    for (row, &y) in data.features.rows().into_iter().zip(data.labels.iter()) {
        hinge += (1.0 - y * (row.dot(w) + b)).max(0.0);
    }
    0.5 * w.dot(w) + 0.5 * DEFAULT_BIAS_RIDGE * b * b + c * hinge
}

fn online_records(
    cfg: &ScenarioConfig,
    seed: u64,
    prep: &Prepared,
) -> Result<Vec<RunRecord>, ScenarioError> {
    let online = cfg.online.as_ref().expect("validated: online mode");
    let initial: BTreeSet<usize> = online.initial_tasks.iter().copied().collect();
    let all_tasks: Vec<usize> = prep.holdings.keys().copied().collect();

    let mut datasets = Vec::new();
    for &t in &initial {
        for (node, shard) in &prep.holdings[&t] {
            datasets.push((*node, shard.clone()));
        }
    }
    let mut main = Engine::new(prep.topology.clone(), hyper_of(cfg)?, datasets)?;
    for &t in &all_tasks {
        main.attach_test(prep.tasks[t].test.clone())?;
    }
    main.set_risk_stride(cfg.risk_stride)?;

    // Tasks waiting to join train on their own as isolated single-task
    // consensus networks (the dsvm setting), so their plateau risk is the
    // no-transfer reference the join is measured against.
    let solo_hyper = {
        let h = Hyperparams::new(cfg.hyper.c, 2.0, 2.0, cfg.hyper.eta1, cfg.hyper.eta2)?;
        match cfg.hyper.penalty {
            Some(x) => h.with_penalty(x),
            None => h,
        }
    };
    let mut sides: BTreeMap<usize, Engine> = BTreeMap::new();
    for &t in &all_tasks {
        if initial.contains(&t) {
            continue;
        }
        let datasets: Vec<_> = prep.holdings[&t]
            .iter()
            .map(|(node, shard)| (*node, shard.clone()))
            .collect();
        let mut side = Engine::new(prep.topology.clone(), solo_hyper.clone(), datasets)?;
        side.attach_test(prep.tasks[t].test.clone())?;
        side.set_risk_stride(cfg.risk_stride)?;
        sides.insert(t, side);
    }

    let mut stages = online.stages.iter().peekable();
    let mut out = Vec::new();
    for _ in 0..cfg.max_rounds {
        while let Some(stage) = stages.peek() {
            if stage.start_round != main.round() {
                break;
            }
            let mut delta = StageDelta {
                joins: Vec::new(),
                leaves: Vec::new(),
            };
            for &t in &stage.leaves {
                for node in main.holders(t) {
                    delta.leaves.push((node, t));
                }
            }
            for &t in &stage.joins {
                sides.remove(&t);
                for (node, shard) in &prep.holdings[&t] {
                    delta.joins.push((*node, shard.clone()));
                }
            }
            main.apply_stage(delta)?;
            stages.next();
        }

        let mut reports = vec![main.run_round()];
        for side in sides.values_mut() {
            reports.push(side.run_round());
        }
        // Each report carries disjoint task sets (a task is either in the
        // main network or in its side network), so rows can be pooled and
        // re-sorted by task for a deterministic row order within the round.
        let mut round_rows = Vec::new();
        for rep in &reports {
            round_rows.extend(records_from_reports(
                &cfg.name,
                seed,
                std::slice::from_ref(rep),
            ));
        }
        round_rows.sort_by_key(|r| (r.task, r.node.map_or(0, |n| n + 1)));
        out.extend(round_rows);
    }
    Ok(out)
}

pub fn run_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Vec<RunRecord>, ScenarioError> {
    cfg.validate()?;
    let prep = prepare(cfg, seed)?;
    match cfg.mode {
        Mode::Dtsvm | Mode::Mixed => {
            let tasks: Vec<usize> = prep.holdings.keys().copied().collect();
            consensus_records(cfg, seed, &prep, &tasks)
        }
        Mode::Dsvm => {
            let task = cfg
                .dsvm_task
                .unwrap_or_else(|| *prep.holdings.keys().next().expect("validated: assigned"));
            consensus_records(cfg, seed, &prep, &[task])
        }
        Mode::Csvm => csvm_records(cfg, seed, &prep),
        Mode::Online => online_records(cfg, seed, &prep),
    }
}

/// All configured seeds, concatenated in listed order.
pub fn run_all(cfg: &ScenarioConfig) -> Result<Vec<RunRecord>, ScenarioError> {
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        out.extend(run_scenario(cfg, seed)?);
    }
    Ok(out)
}
