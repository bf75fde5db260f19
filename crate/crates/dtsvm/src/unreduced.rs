//! Test oracle: the consensus iteration with nothing eliminated.
//!
//! Every cross-task pair keeps its own auxiliary vector φ and a split
//! multiplier pair (α₁, α₂); every directed neighbor pair keeps ω and
//! (β₁, β₂). Updates are applied literally, one triple at a time. The
//! engine's aggregated iteration must reproduce this trajectory exactly —
//! that equivalence is what the integration tests pin down. Nothing here
//! is meant for production use.

use std::collections::BTreeMap;

use ndarray::{s, Array1};

use crate::core::{augment, AugmentedTask, Hyperparams, LabeledDataset, PenaltyMode};
use crate::engine::{assemble_local_qp, build_u_diag, update_r, EngineError};
use crate::qpbox::solve_box_qp;
use crate::topology::Topology;

type Key = (usize, usize);
/// (node, other task, own task) for φ triples; (node, neighbor, task) for ω.
type Triple = (usize, usize, usize);

pub struct UnreducedRunner {
    topology: Topology,
    hyper: Hyperparams,
    penalty: f64,
    p: usize,
    data: BTreeMap<Key, AugmentedTask>,
    u_diag: BTreeMap<Key, Array1<f64>>,
    r: BTreeMap<Key, Array1<f64>>,
    lambda: BTreeMap<Key, Array1<f64>>,
    phi: BTreeMap<Triple, Array1<f64>>,
    alpha1: BTreeMap<Triple, Array1<f64>>,
    alpha2: BTreeMap<Triple, Array1<f64>>,
    omega: BTreeMap<Triple, Array1<f64>>,
    beta1: BTreeMap<Triple, Array1<f64>>,
    beta2: BTreeMap<Triple, Array1<f64>>,
}

impl UnreducedRunner {
    /// Mirrors the engine constructor: same penalty rule, same U diagonals,
    /// zero-initialized iterates and multipliers.
    pub fn new(
        topology: Topology,
        hyper: Hyperparams,
        datasets: Vec<(usize, LabeledDataset)>,
    ) -> Result<Self, EngineError> {
        hyper.validate()?;
        let mut data = BTreeMap::new();
        let mut p: Option<usize> = None;
        let mut tasks = std::collections::BTreeSet::new();
        for (node, ds) in datasets {
            if node >= topology.node_count() {
                return Err(EngineError::NodeOutOfRange {
                    node,
                    nodes: topology.node_count(),
                });
            }
            p.get_or_insert(ds.dim());
            tasks.insert(ds.task_id);
            if data.insert((node, ds.task_id), augment(&ds)).is_some() {
                return Err(EngineError::DuplicateAssignment { node, task: ds.task_id });
            }
        }
        let Some(p) = p else {
            return Err(EngineError::EmptyAssignment);
        };
        let penalty = match hyper.penalty_mode {
            PenaltyMode::GlobalVtc => {
                topology.node_count() as f64 * tasks.len() as f64 * hyper.c
            }
            PenaltyMode::Explicit(x) => x,
        };

        let keys: Vec<Key> = data.keys().copied().collect();
        let mut u_diag = BTreeMap::new();
        let mut r = BTreeMap::new();
        let mut lambda = BTreeMap::new();
        let mut phi = BTreeMap::new();
        let mut alpha1 = BTreeMap::new();
        let mut alpha2 = BTreeMap::new();
        let mut omega = BTreeMap::new();
        let mut beta1 = BTreeMap::new();
        let mut beta2 = BTreeMap::new();
        for &(v, t) in &keys {
            let local: Vec<usize> =
                keys.iter().filter(|&&(v2, _)| v2 == v).map(|&(_, s)| s).collect();
            let nbt: Vec<usize> = topology
                .neighbors(v)
                .iter()
                .copied()
                .filter(|&u| data.contains_key(&(u, t)))
                .collect();
            if nbt.is_empty() {
                return Err(EngineError::IsolatedTask { node: v, task: t });
            }
            u_diag.insert((v, t), build_u_diag(&hyper, local.len(), nbt.len(), p)?);
            r.insert((v, t), Array1::zeros(2 * (p + 1)));
            lambda.insert((v, t), Array1::zeros(data[&(v, t)].n()));
            for &s in &local {
                if s != t {
                    phi.insert((v, t, s), Array1::zeros(p + 1));
                    alpha1.insert((v, t, s), Array1::zeros(p + 1));
                    alpha2.insert((v, t, s), Array1::zeros(p + 1));
                }
            }
            for &u in &nbt {
                omega.insert((v, u, t), Array1::zeros(2 * (p + 1)));
                beta1.insert((v, u, t), Array1::zeros(2 * (p + 1)));
                beta2.insert((v, u, t), Array1::zeros(2 * (p + 1)));
            }
        }
        Ok(UnreducedRunner {
            topology,
            hyper,
            penalty,
            p,
            data,
            u_diag,
            r,
            lambda,
            phi,
            alpha1,
            alpha2,
            omega,
            beta1,
            beta2,
        })
    }

    fn local_tasks(&self, v: usize) -> Vec<usize> {
        self.r
            .keys()
            .filter(|&&(v2, _)| v2 == v)
            .map(|&(_, s)| s)
            .collect()
    }

    fn same_task_neighbors(&self, v: usize, t: usize) -> Vec<usize> {
        self.topology
            .neighbors(v)
            .iter()
            .copied()
            .filter(|&u| self.r.contains_key(&(u, t)))
            .collect()
    }

    /// One full unreduced round: build each local linear term from the
    /// split multipliers and auxiliaries, solve the same dual QP, then
    /// update φ/ω by their closed forms (using pre-update multipliers)
    /// and finally step all four multiplier families.
    pub fn run_round(&mut self) {
        let p = self.p;
        let dim = 2 * (p + 1);
        let keys: Vec<Key> = self.r.keys().copied().collect();

        let mut new_r: BTreeMap<Key, Array1<f64>> = BTreeMap::new();
        for &(v, t) in &keys {
            let mut ft = Array1::zeros(dim);
            for s in self.local_tasks(v) {
                if s == t {
                    continue;
                }
                let mut head = ft.slice_mut(s![..p + 1]);
                head += &self.alpha1[&(v, t, s)];
                head -= &self.alpha2[&(v, s, t)];
                head.scaled_add(-self.hyper.eta1, &self.phi[&(v, t, s)]);
                head.scaled_add(-self.hyper.eta1, &self.phi[&(v, s, t)]);
            }
            for u in self.same_task_neighbors(v, t) {
                ft += &self.beta1[&(v, u, t)];
                ft -= &self.beta2[&(u, v, t)];
                ft.scaled_add(-self.hyper.eta2, &self.omega[&(v, u, t)]);
                ft.scaled_add(-self.hyper.eta2, &self.omega[&(u, v, t)]);
            }
            let task = &self.data[&(v, t)];
            let u_diag = &self.u_diag[&(v, t)];
            let qp = assemble_local_qp(task, u_diag.view(), ft.view(), self.penalty)
                .expect("validated at construction");
            let sol = solve_box_qp(&qp, Some(self.lambda[&(v, t)].view()))
                .expect("warm start length");
            self.lambda.insert((v, t), sol.lambda);
            let r =
                update_r(task, self.lambda[&(v, t)].view(), ft.view(), u_diag.view());
            new_r.insert((v, t), r.as_array().clone());
        }

        let inv_eta1 = 1.0 / (2.0 * self.hyper.eta1);
        for (&(v, t, s), phi) in self.phi.iter_mut() {
            let mut val = 0.5
                * (&new_r[&(v, t)].slice(s![..p + 1]) + &new_r[&(v, s)].slice(s![..p + 1]));
            val.scaled_add(inv_eta1, &self.alpha1[&(v, t, s)]);
            val.scaled_add(-inv_eta1, &self.alpha2[&(v, t, s)]);
            *phi = val;
        }
        let inv_eta2 = 1.0 / (2.0 * self.hyper.eta2);
        for (&(v, u, t), omega) in self.omega.iter_mut() {
            let mut val = 0.5 * (&new_r[&(v, t)] + &new_r[&(u, t)]);
            val.scaled_add(inv_eta2, &self.beta1[&(v, u, t)]);
            val.scaled_add(-inv_eta2, &self.beta2[&(v, u, t)]);
            *omega = val;
        }

        for (&(v, t, _s), a1) in self.alpha1.iter_mut() {
            let key = (v, t, _s);
            a1.scaled_add(self.hyper.eta1, &new_r[&(v, t)].slice(s![..p + 1]));
            a1.scaled_add(-self.hyper.eta1, &self.phi[&key]);
        }
        for (&(v, _t, s), a2) in self.alpha2.iter_mut() {
            let key = (v, _t, s);
            a2.scaled_add(self.hyper.eta1, &self.phi[&key]);
            a2.scaled_add(-self.hyper.eta1, &new_r[&(v, s)].slice(s![..p + 1]));
        }
        for (&(v, _u, t), b1) in self.beta1.iter_mut() {
            let key = (v, _u, t);
            b1.scaled_add(self.hyper.eta2, &new_r[&(v, t)]);
            b1.scaled_add(-self.hyper.eta2, &self.omega[&key]);
        }
        for (&(_v, u, t), b2) in self.beta2.iter_mut() {
            let key = (_v, u, t);
            b2.scaled_add(self.hyper.eta2, &self.omega[&key]);
            b2.scaled_add(-self.hyper.eta2, &new_r[&(u, t)]);
        }

        self.r = new_r;
    }

    pub fn keys(&self) -> Vec<Key> {
        self.r.keys().copied().collect()
    }

    pub fn r(&self, node: usize, task: usize) -> Option<&Array1<f64>> {
        self.r.get(&(node, task))
    }

    pub fn phi(&self, node: usize, own_task: usize, other_task: usize) -> Option<&Array1<f64>> {
        self.phi.get(&(node, own_task, other_task))
    }

    pub fn alpha_pairs(&self) -> impl Iterator<Item = (&Triple, &Array1<f64>, &Array1<f64>)> {
        self.alpha1
            .iter()
            .map(|(k, a1)| (k, a1, &self.alpha2[k]))
    }

    pub fn beta_pairs(&self) -> impl Iterator<Item = (&Triple, &Array1<f64>, &Array1<f64>)> {
        self.beta1.iter().map(|(k, b1)| (k, b1, &self.beta2[k]))
    }

    /// Sum of the first-family cross-task multipliers at (v, t) — the
    /// quantity the engine tracks as a single aggregated α.
    pub fn alpha_aggregate(&self, node: usize, task: usize) -> Array1<f64> {
        let mut acc = Array1::zeros(self.p + 1);
        for ((v, t, _), a1) in self.alpha1.iter() {
            if *v == node && *t == task {
                acc += a1;
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, TopologyKind};
    use ndarray::{arr1, arr2};

    #[test]
    fn split_multipliers_stay_paired_on_symmetric_pair() {
        let topo = build_topology(&TopologyKind::Full, 2).unwrap();
        let hyper = Hyperparams::new(0.5, 1.0, 1.0, 1.0, 1.0).unwrap();
        let d0 = LabeledDataset::new(arr2(&[[1.0], [-0.5]]), arr1(&[1.0, -1.0]), 0).unwrap();
        let d1 = LabeledDataset::new(arr2(&[[0.8], [-1.2]]), arr1(&[1.0, -1.0]), 0).unwrap();
        let mut orc = UnreducedRunner::new(topo, hyper, vec![(0, d0), (1, d1)]).unwrap();
        for _ in 0..5 {
            orc.run_round();
            for (_, b1, b2) in orc.beta_pairs() {
                for (x, y) in b1.iter().zip(b2.iter()) {
                    assert!((x - y).abs() < 1e-13);
                }
            }
        }
    }
}
