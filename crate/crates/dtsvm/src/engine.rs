//! The consensus engine: synchronous per-(node, task) rounds over a network.
//!
//! Each round, every (node, task) pair solves a small box QP built from its
//! own samples and the decision vectors it received from neighbors holding
//! the same task, writes its new decision vector, broadcasts it, and then
//! moves its multipliers. Only decision vectors ever cross a node boundary.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{
    augment, collapse, embed_common, keep_common, project_common, AugmentedTask, CoreError,
    Hyperparams, LabeledDataset, PenaltyMode, StackedDecision,
};
use crate::qpbox::{solve_box_qp, BoxQp, QpError};
use crate::topology::Topology;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("node {node} already holds task {task}")]
    DuplicateAssignment { node: usize, task: usize },
    #[error("node {node} is outside the {nodes}-node topology")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("feature dim {got} at (node {node}, task {task}) differs from {expected}")]
    FeatureDimMismatch { node: usize, task: usize, expected: usize, got: usize },
    #[error("engine needs at least one (node, task) dataset")]
    EmptyAssignment,
    #[error("task {task} at node {node} has no neighbor holding the same task")]
    IsolatedTask { node: usize, task: usize },
    #[error("same-task neighbor count must be at least 1 (the task bias entry of U would be 0)")]
    NoNeighbors,
    #[error("local task count must be at least 1")]
    NoLocalTasks,
    #[error("vector length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no node holds task {0}")]
    UnknownTask(usize),
    #[error("(node {node}, task {task}) is already active")]
    JoinExists { node: usize, task: usize },
    #[error("(node {node}, task {task}) is not active")]
    LeaveMissing { node: usize, task: usize },
    #[error("stage start rounds must be strictly increasing (offending index {0})")]
    NonIncreasingStage(usize),
    #[error("explicit penalty must be finite and nonnegative, got {0}")]
    BadPenalty(f64),
    #[error("risk stride must be at least 1")]
    BadStride,
}

/// The only payload that travels between nodes. Carries no sample data:
/// just who sent it, for which task, at which round, and the sender's
/// current decision vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round: u32,
    pub node: u32,
    pub task: u32,
    pub r: Vec<f64>,
}

/// Per-(node, task) iterate: decision vector, both multiplier families,
/// the warm-started dual of the data constraint, and cached structure.
#[derive(Debug, Clone)]
pub struct NodeTaskState {
    pub r: StackedDecision,
    /// Cross-task multiplier, (p+1)-dimensional.
    pub alpha: Array1<f64>,
    /// Cross-node multiplier, 2(p+1)-dimensional.
    pub beta: Array1<f64>,
    /// Dual of the data constraint, one entry per local sample.
    pub lambda: Array1<f64>,
    pub u_diag: Array1<f64>,
    qp: Option<BoxQp>,
    same_task_neighbors: Vec<usize>,
}

impl NodeTaskState {
    fn fresh(p: usize, n_samples: usize) -> Self {
        NodeTaskState {
            r: StackedDecision::zeros(p),
            alpha: Array1::zeros(p + 1),
            beta: Array1::zeros(2 * (p + 1)),
            lambda: Array1::zeros(n_samples),
            u_diag: Array1::zeros(2 * (p + 1)),
            qp: None,
            same_task_neighbors: Vec::new(),
        }
    }

    /// Neighbors that hold the same task, ascending.
    pub fn same_task_neighbors(&self) -> &[usize] {
        &self.same_task_neighbors
    }
}

/// Snapshot of one completed round. Rounds are numbered from 0.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u32,
    /// max over edges and shared tasks of the sup-norm gap between the two
    /// endpoints' decision vectors.
    pub cross_node_residual: f64,
    /// max over nodes and local task pairs of the sup-norm gap between the
    /// shared halves.
    pub cross_task_residual: f64,
    pub objective: f64,
    /// False when some local QP hit its sweep budget before its tolerance.
    pub qp_all_converged: bool,
    /// Mean-over-holders test risk per task, when test data is attached and
    /// this round is on the risk stride.
    pub per_task_risk: Option<BTreeMap<usize, f64>>,
    /// Per-(node, task) test risk on the same stride.
    pub per_node_risk: Option<BTreeMap<(usize, usize), f64>>,
}

/// One batch of task membership changes, applied atomically between rounds.
#[derive(Debug, Clone, Default)]
pub struct StageDelta {
    pub joins: Vec<(usize, LabeledDataset)>,
    pub leaves: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct StageEvent {
    pub start_round: u32,
    pub delta: StageDelta,
}

pub fn validate_schedule(events: &[StageEvent]) -> Result<(), EngineError> {
    for i in 1..events.len() {
        if events[i].start_round <= events[i - 1].start_round {
            return Err(EngineError::NonIncreasingStage(i));
        }
    }
    Ok(())
}

/// Diagonal of the local quadratic U, laid out like the stacked decision
/// vector. `neighbor_count` counts only neighbors holding the same task.
pub fn build_u_diag(
    hyper: &Hyperparams,
    local_task_count: usize,
    neighbor_count: usize,
    p: usize,
) -> Result<Array1<f64>, EngineError> {
    if local_task_count == 0 {
        return Err(EngineError::NoLocalTasks);
    }
    if neighbor_count == 0 {
        return Err(EngineError::NoNeighbors);
    }
    let t1 = 2.0 * hyper.eta1 * ((local_task_count - 1) as f64);
    let t2 = 2.0 * hyper.eta2 * (neighbor_count as f64);
    let mut u = Array1::zeros(2 * (p + 1));
    for i in 0..p {
        u[i] = hyper.eps1 + t1 + t2;
        u[p + 1 + i] = hyper.eps2 + t2;
    }
    u[p] = t1 + t2;
    u[2 * p + 1] = t2;
    Ok(u)
}

/// Linear term of the local (r, ξ) subproblem, built from the multipliers
/// and the previous-round decision vectors of same-node tasks and
/// same-task neighbors.
pub fn compute_f(
    alpha: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    own_r: &StackedDecision,
    cross_task_rs: &[ArrayView1<f64>],
    neighbor_rs: &[ArrayView1<f64>],
    hyper: &Hyperparams,
) -> Result<Array1<f64>, EngineError> {
    let dim = own_r.as_array().len();
    let half = dim / 2;
    if alpha.len() != half {
        return Err(EngineError::DimensionMismatch { expected: half, got: alpha.len() });
    }
    if beta.len() != dim {
        return Err(EngineError::DimensionMismatch { expected: dim, got: beta.len() });
    }
    let mut f = embed_common(alpha);
    f.mapv_inplace(|x| 2.0 * x);
    f.scaled_add(2.0, &beta);
    for rs in cross_task_rs {
        if rs.len() != dim {
            return Err(EngineError::DimensionMismatch { expected: dim, got: rs.len() });
        }
        let mut pair = own_r.as_array().clone();
        pair.zip_mut_with(rs, |a, &b| *a += b);
        f.scaled_add(-hyper.eta1, &keep_common(pair.view()));
    }
    for ru in neighbor_rs {
        if ru.len() != dim {
            return Err(EngineError::DimensionMismatch { expected: dim, got: ru.len() });
        }
        let mut pair = own_r.as_array().clone();
        pair.zip_mut_with(ru, |a, &b| *a += b);
        f.scaled_add(-hyper.eta2, &pair);
    }
    Ok(f)
}

/// Effective diagonal of [I,I] U⁻¹ [I,I]': entry i is 1/U_i + 1/U_{p+1+i}.
fn dual_effective_diag(u_diag: ArrayView1<f64>) -> Array1<f64> {
    let half = u_diag.len() / 2;
    Array1::from_shape_fn(half, |i| 1.0 / u_diag[i] + 1.0 / u_diag[half + i])
}

/// Q of the dual: Q_nm = y_n y_m Σ_i d_i x_ni x_mi, built exactly
/// symmetric entry by entry.
fn dual_quadratic(task: &AugmentedTask, u_diag: ArrayView1<f64>) -> Array2<f64> {
    let d = dual_effective_diag(u_diag);
    let n = task.n();
    let mut q = Array2::zeros((n, n));
    for a in 0..n {
        for b in a..n {
            let mut acc = 0.0;
            for i in 0..d.len() {
                acc += d[i] * task.x[[a, i]] * task.x[[b, i]];
            }
            let val = task.y[a] * task.y[b] * acc;
            q[[a, b]] = val;
            q[[b, a]] = val;
        }
    }
    q
}

/// c of the dual: c_n = 1 + y_n x_n'([I,I] U⁻¹ f).
fn dual_linear(task: &AugmentedTask, u_diag: ArrayView1<f64>, f: ArrayView1<f64>) -> Array1<f64> {
    let half = u_diag.len() / 2;
    let h = Array1::from_shape_fn(half, |i| {
        f[i] / u_diag[i] + f[half + i] / u_diag[half + i]
    });
    let mut c = Array1::zeros(task.n());
    for n in 0..task.n() {
        c[n] = 1.0 + task.y[n] * task.x.row(n).dot(&h);
    }
    c
}

/// The per-(node, task) dual subproblem as a box QP with bound `penalty`.
pub fn assemble_local_qp(
    task: &AugmentedTask,
    u_diag: ArrayView1<f64>,
    f: ArrayView1<f64>,
    penalty: f64,
) -> Result<BoxQp, EngineError> {
    let q = dual_quadratic(task, u_diag);
    let c = dual_linear(task, u_diag, f);
    Ok(BoxQp::new(q, c, penalty)?)
}

/// Recover the decision vector from the dual: r = U⁻¹([I,I]'X'Yλ − f).
pub fn update_r(
    task: &AugmentedTask,
    lambda: ArrayView1<f64>,
    f: ArrayView1<f64>,
    u_diag: ArrayView1<f64>,
) -> StackedDecision {
    let half = u_diag.len() / 2;
    let mut z = Array1::zeros(half);
    for n in 0..task.n() {
        let w = task.y[n] * lambda[n];
        if w != 0.0 {
            z.scaled_add(w, &task.x.row(n));
        }
    }
    let mut r = Array1::zeros(u_diag.len());
    for i in 0..half {
        r[i] = (z[i] - f[i]) / u_diag[i];
        r[half + i] = (z[i] - f[half + i]) / u_diag[half + i];
    }
    StackedDecision::from_array(r).expect("stacked layout by construction")
}

/// α step over the node's other tasks, using the NEW decision vectors.
pub fn update_alpha(
    alpha: ArrayView1<f64>,
    own_r_new: &StackedDecision,
    cross_task_rs_new: &[ArrayView1<f64>],
    eta1: f64,
) -> Array1<f64> {
    let mut acc = Array1::zeros(alpha.len());
    for rs in cross_task_rs_new {
        let mut diff = own_r_new.as_array().clone();
        diff.zip_mut_with(rs, |a, &b| *a -= b);
        acc += &project_common(diff.view());
    }
    let mut out = alpha.to_owned();
    out.scaled_add(0.5 * eta1, &acc);
    out
}

/// β step over same-task neighbors, using the NEW decision vectors.
pub fn update_beta(
    beta: ArrayView1<f64>,
    own_r_new: &StackedDecision,
    neighbor_rs_new: &[ArrayView1<f64>],
    eta2: f64,
) -> Array1<f64> {
    let mut acc = Array1::zeros(beta.len());
    for ru in neighbor_rs_new {
        let mut diff = own_r_new.as_array().clone();
        diff.zip_mut_with(ru, |a, &b| *a -= b);
        acc += &diff;
    }
    let mut out = beta.to_owned();
    out.scaled_add(0.5 * eta2, &acc);
    out
}

/// Label of x under the effective classifier; the boundary maps to +1.
pub fn predict(r: &StackedDecision, x: ArrayView1<f64>) -> f64 {
    let (w, b) = r.sum_parts();
    if w.dot(&x) + b >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Misclassified fraction of the test set.
pub fn risk(r: &StackedDecision, test: &LabeledDataset) -> Result<f64, EngineError> {
    if test.dim() != r.p() {
        return Err(EngineError::DimensionMismatch { expected: r.p(), got: test.dim() });
    }
    let (w, b) = r.sum_parts();
    let g = test.features.dot(&w);
    let wrong = g
        .iter()
        .zip(test.labels.iter())
        .filter(|(gi, &yi)| {
            let label = if *gi + b >= 0.0 { 1.0 } else { -1.0 };
            label != yi
        })
        .count();
    Ok(wrong as f64 / test.len() as f64)
}

pub struct Engine {
    topology: Topology,
    hyper: Hyperparams,
    p: usize,
    penalty: f64,
    round: u32,
    data: BTreeMap<(usize, usize), AugmentedTask>,
    states: BTreeMap<(usize, usize), NodeTaskState>,
    tests: BTreeMap<usize, LabeledDataset>,
    risk_stride: u32,
}

/// Recompute every state's U diagonal, dual quadratic, and same-task
/// neighbor list from the current assignment. Iterates are untouched.
fn rebuild_caches(
    topology: &Topology,
    hyper: &Hyperparams,
    penalty: f64,
    p: usize,
    data: &BTreeMap<(usize, usize), AugmentedTask>,
    states: &mut BTreeMap<(usize, usize), NodeTaskState>,
) -> Result<(), EngineError> {
    let keys: Vec<(usize, usize)> = states.keys().copied().collect();
    let mut rebuilt = Vec::with_capacity(keys.len());
    for &(v, t) in &keys {
        let local_tasks = states.range((v, 0)..=(v, usize::MAX)).count();
        let nbs: Vec<usize> = topology
            .neighbors(v)
            .iter()
            .copied()
            .filter(|&u| states.contains_key(&(u, t)))
            .collect();
        if nbs.is_empty() {
            return Err(EngineError::IsolatedTask { node: v, task: t });
        }
        let u_diag = build_u_diag(hyper, local_tasks, nbs.len(), p)?;
        let qp = if penalty == 0.0 {
            None
        } else {
            let zero_f = Array1::zeros(2 * (p + 1));
            Some(assemble_local_qp(&data[&(v, t)], u_diag.view(), zero_f.view(), penalty)?)
        };
        rebuilt.push(((v, t), u_diag, qp, nbs));
    }
    for (key, u_diag, qp, nbs) in rebuilt {
        let st = states.get_mut(&key).expect("key set unchanged");
        st.u_diag = u_diag;
        st.qp = qp;
        st.same_task_neighbors = nbs;
    }
    Ok(())
}

impl Engine {
    /// `datasets` holds one entry per (node, task) pair; the task id lives
    /// inside the dataset. The dual box bound is fixed here — node count ×
    /// distinct task count × C by default — and never changes afterwards,
    /// even across stage changes.
    pub fn new(
        topology: Topology,
        hyper: Hyperparams,
        datasets: Vec<(usize, LabeledDataset)>,
    ) -> Result<Self, EngineError> {
        hyper.validate()?;
        let nodes = topology.node_count();
        let mut data = BTreeMap::new();
        let mut p: Option<usize> = None;
        let mut tasks = BTreeSet::new();
        for (node, ds) in datasets {
            if node >= nodes {
                return Err(EngineError::NodeOutOfRange { node, nodes });
            }
            match p {
                None => p = Some(ds.dim()),
                Some(expected) if expected != ds.dim() => {
                    return Err(EngineError::FeatureDimMismatch {
                        node,
                        task: ds.task_id,
                        expected,
                        got: ds.dim(),
                    })
                }
                _ => {}
            }
            tasks.insert(ds.task_id);
            if data.insert((node, ds.task_id), augment(&ds)).is_some() {
                return Err(EngineError::DuplicateAssignment { node, task: ds.task_id });
            }
        }
        let Some(p) = p else {
            return Err(EngineError::EmptyAssignment);
        };
        let penalty = match hyper.penalty_mode {
            PenaltyMode::GlobalVtc => nodes as f64 * tasks.len() as f64 * hyper.c,
            PenaltyMode::Explicit(x) => {
                if !(x.is_finite() && x >= 0.0) {
                    return Err(EngineError::BadPenalty(x));
                }
                x
            }
        };
        let mut states: BTreeMap<_, _> = data
            .iter()
            .map(|(&key, task)| (key, NodeTaskState::fresh(p, task.n())))
            .collect();
        rebuild_caches(&topology, &hyper, penalty, p, &data, &mut states)?;
        Ok(Engine {
            topology,
            hyper,
            p,
            penalty,
            round: 0,
            data,
            states,
            tests: BTreeMap::new(),
            risk_stride: 1,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    /// Number of completed rounds; also the index of the next round.
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn state(&self, node: usize, task: usize) -> Option<&NodeTaskState> {
        self.states.get(&(node, task))
    }

    pub fn assignment_keys(&self) -> Vec<(usize, usize)> {
        self.states.keys().copied().collect()
    }

    pub fn task_ids(&self) -> BTreeSet<usize> {
        self.states.keys().map(|&(_, t)| t).collect()
    }

    pub fn holders(&self, task: usize) -> Vec<usize> {
        self.states
            .keys()
            .filter(|&&(_, t)| t == task)
            .map(|&(v, _)| v)
            .collect()
    }

    /// Attach a test set for its task; risk columns appear in reports.
    pub fn attach_test(&mut self, test: LabeledDataset) -> Result<(), EngineError> {
        if test.dim() != self.p {
            return Err(EngineError::DimensionMismatch { expected: self.p, got: test.dim() });
        }
        self.tests.insert(test.task_id, test);
        Ok(())
    }

    /// Evaluate risks every `stride` rounds (default 1).
    pub fn set_risk_stride(&mut self, stride: u32) -> Result<(), EngineError> {
        if stride == 0 {
            return Err(EngineError::BadStride);
        }
        self.risk_stride = stride;
        Ok(())
    }

    fn broadcast(&self, stamp: u32) -> Vec<Message> {
        self.states
            .iter()
            .map(|(&(v, t), st)| Message {
                round: stamp,
                node: v as u32,
                task: t as u32,
                r: st.r.as_array().to_vec(),
            })
            .collect()
    }

    /// Deliver each message to every neighbor of its sender that holds the
    /// task. Recipients see senders in ascending node order.
    fn route(&self, messages: &[Message]) -> BTreeMap<(usize, usize), Vec<Array1<f64>>> {
        let mut inbox: BTreeMap<(usize, usize), Vec<Array1<f64>>> =
            self.states.keys().map(|&k| (k, Vec::new())).collect();
        for m in messages {
            let (u, t) = (m.node as usize, m.task as usize);
            for &v in self.topology.neighbors(u) {
                if let Some(slot) = inbox.get_mut(&(v, t)) {
                    slot.push(Array1::from(m.r.clone()));
                }
            }
        }
        inbox
    }

    fn cross_task_views(&self, v: usize, t: usize) -> Vec<ArrayView1<'_, f64>> {
        self.states
            .range((v, 0)..=(v, usize::MAX))
            .filter(|(&(_, s), _)| s != t)
            .map(|(_, st)| st.r.view())
            .collect()
    }

    /// One synchronous round: solve all local QPs against the round-k
    /// snapshot, commit and broadcast the new decision vectors, then move
    /// all multipliers using only the new vectors.
    pub fn run_round(&mut self) -> RoundReport {
        let round_idx = self.round;
        let inbox = self.route(&self.broadcast(round_idx));
        let mut fs: BTreeMap<(usize, usize), Array1<f64>> = BTreeMap::new();
        for (&(v, t), st) in &self.states {
            let cross = self.cross_task_views(v, t);
            let nbs: Vec<ArrayView1<f64>> = inbox[&(v, t)].iter().map(|a| a.view()).collect();
            let f = compute_f(st.alpha.view(), st.beta.view(), &st.r, &cross, &nbs, &self.hyper)
                .expect("dimensions fixed at construction");
            fs.insert((v, t), f);
        }

        let mut qp_all_converged = true;
        for (key, st) in self.states.iter_mut() {
            let task = &self.data[key];
            let f = &fs[key];
            if let Some(qp) = st.qp.as_mut() {
                qp.set_linear(dual_linear(task, st.u_diag.view(), f.view()))
                    .expect("finite by construction");
                let sol = solve_box_qp(qp, Some(st.lambda.view())).expect("warm start length");
                qp_all_converged &= sol.converged;
                st.lambda = sol.lambda;
            } else {
                // zero box (degenerate penalty): the dual is pinned at 0
                st.lambda.fill(0.0);
            }
            st.r = update_r(task, st.lambda.view(), f.view(), st.u_diag.view());
        }

        let inbox_new = self.route(&self.broadcast(round_idx + 1));
        let mut mults: BTreeMap<(usize, usize), (Array1<f64>, Array1<f64>)> = BTreeMap::new();
        for (&(v, t), st) in &self.states {
            let cross = self.cross_task_views(v, t);
            let nbs: Vec<ArrayView1<f64>> = inbox_new[&(v, t)].iter().map(|a| a.view()).collect();
            let alpha = update_alpha(st.alpha.view(), &st.r, &cross, self.hyper.eta1);
            let beta = update_beta(st.beta.view(), &st.r, &nbs, self.hyper.eta2);
            mults.insert((v, t), (alpha, beta));
        }
        for (key, (alpha, beta)) in mults {
            let st = self.states.get_mut(&key).expect("same key set");
            st.alpha = alpha;
            st.beta = beta;
        }

        self.round = round_idx + 1;
        let (cross_node_residual, cross_task_residual) = self.residuals();
        let (per_task_risk, per_node_risk) =
            if !self.tests.is_empty() && round_idx % self.risk_stride == 0 {
                let (g, n) = self.evaluate_risks();
                (Some(g), Some(n))
            } else {
                (None, None)
            };
        RoundReport {
            round: round_idx,
            cross_node_residual,
            cross_task_residual,
            objective: self.objective_value(),
            qp_all_converged,
            per_task_risk,
            per_node_risk,
        }
    }

    /// Run until both residuals drop below `consensus_tol` or `max_rounds`
    /// is hit, reporting every round.
    pub fn run(&mut self, max_rounds: u32, consensus_tol: f64) -> Vec<RoundReport> {
        let mut reports = Vec::new();
        for _ in 0..max_rounds {
            let report = self.run_round();
            let done = report.cross_node_residual < consensus_tol
                && report.cross_task_residual < consensus_tol;
            reports.push(report);
            if done {
                break;
            }
        }
        reports
    }

    fn residuals(&self) -> (f64, f64) {
        let mut cross_node = 0.0f64;
        let mut cross_task = 0.0f64;
        for (&(v, t), st) in &self.states {
            for &u in &st.same_task_neighbors {
                if u < v {
                    continue; // the (u, v) edge was handled from u's side
                }
                let other = &self.states[&(u, t)];
                let gap = st
                    .r
                    .as_array()
                    .iter()
                    .zip(other.r.as_array().iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                cross_node = cross_node.max(gap);
            }
            let half = self.p + 1;
            for (_, st2) in self.states.range((v, t + 1)..(v + 1, 0)) {
                let gap = st
                    .r
                    .as_array()
                    .iter()
                    .zip(st2.r.as_array().iter())
                    .take(half)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                cross_task = cross_task.max(gap);
            }
        }
        (cross_node, cross_task)
    }

    /// Primal value at the current iterates: the two quadratic regularizers
    /// plus the box bound times the total hinge loss.
    pub fn objective_value(&self) -> f64 {
        let mut reg = 0.0;
        let mut hinge = 0.0;
        for (key, st) in &self.states {
            let (q1, q2) = st.r.quad_forms();
            reg += 0.5 * self.hyper.eps1 * q1 + 0.5 * self.hyper.eps2 * q2;
            let task = &self.data[key];
            let g = task.x.dot(&collapse(st.r.view()));
            for (gi, yi) in g.iter().zip(task.y.iter()) {
                hinge += (1.0 - yi * gi).max(0.0);
            }
        }
        reg + self.penalty * hinge
    }

    fn evaluate_risks(&self) -> (BTreeMap<usize, f64>, BTreeMap<(usize, usize), f64>) {
        let mut per_node = BTreeMap::new();
        let mut per_task = BTreeMap::new();
        for (&task_id, test) in &self.tests {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (&(v, t), st) in &self.states {
                if t != task_id {
                    continue;
                }
                let r = risk(&st.r, test).expect("dims checked at attach");
                per_node.insert((v, t), r);
                sum += r;
                count += 1;
            }
            if count > 0 {
                per_task.insert(task_id, sum / count as f64);
            }
        }
        (per_task, per_node)
    }

    /// Mean of per-node risks over the nodes holding the task, all against
    /// the same test set.
    pub fn global_risk(&self, task: usize, test: &LabeledDataset) -> Result<f64, EngineError> {
        let holders = self.holders(task);
        if holders.is_empty() {
            return Err(EngineError::UnknownTask(task));
        }
        let mut sum = 0.0;
        for &v in &holders {
            sum += risk(&self.states[&(v, task)].r, test)?;
        }
        Ok(sum / holders.len() as f64)
    }

    /// Apply a batch of joins and leaves atomically: joiners start from
    /// zero state, leavers are dropped, survivors keep their iterates
    /// bitwise, every cache is rebuilt, and the round counter continues.
    /// On error the engine is unchanged.
    pub fn apply_stage(&mut self, delta: StageDelta) -> Result<(), EngineError> {
        let mut new_data = self.data.clone();
        let mut new_states = self.states.clone();
        for &(node, task) in &delta.leaves {
            if new_states.remove(&(node, task)).is_none() {
                return Err(EngineError::LeaveMissing { node, task });
            }
            new_data.remove(&(node, task));
        }
        for (node, ds) in &delta.joins {
            let node = *node;
            let task = ds.task_id;
            if node >= self.topology.node_count() {
                return Err(EngineError::NodeOutOfRange {
                    node,
                    nodes: self.topology.node_count(),
                });
            }
            if ds.dim() != self.p {
                return Err(EngineError::FeatureDimMismatch {
                    node,
                    task,
                    expected: self.p,
                    got: ds.dim(),
                });
            }
            if self.states.contains_key(&(node, task)) {
                return Err(EngineError::JoinExists { node, task });
            }
            let aug = augment(ds);
            if new_states
                .insert((node, task), NodeTaskState::fresh(self.p, aug.n()))
                .is_some()
            {
                return Err(EngineError::DuplicateAssignment { node, task });
            }
            new_data.insert((node, task), aug);
        }
        if new_states.is_empty() {
            return Err(EngineError::EmptyAssignment);
        }
        rebuild_caches(
            &self.topology,
            &self.hyper,
            self.penalty,
            self.p,
            &new_data,
            &mut new_states,
        )?;
        self.data = new_data;
        self.states = new_states;
        Ok(())
    }
}
