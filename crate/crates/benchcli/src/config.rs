//! Scenario configuration: one strict JSON document per scenario.
//!
//! Unknown keys are rejected, every numeric field is validated up front, and
//! validation errors name the offending field so a config typo never turns
//! into a silent behavioral change.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dtsvm,
    Dsvm,
    Csvm,
    Mixed,
    Online,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dtsvm => "dtsvm",
            Mode::Dsvm => "dsvm",
            Mode::Csvm => "csvm",
            Mode::Mixed => "mixed",
            Mode::Online => "online",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TopologySpec {
    Full,
    Ring,
    Random { edge_prob: f64 },
    Explicit { edges: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    /// Gaussian-cloud tasks sharing a separator direction.
    Synthetic {
        p: usize,
        tasks: usize,
        relatedness: f64,
        noise_sigma: f64,
        train_per_class: usize,
        test_per_class: usize,
    },
    /// Digit pairs cut from IDX image files, PCA-projected to `pca_k` dims.
    /// One task per pair, in order.
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        pca_k: usize,
        digit_pairs: Vec<(u8, u8)>,
    },
}

impl DataSpec {
    pub fn task_count(&self) -> usize {
        match self {
            DataSpec::Synthetic { tasks, .. } => *tasks,
            DataSpec::Mnist { digit_pairs, .. } => digit_pairs.len(),
        }
    }
}

/// Where one task's training data lives: which nodes hold it and how many
/// samples of each class every holding node receives.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentSpec {
    pub task: usize,
    /// `None` means every node in the network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<usize>>,
    /// (positives, negatives) per holding node.
    pub per_node: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSpec {
    #[serde(rename = "C")]
    pub c: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Dual box bound; defaults to nodes × tasks × C when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub start_round: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub joins: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub leaves: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineSpec {
    /// Tasks trained in the network from round 0. Tasks not listed here run
    /// as isolated single-task side networks until a stage joins them.
    pub initial_tasks: Vec<usize>,
    pub stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub mode: Mode,
    pub nodes: usize,
    pub topology: TopologySpec,
    pub data: DataSpec,
    pub assignments: Vec<AssignmentSpec>,
    pub hyper: HyperSpec,
    pub max_rounds: u32,
    /// Stop early once both consensus residuals drop below this; 0 disables.
    #[serde(default)]
    pub consensus_tol: f64,
    /// Evaluate risks every `risk_stride` rounds.
    #[serde(default = "default_stride")]
    pub risk_stride: u32,
    pub seeds: Vec<u64>,
    /// Which task the single-task baseline keeps. Required by dsvm mode on
    /// multi-task configs; on other modes it only designates the task for a
    /// later baseline rewrite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dsvm_task: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online: Option<OnlineSpec>,
    /// Default CSV output path for `run`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_stride() -> u32 {
    1
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: ScenarioConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn require_positive(name: &str, value: f64) -> Result<(), ConfigError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(invalid(format!("{name} must be > 0, got {value}")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.is_empty() {
            return Err(invalid("name must be nonempty"));
        }
        if self.name.contains(',') || self.name.contains('\n') || self.name.contains('\r') {
            return Err(invalid("name must not contain commas or line breaks"));
        }
        if self.nodes < 2 {
            return Err(invalid(format!("nodes must be >= 2, got {}", self.nodes)));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must be nonempty"));
        }
        if self.max_rounds == 0 {
            return Err(invalid("max_rounds must be >= 1"));
        }
        if !(self.consensus_tol.is_finite() && self.consensus_tol >= 0.0) {
            return Err(invalid(format!(
                "consensus_tol must be >= 0, got {}",
                self.consensus_tol
            )));
        }
        if self.risk_stride == 0 {
            return Err(invalid("risk_stride must be >= 1"));
        }

        require_positive("C", self.hyper.c)?;
        require_positive("eps1", self.hyper.eps1)?;
        require_positive("eps2", self.hyper.eps2)?;
        require_positive("eta1", self.hyper.eta1)?;
        require_positive("eta2", self.hyper.eta2)?;
        if let Some(x) = self.hyper.penalty {
            if !(x.is_finite() && x > 0.0) {
                return Err(invalid(format!("penalty must be > 0, got {x}")));
            }
        }

        if let TopologySpec::Random { edge_prob } = self.topology {
            if !(edge_prob > 0.0 && edge_prob <= 1.0) {
                return Err(invalid(format!(
                    "edge_prob must be in (0, 1], got {edge_prob}"
                )));
            }
        }
        if let TopologySpec::Explicit { edges } = &self.topology {
            if edges.is_empty() {
                return Err(invalid("explicit topology needs at least one edge"));
            }
        }

        match &self.data {
            DataSpec::Synthetic {
                p,
                tasks,
                relatedness,
                noise_sigma,
                train_per_class,
                test_per_class,
            } => {
                if *p == 0 {
                    return Err(invalid("p must be >= 1"));
                }
                if *tasks == 0 {
                    return Err(invalid("tasks must be >= 1"));
                }
                if !(0.0..=1.0).contains(relatedness) || !relatedness.is_finite() {
                    return Err(invalid(format!(
                        "relatedness must lie in [0, 1], got {relatedness}"
                    )));
                }
                if !(noise_sigma.is_finite() && *noise_sigma >= 0.0) {
                    return Err(invalid(format!(
                        "noise_sigma must be >= 0, got {noise_sigma}"
                    )));
                }
                if *train_per_class == 0 {
                    return Err(invalid("train_per_class must be >= 1"));
                }
                if *test_per_class == 0 {
                    return Err(invalid("test_per_class must be >= 1"));
                }
            }
            DataSpec::Mnist {
                pca_k, digit_pairs, ..
            } => {
                if *pca_k == 0 {
                    return Err(invalid("pca_k must be >= 1"));
                }
                if digit_pairs.is_empty() {
                    return Err(invalid("digit_pairs must be nonempty"));
                }
                for &(a, b) in digit_pairs {
                    if a > 9 || b > 9 {
                        return Err(invalid(format!(
                            "digit_pairs entries must use digits 0..=9, got ({a}, {b})"
                        )));
                    }
                    if a == b {
                        return Err(invalid(format!(
                            "digit_pairs entries must name two distinct digits, got ({a}, {a})"
                        )));
                    }
                }
            }
        }

        let task_count = self.data.task_count();
        if self.assignments.is_empty() {
            return Err(invalid("assignments must be nonempty"));
        }
        let mut assigned = BTreeSet::new();
        for a in &self.assignments {
            if a.task >= task_count {
                return Err(invalid(format!(
                    "assignment task {} is out of range for {} tasks",
                    a.task, task_count
                )));
            }
            if !assigned.insert(a.task) {
                return Err(invalid(format!("duplicate assignment for task {}", a.task)));
            }
            if a.per_node.0 + a.per_node.1 == 0 {
                return Err(invalid(format!(
                    "assignment for task {} requests zero samples per node",
                    a.task
                )));
            }
            if let Some(nodes) = &a.nodes {
                if nodes.len() < 2 {
                    // A task at a single node has no same-task neighbors, so
                    // its consensus quadratic is singular in the bias entry.
                    return Err(invalid(format!(
                        "assignment for task {} needs at least 2 nodes",
                        a.task
                    )));
                }
                let distinct: BTreeSet<_> = nodes.iter().collect();
                if distinct.len() != nodes.len() {
                    return Err(invalid(format!(
                        "assignment for task {} lists duplicate nodes",
                        a.task
                    )));
                }
                if let Some(&bad) = nodes.iter().find(|&&n| n >= self.nodes) {
                    return Err(invalid(format!(
                        "assignment for task {} names node {bad}, but nodes = {}",
                        a.task, self.nodes
                    )));
                }
            }
        }
        // dsvm mode trains a single task out of a possibly wider data
        // declaration (so a baseline sees bit-identical samples to the full
        // run); everywhere else an unassigned task is a config mistake.
        if self.mode != Mode::Dsvm {
            for t in 0..task_count {
                if !assigned.contains(&t) {
                    return Err(invalid(format!("task {t} has no assignment")));
                }
            }
        }

        match self.mode {
            Mode::Dtsvm => {
                for a in &self.assignments {
                    if let Some(nodes) = &a.nodes {
                        if nodes.len() != self.nodes {
                            return Err(invalid(format!(
                                "dtsvm mode requires every task on every node; \
                                 task {} covers {} of {} nodes (use mode=mixed for subsets)",
                                a.task,
                                nodes.len(),
                                self.nodes
                            )));
                        }
                    }
                }
            }
            Mode::Dsvm => {
                if task_count > 1 && self.dsvm_task.is_none() {
                    return Err(invalid("dsvm mode with multiple tasks requires dsvm_task"));
                }
                if self.hyper.eps1 != 2.0 || self.hyper.eps2 != 2.0 {
                    return Err(invalid(
                        "dsvm mode requires eps1 = eps2 = 2 (single-task consensus with \
                         other values is dtsvm mode with one task)",
                    ));
                }
            }
            Mode::Csvm | Mode::Mixed | Mode::Online => {}
        }

        if let Some(t) = self.dsvm_task {
            if !assigned.contains(&t) {
                return Err(invalid(format!("dsvm_task {t} has no assignment")));
            }
        }

        match &self.online {
            Some(_) if self.mode != Mode::Online => {
                return Err(invalid("stages require mode=online"));
            }
            None if self.mode == Mode::Online => {
                return Err(invalid("online mode requires the online section"));
            }
            Some(online) => {
                if online.initial_tasks.is_empty() {
                    return Err(invalid("initial_tasks must be nonempty"));
                }
                let initial: BTreeSet<_> = online.initial_tasks.iter().copied().collect();
                if initial.len() != online.initial_tasks.len() {
                    return Err(invalid("initial_tasks lists duplicate tasks"));
                }
                for &t in &online.initial_tasks {
                    if !assigned.contains(&t) {
                        return Err(invalid(format!("initial task {t} has no assignment")));
                    }
                }
                let mut prev: Option<u32> = None;
                for stage in &online.stages {
                    if stage.start_round == 0 {
                        return Err(invalid(
                            "stage start_round must be >= 1 (round 0 is the initial layout)",
                        ));
                    }
                    if stage.start_round >= self.max_rounds {
                        return Err(invalid(format!(
                            "stage start_round {} is not before max_rounds {}",
                            stage.start_round, self.max_rounds
                        )));
                    }
                    if let Some(p) = prev {
                        if stage.start_round <= p {
                            return Err(invalid(
                                "stage start_rounds must be strictly increasing",
                            ));
                        }
                    }
                    prev = Some(stage.start_round);
                    if stage.joins.is_empty() && stage.leaves.is_empty() {
                        return Err(invalid(format!(
                            "stage at round {} changes nothing",
                            stage.start_round
                        )));
                    }
                    for &t in stage.joins.iter().chain(&stage.leaves) {
                        if !assigned.contains(&t) {
                            return Err(invalid(format!(
                                "stage at round {} names task {t}, which has no assignment",
                                stage.start_round
                            )));
                        }
                    }
                }
            }
            None => {}
        }

        Ok(())
    }

    /// Nodes holding a task under an assignment spec.
    pub fn holder_nodes(&self, a: &AssignmentSpec) -> Vec<usize> {
        match &a.nodes {
            Some(nodes) => {
                let mut v = nodes.clone();
                v.sort_unstable();
                v
            }
            None => (0..self.nodes).collect(),
        }
    }
}

/// Rewrite a scenario as its single-task consensus baseline: keep the
/// network, data generation, and seeds; drop every task but one; pin
/// eps1 = eps2 = 2 so the shared and task-specific halves carry the
/// classifier in equal parts.
pub fn dsvm_config(base: &ScenarioConfig) -> Result<ScenarioConfig, ConfigError> {
    base.validate()?;
    let assigned: Vec<usize> = base.assignments.iter().map(|a| a.task).collect();
    let task = match (base.dsvm_task, assigned.len()) {
        (Some(t), _) => t,
        (None, 1) => assigned[0],
        (None, _) => {
            return Err(invalid(
                "dsvm baseline of a multi-task scenario requires dsvm_task",
            ))
        }
    };
    let Some(keep) = base.assignments.iter().find(|a| a.task == task) else {
        return Err(invalid(format!("dsvm_task {task} has no assignment")));
    };

    let mut out = base.clone();
    out.name = format!("{}_dsvm", base.name);
    out.mode = Mode::Dsvm;
    out.assignments = vec![keep.clone()];
    out.hyper.eps1 = 2.0;
    out.hyper.eps2 = 2.0;
    out.dsvm_task = Some(task);
    out.online = None;
    out.out = None;
    // Data generation still produces every declared task so the surviving
    // task's samples are bit-identical to the multi-task run's.
    out.validate()?;
    Ok(out)
}
