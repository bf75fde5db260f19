//! Undirected connected network graphs and their degree metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("need at least {min} nodes, got {got}")]
    TooFewNodes { min: usize, got: usize },
    #[error("edge probability must be in (0, 1], got {0}")]
    BadEdgeProb(f64),
    #[error("edge ({0}, {1}) is out of range for {2} nodes")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("graph is disconnected: node {0} unreachable from node 0")]
    Disconnected(usize),
    #[error("no connected graph found in {0} attempts")]
    RetriesExhausted(usize),
    #[error("degree metrics are undefined for a single node")]
    SingleNode,
}

#[derive(Debug, Clone)]
pub enum TopologyKind {
    Full,
    Ring,
    Random { edge_prob: f64, seed: u64 },
    Explicit(Vec<(usize, usize)>),
}

/// Undirected connected graph with sorted neighbor lists and no self-loops.
#[derive(Debug, Clone)]
pub struct Topology {
    adjacency: Vec<Vec<usize>>,
}

const RANDOM_RETRIES: usize = 1000;

pub fn build_topology(kind: &TopologyKind, v: usize) -> Result<Topology, TopologyError> {
    if v < 2 {
        return Err(TopologyError::TooFewNodes { min: 2, got: v });
    }
    match kind {
        TopologyKind::Full => {
            let adjacency = (0..v)
                .map(|i| (0..v).filter(|&j| j != i).collect())
                .collect();
            Ok(Topology { adjacency })
        }
        TopologyKind::Ring => {
            let adjacency = (0..v)
                .map(|i| {
                    let mut nb = vec![(i + v - 1) % v, (i + 1) % v];
                    nb.sort_unstable();
                    nb.dedup(); // v = 2: both directions reach the same node
                    nb
                })
                .collect();
            Ok(Topology { adjacency })
        }
        TopologyKind::Random { edge_prob, seed } => {
            if !(*edge_prob > 0.0 && *edge_prob <= 1.0) {
                return Err(TopologyError::BadEdgeProb(*edge_prob));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            for _ in 0..RANDOM_RETRIES {
                let mut adjacency = vec![Vec::new(); v];
                for i in 0..v {
                    for j in i + 1..v {
                        if rng.gen::<f64>() < *edge_prob {
                            adjacency[i].push(j);
                            adjacency[j].push(i);
                        }
                    }
                }
                let t = Topology { adjacency };
                if t.connected_check().is_ok() {
                    return Ok(t);
                }
            }
            Err(TopologyError::RetriesExhausted(RANDOM_RETRIES))
        }
        TopologyKind::Explicit(edges) => {
            let mut adjacency = vec![Vec::new(); v];
            for &(a, b) in edges {
                if a == b {
                    return Err(TopologyError::SelfLoop(a));
                }
                if a >= v || b >= v {
                    return Err(TopologyError::EdgeOutOfRange(a, b, v));
                }
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
            for nb in &mut adjacency {
                nb.sort_unstable();
                nb.dedup();
            }
            let t = Topology { adjacency };
            t.connected_check()?;
            Ok(t)
        }
    }
}

impl Topology {
    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    fn connected_check(&self) -> Result<(), TopologyError> {
        let v = self.adjacency.len();
        let mut seen = vec![false; v];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for &y in &self.adjacency[x] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(node) => Err(TopologyError::Disconnected(node)),
            None => Ok(()),
        }
    }
}

/// |B_v| / (V - 1): a node's neighbor count over the most it could have.
pub fn degree_of_node(t: &Topology, v: usize) -> Result<f64, TopologyError> {
    if t.node_count() < 2 {
        return Err(TopologyError::SingleNode);
    }
    Ok(t.neighbors(v).len() as f64 / (t.node_count() - 1) as f64)
}

/// Mean of per-node degrees; 1.0 exactly for a complete graph.
pub fn degree_of_network(t: &Topology) -> Result<f64, TopologyError> {
    if t.node_count() < 2 {
        return Err(TopologyError::SingleNode);
    }
    let sum: f64 = (0..t.node_count())
        .map(|v| degree_of_node(t, v).expect("checked"))
        .sum();
    Ok(sum / t.node_count() as f64)
}
