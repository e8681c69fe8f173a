//! Exact min-max-load assignment.
//!
//! Minimizes the maximum number of tasks on any robot subject to every
//! task going to exactly one compatible robot. For a fixed bound `M` this
//! is a bipartite b-matching, so feasibility is one max-flow computation
//! (source -> task cap 1, task -> compatible robot cap 1, robot -> sink
//! cap `M`) and the optimum is the smallest feasible `M`, found by binary
//! search over `[ceil(n/m), n]`.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMatrix {
    /// `x[i][j]` is set when task `i` goes to robot `j`.
    pub x: Vec<Vec<bool>>,
    pub max_load: usize,
}

impl AssignmentMatrix {
    /// Robot index per task.
    pub fn assignment(&self) -> Vec<usize> {
        self.x
            .iter()
            .map(|row| row.iter().position(|&b| b).expect("row has one entry"))
            .collect()
    }

    pub fn loads(&self, robots: usize) -> Vec<usize> {
        let mut loads = vec![0; robots];
        for j in self.assignment() {
            loads[j] += 1;
        }
        loads
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SolveError {
    #[error("no compatible robot for task rows {0:?}")]
    Infeasible(Vec<usize>),
    #[error("compatibility matrix is malformed: {0}")]
    Malformed(String),
}

struct Edge {
    to: usize,
    cap: usize,
}

/// Residual network with paired forward/backward edges.
struct FlowNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        FlowNetwork {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: usize) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap });
        self.adj[from].push(id);
        self.edges.push(Edge { to: from, cap: 0 });
        self.adj[to].push(id + 1);
        id
    }

    /// Edmonds-Karp. BFS visits edges in insertion order, so augmenting
    /// paths prefer lower task and robot indices.
    fn max_flow(&mut self, source: usize, sink: usize) -> usize {
        let mut flow = 0;
        loop {
            let mut via: Vec<Option<usize>> = vec![None; self.adj.len()];
            let mut seen = vec![false; self.adj.len()];
            seen[source] = true;
            let mut queue = VecDeque::from([source]);
            while let Some(u) = queue.pop_front() {
                if u == sink {
                    break;
                }
                for &e in &self.adj[u] {
                    let v = self.edges[e].to;
                    if !seen[v] && self.edges[e].cap > 0 {
                        seen[v] = true;
                        via[v] = Some(e);
                        queue.push_back(v);
                    }
                }
            }
            if !seen[sink] {
                return flow;
            }
            let mut bottleneck = usize::MAX;
            let mut v = sink;
            while let Some(e) = via[v] {
                bottleneck = bottleneck.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = sink;
            while let Some(e) = via[v] {
                self.edges[e].cap -= bottleneck;
                self.edges[e ^ 1].cap += bottleneck;
                v = self.edges[e ^ 1].to;
            }
            flow += bottleneck;
        }
    }
}

/// Runs the max-flow probe for bound `max_load`; returns an assignment
/// when every task can be placed.
fn probe(compat: &[Vec<bool>], robots: usize, max_load: usize) -> Option<Vec<usize>> {
    let n = compat.len();
    let source = 0;
    let sink = n + robots + 1;
    let mut net = FlowNetwork::new(n + robots + 2);
    let mut task_edges: Vec<Vec<(usize, usize)>> = Vec::with_capacity(n);
    for (i, row) in compat.iter().enumerate() {
        net.add_edge(source, 1 + i, 1);
        let mut edges = Vec::new();
        for (j, &ok) in row.iter().enumerate() {
            if ok {
                edges.push((j, net.add_edge(1 + i, 1 + n + j, 1)));
            }
        }
        task_edges.push(edges);
    }
    for j in 0..robots {
        net.add_edge(1 + n + j, sink, max_load);
    }
    if net.max_flow(source, sink) != n {
        return None;
    }
    Some(
        task_edges
            .iter()
            .map(|edges| {
                edges
                    .iter()
                    .find(|(_, e)| net.edges[*e].cap == 0)
                    .map(|(j, _)| *j)
                    .expect("saturated task has one used edge")
            })
            .collect(),
    )
}

/// Solves the min-max-load assignment for an `n x m` compatibility matrix.
pub fn solve_minmax(compat: &[Vec<bool>], robots: usize) -> Result<AssignmentMatrix, SolveError> {
    if robots == 0 {
        return Err(SolveError::Malformed("at least one robot is required".into()));
    }
    if let Some(i) = compat.iter().position(|row| row.len() != robots) {
        return Err(SolveError::Malformed(format!(
            "row {i} has {} columns, expected {robots}",
            compat[i].len()
        )));
    }
    let stranded: Vec<usize> = compat
        .iter()
        .enumerate()
        .filter(|(_, row)| !row.iter().any(|&b| b))
        .map(|(i, _)| i)
        .collect();
    if !stranded.is_empty() {
        return Err(SolveError::Infeasible(stranded));
    }

    let n = compat.len();
    let (mut lo, mut hi) = (n.div_ceil(robots), n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if probe(compat, robots, mid).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let assignment = probe(compat, robots, lo).expect("upper bound n is always feasible");
    let x = assignment
        .iter()
        .map(|&j| (0..robots).map(|k| k == j).collect())
        .collect();
    Ok(AssignmentMatrix { x, max_load: lo })
}
