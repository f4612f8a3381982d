//! Dinic max-flow over `f64` capacities.
//!
//! Arcs are stored in pairs (`a`, `a ^ 1`) so that each one is the residual
//! reverse of the other. Adjacency lists are filled in insertion order, which
//! together with FIFO breadth-first search makes every run deterministic.

use std::collections::VecDeque;

/// Residual capacities at or below this value count as saturated.
pub const RESIDUAL_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FlowGraph {
    adjacency: Vec<Vec<u32>>,
    to: Vec<u32>,
    residual: Vec<f64>,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); nodes],
            to: Vec::new(),
            residual: Vec::new(),
        }
    }

    pub fn with_capacity(nodes: usize, arcs: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); nodes],
            to: Vec::with_capacity(arcs * 2),
            residual: Vec::with_capacity(arcs * 2),
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Adds an arc `u -> v` with capacity `forward` and its reverse with capacity `backward`.
    pub fn add_edge(&mut self, u: usize, v: usize, forward: f64, backward: f64) {
        debug_assert!(forward >= 0.0 && backward >= 0.0);
        let id = self.to.len() as u32;
        self.to.push(v as u32);
        self.residual.push(forward);
        self.to.push(u as u32);
        self.residual.push(backward);
        self.adjacency[u].push(id);
        self.adjacency[v].push(id + 1);
    }

    fn levels(&self, source: usize, sink: usize, level: &mut [i32]) -> bool {
        level.fill(-1);
        level[source] = 0;
        let mut queue = VecDeque::with_capacity(self.node_count());
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &a in &self.adjacency[u] {
                let v = self.to[a as usize] as usize;
                if level[v] < 0 && self.residual[a as usize] > RESIDUAL_EPS {
                    level[v] = level[u] + 1;
                    if v == sink {
                        return true;
                    }
                    queue.push_back(v);
                }
            }
        }
        level[sink] >= 0
    }

    /// Computes a maximum flow from `source` to `sink` and returns its value.
    pub fn max_flow(&mut self, source: usize, sink: usize) -> f64 {
        let n = self.node_count();
        let mut level = vec![-1i32; n];
        let mut cursor = vec![0usize; n];
        let mut path: Vec<u32> = Vec::new();
        let mut total = 0.0;

        while self.levels(source, sink, &mut level) {
            cursor.fill(0);
            // Blocking flow by repeated advance / retreat along the level graph.
            let mut u = source;
            path.clear();
            loop {
                if u == sink {
                    let bottleneck = path
                        .iter()
                        .map(|&a| self.residual[a as usize])
                        .fold(f64::INFINITY, f64::min);
                    for &a in &path {
                        self.residual[a as usize] -= bottleneck;
                        self.residual[(a ^ 1) as usize] += bottleneck;
                    }
                    total += bottleneck;
                    // Restart from the tail of the first saturated arc.
                    let cut = path
                        .iter()
                        .position(|&a| self.residual[a as usize] <= RESIDUAL_EPS)
                        .unwrap_or(0);
                    path.truncate(cut);
                    u = match path.last() {
                        Some(&a) => self.to[a as usize] as usize,
                        None => source,
                    };
                    continue;
                }
                let mut advanced = false;
                while cursor[u] < self.adjacency[u].len() {
                    let a = self.adjacency[u][cursor[u]];
                    let v = self.to[a as usize] as usize;
                    if self.residual[a as usize] > RESIDUAL_EPS && level[v] == level[u] + 1 {
                        path.push(a);
                        u = v;
                        advanced = true;
                        break;
                    }
                    cursor[u] += 1;
                }
                if advanced {
                    continue;
                }
                // Dead end: prune the node from this phase and retreat.
                level[u] = -1;
                match path.pop() {
                    Some(a) => {
                        u = self.to[(a ^ 1) as usize] as usize;
                        cursor[u] += 1;
                    }
                    None => break,
                }
            }
        }
        total
    }

    /// Nodes reachable from `source` in the residual graph. After [`max_flow`](Self::max_flow)
    /// this is the unique inclusion-minimal source side of a minimum cut.
    pub fn source_side(&self, source: usize) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        seen[source] = true;
        let mut queue = VecDeque::new();
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &a in &self.adjacency[u] {
                let v = self.to[a as usize] as usize;
                if !seen[v] && self.residual[a as usize] > RESIDUAL_EPS {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}
