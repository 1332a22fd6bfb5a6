//! Two-phase greedy modularity optimisation.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

use super::CommunityAssignment;

/// Minimum modularity gain for a node move to count.
pub const GAIN_TOLERANCE: f64 = 1e-7;

/// Newman modularity of `assignment` on an unweighted graph.
pub fn modularity<S: Scalar>(graph: &Graph<S>, assignment: &CommunityAssignment) -> Result<f64> {
    if graph.num_edges() == 0 {
        return Err(Error::Undefined("modularity of a graph without edges".into()));
    }
    if assignment.community_of.len() != graph.num_nodes() {
        return Err(Error::InvalidArgument(format!(
            "assignment covers {} nodes, graph has {}",
            assignment.community_of.len(),
            graph.num_nodes()
        )));
    }
    let k = assignment.count();
    let mut internal = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for &(a, b) in graph.edges() {
        let (ca, cb) = (assignment.community_of[a], assignment.community_of[b]);
        degree[ca] += 1.0;
        degree[cb] += 1.0;
        if ca == cb {
            internal[ca] += 1.0;
        }
    }
    let m = graph.num_edges() as f64;
    Ok(internal
        .iter()
        .zip(&degree)
        .map(|(&l, &d)| l / m - (d / (2.0 * m)).powi(2))
        .sum())
}

/// Weighted graph of one Louvain level. `adj[i]` holds `(j, A_ij)` with the
/// diagonal entry (if any) counting internal weight twice.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
    two_m: f64,
}

impl Level {
    fn from_graph<S: Scalar>(graph: &Graph<S>) -> Self {
        let n = graph.num_nodes();
        let adj: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                graph
                    .neighbors(i)
                    .expect("in range")
                    .iter()
                    .map(|&j| (j, 1.0))
                    .collect()
            })
            .collect();
        Self::with_adj(adj)
    }

    fn with_adj(adj: Vec<Vec<(usize, f64)>>) -> Self {
        let degree: Vec<f64> = adj.iter().map(|r| r.iter().map(|e| e.1).sum()).collect();
        let two_m = degree.iter().sum();
        Self { adj, degree, two_m }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn modularity(&self, community: &[usize], count: usize) -> f64 {
        let mut internal = vec![0.0; count];
        let mut tot = vec![0.0; count];
        for (i, row) in self.adj.iter().enumerate() {
            let c = community[i];
            tot[c] += self.degree[i];
            for &(j, w) in row {
                if community[j] == c {
                    internal[c] += w;
                }
            }
        }
        internal
            .iter()
            .zip(&tot)
            .map(|(&l, &t)| l / self.two_m - (t / self.two_m).powi(2))
            .sum()
    }

    /// Local-move phase. Returns the community of every node and whether any moved.
    fn local_moves(&self, rng: &mut rng::Rng) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut community: Vec<usize> = (0..n).collect();
        let mut tot = self.degree.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut link = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut moved_any = false;
        loop {
            let mut moved = false;
            for &i in &order {
                let own = community[i];
                let ki = self.degree[i];
                touched.clear();
                for &(j, w) in &self.adj[i] {
                    if j == i {
                        continue;
                    }
                    let c = community[j];
                    if link[c] == 0.0 {
                        touched.push(c);
                    }
                    link[c] += w;
                }
                tot[own] -= ki;
                let gain = |c: usize, link_c: f64| 2.0 * (link_c - tot[c] * ki / self.two_m) / self.two_m;
                let stay = gain(own, link[own]);
                let mut best = (own, stay);
                for &c in &touched {
                    let g = gain(c, link[c]);
                    if g > best.1 || (g == best.1 && c < best.0) {
                        best = (c, g);
                    }
                }
                let target = if best.0 != own && best.1 - stay > GAIN_TOLERANCE {
                    best.0
                } else {
                    own
                };
                tot[target] += ki;
                if target != own {
                    community[i] = target;
                    moved = true;
                }
                for &c in &touched {
                    link[c] = 0.0;
                }
            }
            if !moved {
                break;
            }
            moved_any = true;
        }
        (community, moved_any)
    }

    fn aggregate(&self, community: &[usize], count: usize) -> Level {
        let mut rows: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); count];
        for (i, row) in self.adj.iter().enumerate() {
            let ci = community[i];
            for &(j, w) in row {
                *rows[ci].entry(community[j]).or_insert(0.0) += w;
            }
        }
        Level::with_adj(rows.into_iter().map(|r| r.into_iter().collect()).collect())
    }
}

/// Relabels to contiguous ids in order of first appearance.
fn compact(labels: &mut [usize]) -> usize {
    let mut map = std::collections::HashMap::new();
    for l in labels.iter_mut() {
        let next = map.len();
        *l = *map.entry(*l).or_insert(next);
    }
    map.len()
}

/// Runs Louvain and returns the final assignment with the modularity reached
/// after every completed level (first entry: singleton partition).
pub fn louvain_with_trace<S: Scalar>(graph: &Graph<S>, seed: u64) -> Result<(CommunityAssignment, Vec<f64>)> {
    if graph.num_edges() == 0 {
        return Err(Error::Undefined("Louvain on a graph without edges".into()));
    }
    let mut rng = rng::stream(Stream::Louvain, &[seed]);
    let mut level = Level::from_graph(graph);
    let mut node_comm: Vec<usize> = (0..graph.num_nodes()).collect();
    let identity: Vec<usize> = (0..level.len()).collect();
    let mut trace = vec![level.modularity(&identity, level.len())];
    loop {
        let (mut community, moved) = level.local_moves(&mut rng);
        if !moved {
            break;
        }
        let count = compact(&mut community);
        let q = level.modularity(&community, count);
        debug_assert!(q >= trace.last().unwrap() - 1e-12, "modularity decreased");
        trace.push(q);
        for c in node_comm.iter_mut() {
            *c = community[*c];
        }
        if count == level.len() {
            break;
        }
        level = level.aggregate(&community, count);
    }
    let count = compact(&mut node_comm);
    Ok((
        CommunityAssignment {
            community_of: node_comm,
            count,
        },
        trace,
    ))
}

pub fn louvain_partition<S: Scalar>(graph: &Graph<S>, seed: u64) -> Result<CommunityAssignment> {
    louvain_with_trace(graph, seed).map(|(a, _)| a)
}
