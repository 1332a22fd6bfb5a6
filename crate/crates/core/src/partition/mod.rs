//! Community detection and the community-to-client assignment that carves a
//! single graph into non-IID client subgraphs.

mod louvain;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

pub use louvain::{louvain_partition, louvain_with_trace, modularity, GAIN_TOLERANCE};

/// Node to community map with contiguous community ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommunityAssignment {
    pub community_of: Vec<usize>,
    count: usize,
}

impl CommunityAssignment {
    /// Builds from arbitrary labels, relabelling them contiguously.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut ids: Vec<usize> = labels.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let community_of = labels
            .iter()
            .map(|l| ids.binary_search(l).expect("present"))
            .collect();
        Self {
            community_of,
            count: ids.len(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for &c in &self.community_of {
            s[c] += 1;
        }
        s
    }
}

/// Node to client map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientPartition {
    pub client_of: Vec<usize>,
    num_clients: usize,
}

impl ClientPartition {
    pub fn new(client_of: Vec<usize>, num_clients: usize) -> Result<Self> {
        let mut size = vec![0usize; num_clients];
        for (i, &c) in client_of.iter().enumerate() {
            if c >= num_clients {
                return Err(Error::InvalidArgument(format!(
                    "node {i} assigned to client {c}, only {num_clients} clients"
                )));
            }
            size[c] += 1;
        }
        if let Some(empty) = size.iter().position(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("client {empty} owns no nodes")));
        }
        Ok(Self {
            client_of,
            num_clients,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    /// Nodes of each client in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.num_clients];
        for (i, &c) in self.client_of.iter().enumerate() {
            m[c].push(i);
        }
        m
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (i, c) in self.client_of.iter().enumerate() {
            writeln!(s, "{i}\t{c}").unwrap();
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Reads `node_id\tclient_id` lines; every node in `[0, num_nodes)` must appear once.
    pub fn read(path: &Path, num_nodes: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut client_of = vec![usize::MAX; num_nodes];
        for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Format {
                what: "partition file",
                detail: format!("line {}: {line:?}", ln + 1),
            };
            let (a, b) = line.trim().split_once('\t').ok_or_else(bad)?;
            let node: usize = a.trim().parse().map_err(|_| bad())?;
            let client: usize = b.trim().parse().map_err(|_| bad())?;
            if node >= num_nodes || client_of[node] != usize::MAX {
                return Err(bad());
            }
            client_of[node] = client;
        }
        if let Some(missing) = client_of.iter().position(|&c| c == usize::MAX) {
            return Err(Error::Format {
                what: "partition file",
                detail: format!("node {missing} has no client"),
            });
        }
        let m = client_of.iter().max().map_or(0, |&c| c + 1);
        Self::new(client_of, m)
    }
}

/// Greedy size balancing: communities in decreasing size order, each to the
/// currently smallest client. Ties between equal-size communities are ordered
/// by a seeded shuffle; ties between clients go to the lowest id.
pub fn communities_to_clients(
    assignment: &CommunityAssignment,
    num_clients: usize,
    seed: u64,
) -> Result<ClientPartition> {
    if num_clients == 0 || assignment.count() < num_clients {
        return Err(Error::InvalidArgument(format!(
            "{} communities cannot fill {num_clients} clients",
            assignment.count()
        )));
    }
    let sizes = assignment.sizes();
    let mut order: Vec<usize> = (0..assignment.count()).collect();
    order.shuffle(&mut rng::stream(Stream::Assign, &[seed]));
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]));
    let mut load = vec![0usize; num_clients];
    let mut client_of_comm = vec![0; assignment.count()];
    for c in order {
        let target = (0..num_clients).min_by_key(|&k| (load[k], k)).expect("clients > 0");
        load[target] += sizes[c];
        client_of_comm[c] = target;
    }
    let client_of = assignment
        .community_of
        .iter()
        .map(|&c| client_of_comm[c])
        .collect();
    ClientPartition::new(client_of, num_clients)
}

/// Induced subgraph plus the original id of every new node.
#[derive(Clone, Debug)]
pub struct Subgraph<S> {
    pub graph: Graph<S>,
    pub original_ids: Vec<usize>,
}

pub fn induce_subgraph<S: Scalar>(graph: &Graph<S>, nodes: &[usize]) -> Result<Subgraph<S>> {
    let (graph, original_ids) = graph.induced(nodes)?;
    Ok(Subgraph { graph, original_ids })
}

/// One induced subgraph per client; cross-client edges are dropped.
pub fn client_subgraphs<S: Scalar>(graph: &Graph<S>, partition: &ClientPartition) -> Result<Vec<Subgraph<S>>> {
    if partition.client_of.len() != graph.num_nodes() {
        return Err(Error::InvalidArgument(format!(
            "partition covers {} nodes, graph has {}",
            partition.client_of.len(),
            graph.num_nodes()
        )));
    }
    partition
        .members()
        .iter()
        .map(|nodes| induce_subgraph(graph, nodes))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assignment(labels: &[usize]) -> CommunityAssignment {
        CommunityAssignment::from_labels(labels)
    }

    #[test]
    fn greedy_balancing_trace() {
        // sizes 5, 4, 3, 2
        let mut labels = vec![0; 5];
        labels.extend([1; 4]);
        labels.extend([2; 3]);
        labels.extend([3; 2]);
        let p = communities_to_clients(&assignment(&labels), 2, 0).unwrap();
        let members = p.members();
        assert_eq!(members[0].len(), 7);
        assert_eq!(members[1].len(), 7);
        // {5, 2} and {4, 3}
        assert_eq!(p.client_of[0], p.client_of[12]);
        assert_eq!(p.client_of[5], p.client_of[9]);
        assert_ne!(p.client_of[0], p.client_of[5]);
    }

    #[test]
    fn one_community_per_client() {
        let labels = [0, 0, 1, 2, 2, 2];
        let a = assignment(&labels);
        let p = communities_to_clients(&a, 3, 4).unwrap();
        for c in 0..3 {
            let owners: std::collections::BTreeSet<_> = labels
                .iter()
                .zip(&p.client_of)
                .filter(|(&l, _)| l == c)
                .map(|(_, &o)| o)
                .collect();
            assert_eq!(owners.len(), 1);
        }
        let mut seen: Vec<_> = p.client_of.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn single_client_takes_everything() {
        let p = communities_to_clients(&assignment(&[0, 1, 2, 1]), 1, 0).unwrap();
        assert_eq!(p.client_of, vec![0; 4]);
    }

    #[test]
    fn too_few_communities() {
        assert!(communities_to_clients(&assignment(&[0, 0, 1]), 3, 0).is_err());
    }

    #[test]
    fn partition_file_round_trip() {
        let p = ClientPartition::new(vec![1, 0, 0, 2, 1], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partition.tsv");
        p.write(&path).unwrap();
        assert_eq!(ClientPartition::read(&path, 5).unwrap(), p);
        assert!(ClientPartition::read(&path, 6).is_err());
    }

    #[test]
    fn empty_client_rejected() {
        assert!(ClientPartition::new(vec![0, 0, 2], 3).is_err());
    }
}
