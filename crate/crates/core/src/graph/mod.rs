//! Node-attributed undirected graphs, their on-disk format, synthetic
//! generation and transductive node splits.

mod io;
mod sbm;
mod split;

use std::collections::BTreeSet;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use io::{load_graph, read_masks, save_graph, write_masks};
pub use sbm::{generate_sbm, SbmSpec};
pub use split::{split_nodes, NodeRole, SplitMasks};

/// Compressed adjacency lists; `neighbors(i)` is sorted and excludes `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Adjacency {
    fn build(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut degree = vec![0usize; num_nodes];
        for &(a, b) in edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..num_nodes].to_vec();
        let mut targets = vec![0; offsets[num_nodes]];
        for &(a, b) in edges {
            targets[fill[a]] = b;
            fill[a] += 1;
            targets[fill[b]] = a;
            fill[b] += 1;
        }
        for i in 0..num_nodes {
            targets[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Self { offsets, targets }
    }

    fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Undirected graph with node features, labels and optional split masks.
///
/// Edges are stored once as `(src, dst)` with `src < dst`; self-loops and
/// duplicates are removed at construction. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph<S> {
    features: Tensor<S>,
    edges: Vec<(usize, usize)>,
    labels: Vec<usize>,
    num_classes: usize,
    masks: Option<SplitMasks>,
    adjacency: Adjacency,
}

impl<S: Scalar> Graph<S> {
    /// Validates and canonicalizes. Edge direction is discarded.
    pub fn new(
        features: Tensor<S>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows but {} labels",
                n,
                labels.len()
            )));
        }
        if let Some((i, &c)) = labels.iter().enumerate().find(|(_, &c)| c >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "label {c} of node {i} outside [0, {num_classes})"
            )));
        }
        if !features.all_finite() {
            return Err(Error::InvalidGraph("non-finite feature value".into()));
        }
        let mut canon = BTreeSet::new();
        for (a, b) in edges {
            for id in [a, b] {
                if id >= n {
                    return Err(Error::NodeOutOfRange { id, num_nodes: n });
                }
            }
            if a != b {
                canon.insert((a.min(b), a.max(b)));
            }
        }
        let edges: Vec<_> = canon.into_iter().collect();
        let adjacency = Adjacency::build(n, &edges);
        Ok(Self {
            features,
            edges,
            labels,
            num_classes,
            masks: None,
            adjacency,
        })
    }

    pub fn with_masks(mut self, masks: SplitMasks) -> Result<Self> {
        masks.validate(self.num_nodes())?;
        self.masks = Some(masks);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Tensor<S> {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn masks(&self) -> Option<&SplitMasks> {
        self.masks.as_ref()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.neighbors(i).len()
    }

    /// Stored neighbors of `i`, excluding `i` itself.
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        if i >= self.num_nodes() {
            return Err(Error::NodeOutOfRange {
                id: i,
                num_nodes: self.num_nodes(),
            });
        }
        Ok(self.adjacency.neighbors(i))
    }

    /// Same nodes, labels and masks with a different edge set.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut g = Graph::new(self.features.clone(), edges, self.labels.clone(), self.num_classes)?;
        g.masks = self.masks.clone();
        Ok(g)
    }

    /// Same structure, labels and masks with a different feature matrix.
    pub fn with_features(&self, features: Tensor<S>) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::Shape {
                op: "with_features",
                detail: format!("{:?} vs {:?}", features.shape(), self.features.shape()),
            });
        }
        if !features.all_finite() {
            return Err(Error::InvalidGraph("non-finite feature value".into()));
        }
        let mut g = self.clone();
        g.features = features;
        Ok(g)
    }

    /// Subgraph induced by `nodes`, relabelled contiguously in the order given.
    ///
    /// Only edges with both endpoints inside survive; masks are restricted.
    pub fn induced(&self, nodes: &[usize]) -> Result<(Self, Vec<usize>)> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("empty node set for induced subgraph".into()));
        }
        let n = self.num_nodes();
        let mut new_id = vec![usize::MAX; n];
        for (k, &v) in nodes.iter().enumerate() {
            if v >= n {
                return Err(Error::NodeOutOfRange { id: v, num_nodes: n });
            }
            if new_id[v] != usize::MAX {
                return Err(Error::InvalidArgument(format!("node {v} listed twice")));
            }
            new_id[v] = k;
        }
        let d = self.feature_dim();
        let mut feats = Vec::with_capacity(nodes.len() * d);
        for &v in nodes {
            feats.extend_from_slice(self.features.row(v));
        }
        let features = Tensor::new(nodes.len(), d, feats)?;
        let edges = self
            .edges
            .iter()
            .filter(|&&(a, b)| new_id[a] != usize::MAX && new_id[b] != usize::MAX)
            .map(|&(a, b)| (new_id[a], new_id[b]));
        let labels = nodes.iter().map(|&v| self.labels[v]).collect();
        let mut g = Graph::new(features, edges, labels, self.num_classes)?;
        if let Some(m) = &self.masks {
            g.masks = Some(m.remap(&new_id));
        }
        Ok((g, nodes.to_vec()))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn path3() -> Graph<f64> {
        let x = Tensor::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        Graph::new(x, [(1, 0), (1, 2)], vec![0, 1, 0], 2).unwrap()
    }

    #[test]
    fn neighbors_of_path_middle() {
        let g = path3();
        assert_eq!(g.neighbors(1).unwrap(), &[0, 2]);
        assert_eq!(g.neighbors(0).unwrap(), &[1]);
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let x = Tensor::new(3, 1, vec![0.0; 3]).unwrap();
        let g = Graph::new(x, [(0, 1)], vec![0, 0, 0], 1).unwrap();
        assert!(g.neighbors(2).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_neighbor_query() {
        assert!(matches!(
            path3().neighbors(3),
            Err(Error::NodeOutOfRange { id: 3, num_nodes: 3 })
        ));
    }

    #[test]
    fn edges_are_canonicalized() {
        let x = Tensor::new(3, 1, vec![0.0; 3]).unwrap();
        let g = Graph::new(x, [(2, 0), (0, 2), (1, 1), (0, 1)], vec![0; 3], 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2)]);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let x = Tensor::new(2, 1, vec![0.0; 2]).unwrap();
        assert!(Graph::new(x.clone(), [(0, 2)], vec![0, 0], 1).is_err());
        assert!(Graph::new(x.clone(), [], vec![0, 1], 1).is_err());
        assert!(Graph::new(x.clone(), [], vec![0], 1).is_err());
        let nan = Tensor::new(2, 1, vec![0.0, f64::NAN]).unwrap();
        assert!(Graph::new(nan, [], vec![0, 0], 1).is_err());
    }

    #[test]
    fn induced_triangle_pair() {
        let x = Tensor::new(3, 1, vec![0.0; 3]).unwrap();
        let g = Graph::new(x, [(0, 1), (1, 2), (0, 2)], vec![0; 3], 1).unwrap();
        let (sub, ids) = g.induced(&[0, 1]).unwrap();
        assert_eq!(sub.edges(), &[(0, 1)]);
        assert_eq!(ids, vec![0, 1]);
        let (full, _) = g.induced(&[0, 1, 2]).unwrap();
        assert_eq!(full.num_edges(), 3);
        assert!(g.induced(&[]).is_err());
    }
}
