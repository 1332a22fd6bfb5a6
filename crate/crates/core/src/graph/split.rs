use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

use super::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Train,
    Val,
    Test,
}

impl NodeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::Train => "train",
            NodeRole::Val => "val",
            NodeRole::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(NodeRole::Train),
            "val" => Some(NodeRole::Val),
            "test" => Some(NodeRole::Test),
            _ => None,
        }
    }
}

/// Disjoint train/val/test node sets, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Non-fatal issues found while splitting (e.g. classes too small to cover every mask).
    pub warnings: Vec<String>,
}

impl SplitMasks {
    pub fn from_roles(roles: &[Option<NodeRole>]) -> Self {
        let mut m = SplitMasks::default();
        for (i, r) in roles.iter().enumerate() {
            match r {
                Some(NodeRole::Train) => m.train.push(i),
                Some(NodeRole::Val) => m.val.push(i),
                Some(NodeRole::Test) => m.test.push(i),
                None => {}
            }
        }
        m
    }

    pub fn get(&self, role: NodeRole) -> &[usize] {
        match role {
            NodeRole::Train => &self.train,
            NodeRole::Val => &self.val,
            NodeRole::Test => &self.test,
        }
    }

    pub fn roles(&self, num_nodes: usize) -> Vec<Option<NodeRole>> {
        let mut roles = vec![None; num_nodes];
        for role in [NodeRole::Train, NodeRole::Val, NodeRole::Test] {
            for &i in self.get(role) {
                roles[i] = Some(role);
            }
        }
        roles
    }

    pub(crate) fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![false; num_nodes];
        for role in [NodeRole::Train, NodeRole::Val, NodeRole::Test] {
            for &i in self.get(role) {
                if i >= num_nodes {
                    return Err(Error::NodeOutOfRange { id: i, num_nodes });
                }
                if seen[i] {
                    return Err(Error::InvalidArgument(format!("node {i} is in more than one mask")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    /// Keeps nodes with a valid new id (`usize::MAX` marks dropped nodes).
    pub(crate) fn remap(&self, new_id: &[usize]) -> Self {
        let map = |v: &[usize]| {
            let mut out: Vec<usize> = v
                .iter()
                .map(|&i| new_id[i])
                .filter(|&j| j != usize::MAX)
                .collect();
            out.sort_unstable();
            out
        };
        SplitMasks {
            train: map(&self.train),
            val: map(&self.val),
            test: map(&self.test),
            warnings: Vec::new(),
        }
    }
}

/// Stratified train/val/test split.
///
/// Each class is shuffled independently and cut at `round(ratio * size)`.
/// When the ratios sum to one the test mask takes the remainder of each class.
pub fn split_nodes<S: Scalar>(graph: &Graph<S>, ratios: [f64; 3], seed: u64) -> Result<SplitMasks> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || ratios.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be non-negative and sum to at most 1"
        )));
    }
    let exhaustive = (ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    let mut by_class = vec![Vec::new(); graph.num_classes()];
    for (i, &c) in graph.labels().iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = rng::stream(Stream::Split, &[seed]);
    let mut masks = SplitMasks::default();
    for (c, mut nodes) in by_class.into_iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        if nodes.len() < 3 {
            masks.warnings.push(format!(
                "class {c} has only {} node(s); some masks get none of it",
                nodes.len()
            ));
        }
        nodes.shuffle(&mut rng);
        let n = nodes.len();
        let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
        let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
        let rest = n - n_train - n_val;
        let n_test = if exhaustive {
            rest
        } else {
            ((ratios[2] * n as f64).round() as usize).min(rest)
        };
        masks.train.extend_from_slice(&nodes[..n_train]);
        masks.val.extend_from_slice(&nodes[n_train..n_train + n_val]);
        masks.test.extend_from_slice(&nodes[n_train + n_val..n_train + n_val + n_test]);
    }
    masks.train.sort_unstable();
    masks.val.sort_unstable();
    masks.test.sort_unstable();
    for w in &masks.warnings {
        log::warn!("{w}");
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn labelled(labels: Vec<usize>, classes: usize) -> Graph<f64> {
        let n = labels.len();
        Graph::new(Tensor::zeros(n, 1), [], labels, classes).unwrap()
    }

    #[test]
    fn ten_nodes_sixty_twenty_twenty() {
        let g = labelled(vec![0; 10], 1);
        let m = split_nodes(&g, [0.6, 0.2, 0.2], 0).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (6, 2, 2));
    }

    #[test]
    fn all_train() {
        let g = labelled(vec![0, 1, 0, 1, 1], 2);
        let m = split_nodes(&g, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(m.train, vec![0, 1, 2, 3, 4]);
        assert!(m.val.is_empty() && m.test.is_empty());
    }

    #[test]
    fn tiny_class_is_assigned_with_warning() {
        let mut labels = vec![0; 20];
        labels.push(1);
        let g = labelled(labels, 2);
        let m = split_nodes(&g, [0.6, 0.2, 0.2], 0).unwrap();
        assert_eq!(m.warnings.len(), 1);
        let total = m.train.len() + m.val.len() + m.test.len();
        assert_eq!(total, 21);
    }

    #[test]
    fn bad_ratios() {
        let g = labelled(vec![0; 4], 1);
        assert!(split_nodes(&g, [0.7, 0.2, 0.2], 0).is_err());
        assert!(split_nodes(&g, [-0.1, 0.2, 0.2], 0).is_err());
    }

    #[test]
    fn disjoint_and_reproducible() {
        let labels: Vec<usize> = (0..97).map(|i| i % 4).collect();
        let g = labelled(labels, 4);
        let a = split_nodes(&g, [0.6, 0.2, 0.2], 11).unwrap();
        let b = split_nodes(&g, [0.6, 0.2, 0.2], 11).unwrap();
        assert_eq!(a, b);
        a.validate(97).unwrap();
        let c = split_nodes(&g, [0.6, 0.2, 0.2], 12).unwrap();
        assert_ne!(a.train, c.train);
    }
}
