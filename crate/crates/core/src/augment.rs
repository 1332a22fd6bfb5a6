//! Stochastic graph views: independent edge removal and column-wise feature
//! masking, with a strong preset for the local model and a weak one for the
//! global teacher.

use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{self, Rng, Stream};
use crate::scalar::Scalar;

/// Drop probabilities for one view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Probability of removing each undirected edge.
    pub edge: f64,
    /// Probability of zeroing each feature column.
    pub feat: f64,
}

impl AugmentConfig {
    pub const NONE: Self = Self { edge: 0.0, feat: 0.0 };

    pub fn new(edge: f64, feat: f64) -> Result<Self> {
        let c = Self { edge, feat };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check_prob("edge removal", self.edge)?;
        check_prob("feature masking", self.feat)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPair {
    pub strong: AugmentConfig,
    pub weak: AugmentConfig,
}

impl Default for AugmentPair {
    fn default() -> Self {
        Self {
            strong: AugmentConfig { edge: 0.4, feat: 0.4 },
            weak: AugmentConfig { edge: 0.2, feat: 0.2 },
        }
    }
}

impl AugmentPair {
    pub fn validate(&self) -> Result<()> {
        self.strong.validate()?;
        self.weak.validate()
    }
}

fn check_prob(what: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("{what} probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Keeps each edge independently with probability `1 - p`.
pub fn remove_edges<S: Scalar>(graph: &Graph<S>, p: f64, rng: &mut impl RngCore) -> Result<Graph<S>> {
    check_prob("edge removal", p)?;
    if p == 0.0 {
        return Ok(graph.clone());
    }
    let kept = graph
        .edges()
        .iter()
        .copied()
        .filter(|_| !rng.random_bool(p))
        .collect();
    graph.with_edges(kept)
}

/// Zeroes a random set of feature columns, the same set for every node.
pub fn mask_features<S: Scalar>(graph: &Graph<S>, p: f64, rng: &mut impl RngCore) -> Result<Graph<S>> {
    check_prob("feature masking", p)?;
    if p == 0.0 {
        return Ok(graph.clone());
    }
    let d = graph.feature_dim();
    let keep: Vec<bool> = (0..d).map(|_| !rng.random_bool(p)).collect();
    let x = graph.features();
    let mut data = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        data.extend(x.row(i).iter().zip(&keep).map(|(&v, &k)| if k { v } else { S::zero() }));
    }
    graph.with_features(Tensor::new(x.rows(), d, data)?)
}

/// Edge removal followed by feature masking.
pub fn augment<S: Scalar>(graph: &Graph<S>, config: &AugmentConfig, rng: &mut impl RngCore) -> Result<Graph<S>> {
    let g = remove_edges(graph, config.edge, rng)?;
    mask_features(&g, config.feat, rng)
}

/// `(strong, weak)` views of the same graph; node ids are shared.
pub fn make_views<S: Scalar>(
    graph: &Graph<S>,
    pair: &AugmentPair,
    rng: &mut impl RngCore,
) -> Result<(Graph<S>, Graph<S>)> {
    pair.validate()?;
    let strong = augment(graph, &pair.strong, rng)?;
    let weak = augment(graph, &pair.weak, rng)?;
    Ok((strong, weak))
}

/// Random stream for the views of one client in one local epoch.
pub fn view_rng(seed: u64, round: usize, epoch: usize, client: usize) -> Rng {
    rng::stream(Stream::Augment, &[seed, round as u64, epoch as u64, client as u64])
}
