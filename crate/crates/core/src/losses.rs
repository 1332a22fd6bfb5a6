//! Training objectives: cross-entropy, the cosine kernel, node-wise supervised
//! contrast against frozen teacher keys, neighbourhood similarity
//! distillation and the proximal term used by FedProx.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffcore::{l2, segment_log_softmax, ContrastRow, Segments, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;

/// Floor for cosine denominators.
pub const COSINE_EPS: f64 = 1e-12;

/// Mean of `-log softmax(z_i)[y_i]` over `nodes`.
pub fn cross_entropy<S: Scalar>(tape: &mut Tape<S>, logits: Var, labels: &[usize], nodes: &[usize]) -> Result<Var> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument("cross-entropy over an empty node set".into()));
    }
    let c = tape.value(logits).cols();
    let mut at = Vec::with_capacity(nodes.len());
    for &i in nodes {
        let y = *labels.get(i).ok_or(Error::NodeOutOfRange {
            id: i,
            num_nodes: labels.len(),
        })?;
        if y >= c {
            return Err(Error::InvalidArgument(format!("label {y} of node {i} with {c} logits")));
        }
        at.push((i, y));
    }
    let ls = tape.row_log_softmax(logits)?;
    let picked = tape.pick(ls, at.into())?;
    let m = tape.mean(picked)?;
    tape.scale(m, -S::one())
}

/// `exp(cos(a, b) / tau)`.
pub fn phi<S: Scalar>(a: &[S], b: &[S], tau: S) -> Result<S> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "phi",
            detail: format!("lengths {} and {}", a.len(), b.len()),
        });
    }
    if tau <= S::zero() {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    let (na, nb) = (l2(a), l2(b));
    if na == S::zero() || nb == S::zero() {
        return Err(Error::Undefined("cosine of a zero vector".into()));
    }
    let dot: S = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let cos = dot / (na * nb).max(S::of(COSINE_EPS));
    Ok((cos / tau).exp())
}

/// Where contrastive keys come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeySource {
    /// Frozen global model on the weak view; the node's own key is a positive.
    #[default]
    Global,
    /// The local model's own embeddings; the node itself is excluded.
    Local,
}

impl KeySource {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "global" => Some(Self::Global),
            "local" => Some(Self::Local),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FnscConfig {
    pub tau: f64,
    pub lambda: f64,
    #[serde(default)]
    pub key_source: KeySource,
}

impl Default for FnscConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda: 1.0,
            key_source: KeySource::Global,
        }
    }
}

impl FnscConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau {} must be positive", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda_c {} must be non-negative", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FgsdConfig {
    pub omega: f64,
    pub lambda: f64,
}

impl Default for FgsdConfig {
    fn default() -> Self {
        Self { omega: 5.0, lambda: 1.0 }
    }
}

impl FgsdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidArgument(format!("omega {} must be positive", self.omega)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda_d {} must be non-negative", self.lambda)));
        }
        Ok(())
    }
}

/// Positive and negative key positions for every query, indexed into `labeled`.
pub fn contrast_rows(labels: &[usize], labeled: &[usize], key_source: KeySource) -> Result<Vec<ContrastRow>> {
    let class_of = |i: usize| {
        labels.get(i).copied().ok_or(Error::NodeOutOfRange {
            id: i,
            num_nodes: labels.len(),
        })
    };
    let classes = labeled.iter().map(|&i| class_of(i)).collect::<Result<Vec<_>>>()?;
    let mut distinct = classes.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument(
            "contrast needs at least two labelled classes".into(),
        ));
    }
    let mut rows = Vec::with_capacity(labeled.len());
    for (q, &cq) in classes.iter().enumerate() {
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (k, &ck) in classes.iter().enumerate() {
            if ck != cq {
                negatives.push(k);
            } else if k != q || key_source == KeySource::Global {
                positives.push(k);
            }
        }
        if positives.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "node {} is the only labelled member of class {cq}",
                labeled[q]
            )));
        }
        rows.push(ContrastRow {
            row: q,
            positives,
            negatives,
        });
    }
    Ok(rows)
}

/// Supervised node-wise contrast between query and key embeddings.
///
/// For a query `i` with positives `P_i` and negatives `K_i` (labelled keys of
/// the same and of other classes) the loss is
/// `1/|P_i| * sum_p -log(phi(q_i, k_p) / (phi(q_i, k_p) + sum_k phi(q_i, k_k)))`,
/// averaged over the labelled queries.
pub fn fnsc_loss<S: Scalar>(
    tape: &mut Tape<S>,
    h_query: Var,
    h_key: Var,
    labels: &[usize],
    labeled: &[usize],
    config: &FnscConfig,
) -> Result<Var> {
    config.validate()?;
    if tape.value(h_query).shape() != tape.value(h_key).shape() {
        return Err(Error::Shape {
            op: "fnsc_loss",
            detail: format!(
                "query {:?} and key {:?} embeddings",
                tape.value(h_query).shape(),
                tape.value(h_key).shape()
            ),
        });
    }
    let rows = contrast_rows(labels, labeled, config.key_source)?;
    let idx: Arc<[usize]> = labeled.into();
    let eps = S::of(COSINE_EPS);
    let q = tape.gather_rows(h_query, idx.clone())?;
    let q = tape.row_l2_normalize(q, eps)?;
    let k = if h_key == h_query {
        q
    } else {
        let k = tape.gather_rows(h_key, idx)?;
        tape.row_l2_normalize(k, eps)?
    };
    let kt = tape.transpose(k)?;
    let cos = tape.matmul(q, kt)?;
    let logits = tape.scale(cos, S::of(1.0 / config.tau))?;
    tape.pair_contrast(logits, rows.into())
}

/// `softmax_j(z_i . z_j / omega)` over the neighbours `A_i` (no self-loop).
pub fn similarity_distribution<S: Scalar>(z: &Tensor<S>, i: usize, neighbors: &[usize], omega: S) -> Result<Vec<S>> {
    if neighbors.is_empty() {
        return Err(Error::Undefined(format!("node {i} has no neighbours")));
    }
    if omega <= S::zero() {
        return Err(Error::InvalidArgument(format!("omega {omega} must be positive")));
    }
    let n = z.rows();
    if let Some(&bad) = std::iter::once(&i).chain(neighbors).find(|&&j| j >= n) {
        return Err(Error::NodeOutOfRange { id: bad, num_nodes: n });
    }
    let zi = z.row(i);
    let scores: Vec<S> = neighbors
        .iter()
        .map(|&j| zi.iter().zip(z.row(j)).map(|(&a, &b)| a * b).sum::<S>() / omega)
        .collect();
    Ok(crate::diffcore::softmax(&scores))
}

/// Directed neighbour pairs `j -> i` (no self-loops), grouped by `i`.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    segments: Arc<Segments>,
    eligible: usize,
}

impl NeighborIndex {
    pub fn new<S: Scalar>(graph: &Graph<S>) -> Self {
        let n = graph.num_nodes();
        let mut src = Vec::with_capacity(2 * graph.num_edges());
        let mut dst = Vec::with_capacity(2 * graph.num_edges());
        let mut eligible = 0;
        for i in 0..n {
            let nb = graph.neighbors(i).expect("in range");
            eligible += usize::from(!nb.is_empty());
            for &j in nb {
                src.push(j);
                dst.push(i);
            }
        }
        let segments = Segments::new(dst.clone(), n).expect("ids < n");
        Self {
            src: src.into(),
            dst: dst.into(),
            segments: Arc::new(segments),
            eligible,
        }
    }

    /// Nodes with at least one neighbour.
    pub fn eligible(&self) -> usize {
        self.eligible
    }

    pub fn num_nodes(&self) -> usize {
        self.segments.count()
    }
}

/// Mean over nodes with neighbours of `KL(S^g_i || S^m_i)`, where `S^g` comes
/// from the fixed teacher logits and `S^m` from the trainable `z_local`.
pub fn fgsd_loss<S: Scalar>(
    tape: &mut Tape<S>,
    z_local: Var,
    z_global: &Tensor<S>,
    index: &NeighborIndex,
    omega: S,
) -> Result<Var> {
    if omega <= S::zero() {
        return Err(Error::InvalidArgument(format!("omega {omega} must be positive")));
    }
    if tape.value(z_local).shape() != z_global.shape() || z_global.rows() != index.num_nodes() {
        return Err(Error::Shape {
            op: "fgsd_loss",
            detail: format!(
                "local {:?}, global {:?}, {} indexed nodes",
                tape.value(z_local).shape(),
                z_global.shape(),
                index.num_nodes()
            ),
        });
    }
    if index.eligible == 0 {
        return Err(Error::Undefined("no node has a neighbour".into()));
    }
    let inv = S::one() / omega;
    let scores: Vec<S> = index
        .src
        .iter()
        .zip(index.dst.iter())
        .map(|(&j, &i)| z_global.row(i).iter().zip(z_global.row(j)).map(|(&a, &b)| a * b).sum::<S>() * inv)
        .collect();
    let log_g = segment_log_softmax(&scores, &index.segments);
    let g: Vec<S> = log_g.iter().map(|&v| v.exp()).collect();
    let entropy_term: S = g.iter().zip(&log_g).map(|(&p, &lp)| p * lp).sum();

    let zi = tape.gather_rows(z_local, index.dst.clone())?;
    let zj = tape.gather_rows(z_local, index.src.clone())?;
    let s = tape.dot(zi, zj)?;
    let s = tape.scale(s, inv)?;
    let log_m = tape.segment_log_softmax(s, index.segments.clone())?;
    let weights = tape.constant(Tensor::column(g))?;
    let cross = tape.mul(weights, log_m)?;
    let cross = tape.sum(cross)?;
    let offset = tape.constant(Tensor::scalar(entropy_term))?;
    let kl = tape.sub(offset, cross)?;
    tape.scale(kl, S::one() / S::of(index.eligible as f64))
}

/// `ce + lambda_c * fnsc + lambda_d * fgsd`; absent or zero-weighted terms are
/// left out of the graph entirely.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    ce: Var,
    fnsc: Option<Var>,
    fgsd: Option<Var>,
    lambda_c: S,
    lambda_d: S,
) -> Result<Var> {
    let mut total = ce;
    for (term, w) in [(fnsc, lambda_c), (fgsd, lambda_d)] {
        if let Some(t) = term {
            if w != S::zero() {
                let t = if w == S::one() { t } else { tape.scale(t, w)? };
                total = tape.add(total, t)?;
            }
        }
    }
    Ok(total)
}

/// `(mu / 2) * sum_b |theta_b - global_b|^2` over parameter blocks.
pub fn prox_term<S: Scalar>(tape: &mut Tape<S>, params: &[Var], global: &[Tensor<S>], mu: S) -> Result<Var> {
    if params.len() != global.len() || params.is_empty() {
        return Err(Error::Shape {
            op: "prox_term",
            detail: format!("{} blocks against {} reference blocks", params.len(), global.len()),
        });
    }
    let mut acc: Option<Var> = None;
    for (&p, g) in params.iter().zip(global) {
        let g = tape.constant(g.clone())?;
        let d = tape.sub(p, g)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum(sq)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    tape.scale(acc.expect("non-empty"), mu / S::of(2.0))
}

/// Plain-value version of [`prox_term`] over flat parameter vectors.
pub fn prox_value<S: Scalar>(theta: &[S], global: &[S], mu: S) -> Result<S> {
    if theta.len() != global.len() {
        return Err(Error::Shape {
            op: "prox_value",
            detail: format!("{} and {} parameters", theta.len(), global.len()),
        });
    }
    let sq: S = theta.iter().zip(global).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(mu / S::of(2.0) * sq)
}
