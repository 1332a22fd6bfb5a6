use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::gnn::GnnModel;
use crate::graph::NodeRole;
use crate::scalar::Scalar;

use super::client::ClientState;

/// Global model and round counter.
#[derive(Clone, Debug)]
pub struct ServerState<S> {
    pub model: GnnModel<S>,
    pub round: usize,
}

impl<S: Scalar> ServerState<S> {
    pub fn new(model: GnnModel<S>) -> Self {
        Self { model, round: 0 }
    }
}

/// Copies the global parameters into every client, optionally clearing
/// their momentum buffers.
pub fn broadcast<S: Scalar>(server: &ServerState<S>, clients: &mut [ClientState<S>], reset_velocity: bool) {
    for c in clients.iter_mut() {
        c.model = server.model.clone();
        if reset_velocity {
            c.optimizer.reset();
        }
    }
}

/// `sum_m (n_m / n) * theta_m`, accumulated in client order as
/// `theta_0 + sum_m (n_m / n) * (theta_m - theta_0)` so that coordinates on
/// which every client agrees are returned bitwise unchanged.
pub fn aggregate<S: Scalar>(params: &[Vec<S>], sizes: &[usize]) -> Result<Vec<S>> {
    if params.is_empty() || params.len() != sizes.len() {
        return Err(Error::Shape {
            op: "aggregate",
            detail: format!("{} parameter vectors, {} sizes", params.len(), sizes.len()),
        });
    }
    let dim = params[0].len();
    if params.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape {
            op: "aggregate",
            detail: "clients disagree on the parameter count".into(),
        });
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("aggregation weights sum to zero".into()));
    }
    let weights: Vec<S> = sizes.iter().map(|&n| S::of(n as f64 / total as f64)).collect();
    let anchor = &params[0];
    let mut delta = vec![S::zero(); dim];
    for (p, &w) in params.iter().zip(&weights).skip(1) {
        for ((d, &v), &a) in delta.iter_mut().zip(p).zip(anchor) {
            *d = *d + w * (v - a);
        }
    }
    Ok(anchor.iter().zip(&delta).map(|(&a, &d)| a + d).collect())
}

/// Correct predictions out of a node count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    pub fn merge(self, other: Accuracy) -> Accuracy {
        Accuracy {
            correct: self.correct + other.correct,
            total: self.total + other.total,
        }
    }
}

/// Arg-max accuracy on `nodes`; ties go to the lowest class id.
pub fn accuracy<S: Scalar>(logits: &Tensor<S>, labels: &[usize], nodes: &[usize]) -> Accuracy {
    let correct = nodes
        .iter()
        .filter(|&&i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best == labels[i]
        })
        .count();
    Accuracy {
        correct,
        total: nodes.len(),
    }
}

/// Validation and test accuracy of one model, pooled over all clients.
pub fn split_accuracy<S: Scalar>(model: &GnnModel<S>, clients: &[ClientState<S>]) -> Result<[Accuracy; 2]> {
    let mut out = [Accuracy::default(); 2];
    for c in clients {
        let Some(masks) = c.data.masks() else { continue };
        if masks.val.is_empty() && masks.test.is_empty() {
            continue;
        }
        let (_, z) = forward_on(model, c)?;
        out[0] = out[0].merge(accuracy(&z, c.data.labels(), &masks.val));
        out[1] = out[1].merge(accuracy(&z, c.data.labels(), &masks.test));
    }
    Ok(out)
}

fn forward_on<S: Scalar>(model: &GnnModel<S>, client: &ClientState<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    let mut tape = crate::diffcore::Tape::new();
    let vars = model.bind(&mut tape, false)?;
    let x = tape.constant(client.data.features().clone())?;
    let out = model.forward_with(&mut tape, &vars, x, client.messages())?;
    Ok((tape.value(out.embeddings).clone(), tape.value(out.logits).clone()))
}

/// Accuracy on the `role` nodes of every client, pooled by node count.
pub fn evaluate<S: Scalar>(model: &GnnModel<S>, clients: &[ClientState<S>], role: NodeRole) -> Result<f64> {
    let idx = match role {
        NodeRole::Val => 0,
        NodeRole::Test => 1,
        NodeRole::Train => {
            let mut acc = Accuracy::default();
            for c in clients {
                let (_, z) = forward_on(model, c)?;
                acc = acc.merge(accuracy(&z, c.data.labels(), c.train_nodes()));
            }
            return acc.value().ok_or_else(|| Error::Undefined("no training nodes on any client".into()));
        }
    };
    split_accuracy(model, clients)?[idx]
        .value()
        .ok_or_else(|| Error::Undefined(format!("no {} nodes on any client", role.as_str())))
}
