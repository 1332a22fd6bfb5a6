use log::warn;

use crate::augment::{make_views, view_rng};
use crate::diffcore::{Gradients, SgdState, Tape, Var};
use crate::error::{Error, Result};
use crate::gnn::{GnnModel, MessageIndex, ModelVars};
use crate::graph::Graph;
use crate::losses::{cross_entropy, fgsd_loss, fnsc_loss, prox_term, total_loss, KeySource, NeighborIndex};
use crate::scalar::Scalar;

use super::config::{Method, TrainConfig};

/// One participant: its private subgraph, current model and optimizer.
#[derive(Clone, Debug)]
pub struct ClientState<S> {
    pub id: usize,
    pub data: Graph<S>,
    /// Id of every local node in the full graph.
    pub original_ids: Vec<usize>,
    pub model: GnnModel<S>,
    pub optimizer: SgdState<S>,
    messages: MessageIndex,
    neighbors: NeighborIndex,
}

impl<S: Scalar> ClientState<S> {
    pub fn new(id: usize, data: Graph<S>, original_ids: Vec<usize>, model: GnnModel<S>, config: &TrainConfig) -> Result<Self> {
        if data.num_nodes() == 0 {
            return Err(Error::InvalidArgument(format!("client {id} has no nodes")));
        }
        model.check_input(&data)?;
        let optimizer = SgdState::new(config.sgd, model.num_params());
        Ok(Self {
            id,
            messages: MessageIndex::new(&data),
            neighbors: NeighborIndex::new(&data),
            data,
            original_ids,
            model,
            optimizer,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.data.num_nodes()
    }

    pub fn train_nodes(&self) -> &[usize] {
        self.data.masks().map(|m| m.train.as_slice()).unwrap_or(&[])
    }

    pub(crate) fn messages(&self) -> &MessageIndex {
        &self.messages
    }
}

/// Loss components averaged over the local epochs; inactive terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub ce: f64,
    pub fnsc: f64,
    pub fgsd: f64,
    pub total: f64,
}

/// Runs `epochs x steps_per_epoch` full-batch steps on the client.
///
/// `global` is the model broadcast this round; it is only read (frozen
/// teacher for FGSSL, anchor for FedProx).
pub fn local_update<S: Scalar>(
    client: &mut ClientState<S>,
    global: &GnnModel<S>,
    config: &TrainConfig,
    seed: u64,
    round: usize,
) -> Result<LossParts> {
    let train = client.train_nodes().to_vec();
    if train.is_empty() {
        warn!("client {} has no training nodes; skipping its update", client.id);
        return Ok(LossParts::default());
    }
    let fnsc_on = config.method == Method::Fgssl && config.fnsc.lambda > 0.0;
    let fgsd_on = config.method == Method::Fgssl && config.fgsd.lambda > 0.0 && client.neighbors.eligible() > 0;
    let contrast_nodes = if fnsc_on { contrast_nodes(&client.data, &train, config.fnsc.key_source) } else { None };

    let id = client.id;
    let mut sum = LossParts::default();
    let steps = config.epochs * config.steps_per_epoch;
    for epoch in 0..config.epochs {
        let views = if contrast_nodes.is_some() || fgsd_on {
            let mut rng = view_rng(seed, round, epoch, id);
            Some(make_views(&client.data, &config.augment, &mut rng)?)
        } else {
            None
        };
        let teacher = match &views {
            Some((_, weak)) if config.fnsc.key_source == KeySource::Global || fgsd_on => Some(global.forward(weak)?),
            _ => None,
        };
        for _ in 0..config.steps_per_epoch {
            let diag = |e: Error| diverged(e, round, epoch, id);
            let mut tape = Tape::new();
            let vars = client.model.bind(&mut tape, true).map_err(diag)?;
            let x = tape.constant(client.data.features().clone()).map_err(diag)?;
            let out = client
                .model
                .forward_with(&mut tape, &vars, x, &client.messages)
                .map_err(diag)?;
            let mut ce = cross_entropy(&mut tape, out.logits, client.data.labels(), &train).map_err(diag)?;
            if config.method == Method::FedProx && config.prox_mu > 0.0 {
                let p = prox_term(&mut tape, vars.blocks(), global.blocks(), S::of(config.prox_mu)).map_err(diag)?;
                ce = tape.add(ce, p).map_err(diag)?;
            }
            let (mut fnsc, mut fgsd) = (None, None);
            if let Some((strong, _)) = &views {
                let strong_index = MessageIndex::new(strong);
                let xs = tape.constant(strong.features().clone()).map_err(diag)?;
                let local = client
                    .model
                    .forward_with(&mut tape, &vars, xs, &strong_index)
                    .map_err(diag)?;
                if let Some(nodes) = &contrast_nodes {
                    let keys = match (config.fnsc.key_source, &teacher) {
                        (KeySource::Global, Some((h, _))) => tape.constant(h.clone()).map_err(diag)?,
                        _ => local.embeddings,
                    };
                    fnsc = Some(
                        fnsc_loss(&mut tape, local.embeddings, keys, client.data.labels(), nodes, &config.fnsc)
                            .map_err(diag)?,
                    );
                }
                if fgsd_on {
                    let (_, zg) = teacher.as_ref().expect("teacher computed when distilling");
                    fgsd = Some(
                        fgsd_loss(&mut tape, local.logits, zg, &client.neighbors, S::of(config.fgsd.omega))
                            .map_err(diag)?,
                    );
                }
            }
            let total = total_loss(
                &mut tape,
                ce,
                fnsc,
                fgsd,
                S::of(config.fnsc.lambda),
                S::of(config.fgsd.lambda),
            )
            .map_err(diag)?;

            let value = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item().to_f64_lossy());
            sum.ce += value(Some(ce));
            sum.fnsc += value(fnsc);
            sum.fgsd += value(fgsd);
            sum.total += value(Some(total));

            let grads = tape.backward(total).map_err(diag)?;
            let flat = flat_gradient(&tape, &vars, &grads);
            let mut params = client.model.to_flat();
            client.optimizer.step(&mut params, &flat).map_err(diag)?;
            client.model.set_flat(&params)?;
        }
    }
    let n = steps as f64;
    Ok(LossParts {
        ce: sum.ce / n,
        fnsc: sum.fnsc / n,
        fgsd: sum.fgsd / n,
        total: sum.total / n,
    })
}

fn flat_gradient<S: Scalar>(tape: &Tape<S>, vars: &ModelVars, grads: &Gradients<S>) -> Vec<S> {
    let mut flat = Vec::new();
    for &b in vars.blocks() {
        match grads.get(b) {
            Some(g) => flat.extend_from_slice(g.data()),
            None => flat.extend(std::iter::repeat_n(S::zero(), tape.value(b).len())),
        }
    }
    flat
}

/// Labelled nodes usable as contrast queries, or `None` when the client
/// lacks two labelled classes. Without the node's own global key a query
/// needs another member of its class.
fn contrast_nodes<S: Scalar>(data: &Graph<S>, train: &[usize], key_source: KeySource) -> Option<Vec<usize>> {
    let labels = data.labels();
    let mut count = vec![0usize; data.num_classes()];
    for &i in train {
        count[labels[i]] += 1;
    }
    let min = match key_source {
        KeySource::Global => 1,
        KeySource::Local => 2,
    };
    let nodes: Vec<usize> = train.iter().copied().filter(|&i| count[labels[i]] >= min).collect();
    let classes = count.iter().filter(|&&c| c >= min).count();
    (classes >= 2).then_some(nodes)
}

fn diverged(e: Error, round: usize, epoch: usize, client: usize) -> Error {
    if e.is_numeric() {
        Error::Diverged {
            round,
            epoch,
            client,
            detail: e.to_string(),
        }
    } else {
        e
    }
}
