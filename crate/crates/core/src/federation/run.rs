use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{GnnModel, ModelSpec};
use crate::graph::Graph;
use crate::partition::{client_subgraphs, ClientPartition};
use crate::scalar::Scalar;

use super::client::{local_update, ClientState, LossParts};
use super::config::{Method, TrainConfig};
use super::server::{aggregate, broadcast, split_accuracy, Accuracy, ServerState};

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub seed: u64,
    pub round: usize,
    pub method: Method,
    pub loss_ce: f64,
    pub loss_fnsc: f64,
    pub loss_fgsd: f64,
    pub loss_total: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult<S> {
    pub seed: u64,
    pub method: Method,
    pub rounds: Vec<RoundReport>,
    /// Aggregated model; `None` for the Local baseline.
    pub global: Option<GnnModel<S>>,
    /// Client models after their last local update.
    pub client_models: Vec<GnnModel<S>>,
}

impl<S> RunResult<S> {
    pub fn final_test(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.test_acc)
    }

    /// Round with the highest validation accuracy (earliest on ties).
    pub fn best_val_round(&self) -> Option<&RoundReport> {
        self.rounds.iter().fold(None, |best: Option<&RoundReport>, r| match best {
            Some(b) if b.val_acc >= r.val_acc => Some(b),
            _ => Some(r),
        })
    }

    pub fn best_val_test(&self) -> f64 {
        self.best_val_round().map_or(f64::NAN, |r| r.test_acc)
    }
}

/// Trains one method for one seed.
///
/// The seed drives model initialisation and augmentation; the split and the
/// partition are inputs.
pub fn run_experiment<S: Scalar>(
    config: &TrainConfig,
    graph: &Graph<S>,
    partition: &ClientPartition,
    seed: u64,
) -> Result<RunResult<S>> {
    config.validate()?;
    if graph.masks().is_none() {
        return Err(Error::InvalidArgument("graph has no train/val/test split".into()));
    }
    let spec = ModelSpec {
        in_dim: graph.feature_dim(),
        hidden: config.hidden,
        num_classes: graph.num_classes(),
        heads: config.heads,
    };
    let init = GnnModel::init(spec, seed)?;
    let mut clients = if config.method == Method::Global {
        vec![ClientState::new(0, graph.clone(), (0..graph.num_nodes()).collect(), init.clone(), config)?]
    } else {
        client_subgraphs(graph, partition)?
            .into_iter()
            .enumerate()
            .map(|(m, sub)| ClientState::new(m, sub.graph, sub.original_ids, init.clone(), config))
            .collect::<Result<Vec<_>>>()?
    };
    let sizes: Vec<usize> = clients.iter().map(|c| c.num_nodes()).collect();
    let total_nodes: usize = sizes.iter().sum();
    let mut server = ServerState::new(init);
    let federated = config.method != Method::Local;
    let mut rounds = Vec::with_capacity(config.rounds);

    for t in 0..config.rounds {
        server.round = t;
        if federated || t == 0 {
            broadcast(&server, &mut clients, config.reset_velocity);
        }
        let snapshot = &server.model;
        let losses = clients
            .par_iter_mut()
            .map(|c| local_update(c, snapshot, config, seed, t))
            .collect::<Result<Vec<LossParts>>>()?;
        if federated {
            let params: Vec<Vec<S>> = clients.iter().map(|c| c.model.to_flat()).collect();
            let merged = aggregate(&params, &sizes)?;
            server.model.set_flat(&merged)?;
        }
        let diverged = |e: Error| match e {
            Error::NonFinite { op } => Error::EvalDiverged {
                round: t,
                detail: format!("non-finite value produced by {op}"),
            },
            other => other,
        };
        let [val, test] = if federated {
            split_accuracy(&server.model, &clients).map_err(diverged)?.map(ratio)
        } else {
            // mean over client models, each scored on every client's nodes
            let per_model = clients
                .par_iter()
                .map(|c| split_accuracy(&c.model, &clients))
                .collect::<Result<Vec<_>>>()
                .map_err(diverged)?;
            let m = per_model.len() as f64;
            [0, 1].map(|k| per_model.iter().map(|a| ratio(a[k])).sum::<f64>() / m)
        };
        let weighted = |f: fn(&LossParts) -> f64| {
            losses.iter().zip(&sizes).map(|(l, &n)| f(l) * n as f64).sum::<f64>() / total_nodes as f64
        };
        rounds.push(RoundReport {
            seed,
            round: t,
            method: config.method,
            loss_ce: weighted(|l| l.ce),
            loss_fnsc: weighted(|l| l.fnsc),
            loss_fgsd: weighted(|l| l.fgsd),
            loss_total: weighted(|l| l.total),
            val_acc: val,
            test_acc: test,
        });
        log::debug!(
            "{} seed {seed} round {t}: loss {:.4} val {:.4} test {:.4}",
            config.method,
            rounds[t].loss_total,
            val,
            test
        );
    }
    Ok(RunResult {
        seed,
        method: config.method,
        rounds,
        global: federated.then_some(server.model),
        client_models: clients.into_iter().map(|c| c.model).collect(),
    })
}

fn ratio(a: Accuracy) -> f64 {
    a.value().unwrap_or(f64::NAN)
}

pub fn run_seeds<S: Scalar>(
    config: &TrainConfig,
    graph: &Graph<S>,
    partition: &ClientPartition,
    seeds: &[u64],
) -> Result<Vec<RunResult<S>>> {
    seeds.iter().map(|&s| run_experiment(config, graph, partition, s)).collect()
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub final_test: Stat,
    pub best_val_test: Stat,
}

/// Per-method statistics over seeds, in order of first appearance.
pub fn summarize<S>(results: &[RunResult<S>]) -> Vec<MethodSummary> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<&'static str, Vec<&RunResult<S>>> = BTreeMap::new();
    for r in results {
        let key = r.method.as_str();
        if !groups.contains_key(key) {
            order.push(r.method);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|method| {
            let rs = &groups[method.as_str()];
            MethodSummary {
                method,
                seeds: rs.iter().map(|r| r.seed).collect(),
                final_test: Stat::of(&rs.iter().map(|r| r.final_test()).collect::<Vec<_>>()),
                best_val_test: Stat::of(&rs.iter().map(|r| r.best_val_test()).collect::<Vec<_>>()),
            }
        })
        .collect()
}
