//! The five subcommands. Each one derives everything from the config, so a
//! rerun with the same config and seeds rewrites identical files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use fgssl_core::analysis::{pairwise_client_cka, write_cka, write_logits, write_metrics, write_summary};
use fgssl_core::augment::AugmentPair;
use fgssl_core::diffcore::Tensor;
use fgssl_core::federation::{run_seeds, summarize, Method, MethodSummary, RunResult, TrainConfig};
use fgssl_core::gnn::{load_checkpoint, save_checkpoint, GnnModel};
use fgssl_core::graph::{generate_sbm, load_graph, save_graph, split_nodes, write_masks, Graph};
use fgssl_core::partition::{client_subgraphs, communities_to_clients, louvain_partition, ClientPartition};
use fgssl_core::Scalar;
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig, Precision};

/// Graph with its split, plus the client partition.
pub struct Prepared<S> {
    pub graph: Graph<S>,
    pub partition: ClientPartition,
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|source| fgssl_core::Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Loads or generates the graph, applies the split and builds the partition.
pub fn prepare_data<S: Scalar>(cfg: &ExperimentConfig) -> anyhow::Result<Prepared<S>> {
    let graph: Graph<S> = match (&cfg.dataset.path, &cfg.dataset.sbm) {
        (Some(dir), None) => load_graph(dir)?,
        (None, Some(spec)) => generate_sbm(spec)?,
        _ => return Err(config_err("set exactly one of dataset.path and dataset.sbm")),
    };
    let graph = if cfg.split.use_dataset_masks {
        if graph.masks().is_none() {
            return Err(config_err("split.use_dataset_masks is set but the dataset has no masks.tsv"));
        }
        graph
    } else {
        let masks = split_nodes(&graph, cfg.split.ratios, cfg.split.seed)?;
        for w in &masks.warnings {
            log::warn!("{w}");
        }
        graph.with_masks(masks)?
    };
    let partition = match &cfg.partition.file {
        Some(file) => ClientPartition::read(file, graph.num_nodes())?,
        None => {
            let communities = louvain_partition(&graph, cfg.partition.seed)?;
            log::info!("louvain found {} communities", communities.count());
            communities_to_clients(&communities, cfg.partition.clients(), cfg.partition.seed)?
        }
    };
    Ok(Prepared { graph, partition })
}

pub fn cmd_prepare(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    create_dir(out)?;
    let p = prepare_data::<f64>(cfg)?;
    p.partition.write(&out.join("partition.tsv"))?;
    write_masks(p.graph.masks().expect("split applied"), &out.join("masks.tsv"))?;
    if cfg.dataset.sbm.is_some() {
        save_graph(&p.graph, &out.join("graph"))?;
    }
    let sizes: Vec<usize> = p.partition.members().iter().map(Vec::len).collect();
    log::info!("{} nodes in {} clients, sizes {sizes:?}", p.graph.num_nodes(), sizes.len());
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    match cfg.train.precision {
        Precision::F64 => train_with::<f64>(cfg, out),
        Precision::F32 => train_with::<f32>(cfg, out),
    }
}

fn train_with<S: Scalar>(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    create_dir(out)?;
    let p = prepare_data::<S>(cfg)?;
    let mut results = Vec::new();
    for &method in &cfg.train.methods {
        log::info!("training {method} over seeds {:?}", cfg.seeds);
        let runs = run_seeds(&cfg.train_config(method), &p.graph, &p.partition, &cfg.seeds)?;
        for run in &runs {
            let dir = out.join(method.as_str()).join(format!("seed{}", run.seed));
            write_run_artifacts(run, &p, &dir, cfg.train.save_client_checkpoints)?;
        }
        results.extend(runs);
    }
    let rows: Vec<_> = results.iter().flat_map(|r| r.rounds.iter().cloned()).collect();
    write_metrics(&rows, &out.join("metrics.csv"))?;
    let summary = summarize(&results);
    write_summary(&summary, &out.join("summary.json"))?;
    for s in &summary {
        log::info!(
            "{}: final test {:.4} ± {:.4}, best-val test {:.4} ± {:.4}",
            s.method,
            s.final_test.mean,
            s.final_test.std,
            s.best_val_test.mean,
            s.best_val_test.std
        );
    }
    Ok(())
}

/// Logits on every client's own nodes (the aggregated model when there is
/// one, otherwise each client's model) plus checkpoints.
fn write_run_artifacts<S: Scalar>(
    run: &RunResult<S>,
    p: &Prepared<S>,
    dir: &Path,
    save_clients: bool,
) -> anyhow::Result<()> {
    create_dir(dir)?;
    let parts: Vec<(Graph<S>, Vec<usize>)> = if run.method == Method::Global {
        vec![(p.graph.clone(), (0..p.graph.num_nodes()).collect())]
    } else {
        client_subgraphs(&p.graph, &p.partition)?
            .into_iter()
            .map(|s| (s.graph, s.original_ids))
            .collect()
    };
    let (mut data, mut labels, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    let mut classes = 0;
    for (m, (g, orig)) in parts.iter().enumerate() {
        let model = run.global.as_ref().unwrap_or(&run.client_models[m]);
        let (_, z) = model.forward(g)?;
        classes = z.cols();
        data.extend_from_slice(z.data());
        labels.extend_from_slice(g.labels());
        ids.extend_from_slice(orig);
    }
    let logits = Tensor::new(ids.len(), classes, data)?;
    write_logits(&logits, &labels, &ids, &dir.join("logits.csv"))?;
    if let Some(g) = &run.global {
        save_checkpoint(g, &dir.join("global.ckpt"))?;
    }
    if save_clients || run.global.is_none() {
        for (m, model) in run.client_models.iter().enumerate() {
            save_checkpoint(model, &dir.join(format!("client{m}.ckpt")))?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    tau: f64,
    omega: f64,
    lambda_c: f64,
    lambda_d: f64,
    lr: f64,
    method: Method,
    final_mean: f64,
    final_std: f64,
    best_val_mean: f64,
    best_val_std: f64,
}

/// Cartesian product of the sweep lists; unset axes keep the base value.
pub fn sweep_grid(cfg: &ExperimentConfig) -> anyhow::Result<Vec<[f64; 5]>> {
    let s = &cfg.sweep;
    let axes = [&s.tau, &s.omega, &s.lambda_c, &s.lambda_d, &s.lr];
    if axes.iter().all(|a| a.is_empty()) {
        return Err(config_err("sweep grid is empty"));
    }
    let base = [cfg.loss.tau, cfg.loss.omega, cfg.loss.lambda_c, cfg.loss.lambda_d, cfg.train.lr];
    let mut cells = vec![base];
    for (k, axis) in axes.iter().enumerate() {
        if axis.is_empty() {
            continue;
        }
        cells = cells
            .iter()
            .flat_map(|c| {
                axis.iter().map(move |&v| {
                    let mut c = *c;
                    c[k] = v;
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    create_dir(out)?;
    let cells = sweep_grid(cfg)?;
    let p = prepare_data::<f64>(cfg)?;
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for (i, cell) in cells.iter().enumerate() {
        let [tau, omega, lambda_c, lambda_d, lr] = *cell;
        let mut c = cfg.clone();
        (c.loss.tau, c.loss.omega, c.loss.lambda_c, c.loss.lambda_d, c.train.lr) = (tau, omega, lambda_c, lambda_d, lr);
        c.validate()?;
        log::info!("sweep cell {}/{}: tau {tau} omega {omega} lambda_c {lambda_c} lambda_d {lambda_d} lr {lr}", i + 1, cells.len());
        for &method in &c.train.methods {
            let s = summary_of(&c.train_config(method), &p, &c.seeds)?;
            w.serialize(SweepRow {
                tau,
                omega,
                lambda_c,
                lambda_d,
                lr,
                method,
                final_mean: s.final_test.mean,
                final_std: s.final_test.std,
                best_val_mean: s.best_val_test.mean,
                best_val_std: s.best_val_test.std,
            })?;
            w.flush().with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn summary_of(config: &TrainConfig, p: &Prepared<f64>, seeds: &[u64]) -> anyhow::Result<MethodSummary> {
    let runs = run_seeds(config, &p.graph, &p.partition, seeds)?;
    Ok(summarize(&runs).remove(0))
}

#[derive(Debug, Serialize)]
struct AblationRow {
    study: &'static str,
    variant: String,
    final_mean: f64,
    final_std: f64,
    best_val_mean: f64,
    best_val_std: f64,
}

/// The named variants of both ablation studies, in output order.
pub fn ablation_variants(cfg: &ExperimentConfig) -> Vec<(&'static str, String, TrainConfig)> {
    let base = cfg.train_config(Method::Fgssl);
    let mut out = Vec::new();
    for (fnsc, fgsd) in [(false, false), (true, false), (false, true), (true, true)] {
        let mut c = base.clone();
        if !fnsc {
            c.fnsc.lambda = 0.0;
        }
        if !fgsd {
            c.fgsd.lambda = 0.0;
        }
        let name = format!("fnsc={},fgsd={}", on_off(fnsc), on_off(fgsd));
        out.push(("components", name, c));
    }
    let pair = base.augment;
    let strength = |strong: bool| if strong { pair.strong } else { pair.weak };
    for (local, global) in [(true, false), (false, false), (false, true), (true, true)] {
        let mut c = base.clone();
        c.fgsd.lambda = 0.0;
        c.augment = AugmentPair {
            strong: strength(local),
            weak: strength(global),
        };
        let name = format!("local={},global={}", level(local), level(global));
        out.push(("augmentation", name, c));
    }
    out
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn level(strong: bool) -> &'static str {
    if strong {
        "strong"
    } else {
        "weak"
    }
}

pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    create_dir(out)?;
    let p = prepare_data::<f64>(cfg)?;
    let path = out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for (study, variant, config) in ablation_variants(cfg) {
        log::info!("ablation {study}: {variant}");
        let s = summary_of(&config, &p, &cfg.seeds)?;
        w.serialize(AblationRow {
            study,
            variant,
            final_mean: s.final_test.mean,
            final_std: s.final_test.std,
            best_val_mean: s.best_val_test.mean,
            best_val_std: s.best_val_test.std,
        })?;
        w.flush().with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Pairwise CKA of the configured checkpoints on the test nodes of the full graph.
pub fn cmd_cka(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    match cfg.train.precision {
        Precision::F64 => cka_with::<f64>(cfg, out),
        Precision::F32 => cka_with::<f32>(cfg, out),
    }
}

fn cka_with<S: Scalar>(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    if cfg.cka.checkpoints.len() < 2 {
        return Err(config_err("cka.checkpoints needs at least two entries"));
    }
    create_dir(out)?;
    let p = prepare_data::<S>(cfg)?;
    let models = cfg
        .cka
        .checkpoints
        .iter()
        .map(|path: &PathBuf| load_checkpoint::<S>(path))
        .collect::<Result<Vec<GnnModel<S>>, _>>()?;
    let test = p.graph.masks().expect("split applied").test.clone();
    let report = pairwise_client_cka(&models, &p.graph, &test)?;
    write_cka(&report, &out.join("cka.csv"))?;
    log::info!("mean off-diagonal CKA {:.4}", report.mean_off_diagonal());
    Ok(())
}
