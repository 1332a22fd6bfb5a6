use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Graph, NodeRole, SplitMasks};

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::load(path, format!("cannot read file: {e}")))
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Loads a dataset directory (`meta.json`, `edges.tsv`, `features.csv`,
/// `labels.tsv`, optional `masks.tsv`).
pub fn load_graph<S: Scalar>(dir: &Path) -> Result<Graph<S>> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(&read(&meta_path)?)
        .map_err(|e| Error::load(&meta_path, format!("invalid meta: {e}")))?;
    let n = meta.num_nodes;

    let feat_path = dir.join("features.csv");
    let text = read(&feat_path)?;
    let mut feats = Vec::with_capacity(n * meta.num_features);
    let mut rows = 0;
    for (ln, line) in lines(&text) {
        let before = feats.len();
        for tok in line.split(',') {
            let v: S = tok
                .trim()
                .parse()
                .map_err(|_| Error::load(&feat_path, format!("line {ln}: bad value {tok:?}")))?;
            feats.push(v);
        }
        if feats.len() - before != meta.num_features {
            return Err(Error::load(
                &feat_path,
                format!(
                    "line {ln}: {} values, expected {}",
                    feats.len() - before,
                    meta.num_features
                ),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::load(&feat_path, format!("{rows} feature rows, meta says {n}")));
    }

    let label_path = dir.join("labels.tsv");
    let text = read(&label_path)?;
    let mut labels = Vec::with_capacity(n);
    for (ln, line) in lines(&text) {
        let c: usize = line
            .parse()
            .map_err(|_| Error::load(&label_path, format!("line {ln}: bad label {line:?}")))?;
        if c >= meta.num_classes {
            return Err(Error::load(
                &label_path,
                format!("line {ln}: label {c} outside [0, {})", meta.num_classes),
            ));
        }
        labels.push(c);
    }
    if labels.len() != n {
        return Err(Error::load(
            &label_path,
            format!("{} labels but {rows} feature rows", labels.len()),
        ));
    }

    let edge_path = dir.join("edges.tsv");
    let text = read(&edge_path)?;
    let mut edges = Vec::new();
    for (ln, line) in lines(&text) {
        let mut it = line.split('\t');
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::load(&edge_path, format!("line {ln}: expected \"src\\tdst\"")));
        };
        let parse = |s: &str| -> Result<usize> {
            let v: usize = s
                .trim()
                .parse()
                .map_err(|_| Error::load(&edge_path, format!("line {ln}: bad node id {s:?}")))?;
            if v >= n {
                return Err(Error::load(
                    &edge_path,
                    format!("line {ln}: node id {v} out of range for {n} nodes"),
                ));
            }
            Ok(v)
        };
        edges.push((parse(a)?, parse(b)?));
    }

    let features = Tensor::new(n, meta.num_features, feats)?;
    let graph = Graph::new(features, edges, labels, meta.num_classes)?;
    let mask_path = dir.join("masks.tsv");
    if mask_path.exists() {
        let masks = read_masks(&mask_path, n)?;
        graph.with_masks(masks)
    } else {
        Ok(graph)
    }
}

/// Writes a graph in the directory format read by [`load_graph`].
pub fn save_graph<S: Scalar>(graph: &Graph<S>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        num_nodes: graph.num_nodes(),
        num_features: graph.feature_dim(),
        num_classes: graph.num_classes(),
    };
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };
    write("meta.json", serde_json::to_string(&meta).expect("plain struct") + "\n")?;

    let mut s = String::new();
    for &(a, b) in graph.edges() {
        writeln!(s, "{a}\t{b}").unwrap();
    }
    write("edges.tsv", s)?;

    let mut s = String::new();
    for i in 0..graph.num_nodes() {
        for (k, v) in graph.features().row(i).iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            // Display prints the shortest representation that parses back exactly.
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    write("features.csv", s)?;

    let mut s = String::new();
    for c in graph.labels() {
        writeln!(s, "{c}").unwrap();
    }
    write("labels.tsv", s)?;

    if let Some(m) = graph.masks() {
        write_masks(m, &dir.join("masks.tsv"))?;
    }
    Ok(())
}

/// Reads `node\t{train|val|test}` lines.
pub fn read_masks(path: &Path, num_nodes: usize) -> Result<SplitMasks> {
    let text = read(path)?;
    let mut roles = vec![None; num_nodes];
    for (ln, line) in lines(&text) {
        let mut it = line.split('\t');
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::load(path, format!("line {ln}: expected \"node\\trole\"")));
        };
        let node: usize = a
            .trim()
            .parse()
            .map_err(|_| Error::load(path, format!("line {ln}: bad node id {a:?}")))?;
        if node >= num_nodes {
            return Err(Error::load(
                path,
                format!("line {ln}: node id {node} out of range for {num_nodes} nodes"),
            ));
        }
        let role = NodeRole::parse(b.trim())
            .ok_or_else(|| Error::load(path, format!("line {ln}: unknown role {b:?}")))?;
        if roles[node].replace(role).is_some() {
            return Err(Error::load(path, format!("line {ln}: node {node} listed twice")));
        }
    }
    Ok(SplitMasks::from_roles(&roles))
}

pub fn write_masks(masks: &SplitMasks, path: &Path) -> Result<()> {
    let mut rows: Vec<(usize, NodeRole)> = Vec::new();
    for role in [NodeRole::Train, NodeRole::Val, NodeRole::Test] {
        rows.extend(masks.get(role).iter().map(|&i| (i, role)));
    }
    rows.sort_unstable_by_key(|r| r.0);
    let mut s = String::new();
    for (i, r) in rows {
        writeln!(s, "{i}\t{}", r.as_str()).unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
