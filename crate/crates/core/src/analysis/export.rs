use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::federation::{MethodSummary, RoundReport};
use crate::scalar::Scalar;

use super::cka::CkaReport;

/// Standard deviations in summaries divide by the number of seeds.
pub const STD_CONVENTION: &str = "population";

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            what: "csv",
            detail: format!("{}: {other:?}", path.display()),
        },
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// `metrics.csv`: one row per round, seed and method.
pub fn write_metrics(rows: &[RoundReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record([
            "seed", "round", "method", "loss_ce", "loss_fnsc", "loss_fgsd", "loss_total", "val_acc", "test_acc",
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<RoundReport>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub std: String,
    pub methods: Vec<MethodSummary>,
}

pub fn write_summary(methods: &[MethodSummary], path: &Path) -> Result<()> {
    let file = SummaryFile {
        std: STD_CONVENTION.into(),
        methods: methods.to_vec(),
    };
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &file).map_err(|e| Error::Format {
        what: "summary",
        detail: e.to_string(),
    })?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<SummaryFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "summary",
        detail: e.to_string(),
    })
}

/// `logits.csv`: `node_id,class_0..class_{C-1},label`.
pub fn write_logits<S: Scalar>(logits: &Tensor<S>, labels: &[usize], node_ids: &[usize], path: &Path) -> Result<()> {
    if labels.len() != logits.rows() || node_ids.len() != logits.rows() {
        return Err(Error::Shape {
            op: "write_logits",
            detail: format!("{} rows, {} labels, {} ids", logits.rows(), labels.len(), node_ids.len()),
        });
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["node_id".to_string()];
    header.extend((0..logits.cols()).map(|c| format!("class_{c}")));
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..logits.rows() {
        let mut rec = vec![node_ids[i].to_string()];
        rec.extend(logits.row(i).iter().map(|v| v.to_string()));
        rec.push(labels[i].to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `cka.csv`: an `M x M` matrix with a `client_k` header.
pub fn write_cka(report: &CkaReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record((0..report.size()).map(|k| format!("client_{k}")))
        .map_err(|e| csv_err(path, e))?;
    for row in &report.matrix {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_cka(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Format {
                    what: "cka",
                    detail: format!("bad value {t:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}
