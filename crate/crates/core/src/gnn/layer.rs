use std::sync::Arc;

use crate::diffcore::{Segments, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Directed message list with one self-loop per node: for every node `i`,
/// messages `j -> i` for `j` in `{i} + neighbors(i)`. Entries are grouped by target.
#[derive(Clone, Debug)]
pub struct MessageIndex {
    pub(crate) src: Arc<[usize]>,
    pub(crate) dst: Arc<[usize]>,
    pub(crate) segments: Arc<Segments>,
}

impl MessageIndex {
    pub fn new<S: Scalar>(graph: &Graph<S>) -> Self {
        let n = graph.num_nodes();
        let mut src = Vec::with_capacity(n + 2 * graph.num_edges());
        let mut dst = Vec::with_capacity(src.capacity());
        for i in 0..n {
            src.push(i);
            dst.push(i);
            for &j in graph.neighbors(i).expect("in range") {
                src.push(j);
                dst.push(i);
            }
        }
        let segments = Segments::new(dst.clone(), n).expect("ids < n");
        Self {
            src: src.into(),
            dst: dst.into(),
            segments: Arc::new(segments),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.segments.count()
    }

    pub fn num_messages(&self) -> usize {
        self.src.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Identity,
}

/// How per-head outputs are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMerge {
    Concat,
    Mean,
}

/// Bound parameters of one attention head.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub weight: Var,
    pub attn: Var,
}

/// One attention head; returns the aggregated `n x d_out` messages and the
/// attention coefficients (one per message).
pub fn attention_head<S: Scalar>(
    tape: &mut Tape<S>,
    head: HeadVars,
    x: Var,
    index: &MessageIndex,
) -> Result<(Var, Var)> {
    let d_out = tape.value(head.weight).cols();
    if tape.value(head.attn).shape() != [2 * d_out, 1] {
        return Err(Error::Shape {
            op: "gat_layer",
            detail: format!(
                "attention vector {:?} for output width {d_out}",
                tape.value(head.attn).shape()
            ),
        });
    }
    let wh = tape.matmul(x, head.weight)?;
    let left: Arc<[usize]> = (0..d_out).collect();
    let right: Arc<[usize]> = (d_out..2 * d_out).collect();
    let a_center = tape.gather_rows(head.attn, left)?;
    let a_neighbor = tape.gather_rows(head.attn, right)?;
    let s_center = tape.matmul(wh, a_center)?;
    let s_neighbor = tape.matmul(wh, a_neighbor)?;
    let e_center = tape.gather_rows(s_center, index.dst.clone())?;
    let e_neighbor = tape.gather_rows(s_neighbor, index.src.clone())?;
    let e = tape.add(e_center, e_neighbor)?;
    let e = tape.leaky_relu(e, S::of(LEAKY_SLOPE))?;
    let alpha = tape.segment_softmax(e, index.segments.clone())?;
    let out = tape.message_pass(wh, alpha, index.src.clone(), index.segments.clone())?;
    Ok((out, alpha))
}

/// Multi-head GAT layer: `h'_i = act(merge_h sum_j alpha^h_ij W^h h_j)`.
pub fn gat_layer<S: Scalar>(
    tape: &mut Tape<S>,
    heads: &[HeadVars],
    x: Var,
    index: &MessageIndex,
    merge: HeadMerge,
    activation: Activation,
) -> Result<Var> {
    let in_dim = tape.value(x).cols();
    if tape.value(x).rows() != index.num_nodes() {
        return Err(Error::Shape {
            op: "gat_layer",
            detail: format!(
                "{} feature rows for {} nodes",
                tape.value(x).rows(),
                index.num_nodes()
            ),
        });
    }
    let mut outs = Vec::with_capacity(heads.len());
    for &h in heads {
        let w_in = tape.value(h.weight).rows();
        if w_in != in_dim {
            return Err(Error::Shape {
                op: "gat_layer",
                detail: format!("input width {in_dim}, weight expects {w_in}"),
            });
        }
        outs.push(attention_head(tape, h, x, index)?.0);
    }
    let merged = match (outs.len(), merge) {
        (0, _) => {
            return Err(Error::InvalidArgument("layer without heads".into()));
        }
        (1, _) => outs[0],
        (_, HeadMerge::Concat) => tape.concat_cols(&outs)?,
        (k, HeadMerge::Mean) => {
            let mut acc = outs[0];
            for &o in &outs[1..] {
                acc = tape.add(acc, o)?;
            }
            tape.scale(acc, S::of(1.0 / k as f64))?
        }
    };
    match activation {
        Activation::Elu => tape.elu(merged),
        Activation::Identity => Ok(merged),
    }
}
