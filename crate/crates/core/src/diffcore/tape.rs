use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Segment membership for the rows of a tensor: row `e` belongs to segment `ids[e]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    ids: Vec<usize>,
    count: usize,
}

impl Segments {
    pub fn new(ids: Vec<usize>, count: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&s| s >= count) {
            return Err(Error::InvalidArgument(format!(
                "segment id {bad} out of range for {count} segments"
            )));
        }
        Ok(Self { ids, count })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One query row of a supervised contrast: column indices of its positive and
/// negative keys in the logit matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastRow {
    pub row: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    LeakyRelu(Var, S),
    Elu(Var),
    Exp(Var),
    Log(Var),
    RowSoftmax(Var),
    RowLogSoftmax(Var),
    SegmentSoftmax(Var, Arc<Segments>),
    SegmentLogSoftmax(Var, Arc<Segments>),
    SegmentSum(Var, Arc<Segments>),
    RowScale(Var, Var),
    MessagePass(Var, Var, Arc<[usize]>, Arc<Segments>),
    RowL2Normalize(Var, S),
    RowDot(Var, Var),
    Sum(Var),
    Mean(Var),
    Pick(Var, Arc<[(usize, usize)]>),
    PairContrast(Var, Arc<[ContrastRow]>),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Gradients of the trainable leaves, produced by [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: Var) -> Option<&Tensor<S>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

/// Records a computation for reverse-mode differentiation.
///
/// The tape is append-only and single-owner; every recorded value is checked
/// for non-finite entries as soon as it is produced.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    consumed: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn check_finite<S: Scalar>(op: &str, data: &[S]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op: op.to_string() })
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Result<Var> {
        check_finite("param", value.data())?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Result<Var> {
        check_finite("constant", value.data())?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, name: &'static str, rows: usize, cols: usize, data: Vec<S>, op: Op<S>) -> Result<Var> {
        check_finite(name, &data)?;
        let requires_grad = self.op_requires_grad(&op);
        let value = Tensor::new(rows, cols, data)?;
        Ok(self.push(value, op, requires_grad))
    }

    fn op_requires_grad(&self, op: &Op<S>) -> bool {
        let g = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => g(a) || g(b),
            Op::RowScale(a, b) | Op::RowDot(a, b) | Op::MessagePass(a, b, _, _) => g(a) || g(b),
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.iter().any(g),
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::GatherRows(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Elu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::RowSoftmax(a)
            | Op::RowLogSoftmax(a)
            | Op::SegmentSoftmax(a, _)
            | Op::SegmentLogSoftmax(a, _)
            | Op::SegmentSum(a, _)
            | Op::RowL2Normalize(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Pick(a, _)
            | Op::PairContrast(a, _) => g(a),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<[usize; 2]> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    fn zip_map(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var> {
        let [r, c] = self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.record(name, r, c, data, op)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Result<Var> {
        let [r, c] = self.value(a).shape();
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.record(name, r, c, data, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ([n, k], [k2, m]) = (self.value(a).shape(), self.value(b).shape());
        if k != k2 {
            return Err(shape_err("matmul", format!("[{n}, {k}] x [{k2}, {m}]")));
        }
        let mut out = vec![S::zero(); n * m];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        self.record("matmul", n, m, out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose();
        let [r, c] = t.shape();
        self.record("transpose", r, c, t.to_vec(), Op::Transpose(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_rows", "no inputs".into()))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", format!("{} vs {cols} columns", t.cols())));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.record("concat_rows", rows, cols, data, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", format!("{} vs {rows} rows", t.rows())));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        self.record("concat_cols", rows, cols, data, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("row {bad} of {rows}")));
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(t.row(i));
        }
        let n = index.len();
        self.record("gather_rows", n, cols, data, Op::GatherRows(a, index))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Result<Var> {
        self.unary(
            "leaky_relu",
            a,
            |x| if x > S::zero() { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(
            "elu",
            a,
            |x| if x > S::zero() { x } else { x.exp_m1() },
            Op::Elu(a),
        )
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, S::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= S::zero()) {
            return Err(Error::NonFinite {
                op: "log of non-positive value".into(),
            });
        }
        self.unary("log", a, S::ln, Op::Log(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let [r, c] = t.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(softmax(t.row(i)));
        }
        self.record("row_softmax", r, c, data, Op::RowSoftmax(a))
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let [r, c] = t.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(log_softmax(t.row(i)));
        }
        self.record("row_log_softmax", r, c, data, Op::RowLogSoftmax(a))
    }

    fn segment_input(&self, op: &'static str, a: Var, seg: &Segments) -> Result<()> {
        let t = self.value(a);
        if t.cols() != 1 || t.rows() != seg.len() {
            return Err(shape_err(
                op,
                format!("values {:?} with {} segment ids", t.shape(), seg.len()),
            ));
        }
        Ok(())
    }

    /// Softmax within each segment of a column vector.
    pub fn segment_softmax(&mut self, a: Var, seg: Arc<Segments>) -> Result<Var> {
        self.segment_input("segment_softmax", a, &seg)?;
        let data = segment_softmax(self.value(a).data(), &seg);
        let n = data.len();
        self.record("segment_softmax", n, 1, data, Op::SegmentSoftmax(a, seg))
    }

    pub fn segment_log_softmax(&mut self, a: Var, seg: Arc<Segments>) -> Result<Var> {
        self.segment_input("segment_log_softmax", a, &seg)?;
        let data = segment_log_softmax(self.value(a).data(), &seg);
        let n = data.len();
        self.record("segment_log_softmax", n, 1, data, Op::SegmentLogSoftmax(a, seg))
    }

    /// Sums the rows of `a` into `seg.count()` output rows.
    pub fn segment_sum(&mut self, a: Var, seg: Arc<Segments>) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != seg.len() {
            return Err(shape_err(
                "segment_sum",
                format!("{} rows with {} segment ids", t.rows(), seg.len()),
            ));
        }
        let c = t.cols();
        let mut out = vec![S::zero(); seg.count() * c];
        for (e, &s) in seg.ids().iter().enumerate() {
            for (o, &x) in out[s * c..(s + 1) * c].iter_mut().zip(t.row(e)) {
                *o = *o + x;
            }
        }
        let n = seg.count();
        self.record("segment_sum", n, c, out, Op::SegmentSum(a, seg))
    }

    /// Multiplies row `i` of `a` by the scalar `w[i]` (`w` is a column vector).
    pub fn row_scale(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ta, tw) = (self.value(a), self.value(w));
        if tw.cols() != 1 || tw.rows() != ta.rows() {
            return Err(shape_err("row_scale", format!("{:?} by {:?}", ta.shape(), tw.shape())));
        }
        let [r, c] = ta.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let s = tw.data()[i];
            data.extend(ta.row(i).iter().map(|&x| x * s));
        }
        self.record("row_scale", r, c, data, Op::RowScale(a, w))
    }

    /// Weighted message aggregation: output row `s` is the sum of
    /// `w[e] * x[src[e]]` over the entries `e` of segment `s`.
    ///
    /// Equivalent to `segment_sum(row_scale(gather_rows(x, src), w), seg)`
    /// without materialising the per-message rows.
    pub fn message_pass(&mut self, x: Var, w: Var, src: Arc<[usize]>, seg: Arc<Segments>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tw.cols() != 1 || tw.rows() != seg.len() || src.len() != seg.len() {
            return Err(shape_err(
                "message_pass",
                format!("weights {:?}, {} sources, {} segment ids", tw.shape(), src.len(), seg.len()),
            ));
        }
        let [n, c] = tx.shape();
        if let Some(&bad) = src.iter().find(|&&j| j >= n) {
            return Err(shape_err("message_pass", format!("source row {bad} of {n}")));
        }
        let mut out = vec![S::zero(); seg.count() * c];
        for ((&j, &s), &a) in src.iter().zip(seg.ids()).zip(tw.data()) {
            for (o, &v) in out[s * c..(s + 1) * c].iter_mut().zip(tx.row(j)) {
                *o = *o + a * v;
            }
        }
        let rows = seg.count();
        self.record("message_pass", rows, c, out, Op::MessagePass(x, w, src, seg))
    }

    /// `x / max(|x|, eps)` per row.
    pub fn row_l2_normalize(&mut self, a: Var, eps: S) -> Result<Var> {
        let t = self.value(a);
        let [r, c] = t.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = t.row(i);
            let norm = l2(row).max(eps);
            data.extend(row.iter().map(|&x| x / norm));
        }
        self.record("row_l2_normalize", r, c, data, Op::RowL2Normalize(a, eps))
    }

    /// Row-wise inner product, giving an `n x 1` column.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let [r, _] = self.same_shape("dot", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = (0..r)
            .map(|i| ta.row(i).iter().zip(tb.row(i)).map(|(&x, &y)| x * y).sum())
            .collect();
        self.record("dot", r, 1, data, Op::RowDot(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.record("sum", 1, 1, vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let s: S = t.data().iter().copied().sum();
        let m = s / S::of(t.len() as f64);
        self.record("mean", 1, 1, vec![m], Op::Mean(a))
    }

    /// Selects entries `(row, col)` into an `k x 1` column.
    pub fn pick(&mut self, a: Var, at: Arc<[(usize, usize)]>) -> Result<Var> {
        let t = self.value(a);
        let [r, c] = t.shape();
        if let Some(&(i, j)) = at.iter().find(|&&(i, j)| i >= r || j >= c) {
            return Err(shape_err("pick", format!("({i}, {j}) in [{r}, {c}]")));
        }
        let data = at.iter().map(|&(i, j)| t.get(i, j)).collect();
        let n = at.len();
        self.record("pick", n, 1, data, Op::Pick(a, at))
    }

    /// Supervised contrast over a logit matrix.
    ///
    /// For every row `i` and positive column `p`, the term is
    /// `-log(exp(l_ip) / (exp(l_ip) + sum_k exp(l_ik)))` over the negative
    /// columns `k`. Terms are averaged over positives, then over rows.
    pub fn pair_contrast(&mut self, logits: Var, rows: Arc<[ContrastRow]>) -> Result<Var> {
        let t = self.value(logits);
        let [r, c] = t.shape();
        if rows.is_empty() {
            return Err(shape_err("pair_contrast", "no query rows".into()));
        }
        for q in rows.iter() {
            if q.row >= r || q.positives.iter().chain(&q.negatives).any(|&j| j >= c) {
                return Err(shape_err("pair_contrast", format!("index outside [{r}, {c}]")));
            }
            if q.positives.is_empty() {
                return Err(Error::InvalidArgument(format!("query row {} has no positives", q.row)));
            }
        }
        let mut total = S::zero();
        for q in rows.iter() {
            let l = t.row(q.row);
            let st = ContrastStats::new(l, q);
            let mut acc = S::zero();
            for (&p, &d) in q.positives.iter().zip(&st.denoms) {
                acc = acc + (d.ln() + st.shift - l[p]);
            }
            total = total + acc / S::of(q.positives.len() as f64);
        }
        let v = total / S::of(rows.len() as f64);
        self.record("pair_contrast", 1, 1, vec![v], Op::PairContrast(logits, rows))
    }

    /// Reverse pass from a `1 x 1` root. A tape can be differentiated once.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<S>> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        if self.value(root).shape() != [1, 1] {
            return Err(shape_err(
                "backward",
                format!("root must be scalar, got {:?}", self.value(root).shape()),
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![S::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        let mut out = Vec::with_capacity(grads.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            let t = match g {
                Some(g) if node.requires_grad && matches!(node.op, Op::Leaf) => {
                    check_finite("backward", &g)?;
                    let [r, c] = node.value.shape();
                    Some(Tensor::new(r, c, g)?)
                }
                _ => None,
            };
            out.push(t);
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |v: Var| &self.nodes[v.0].value;
        // Returns the accumulator for `v`, or None if it needs no gradient.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].requires_grad {
                    let n = self.nodes[v.0].value.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); n]).as_mut_slice())
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ([n, k], [_, m]) = (val(*a).shape(), val(*b).shape());
                let (ad, bd) = (val(*a).data(), val(*b).data());
                if let Some(ga) = acc!(*a) {
                    matmul_bt_into(g, bd, ga, n, m, k);
                }
                if let Some(gb) = acc!(*b) {
                    matmul_at_into(ad, g, gb, n, k, m);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = acc!(v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc!(*b) {
                    for (o, &x) in gb.iter_mut().zip(g) {
                        *o = *o - x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                if let Some(ga) = acc!(*a) {
                    for ((o, &x), &w) in ga.iter_mut().zip(g).zip(bd) {
                        *o = *o + x * w;
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for ((o, &x), &w) in gb.iter_mut().zip(g).zip(ad) {
                        *o = *o + x * w;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = acc!(*a) {
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o = *o + x * *c;
                    }
                }
            }
            Op::Transpose(a) => {
                let [r, c] = node.value.shape();
                if let Some(ga) = acc!(*a) {
                    // node is r x c, input is c x r
                    for p in 0..r {
                        for q in 0..c {
                            ga[q * r + p] = ga[q * r + p] + g[p * c + q];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if let Some(gp) = acc!(p) {
                        add_into(gp, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let [rows, cols] = node.value.shape();
                let mut col0 = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    if let Some(gp) = acc!(p) {
                        for r in 0..rows {
                            let src = &g[r * cols + col0..r * cols + col0 + pc];
                            add_into(&mut gp[r * pc..(r + 1) * pc], src);
                        }
                    }
                    col0 += pc;
                }
            }
            Op::GatherRows(a, index) => {
                let c = val(*a).cols();
                if let Some(ga) = acc!(*a) {
                    for (e, &row) in index.iter().enumerate() {
                        add_into(&mut ga[row * c..(row + 1) * c], &g[e * c..(e + 1) * c]);
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(*a).data();
                if let Some(ga) = acc!(*a) {
                    for ((o, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                        *o = *o + if xi > S::zero() { gi } else { gi * *slope };
                    }
                }
            }
            Op::Elu(a) => {
                let x = val(*a).data();
                if let Some(ga) = acc!(*a) {
                    for (((o, &gi), &xi), &yi) in ga.iter_mut().zip(g).zip(x).zip(y) {
                        *o = *o + if xi > S::zero() { gi } else { gi * (yi + S::one()) };
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = acc!(*a) {
                    for ((o, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                        *o = *o + gi * yi;
                    }
                }
            }
            Op::Log(a) => {
                let x = val(*a).data();
                if let Some(ga) = acc!(*a) {
                    for ((o, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                        *o = *o + gi / xi;
                    }
                }
            }
            Op::RowSoftmax(a) => {
                let c = node.value.cols();
                if let Some(ga) = acc!(*a) {
                    for ((gr, yr), out) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let s: S = gr.iter().zip(yr).map(|(&p, &q)| p * q).sum();
                        for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                            *o = *o + yi * (gi - s);
                        }
                    }
                }
            }
            Op::RowLogSoftmax(a) => {
                let c = node.value.cols();
                if let Some(ga) = acc!(*a) {
                    for ((gr, yr), out) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let s: S = gr.iter().copied().sum();
                        for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                            *o = *o + gi - yi.exp() * s;
                        }
                    }
                }
            }
            Op::SegmentSoftmax(a, seg) => {
                if let Some(ga) = acc!(*a) {
                    let mut dots = vec![S::zero(); seg.count()];
                    for (e, &s) in seg.ids().iter().enumerate() {
                        dots[s] = dots[s] + g[e] * y[e];
                    }
                    for (e, &s) in seg.ids().iter().enumerate() {
                        ga[e] = ga[e] + y[e] * (g[e] - dots[s]);
                    }
                }
            }
            Op::SegmentLogSoftmax(a, seg) => {
                if let Some(ga) = acc!(*a) {
                    let mut sums = vec![S::zero(); seg.count()];
                    for (e, &s) in seg.ids().iter().enumerate() {
                        sums[s] = sums[s] + g[e];
                    }
                    for (e, &s) in seg.ids().iter().enumerate() {
                        ga[e] = ga[e] + g[e] - y[e].exp() * sums[s];
                    }
                }
            }
            Op::SegmentSum(a, seg) => {
                let c = val(*a).cols();
                if let Some(ga) = acc!(*a) {
                    for (e, &s) in seg.ids().iter().enumerate() {
                        add_into(&mut ga[e * c..(e + 1) * c], &g[s * c..(s + 1) * c]);
                    }
                }
            }
            Op::MessagePass(x, w, src, seg) => {
                let c = val(*x).cols();
                let (xd, wd) = (val(*x).data(), val(*w).data());
                if let Some(gx) = acc!(*x) {
                    for ((&j, &s), &a) in src.iter().zip(seg.ids()).zip(wd) {
                        for (o, &gi) in gx[j * c..(j + 1) * c].iter_mut().zip(&g[s * c..(s + 1) * c]) {
                            *o = *o + a * gi;
                        }
                    }
                }
                if let Some(gw) = acc!(*w) {
                    for (e, (&j, &s)) in src.iter().zip(seg.ids()).enumerate() {
                        let d: S = g[s * c..(s + 1) * c]
                            .iter()
                            .zip(&xd[j * c..(j + 1) * c])
                            .map(|(&p, &q)| p * q)
                            .sum();
                        gw[e] = gw[e] + d;
                    }
                }
            }
            Op::RowScale(a, w) => {
                let c = val(*a).cols();
                let (ad, wd) = (val(*a).data(), val(*w).data());
                if let Some(ga) = acc!(*a) {
                    for (r, &s) in wd.iter().enumerate() {
                        for (o, &gi) in ga[r * c..(r + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                            *o = *o + gi * s;
                        }
                    }
                }
                if let Some(gw) = acc!(*w) {
                    for (r, o) in gw.iter_mut().enumerate() {
                        let d: S = g[r * c..(r + 1) * c]
                            .iter()
                            .zip(&ad[r * c..(r + 1) * c])
                            .map(|(&p, &q)| p * q)
                            .sum();
                        *o = *o + d;
                    }
                }
            }
            Op::RowL2Normalize(a, eps) => {
                let c = node.value.cols();
                let x = val(*a).data();
                if let Some(ga) = acc!(*a) {
                    for r in 0..node.value.rows() {
                        let xr = &x[r * c..(r + 1) * c];
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let norm = l2(xr);
                        let out = &mut ga[r * c..(r + 1) * c];
                        if norm > *eps {
                            let yg: S = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                            for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                                *o = *o + (gi - yi * yg) / norm;
                            }
                        } else {
                            for (o, &gi) in out.iter_mut().zip(gr) {
                                *o = *o + gi / *eps;
                            }
                        }
                    }
                }
            }
            Op::RowDot(a, b) => {
                let c = val(*a).cols();
                let (ad, bd) = (val(*a).data(), val(*b).data());
                for (v, other) in [(*a, bd), (*b, ad)] {
                    if let Some(gv) = acc!(v) {
                        for (r, &gi) in g.iter().enumerate() {
                            for (o, &w) in gv[r * c..(r + 1) * c].iter_mut().zip(&other[r * c..(r + 1) * c]) {
                                *o = *o + gi * w;
                            }
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = acc!(*a) {
                    for o in ga.iter_mut() {
                        *o = *o + g[0];
                    }
                }
            }
            Op::Mean(a) => {
                let n = S::of(val(*a).len() as f64);
                if let Some(ga) = acc!(*a) {
                    for o in ga.iter_mut() {
                        *o = *o + g[0] / n;
                    }
                }
            }
            Op::Pick(a, at) => {
                let c = val(*a).cols();
                if let Some(ga) = acc!(*a) {
                    for (e, &(r, col)) in at.iter().enumerate() {
                        ga[r * c + col] = ga[r * c + col] + g[e];
                    }
                }
            }
            Op::PairContrast(a, rows) => {
                let t = val(*a).clone();
                let c = t.cols();
                if let Some(ga) = acc!(*a) {
                    let per_row = g[0] / S::of(rows.len() as f64);
                    for q in rows.iter() {
                        let l = t.row(q.row);
                        let st = ContrastStats::new(l, q);
                        let w = per_row / S::of(q.positives.len() as f64);
                        let out = &mut ga[q.row * c..(q.row + 1) * c];
                        let mut inv_sum = S::zero();
                        for (&p, &d) in q.positives.iter().zip(&st.denoms) {
                            out[p] = out[p] + w * ((l[p] - st.shift).exp() / d - S::one());
                            inv_sum = inv_sum + d.recip();
                        }
                        for &k in &q.negatives {
                            out[k] = out[k] + w * (l[k] - st.shift).exp() * inv_sum;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Shifted denominators of one contrast row: `denoms[j] = exp(l_pj - shift) + sum_k exp(l_k - shift)`.
struct ContrastStats<S> {
    shift: S,
    denoms: Vec<S>,
}

impl<S: Scalar> ContrastStats<S> {
    fn new(l: &[S], q: &ContrastRow) -> Self {
        let shift = q
            .positives
            .iter()
            .chain(&q.negatives)
            .map(|&j| l[j])
            .fold(S::neg_infinity(), S::max);
        let neg: S = q.negatives.iter().map(|&k| (l[k] - shift).exp()).sum();
        let denoms = q.positives.iter().map(|&p| (l[p] - shift).exp() + neg).collect();
        Self { shift, denoms }
    }
}

fn add_into<S: Scalar>(out: &mut [S], g: &[S]) {
    for (o, &x) in out.iter_mut().zip(g) {
        *o = *o + x;
    }
}

pub(crate) fn l2<S: Scalar>(row: &[S]) -> S {
    row.iter().map(|&x| x * x).sum::<S>().sqrt()
}

pub(crate) fn softmax<S: Scalar>(row: &[S]) -> Vec<S> {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = row.iter().map(|&x| (x - m).exp()).collect();
    let s: S = e.iter().copied().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub(crate) fn log_softmax<S: Scalar>(row: &[S]) -> Vec<S> {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let ls = row.iter().map(|&x| (x - m).exp()).sum::<S>().ln();
    row.iter().map(|&x| (x - m) - ls).collect()
}

fn segment_max<S: Scalar>(x: &[S], seg: &Segments) -> Vec<S> {
    let mut m = vec![S::neg_infinity(); seg.count()];
    for (&v, &s) in x.iter().zip(seg.ids()) {
        m[s] = m[s].max(v);
    }
    m
}

pub(crate) fn segment_softmax<S: Scalar>(x: &[S], seg: &Segments) -> Vec<S> {
    let m = segment_max(x, seg);
    let e: Vec<S> = x.iter().zip(seg.ids()).map(|(&v, &s)| (v - m[s]).exp()).collect();
    let mut sums = vec![S::zero(); seg.count()];
    for (&v, &s) in e.iter().zip(seg.ids()) {
        sums[s] = sums[s] + v;
    }
    e.iter().zip(seg.ids()).map(|(&v, &s)| v / sums[s]).collect()
}

pub(crate) fn segment_log_softmax<S: Scalar>(x: &[S], seg: &Segments) -> Vec<S> {
    let m = segment_max(x, seg);
    let mut sums = vec![S::zero(); seg.count()];
    for (&v, &s) in x.iter().zip(seg.ids()) {
        sums[s] = sums[s] + (v - m[s]).exp();
    }
    x.iter()
        .zip(seg.ids())
        .map(|(&v, &s)| v - m[s] - sums[s].ln())
        .collect()
}
