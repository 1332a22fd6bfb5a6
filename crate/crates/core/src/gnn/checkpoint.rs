//! Plain-text checkpoint format.
//!
//! ```text
//! fgssl-checkpoint v1
//! spec <in_dim> <hidden> <num_classes> <heads>
//! block <name> <rows> <cols>
//! <row 0 values, space separated>
//! ...
//! ```
//! Values use the shortest decimal form that parses back to the same bits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::model::{GnnModel, ModelSpec};

const MAGIC: &str = "fgssl-checkpoint v1";

pub fn encode_checkpoint<S: Scalar>(model: &GnnModel<S>) -> String {
    let s = model.spec();
    let mut out = format!(
        "{MAGIC}\nspec {} {} {} {}\n",
        s.in_dim, s.hidden, s.num_classes, s.heads
    );
    for ((name, r, c), block) in s.blocks().iter().zip(model.blocks()) {
        writeln!(out, "block {name} {r} {c}").unwrap();
        for i in 0..*r {
            let row = block.row(i);
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn decode_checkpoint<S: Scalar>(text: &str) -> Result<GnnModel<S>> {
    let bad = |detail: String| Error::Format {
        what: "checkpoint",
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing header".into()));
    }
    let spec_line = lines.next().ok_or_else(|| bad("missing spec line".into()))?;
    let nums: Vec<usize> = spec_line
        .strip_prefix("spec ")
        .ok_or_else(|| bad(format!("bad spec line {spec_line:?}")))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad spec value {t:?}"))))
        .collect::<Result<_>>()?;
    let [in_dim, hidden, num_classes, heads] = nums[..] else {
        return Err(bad(format!("spec line needs 4 values: {spec_line:?}")));
    };
    let spec = ModelSpec {
        in_dim,
        hidden,
        num_classes,
        heads,
    };
    spec.validate()?;
    let mut blocks = Vec::new();
    for (name, r, c) in spec.blocks() {
        let header = lines.next().ok_or_else(|| bad(format!("missing block {name}")))?;
        if header != format!("block {name} {r} {c}") {
            return Err(bad(format!("expected block {name} {r} {c}, found {header:?}")));
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let line = lines.next().ok_or_else(|| bad(format!("{name}: missing row {i}")))?;
            let before = data.len();
            for t in line.split_whitespace() {
                data.push(t.parse::<S>().map_err(|_| bad(format!("{name}: bad value {t:?}")))?);
            }
            if data.len() - before != c {
                return Err(bad(format!("{name}: row {i} has {} values", data.len() - before)));
            }
        }
        blocks.push(Tensor::new(r, c, data)?);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing content".into()));
    }
    GnnModel::from_blocks(spec, blocks)
}

pub fn save_checkpoint<S: Scalar>(model: &GnnModel<S>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<GnnModel<S>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&text)
}
