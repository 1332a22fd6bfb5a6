use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

use super::layer::{gat_layer, Activation, HeadMerge, HeadVars, MessageIndex};

/// Architecture of the two-layer GAT.
///
/// The extractor concatenates `heads` heads of width `hidden / heads`, so its
/// output is always `hidden` wide; the classifier averages its heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub heads: usize,
}

impl ModelSpec {
    pub fn new(in_dim: usize, hidden: usize, num_classes: usize) -> Self {
        Self {
            in_dim,
            hidden,
            num_classes,
            heads: 1,
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "hidden width {} must be a positive multiple of the head count {}",
                self.hidden, self.heads
            )));
        }
        if self.in_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidArgument("empty input or output width".into()));
        }
        Ok(())
    }

    /// `(name, rows, cols)` of every parameter block in flattening order.
    pub fn blocks(&self) -> Vec<(String, usize, usize)> {
        let per_head = self.hidden / self.heads;
        let mut out = Vec::new();
        for h in 0..self.heads {
            out.push((format!("extractor.head{h}.weight"), self.in_dim, per_head));
            out.push((format!("extractor.head{h}.attn"), 2 * per_head, 1));
        }
        for h in 0..self.heads {
            out.push((format!("classifier.head{h}.weight"), self.hidden, self.num_classes));
            out.push((format!("classifier.head{h}.attn"), 2 * self.num_classes, 1));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, r, c)| r * c).sum()
    }
}

/// Two-layer GAT: extractor `G` (ELU output) and classifier head `F` (raw logits).
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel<S> {
    spec: ModelSpec,
    blocks: Vec<Tensor<S>>,
}

/// Parameters of a model bound to a tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    extractor: Vec<HeadVars>,
    classifier: Vec<HeadVars>,
    blocks: Vec<Var>,
}

impl ModelVars {
    /// Groups already-bound blocks (in flattening order) into heads.
    pub fn from_blocks(spec: &ModelSpec, blocks: Vec<Var>) -> Result<Self> {
        if blocks.len() != 4 * spec.heads {
            return Err(Error::Shape {
                op: "model vars",
                detail: format!("{} blocks for {} heads", blocks.len(), spec.heads),
            });
        }
        let heads = |part: &[Var]| {
            part.chunks(2)
                .map(|p| HeadVars {
                    weight: p[0],
                    attn: p[1],
                })
                .collect::<Vec<_>>()
        };
        let h = 2 * spec.heads;
        Ok(Self {
            extractor: heads(&blocks[..h]),
            classifier: heads(&blocks[h..]),
            blocks,
        })
    }

    /// Bound blocks in flattening order.
    pub fn blocks(&self) -> &[Var] {
        &self.blocks
    }
}

/// Output of a full forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub embeddings: Var,
    pub logits: Var,
}

impl<S: Scalar> GnnModel<S> {
    /// Glorot-uniform initialisation, deterministic per seed.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(Stream::Init, &[seed]);
        let blocks = spec
            .blocks()
            .into_iter()
            .map(|(_, r, c)| {
                let bound = (6.0 / (r + c) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let data = (0..r * c).map(|_| S::of(dist.sample(&mut rng))).collect();
                Tensor::new(r, c, data)
            })
            .collect::<Result<_>>()?;
        Ok(Self { spec, blocks })
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let blocks = spec.blocks().into_iter().map(|(_, r, c)| Tensor::zeros(r, c)).collect();
        Ok(Self { spec, blocks })
    }

    pub fn from_flat(spec: ModelSpec, flat: &[S]) -> Result<Self> {
        let mut m = Self::zeros(spec)?;
        m.set_flat(flat)?;
        Ok(m)
    }

    pub fn from_blocks(spec: ModelSpec, blocks: Vec<Tensor<S>>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.blocks();
        if blocks.len() != expected.len()
            || blocks.iter().zip(&expected).any(|(b, (_, r, c))| b.shape() != [*r, *c])
        {
            return Err(Error::Shape {
                op: "model blocks",
                detail: "blocks do not match the model architecture".into(),
            });
        }
        Ok(Self { spec, blocks })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[Tensor<S>] {
        &self.blocks
    }

    pub fn num_params(&self) -> usize {
        self.spec.num_params()
    }

    /// All parameters in fixed block order.
    pub fn to_flat(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(self.num_params());
        for b in &self.blocks {
            v.extend_from_slice(b.data());
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                op: "set_flat",
                detail: format!("{} values for {} parameters", flat.len(), self.num_params()),
            });
        }
        let mut offset = 0;
        for b in self.blocks.iter_mut() {
            let [r, c] = b.shape();
            *b = Tensor::new(r, c, flat[offset..offset + r * c].to_vec())?;
            offset += r * c;
        }
        Ok(())
    }

    /// Binds every block as a trainable leaf (or a constant for frozen use).
    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Result<ModelVars> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                if trainable {
                    tape.param(b.clone())
                } else {
                    tape.constant(b.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        ModelVars::from_blocks(&self.spec, blocks)
    }

    /// `G(x)`: `n x hidden` embeddings.
    pub fn extract(&self, tape: &mut Tape<S>, vars: &ModelVars, x: Var, index: &MessageIndex) -> Result<Var> {
        gat_layer(tape, &vars.extractor, x, index, HeadMerge::Concat, Activation::Elu)
    }

    /// `F(h)`: `n x classes` logits.
    pub fn classify(&self, tape: &mut Tape<S>, vars: &ModelVars, h: Var, index: &MessageIndex) -> Result<Var> {
        gat_layer(tape, &vars.classifier, h, index, HeadMerge::Mean, Activation::Identity)
    }

    pub fn forward_with(
        &self,
        tape: &mut Tape<S>,
        vars: &ModelVars,
        features: Var,
        index: &MessageIndex,
    ) -> Result<Forward> {
        let embeddings = self.extract(tape, vars, features, index)?;
        let logits = self.classify(tape, vars, embeddings, index)?;
        Ok(Forward { embeddings, logits })
    }

    /// Gradient-free forward pass returning `(H, Z)`.
    pub fn forward(&self, graph: &Graph<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        self.check_input(graph)?;
        let index = MessageIndex::new(graph);
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let x = tape.constant(graph.features().clone())?;
        let out = self.forward_with(&mut tape, &vars, x, &index)?;
        Ok((tape.value(out.embeddings).clone(), tape.value(out.logits).clone()))
    }

    pub fn check_input(&self, graph: &Graph<S>) -> Result<()> {
        if graph.feature_dim() != self.spec.in_dim {
            return Err(Error::Shape {
                op: "model_forward",
                detail: format!(
                    "graph has {} features, model expects {}",
                    graph.feature_dim(),
                    self.spec.in_dim
                ),
            });
        }
        Ok(())
    }
}
