//! Two-layer graph attention network split into a feature extractor and a
//! classifier head.

mod checkpoint;
mod layer;
mod model;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use layer::{attention_head, gat_layer, Activation, HeadMerge, HeadVars, MessageIndex, LEAKY_SLOPE};
pub use model::{Forward, GnnModel, ModelSpec, ModelVars};
