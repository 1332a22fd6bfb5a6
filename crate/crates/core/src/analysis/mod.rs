//! Representation similarity between client models and result export.

mod cka;
mod export;

pub use cka::{linear_cka, pairwise_client_cka, CkaReport};
pub use export::{
    read_cka, read_metrics, read_summary, write_cka, write_logits, write_metrics, write_summary, SummaryFile,
    STD_CONVENTION,
};
