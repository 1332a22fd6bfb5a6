//! Simulated federated training: broadcast, client-local updates, weighted
//! aggregation and evaluation, plus the Local / Global / FedAvg / FedProx
//! baselines.

mod client;
mod config;
mod run;
mod server;

pub use client::{local_update, ClientState, LossParts};
pub use config::{Method, TrainConfig};
pub use run::{run_experiment, run_seeds, summarize, MethodSummary, RoundReport, RunResult, Stat};
pub use server::{accuracy, aggregate, broadcast, evaluate, split_accuracy, Accuracy, ServerState};
