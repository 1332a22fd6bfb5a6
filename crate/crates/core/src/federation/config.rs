use std::fmt;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentPair;
use crate::diffcore::SgdConfig;
use crate::error::{Error, Result};
use crate::losses::{FgsdConfig, FnscConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Every client trains alone; no communication.
    Local,
    /// One client holding the whole graph.
    Global,
    FedAvg,
    FedProx,
    Fgssl,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Local, Method::Global, Method::FedAvg, Method::FedProx, Method::Fgssl];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Local => "local",
            Method::Global => "global",
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::Fgssl => "fgssl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything a training run needs besides data and partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub rounds: usize,
    pub epochs: usize,
    /// Full-batch optimizer steps per local epoch.
    pub steps_per_epoch: usize,
    pub sgd: SgdConfig,
    /// Zero the client momentum buffers at every broadcast.
    pub reset_velocity: bool,
    pub hidden: usize,
    pub heads: usize,
    pub fnsc: FnscConfig,
    pub fgsd: FgsdConfig,
    pub augment: AugmentPair,
    pub prox_mu: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Fgssl,
            rounds: 200,
            epochs: 4,
            steps_per_epoch: 1,
            sgd: SgdConfig::default(),
            reset_velocity: false,
            hidden: 128,
            heads: 1,
            fnsc: FnscConfig::default(),
            fgsd: FgsdConfig::default(),
            augment: AugmentPair::default(),
            prox_mu: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::InvalidArgument("rounds, epochs and steps per epoch must be at least 1".into()));
        }
        let s = &self.sgd;
        if !(s.lr >= 0.0 && s.lr.is_finite()) || !(0.0..1.0).contains(&s.momentum) || s.weight_decay.is_nan() || s.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "optimizer settings lr={} momentum={} weight_decay={}",
                s.lr, s.momentum, s.weight_decay
            )));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("prox mu {} must be non-negative", self.prox_mu)));
        }
        self.fnsc.validate()?;
        self.fgsd.validate()?;
        self.augment.validate()
    }
}
