//! Federated decoder training: local client rounds with optional ICP and
//! CDB, server aggregation, uplink dropout and client-side DP noise.

mod aggregate;
mod client;
mod regularize;
mod server;

use std::fmt;
use std::str::FromStr;

pub use aggregate::{aggregate, AggregateOutcome, Aggregation, ClientUpdate, Weighting};
pub use client::{build_clients, client_round, ClientRoundResult, ClientState};
pub use regularize::{cdb_apply, fedprox_penalty, icp_apply, ActiveClassSet};
pub use server::{
    dropped_uplink, run_federation, sample_active, FederationOutcome, NoEval, RoundEval, RoundObserver,
};

use crate::error::{Error, Result};
use crate::privacy::DPConfig;

/// Which batches contribute to a local epoch's active-class set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActiveScope {
    /// Union of labels over every batch of the epoch.
    #[default]
    Epoch,
    /// Only the labels of the epoch's final batch.
    LastBatch,
}

impl FromStr for ActiveScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch" => Ok(Self::Epoch),
            "last_batch" => Ok(Self::LastBatch),
            other => Err(Error::Config(format!("unknown active scope `{other}` (expected epoch|last_batch)"))),
        }
    }
}

impl fmt::Display for ActiveScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Epoch => "epoch",
            Self::LastBatch => "last_batch",
        })
    }
}

/// Named training recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// FedAvg with ICP on the client and CDB on both sides.
    #[default]
    FedPromo,
    FedAvg,
    FedAvgEma,
    FedProx,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedpromo" => Ok(Self::FedPromo),
            "fedavg" => Ok(Self::FedAvg),
            "fedavg_ema" => Ok(Self::FedAvgEma),
            "fedprox" => Ok(Self::FedProx),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected fedpromo|fedavg|fedavg_ema|fedprox)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FedPromo => "fedpromo",
            Self::FedAvg => "fedavg",
            Self::FedAvgEma => "fedavg_ema",
            Self::FedProx => "fedprox",
        })
    }
}

pub const DEFAULT_EMA_RATE: f64 = 0.5;
pub const DEFAULT_PROX_MU: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub active_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub eta: f64,
    pub icp: bool,
    pub cdb: bool,
    pub active_scope: ActiveScope,
    pub aggregation: Aggregation,
    pub weighting: Weighting,
    /// Probability that a finished client update is lost on the uplink.
    pub dropout_prob: f64,
    pub dp: DPConfig,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            active_per_round: 10,
            rounds: 500,
            local_epochs: 10,
            batch_size: 64,
            lr_max: 0.005,
            eta: 0.05,
            icp: true,
            cdb: true,
            active_scope: ActiveScope::Epoch,
            aggregation: Aggregation::FedAvg,
            weighting: Weighting::Samples,
            dropout_prob: 0.0,
            dp: DPConfig::default(),
            seed: 42,
            parallel: true,
        }
    }
}

impl FederationConfig {
    /// Sets aggregation and the ICP/CDB switches for a named recipe.
    pub fn with_method(mut self, method: Method) -> Self {
        let (aggregation, regularized) = match method {
            Method::FedPromo => (Aggregation::FedAvg, true),
            Method::FedAvg => (Aggregation::FedAvg, false),
            Method::FedAvgEma => (Aggregation::FedAvgEma { rate: DEFAULT_EMA_RATE }, false),
            Method::FedProx => (Aggregation::FedProx { mu: DEFAULT_PROX_MU }, false),
        };
        self.aggregation = aggregation;
        self.icp = regularized;
        self.cdb = regularized;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("federation needs at least one client".into()));
        }
        if self.active_per_round == 0 || self.active_per_round > self.num_clients {
            return Err(Error::Config(format!(
                "active_per_round must lie in [1, {}], got {}",
                self.num_clients, self.active_per_round
            )));
        }
        if self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("rounds, local_epochs and batch_size must be positive".into()));
        }
        if !(self.lr_max.is_finite() && self.lr_max >= 0.0) {
            return Err(Error::Config(format!("lr_max must be finite and non-negative, got {}", self.lr_max)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::Config(format!("dropout_prob must lie in [0, 1), got {}", self.dropout_prob)));
        }
        match self.aggregation {
            Aggregation::FedAvgEma { rate } if !(0.0..=1.0).contains(&rate) => {
                return Err(Error::Config(format!("ema_rate must lie in [0, 1], got {rate}")));
            }
            Aggregation::FedProx { mu } if !(mu.is_finite() && mu >= 0.0) => {
                return Err(Error::Config(format!("prox_mu must be finite and non-negative, got {mu}")));
            }
            _ => {}
        }
        if self.dp.enabled {
            self.dp.validate()?;
        }
        Ok(())
    }
}
