//! Flat `section.key = value` run configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Every key has a
//! default, and unknown keys are rejected so typos never pass silently.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{ClassProfile, DomainSpec};
use crate::distill::PretrainConfig;
use crate::error::{Error, Result};
use crate::fed::{ActiveScope, Aggregation, FederationConfig, Method, Weighting};
use crate::model::Nonlinearity;
use crate::pipeline::{ExperimentConfig, ModelSpec};
use crate::privacy::DPConfig;

/// Override for a regularizer that a strategy normally decides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Switch {
    #[default]
    Auto,
    On,
    Off,
}

impl Switch {
    fn resolve(self, strategy_default: bool) -> bool {
        match self {
            Switch::Auto => strategy_default,
            Switch::On => true,
            Switch::Off => false,
        }
    }
}

impl FromStr for Switch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Switch::Auto),
            "on" | "true" => Ok(Switch::On),
            "off" | "false" => Ok(Switch::Off),
            other => Err(Error::Config(format!("expected auto|on|off, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for Switch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Switch::Auto => "auto",
            Switch::On => "on",
            Switch::Off => "off",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Start federation from a pretraining checkpoint.
    #[default]
    Pretrained,
    /// Fresh random encoders and decoder, no pretraining.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub parallel: bool,
    pub eval_every: usize,

    pub domains: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub profile: String,
    pub zipf_exponent: f64,
    pub noise_sigma: f64,
    pub latent_dim: Option<usize>,
    pub public_per_class: usize,
    pub train_file: Option<PathBuf>,
    pub val_file: Option<PathBuf>,
    pub public_file: Option<PathBuf>,

    pub alpha: f64,

    pub model: ModelSpec,
    pub pretrain: PretrainConfig,

    pub fed: FederationConfig,
    pub strategy: Method,
    pub icp: Switch,
    pub cdb: Switch,
    pub ema_rate: f64,
    pub prox_mu: f64,
    pub init: Init,
    pub checkpoint: Option<PathBuf>,

    pub dp_epsilon: f64,
    pub dp: DPConfig,
    /// `None` means take the smallest non-empty client of the partition.
    pub dp_min_client_size: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let domain = DomainSpec::default();
        let dp = DPConfig::default();
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            parallel: true,
            eval_every: 1,
            domains: 1,
            num_classes: domain.num_classes,
            input_dim: domain.input_dim,
            samples_per_class: domain.samples_per_class,
            profile: "uniform".into(),
            zipf_exponent: 1.0,
            noise_sigma: domain.cluster_noise_sigma,
            latent_dim: None,
            public_per_class: 50,
            train_file: None,
            val_file: None,
            public_file: None,
            alpha: 1.0,
            model: ModelSpec::default(),
            pretrain: PretrainConfig::default(),
            fed: FederationConfig::default(),
            strategy: Method::FedPromo,
            icp: Switch::Auto,
            cdb: Switch::Auto,
            ema_rate: crate::fed::DEFAULT_EMA_RATE,
            prox_mu: crate::fed::DEFAULT_PROX_MU,
            init: Init::Pretrained,
            checkpoint: None,
            dp_epsilon: f64::INFINITY,
            dp_min_client_size: Some(dp.min_client_size),
            dp,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    match value {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => parse(key, value),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true|false, got `{value}`"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let key = match key {
            "encoder.nonlinearity" => "model.nonlinearity",
            "icp.active_scope" => "federation.icp_active_scope",
            other => other,
        };
        match key {
            "run.seed" => self.seed = parse(key, v)?,
            "run.out_dir" => self.out_dir = PathBuf::from(v),
            "run.parallel" => self.parallel = parse_bool(key, v)?,
            "run.eval_every" => self.eval_every = parse(key, v)?,

            "data.domains" => self.domains = parse(key, v)?,
            "data.num_classes" => self.num_classes = parse(key, v)?,
            "data.input_dim" => self.input_dim = parse(key, v)?,
            "data.samples_per_class" => self.samples_per_class = parse(key, v)?,
            "data.profile" => match v {
                "uniform" | "zipf" => self.profile = v.to_string(),
                _ => return Err(Error::Config(format!("{key}: expected uniform|zipf, got `{v}`"))),
            },
            "data.zipf_exponent" => self.zipf_exponent = parse_f64(key, v)?,
            "data.noise_sigma" => self.noise_sigma = parse_f64(key, v)?,
            "data.latent_dim" => {
                self.latent_dim = if v == "none" { None } else { Some(parse(key, v)?) };
            }
            "data.public_per_class" => self.public_per_class = parse(key, v)?,
            "data.train_file" => self.train_file = opt_path(v),
            "data.val_file" => self.val_file = opt_path(v),
            "data.public_file" => self.public_file = opt_path(v),

            "partition.alpha" => self.alpha = parse_f64(key, v)?,

            "model.student_dim" => self.model.student_dim = parse(key, v)?,
            "model.feature_dim" => self.model.feature_dim = parse(key, v)?,
            "model.nonlinearity" => self.model.nonlinearity = v.parse::<Nonlinearity>()?,
            "model.realizable" => self.model.realizable = parse_bool(key, v)?,

            "pretrain.epochs" => self.pretrain.epochs = parse(key, v)?,
            "pretrain.batch_size" => self.pretrain.batch_size = parse(key, v)?,
            "pretrain.lr_max" => self.pretrain.lr_max = parse_f64(key, v)?,
            "pretrain.lambda" => self.pretrain.lambda = parse_f64(key, v)?,
            "pretrain.train_student_encoder" => self.pretrain.train_student_encoder = parse_bool(key, v)?,

            "federation.num_clients" => self.fed.num_clients = parse(key, v)?,
            "federation.active_per_round" => self.fed.active_per_round = parse(key, v)?,
            "federation.rounds" => self.fed.rounds = parse(key, v)?,
            "federation.local_epochs" => self.fed.local_epochs = parse(key, v)?,
            "federation.batch_size" => self.fed.batch_size = parse(key, v)?,
            "federation.lr_max" => self.fed.lr_max = parse_f64(key, v)?,
            "federation.eta" => self.fed.eta = parse_f64(key, v)?,
            "federation.strategy" => self.strategy = v.parse()?,
            "federation.icp" => self.icp = v.parse()?,
            "federation.cdb" => self.cdb = v.parse()?,
            "federation.icp_active_scope" => self.fed.active_scope = v.parse::<ActiveScope>()?,
            "federation.ema_rate" => self.ema_rate = parse_f64(key, v)?,
            "federation.prox_mu" => self.prox_mu = parse_f64(key, v)?,
            "federation.weighting" => {
                self.fed.weighting = match v {
                    "samples" => Weighting::Samples,
                    "uniform" => Weighting::Uniform,
                    _ => return Err(Error::Config(format!("{key}: expected samples|uniform, got `{v}`"))),
                }
            }
            "federation.dropout_prob" => self.fed.dropout_prob = parse_f64(key, v)?,
            "federation.init" => {
                self.init = match v {
                    "pretrained" => Init::Pretrained,
                    "random" => Init::Random,
                    _ => return Err(Error::Config(format!("{key}: expected pretrained|random, got `{v}`"))),
                }
            }
            "federation.checkpoint" => self.checkpoint = opt_path(v),

            "dp.epsilon" => self.dp_epsilon = parse_f64(key, v)?,
            "dp.delta" => self.dp.delta = parse_f64(key, v)?,
            "dp.clip_hat" => self.dp.clip_hat = parse_f64(key, v)?,
            "dp.clip_max" => self.dp.clip_max = parse_f64(key, v)?,
            "dp.min_client_size" => {
                self.dp_min_client_size = if v == "auto" { None } else { Some(parse(key, v)?) };
            }
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in key order.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let f = &self.fed;
        let d = &self.dp;
        let mut m = BTreeMap::new();
        let mut put = |k: &'static str, v: String| {
            m.insert(k, v);
        };
        put("run.seed", self.seed.to_string());
        put("run.out_dir", self.out_dir.display().to_string());
        put("run.parallel", self.parallel.to_string());
        put("run.eval_every", self.eval_every.to_string());
        put("data.domains", self.domains.to_string());
        put("data.num_classes", self.num_classes.to_string());
        put("data.input_dim", self.input_dim.to_string());
        put("data.samples_per_class", self.samples_per_class.to_string());
        put("data.profile", self.profile.clone());
        put("data.zipf_exponent", self.zipf_exponent.to_string());
        put("data.noise_sigma", self.noise_sigma.to_string());
        put("data.latent_dim", self.latent_dim.map_or("none".into(), |k| k.to_string()));
        put("data.public_per_class", self.public_per_class.to_string());
        put("data.train_file", show_path(&self.train_file));
        put("data.val_file", show_path(&self.val_file));
        put("data.public_file", show_path(&self.public_file));
        put("partition.alpha", self.alpha.to_string());
        put("model.student_dim", self.model.student_dim.to_string());
        put("model.feature_dim", self.model.feature_dim.to_string());
        put("model.nonlinearity", self.model.nonlinearity.to_string());
        put("model.realizable", self.model.realizable.to_string());
        put("pretrain.epochs", self.pretrain.epochs.to_string());
        put("pretrain.batch_size", self.pretrain.batch_size.to_string());
        put("pretrain.lr_max", self.pretrain.lr_max.to_string());
        put("pretrain.lambda", self.pretrain.lambda.to_string());
        put("pretrain.train_student_encoder", self.pretrain.train_student_encoder.to_string());
        put("federation.num_clients", f.num_clients.to_string());
        put("federation.active_per_round", f.active_per_round.to_string());
        put("federation.rounds", f.rounds.to_string());
        put("federation.local_epochs", f.local_epochs.to_string());
        put("federation.batch_size", f.batch_size.to_string());
        put("federation.lr_max", f.lr_max.to_string());
        put("federation.eta", f.eta.to_string());
        put("federation.strategy", self.strategy.to_string());
        put("federation.icp", self.icp.to_string());
        put("federation.cdb", self.cdb.to_string());
        put("federation.icp_active_scope", f.active_scope.to_string());
        put("federation.ema_rate", self.ema_rate.to_string());
        put("federation.prox_mu", self.prox_mu.to_string());
        put(
            "federation.weighting",
            match f.weighting {
                Weighting::Samples => "samples",
                Weighting::Uniform => "uniform",
            }
            .into(),
        );
        put("federation.dropout_prob", f.dropout_prob.to_string());
        put(
            "federation.init",
            match self.init {
                Init::Pretrained => "pretrained",
                Init::Random => "random",
            }
            .into(),
        );
        put("federation.checkpoint", show_path(&self.checkpoint));
        put("dp.epsilon", self.dp_epsilon.to_string());
        put("dp.delta", d.delta.to_string());
        put("dp.clip_hat", d.clip_hat.to_string());
        put("dp.clip_max", d.clip_max.to_string());
        put("dp.min_client_size", self.dp_min_client_size.map_or("auto".into(), |n| n.to_string()));
        m
    }

    pub fn uses_feature_files(&self) -> bool {
        self.train_file.is_some() || self.val_file.is_some()
    }

    fn class_profile(&self) -> ClassProfile {
        if self.profile == "zipf" {
            ClassProfile::Zipf(self.zipf_exponent)
        } else {
            ClassProfile::Uniform
        }
    }

    /// Federation settings after resolving strategy, overrides and DP.
    pub fn federation(&self) -> Result<FederationConfig> {
        let mut fed = self.fed.clone().with_method(self.strategy);
        let regularized = self.strategy == Method::FedPromo;
        fed.icp = self.icp.resolve(regularized);
        fed.cdb = self.cdb.resolve(regularized);
        fed.aggregation = match fed.aggregation {
            Aggregation::FedAvgEma { .. } => Aggregation::FedAvgEma { rate: self.ema_rate },
            Aggregation::FedProx { .. } => Aggregation::FedProx { mu: self.prox_mu },
            other => other,
        };
        fed.seed = self.seed;
        fed.parallel = self.parallel;
        let mut dp = self.dp.clone();
        dp.epsilon = self.dp_epsilon;
        dp.enabled = self.dp_epsilon.is_finite();
        dp.min_size_from_partition = self.dp_min_client_size.is_none();
        if let Some(n) = self.dp_min_client_size {
            dp.min_client_size = n;
        }
        fed.dp = dp;
        fed.validate()?;
        Ok(fed)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        if self.domains == 0 {
            return Err(Error::Config("data.domains must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("run.eval_every must be at least 1".into()));
        }
        let domains = (0..self.domains)
            .map(|k| DomainSpec {
                domain_id: k,
                num_classes: self.num_classes,
                input_dim: self.input_dim,
                samples_per_class: self.samples_per_class,
                profile: self.class_profile(),
                cluster_noise_sigma: self.noise_sigma,
                latent_dim: self.latent_dim,
                seed: self.seed,
            })
            .collect();
        let cfg = ExperimentConfig {
            domains,
            public_per_class: self.public_per_class,
            alpha: self.alpha,
            model: self.model.clone(),
            pretrain: PretrainConfig {
                seed: self.seed,
                ..self.pretrain.clone()
            },
            federation: self.federation()?,
            eval_every: self.eval_every,
        };
        cfg.pretrain.validate()?;
        for d in &cfg.domains {
            d.validate()?;
        }
        if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
            return Err(Error::Config(format!("partition.alpha must be positive, got {}", cfg.alpha)));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_assignments_and_comments() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# benchmark\nrun.seed = 7\n\nfederation.strategy = fedavg_ema  # baseline\nfederation.ema_rate=0.25\ndp.epsilon = 5\n",
            "test.cfg",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        let fed = cfg.federation().unwrap();
        assert_eq!(fed.aggregation, Aggregation::FedAvgEma { rate: 0.25 });
        assert!(!fed.icp && !fed.cdb);
        assert!(fed.dp.enabled && fed.dp.epsilon == 5.0);
    }

    #[test]
    fn unknown_key_reports_line() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("run.seed = 1\nfederation.round = 5\n", "x.cfg").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("federation.round"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(cfg.apply_text("just words\n", "x.cfg").is_err());
        cfg.apply_text("icp.active_scope = last_batch\nencoder.nonlinearity = tanh\n", "x.cfg").unwrap();
        assert_eq!(cfg.fed.active_scope, ActiveScope::LastBatch);
        assert_eq!(cfg.model.nonlinearity, Nonlinearity::Tanh);
    }

    #[test]
    fn switches_override_strategy() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("federation.icp=off").unwrap();
        let fed = cfg.federation().unwrap();
        assert!(!fed.icp && fed.cdb);
        cfg.apply_override("federation.strategy=fedavg").unwrap();
        cfg.apply_override("federation.cdb=on").unwrap();
        let fed = cfg.federation().unwrap();
        assert!(!fed.icp && fed.cdb);
    }

    #[test]
    fn entries_round_trip_through_set() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("data.latent_dim=12").unwrap();
        cfg.apply_override("dp.min_client_size=auto").unwrap();
        let mut copy = RunConfig::default();
        for (k, v) in cfg.entries() {
            copy.set(k, &v).unwrap();
        }
        assert_eq!(copy, cfg);
    }

    #[test]
    fn dp_defaults_off() {
        let fed = RunConfig::default().federation().unwrap();
        assert!(!fed.dp.enabled);
        assert_eq!(fed.dp.min_client_size, 130);
    }
}
