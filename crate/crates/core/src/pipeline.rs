//! End-to-end experiment assembly shared by the command line and the
//! benchmark suites: synthetic domains, frozen encoders, pretraining and
//! per-domain federation.

use crate::data::{dirichlet_partition, DomainSpec, PartitionSpec, SyntheticDomain};
use crate::distill::{pretrain, PretrainConfig, PretrainOutcome};
use crate::error::{Error, Result};
use crate::eval::PathEvaluator;
use crate::fed::{build_clients, run_federation, FederationConfig, FederationOutcome, RoundObserver};
use crate::linalg::Matrix;
use crate::model::{ClassifierWeights, FeatureBatch, Nonlinearity, SyntheticEncoder, Translator, NORMALIZE_EPS};
use crate::rng::{stream_rng, Stream};

/// Encoder geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub student_dim: usize,
    pub feature_dim: usize,
    pub nonlinearity: Nonlinearity,
    /// Build the teacher as `T*·student` so that an exact translator exists.
    pub realizable: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            student_dim: 16,
            feature_dim: 32,
            nonlinearity: Nonlinearity::None,
            realizable: false,
        }
    }
}

/// Teacher, student, a random translator and a small random decoder.
#[derive(Debug, Clone)]
pub struct Encoders {
    pub teacher: SyntheticEncoder,
    pub student: SyntheticEncoder,
    pub translator: Translator,
    pub classifier: ClassifierWeights,
    /// The exact translator when the setup is realizable.
    pub target_translator: Option<Translator>,
}

pub fn build_encoders(model: &ModelSpec, input_dim: usize, num_classes: usize, seed: u64) -> Result<Encoders> {
    if model.student_dim == 0 || model.feature_dim == 0 || input_dim == 0 || num_classes == 0 {
        return Err(Error::Config("model dimensions and class count must be positive".into()));
    }
    let rng = |k: u64| stream_rng(seed, Stream::Init, &[k]);
    let student = SyntheticEncoder::random(model.student_dim, input_dim, model.nonlinearity, &mut rng(1));
    let (teacher, target_translator) = if model.realizable {
        if model.nonlinearity != Nonlinearity::None {
            return Err(Error::Config("a realizable teacher requires nonlinearity = none".into()));
        }
        let t_star = Translator::random(model.feature_dim, model.student_dim, &mut rng(4));
        let weight = t_star.weight.matmul(&student.weight)?;
        (SyntheticEncoder::new(weight)?, Some(t_star))
    } else {
        (
            SyntheticEncoder::random(model.feature_dim, input_dim, model.nonlinearity, &mut rng(0)),
            None,
        )
    };
    let translator = Translator::random(model.feature_dim, model.student_dim, &mut rng(2));
    let classifier = ClassifierWeights::new(Matrix::random_normal(num_classes, model.feature_dim, 0.01, &mut rng(3)))?;
    Ok(Encoders {
        teacher,
        student,
        translator,
        classifier,
        target_translator,
    })
}

/// Everything needed to run the experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// One entry per domain; all domains share the input dimension.
    pub domains: Vec<DomainSpec>,
    pub public_per_class: usize,
    pub alpha: f64,
    pub model: ModelSpec,
    pub pretrain: PretrainConfig,
    pub federation: FederationConfig,
    /// Score validation accuracy every this many rounds (the last round always).
    pub eval_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domains: vec![DomainSpec::default()],
            public_per_class: 50,
            alpha: 1.0,
            model: ModelSpec::default(),
            pretrain: PretrainConfig::default(),
            federation: FederationConfig::default(),
            eval_every: 1,
        }
    }
}

impl ExperimentConfig {
    /// Sets the master seed of every component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        for d in &mut self.domains {
            d.seed = seed;
        }
        self.pretrain.seed = seed;
        self.federation.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.federation.seed
    }

    pub fn input_dim(&self) -> Result<usize> {
        let first = self.domains.first().ok_or_else(|| Error::Config("at least one domain is required".into()))?;
        if let Some(d) = self.domains.iter().find(|d| d.input_dim != first.input_dim) {
            return Err(Error::dim("domain input dim", first.input_dim, d.input_dim));
        }
        Ok(first.input_dim)
    }

    pub fn total_classes(&self) -> usize {
        self.domains.iter().map(|d| d.num_classes).sum()
    }

    /// Row range of each domain inside the stacked decoder.
    pub fn class_blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.domains
            .iter()
            .map(|d| {
                let r = start..start + d.num_classes;
                start = r.end;
                r
            })
            .collect()
    }
}

/// Generated data of one domain.
#[derive(Debug, Clone)]
pub struct DomainData {
    pub train: FeatureBatch,
    pub val: FeatureBatch,
    pub public: FeatureBatch,
}

pub fn generate_domains(cfg: &ExperimentConfig) -> Result<Vec<DomainData>> {
    cfg.input_dim()?;
    cfg.domains
        .iter()
        .map(|spec| {
            let domain = SyntheticDomain::new(spec.clone())?;
            let (train, val) = domain.generate();
            Ok(DomainData {
                train,
                val,
                public: domain.public_set(cfg.public_per_class),
            })
        })
        .collect()
}

/// Public sets of all domains stacked with labels shifted into one class space.
pub fn pooled_public(data: &[DomainData], blocks: &[std::ops::Range<usize>]) -> Result<FeatureBatch> {
    let parts: Vec<&Matrix> = data.iter().map(|d| &d.public.features).collect();
    let features = Matrix::vstack(&parts)?;
    let labels = data
        .iter()
        .zip(blocks)
        .flat_map(|(d, b)| d.public.labels.iter().map(move |&y| y + b.start))
        .collect();
    FeatureBatch::new(features, labels)
}

/// Encoders after pretraining plus the generated data.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub encoders: Encoders,
    pub outcome: PretrainOutcome,
    pub data: Vec<DomainData>,
}

impl Pretrained {
    pub fn student(&self) -> &SyntheticEncoder {
        self.outcome.student.as_ref().unwrap_or(&self.encoders.student)
    }

    /// Rows of the pretrained decoder belonging to `domain`.
    pub fn domain_decoder(&self, cfg: &ExperimentConfig, domain: usize) -> Result<ClassifierWeights> {
        let block = cfg.class_blocks()[domain].clone();
        let rows: Vec<usize> = block.collect();
        ClassifierWeights::new(self.outcome.classifier.weight.select_rows(&rows))
    }
}

/// Generates data and encoders and runs pretraining on the pooled public sets.
pub fn run_pretraining(cfg: &ExperimentConfig) -> Result<Pretrained> {
    let data = generate_domains(cfg)?;
    let blocks = cfg.class_blocks();
    let encoders = build_encoders(&cfg.model, cfg.input_dim()?, cfg.total_classes(), cfg.seed())?;
    let public = pooled_public(&data, &blocks)?;
    let outcome = pretrain(
        &encoders.teacher,
        &encoders.student,
        &encoders.translator,
        &encoders.classifier,
        &public,
        &cfg.pretrain,
        None,
    )?;
    Ok(Pretrained { encoders, outcome, data })
}

/// Partitions a domain's training set over `num_clients` clients.
pub fn partition_domain(cfg: &ExperimentConfig, domain: usize, train: &FeatureBatch) -> Result<PartitionSpec> {
    let seed = crate::rng::derive_seed(cfg.seed(), Stream::Partition, &[domain as u64]);
    dirichlet_partition(&train.labels, cfg.federation.num_clients, cfg.alpha, seed)
}

/// Federates the decoder of one domain starting from `initial`.
#[allow(clippy::too_many_arguments)]
pub fn federate_domain(
    cfg: &ExperimentConfig,
    teacher: &SyntheticEncoder,
    student: &SyntheticEncoder,
    translator: &Translator,
    data: &DomainData,
    domain: usize,
    initial: &ClassifierWeights,
    observer: Option<&mut dyn RoundObserver>,
) -> Result<FederationOutcome> {
    let partition = partition_domain(cfg, domain, &data.train)?;
    let clients = build_clients(student, translator, &partition.split(&data.train))?;
    let mut fed = cfg.federation.clone();
    // keep client sampling, local shuffles and noise distinct across domains
    fed.seed = crate::rng::derive_seed(cfg.seed(), Stream::ClientSampling, &[domain as u64]);
    match observer {
        Some(o) => run_federation(&fed, &clients, initial, o),
        None => {
            let mut eval = PathEvaluator::new(teacher, student, translator, &data.val, NORMALIZE_EPS)?;
            eval.every = cfg.eval_every;
            eval.total_rounds = fed.rounds;
            run_federation(&fed, &clients, initial, &mut eval)
        }
    }
}

/// Pretraining followed by federation of every domain.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Pretrained, Vec<FederationOutcome>)> {
    let pre = run_pretraining(cfg)?;
    let outcomes = (0..cfg.domains.len())
        .map(|k| {
            let init = pre.domain_decoder(cfg, k)?;
            federate_domain(
                cfg,
                &pre.encoders.teacher,
                pre.student(),
                &pre.outcome.translator,
                &pre.data[k],
                k,
                &init,
                None,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pre, outcomes))
}
