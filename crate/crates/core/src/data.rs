//! Synthetic Gaussian-cluster domains, label-skewed client partitions and
//! the plain-text feature file format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::FeatureBatch;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassProfile {
    Uniform,
    /// Class `c` gets weight `1/(c+1)^s`.
    Zipf(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub domain_id: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    /// Mean samples per class; the total is `num_classes · samples_per_class`.
    pub samples_per_class: usize,
    pub profile: ClassProfile,
    pub cluster_noise_sigma: f64,
    /// When set, clusters live in a space of this dimension that is mapped
    /// linearly into `input_dim` dimensions.
    pub latent_dim: Option<usize>,
    pub seed: u64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            domain_id: 0,
            num_classes: 20,
            input_dim: 32,
            samples_per_class: 100,
            profile: ClassProfile::Uniform,
            cluster_noise_sigma: 1.0,
            latent_dim: None,
            seed: 42,
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("a domain needs at least 2 classes".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        if !(self.cluster_noise_sigma >= 0.0) {
            return Err(Error::Config("cluster_noise_sigma must be non-negative".into()));
        }
        if let Some(k) = self.latent_dim {
            if k == 0 || k > self.input_dim {
                return Err(Error::Config(format!("latent_dim must lie in [1, {}], got {k}", self.input_dim)));
            }
        }
        if let ClassProfile::Zipf(s) = self.profile {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::Config("zipf exponent must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    fn cluster_dim(&self) -> usize {
        self.latent_dim.unwrap_or(self.input_dim)
    }

    fn stream_path(&self) -> [u64; 1] {
        [self.domain_id as u64]
    }
}

/// Per-class sample counts for a profile. Totals `C · samples_per_class`,
/// every class gets at least one sample, counts never increase with the class index.
pub fn class_counts(spec: &DomainSpec) -> Vec<usize> {
    let c = spec.num_classes;
    let total = c * spec.samples_per_class;
    match spec.profile {
        ClassProfile::Uniform => vec![spec.samples_per_class; c],
        ClassProfile::Zipf(s) => {
            let weights: Vec<f64> = (0..c).map(|i| ((i + 1) as f64).powf(-s)).collect();
            let wsum: f64 = weights.iter().sum();
            // one guaranteed sample per class, the rest by largest remainder
            let spare = total - c;
            let exact: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64 - 1.0).map(|v| v.max(0.0)).collect();
            let esum: f64 = exact.iter().sum();
            let scaled: Vec<f64> = exact.iter().map(|v| v / esum * spare as f64).collect();
            let mut counts: Vec<usize> = scaled.iter().map(|v| v.floor() as usize + 1).collect();
            let mut left = total - counts.iter().sum::<usize>();
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| {
                let fa = scaled[a] - scaled[a].floor();
                let fb = scaled[b] - scaled[b].floor();
                fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
            });
            for &i in order.iter().cycle() {
                if left == 0 {
                    break;
                }
                counts[i] += 1;
                left -= 1;
            }
            // remainders can lift a later class past an earlier one by a single sample
            counts.sort_unstable_by(|a, b| b.cmp(a));
            counts
        }
    }
}

/// Class prototypes of one domain; samples are `μ_c + σ·ε`, optionally
/// followed by the linear map `A` into the input space.
#[derive(Debug, Clone)]
pub struct SyntheticDomain {
    pub spec: DomainSpec,
    /// `C × k` cluster centers, `k` being the cluster dimension.
    pub prototypes: Matrix,
    /// `input_dim × k` map applied to latent samples.
    pub mixing: Option<Matrix>,
}

impl SyntheticDomain {
    pub fn new(spec: DomainSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(spec.seed, Stream::Prototypes, &spec.stream_path());
        let prototypes = Matrix::random_normal(spec.num_classes, spec.cluster_dim(), 1.0, &mut rng);
        let mixing = spec
            .latent_dim
            .map(|k| Matrix::random_normal(spec.input_dim, k, (1.0 / k as f64).sqrt(), &mut rng));
        Ok(Self { spec, prototypes, mixing })
    }

    fn sample_counts<R: Rng + ?Sized>(&self, counts: &[usize], rng: &mut R) -> FeatureBatch {
        let d = self.spec.cluster_dim();
        let sigma = self.spec.cluster_noise_sigma;
        let n: usize = counts.iter().sum();
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for (c, &count) in counts.iter().enumerate() {
            let mu = self.prototypes.row(c);
            for _ in 0..count {
                for &m in mu {
                    let eps: f64 = StandardNormal.sample(rng);
                    data.push(m + sigma * eps);
                }
                labels.push(c);
            }
        }
        let latent = Matrix::from_vec(n, d, data).expect("sized above");
        let features = match &self.mixing {
            Some(a) => latent.matmul_t(a).expect("mixing matches cluster dim"),
            None => latent,
        };
        FeatureBatch { features, labels }
    }

    /// Seeded shuffle followed by an 80/20 train/validation split.
    pub fn generate(&self) -> (FeatureBatch, FeatureBatch) {
        let spec = &self.spec;
        let mut rng = stream_rng(spec.seed, Stream::Samples, &spec.stream_path());
        let all = self.sample_counts(&class_counts(spec), &mut rng);
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.shuffle(&mut stream_rng(spec.seed, Stream::Split, &spec.stream_path()));
        let n_train = all.len() * 4 / 5;
        (all.subset(&order[..n_train]), all.subset(&order[n_train..]))
    }

    /// Independent draw from the same class clusters, standing in for the
    /// public in-domain set the server pretrains on.
    pub fn public_set(&self, per_class: usize) -> FeatureBatch {
        let mut rng = stream_rng(self.spec.seed, Stream::Public, &self.spec.stream_path());
        self.sample_counts(&vec![per_class; self.spec.num_classes], &mut rng)
    }
}

pub fn generate_domain(spec: &DomainSpec) -> Result<(FeatureBatch, FeatureBatch)> {
    Ok(SyntheticDomain::new(spec.clone())?.generate())
}

/// Assignment of every sample to exactly one client.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub alpha: f64,
    pub num_clients: usize,
    pub assignment: Vec<usize>,
}

impl PartitionSpec {
    pub fn client_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clients];
        for (i, &k) in self.assignment.iter().enumerate() {
            out[k].push(i);
        }
        out
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clients];
        for &k in &self.assignment {
            sizes[k] += 1;
        }
        sizes
    }

    /// Counts indexed `[class][client]`.
    pub fn class_client_counts(&self, labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0; self.num_clients]; num_classes];
        for (&y, &k) in labels.iter().zip(&self.assignment) {
            counts[y][k] += 1;
        }
        counts
    }

    pub fn split(&self, data: &FeatureBatch) -> Vec<FeatureBatch> {
        self.client_indices().iter().map(|idx| data.subset(idx)).collect()
    }
}

/// Per-class Dirichlet label skew: for each class draw `p ~ Dir(α·1_K)`, then
/// send each of its samples to a client drawn from `p`.
pub fn dirichlet_partition(labels: &[usize], num_clients: usize, alpha: f64, seed: u64) -> Result<PartitionSpec> {
    if num_clients == 0 {
        return Err(Error::Range("at least one client is required".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Range(format!("dirichlet concentration must be positive, got {alpha}")));
    }
    let mut assignment = vec![0; labels.len()];
    if num_clients == 1 {
        return Ok(PartitionSpec {
            alpha,
            num_clients,
            assignment,
        });
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Range(e.to_string()))?;
    let mut rng = stream_rng(seed, Stream::Partition, &[]);
    for c in 0..num_classes {
        let mut p: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = p.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            p.iter_mut().for_each(|v| *v /= sum);
        } else {
            // every gamma draw underflowed: fall back to a single random owner
            let owner = rng.random_range(0..num_clients);
            p = (0..num_clients).map(|k| if k == owner { 1.0 } else { 0.0 }).collect();
        }
        let pick = WeightedIndex::new(&p).map_err(|e| Error::Numeric(e.to_string()))?;
        for (i, _) in labels.iter().enumerate().filter(|(_, &y)| y == c) {
            assignment[i] = pick.sample(&mut rng);
        }
    }
    Ok(PartitionSpec {
        alpha,
        num_clients,
        assignment,
    })
}

/// Header `n d C`, then one `v_1 … v_d label` line per sample.
pub fn write_feature_file(path: impl AsRef<Path>, batch: &FeatureBatch, num_classes: usize) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", batch.len(), batch.dim(), num_classes);
    for (row, y) in batch.features.row_iter().zip(&batch.labels) {
        for v in row {
            let _ = write!(out, "{v} ");
        }
        let _ = writeln!(out, "{y}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<(FeatureBatch, usize)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_text(&text, &path.display().to_string())
}

pub fn parse_feature_text(text: &str, origin: &str) -> Result<(FeatureBatch, usize)> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(err(1, format!("header must be 'n d C', found {} fields", fields.len())));
    }
    let parse_dim = |s: &str, name: &str| s.parse::<usize>().map_err(|_| err(1, format!("invalid {name} '{s}'")));
    let n = parse_dim(fields[0], "n")?;
    let d = parse_dim(fields[1], "d")?;
    let c = parse_dim(fields[2], "C")?;
    if d == 0 || c == 0 {
        return Err(err(1, "d and C must be positive".into()));
    }

    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if labels.len() == n {
            return Err(err(lineno, format!("more than {n} sample rows")));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != d + 1 {
            return Err(err(lineno, format!("expected {} values and a label, found {} fields", d, toks.len())));
        }
        for t in &toks[..d] {
            let v: f64 = t.parse().map_err(|_| err(lineno, format!("invalid value '{t}'")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value '{t}'")));
            }
            data.push(v);
        }
        let y: usize = toks[d].parse().map_err(|_| err(lineno, format!("invalid label '{}'", toks[d])))?;
        if y >= c {
            return Err(err(lineno, format!("label {y} out of range for {c} classes")));
        }
        labels.push(y);
    }
    if labels.len() != n {
        return Err(err(n + 1, format!("expected {n} sample rows, found {}", labels.len())));
    }
    let features = Matrix::from_vec(n, d, data)?;
    Ok((FeatureBatch { features, labels }, c))
}

/// Mean Shannon entropy (nats) of the per-client label distribution, over non-empty clients.
pub fn mean_client_label_entropy(partition: &PartitionSpec, labels: &[usize], num_classes: usize) -> f64 {
    let counts = partition.class_client_counts(labels, num_classes);
    let mut total = 0.0;
    let mut clients = 0usize;
    for k in 0..partition.num_clients {
        let n: usize = counts.iter().map(|row| row[k]).sum();
        if n == 0 {
            continue;
        }
        let h: f64 = counts
            .iter()
            .map(|row| row[k])
            .filter(|&m| m > 0)
            .map(|m| {
                let p = m as f64 / n as f64;
                -p * p.ln()
            })
            .sum();
        total += h;
        clients += 1;
    }
    if clients == 0 {
        0.0
    } else {
        total / clients as f64
    }
}
