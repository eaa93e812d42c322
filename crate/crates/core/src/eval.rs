//! Accuracy metrics, confusion matrices, decoder self-similarity and
//! multi-domain decoder concatenation.
//!
//! Ranking ties are broken toward the lowest class index everywhere.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::model::{
    classifier_forward, l2_normalize, student_embed, teacher_embed, ClassifierWeights, FeatureBatch,
    FeatureMatrix, LogitsMatrix, SyntheticEncoder, Translator,
};

/// Index of the largest entry; the first one wins on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predictions(logits: &LogitsMatrix) -> Vec<usize> {
    logits.row_iter().map(argmax).collect()
}

/// Position of class `y` in the descending ranking of `row`.
fn rank_of(row: &[f64], y: usize) -> usize {
    let target = row[y];
    row.iter()
        .enumerate()
        .filter(|&(c, &v)| v > target || (v == target && c < y))
        .count()
}

/// Fraction of rows whose label is among the `k` highest logits.
pub fn topk_accuracy(logits: &LogitsMatrix, labels: &[usize], k: usize) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::dim("top-k labels", logits.rows(), labels.len()));
    }
    if k == 0 || k > logits.cols() {
        return Err(Error::Range(format!("top-k with k={k} over {} classes", logits.cols())));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (row, &y) in logits.row_iter().zip(labels) {
        if y >= row.len() {
            return Err(Error::Label {
                label: y,
                num_classes: row.len(),
            });
        }
        if rank_of(row, y) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
}

/// Top-1 and top-min(5, C) accuracy of the decoder on already-embedded features.
pub fn decoder_accuracy(decoder: &ClassifierWeights, normalized: &FeatureMatrix, labels: &[usize]) -> Result<Accuracy> {
    let logits = classifier_forward(decoder, normalized)?;
    let k5 = 5.min(decoder.num_classes());
    Ok(Accuracy {
        top1: topk_accuracy(&logits, labels, 1)?,
        top5: topk_accuracy(&logits, labels, k5)?,
    })
}

/// Accuracy after plugging the decoder onto the teacher encoder.
pub fn server_plug_eval(
    teacher: &SyntheticEncoder,
    decoder: &ClassifierWeights,
    validation: &FeatureBatch,
    eps: f64,
) -> Result<Accuracy> {
    if teacher.out_dim() != decoder.feature_dim() {
        return Err(Error::dim("decoder/teacher feature dim", teacher.out_dim(), decoder.feature_dim()));
    }
    let o = l2_normalize(&teacher_embed(teacher, validation)?, eps)?;
    decoder_accuracy(decoder, &o, &validation.labels)
}

/// Accuracy on the client path (student encoder followed by the translator).
pub fn client_eval(
    student: &SyntheticEncoder,
    translator: &Translator,
    decoder: &ClassifierWeights,
    validation: &FeatureBatch,
    eps: f64,
) -> Result<Accuracy> {
    if translator.out_dim() != decoder.feature_dim() {
        return Err(Error::dim("decoder/translator feature dim", translator.out_dim(), decoder.feature_dim()));
    }
    let f = l2_normalize(&student_embed(student, translator, validation)?, eps)?;
    decoder_accuracy(decoder, &f, &validation.labels)
}

/// `C×C` counts indexed `[true][predicted]`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("confusion inputs", labels.len(), predictions.len()));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        for v in [p, y] {
            if v >= num_classes {
                return Err(Error::Label { label: v, num_classes });
            }
        }
        m[y][p] += 1;
    }
    Ok(m)
}

/// Cosine similarity between decoder rows, `S = ω̂ω̂ᵀ`. Zero rows have
/// similarity 0 with everything and 1 with themselves.
pub fn weight_self_similarity(w: &ClassifierWeights) -> Matrix {
    let c = w.num_classes();
    let mut unit = w.weight.clone();
    let mut dead = vec![false; c];
    for (r, d) in dead.iter_mut().enumerate() {
        let row = unit.row_mut(r);
        let n = norm(row);
        if n == 0.0 {
            *d = true;
        } else {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    let mut s = unit.matmul_t(&unit).expect("square by construction");
    for i in 0..c {
        s[(i, i)] = 1.0;
        if dead[i] {
            for j in 0..c {
                if i != j {
                    s[(i, j)] = 0.0;
                    s[(j, i)] = 0.0;
                }
            }
        }
    }
    s
}

pub fn mean_abs_off_diagonal(s: &Matrix) -> f64 {
    let c = s.rows();
    if c < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                total += s[(i, j)].abs();
            }
        }
    }
    total / (c * (c - 1)) as f64
}

/// Row-stacked decoders from several domains, with each domain's row block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatClassifier {
    pub weights: ClassifierWeights,
    pub blocks: Vec<Range<usize>>,
}

pub fn concat_classifiers(decoders: &[ClassifierWeights]) -> Result<ConcatClassifier> {
    let first = decoders
        .first()
        .ok_or_else(|| Error::Range("nothing to concatenate".into()))?;
    let f = first.feature_dim();
    let mut blocks = Vec::with_capacity(decoders.len());
    let mut offset = 0;
    for d in decoders {
        if d.feature_dim() != f {
            return Err(Error::dim("concatenated decoder feature dim", f, d.feature_dim()));
        }
        blocks.push(offset..offset + d.num_classes());
        offset += d.num_classes();
    }
    let mats: Vec<&Matrix> = decoders.iter().map(|d| &d.weight).collect();
    Ok(ConcatClassifier {
        weights: ClassifierWeights::new(Matrix::vstack(&mats)?)?,
        blocks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainAccuracy {
    /// Argmax restricted to the domain's own block.
    pub specific_top1: f64,
    /// Argmax over every block; correct only when it hits the true block and class.
    pub agnostic_top1: f64,
}

impl ConcatClassifier {
    pub fn domain_accuracy(&self, domain: usize, normalized: &FeatureMatrix, labels: &[usize]) -> Result<DomainAccuracy> {
        let block = self
            .blocks
            .get(domain)
            .cloned()
            .ok_or_else(|| Error::Range(format!("no decoder block for domain {domain}")))?;
        let logits = classifier_forward(&self.weights, normalized)?;
        if labels.is_empty() {
            return Ok(DomainAccuracy {
                specific_top1: 0.0,
                agnostic_top1: 0.0,
            });
        }
        let (mut specific, mut agnostic) = (0usize, 0usize);
        for (row, &y) in logits.row_iter().zip(labels) {
            if y >= block.len() {
                return Err(Error::Label {
                    label: y,
                    num_classes: block.len(),
                });
            }
            if argmax(&row[block.clone()]) == y {
                specific += 1;
            }
            if argmax(row) == block.start + y {
                agnostic += 1;
            }
        }
        let n = labels.len() as f64;
        Ok(DomainAccuracy {
            specific_top1: specific as f64 / n,
            agnostic_top1: agnostic as f64 / n,
        })
    }
}

/// Validation set embedded once through both paths, for repeated scoring
/// of changing decoders.
#[derive(Debug, Clone)]
pub struct PathEvaluator {
    pub client_features: FeatureMatrix,
    pub server_features: FeatureMatrix,
    pub labels: Vec<usize>,
    /// Score every `every`-th round; the last round is always scored.
    pub every: usize,
    pub total_rounds: usize,
}

impl PathEvaluator {
    pub fn new(
        teacher: &SyntheticEncoder,
        student: &SyntheticEncoder,
        translator: &Translator,
        validation: &FeatureBatch,
        eps: f64,
    ) -> Result<Self> {
        if teacher.out_dim() != translator.out_dim() {
            return Err(Error::dim("teacher vs translator feature dim", teacher.out_dim(), translator.out_dim()));
        }
        Ok(Self {
            client_features: l2_normalize(&student_embed(student, translator, validation)?, eps)?,
            server_features: l2_normalize(&teacher_embed(teacher, validation)?, eps)?,
            labels: validation.labels.clone(),
            every: 1,
            total_rounds: 0,
        })
    }

    pub fn client(&self, decoder: &ClassifierWeights) -> Result<Accuracy> {
        decoder_accuracy(decoder, &self.client_features, &self.labels)
    }

    pub fn server(&self, decoder: &ClassifierWeights) -> Result<Accuracy> {
        decoder_accuracy(decoder, &self.server_features, &self.labels)
    }

    /// Client-path confusion matrix.
    pub fn confusion(&self, decoder: &ClassifierWeights) -> Result<Vec<Vec<u64>>> {
        let logits = classifier_forward(decoder, &self.client_features)?;
        confusion_matrix(&predictions(&logits), &self.labels, decoder.num_classes())
    }

    pub fn should_score(&self, round: usize) -> bool {
        self.every <= 1 || round.is_multiple_of(self.every) || round == self.total_rounds
    }
}

/// One federated round as observed by the server.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub sigma: Option<f64>,
    pub client: Option<Accuracy>,
    pub server: Option<Accuracy>,
    pub participants: usize,
    pub surviving: usize,
    pub skipped: bool,
    /// Largest post-clipping update norm this round (DP runs only).
    pub max_clipped_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub rounds: Vec<RoundRecord>,
    /// Pre-clipping update norms of every update that reached the server.
    pub update_norms: Vec<f64>,
    pub confusion: Option<Vec<Vec<u64>>>,
    pub self_similarity: Option<Matrix>,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&RoundRecord> {
        self.rounds.last()
    }

    pub fn successful_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| !r.skipped).count()
    }
}
