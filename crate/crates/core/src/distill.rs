//! Server-side cross-architecture pretraining.
//!
//! Each batch makes two updates. The decoder is fit with cross-entropy on
//! normalized teacher features only. Then the translator (and optionally the
//! raw student encoder) is fit to `L_KD + λ·L_CE`, where the cross-entropy
//! runs the student features through the decoder held constant.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::{client_eval, server_plug_eval, Accuracy};
use crate::linalg::{dot, norm};
use crate::losses::{classifier_ce_gradient, student_path_gradients, LossBreakdown, LossSpec};
use crate::model::{
    l2_normalize, student_embed, teacher_embed, ClassifierWeights, FeatureBatch, FeatureMatrix, SyntheticEncoder,
    Translator, NORMALIZE_EPS,
};
use crate::optim::{adam_step, cosine_lr, AdamState};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lambda: f64,
    pub train_student_encoder: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 64,
            lr_max: 0.005,
            lambda: 0.5,
            train_student_encoder: false,
            seed: 42,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("pretrain epochs and batch_size must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !(self.lr_max >= 0.0) {
            return Err(Error::Config("pretrain lambda and lr_max must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Batch-averaged student-branch loss.
    pub loss: LossBreakdown,
    /// Batch-averaged teacher-branch cross-entropy.
    pub teacher_ce: f64,
    pub client: Option<Accuracy>,
    pub server: Option<Accuracy>,
}

/// Mutable pretraining state: the teacher is read-only.
#[derive(Debug, Clone)]
pub struct Pretrainer {
    pub teacher: SyntheticEncoder,
    pub student: SyntheticEncoder,
    pub translator: Translator,
    pub classifier: ClassifierWeights,
    pub lambda: f64,
    pub train_student_encoder: bool,
    classifier_opt: AdamState,
    translator_opt: AdamState,
    student_opt: AdamState,
}

#[derive(Debug, Clone, Copy)]
pub struct StepLoss {
    pub student: LossBreakdown,
    pub teacher_ce: f64,
}

impl Pretrainer {
    pub fn new(
        teacher: SyntheticEncoder,
        student: SyntheticEncoder,
        translator: Translator,
        classifier: ClassifierWeights,
        lambda: f64,
        train_student_encoder: bool,
    ) -> Result<Self> {
        if student.out_dim() != translator.in_dim() {
            return Err(Error::dim("student/translator interface", translator.in_dim(), student.out_dim()));
        }
        if teacher.out_dim() != translator.out_dim() {
            return Err(Error::dim("teacher/translator feature dim", teacher.out_dim(), translator.out_dim()));
        }
        if teacher.in_dim() != student.in_dim() {
            return Err(Error::dim("teacher/student input dim", teacher.in_dim(), student.in_dim()));
        }
        if classifier.feature_dim() != teacher.out_dim() {
            return Err(Error::dim("classifier feature dim", teacher.out_dim(), classifier.feature_dim()));
        }
        Ok(Self {
            classifier_opt: AdamState::for_param(&classifier.weight),
            translator_opt: AdamState::for_param(&translator.weight),
            student_opt: AdamState::for_param(&student.weight),
            teacher,
            student,
            translator,
            classifier,
            lambda,
            train_student_encoder,
        })
    }

    /// Decoder update on teacher features; returns the batch cross-entropy.
    pub fn step_teacher_only(&mut self, batch: &FeatureBatch, teacher_features: &FeatureMatrix, lr: f64) -> Result<f64> {
        let o = l2_normalize(teacher_features, NORMALIZE_EPS)?;
        let (ce, grad) = classifier_ce_gradient(&self.classifier, &o, &batch.labels)?;
        adam_step(&mut self.classifier.weight, &grad, &mut self.classifier_opt, lr)?;
        Ok(ce)
    }

    /// Full step: decoder first, then the student branch against the updated, frozen decoder.
    pub fn step(&mut self, batch: &FeatureBatch, lr: f64) -> Result<StepLoss> {
        let o = teacher_embed(&self.teacher, batch)?;
        let teacher_ce = self.step_teacher_only(batch, &o, lr)?;
        let grads = student_path_gradients(
            &self.student,
            &self.translator,
            &self.classifier,
            batch,
            &o,
            &LossSpec::pretrain(self.lambda),
            self.train_student_encoder,
        )?;
        adam_step(&mut self.translator.weight, &grads.translator, &mut self.translator_opt, lr)?;
        if let Some(g) = &grads.encoder {
            adam_step(&mut self.student.weight, g, &mut self.student_opt, lr)?;
        }
        Ok(StepLoss {
            student: grads.loss,
            teacher_ce,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub translator: Translator,
    /// Present when the student encoder was trained.
    pub student: Option<SyntheticEncoder>,
    pub classifier: ClassifierWeights,
    pub history: Vec<EpochRecord>,
}

/// Runs `cfg.epochs` epochs over `data` with a per-epoch cosine learning rate.
/// When `validation` is given, every epoch also records client- and
/// server-path accuracy of the current decoder.
pub fn pretrain(
    teacher: &SyntheticEncoder,
    student: &SyntheticEncoder,
    translator: &Translator,
    classifier: &ClassifierWeights,
    data: &FeatureBatch,
    cfg: &PretrainConfig,
    validation: Option<&FeatureBatch>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Range("pretraining data is empty".into()));
    }
    data.check_labels(classifier.num_classes())?;
    let mut state = Pretrainer::new(
        teacher.clone(),
        student.clone(),
        translator.clone(),
        classifier.clone(),
        cfg.lambda,
        cfg.train_student_encoder,
    )?;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max)?;
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::PretrainShuffle, &[epoch as u64]));

        let mut sum = LossBreakdown {
            lambda: cfg.lambda,
            ..LossBreakdown::default()
        };
        let mut teacher_ce = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.subset(chunk);
            let step = state.step(&batch, lr)?;
            if !step.student.is_finite() || !step.teacher_ce.is_finite() {
                return Err(Error::Numeric(format!("pretraining loss diverged at epoch {epoch}, batch {b}")));
            }
            sum.l1_term += step.student.l1_term;
            sum.l2_term += step.student.l2_term;
            sum.cos_term += step.student.cos_term;
            sum.ce_term += step.student.ce_term;
            sum.total += step.student.total;
            teacher_ce += step.teacher_ce;
            batches += 1;
        }
        let nb = batches as f64;
        let loss = LossBreakdown {
            l1_term: sum.l1_term / nb,
            l2_term: sum.l2_term / nb,
            cos_term: sum.cos_term / nb,
            ce_term: sum.ce_term / nb,
            lambda: cfg.lambda,
            total: sum.total / nb,
        };
        let (client, server) = match validation {
            Some(v) => (
                Some(client_eval(&state.student, &state.translator, &state.classifier, v, NORMALIZE_EPS)?),
                Some(server_plug_eval(&state.teacher, &state.classifier, v, NORMALIZE_EPS)?),
            ),
            None => (None, None),
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            loss,
            teacher_ce: teacher_ce / nb,
            client,
            server,
        });
    }

    Ok(PretrainOutcome {
        translator: state.translator,
        student: cfg.train_student_encoder.then_some(state.student),
        classifier: state.classifier,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentReport {
    pub mean_cosine: f64,
    pub mean_l2: f64,
}

/// Agreement between normalized student-path and teacher features.
pub fn alignment_report(
    teacher: &SyntheticEncoder,
    student: &SyntheticEncoder,
    translator: &Translator,
    data: &FeatureBatch,
) -> Result<AlignmentReport> {
    let o = l2_normalize(&teacher_embed(teacher, data)?, NORMALIZE_EPS)?;
    let f = l2_normalize(&student_embed(student, translator, data)?, NORMALIZE_EPS)?;
    if data.is_empty() {
        return Ok(AlignmentReport {
            mean_cosine: 0.0,
            mean_l2: 0.0,
        });
    }
    let (mut cos, mut l2) = (0.0, 0.0);
    for (a, b) in f.row_iter().zip(o.row_iter()) {
        let (na, nb) = (norm(a), norm(b));
        if na > 0.0 && nb > 0.0 {
            cos += dot(a, b) / (na * nb);
        }
        l2 += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    }
    let n = data.len() as f64;
    Ok(AlignmentReport {
        mean_cosine: cos / n,
        mean_l2: l2 / n,
    })
}

/// Appends `tag class v_1 … v_F` lines for external plotting.
pub fn append_embeddings(path: impl AsRef<Path>, tag: &str, features: &FeatureMatrix, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (row, y) in features.row_iter().zip(labels) {
        let _ = write!(out, "{tag} {y}");
        for v in row {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
