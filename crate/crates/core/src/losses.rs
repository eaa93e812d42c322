//! Cross-entropy and feature-distillation losses with analytic gradients
//! through the fixed linear stack (student encoder, translator, L2
//! normalization, bias-free decoder).

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::model::{
    classifier_forward, l2_normalize, softmax_in_place, ClassifierWeights, FeatureBatch, FeatureMatrix,
    LogitsMatrix, Nonlinearity, SyntheticEncoder, Translator,
};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l1_term: f64,
    pub l2_term: f64,
    pub cos_term: f64,
    pub ce_term: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn kd_total(&self) -> f64 {
        self.l1_term + self.l2_term + self.cos_term
    }

    pub fn is_finite(&self) -> bool {
        [self.l1_term, self.l2_term, self.cos_term, self.ce_term, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= num_classes) {
        Some(&label) => Err(Error::Label { label, num_classes }),
        None => Ok(()),
    }
}

/// Mean negative log-likelihood of `labels` under the row-wise softmax of `logits`.
pub fn cross_entropy(logits: &LogitsMatrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::dim("cross-entropy labels", logits.rows(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Range("cross-entropy over an empty batch".into()));
    }
    check_labels(labels, logits.cols())?;
    let total: f64 = logits
        .row_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// `ℓ1` and `ℓ2` are means over batch and feature entries; the cosine term is
/// the batch mean of `1 − cos(F_b, O_b)`, counting a zero-norm row as 1.
pub fn kd_loss(student: &FeatureMatrix, teacher: &FeatureMatrix) -> Result<LossBreakdown> {
    Ok(kd_loss_and_grad(student, teacher, KdTerms::ALL)?.0)
}

/// Which distillation distances participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdTerms {
    pub l1: bool,
    pub l2: bool,
    pub cos: bool,
}

impl KdTerms {
    pub const ALL: KdTerms = KdTerms {
        l1: true,
        l2: true,
        cos: true,
    };
    pub const NONE: KdTerms = KdTerms {
        l1: false,
        l2: false,
        cos: false,
    };
}

/// Distillation loss and its gradient with respect to the student features.
pub fn kd_loss_and_grad(
    student: &FeatureMatrix,
    teacher: &FeatureMatrix,
    terms: KdTerms,
) -> Result<(LossBreakdown, Matrix)> {
    student.check_same_shape(teacher, "student/teacher features")?;
    let (b, f) = student.shape();
    if b == 0 {
        return Err(Error::Range("distillation over an empty batch".into()));
    }
    let elem = (b * f) as f64;
    let mut loss = LossBreakdown::default();
    let mut grad = Matrix::zeros(b, f);

    for r in 0..b {
        let s = student.row(r);
        let t = teacher.row(r);
        let g = grad.row_mut(r);
        for ((gv, &sv), &tv) in g.iter_mut().zip(s).zip(t) {
            let diff = sv - tv;
            if terms.l1 {
                loss.l1_term += diff.abs();
                // subgradient 0 at the kink
                *gv += if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                } / elem;
            }
            if terms.l2 {
                loss.l2_term += diff * diff;
                *gv += 2.0 * diff / elem;
            }
        }
        if terms.cos {
            let ns = norm(s);
            let nt = norm(t);
            if ns == 0.0 || nt == 0.0 {
                loss.cos_term += 1.0;
            } else {
                let st = dot(s, t);
                let cos = st / (ns * nt);
                loss.cos_term += 1.0 - cos;
                for ((gv, &sv), &tv) in g.iter_mut().zip(s).zip(t) {
                    *gv -= (tv / (ns * nt) - cos * sv / (ns * ns)) / b as f64;
                }
            }
        }
    }
    loss.l1_term /= elem;
    loss.l2_term /= elem;
    loss.cos_term /= b as f64;
    loss.total = loss.kd_total();
    Ok((loss, grad))
}

/// `L_KD + λ·L_CE`.
pub fn pretrain_objective(
    student: &FeatureMatrix,
    teacher: &FeatureMatrix,
    logits: &LogitsMatrix,
    labels: &[usize],
    lambda: f64,
) -> Result<LossBreakdown> {
    let mut loss = kd_loss(student, teacher)?;
    loss.ce_term = cross_entropy(logits, labels)?;
    loss.lambda = lambda;
    loss.total = loss.kd_total() + lambda * loss.ce_term;
    Ok(loss)
}

/// Mean cross-entropy of the decoder on (already normalized) features and
/// the gradient with respect to `ω`: `mean_b (p_b − onehot(y_b)) f_bᵀ`.
pub fn classifier_ce_gradient(
    w: &ClassifierWeights,
    features: &FeatureMatrix,
    labels: &[usize],
) -> Result<(f64, Matrix)> {
    let (loss, dlogits) = ce_logit_gradient(&classifier_forward(w, features)?, labels)?;
    Ok((loss, dlogits.t_matmul(features)?))
}

/// Cross-entropy and its gradient with respect to the logits (already divided by batch size).
pub fn ce_logit_gradient(logits: &LogitsMatrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let loss = cross_entropy(logits, labels)?;
    let b = labels.len() as f64;
    let mut grad = logits.clone();
    for (r, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        softmax_in_place(row);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= b);
    }
    Ok((loss, grad))
}

/// Backpropagates through `l2_normalize`: for `n = f/|f|`,
/// `∂L/∂f = (g − n(n·g)) / |f|`; rows below `epsilon` were passed through.
pub fn normalize_backward(raw: &FeatureMatrix, grad_normalized: &Matrix, epsilon: f64) -> Result<Matrix> {
    raw.check_same_shape(grad_normalized, "normalize backward")?;
    let mut out = grad_normalized.clone();
    for r in 0..raw.rows() {
        let f = raw.row(r);
        let nf = norm(f);
        if nf < epsilon {
            continue;
        }
        let g = out.row_mut(r);
        let ng: f64 = f.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>() / nf;
        for (gv, &fv) in g.iter_mut().zip(f) {
            *gv = (*gv - fv / nf * ng) / nf;
        }
    }
    Ok(out)
}

/// Objective on the student branch during pretraining.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kd: KdTerms,
    /// Weight `λ` of the cross-entropy through the frozen decoder.
    pub ce_weight: f64,
    pub normalize_eps: f64,
}

impl LossSpec {
    pub fn pretrain(lambda: f64) -> Self {
        Self {
            kd: KdTerms::ALL,
            ce_weight: lambda,
            normalize_eps: crate::model::NORMALIZE_EPS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudentGradients {
    pub loss: LossBreakdown,
    pub translator: Matrix,
    /// Present only when the raw student encoder is trainable.
    pub encoder: Option<Matrix>,
}

/// Gradients of the student-branch objective. The decoder is treated as a
/// constant: no gradient for `ω` is produced here.
pub fn student_path_gradients(
    encoder: &SyntheticEncoder,
    translator: &Translator,
    classifier: &ClassifierWeights,
    batch: &FeatureBatch,
    teacher: &FeatureMatrix,
    spec: &LossSpec,
    encoder_grad: bool,
) -> Result<StudentGradients> {
    let z = encoder.encode(&batch.features)?;
    let f = translator.translate(&z)?;
    let (mut loss, mut df) = kd_loss_and_grad(&f, teacher, spec.kd)?;
    loss.lambda = spec.ce_weight;

    if spec.ce_weight != 0.0 {
        let n = l2_normalize(&f, spec.normalize_eps)?;
        let logits = classifier_forward(classifier, &n)?;
        let (ce, dlogits) = ce_logit_gradient(&logits, &batch.labels)?;
        let dn = dlogits.matmul(&classifier.weight)?;
        let dce = normalize_backward(&f, &dn, spec.normalize_eps)?;
        df.add_assign_scaled(&dce, spec.ce_weight)?;
        loss.ce_term = ce;
    } else {
        loss.ce_term = cross_entropy(
            &classifier_forward(classifier, &l2_normalize(&f, spec.normalize_eps)?)?,
            &batch.labels,
        )?;
    }
    loss.total = loss.kd_total() + spec.ce_weight * loss.ce_term;

    let translator_grad = df.t_matmul(&z)?;
    let encoder_grad = if encoder_grad {
        let mut dz = df.matmul(&translator.weight)?;
        if encoder.nonlinearity != Nonlinearity::None {
            for (g, &zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *g *= encoder.nonlinearity.derivative_from_output(zv);
            }
        }
        Some(dz.t_matmul(&batch.features)?)
    } else {
        None
    };

    Ok(StudentGradients {
        loss,
        translator: translator_grad,
        encoder: encoder_grad,
    })
}
