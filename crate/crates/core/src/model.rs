//! Encoders, translator, normalization and the shared linear decoder.
//!
//! A client model is `decoder ∘ normalize ∘ translator ∘ student`, the server
//! model is `decoder ∘ normalize ∘ teacher`. Both sides feed the same decoder,
//! so its rows live in the teacher feature space.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

pub type FeatureMatrix = Matrix;
pub type LogitsMatrix = Matrix;
pub type ProbMatrix = Matrix;

/// Rows with Euclidean norm below this pass through `l2_normalize` untouched.
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    #[default]
    None,
    Tanh,
}

impl Nonlinearity {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::None => v,
            Nonlinearity::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    pub fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Nonlinearity::None => 1.0,
            Nonlinearity::Tanh => 1.0 - out * out,
        }
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Nonlinearity::None),
            "tanh" => Ok(Nonlinearity::Tanh),
            other => Err(Error::Config(format!("unknown nonlinearity '{other}' (expected none|tanh)"))),
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nonlinearity::None => "none",
            Nonlinearity::Tanh => "tanh",
        })
    }
}

/// Linear map `R^in_dim → R^out_dim`, optionally followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEncoder {
    pub weight: Matrix,
    pub nonlinearity: Nonlinearity,
}

impl SyntheticEncoder {
    pub fn new(weight: Matrix) -> Result<Self> {
        Self::with_nonlinearity(weight, Nonlinearity::None)
    }

    pub fn with_nonlinearity(weight: Matrix, nonlinearity: Nonlinearity) -> Result<Self> {
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(Error::Range("encoder dimensions must be positive".into()));
        }
        if !weight.is_finite() {
            return Err(Error::Numeric("encoder weight".into()));
        }
        Ok(Self { weight, nonlinearity })
    }

    /// Gaussian init with variance `1/in_dim`, so outputs have roughly unit scale.
    pub fn random<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, nonlinearity: Nonlinearity, rng: &mut R) -> Self {
        let weight = Matrix::random_normal(out_dim, in_dim, (1.0 / in_dim as f64).sqrt(), rng);
        Self { weight, nonlinearity }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn encode(&self, inputs: &Matrix) -> Result<FeatureMatrix> {
        if inputs.cols() != self.in_dim() {
            return Err(Error::dim("encoder input", self.in_dim(), inputs.cols()));
        }
        let pre = inputs.matmul_t(&self.weight)?;
        Ok(match self.nonlinearity {
            Nonlinearity::None => pre,
            n => pre.map(|v| n.apply(v)),
        })
    }
}

/// Linear map from the student feature space `R^F'` into the teacher space `R^F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Translator {
    pub weight: Matrix,
}

impl Translator {
    pub fn new(weight: Matrix) -> Result<Self> {
        if !weight.is_finite() {
            return Err(Error::Numeric("translator weight".into()));
        }
        Ok(Self { weight })
    }

    pub fn random<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Matrix::random_normal(out_dim, in_dim, (1.0 / in_dim as f64).sqrt(), rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn translate(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if features.cols() != self.in_dim() {
            return Err(Error::dim("translator input", self.in_dim(), features.cols()));
        }
        features.matmul_t(&self.weight)
    }
}

/// Bias-free decoder `ω ∈ R^{C×F}`; the only component trained by clients.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    pub weight: Matrix,
}

impl ClassifierWeights {
    pub fn new(weight: Matrix) -> Result<Self> {
        if !weight.is_finite() {
            return Err(Error::Numeric("classifier weight".into()));
        }
        Ok(Self { weight })
    }

    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(num_classes, feature_dim),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Samples (one per row) with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl FeatureBatch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dim("batch labels", features.rows(), labels.len()));
        }
        Ok(Self { features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            features: Matrix::zeros(0, dim),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Same labels, different feature representation.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        Self::new(features, self.labels.clone())
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l >= num_classes) {
            Some(&label) => Err(Error::Label { label, num_classes }),
            None => Ok(()),
        }
    }
}

pub fn teacher_embed(encoder: &SyntheticEncoder, batch: &FeatureBatch) -> Result<FeatureMatrix> {
    encoder.encode(&batch.features)
}

pub fn student_embed(
    encoder: &SyntheticEncoder,
    translator: &Translator,
    batch: &FeatureBatch,
) -> Result<FeatureMatrix> {
    if encoder.out_dim() != translator.in_dim() {
        return Err(Error::dim("student/translator interface", translator.in_dim(), encoder.out_dim()));
    }
    translator.translate(&encoder.encode(&batch.features)?)
}

/// Scales every row to unit length; rows shorter than `epsilon` are copied as-is.
pub fn l2_normalize(features: &FeatureMatrix, epsilon: f64) -> Result<FeatureMatrix> {
    if !(epsilon > 0.0) {
        return Err(Error::Range(format!("normalization epsilon must be positive, got {epsilon}")));
    }
    if !features.is_finite() {
        return Err(Error::Numeric("features passed to l2_normalize".into()));
    }
    let mut out = features.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = norm(row);
        if n >= epsilon {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok(out)
}

pub fn classifier_forward(w: &ClassifierWeights, features: &FeatureMatrix) -> Result<LogitsMatrix> {
    if features.cols() != w.feature_dim() {
        return Err(Error::dim("classifier input", w.feature_dim(), features.cols()));
    }
    features.matmul_t(&w.weight)
}

/// Row-wise softmax with max subtraction.
pub fn predict_probs(logits: &LogitsMatrix) -> ProbMatrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    fn batch(rows: &[&[f64]]) -> FeatureBatch {
        let m = Matrix::from_rows(rows);
        let n = m.rows();
        FeatureBatch::new(m, vec![0; n]).unwrap()
    }

    #[test]
    fn teacher_embed_examples() {
        let id = SyntheticEncoder::new(Matrix::identity(2)).unwrap();
        assert_eq!(teacher_embed(&id, &batch(&[&[1.0, 2.0]])).unwrap().row(0), &[1.0, 2.0]);

        let enc = SyntheticEncoder::new(Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])).unwrap();
        assert_eq!(teacher_embed(&enc, &batch(&[&[3.0, 4.0]])).unwrap().row(0), &[3.0, 8.0, 7.0]);

        let zero = SyntheticEncoder::new(Matrix::zeros(3, 2)).unwrap();
        assert_eq!(teacher_embed(&zero, &batch(&[&[5.0, -1.0]])).unwrap().row(0), &[0.0; 3]);

        assert!(matches!(
            teacher_embed(&enc, &batch(&[&[1.0, 2.0, 3.0]])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn student_embed_examples() {
        let enc = SyntheticEncoder::new(Matrix::from_rows(&[[1.0, 0.0]])).unwrap();
        let tr = Translator::new(Matrix::from_rows(&[[2.0], [3.0]])).unwrap();
        let b = batch(&[&[5.0, 9.0]]);
        let out = student_embed(&enc, &tr, &b).unwrap();
        assert_eq!(out.row(0), &[10.0, 15.0]);
        let two_step = tr.translate(&enc.encode(&b.features).unwrap()).unwrap();
        assert_eq!(out, two_step);

        let id_tr = Translator::new(Matrix::identity(1)).unwrap();
        assert_eq!(student_embed(&enc, &id_tr, &b).unwrap(), teacher_embed(&enc, &b).unwrap());

        let wide = Translator::new(Matrix::zeros(2, 3)).unwrap();
        assert!(student_embed(&enc, &wide, &b).is_err());
    }

    #[test]
    fn normalize_examples() {
        let m = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]);
        let n = l2_normalize(&m, NORMALIZE_EPS).unwrap();
        assert!((n[(0, 0)] - 0.6).abs() < 1e-15 && (n[(0, 1)] - 0.8).abs() < 1e-15);
        assert_eq!(n.row(1), &[0.0, 0.0]);
        assert!(l2_normalize(&m, 0.0).is_err());
        assert!(matches!(
            l2_normalize(&Matrix::from_rows(&[[f64::NAN, 1.0]]), NORMALIZE_EPS),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn forward_and_softmax_examples() {
        let id = ClassifierWeights::new(Matrix::identity(2)).unwrap();
        let f = Matrix::from_rows(&[[1.0, -1.0]]);
        assert_eq!(classifier_forward(&id, &f).unwrap().row(0), &[1.0, -1.0]);

        let w = ClassifierWeights::new(Matrix::from_rows(&[[1.0, 1.0], [2.0, 0.0]])).unwrap();
        assert_eq!(classifier_forward(&w, &Matrix::from_rows(&[[3.0, 4.0]])).unwrap().row(0), &[7.0, 6.0]);
        assert_eq!(classifier_forward(&w, &Matrix::zeros(1, 2)).unwrap().row(0), &[0.0, 0.0]);
        assert!(classifier_forward(&w, &Matrix::zeros(1, 3)).is_err());

        let p = predict_probs(&Matrix::from_rows(&[[0.0, 0.0], [1f64.ln(), 3f64.ln()]]));
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert!((p[(1, 0)] - 0.25).abs() < 1e-15 && (p[(1, 1)] - 0.75).abs() < 1e-15);
    }

    fn small_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
        (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
            prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(logits in small_matrix(6, 8)) {
            let p = predict_probs(&logits);
            let shifted = predict_probs(&logits.map(|v| v + 1000.0));
            for r in 0..p.rows() {
                prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for (a, b) in p.as_slice().iter().zip(shifted.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn normalize_is_idempotent(m in small_matrix(6, 8)) {
            let once = l2_normalize(&m, NORMALIZE_EPS).unwrap();
            let twice = l2_normalize(&once, NORMALIZE_EPS).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn forward_shapes_and_composition(b in 1usize..6, d in 1usize..6, fp in 1usize..6, f in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
            let mut rng = stream_rng(seed, Stream::Init, &[]);
            let enc = SyntheticEncoder::random(fp, d, Nonlinearity::None, &mut rng);
            let tr = Translator::random(f, fp, &mut rng);
            let w = ClassifierWeights::new(Matrix::random_normal(c, f, 1.0, &mut rng)).unwrap();
            let x = FeatureBatch::new(Matrix::random_normal(b, d, 1.0, &mut rng), vec![0; b]).unwrap();

            let feats = student_embed(&enc, &tr, &x).unwrap();
            prop_assert_eq!(feats.shape(), (b, f));
            prop_assert_eq!(classifier_forward(&w, &feats).unwrap().shape(), (b, c));

            let composed = SyntheticEncoder::new(tr.weight.matmul(&enc.weight).unwrap()).unwrap();
            let direct = teacher_embed(&composed, &x).unwrap();
            for (a, z) in feats.as_slice().iter().zip(direct.as_slice()) {
                prop_assert!((a - z).abs() < 1e-12);
            }
        }
    }
}
