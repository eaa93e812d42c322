//! Decoder regularizers: inactive-class preservation (ICP), class
//! de-biasing (CDB) and the FedProx proximal term.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ClassifierWeights;

/// Classes observed by a client during the current local epoch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActiveClassSet(BTreeSet<usize>);

impl ActiveClassSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels(labels: &[usize]) -> Self {
        Self(labels.iter().copied().collect())
    }

    pub fn all(num_classes: usize) -> Self {
        Self((0..num_classes).collect())
    }

    pub fn extend(&mut self, labels: &[usize]) {
        self.0.extend(labels.iter().copied());
    }

    pub fn clear(&mut self) {
        self.0.clear();
    }

    pub fn contains(&self, c: usize) -> bool {
        self.0.contains(&c)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

/// Rows of inactive classes become `η·current + (1−η)·previous`; active rows
/// keep the current value.
pub fn icp_apply(
    current: &ClassifierWeights,
    previous: &ClassifierWeights,
    active: &ActiveClassSet,
    eta: f64,
) -> Result<ClassifierWeights> {
    current.weight.check_same_shape(&previous.weight, "ICP snapshots")?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Range(format!("ICP eta must lie in [0, 1], got {eta}")));
    }
    let c = current.num_classes();
    if let Some(bad) = active.iter().find(|&a| a >= c) {
        return Err(Error::Label {
            label: bad,
            num_classes: c,
        });
    }
    let mut out = current.weight.clone();
    for class in (0..c).filter(|&k| !active.contains(k)) {
        for (o, &p) in out.row_mut(class).iter_mut().zip(previous.weight.row(class)) {
            *o = eta * *o + (1.0 - eta) * p;
        }
    }
    Ok(ClassifierWeights { weight: out })
}

/// Subtracts the class-mean from every feature column of `ω`.
pub fn cdb_apply(w: &ClassifierWeights) -> ClassifierWeights {
    let (c, f) = w.weight.shape();
    if c == 0 {
        return w.clone();
    }
    let mut mean = vec![0.0; f];
    for row in w.weight.row_iter() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    let mut out = w.weight.clone();
    for r in 0..c {
        for (o, &m) in out.row_mut(r).iter_mut().zip(&mean) {
            *o -= m;
        }
    }
    ClassifierWeights { weight: out }
}

/// `(μ/2)·‖ω − ω_ref‖²` and its gradient `μ·(ω − ω_ref)`.
pub fn fedprox_penalty(local: &ClassifierWeights, global_ref: &ClassifierWeights, mu: f64) -> Result<(f64, Matrix)> {
    let diff = local.weight.sub(&global_ref.weight)?;
    let sq: f64 = diff.as_slice().iter().map(|v| v * v).sum();
    Ok((0.5 * mu * sq, diff.scale(mu)))
}
