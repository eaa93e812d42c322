use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ClassifierWeights;

/// Server-side combination rule. FedProx aggregates like FedAvg; its
/// proximal term acts during local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregation {
    FedAvg,
    FedAvgEma { rate: f64 },
    FedProx { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Weight each update by its client's sample count.
    #[default]
    Samples,
    Uniform,
}

/// A decoder returned by one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub weights: ClassifierWeights,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateOutcome {
    pub weights: ClassifierWeights,
    /// No usable update arrived; `weights` is the previous global decoder.
    pub skipped: bool,
}

/// Combines updates in ascending `client_id` order so the floating-point
/// summation order never depends on arrival order.
pub fn aggregate(
    updates: &[ClientUpdate],
    aggregation: Aggregation,
    weighting: Weighting,
    previous_global: &ClassifierWeights,
) -> Result<AggregateOutcome> {
    let mut order: Vec<&ClientUpdate> = updates
        .iter()
        .filter(|u| weighting == Weighting::Uniform || u.sample_count > 0)
        .collect();
    if order.is_empty() {
        return Ok(AggregateOutcome {
            weights: previous_global.clone(),
            skipped: true,
        });
    }
    order.sort_by_key(|u| u.client_id);

    let (rows, cols) = previous_global.weight.shape();
    let total: f64 = order
        .iter()
        .map(|u| match weighting {
            Weighting::Samples => u.sample_count as f64,
            Weighting::Uniform => 1.0,
        })
        .sum();
    let mut acc = Matrix::zeros(rows, cols);
    for u in &order {
        let w = match weighting {
            Weighting::Samples => u.sample_count as f64,
            Weighting::Uniform => 1.0,
        };
        acc.add_assign_scaled(&u.weights.weight, w / total)?;
    }
    let mean = match aggregation {
        Aggregation::FedAvg | Aggregation::FedProx { .. } => acc,
        Aggregation::FedAvgEma { rate } => {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Range(format!("EMA rate must lie in [0, 1], got {rate}")));
            }
            acc.zip_with(&previous_global.weight, |a, p| rate * a + (1.0 - rate) * p)?
        }
    };
    Ok(AggregateOutcome {
        weights: ClassifierWeights::new(mean)?,
        skipped: false,
    })
}
