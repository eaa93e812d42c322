use rand::seq::SliceRandom;

use super::aggregate::Aggregation;
use super::regularize::{cdb_apply, fedprox_penalty, icp_apply, ActiveClassSet};
use super::{ActiveScope, FederationConfig};
use crate::error::{Error, Result};
use crate::losses::classifier_ce_gradient;
use crate::model::{l2_normalize, student_embed, ClassifierWeights, FeatureBatch, SyntheticEncoder, Translator, NORMALIZE_EPS};
use crate::optim::{adam_step, AdamState};
use crate::rng::{stream_rng, Stream};

/// One client's local data, already mapped through the frozen student
/// encoder and translator and L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    pub features: FeatureBatch,
}

impl ClientState {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Embeds every client's raw shard once; the client path is frozen during federation.
pub fn build_clients(
    student: &SyntheticEncoder,
    translator: &Translator,
    shards: &[FeatureBatch],
) -> Result<Vec<ClientState>> {
    shards
        .iter()
        .enumerate()
        .map(|(client_id, shard)| {
            let features = if shard.is_empty() {
                FeatureBatch::empty(translator.out_dim())
            } else {
                let f = l2_normalize(&student_embed(student, translator, shard)?, NORMALIZE_EPS)?;
                shard.with_features(f)?
            };
            Ok(ClientState { client_id, features })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundResult {
    pub weights: ClassifierWeights,
    pub sample_count: usize,
    /// The client had no data and returned the incoming decoder untouched.
    pub zero_work: bool,
}

/// Local training of the decoder for `local_epochs` epochs of
/// `⌊|D_k| / B⌋` batches each, with ICP after every epoch and CDB at the end.
pub fn client_round(
    state: &ClientState,
    incoming: &ClassifierWeights,
    round: usize,
    lr: f64,
    cfg: &FederationConfig,
) -> Result<ClientRoundResult> {
    if state.features.dim() != incoming.feature_dim() && !state.is_empty() {
        return Err(Error::dim("client features vs decoder", incoming.feature_dim(), state.features.dim()));
    }
    if state.is_empty() {
        return Ok(ClientRoundResult {
            weights: incoming.clone(),
            sample_count: 0,
            zero_work: true,
        });
    }
    state.features.check_labels(incoming.num_classes())?;

    let n = state.len();
    let b = cfg.batch_size;
    let batches = n / b;
    let mut rng = stream_rng(cfg.seed, Stream::ClientLocal, &[round as u64, state.client_id as u64]);
    let mut w = incoming.clone();
    let mut previous = incoming.clone();
    let mut adam = AdamState::for_param(&w.weight);
    let mut order: Vec<usize> = (0..n).collect();
    let mut active = ActiveClassSet::new();

    for epoch in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        active.clear();
        for chunk in order.chunks_exact(b).take(batches) {
            let batch = state.features.subset(chunk);
            if cfg.active_scope == ActiveScope::LastBatch {
                active.clear();
            }
            active.extend(&batch.labels);
            let (_, mut grad) = classifier_ce_gradient(&w, &batch.features, &batch.labels)?;
            if let Aggregation::FedProx { mu } = cfg.aggregation {
                let (_, prox) = fedprox_penalty(&w, incoming, mu)?;
                grad.add_assign_scaled(&prox, 1.0)?;
            }
            adam_step(&mut w.weight, &grad, &mut adam, lr)?;
        }
        if !w.weight.is_finite() {
            return Err(Error::Numeric(format!(
                "client {} diverged in round {round}, local epoch {}",
                state.client_id,
                epoch + 1
            )));
        }
        if cfg.icp {
            w = icp_apply(&w, &previous, &active, cfg.eta)?;
        }
        previous = w.clone();
    }
    if cfg.cdb {
        w = cdb_apply(&w);
    }
    Ok(ClientRoundResult {
        weights: w,
        sample_count: n,
        zero_work: false,
    })
}
