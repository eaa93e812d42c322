use rand::Rng;

use super::aggregate::{aggregate, ClientUpdate};
use super::client::{client_round, ClientState};
use super::regularize::cdb_apply;
use super::FederationConfig;
use crate::error::{Error, Result};
use crate::eval::{weight_self_similarity, Accuracy, PathEvaluator, RoundRecord, RunMetrics};
use crate::exec::map_ordered;
use crate::model::ClassifierWeights;
use crate::optim::cosine_lr;
use crate::privacy::{clip_schedule, noise_sigma, privatize_update, sensitivity};
use crate::rng::{stream_rng, Stream};

/// Accuracies measured after a round; either path may be skipped.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RoundEval {
    pub client: Option<Accuracy>,
    pub server: Option<Accuracy>,
}

/// Called with the global decoder after every round.
pub trait RoundObserver {
    fn observe(&mut self, round: usize, global: &ClassifierWeights) -> Result<RoundEval>;

    /// Final confusion matrix, if the observer can compute one.
    fn finish(&mut self, _global: &ClassifierWeights) -> Result<Option<Vec<Vec<u64>>>> {
        Ok(None)
    }
}

/// Observer that records nothing.
pub struct NoEval;

impl RoundObserver for NoEval {
    fn observe(&mut self, _round: usize, _global: &ClassifierWeights) -> Result<RoundEval> {
        Ok(RoundEval::default())
    }
}

impl RoundObserver for PathEvaluator {
    fn observe(&mut self, round: usize, global: &ClassifierWeights) -> Result<RoundEval> {
        if !self.should_score(round) {
            return Ok(RoundEval::default());
        }
        Ok(RoundEval {
            client: Some(self.client(global)?),
            server: Some(self.server(global)?),
        })
    }

    fn finish(&mut self, global: &ClassifierWeights) -> Result<Option<Vec<Vec<u64>>>> {
        self.confusion(global).map(Some)
    }
}

impl<F> RoundObserver for F
where
    F: FnMut(usize, &ClassifierWeights) -> Result<RoundEval>,
{
    fn observe(&mut self, round: usize, global: &ClassifierWeights) -> Result<RoundEval> {
        self(round, global)
    }
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub decoder: ClassifierWeights,
    pub metrics: RunMetrics,
}

/// `K_A` distinct client ids drawn uniformly for `round`, ascending.
pub fn sample_active(seed: u64, round: usize, num_clients: usize, active: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, Stream::ClientSampling, &[round as u64]);
    let mut ids = rand::seq::index::sample(&mut rng, num_clients, active.min(num_clients)).into_vec();
    ids.sort_unstable();
    ids
}

/// Whether the update of `client_id` in `round` is lost on the uplink.
pub fn dropped_uplink(seed: u64, round: usize, client_id: usize, prob: f64) -> bool {
    if prob <= 0.0 {
        return false;
    }
    let mut rng = stream_rng(seed, Stream::Dropout, &[round as u64, client_id as u64]);
    rng.random::<f64>() < prob
}

struct Returned {
    update: ClientUpdate,
    zero_work: bool,
    raw_norm: f64,
    clipped_norm: Option<f64>,
    sigma: Option<f64>,
}

/// Runs `cfg.rounds` server rounds starting from `initial` and returns the
/// final global decoder with per-round metrics.
pub fn run_federation(
    cfg: &FederationConfig,
    clients: &[ClientState],
    initial: &ClassifierWeights,
    observer: &mut dyn RoundObserver,
) -> Result<FederationOutcome> {
    cfg.validate()?;
    if clients.len() != cfg.num_clients {
        return Err(Error::Config(format!(
            "configured {} clients but {} client datasets were supplied",
            cfg.num_clients,
            clients.len()
        )));
    }
    for c in clients.iter().filter(|c| !c.is_empty()) {
        if c.features.dim() != initial.feature_dim() {
            return Err(Error::dim("client features vs decoder", initial.feature_dim(), c.features.dim()));
        }
    }
    let min_size = if cfg.dp.min_size_from_partition {
        clients.iter().map(ClientState::len).filter(|&n| n > 0).min().unwrap_or(1)
    } else {
        cfg.dp.min_client_size
    };

    let mut global = initial.clone();
    let mut metrics = RunMetrics::default();
    for round in 1..=cfg.rounds {
        let lr = cosine_lr(round, cfg.rounds, cfg.lr_max)?;
        let bound = if cfg.dp.enabled {
            Some(clip_schedule(round, cfg.rounds, &cfg.dp)?)
        } else {
            None
        };
        let selected = sample_active(cfg.seed, round, cfg.num_clients, cfg.active_per_round);
        // Dropout is decided per (seed, round, client) independently of the
        // update itself, so lost updates are never computed.
        let survivors: Vec<usize> = selected
            .iter()
            .copied()
            .filter(|&k| !dropped_uplink(cfg.seed, round, k, cfg.dropout_prob))
            .collect();

        let results = map_ordered(&survivors, cfg.parallel, |&k| -> Result<Returned> {
            let out = client_round(&clients[k], &global, round, lr, cfg)?;
            let raw_norm = out.weights.weight.sub(&global.weight)?.frobenius_norm();
            let (weights, clipped_norm, sigma) = match bound {
                Some(bound) if !out.zero_work => {
                    let mut rng = stream_rng(cfg.seed, Stream::DpNoise, &[round as u64, k as u64]);
                    let p = privatize_update(&global.weight, &out.weights.weight, bound, min_size, &cfg.dp, &mut rng)?;
                    (ClassifierWeights::new(p.weights)?, Some(p.clipped_norm), Some(p.sigma))
                }
                _ => (out.weights, None, None),
            };
            Ok(Returned {
                update: ClientUpdate {
                    client_id: k,
                    weights,
                    sample_count: out.sample_count,
                },
                zero_work: out.zero_work,
                raw_norm,
                clipped_norm,
                sigma,
            })
        });
        let results: Vec<Returned> = results.into_iter().collect::<Result<_>>()?;

        let mut max_clipped: Option<f64> = None;
        let mut sigma = None;
        let mut updates = Vec::with_capacity(results.len());
        for r in results {
            if !r.zero_work {
                metrics.update_norms.push(r.raw_norm);
            }
            if let Some(c) = r.clipped_norm {
                max_clipped = Some(max_clipped.map_or(c, |m: f64| m.max(c)));
            }
            sigma = sigma.or(r.sigma);
            if !r.zero_work {
                updates.push(r.update);
            }
        }
        let outcome = aggregate(&updates, cfg.aggregation, cfg.weighting, &global)?;
        if !outcome.skipped {
            global = if cfg.cdb { cdb_apply(&outcome.weights) } else { outcome.weights };
            if !global.weight.is_finite() {
                return Err(Error::Numeric(format!("global decoder became non-finite in round {round}")));
            }
        }
        let eval = observer.observe(round, &global)?;
        metrics.rounds.push(RoundRecord {
            round,
            lr,
            clip_norm: bound,
            sigma: bound.map(|b| sigma.unwrap_or_else(|| noise_sigma(sensitivity(b, min_size), cfg.dp.epsilon, cfg.dp.delta))),
            client: eval.client,
            server: eval.server,
            participants: selected.len(),
            surviving: updates.len(),
            skipped: outcome.skipped,
            max_clipped_norm: max_clipped,
        });
    }
    if metrics.successful_rounds() == 0 {
        return Err(Error::AllRoundsSkipped { rounds: cfg.rounds });
    }
    metrics.confusion = observer.finish(&global)?;
    metrics.self_similarity = Some(weight_self_similarity(&global));
    Ok(FederationOutcome { decoder: global, metrics })
}
