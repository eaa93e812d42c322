//! (ε, δ)-DP for client uplinks: a round-scheduled clipping bound, the
//! resulting sensitivity, and Gaussian noise on the clipped update.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::cos_squared_fraction;

#[derive(Debug, Clone, PartialEq)]
pub struct DPConfig {
    pub enabled: bool,
    /// `f64::INFINITY` means no noise.
    pub epsilon: f64,
    pub delta: f64,
    /// Plateau `N̂_c` of the clipping schedule.
    pub clip_hat: f64,
    /// Peak `N_c,max` of the cos² envelope.
    pub clip_max: f64,
    pub min_client_size: usize,
    /// Replace `min_client_size` by the smallest non-empty client partition.
    pub min_size_from_partition: bool,
}

impl Default for DPConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            epsilon: f64::INFINITY,
            delta: 1e-5,
            clip_hat: 12.6,
            clip_max: 26.9,
            min_client_size: 130,
            min_size_from_partition: false,
        }
    }
}

impl DPConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            enabled: true,
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("dp epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("dp delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.clip_hat >= 0.0 && self.clip_hat <= self.clip_max) {
            return Err(Error::Config("dp clip_hat must satisfy 0 <= clip_hat <= clip_max".into()));
        }
        if self.min_client_size == 0 {
            return Err(Error::Config("dp min_client_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `N_c[r] = min(N̂_c, N_c,max · cos²(π r / 2R))`.
pub fn clip_schedule(r: usize, total: usize, cfg: &DPConfig) -> Result<f64> {
    if total == 0 || r > total {
        return Err(Error::Range(format!("clip schedule step {r} outside [0, {total}]")));
    }
    Ok(cfg.clip_hat.min(cfg.clip_max * cos_squared_fraction(r, total)))
}

/// Projects the update onto the Frobenius ball of radius `norm_bound`.
pub fn clip_update(delta_w: &Matrix, norm_bound: f64) -> Matrix {
    let n = delta_w.frobenius_norm();
    if norm_bound <= 0.0 {
        return Matrix::zeros(delta_w.rows(), delta_w.cols());
    }
    if n > norm_bound {
        delta_w.scale(norm_bound / n)
    } else {
        delta_w.clone()
    }
}

/// `Δ_s = 2 · N_c / min_k |D_k|`.
pub fn sensitivity(norm_bound: f64, min_client_size: usize) -> f64 {
    2.0 * norm_bound / min_client_size as f64
}

/// Classical Gaussian-mechanism scale `Δ_s · √(2 ln(1.25/δ)) / ε`.
pub fn noise_sigma(delta_s: f64, epsilon: f64, delta: f64) -> f64 {
    if epsilon.is_infinite() {
        return 0.0;
    }
    delta_s * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon
}

/// Adds i.i.d. `N(0, σ²)` noise to every entry of the clipped update.
pub fn gaussian_mechanism<R: Rng + ?Sized>(
    clipped: &Matrix,
    delta_s: f64,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<Matrix> {
    if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Range(format!("invalid privacy budget (epsilon={epsilon}, delta={delta})")));
    }
    let sigma = noise_sigma(delta_s, epsilon, delta);
    if sigma == 0.0 {
        return Ok(clipped.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut noisy = clipped.clone();
    for v in noisy.as_mut_slice() {
        *v += normal.sample(rng);
    }
    Ok(noisy)
}

/// Outcome of privatizing one client update.
#[derive(Debug, Clone)]
pub struct PrivatizedUpdate {
    pub weights: Matrix,
    pub raw_norm: f64,
    pub clipped_norm: f64,
    pub sigma: f64,
}

/// Clips `returned − incoming` to `bound`, adds calibrated noise and
/// re-applies the update to `incoming`.
pub fn privatize_update<R: Rng + ?Sized>(
    incoming: &Matrix,
    returned: &Matrix,
    bound: f64,
    min_client_size: usize,
    cfg: &DPConfig,
    rng: &mut R,
) -> Result<PrivatizedUpdate> {
    let delta_w = returned.sub(incoming)?;
    let raw_norm = delta_w.frobenius_norm();
    let clipped = clip_update(&delta_w, bound);
    let clipped_norm = clipped.frobenius_norm();
    let delta_s = sensitivity(bound, min_client_size);
    let noisy = gaussian_mechanism(&clipped, delta_s, cfg.epsilon, cfg.delta, rng)?;
    Ok(PrivatizedUpdate {
        weights: incoming.add(&noisy)?,
        raw_norm,
        clipped_norm,
        sigma: noise_sigma(delta_s, cfg.epsilon, cfg.delta),
    })
}

/// Median of observed update norms; a dry run without DP gives a data-driven `N̂_c`.
pub fn median_norm(norms: &[f64]) -> Option<f64> {
    if norms.is_empty() {
        return None;
    }
    let mut v = norms.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
