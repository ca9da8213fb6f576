//! Trust calibration.
//!
//! Each participant gets a raw score `s_k = α·ec + β·calib + γ·hist` where
//! `ec = (1 + EC)/2` (or a neutral value for single-modality clients),
//! `calib = 1 − ECE` and `hist` is an accuracy EMA. Trust is the
//! sample-weighted share `n_k·s_k / Σ_j n_j·s_j`, floored at `ε`.

use serde::{Deserialize, Serialize};

use super::{ClientUpdate, FedError};
use crate::metrics::rescaled_ec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustMode {
    /// Trust from explanation consistency, calibration and history.
    Fedmmx,
    /// Equal component scores: plain sample-weighted averaging.
    Uniform,
    /// Alias of `Uniform`.
    Off,
}

impl TrustMode {
    pub fn is_calibrated(self) -> bool {
        matches!(self, TrustMode::Fedmmx)
    }
}

/// Model a client scores on its validation split for the accuracy and
/// calibration components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationTarget {
    /// The global model received at the start of the round.
    #[default]
    Received,
    /// The locally trained model.
    Trained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustConfig {
    pub mode: TrustMode,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// EMA decay μ of the history component.
    pub decay: f64,
    /// Minimum trust ε after normalization.
    pub floor: f64,
    /// EC component used when a client's EC is undefined.
    pub neutral_ec: f64,
    pub initial_history: f64,
    pub validate_on: ValidationTarget,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            mode: TrustMode::Fedmmx,
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
            decay: 0.9,
            floor: 0.01,
            neutral_ec: 0.5,
            initial_history: 0.5,
            validate_on: ValidationTarget::Received,
        }
    }
}

impl TrustConfig {
    pub fn weights(&self) -> TrustWeights {
        TrustWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma }
    }

    pub fn validate(&self) -> Result<(), FedError> {
        let bad = |field, reason: &str| Err(FedError::InvalidConfig { field, reason: reason.into() });
        self.weights().validate()?;
        if !(0.0..1.0).contains(&self.decay) {
            return bad("decay", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.floor) {
            return bad("floor", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.neutral_ec) {
            return bad("neutral_ec", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.initial_history) {
            return bad("initial_history", "must lie in [0, 1]");
        }
        Ok(())
    }
}

impl TrustWeights {
    pub fn validate(&self) -> Result<(), FedError> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(FedError::InvalidConfig { field: "alpha/beta/gamma", reason: "must be nonnegative".into() });
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FedError::InvalidConfig {
                field: "alpha/beta/gamma",
                reason: format!("must sum to 1 (got {sum})"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustEntry {
    pub client_id: usize,
    pub n: usize,
    pub ec_component: f64,
    pub calib_component: f64,
    pub hist_component: f64,
    pub raw_score: f64,
    pub trust: f64,
}

/// Per-participant trust, in ascending client-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    pub entries: Vec<TrustEntry>,
}

impl TrustReport {
    pub fn trust_of(&self, client_id: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.client_id == client_id).map(|e| e.trust)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.trust).sum()
    }
}

/// Raises every weight to at least `floor` while keeping the sum at 1.
///
/// Entries pinned at the floor are removed from the pool and the remaining
/// mass is redistributed proportionally among the rest, repeating until no
/// free entry falls below the floor. The effective floor is capped at `1/k`.
pub fn apply_floor(weights: &[f64], floor: f64) -> Vec<f64> {
    let k = weights.len();
    if k == 0 {
        return Vec::new();
    }
    let floor = floor.min(1.0 / k as f64);
    let mut pinned = vec![false; k];
    let mut out = weights.to_vec();
    loop {
        let n_pinned = pinned.iter().filter(|&&p| p).count();
        let free_mass = 1.0 - floor * n_pinned as f64;
        let free_sum: f64 = (0..k).filter(|&i| !pinned[i]).map(|i| weights[i]).sum();
        let n_free = k - n_pinned;
        for i in (0..k).filter(|&i| !pinned[i]) {
            out[i] = if free_sum > 0.0 {
                weights[i] / free_sum * free_mass
            } else {
                free_mass / n_free as f64
            };
        }
        for i in 0..k {
            if pinned[i] {
                out[i] = floor;
            }
        }
        let newly: Vec<usize> = (0..k).filter(|&i| !pinned[i] && out[i] < floor).collect();
        if newly.is_empty() || n_free == newly.len() {
            for &i in &newly {
                out[i] = floor;
            }
            return out;
        }
        newly.into_iter().for_each(|i| pinned[i] = true);
    }
}

fn components(update: &ClientUpdate, history: f64, neutral_ec: f64) -> (f64, f64, f64) {
    let ec = update.val_ec.map_or(neutral_ec, rescaled_ec);
    let calib = (1.0 - update.val_ece).clamp(0.0, 1.0);
    (ec, calib, history.clamp(0.0, 1.0))
}

fn normalize(weighted: &[f64]) -> Vec<f64> {
    let sum: f64 = weighted.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        weighted.iter().map(|w| w / sum).collect()
    } else {
        vec![1.0 / weighted.len() as f64; weighted.len()]
    }
}

/// Calibrated trust for the given updates. `histories[i]` belongs to
/// `updates[i]`. All-zero raw scores fall back to uniform trust.
pub fn compute_trust(
    updates: &[ClientUpdate],
    histories: &[f64],
    weights: TrustWeights,
    floor: f64,
    neutral_ec: f64,
) -> Result<TrustReport, FedError> {
    if updates.is_empty() {
        return Err(FedError::NoUpdates);
    }
    if histories.len() != updates.len() {
        return Err(FedError::InvalidConfig { field: "histories", reason: "one history per update".into() });
    }
    weights.validate()?;
    let comps: Vec<(f64, f64, f64)> = updates
        .iter()
        .zip(histories)
        .map(|(u, &h)| components(u, h, neutral_ec))
        .collect();
    let raw: Vec<f64> = comps
        .iter()
        .map(|&(e, c, h)| weights.alpha * e + weights.beta * c + weights.gamma * h)
        .collect();
    let all_zero = raw.iter().all(|&s| s == 0.0);
    let weighted: Vec<f64> = updates
        .iter()
        .zip(&raw)
        .map(|(u, &s)| if all_zero { 1.0 } else { u.n as f64 * s })
        .collect();
    let trust = apply_floor(&normalize(&weighted), floor);
    Ok(TrustReport {
        entries: updates
            .iter()
            .zip(comps.iter().zip(raw.iter().zip(trust)))
            .map(|(u, (&(e, c, h), (&s, t)))| TrustEntry {
                client_id: u.client_id,
                n: u.n,
                ec_component: e,
                calib_component: c,
                hist_component: h,
                raw_score: s,
                trust: t,
            })
            .collect(),
    })
}

/// Sample-weighted trust with equal component scores and no floor. The
/// components are still reported for logging.
pub fn uniform_trust(updates: &[ClientUpdate], histories: &[f64], neutral_ec: f64) -> Result<TrustReport, FedError> {
    if updates.is_empty() {
        return Err(FedError::NoUpdates);
    }
    let weighted: Vec<f64> = updates.iter().map(|u| u.n as f64).collect();
    let trust = normalize(&weighted);
    Ok(TrustReport {
        entries: updates
            .iter()
            .zip(histories)
            .zip(trust)
            .map(|((u, &h), t)| {
                let (e, c, h) = components(u, h, neutral_ec);
                TrustEntry {
                    client_id: u.client_id,
                    n: u.n,
                    ec_component: e,
                    calib_component: c,
                    hist_component: h,
                    raw_score: 1.0,
                    trust: t,
                }
            })
            .collect(),
    })
}

/// `μ·hist + (1 − μ)·accuracy`.
pub fn update_history(history: f64, accuracy: f64, decay: f64) -> Result<f64, FedError> {
    let unit = |x: f64| (0.0..=1.0).contains(&x);
    if !unit(history) || !unit(accuracy) || !(0.0..1.0).contains(&decay) {
        return Err(FedError::HistoryOutOfRange);
    }
    Ok((decay * history + (1.0 - decay) * accuracy).clamp(0.0, 1.0))
}
