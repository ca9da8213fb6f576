//! Per-modality trust-weighted aggregation and participant sampling.

use rand::seq::index;

use super::{ClientUpdate, FedError, TrustReport};
use crate::nam::NamParams;
use crate::rng::SimRng;

/// Replaces each modality segment with the trust-weighted mean of the
/// updates that carry it. Weights are renormalized within each modality's
/// contributor set; a modality nobody contributed to keeps its global value.
/// Updates are consumed in ascending client-id order.
pub fn aggregate(global: &NamParams, updates: &[ClientUpdate], trust: &TrustReport) -> Result<NamParams, FedError> {
    let layout = global.layout();
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);

    let mut weights = Vec::with_capacity(ordered.len());
    for u in &ordered {
        for seg in &u.segments {
            let ok = seg.modality < layout.num_modalities()
                && seg.values.len() == layout.segment_len(seg.modality)
                && u.modalities.contains(seg.modality);
            if !ok {
                return Err(FedError::LayoutMismatch { client: u.client_id });
            }
        }
        let t = trust
            .trust_of(u.client_id)
            .ok_or(FedError::InvalidConfig { field: "trust", reason: format!("no trust for client {}", u.client_id) })?;
        weights.push(t);
    }

    let mut out = global.clone();
    for m in 0..layout.num_modalities() {
        let contributors: Vec<(f64, &[f64])> = ordered
            .iter()
            .zip(&weights)
            .filter_map(|(u, &t)| u.segment(m).map(|s| (t, s)))
            .collect();
        if contributors.is_empty() {
            continue;
        }
        let total: f64 = contributors.iter().map(|(t, _)| t).sum();
        let count = contributors.len() as f64;
        let target = out.segment_mut(m);
        target.iter_mut().for_each(|v| *v = 0.0);
        for (t, seg) in contributors {
            let w = if total > 0.0 { t / total } else { 1.0 / count };
            for (o, v) in target.iter_mut().zip(seg) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// `⌈fraction·k⌉` distinct ids drawn uniformly without replacement, sorted.
pub fn sample_participants(k: usize, fraction: f64, rng: &mut SimRng) -> Result<Vec<usize>, FedError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FedError::InvalidConfig { field: "participation", reason: "must lie in (0, 1]".into() });
    }
    let count = ((fraction * k as f64 - 1e-9).ceil() as usize).clamp(1.min(k), k);
    let mut ids = index::sample(rng, k, count).into_vec();
    ids.sort_unstable();
    Ok(ids)
}
