//! Non-i.i.d. label partitioning and modality assignment.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{DataError, PROFILE_SUM_TOLERANCE};
use crate::modality::ModalitySet;
use crate::rng::SimRng;

/// Draws one point from a symmetric Dirichlet(α, ..., α) of dimension `k`.
fn symmetric_dirichlet(k: usize, alpha: f64, rng: &mut SimRng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter_mut().for_each(|x| *x /= sum);
    } else {
        // every gamma draw underflowed; put all mass on one coordinate
        let hot = rng.random_range(0..k);
        draws.iter_mut().enumerate().for_each(|(i, x)| *x = if i == hot { 1.0 } else { 0.0 });
    }
    draws
}

/// Splits sample indices across `k` clients with per-class Dirichlet(α)
/// proportions.
///
/// Classes are processed in ascending order; class `c`'s indices (ascending)
/// are cut into consecutive runs whose boundaries are `⌊cumsum(p)·n_c⌋`.
/// Clients left empty afterwards each receive the last index of the current
/// largest client (lowest id on ties). Returned lists are sorted.
pub fn dirichlet_partition(
    labels: &[usize],
    k: usize,
    alpha: f64,
    rng: &mut SimRng,
) -> Result<Vec<Vec<usize>>, DataError> {
    if k == 0 {
        return Err(DataError::spec("num_clients", "must be at least 1"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(DataError::spec("dirichlet_alpha", "must be a finite positive number"));
    }
    if labels.len() < k {
        return Err(DataError::TooFewSamples { samples: labels.len(), clients: k });
    }
    if k == 1 {
        return Ok(vec![(0..labels.len()).collect()]);
    }

    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in 0..num_classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        let p = symmetric_dirichlet(k, alpha, rng);
        let n = idx.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (client, &share) in p.iter().enumerate() {
            cum += share;
            let end = if client + 1 == k {
                n
            } else {
                ((cum * n as f64).floor() as usize).clamp(start, n)
            };
            parts[client].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }

    while let Some(empty) = parts.iter().position(Vec::is_empty) {
        let largest = (0..k)
            .max_by(|&a, &b| parts[a].len().cmp(&parts[b].len()).then(b.cmp(&a)))
            .expect("k >= 1");
        let moved = parts[largest].pop().expect("largest client holds at least two samples");
        parts[empty].push(moved);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Modality added to a client during coverage repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityRepair {
    pub client: usize,
    pub modality: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityAssignment {
    /// `sets[k]` is `M_k`.
    pub sets: Vec<ModalitySet>,
    pub repairs: Vec<ModalityRepair>,
}

/// Client counts per profile entry using the largest-remainder method.
///
/// Ties in the fractional part go to the earlier entry.
pub fn largest_remainder_counts(k: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * k as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(k.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Assigns a modality set to each of `k` clients following `profile`.
///
/// Counts come from [`largest_remainder_counts`]; the resulting multiset is
/// shuffled onto client ids. Any modality left without an owner is then added
/// to the client with the fewest modalities (lowest id on ties) and recorded
/// in [`ModalityAssignment::repairs`].
pub fn assign_modalities(
    k: usize,
    profile: &[(ModalitySet, f64)],
    num_modalities: usize,
    rng: &mut SimRng,
) -> Result<ModalityAssignment, DataError> {
    if profile.iter().all(|(set, _)| set.is_empty()) {
        return Err(DataError::AllEmptyProfile);
    }
    if let Some(index) = profile.iter().position(|(set, f)| set.is_empty() && *f > 0.0) {
        return Err(DataError::EmptyProfileEntry { index });
    }
    let sum: f64 = profile.iter().map(|(_, f)| f).sum();
    if (sum - 1.0).abs() > PROFILE_SUM_TOLERANCE || profile.iter().any(|(_, f)| !(*f >= 0.0)) {
        return Err(DataError::spec("modality_profile", format!("fractions must sum to 1 (got {sum})")));
    }

    let fractions: Vec<f64> = profile.iter().map(|(_, f)| *f).collect();
    let counts = largest_remainder_counts(k, &fractions);
    let mut sets: Vec<ModalitySet> = profile
        .iter()
        .zip(&counts)
        .flat_map(|((set, _), &n)| std::iter::repeat_n(*set, n))
        .collect();
    sets.shuffle(rng);

    let mut repairs = Vec::new();
    for m in 0..num_modalities {
        if sets.iter().any(|s| s.contains(m)) {
            continue;
        }
        let target = (0..sets.len())
            .min_by_key(|&c| (sets[c].len(), c))
            .expect("k >= 1");
        sets[target] = sets[target].with(m);
        repairs.push(ModalityRepair { client: target, modality: m });
    }
    Ok(ModalityAssignment { sets, repairs })
}
