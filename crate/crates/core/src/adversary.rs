//! Controlled client misbehavior: label flipping, update sign flipping and
//! Gaussian update noise.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;
use crate::fed::ClientUpdate;
use crate::nam::NamParams;
use crate::rng::SimRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("attack `{field}` must lie in [0, 1], got {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("label flipping needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("update segment for modality {0} does not match the global layout")]
    SegmentMismatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Data poisoning: labels replaced by a different class.
    LabelFlip,
    /// Model poisoning: the transmitted delta is negated and scaled.
    SignFlip,
    /// Model poisoning: additive Gaussian noise on every coordinate.
    GaussNoise,
}

impl AttackKind {
    pub fn poisons_data(self) -> bool {
        matches!(self, AttackKind::LabelFlip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Flip probability, or noise / reflection scale.
    #[serde(default = "default_intensity")]
    pub intensity: f64,
    /// Share of clients that are adversarial.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default)]
    pub seed_offset: u64,
}

fn default_intensity() -> f64 {
    1.0
}

fn default_fraction() -> f64 {
    0.2
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            kind: AttackKind::LabelFlip,
            intensity: default_intensity(),
            fraction: default_fraction(),
            seed_offset: 0,
        }
    }
}

fn unit(field: &'static str, value: f64) -> Result<(), AttackError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(AttackError::OutOfRange { field, value })
    }
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), AttackError> {
        unit("intensity", self.intensity)?;
        unit("fraction", self.fraction)
    }
}

/// `⌊fraction·k⌋` distinct client ids, ascending.
pub fn select_adversaries(k: usize, fraction: f64, rng: &mut SimRng) -> Result<Vec<usize>, AttackError> {
    unit("fraction", fraction)?;
    let count = ((fraction * k as f64 + 1e-9).floor() as usize).min(k);
    let mut ids = index::sample(rng, k, count).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// With probability `intensity` each label becomes `(y + 1 + u) mod C`,
/// `u ~ U{0, ..., C-2}`, which never equals `y`.
pub fn corrupt_labels(
    samples: &[Sample],
    intensity: f64,
    num_classes: usize,
    rng: &mut SimRng,
) -> Result<Vec<Sample>, AttackError> {
    unit("intensity", intensity)?;
    if num_classes < 2 {
        return Err(AttackError::TooFewClasses(num_classes));
    }
    Ok(samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if rng.random::<f64>() < intensity {
                let u = rng.random_range(0..num_classes - 1);
                s.label = (s.label + 1 + u) % num_classes;
            }
            s
        })
        .collect())
}

/// Applies an update-level attack. `global` is the round's starting model,
/// needed to recover the transmitted delta for sign flipping. Label flipping
/// acts on data, so it leaves updates unchanged.
pub fn corrupt_update(
    update: &ClientUpdate,
    global: &NamParams,
    spec: &AttackSpec,
    rng: &mut SimRng,
) -> Result<ClientUpdate, AttackError> {
    unit("intensity", spec.intensity)?;
    let mut out = update.clone();
    for seg in &mut out.segments {
        let reference = global
            .layout()
            .segment_ranges()
            .get(seg.modality)
            .map(|r| &global.values()[r.clone()])
            .filter(|r| r.len() == seg.values.len())
            .ok_or(AttackError::SegmentMismatch(seg.modality))?;
        match spec.kind {
            AttackKind::LabelFlip => {}
            AttackKind::SignFlip => {
                for (p, &g) in seg.values.iter_mut().zip(reference) {
                    *p = g - spec.intensity * (*p - g);
                }
            }
            AttackKind::GaussNoise => {
                for p in seg.values.iter_mut() {
                    *p += spec.intensity * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fed::ModalitySegment;
    use crate::modality::ModalitySet;
    use crate::nam::{LossBreakdown, NamLayout};
    use crate::rng::seeded_rng;

    fn labels(n: usize, c: usize) -> Vec<Sample> {
        (0..n).map(|i| Sample { label: i % c, features: vec![] }).collect()
    }

    #[test]
    fn adversary_counts() {
        assert!(select_adversaries(10, 0.0, &mut seeded_rng(0)).unwrap().is_empty());
        let ids = select_adversaries(10, 0.2, &mut seeded_rng(0)).unwrap();
        assert_eq!(ids.len(), 2);
        assert_eq!(ids, select_adversaries(10, 0.2, &mut seeded_rng(0)).unwrap());
        assert_eq!(select_adversaries(10, 0.3, &mut seeded_rng(1)).unwrap().len(), 3);
        assert_eq!(select_adversaries(4, 1.0, &mut seeded_rng(1)).unwrap(), vec![0, 1, 2, 3]);
        assert!(select_adversaries(4, 1.5, &mut seeded_rng(1)).is_err());
    }

    #[test]
    fn label_flip_extremes() {
        let data = labels(50, 3);
        assert_eq!(corrupt_labels(&data, 0.0, 3, &mut seeded_rng(2)).unwrap(), data);
        for c in 2..=5 {
            let data = labels(40, c);
            let flipped = corrupt_labels(&data, 1.0, c, &mut seeded_rng(c as u64)).unwrap();
            for (a, b) in data.iter().zip(&flipped) {
                assert_ne!(a.label, b.label);
                assert!(b.label < c);
            }
        }
        assert_eq!(corrupt_labels(&data, 1.0, 1, &mut seeded_rng(0)).unwrap_err(), AttackError::TooFewClasses(1));
    }

    #[test]
    fn label_flip_rate_matches_intensity() {
        // Binomial(10000, 0.5) has std 50, so [4800, 5200] is a 4-sigma band.
        let data = labels(10_000, 4);
        for seed in 0..5 {
            let flipped = corrupt_labels(&data, 0.5, 4, &mut seeded_rng(seed)).unwrap();
            let changed = data.iter().zip(&flipped).filter(|(a, b)| a.label != b.label).count();
            let rate = changed as f64 / 10_000.0;
            assert!((0.48..=0.52).contains(&rate), "seed {seed}: {rate}");
        }
    }

    fn update_for(global: &NamParams, shift: f64) -> ClientUpdate {
        ClientUpdate {
            client_id: 0,
            modalities: ModalitySet::single(0),
            segments: vec![ModalitySegment {
                modality: 0,
                values: global.segment(0).iter().enumerate().map(|(i, v)| v + shift * i as f64).collect(),
            }],
            n: 10,
            loss: LossBreakdown::default(),
            val_accuracy: 1.0,
            val_ec: None,
            val_ece: 0.0,
        }
    }

    #[test]
    fn zero_intensity_is_identity() {
        let layout = NamLayout::new(vec!["a".into()], vec![3], 2, 2);
        let global = NamParams::init(layout, &mut seeded_rng(3));
        let up = update_for(&global, 0.1);
        for kind in [AttackKind::SignFlip, AttackKind::GaussNoise, AttackKind::LabelFlip] {
            let spec = AttackSpec { kind, intensity: 0.0, ..Default::default() };
            let out = corrupt_update(&up, &global, &spec, &mut seeded_rng(1)).unwrap();
            if kind == AttackKind::SignFlip {
                // intensity 0 collapses onto the global model
                assert_eq!(out.segments[0].values, global.segment(0));
            } else {
                assert_eq!(out, up);
            }
        }
    }

    #[test]
    fn sign_flip_is_an_involution() {
        let layout = NamLayout::new(vec!["a".into()], vec![3], 2, 2);
        let global = NamParams::init(layout, &mut seeded_rng(3));
        let up = update_for(&global, 0.1);
        let spec = AttackSpec { kind: AttackKind::SignFlip, intensity: 1.0, ..Default::default() };
        let once = corrupt_update(&up, &global, &spec, &mut seeded_rng(0)).unwrap();
        let twice = corrupt_update(&once, &global, &spec, &mut seeded_rng(0)).unwrap();
        for (a, b) in twice.segments[0].values.iter().zip(&up.segments[0].values) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn gauss_noise_variance() {
        // H = 1, one feature: segment length 2 + 2C = 10^4
        let big = NamParams::zeros(NamLayout::new(vec!["a".into()], vec![1], 1, 4999));
        assert_eq!(big.segment(0).len(), 10_000);
        let up = update_for(&big, 0.0);
        let spec = AttackSpec { kind: AttackKind::GaussNoise, intensity: 0.1, ..Default::default() };
        let out = corrupt_update(&up, &big, &spec, &mut seeded_rng(9)).unwrap();
        let v = &out.segments[0].values;
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        // sample variance of 10^4 normals has relative std sqrt(2/10^4) ≈ 1.4%
        assert!((var - 0.01).abs() < 0.01 * 0.06, "{var}");
    }
}
