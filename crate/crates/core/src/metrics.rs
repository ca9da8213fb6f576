//! Evaluation quantities: explanation consistency, faithfulness,
//! calibration error, predictive entropy and accuracy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;
use crate::modality::ModalitySet;
use crate::nam::{attribution, forward, softmax, NamError, NamParams};

/// Vectors with a smaller Euclidean norm score cosine 0.
pub const DEGENERATE_NORM: f64 = 1e-12;
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("number of bins must be at least 1")]
    NoBins,
    #[error("mask fraction must lie in (0, 1], got {0}")]
    InvalidMaskFraction(f64),
    #[error("not a probability distribution")]
    NotADistribution,
    #[error(transparent)]
    Model(#[from] NamError),
}

/// Cosine similarity in `[-1, 1]`; 0 when either vector is (near) zero.
pub fn explanation_consistency(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return Ok(0.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Dataset-level explanation consistency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EcOutcome {
    Defined { mean: f64, evaluated: usize, skipped: usize },
    /// No sample exposed two or more of the requested modalities.
    Undefined { skipped: usize },
}

impl EcOutcome {
    pub fn value(&self) -> Option<f64> {
        match *self {
            EcOutcome::Defined { mean, .. } => Some(mean),
            EcOutcome::Undefined { .. } => None,
        }
    }

    pub fn evaluated(&self) -> usize {
        match *self {
            EcOutcome::Defined { evaluated, .. } => evaluated,
            EcOutcome::Undefined { .. } => 0,
        }
    }
}

/// Mean pairwise cosine between class-aggregate explanation vectors of one
/// sample's modalities, or `None` with fewer than two modalities.
pub fn sample_ec(params: &NamParams, sample: &Sample, modalities: ModalitySet) -> Result<Option<f64>, MetricError> {
    let avail = ModalitySet::from_indices(sample.available().iter().filter(|&m| modalities.contains(m)));
    if avail.len() < 2 {
        return Ok(None);
    }
    let attr = attribution(params, sample, avail)?;
    let expl: Vec<&[f64]> = attr.explanations().map(|(_, e)| e).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..expl.len() {
        for j in i + 1..expl.len() {
            sum += explanation_consistency(expl[i], expl[j])?;
            pairs += 1;
        }
    }
    Ok(Some(sum / pairs as f64))
}

pub fn dataset_ec(params: &NamParams, samples: &[Sample], modalities: ModalitySet) -> Result<EcOutcome, MetricError> {
    let mut sum = 0.0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for s in samples {
        match sample_ec(params, s, modalities)? {
            Some(v) => {
                sum += v;
                evaluated += 1;
            }
            None => skipped += 1,
        }
    }
    Ok(if evaluated == 0 {
        EcOutcome::Undefined { skipped }
    } else {
        EcOutcome::Defined { mean: sum / evaluated as f64, evaluated, skipped }
    })
}

/// Relative drop of the predicted-class probability, clamped to `[0, 1]`.
pub fn faithfulness_sample_score(p0: f64, p1: f64) -> f64 {
    (1.0 - p1 / p0.max(1e-12)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaithfulnessConfig {
    pub mask_fraction: f64,
    /// Value written into masked features.
    pub mask_value: f64,
}

impl Default for FaithfulnessConfig {
    fn default() -> Self {
        FaithfulnessConfig { mask_fraction: 0.2, mask_value: 0.0 }
    }
}

/// Number of features masked in a modality of dimension `dim`.
pub fn masked_count(mask_fraction: f64, dim: usize) -> usize {
    // guard against 0.2 * 10 = 2.0000000000000004 style rounding
    ((mask_fraction * dim as f64 - 1e-9).ceil() as usize).clamp(1, dim)
}

/// Masks the top `⌈fraction·d_m⌉` features of every available modality,
/// ranked by `|A_m[j][ĉ]|` for the predicted class `ĉ` (ties keep the lower
/// index first), and returns the perturbed sample.
pub fn mask_top_features(
    params: &NamParams,
    sample: &Sample,
    cfg: &FaithfulnessConfig,
) -> Result<(Sample, usize, f64), MetricError> {
    let avail = sample.available();
    let logits = forward(params, sample, avail)?;
    let probs = softmax(&logits.fused);
    let predicted = argmax(&probs);
    let attr = attribution(params, sample, avail)?;
    let mut masked = sample.clone();
    for (m, a) in attr.per_modality.iter().enumerate() {
        let Some(a) = a else { continue };
        let dim = a.contributions.len();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| {
            a.contributions[j][predicted]
                .abs()
                .total_cmp(&a.contributions[i][predicted].abs())
                .then(i.cmp(&j))
        });
        let feats = masked.features[m].as_mut().expect("available modality");
        for &j in order.iter().take(masked_count(cfg.mask_fraction, dim)) {
            feats[j] = cfg.mask_value;
        }
    }
    Ok((masked, predicted, probs[predicted]))
}

pub fn faithfulness(params: &NamParams, samples: &[Sample], cfg: &FaithfulnessConfig) -> Result<f64, MetricError> {
    if !(cfg.mask_fraction > 0.0 && cfg.mask_fraction <= 1.0) {
        return Err(MetricError::InvalidMaskFraction(cfg.mask_fraction));
    }
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sum = 0.0;
    for s in samples {
        let (masked, predicted, p0) = mask_top_features(params, s, cfg)?;
        let p1 = softmax(&forward(params, &masked, masked.available())?.fused)[predicted];
        sum += faithfulness_sample_score(p0, p1);
    }
    Ok(sum / samples.len() as f64)
}

/// Expected calibration error with `num_bins` equal-width bins on `[0, 1]`;
/// a confidence of exactly 1 falls in the last bin.
pub fn ece(confidences: &[f64], correct: &[bool], num_bins: usize) -> Result<f64, MetricError> {
    if confidences.len() != correct.len() {
        return Err(MetricError::LengthMismatch(confidences.len(), correct.len()));
    }
    if confidences.is_empty() {
        return Err(MetricError::Empty);
    }
    if num_bins == 0 {
        return Err(MetricError::NoBins);
    }
    let mut count = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0; num_bins];
    let mut hits = vec![0usize; num_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c.clamp(0.0, 1.0) * num_bins as f64) as usize).min(num_bins - 1);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += ok as usize;
    }
    let n = confidences.len() as f64;
    let total: f64 = (0..num_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (hits[b] as f64 / nb - conf_sum[b] / nb).abs()
        })
        .sum();
    Ok(total.clamp(0.0, 1.0))
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn predictive_entropy(probs: &[f64]) -> Result<f64, MetricError> {
    if probs.is_empty() {
        return Err(MetricError::Empty);
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(MetricError::NotADistribution);
    }
    Ok(-probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Aggregate metrics over one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    /// Raw mean cosine; `None` when undefined.
    pub ec: Option<f64>,
    pub fs: f64,
    pub ece: f64,
    pub mean_entropy: f64,
    pub samples: usize,
    pub ec_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mask_fraction: f64,
    pub mask_value: f64,
    pub ece_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { mask_fraction: 0.2, mask_value: 0.0, ece_bins: 10 }
    }
}

impl EvalConfig {
    pub fn faithfulness(&self) -> FaithfulnessConfig {
        FaithfulnessConfig { mask_fraction: self.mask_fraction, mask_value: self.mask_value }
    }
}

/// Accuracy, confidences and correctness flags of fused predictions.
pub fn predictions(params: &NamParams, samples: &[Sample]) -> Result<(Vec<f64>, Vec<bool>, f64), MetricError> {
    let mut conf = Vec::with_capacity(samples.len());
    let mut correct = Vec::with_capacity(samples.len());
    let mut entropy = 0.0;
    for s in samples {
        let probs = softmax(&forward(params, s, s.available())?.fused);
        let c = argmax(&probs);
        conf.push(probs[c]);
        correct.push(c == s.label);
        entropy += predictive_entropy(&probs)?;
    }
    Ok((conf, correct, entropy))
}

/// Evaluates every metric on `samples`, each using the modalities the
/// sample carries.
pub fn evaluate(params: &NamParams, samples: &[Sample], cfg: &EvalConfig) -> Result<MetricReport, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    let (conf, correct, entropy) = predictions(params, samples)?;
    let n = samples.len() as f64;
    let ec = dataset_ec(params, samples, params.layout().all_modalities())?;
    Ok(MetricReport {
        accuracy: correct.iter().filter(|&&c| c).count() as f64 / n,
        ec: ec.value(),
        fs: faithfulness(params, samples, &cfg.faithfulness())?,
        ece: ece(&conf, &correct, cfg.ece_bins)?,
        mean_entropy: entropy / n,
        samples: samples.len(),
        ec_samples: ec.evaluated(),
    })
}

/// `(1 + ec) / 2`, mapping raw cosine onto `[0, 1]`.
pub fn rescaled_ec(ec: f64) -> f64 {
    ((1.0 + ec) / 2.0).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nam::NamLayout;
    use crate::rng::seeded_rng;

    #[test]
    fn cosine_examples() {
        assert_eq!(explanation_consistency(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(explanation_consistency(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = explanation_consistency(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(explanation_consistency(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(explanation_consistency(&[1.0], &[1.0, 2.0]).unwrap_err(), MetricError::LengthMismatch(1, 2));
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0, 1.0], &[true, true], 10).unwrap(), 0.0);
        assert_eq!(ece(&[1.0, 1.0, 1.0], &[false, false, false], 10).unwrap(), 1.0);
        let v = ece(&[0.9, 0.9, 0.6, 0.6], &[true, true, true, false], 4).unwrap();
        assert!((v - 0.1).abs() < 1e-12, "{v}");
        assert!(ece(&[0.5], &[true, false], 4).is_err());
        assert_eq!(ece(&[0.5], &[true], 0).unwrap_err(), MetricError::NoBins);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(predictive_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((predictive_entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((predictive_entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.0397207708399179).abs() < 1e-12);
        assert_eq!(predictive_entropy(&[0.5, 0.4]).unwrap_err(), MetricError::NotADistribution);
        assert_eq!(predictive_entropy(&[1.5, -0.5]).unwrap_err(), MetricError::NotADistribution);
    }

    #[test]
    fn faithfulness_score_arithmetic() {
        assert!((faithfulness_sample_score(0.8, 0.2) - 0.75).abs() < 1e-15);
        assert_eq!(faithfulness_sample_score(0.5, 0.9), 0.0);
        assert_eq!(faithfulness_sample_score(0.5, 0.0), 1.0);
    }

    #[test]
    fn masked_count_rounding() {
        assert_eq!(masked_count(0.2, 10), 2);
        assert_eq!(masked_count(0.2, 8), 2);
        assert_eq!(masked_count(0.2, 1), 1);
        assert_eq!(masked_count(1.0, 6), 6);
    }

    fn zero_model() -> NamParams {
        NamParams::zeros(NamLayout::new(vec!["a".into(), "b".into()], vec![2, 3], 4, 3))
    }

    fn two_modal(label: usize) -> Sample {
        Sample { label, features: vec![Some(vec![1.0, -0.5]), Some(vec![0.2, 0.4, -1.0])] }
    }

    #[test]
    fn zero_model_metrics() {
        let p = zero_model();
        let data = vec![two_modal(0), two_modal(1)];
        assert_eq!(faithfulness(&p, &data, &FaithfulnessConfig::default()).unwrap(), 0.0);
        let ec = dataset_ec(&p, &data, ModalitySet::full(2)).unwrap();
        assert_eq!(ec, EcOutcome::Defined { mean: 0.0, evaluated: 2, skipped: 0 });
    }

    #[test]
    fn ec_undefined_without_multimodal_samples() {
        let p = zero_model();
        let s = Sample { label: 0, features: vec![Some(vec![1.0, 2.0]), None] };
        assert_eq!(
            dataset_ec(&p, &[s.clone(), s], ModalitySet::full(2)).unwrap(),
            EcOutcome::Undefined { skipped: 2 }
        );
    }

    #[test]
    fn faithfulness_rejects_bad_input() {
        let p = zero_model();
        let cfg = FaithfulnessConfig { mask_fraction: 0.0, ..Default::default() };
        assert_eq!(faithfulness(&p, &[two_modal(0)], &cfg).unwrap_err(), MetricError::InvalidMaskFraction(0.0));
        assert_eq!(faithfulness(&p, &[], &FaithfulnessConfig::default()).unwrap_err(), MetricError::Empty);
    }

    #[test]
    fn report_bounds() {
        let layout = NamLayout::new(vec!["a".into(), "b".into()], vec![2, 3], 4, 3);
        let p = NamParams::init(layout, &mut seeded_rng(4));
        let data: Vec<Sample> = (0..9).map(|i| two_modal(i % 3)).collect();
        let r = evaluate(&p, &data, &EvalConfig::default()).unwrap();
        assert!((0.0..=1.0).contains(&r.accuracy));
        assert!((0.0..=1.0).contains(&r.fs));
        assert!((0.0..=1.0).contains(&r.ece));
        assert!(r.ec.is_some_and(|e| (-1.0..=1.0).contains(&e)));
        assert!(r.mean_entropy >= 0.0 && r.mean_entropy <= 3f64.ln() + 1e-12);
        assert_eq!(r.ec_samples, 9);
    }
}
