//! Inference and additive attributions.

use super::{NamError, NamLayout, NamParams};
use crate::data::Sample;
use crate::modality::ModalitySet;

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Evaluates one shape function at `x`.
///
/// Writes hidden pre-activations into `pre` (length `H`) and adds the output
/// vector into `out` (length `C`).
#[inline]
pub(crate) fn eval_shape(block: &[f64], x: f64, hidden: usize, classes: usize, pre: &mut [f64], out: &mut [f64]) {
    let (w_in, rest) = block.split_at(hidden);
    let (b_hid, w_out) = rest.split_at(hidden);
    for h in 0..hidden {
        let u = w_in[h] * x + b_hid[h];
        pre[h] = u;
        if u > 0.0 {
            let row = &w_out[h * classes..(h + 1) * classes];
            for (o, w) in out.iter_mut().zip(row) {
                *o += u * w;
            }
        }
    }
}

/// Validates `available` against the layout and the sample's features.
pub(crate) fn check_sample(layout: &NamLayout, sample: &Sample, available: ModalitySet) -> Result<(), NamError> {
    layout.check_available(available)?;
    for m in available.iter() {
        let feats = sample
            .features
            .get(m)
            .and_then(|f| f.as_ref())
            .ok_or(NamError::MissingModality(m))?;
        if feats.len() != layout.dims[m] {
            return Err(NamError::DimensionMismatch {
                modality: m,
                expected: layout.dims[m],
                found: feats.len(),
            });
        }
    }
    Ok(())
}

/// Per-modality and fused logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    /// `per_modality[m]` is `Some` iff `m` was available.
    pub per_modality: Vec<Option<Vec<f64>>>,
    pub fused: Vec<f64>,
}

/// Shape-function contributions for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityAttribution {
    /// `contributions[j][c]`: feature `j`'s additive contribution to logit `c`.
    pub contributions: Vec<Vec<f64>>,
    /// Class-aggregate explanation `e[c] = Σ_j contributions[j][c]`.
    pub explanation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub per_modality: Vec<Option<ModalityAttribution>>,
}

impl Attribution {
    pub fn explanations(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.per_modality
            .iter()
            .enumerate()
            .filter_map(|(m, a)| a.as_ref().map(|a| (m, a.explanation.as_slice())))
    }
}

fn modality_attribution(params: &NamParams, m: usize, x: &[f64]) -> ModalityAttribution {
    let layout = params.layout();
    let (hidden, classes) = (layout.hidden, layout.classes);
    let shape_len = layout.shape_len();
    let seg = params.segment(m);
    let mut pre = vec![0.0; hidden];
    let contributions: Vec<Vec<f64>> = x
        .iter()
        .enumerate()
        .map(|(j, &xj)| {
            let mut out = vec![0.0; classes];
            eval_shape(&seg[j * shape_len..(j + 1) * shape_len], xj, hidden, classes, &mut pre, &mut out);
            out
        })
        .collect();
    let mut explanation = vec![0.0; classes];
    for row in &contributions {
        for (e, a) in explanation.iter_mut().zip(row) {
            *e += a;
        }
    }
    ModalityAttribution { contributions, explanation }
}

pub fn attribution(params: &NamParams, sample: &Sample, available: ModalitySet) -> Result<Attribution, NamError> {
    check_sample(params.layout(), sample, available)?;
    let per_modality = (0..params.layout().num_modalities())
        .map(|m| available.contains(m).then(|| modality_attribution(params, m, sample.modality(m))))
        .collect();
    Ok(Attribution { per_modality })
}

pub fn forward(params: &NamParams, sample: &Sample, available: ModalitySet) -> Result<Logits, NamError> {
    let attr = attribution(params, sample, available)?;
    let classes = params.layout().classes;
    let mut fused = vec![0.0; classes];
    let per_modality: Vec<Option<Vec<f64>>> = attr
        .per_modality
        .iter()
        .enumerate()
        .map(|(m, a)| {
            a.as_ref().map(|a| {
                let z: Vec<f64> = params.bias(m).iter().zip(&a.explanation).map(|(b, e)| b + e).collect();
                for (f, v) in fused.iter_mut().zip(&z) {
                    *f += v;
                }
                z
            })
        })
        .collect();
    let n = available.len() as f64;
    fused.iter_mut().for_each(|f| *f /= n);
    Ok(Logits { per_modality, fused })
}

/// Fused class probabilities.
pub fn predict_proba(params: &NamParams, sample: &Sample, available: ModalitySet) -> Result<Vec<f64>, NamError> {
    Ok(softmax(&forward(params, sample, available)?.fused))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn tiny() -> NamParams {
        // H = 1, one feature, input weight 1, hidden bias 0, outputs [1, -1]
        let layout = NamLayout::new(vec!["a".into()], vec![1], 1, 2);
        NamParams::unflatten(vec![1.0, 0.0, 1.0, -1.0, 0.0, 0.0], layout).unwrap()
    }

    fn sample(features: Vec<Option<Vec<f64>>>) -> Sample {
        Sample { label: 0, features }
    }

    #[test]
    fn hand_evaluated_perceptron() {
        let p = tiny();
        let s = sample(vec![Some(vec![2.0])]);
        let one = ModalitySet::single(0);
        let logits = forward(&p, &s, one).unwrap();
        assert_eq!(logits.per_modality[0].as_deref(), Some(&[2.0, -2.0][..]));
        assert_eq!(logits.fused, vec![2.0, -2.0]);
        let a = attribution(&p, &s, one).unwrap();
        let m0 = a.per_modality[0].as_ref().unwrap();
        assert_eq!(m0.contributions, vec![vec![2.0, -2.0]]);
        assert_eq!(m0.explanation, vec![2.0, -2.0]);
        // negative input is cut by the ReLU
        let neg = forward(&p, &sample(vec![Some(vec![-3.0])]), one).unwrap();
        assert_eq!(neg.fused, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_model_is_uniform() {
        let layout = NamLayout::new(vec!["a".into(), "b".into()], vec![2, 3], 4, 5);
        let p = NamParams::zeros(layout);
        let s = sample(vec![Some(vec![1.0, -2.0]), Some(vec![0.3, 0.1, 9.0])]);
        let both = ModalitySet::full(2);
        let probs = predict_proba(&p, &s, both).unwrap();
        assert!(probs.iter().all(|&q| (q - 0.2).abs() < 1e-15));
        let a = attribution(&p, &s, both).unwrap();
        for (_, e) in a.explanations() {
            assert!(e.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_modality_fusion_is_identity() {
        let layout = NamLayout::new(vec!["a".into(), "b".into()], vec![2, 3], 4, 3);
        let p = NamParams::init(layout, &mut seeded_rng(2));
        let s = sample(vec![None, Some(vec![0.3, -0.1, 0.9])]);
        let logits = forward(&p, &s, ModalitySet::single(1)).unwrap();
        assert_eq!(logits.per_modality[1].as_ref().unwrap(), &logits.fused);
        assert!(logits.per_modality[0].is_none());
    }

    #[test]
    fn additivity_identity() {
        let layout = NamLayout::new(vec!["a".into(), "b".into()], vec![2, 3], 4, 3);
        let mut p = NamParams::init(layout, &mut seeded_rng(3));
        p.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * i as f64);
        let s = sample(vec![Some(vec![0.5, 1.5]), Some(vec![0.3, -0.1, 0.9])]);
        let both = ModalitySet::full(2);
        let logits = forward(&p, &s, both).unwrap();
        let a = attribution(&p, &s, both).unwrap();
        for (m, e) in a.explanations() {
            let z = logits.per_modality[m].as_ref().unwrap();
            for c in 0..3 {
                assert!((p.bias(m)[c] + e[c] - z[c]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn errors() {
        let p = tiny();
        let s = sample(vec![Some(vec![1.0, 2.0])]);
        assert_eq!(
            forward(&p, &s, ModalitySet::single(0)).unwrap_err(),
            NamError::DimensionMismatch { modality: 0, expected: 1, found: 2 }
        );
        assert_eq!(forward(&p, &s, ModalitySet::single(3)).unwrap_err(), NamError::UnknownModality(3));
        assert_eq!(forward(&p, &s, ModalitySet::EMPTY).unwrap_err(), NamError::NoModalities);
        let missing = sample(vec![None]);
        assert_eq!(forward(&p, &missing, ModalitySet::single(0)).unwrap_err(), NamError::MissingModality(0));
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -1000.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = log_softmax(&[0.0, 0.0]);
        assert!((lp[0] - (0.5f64).ln()).abs() < 1e-15);
    }
}
