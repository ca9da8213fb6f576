//! Three-term local objective and its analytic gradient.
//!
//! For a batch of `B` samples observed through the modality set `M`:
//!
//! * `pred`  = mean cross-entropy of `softmax(fused)` against the label.
//! * `modal` = mean over samples of `(1/|M|) Σ_m τ² KL(softmax(fused/τ) ‖ softmax(z_m/τ))`;
//!   zero when `|M| = 1`. The fused teacher is not detached.
//! * `intp`  = mean over samples, modalities, features and classes of the
//!   squared shape-function outputs.
//!
//! `total = pred + λ1·modal + λ2·intp`.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use super::forward::{check_sample, eval_shape, log_softmax};
use super::{NamError, NamParams};
use crate::data::Sample;
use crate::modality::ModalitySet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Weight of the cross-modal consistency term (λ1).
    pub lambda_consistency: f64,
    /// Weight of the attribution penalty (λ2).
    pub lambda_interp: f64,
    /// Distillation temperature τ.
    pub temperature: f64,
    pub lr: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Hidden width `H` of every shape function.
    pub hidden: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda_consistency: 0.5,
            lambda_interp: 0.1,
            temperature: 2.0,
            lr: 0.1,
            local_epochs: 2,
            batch_size: 16,
            hidden: 8,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), NamError> {
        let bad = |field, reason: &str| Err(NamError::InvalidHyper { field, reason: reason.to_string() });
        if !(self.lambda_consistency.is_finite() && self.lambda_consistency >= 0.0) {
            return bad("lambda_consistency", "must be finite and nonnegative");
        }
        if !(self.lambda_interp.is_finite() && self.lambda_interp >= 0.0) {
            return bad("lambda_interp", "must be finite and nonnegative");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature", "must be finite and positive");
        }
        // lr = 0 is accepted as a frozen-training switch
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr", "must be finite and nonnegative");
        }
        if self.local_epochs == 0 {
            return bad("local_epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pred: f64,
    pub modal: f64,
    pub intp: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(pred: f64, modal: f64, intp: f64, hyper: &Hyperparams) -> Self {
        LossBreakdown {
            pred,
            modal,
            intp,
            total: pred + hyper.lambda_consistency * modal + hyper.lambda_interp * intp,
        }
    }
}

/// Loss breakdown and gradient of `total` with respect to every parameter.
///
/// Gradient entries for modalities outside `available` are zero.
pub fn loss_and_grad<S: Borrow<Sample>>(
    params: &NamParams,
    batch: &[S],
    available: ModalitySet,
    hyper: &Hyperparams,
) -> Result<(LossBreakdown, NamParams), NamError> {
    if batch.is_empty() {
        return Err(NamError::EmptyBatch);
    }
    let layout = params.layout();
    let (hidden, classes) = (layout.hidden, layout.classes);
    let shape_len = layout.shape_len();
    for s in batch {
        let s = s.borrow();
        check_sample(layout, s, available)?;
        if s.label >= classes {
            return Err(NamError::LabelOutOfRange { label: s.label, classes });
        }
    }

    let mods: Vec<usize> = available.iter().collect();
    let n_mod = mods.len() as f64;
    let tau = hyper.temperature;
    let lam1 = hyper.lambda_consistency;
    let lam2 = hyper.lambda_interp;
    let feature_total: usize = mods.iter().map(|&m| layout.dims[m]).sum();
    let intp_norm = (classes * feature_total) as f64;

    let mut grads = NamParams::zeros(layout.clone());
    let (mut pred_sum, mut modal_sum, mut intp_sum) = (0.0, 0.0, 0.0);

    // per-modality caches, reused across samples
    let mut pre: Vec<Vec<f64>> = mods.iter().map(|&m| vec![0.0; layout.dims[m] * hidden]).collect();
    let mut contrib: Vec<Vec<f64>> = mods.iter().map(|&m| vec![0.0; layout.dims[m] * classes]).collect();
    let mut z: Vec<Vec<f64>> = vec![vec![0.0; classes]; mods.len()];
    let mut g_z: Vec<Vec<f64>> = vec![vec![0.0; classes]; mods.len()];

    for s in batch {
        let s = s.borrow();
        let mut fused = vec![0.0; classes];
        for (i, &m) in mods.iter().enumerate() {
            let seg = params.segment(m);
            let x = s.modality(m);
            contrib[i].iter_mut().for_each(|v| *v = 0.0);
            for (j, &xj) in x.iter().enumerate() {
                eval_shape(
                    &seg[j * shape_len..(j + 1) * shape_len],
                    xj,
                    hidden,
                    classes,
                    &mut pre[i][j * hidden..(j + 1) * hidden],
                    &mut contrib[i][j * classes..(j + 1) * classes],
                );
            }
            let bias = params.bias(m);
            for c in 0..classes {
                let sum_a: f64 = (0..x.len()).map(|j| contrib[i][j * classes + c]).sum();
                z[i][c] = bias[c] + sum_a;
                fused[c] += z[i][c];
            }
        }
        fused.iter_mut().for_each(|f| *f /= n_mod);

        // prediction term
        let log_p = log_softmax(&fused);
        pred_sum -= log_p[s.label];
        let mut g_fused: Vec<f64> = log_p.iter().map(|lp| lp.exp()).collect();
        g_fused[s.label] -= 1.0;
        g_z.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));

        // consistency term: each modality head distills toward the fused teacher
        if mods.len() > 1 {
            let t_scaled: Vec<f64> = fused.iter().map(|f| f / tau).collect();
            let log_teacher = log_softmax(&t_scaled);
            let teacher: Vec<f64> = log_teacher.iter().map(|l| l.exp()).collect();
            let coeff = lam1 * tau / n_mod;
            let mut sample_modal = 0.0;
            for i in 0..mods.len() {
                let s_scaled: Vec<f64> = z[i].iter().map(|v| v / tau).collect();
                let log_student = log_softmax(&s_scaled);
                let kl: f64 = (0..classes)
                    .map(|c| teacher[c] * (log_teacher[c] - log_student[c]))
                    .sum();
                sample_modal += kl;
                for c in 0..classes {
                    g_fused[c] += coeff * teacher[c] * ((log_teacher[c] - log_student[c]) - kl);
                    g_z[i][c] += coeff * (log_student[c].exp() - teacher[c]);
                }
            }
            modal_sum += tau * tau * sample_modal / n_mod;
        }

        for (i, &m) in mods.iter().enumerate() {
            for c in 0..classes {
                g_z[i][c] += g_fused[c] / n_mod;
            }
            intp_sum += contrib[i].iter().map(|a| a * a).sum::<f64>() / intp_norm;

            let seg_start = layout.segment_start(m);
            let bias_off = seg_start + layout.bias_offset(m);
            let gv = grads.values_mut();
            for c in 0..classes {
                gv[bias_off + c] += g_z[i][c];
            }
            let seg = params.segment(m);
            let x = s.modality(m);
            let mut g_a = vec![0.0; classes];
            for (j, &xj) in x.iter().enumerate() {
                let a_j = &contrib[i][j * classes..(j + 1) * classes];
                for c in 0..classes {
                    g_a[c] = g_z[i][c] + lam2 * 2.0 * a_j[c] / intp_norm;
                }
                let block = &seg[j * shape_len..(j + 1) * shape_len];
                let w_out = &block[2 * hidden..];
                let gb = seg_start + j * shape_len;
                for h in 0..hidden {
                    let u = pre[i][j * hidden + h];
                    if u <= 0.0 {
                        continue;
                    }
                    let mut g_act = 0.0;
                    for c in 0..classes {
                        gv[gb + 2 * hidden + h * classes + c] += u * g_a[c];
                        g_act += w_out[h * classes + c] * g_a[c];
                    }
                    gv[gb + h] += g_act * xj;
                    gv[gb + hidden + h] += g_act;
                }
            }
        }
    }

    let b = batch.len() as f64;
    grads.values_mut().iter_mut().for_each(|g| *g /= b);
    let loss = LossBreakdown::new(pred_sum / b, modal_sum / b, intp_sum / b, hyper);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nam::{forward, NamLayout};
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn layout() -> NamLayout {
        NamLayout::new(vec!["a".into(), "b".into()], vec![2, 2], 4, 3)
    }

    fn batch(rng: &mut crate::rng::SimRng, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                label: i % 3,
                features: vec![
                    Some((0..2).map(|_| rng.random_range(-2.0..2.0)).collect()),
                    Some((0..2).map(|_| rng.random_range(-2.0..2.0)).collect()),
                ],
            })
            .collect()
    }

    #[test]
    fn single_modality_has_no_consistency_term() {
        let mut rng = seeded_rng(0);
        let p = NamParams::init(layout(), &mut rng);
        let b = batch(&mut rng, 5);
        let (loss, grads) = loss_and_grad(&p, &b, ModalitySet::single(0), &Hyperparams::default()).unwrap();
        assert_eq!(loss.modal, 0.0);
        assert!(grads.segment(1).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn identical_heads_have_zero_consistency() {
        let mut rng = seeded_rng(1);
        let mut p = NamParams::init(layout(), &mut rng);
        let seg0 = p.segment(0).to_vec();
        p.segment_mut(1).copy_from_slice(&seg0);
        let mut b = batch(&mut rng, 4);
        for s in &mut b {
            s.features[1] = s.features[0].clone();
        }
        let (loss, _) = loss_and_grad(&p, &b, ModalitySet::full(2), &Hyperparams::default()).unwrap();
        assert!(loss.modal.abs() < 1e-15);
    }

    #[test]
    fn breakdown_reconstructs_total() {
        let mut rng = seeded_rng(2);
        let p = NamParams::init(layout(), &mut rng);
        let b = batch(&mut rng, 6);
        let h = Hyperparams { lambda_consistency: 0.7, lambda_interp: 0.3, ..Default::default() };
        let (loss, _) = loss_and_grad(&p, &b, ModalitySet::full(2), &h).unwrap();
        assert!(loss.pred >= 0.0 && loss.modal >= 0.0 && loss.intp >= 0.0);
        assert!((loss.total - (loss.pred + 0.7 * loss.modal + 0.3 * loss.intp)).abs() <= 1e-12);
    }

    #[test]
    fn pred_term_matches_forward_cross_entropy() {
        let mut rng = seeded_rng(3);
        let p = NamParams::init(layout(), &mut rng);
        let b = batch(&mut rng, 3);
        let all = ModalitySet::full(2);
        let (loss, _) = loss_and_grad(&p, &b, all, &Hyperparams::default()).unwrap();
        let ce: f64 = b
            .iter()
            .map(|s| -crate::nam::log_softmax(&forward(&p, s, all).unwrap().fused)[s.label])
            .sum::<f64>()
            / 3.0;
        assert!((loss.pred - ce).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let p = NamParams::zeros(layout());
        let h = Hyperparams::default();
        assert_eq!(loss_and_grad::<Sample>(&p, &[], ModalitySet::full(2), &h).unwrap_err(), NamError::EmptyBatch);
        let mut b = batch(&mut seeded_rng(0), 1);
        b[0].label = 3;
        assert_eq!(
            loss_and_grad(&p, &b, ModalitySet::full(2), &h).unwrap_err(),
            NamError::LabelOutOfRange { label: 3, classes: 3 }
        );
    }

    #[test]
    fn hyper_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        let bad = Hyperparams { temperature: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(NamError::InvalidHyper { field: "temperature", .. })));
    }
}
