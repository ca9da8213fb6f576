//! Central finite-difference checks of the analytic loss gradient.

use fedmmx_core::data::Sample;
use fedmmx_core::modality::ModalitySet;
use fedmmx_core::nam::{loss_and_grad, Hyperparams, NamLayout, NamParams};
use fedmmx_core::rng::{seeded_rng, SimRng};
use proptest::prelude::*;
use rand::Rng;

const STEP: f64 = 1e-5;
const MAX_REL_ERR: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero coordinates.
const REL_FLOOR: f64 = 1e-6;

fn random_model(rng: &mut SimRng) -> NamParams {
    let layout = NamLayout::new(vec!["a".into(), "b".into()], vec![2, 2], 4, 3);
    let n = layout.total_len();
    let values = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    NamParams::unflatten(values, layout).unwrap()
}

fn random_batch(rng: &mut SimRng, n: usize) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            label: rng.random_range(0..3),
            features: vec![
                Some((0..2).map(|_| rng.random_range(-2.0..2.0)).collect()),
                Some((0..2).map(|_| rng.random_range(-2.0..2.0)).collect()),
            ],
        })
        .collect()
}

fn total(p: &NamParams, batch: &[Sample], avail: ModalitySet, h: &Hyperparams) -> f64 {
    loss_and_grad(p, batch, avail, h).unwrap().0.total
}

/// Max relative error between analytic and central-difference gradients.
fn max_relative_error(p: &NamParams, batch: &[Sample], avail: ModalitySet, h: &Hyperparams) -> f64 {
    let (_, grads) = loss_and_grad(p, batch, avail, h).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..p.values().len() {
        let mut plus = p.clone();
        plus.values_mut()[i] += STEP;
        let mut minus = p.clone();
        minus.values_mut()[i] -= STEP;
        let numeric = (total(&plus, batch, avail, h) - total(&minus, batch, avail, h)) / (2.0 * STEP);
        let analytic = grads.values()[i];
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    worst
}

fn hyper() -> Hyperparams {
    Hyperparams {
        lambda_consistency: 0.8,
        lambda_interp: 0.3,
        temperature: 2.0,
        ..Default::default()
    }
}

#[test]
fn full_objective_matches_finite_differences_on_20_models() {
    for seed in 0..20 {
        let mut rng = seeded_rng(1000 + seed);
        let p = random_model(&mut rng);
        let batch = random_batch(&mut rng, 4);
        let err = max_relative_error(&p, &batch, ModalitySet::full(2), &hyper());
        assert!(err < MAX_REL_ERR, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn single_modality_objective_matches_finite_differences() {
    let mut rng = seeded_rng(7);
    let p = random_model(&mut rng);
    let batch = random_batch(&mut rng, 5);
    let err = max_relative_error(&p, &batch, ModalitySet::single(1), &hyper());
    assert!(err < MAX_REL_ERR, "max relative error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn gradient_agrees_for_random_seeds_and_weights(
        seed in any::<u64>(),
        lam1 in 0.0f64..2.0,
        lam2 in 0.0f64..2.0,
        tau in 0.5f64..4.0,
    ) {
        let mut rng = seeded_rng(seed);
        let p = random_model(&mut rng);
        let batch = random_batch(&mut rng, 3);
        let h = Hyperparams { lambda_consistency: lam1, lambda_interp: lam2, temperature: tau, ..Default::default() };
        let err = max_relative_error(&p, &batch, ModalitySet::full(2), &h);
        prop_assert!(err < MAX_REL_ERR, "max relative error {}", err);
    }
}
