use fedmmx_core::data::Sample;
use fedmmx_core::metrics::{
    dataset_ec, ece, explanation_consistency, faithfulness, mask_top_features, sample_ec, FaithfulnessConfig,
};
use fedmmx_core::modality::ModalitySet;
use fedmmx_core::nam::{attribution, predict_proba, softmax, NamLayout, NamParams};
use fedmmx_core::rng::{seeded_rng, SimRng};
use proptest::prelude::*;
use rand::Rng;

fn random_params(layout: NamLayout, rng: &mut SimRng) -> NamParams {
    let values = (0..layout.total_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    NamParams::unflatten(values, layout).unwrap()
}

fn full_sample(layout: &NamLayout, rng: &mut SimRng) -> Sample {
    Sample {
        label: 0,
        features: layout.dims.iter().map(|&d| Some((0..d).map(|_| rng.random_range(-2.0..2.0)).collect())).collect(),
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn three_modalities_average_all_pairs() {
    let layout = NamLayout::new(vec!["a".into(), "b".into(), "c".into()], vec![2, 3, 1], 3, 4);
    let mut rng = seeded_rng(17);
    let params = random_params(layout.clone(), &mut rng);
    let sample = full_sample(&layout, &mut rng);
    let all = ModalitySet::full(3);
    let attr = attribution(&params, &sample, all).unwrap();
    // explanation e_m[c] = sum over features of the contributions
    let e: Vec<Vec<f64>> = attr
        .per_modality
        .iter()
        .map(|a| {
            let a = a.as_ref().unwrap();
            (0..4).map(|c| a.contributions.iter().map(|f| f[c]).sum()).collect()
        })
        .collect();
    let expected = (cosine(&e[0], &e[1]) + cosine(&e[0], &e[2]) + cosine(&e[1], &e[2])) / 3.0;
    let got = sample_ec(&params, &sample, all).unwrap().unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn identical_heads_on_identical_inputs_are_fully_consistent() {
    let layout = NamLayout::new(vec!["a".into(), "b".into()], vec![3, 3], 4, 3);
    let mut rng = seeded_rng(5);
    let mut params = random_params(layout.clone(), &mut rng);
    let head = params.segment(0).to_vec();
    params.segment_mut(1).copy_from_slice(&head);
    let samples: Vec<Sample> = (0..20)
        .map(|_| {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            Sample { label: 0, features: vec![Some(x.clone()), Some(x)] }
        })
        .collect();
    for s in &samples {
        let ec = sample_ec(&params, s, ModalitySet::full(2)).unwrap().unwrap();
        assert!((ec - 1.0).abs() < 1e-12 || ec == 0.0);
    }
    let mean = dataset_ec(&params, &samples, ModalitySet::full(2)).unwrap().value().unwrap();
    assert!(mean > 0.9);
}

#[test]
fn full_masking_leaves_only_biases() {
    let layout = NamLayout::new(vec!["a".into(), "b".into()], vec![2, 3], 4, 3);
    let mut rng = seeded_rng(23);
    let mut params = random_params(layout.clone(), &mut rng);
    // zero hidden biases so every shape function vanishes at the mask value 0
    let (h, shape) = (layout.hidden, layout.shape_len());
    for m in 0..2 {
        let start = layout.segment_start(m);
        for j in 0..layout.dims[m] {
            let off = start + j * shape + h;
            params.values_mut()[off..off + h].fill(0.0);
        }
    }
    let cfg = FaithfulnessConfig { mask_fraction: 1.0, mask_value: 0.0 };
    for _ in 0..10 {
        let sample = full_sample(&layout, &mut rng);
        let (masked, predicted, p0) = mask_top_features(&params, &sample, &cfg).unwrap();
        assert!(masked.features.iter().flatten().flatten().all(|&x| x == 0.0));

        let fused_bias: Vec<f64> = (0..3).map(|c| (params.bias(0)[c] + params.bias(1)[c]) / 2.0).collect();
        let p1 = softmax(&fused_bias)[predicted];
        let p_model = predict_proba(&params, &masked, ModalitySet::full(2)).unwrap()[predicted];
        assert!((p1 - p_model).abs() < 1e-12);

        let expected = (1.0 - p1 / p0).clamp(0.0, 1.0);
        let got = faithfulness(&params, std::slice::from_ref(&sample), &cfg).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }
}

/// One modality, `d` features; only feature 0 moves the logits.
fn single_signal_model(d: usize, gain: f64) -> NamParams {
    let layout = NamLayout::new(vec!["a".into()], vec![d], 1, 2);
    let mut p = NamParams::zeros(layout);
    // shape_0: w_in = 1, b_hidden = 0, w_out = [gain, -gain]
    let v = p.values_mut();
    v[0] = 1.0;
    v[2] = gain;
    v[3] = -gain;
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masking_the_signal_feature_beats_masking_noise(
        x0 in 0.1f64..3.0,
        rest in proptest::collection::vec(-3.0f64..3.0, 3),
        gain in 0.5f64..4.0,
        irrelevant in 1usize..4,
    ) {
        let params = single_signal_model(4, gain);
        let mut x = vec![x0];
        x.extend(rest);
        let sample = Sample { label: 0, features: vec![Some(x.clone())] };
        let cfg = FaithfulnessConfig { mask_fraction: 0.25, mask_value: 0.0 };
        let fs_signal = faithfulness(&params, std::slice::from_ref(&sample), &cfg).unwrap();

        let probs = predict_proba(&params, &sample, ModalitySet::full(1)).unwrap();
        let c = if probs[0] >= probs[1] { 0 } else { 1 };
        let mut noise = x;
        noise[irrelevant] = 0.0;
        let masked = Sample { label: 0, features: vec![Some(noise)] };
        let p1 = predict_proba(&params, &masked, ModalitySet::full(1)).unwrap()[c];
        let fs_noise = (1.0 - p1 / probs[c]).clamp(0.0, 1.0);
        prop_assert!(fs_signal > fs_noise, "{} vs {}", fs_signal, fs_noise);
    }

    #[test]
    fn cosine_is_symmetric_and_scale_invariant(
        a in proptest::collection::vec(-5.0f64..5.0, 4),
        b in proptest::collection::vec(-5.0f64..5.0, 4),
        scale in 0.01f64..100.0,
    ) {
        let ab = explanation_consistency(&a, &b).unwrap();
        prop_assert_eq!(ab, explanation_consistency(&b, &a).unwrap());
        let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
        prop_assert!((explanation_consistency(&scaled, &b).unwrap() - ab).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn ece_is_bounded(
        pairs in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60),
        bins in 1usize..20,
    ) {
        let (conf, correct): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        let e = ece(&conf, &correct, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn ece_vanishes_when_confidence_matches_accuracy(per_bin in 1usize..10, bins in 2usize..8) {
        // bin b holds `per_bin * bins` samples of confidence (b + 0.5)/bins,
        // of which a matching share is correct
        let mut conf = Vec::new();
        let mut correct = Vec::new();
        let n = per_bin * bins * 2;
        for b in 0..bins {
            let c = (b as f64 + 0.5) / bins as f64;
            let hits = (c * n as f64).round() as usize;
            prop_assume!((hits as f64 - c * n as f64).abs() < 1e-9);
            for i in 0..n {
                conf.push(c);
                correct.push(i < hits);
            }
        }
        prop_assert!(ece(&conf, &correct, bins).unwrap() < 1e-12);
    }
}
