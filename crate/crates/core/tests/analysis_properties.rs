use fuzzy_attn::analysis::{
    explain_firing, explain_sample, group_rule_map, ibs_from_metrics, ibs_metrics, prototypes_for, rule_map_from_firing,
    top_k, trial_firing,
};
use fuzzy_attn::encoder::{AttentionKind, EncoderConfig, Structure};
use fuzzy_attn::init;
use fuzzy_attn::model::{ModelConfig, PairClassifier};
use fuzzy_attn::synth::{build_dataset, token_geometry, GenConfig, TrialSet};
use fuzzy_attn::{Error, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model_for(set: &TrialSet, structure: Structure, kinds: Vec<AttentionKind>, rules: usize) -> PairClassifier {
    let (s, c) = token_geometry(set.layout.n_features(), set.n_samples(), structure);
    let mut enc = EncoderConfig::new(structure, s, c);
    enc.depth = kinds.len();
    enc.attention_kinds = kinds;
    enc.d_model = 8;
    enc.ffn_hidden = 16;
    enc.rules = rules;
    PairClassifier::new(ModelConfig::new(enc), 0).unwrap()
}

fn short() -> GenConfig {
    GenConfig {
        window_s: 2.0,
        ..GenConfig::default()
    }
}

#[test]
fn identity_and_diagonal_prototypes() {
    let m = Tensor::from_rows(&[vec![0.3, -1.2, 2.0], vec![1.0, 0.0, -0.5]]).unwrap();
    let p = prototypes_for(&Tensor::eye(3), &Tensor::zeros(&[3]), &m).unwrap();
    assert_eq!(p[0].vector, m.row(0));
    assert_eq!(p[1].vector, m.row(1));

    let w = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
    let c = Tensor::from_rows(&[vec![2.0, 4.0]]).unwrap();
    let p = prototypes_for(&w, &Tensor::zeros(&[2]), &c).unwrap();
    assert!((p[0].vector[0] - 1.0).abs() < 1e-15 && (p[0].vector[1] - 1.0).abs() < 1e-15);
}

#[test]
fn square_prototypes_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let w = init::normal(&mut rng, &[6, 6], 1.0).add(&Tensor::eye(6).map(|v| 3.0 * v)).unwrap();
        let b = init::normal(&mut rng, &[6], 1.0);
        let m = init::normal(&mut rng, &[5, 6], 1.0);
        for p in prototypes_for(&w, &b, &m).unwrap() {
            let x = Tensor::from_rows(&[p.vector.clone()]).unwrap();
            let back = x.matmul(&w).unwrap();
            for k in 0..6 {
                assert!((back.at(&[0, k]) + b.data()[k] - m.at(&[p.rule, k])).abs() < 1e-8);
            }
            assert!(p.residual < 1e-8);
        }
    }
}

#[test]
fn rectangular_prototypes_are_least_squares_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    // Wide input (C_in > D): the preimage is exact and of minimum norm.
    // Narrow input (C_in < D): the residual is minimal.
    for (c_in, d) in [(7, 3), (3, 7)] {
        let w = init::normal(&mut rng, &[c_in, d], 1.0);
        let b = init::normal(&mut rng, &[d], 1.0);
        let m = init::normal(&mut rng, &[1, d], 1.0);
        let p = prototypes_for(&w, &b, &m).unwrap().remove(0);
        assert_eq!(p.vector.len(), c_in);
        let residual = |x: &[f64]| {
            let y = Tensor::from_rows(&[x.to_vec()]).unwrap().matmul(&w).unwrap();
            (0..d).map(|k| (y.at(&[0, k]) + b.data()[k] - m.at(&[0, k])).powi(2)).sum::<f64>().sqrt()
        };
        assert!((residual(&p.vector) - p.residual).abs() < 1e-10);
        let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..100 {
            let delta = init::normal(&mut rng, &[c_in], 1e-2);
            let cand: Vec<f64> = p.vector.iter().zip(delta.data()).map(|(a, b)| a + b).collect();
            let (r0, r1) = (residual(&p.vector), residual(&cand));
            assert!(r0 <= r1 + 1e-12);
            if c_in > d && (r1 - r0).abs() < 1e-10 {
                assert!(norm(&p.vector) <= norm(&cand) + 1e-12);
            }
        }
    }
}

#[test]
fn rule_strengths_sum_to_one() {
    let set = build_dataset(0, 1, 2, &short()).unwrap();
    for structure in [Structure::ChannelFirst, Structure::TimeFirst] {
        let model = model_for(&set, structure, vec![AttentionKind::Fuzzy, AttentionKind::Fuzzy], 5);
        for layer in 0..2 {
            let ex = explain_sample(&set.trials[1], &model, &set.layout, layer, 3).unwrap();
            assert_eq!(ex.streams.len(), 2);
            for stream in &ex.streams {
                let total: f64 = stream.rules.iter().map(|r| r.strength).sum();
                assert!((total - 1.0).abs() < 1e-9);
                for r in &stream.rules {
                    assert_eq!(r.top_tokens.len(), 3);
                    assert!(r.top_tokens.iter().all(|&t| t < model.config.encoder.max_tokens));
                }
            }
        }
    }
}

#[test]
fn single_rule_has_unit_strength_and_channel_labels() {
    let set = build_dataset(0, 1, 1, &short()).unwrap();
    let model = model_for(&set, Structure::ChannelFirst, vec![AttentionKind::Fuzzy], 1);
    let ex = explain_sample(&set.trials[0], &model, &set.layout, 0, 3).unwrap();
    let rule = &ex.streams[0].rules[0];
    assert!((rule.strength - 1.0).abs() < 1e-12);
    // All tokens tie; the lowest indices win.
    assert_eq!(rule.top_tokens, vec![0, 1, 2]);
    assert_eq!(rule.top_labels[0], set.layout.feature_label(0));
}

#[test]
fn uniform_firing_report() {
    let fs = Tensor::filled(&[6, 4], 0.25);
    let reports = explain_firing(&fs, 3, |i| format!("tok{i}"));
    for r in &reports {
        assert_eq!(r.strength, 0.25);
        assert_eq!(r.top_tokens, vec![0, 1, 2]);
    }
    assert_eq!(top_k(&[0.1, 0.5, 0.5, 0.2], 2), vec![1, 2]);
}

#[test]
fn dot_layers_cannot_be_explained() {
    let set = build_dataset(0, 1, 1, &short()).unwrap();
    let model = model_for(&set, Structure::TimeFirst, vec![AttentionKind::Dot, AttentionKind::Fuzzy], 3);
    let trial = &set.trials[0];
    assert!(matches!(explain_sample(trial, &model, &set.layout, 0, 3), Err(Error::Contract(_))));
    assert!(matches!(explain_sample(trial, &model, &set.layout, 2, 3), Err(Error::Contract(_))));
    assert!(explain_sample(trial, &model, &set.layout, 1, 3).is_ok());
}

#[test]
fn group_map_shape_and_single_label_error() {
    let set = build_dataset(0, 1, 3, &GenConfig::default()).unwrap();
    let model = model_for(&set, Structure::ChannelFirst, vec![AttentionKind::Fuzzy], 10);
    let map = group_rule_map(&set, &model, 0).unwrap();
    assert_eq!(map.shape(), (10, 40));
    assert_eq!(map.token_labels.len(), 40);

    let ones: Vec<usize> = (0..set.len()).filter(|&i| set.trials[i].label == 1).collect();
    let single = set.subset(&ones);
    assert!(matches!(group_rule_map(&single, &model, 0), Err(Error::Contract(_))));
}

#[test]
fn permuted_labels_give_calibrated_false_positives() {
    let set = build_dataset(4, 4, 15, &GenConfig::default()).unwrap();
    let model = model_for(&set, Structure::ChannelFirst, vec![AttentionKind::Fuzzy], 10);
    let firing = trial_firing(&set, &model, 0).unwrap();
    let mut labels = set.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut rates = vec![];
    for _ in 0..20 {
        labels.shuffle(&mut rng);
        let map = rule_map_from_firing(&firing, &labels, 0, Structure::ChannelFirst, &set.layout).unwrap();
        rates.push(map.significant_fraction(0.05));
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!((mean - 0.05).abs() <= 0.03, "mean false-positive rate {mean}");
}

#[test]
fn ibs_hand_examples() {
    let a = Tensor::vector(vec![1.0, 2.0, 3.0]);
    let same = ibs_metrics(&a, &a).unwrap();
    assert_eq!((same.pearson, same.cosine, same.euclidean), (Some(1.0), Some(1.0), 0.0));
    let m = ibs_metrics(&a, &a.map(|v| 2.0 * v)).unwrap();
    assert!((m.pearson.unwrap() - 1.0).abs() < 1e-15 && (m.cosine.unwrap() - 1.0).abs() < 1e-15);
    assert!((m.euclidean - 14f64.sqrt()).abs() < 1e-15);
    let neg = ibs_metrics(&a, &a.map(|v| -v)).unwrap();
    assert!((neg.pearson.unwrap() + 1.0).abs() < 1e-15 && (neg.cosine.unwrap() + 1.0).abs() < 1e-15);
    assert!((neg.euclidean - 2.0 * 14f64.sqrt()).abs() < 1e-14);
    let flat = ibs_metrics(&Tensor::vector(vec![1.0, 1.0, 1.0]), &a).unwrap();
    assert_eq!(flat.pearson, None);
    assert_eq!(ibs_metrics(&Tensor::zeros(&[3]), &a).unwrap().cosine, None);
}

#[test]
fn identical_streams_have_zero_distance() {
    let set = build_dataset(0, 1, 3, &GenConfig::default()).unwrap();
    let model = model_for(&set, Structure::TimeFirst, vec![AttentionKind::Fuzzy], 4);
    let mut per_trial = vec![];
    for tr in &set.trials {
        let d = tr.d1.t().unwrap();
        let (e1, e2) = model.embeddings_for_ibs(&d, &d).unwrap();
        per_trial.push(ibs_metrics(&e1, &e2).unwrap());
    }
    assert!(per_trial.iter().all(|m| m.euclidean == 0.0));
    let test = ibs_from_metrics(per_trial, &set.labels()).unwrap();
    assert_eq!(test.euclidean.t, 0.0);
}

proptest! {
    #[test]
    fn ibs_scaling(
        v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..20),
        k in 0.01f64..100.0,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let (ta, tb) = (Tensor::vector(a), Tensor::vector(b));
        let m = ibs_metrics(&ta, &tb).unwrap();
        let s = ibs_metrics(&ta.map(|x| k * x), &tb.map(|x| k * x)).unwrap();
        if let (Some(p), Some(q)) = (m.pearson, s.pearson) {
            prop_assert!((p - q).abs() < 1e-9);
        }
        if let (Some(p), Some(q)) = (m.cosine, s.cosine) {
            prop_assert!((p - q).abs() < 1e-9);
        }
        prop_assert!((s.euclidean - k * m.euclidean).abs() < 1e-9 * (1.0 + k * m.euclidean));
    }
}
