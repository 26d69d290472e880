use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emlabel_core::metrics::{
    alde, binary_prf, clip_distribution, mean_object_material_f1, mnre, ratings_kl, review_weight, weighted_mean_kl,
    Confusion, RatingsDistribution,
};
use emlabel_core::taxonomy::{HardLabel, MaterialLabelState};

const TOL: f64 = 1e-12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

#[test]
fn ratio_metrics_hand_values() {
    assert_eq!(mnre(5.0, 5.0).unwrap(), 1.0);
    assert_eq!(mnre(2.0, 1.0).unwrap(), 0.5);
    assert_eq!(mnre(3.0, 4.0).unwrap(), 0.75);
    assert_eq!(alde(11.5, 11.5).unwrap(), 0.0);
    assert!(close(alde(std::f64::consts::E * 0.25, 0.25).unwrap(), 1.0));
    assert!(close(alde(2.0, 8.0).unwrap(), 4f64.ln()));
    assert!((alde(2.0, 8.0).unwrap() - 1.3863).abs() < 1e-4);
}

#[test]
fn non_positive_inputs_are_invalid() {
    for (p, t) in [(0.0, 1.0), (1.0, 0.0), (-1.0, 2.0), (f64::INFINITY, 1.0)] {
        assert_eq!(mnre(p, t).unwrap_err().code(), "invalid_argument");
        assert_eq!(alde(p, t).unwrap_err().code(), "invalid_argument");
    }
}

#[test]
fn mnre_is_exp_of_minus_alde_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10_000 {
        let p = 10f64.powf(rng.random_range(-4.0..4.0));
        let t = 10f64.powf(rng.random_range(-4.0..4.0));
        let lhs = mnre(p, t).unwrap();
        let rhs = (-alde(p, t).unwrap()).exp();
        assert!(close(lhs, rhs), "p={p} t={t}: {lhs} vs {rhs}");
    }
}

#[test]
fn kl_hand_values() {
    let uniform = RatingsDistribution::new([0.2; 5], 4).unwrap();
    let onehot = RatingsDistribution::new([1.0, 0.0, 0.0, 0.0, 0.0], 4).unwrap();
    assert_eq!(ratings_kl(&uniform, &uniform), 0.0);
    assert!(close(ratings_kl(&onehot, &uniform), 5f64.ln()));
    assert!((ratings_kl(&onehot, &uniform) - 1.6094).abs() < 1e-4);
}

#[test]
fn zero_review_listings_do_not_move_the_batch_mean() {
    let uniform = RatingsDistribution::new([0.2; 5], 0).unwrap();
    let skewed = RatingsDistribution::new([0.6, 0.1, 0.1, 0.1, 0.1], 0).unwrap();
    let reviewed = RatingsDistribution::new([0.6, 0.1, 0.1, 0.1, 0.1], 7).unwrap();
    let alone = weighted_mean_kl(&[(reviewed.clone(), uniform.clone())]).unwrap();
    let mixed = weighted_mean_kl(&[(reviewed.clone(), uniform.clone()), (skewed, uniform.clone())]).unwrap();
    assert_eq!(alone, mixed);
    assert!(close(alone, ratings_kl(&reviewed, &uniform)));
}

#[test]
fn weighted_mean_matches_hand_weights() {
    let a = RatingsDistribution::new([1.0, 0.0, 0.0, 0.0, 0.0], 1).unwrap();
    let b = RatingsDistribution::new([0.5, 0.5, 0.0, 0.0, 0.0], 3).unwrap();
    let pred = RatingsDistribution::new([0.2; 5], 0).unwrap();
    let (wa, wb) = (2f64.ln(), 4f64.ln());
    assert!(close(review_weight(1), wa));
    assert!(close(review_weight(3), wb));
    let expected = (wa * 5f64.ln() + wb * 2.5f64.ln()) / (wa + wb);
    assert!(close(weighted_mean_kl(&[(a, pred.clone()), (b, pred)]).unwrap(), expected));
}

#[test]
fn clipping_keeps_kl_finite_for_zero_predictions() {
    let truth = RatingsDistribution::new([0.0, 0.0, 0.0, 0.0, 1.0], 9).unwrap();
    let pred = RatingsDistribution::new([1.0, 0.0, 0.0, 0.0, 0.0], 9).unwrap();
    let kl = ratings_kl(&truth, &pred);
    let clipped = clip_distribution(&pred.probs);
    assert!(kl.is_finite());
    assert!(close(kl, -clipped[4].ln()));
    assert!(clipped[4] >= 1e-7 * 0.99);
}

#[test]
fn invalid_distribution_is_rejected() {
    assert!(RatingsDistribution::new([0.5, 0.5, 0.5, 0.0, 0.0], 1).is_err());
    assert!(RatingsDistribution::new([-0.1, 0.3, 0.3, 0.3, 0.2], 1).is_err());
    assert!(RatingsDistribution::from_histogram([0; 5]).is_none());
    let h = RatingsDistribution::from_histogram([1, 0, 0, 0, 3]).unwrap();
    assert_eq!((h.probs, h.n_reviews), ([0.25, 0.0, 0.0, 0.0, 0.75], 4));
}

#[test]
fn rare_positive_test_set_prf() {
    let s = binary_prf(23, 2, 2, 1477);
    let pct = |x: Option<f64>| (x.unwrap() * 1000.0).round() / 10.0;
    assert_eq!(pct(s.precision), 92.0);
    assert_eq!(pct(s.recall), 92.0);
    assert_eq!(pct(s.f1), 92.0);
    assert_eq!(pct(s.accuracy), 99.7);
    assert!((s.accuracy.unwrap() - 0.9973).abs() < 1e-4);
}

#[test]
fn prf_degenerate_and_unit_cases() {
    let s = binary_prf(0, 0, 5, 0);
    assert_eq!(s.precision, None);
    assert_eq!(s.recall, Some(0.0));
    let s = binary_prf(1, 1, 1, 1);
    assert_eq!([s.precision, s.recall, s.f1, s.accuracy], [Some(0.5); 4]);
    assert_eq!(binary_prf(0, 0, 0, 0).accuracy, None);
}

#[test]
fn confusion_counts_predictions() {
    let pred = [true, true, false, false, true];
    let truth = [true, false, true, false, true];
    let c = Confusion::from_predictions(&pred, &truth);
    assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 1, 1, 1));
    assert_eq!(c.scores(), binary_prf(2, 1, 1, 1));
}

#[test]
fn dataset_material_f1_is_the_mean_over_objects() {
    let labels = |h: [HardLabel; 3]| MaterialLabelState {
        prob: h.iter().map(|l| if *l == HardLabel::Positive { 1.0 } else { 0.0 }).collect(),
        fixed: h.iter().map(|l| *l != HardLabel::Unknown).collect(),
        hard: h.to_vec(),
    };
    use HardLabel::*;
    let truths = vec![labels([Positive, Negative, Unknown]), labels([Positive, Positive, Negative])];
    // First object perfect (the unknown node is ignored); second has F1 2/3.
    let preds = vec![vec![0.9, 0.1, 0.9], vec![0.9, 0.2, 0.1]];
    let f1 = mean_object_material_f1(&preds, &truths, 0.5).unwrap();
    assert!(close(f1, (1.0 + 2.0 / 3.0) / 2.0));
    assert!(mean_object_material_f1(&preds[..1], &truths, 0.5).is_err());
}

fn distribution() -> impl Strategy<Value = [f64; 5]> {
    prop::array::uniform5(0.0f64..1.0).prop_filter_map("all zero", |raw| {
        let s: f64 = raw.iter().sum();
        (s > 1e-6).then(|| raw.map(|x| x / s))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ratio_metrics_symmetric_and_scale_invariant(
        p in 1e-3f64..1e3, t in 1e-3f64..1e3, c in 1e-2f64..1e2,
    ) {
        prop_assert_eq!(mnre(p, t).unwrap(), mnre(t, p).unwrap());
        prop_assert_eq!(alde(p, t).unwrap(), alde(t, p).unwrap());
        prop_assert!((mnre(c * p, c * t).unwrap() - mnre(p, t).unwrap()).abs() < 1e-12);
        prop_assert!((alde(c * p, c * t).unwrap() - alde(p, t).unwrap()).abs() < 1e-12);
        let m = mnre(p, t).unwrap();
        prop_assert!(m > 0.0 && m <= 1.0);
    }

    #[test]
    fn kl_non_negative_and_zero_only_on_equality(a in distribution(), b in distribution()) {
        let ta = RatingsDistribution::new(a, 1).unwrap();
        let tb = RatingsDistribution::new(b, 1).unwrap();
        let kl = ratings_kl(&ta, &tb);
        prop_assert!(kl >= 0.0);
        // Against itself, the only gap comes from clipping the prediction.
        let clipped = clip_distribution(&a);
        let self_kl = ratings_kl(&ta, &ta);
        if clipped == a {
            prop_assert!(self_kl.abs() < 1e-12);
        }
        let differs = clip_distribution(&b).iter().zip(&a).any(|(x, y)| (x - y).abs() > 1e-6);
        if differs {
            prop_assert!(kl > 0.0);
        }
    }
}
