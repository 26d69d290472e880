use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use emlabel_core::datastore::{Catalog, Materials, ObjectRecord};
use emlabel_core::imputer::{
    fill_missing, fit_heads, fit_heads_on, material_probabilities, observed_material_state, run_em, validation_split,
    ImputeConfig, ImputeContext, Prediction, Target,
};
use emlabel_core::metrics::alde;
use emlabel_core::sim::{attribute_catalog, hide_mcar, AttributeSpec, AttributeWorld};
use emlabel_core::taxonomy::{MaterialLabelState, Taxonomy};

fn world(n: usize, seed: u64) -> AttributeWorld {
    attribute_catalog(&AttributeSpec {
        n_objects: n,
        seed,
        ..AttributeSpec::default()
    })
    .unwrap()
}

fn ctx(w: &AttributeWorld) -> ImputeContext<'_> {
    ImputeContext {
        materials: Some(&w.materials),
        categories: Some(&w.categories),
    }
}

/// Embedding-only catalog whose mass is `exp(w · embedding)` exactly.
fn planted_mass(n: usize, observed: impl Fn(usize) -> bool) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let w = [0.6, -0.4, 0.25, 0.1];
    let recs = (0..n)
        .map(|i| {
            let e: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let mut o = ObjectRecord::new(format!("m{i:04}"), "thing", e.clone());
            if observed(i) {
                o.mass_kg = Some(e.iter().zip(w).map(|(a, b)| a * b).sum::<f64>().exp());
            }
            o
        })
        .collect();
    Catalog::from_records(recs, 4).unwrap()
}

#[test]
fn generation_one_fits_only_observed_rows_and_generation_two_all() {
    let cat = planted_mass(200, |i| i % 2 == 0);
    let c = ImputeContext::default();
    let cfg = ImputeConfig::default();
    let gen1 = fit_heads(&cat, &c, 1, &cfg).unwrap();
    assert_eq!(gen1.head(Target::Mass).unwrap().train_rows, 100);
    assert!(gen1.head(Target::Price).is_none());
    let filled = fill_missing(&cat, &gen1, &c).unwrap();
    let gen2 = fit_heads(&filled, &c, 2, &cfg).unwrap();
    assert_eq!(gen2.head(Target::Mass).unwrap().train_rows, 200);
}

#[test]
fn planted_log_linear_mass_is_recovered() {
    let cat = planted_mass(400, |_| true);
    let c = ImputeContext::default();
    let train: Vec<usize> = (0..300).collect();
    let heads = fit_heads_on(&cat, &train, &c, 1, &ImputeConfig::default()).unwrap();
    let head = heads.head(Target::Mass).unwrap();
    let mut total = 0.0;
    for r in 300..400 {
        let o = cat.get(r);
        let Prediction::Value(p) = heads.predict(head, o, &c).unwrap() else { panic!("mass head gave a non-value") };
        total += alde(p, o.mass_kg.unwrap()).unwrap();
    }
    let held_out = total / 100.0;
    assert!(held_out < 0.05, "held-out ALDE {held_out}");
}

#[test]
fn fully_observed_catalog_is_left_alone_and_report_is_flat() {
    let w = world(400, 3);
    let c = ctx(&w);
    let heads = fit_heads(&w.complete, &c, 1, &ImputeConfig::default()).unwrap();
    let filled = fill_missing(&w.complete, &heads, &c).unwrap();
    // Coarse material listings get their open subtypes filled; nothing else changes.
    for (a, b) in w.complete.records().iter().zip(filled.records()) {
        let mut b = b.clone();
        b.synthetic.materials = None;
        assert_eq!(a, &b);
        assert_eq!(b.synthetic.flag_count(), 0);
    }

    let cfg = ImputeConfig {
        validation_fraction: 0.25,
        ..ImputeConfig::default()
    };
    // With only fine-grained materials there is nothing at all to fill, so a
    // second generation sees exactly the inputs of the first.
    let fine = attribute_catalog(&AttributeSpec {
        n_objects: 400,
        seed: 3,
        coarse_material_rate: 0.0,
        ..AttributeSpec::default()
    })
    .unwrap();
    let em = run_em(&fine.complete, &ctx(&fine), 2, &cfg).unwrap();
    assert_eq!(em.catalog.records(), fine.complete.records());
    for h in &em.report.heads {
        let l = &h.validation_loss;
        assert_eq!(l.len(), 2);
        assert!(l[0].is_some());
        assert_eq!(l[0], l[1], "{:?} moved without missing data", h.target);
    }
}

#[test]
fn missing_only_price_adds_exactly_one_flag() {
    let w = world(300, 4);
    let c = ctx(&w);
    let mut recs = w.complete.records().to_vec();
    // Fine-grained materials so nothing else is open.
    for o in &mut recs {
        if let Some(Materials::Names(names)) = &o.materials {
            let idx = w.materials.index_of(&names[0]).unwrap();
            if !w.materials.is_leaf(idx) {
                let leaf = w.materials.children(idx)[0];
                o.materials = Some(Materials::Names(vec![w.materials.id(leaf).to_string()]));
            }
        }
    }
    recs[7].price = None;
    let cat = Catalog::from_records(recs, w.complete.dim()).unwrap();
    let heads = fit_heads(&cat, &c, 1, &ImputeConfig::default()).unwrap();
    let filled = fill_missing(&cat, &heads, &c).unwrap();
    let o = filled.get(7);
    assert_eq!(o.synthetic.flag_count(), 1);
    assert!(o.synthetic.price.unwrap() > 0.0);
    assert!(filled.records().iter().enumerate().all(|(i, r)| i == 7 || r.synthetic.is_empty()));
}

fn consistent(tax: &Taxonomy, probs: Vec<f64>) -> f64 {
    let n = probs.len();
    let state = MaterialLabelState {
        prob: probs,
        ..MaterialLabelState::unknown(n)
    };
    state.max_violation(tax)
}

#[test]
fn coarse_metal_gets_consistent_subtype_probabilities() {
    let w = world(400, 5);
    let c = ctx(&w);
    let tax = &w.materials;
    let mut recs = w.complete.records().to_vec();
    recs[0].materials = Some(Materials::Names(vec!["metal".into()]));
    let cat = Catalog::from_records(recs, w.complete.dim()).unwrap();
    let heads = fit_heads(&cat, &c, 1, &ImputeConfig::default()).unwrap();
    let filled = fill_missing(&cat, &heads, &c).unwrap();
    let o = filled.get(0);
    let synth = o.synthetic.materials.as_ref().expect("open subtypes filled");
    let metal = tax.index_of("metal").unwrap();
    let children: Vec<usize> = tax.children(metal).to_vec();
    for &ch in &children {
        assert!(synth.contains_key(tax.id(ch)), "{} not filled", tax.id(ch));
    }
    assert!(!synth.contains_key("metal"));
    let probs = material_probabilities(o, tax).unwrap();
    assert_eq!(probs[metal], 1.0);
    let child_max = children.iter().map(|&c| probs[c]).fold(0.0, f64::max);
    let child_sum: f64 = children.iter().map(|&c| probs[c]).sum();
    assert!(child_max <= probs[metal] + 1e-9 && probs[metal] <= child_sum.min(1.0) + 1e-9);
    assert!(consistent(tax, probs) <= 1e-9);
}

#[test]
fn zero_generations_is_invalid() {
    let w = world(200, 6);
    let err = run_em(&w.complete, &ctx(&w), 0, &ImputeConfig::default()).err().unwrap();
    assert_eq!(err.code(), "invalid_argument");
}

/// Checks the invariants that must hold after any number of generations.
fn check_em_invariants(w: &AttributeWorld, hidden: &Catalog, generations: u32, cfg: &ImputeConfig) {
    let c = ctx(w);
    let em = run_em(hidden, &c, generations, cfg).unwrap();
    let validation = validation_split(hidden, &c, cfg.validation_fraction, cfg.seed);
    let tax = &w.materials;
    for (r, (before, after)) in hidden.records().iter().zip(em.catalog.records()).enumerate() {
        // Observed values are untouched, bit for bit.
        assert_eq!(before.price.map(f64::to_bits), after.price.map(f64::to_bits));
        assert_eq!(before.mass_kg.map(f64::to_bits), after.mass_kg.map(f64::to_bits));
        assert_eq!(before.materials, after.materials);
        assert_eq!(before.category_path, after.category_path);
        assert_eq!(before.ratings_hist, after.ratings_hist);
        assert_eq!(before.embedding, after.embedding);

        // Observed xor synthetic.
        let s = &after.synthetic;
        let train = validation.binary_search(&r).is_err();
        assert!(!(after.price.is_some() && s.price.is_some()));
        assert!(!(after.mass_kg.is_some() && s.mass_kg.is_some()));
        assert!(!(after.category_path.is_some() && s.category_path.is_some()));
        assert!(!(after.ratings_hist.is_some() && s.ratings.is_some()));
        if train {
            assert!(after.price.or(s.price).is_some(), "row {r} price unfilled");
            assert!(after.mass_kg.or(s.mass_kg).is_some(), "row {r} mass unfilled");
            assert!(after.category_path.is_some() || s.category_path.is_some(), "row {r} category unfilled");
            assert!(after.ratings_hist.is_some() || s.ratings.is_some(), "row {r} ratings unfilled");
        }
        let fixed = observed_material_state(after, tax);
        if let (Some(state), Some(map)) = (&fixed, &s.materials) {
            for (v, &f) in state.fixed.iter().enumerate() {
                if f {
                    assert!(!map.contains_key(tax.id(v)), "row {r}: node {} both observed and synthetic", tax.id(v));
                }
            }
        }
        if let Some(probs) = material_probabilities(after, tax) {
            assert!(consistent(tax, probs) <= 1e-9, "row {r} materials inconsistent");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn em_preserves_observed_values_and_partitions_fills(
        seed in 1u64..1000,
        rate in 0.1f64..0.5,
        generations in 1u32..=3,
    ) {
        let w = world(300, seed);
        let hidden = hide_mcar(&w.complete, rate, seed).unwrap();
        let cfg = ImputeConfig { seed, softmax_iterations: 150, ..ImputeConfig::default() };
        check_em_invariants(&w, &hidden, generations, &cfg);
    }
}
