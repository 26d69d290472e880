use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emlabel_core::taxonomy::{
    default_level_weights, hierarchical_accuracy, hierarchical_ce, masked_bce, match_material_string,
    normalize_material_string, project_consistent, ConditionalPrediction, HardLabel, MaterialLabelState, Taxonomy,
};
use emlabel_core::Error;

fn sample_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/materials_sample.tsv")
}

fn sample() -> Taxonomy {
    Taxonomy::load(sample_path()).unwrap()
}

fn idx(t: &Taxonomy, id: &str) -> usize {
    t.index_of(id).unwrap_or_else(|| panic!("no node {id}"))
}

#[test]
fn shipped_sample_has_acrylic_under_thermoplastic() {
    let t = sample();
    assert!((28..=40).contains(&t.len()), "{} nodes", t.len());
    assert_eq!(t.path_to(idx(&t, "acrylic")), ["material", "plastic", "thermoplastic", "acrylic"]);
    for subtree in ["wood", "metal"] {
        assert!(!t.children(idx(&t, subtree)).is_empty());
    }
}

#[test]
fn chain_file_has_depth_three() {
    let t = Taxonomy::parse("a\t\tA\nb\ta\tB\nc\tb\tC\n").unwrap();
    assert_eq!(t.depth(), 3);
}

#[test]
fn self_parent_is_a_cycle_error_naming_the_node() {
    let err = Taxonomy::parse("a\t\tA\nb\tb\tB\n").unwrap_err();
    match err {
        Error::Taxonomy { node, message } => {
            assert_eq!(node, "b");
            assert!(message.contains("cycle"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn structural_errors_are_reported() {
    assert!(matches!(Taxonomy::parse("a\t\tA\nb\t\tB\n"), Err(Error::Taxonomy { .. })));
    assert!(matches!(Taxonomy::parse("a\t\tA\nb\tzz\tB\n"), Err(Error::Taxonomy { .. })));
    assert!(matches!(Taxonomy::parse("a\t\tA\nb\tc\tB\nc\tb\tC\n"), Err(Error::Taxonomy { .. })));
    assert!(matches!(Taxonomy::parse("only-two\tcolumns\n"), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn material_strings_match_names_and_aliases() {
    let t = sample();
    assert_eq!(match_material_string("Acrylic", &t).nodes, ["acrylic"]);
    let none = match_material_string("unobtainium", &t);
    assert!(none.nodes.is_empty());
    assert_eq!(none.unmatched, ["unobtainium"]);
    assert!(normalize_material_string("100% Cotton").contains(&"cotton".to_string()));
    assert_eq!(match_material_string("100% Cotton", &t).nodes, ["cotton"]);
    assert_eq!(
        match_material_string("60% polyester, 40% Aluminium", &t).nodes,
        ["polyester", "aluminum"]
    );
    assert_eq!(match_material_string("Oak and Pine", &t).nodes, ["oak", "pine"]);
}

// ---------------------------------------------------------------------------
// Projection

fn three() -> Taxonomy {
    Taxonomy::parse("p\t\tP\na\tp\tA\nb\tp\tB\n").unwrap()
}

fn state_of(probs: &[f64], fixed: &[bool]) -> MaterialLabelState {
    let mut s = MaterialLabelState::unknown(probs.len());
    s.prob = probs.to_vec();
    s.fixed = fixed.to_vec();
    s
}

#[test]
fn consistent_input_is_unchanged() {
    let t = three();
    let s = state_of(&[0.5, 0.5, 0.2], &[false; 3]);
    assert_eq!(project_consistent(&s, &t).unwrap().state.prob, s.prob);
}

/// One upward clamp of the parent, computed by hand.
fn single_sweep_parent(parent: f64, kids: &[f64]) -> f64 {
    let mx = kids.iter().copied().fold(0.0, f64::max);
    let cap = kids.iter().sum::<f64>().min(1.0);
    parent.max(mx).min(cap)
}

#[test]
fn unfixed_parent_is_raised_to_its_largest_child() {
    let t = three();
    let out = project_consistent(&state_of(&[0.2, 0.6, 0.1], &[false; 3]), &t).unwrap();
    assert_eq!(out.state.prob[0], single_sweep_parent(0.2, &[0.6, 0.1]));
    assert_eq!(out.state.prob[0], 0.6);
    assert!(out.state.max_violation(&t) <= 1e-9);
}

#[test]
fn fixed_parent_rescales_children_multiplicatively() {
    let t = three();
    let out = project_consistent(&state_of(&[1.0, 0.3, 0.2], &[true, false, false]), &t).unwrap();
    let scale = 1.0 / 0.5;
    assert!((out.state.prob[1] - 0.3 * scale).abs() < 1e-12);
    assert!((out.state.prob[2] - 0.2 * scale).abs() < 1e-12);
    assert!(out.state.max_violation(&t) <= 1e-9);
}

#[test]
fn jointly_infeasible_fixed_values_are_rejected() {
    let t = three();
    let err = project_consistent(&state_of(&[0.2, 0.9, 0.0], &[true, true, false]), &t).unwrap_err();
    match err {
        Error::InfeasibleConstraints { nodes } => {
            assert!(nodes.contains(&"p".to_string()) && nodes.contains(&"a".to_string()), "{nodes:?}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn coarse_label_gets_consistent_subtypes() {
    let t = sample();
    let metal = idx(&t, "metal");
    let mut s = MaterialLabelState::from_observed(&t, &[metal]);
    for v in 0..t.len() {
        if !s.fixed[v] {
            s.prob[v] = 0.7;
        }
    }
    let out = project_consistent(&s, &t).unwrap().state;
    assert!(out.max_violation(&t) <= 1e-9);
    assert_eq!(out.prob[metal], 1.0);
    let kids: Vec<f64> = t.children(metal).iter().map(|&c| out.prob[c]).collect();
    assert!(kids.iter().sum::<f64>() >= 1.0 - 1e-9);
}

/// Random tree of `n` nodes with depth at most `max_depth` levels below the root.
fn random_tree(rng: &mut ChaCha8Rng, n: usize, max_depth: usize) -> Taxonomy {
    let mut depth = vec![0usize];
    let mut lines = vec!["n00\t\tRoot".to_string()];
    for i in 1..n {
        let parents: Vec<usize> = (0..i).filter(|&p| depth[p] < max_depth).collect();
        let p = parents[rng.random_range(0..parents.len())];
        depth.push(depth[p] + 1);
        lines.push(format!("n{i:02}\tn{p:02}\tNode {i}"));
    }
    Taxonomy::parse(&lines.join("\n")).unwrap()
}

/// A consistent assignment built leaves-up, then random values on the
/// unfixed nodes. The fixed values are feasible because the full consistent
/// assignment extends them.
fn random_instance(seed: u64) -> (Taxonomy, MaterialLabelState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=12);
    let max_depth = rng.random_range(1..=4);
    let t = random_tree(&mut rng, n, max_depth);
    let mut consistent = vec![0.0; n];
    for v in t.postorder() {
        let kids = t.children(v);
        consistent[v] = if kids.is_empty() {
            rng.random::<f64>()
        } else {
            let mx = kids.iter().map(|&c| consistent[c]).fold(0.0, f64::max);
            let cap = kids.iter().map(|&c| consistent[c]).sum::<f64>().min(1.0);
            mx + rng.random::<f64>() * (cap - mx)
        };
    }
    let fix_rate: f64 = rng.random();
    let mut s = MaterialLabelState::unknown(n);
    for v in 0..n {
        s.fixed[v] = rng.random_bool(fix_rate);
        s.prob[v] = if s.fixed[v] { consistent[v] } else { rng.random() };
    }
    (t, s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn projection_is_consistent_fixed_and_idempotent(seed in any::<u64>()) {
        let (t, s) = random_instance(seed);
        let out = project_consistent(&s, &t).unwrap();
        prop_assert!(out.converged);
        prop_assert!(out.iterations <= 100);
        prop_assert!(out.state.max_violation(&t) <= 1e-9, "violation {}", out.state.max_violation(&t));
        for v in 0..t.len() {
            if s.fixed[v] {
                prop_assert_eq!(out.state.prob[v].to_bits(), s.prob[v].to_bits());
            }
            prop_assert!((0.0..=1.0).contains(&out.state.prob[v]));
        }
        let again = project_consistent(&out.state, &t).unwrap();
        for v in 0..t.len() {
            prop_assert!((again.state.prob[v] - out.state.prob[v]).abs() <= 1e-9);
        }
    }
}

// ---------------------------------------------------------------------------
// Losses

#[test]
fn masked_bce_closed_forms() {
    let t = sample();
    let plastic = idx(&t, "plastic");
    let labels = MaterialLabelState::from_observed(&t, &[plastic]);
    let perfect: Vec<f64> = labels
        .hard
        .iter()
        .map(|h| if *h == HardLabel::Positive { 1.0 } else { 0.0 })
        .collect();
    assert_eq!(masked_bce(&perfect, &labels), 0.0);

    let mut pred = perfect.clone();
    let acrylic = idx(&t, "acrylic");
    pred[acrylic] = 0.1;
    let a = masked_bce(&pred, &labels);
    pred[acrylic] = 0.9;
    assert_eq!(masked_bce(&pred, &labels), a);

    let mut single = MaterialLabelState::unknown(t.len());
    single.hard[plastic] = HardLabel::Positive;
    assert!((masked_bce(&vec![0.5; t.len()], &single) - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn masked_bce_has_zero_gradient_at_excluded_nodes() {
    let t = sample();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for observed in [vec!["plastic"], vec!["metal", "oak"], vec!["fabric"]] {
        let nodes: Vec<usize> = observed.iter().map(|id| idx(&t, id)).collect();
        let labels = MaterialLabelState::from_observed(&t, &nodes);
        let pred: Vec<f64> = (0..t.len()).map(|_| rng.random_range(0.05..0.95)).collect();
        let h = 1e-6;
        for v in (0..t.len()).filter(|&v| labels.hard[v] == HardLabel::Unknown) {
            let mut up = pred.clone();
            let mut down = pred.clone();
            up[v] += h;
            down[v] -= h;
            assert_eq!((masked_bce(&up, &labels) - masked_bce(&down, &labels)) / (2.0 * h), 0.0);
        }
    }
}

fn cond(entries: &[(&str, &[(&str, f64)])]) -> ConditionalPrediction {
    entries
        .iter()
        .map(|(p, kids)| (p.to_string(), kids.iter().map(|(k, v)| (k.to_string(), *v)).collect()))
        .collect()
}

fn path(ids: &[&str]) -> Vec<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

#[test]
fn hierarchical_ce_closed_forms() {
    let certain = cond(&[("r", &[("a", 1.0), ("b", 0.0)]), ("a", &[("x", 1.0)])]);
    assert_eq!(hierarchical_ce(&certain, &path(&["r", "a", "x"]), &[1.0, 1.0]).unwrap(), 0.0);

    for b in [2usize, 3, 7] {
        let names: Vec<String> = (0..b).map(|i| format!("c{i}")).collect();
        let mut pred: ConditionalPrediction = BTreeMap::new();
        pred.insert("r".into(), names.iter().map(|n| (n.clone(), 1.0 / b as f64)).collect());
        pred.insert("c0".into(), names.iter().map(|n| (format!("{n}x"), 1.0 / b as f64)).collect());
        let v = hierarchical_ce(&pred, &path(&["r", "c0", "c0x"]), &[1.0, 1.0]).unwrap();
        assert!((v - (b as f64).ln()).abs() < 1e-9);
    }

    let pred = cond(&[("r", &[("a", 0.5), ("b", 0.5)]), ("a", &[("x", 0.25), ("y", 0.75)])]);
    let v = hierarchical_ce(&pred, &path(&["r", "a", "x"]), &[2.0, 1.0]).unwrap();
    let expected = (2.0 * 2f64.ln() + 4f64.ln()) / 3.0;
    assert!((v - expected).abs() < 1e-9);
    assert!((v - 0.9242).abs() < 1e-4);
}

#[test]
fn hierarchical_ce_ignores_incorrect_parents_and_needs_path_distributions() {
    let a = cond(&[("r", &[("a", 0.5), ("b", 0.5)]), ("a", &[("x", 0.5)]), ("b", &[("z", 0.1)])]);
    let b = cond(&[("r", &[("a", 0.5), ("b", 0.5)]), ("a", &[("x", 0.5)]), ("b", &[("z", 0.9)])]);
    let p = path(&["r", "a", "x"]);
    let w = default_level_weights(2);
    assert_eq!(hierarchical_ce(&a, &p, &w).unwrap(), hierarchical_ce(&b, &p, &w).unwrap());
    let missing = cond(&[("r", &[("a", 0.5)])]);
    assert!(hierarchical_ce(&missing, &p, &w).is_err());
}

#[test]
fn hierarchical_accuracy_averages_levels_then_instances() {
    let truth = vec![path(&["r", "a", "x"]), path(&["r", "b", "z"])];
    assert_eq!(hierarchical_accuracy(&truth, &truth).unwrap(), 1.0);
    let half = vec![path(&["r", "a", "y"])];
    assert_eq!(hierarchical_accuracy(&half, &truth[..1]).unwrap(), 0.5);
    let pred = vec![path(&["r", "a", "x"]), path(&["r", "b", "y"])];
    assert_eq!(hierarchical_accuracy(&pred, &truth).unwrap(), 0.75);
}

#[test]
fn sibling_order_in_the_file_does_not_matter() {
    let text = std::fs::read_to_string(sample_path()).unwrap();
    let mut lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    let a = Taxonomy::parse(&lines.join("\n")).unwrap();
    let root = lines.remove(0);
    lines.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    lines.insert(0, root);
    let b = Taxonomy::parse(&lines.join("\n")).unwrap();
    let ids = |t: &Taxonomy| t.preorder().iter().map(|&i| t.id(i).to_string()).collect::<Vec<_>>();
    assert_eq!(ids(&a), ids(&b));

    let truth = a.path_to(idx(&a, "oak"));
    let pred = a.path_to(idx(&a, "walnut"));
    assert_eq!(
        hierarchical_accuracy(&[pred.clone()], &[truth.clone()]).unwrap(),
        hierarchical_accuracy(&[b.path_to(idx(&b, "walnut"))], &[b.path_to(idx(&b, "oak"))]).unwrap()
    );
}
