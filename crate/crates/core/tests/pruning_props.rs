use std::collections::BTreeSet;

use filterprune::cost::{count_params, predict_params};
use filterprune::importance::{rank_model, ImportanceReport, Method, RankOptions};
use filterprune::io::encode_blob;
use filterprune::netgraph::{discover_groups, infer_shapes, NetworkGraph, Op};
use filterprune::pruner::{apply_plan, make_plan, verify_equivalence, PrunePlan};
use filterprune::{fixtures, Error, Exec, Model};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_reports(graph: &NetworkGraph, seed: u64) -> Vec<ImportanceReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    discover_groups(graph)
        .unwrap()
        .iter()
        .flat_map(|g| {
            g.members
                .iter()
                .map(|m| {
                    // coarse values so ties occur
                    let raw = (0..g.channels)
                        .map(|_| r.random_range(0..6) as f64)
                        .collect();
                    ImportanceReport::new(m.clone(), Method::L1, raw)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn plan_for(model: &Model, p: f64, seed: u64) -> PrunePlan {
    let groups = discover_groups(model.graph()).unwrap();
    make_plan(
        &random_reports(model.graph(), seed),
        &groups,
        p,
        None,
        &model.content_hash(),
    )
    .unwrap()
}

fn small_models() -> Vec<Model> {
    vec![
        fixtures::toy_model(1),
        Model::with_random_weights(fixtures::residual_toy(), 2).unwrap(),
        Model::with_random_weights(fixtures::dcase21(), 3).unwrap(),
    ]
}

fn adds_agree(graph: &NetworkGraph) -> bool {
    let shapes = infer_shapes(graph, graph.input_shape()).unwrap();
    graph.nodes().iter().enumerate().all(|(i, n)| {
        !matches!(n.op, Op::Add) || {
            let ins = graph.input_indices(i);
            shapes.at(ins[0]).channels() == shapes.at(ins[1]).channels()
        }
    })
}

#[test]
fn empty_plan_is_identity() {
    for m in small_models() {
        let out = apply_plan(&m, &PrunePlan::empty(Method::L1, m.content_hash())).unwrap();
        assert_eq!(out.graph(), m.graph());
        assert_eq!(out.weights(), m.weights());
    }
}

#[test]
fn pipeline_is_deterministic() {
    let m = Model::with_random_weights(fixtures::dcase21(), 5).unwrap();
    let run = || {
        let reports = rank_model(&m, Method::OperatorNorm, None, &RankOptions::default())
            .unwrap()
            .reports;
        let groups = discover_groups(m.graph()).unwrap();
        let plan = make_plan(&reports, &groups, 0.5, None, &m.content_hash()).unwrap();
        let pruned = apply_plan(&m, &plan).unwrap();
        (
            serde_json::to_string(&reports).unwrap(),
            plan.hash(),
            encode_blob(pruned.weights()),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn missing_flatten_order_is_reported() {
    let nodes = fixtures::toy_chain().nodes().to_vec();
    let g = NetworkGraph::new([1, 4, 5], None, nodes).unwrap();
    let groups = discover_groups(&g).unwrap();
    let err = make_plan(&random_reports(&g, 0), &groups, 0.5, None, "h").unwrap_err();
    assert!(matches!(err, Error::MissingFlattenOrder(_)), "{err}");
}

#[test]
fn resnet_adds_keep_matching_channels() {
    let m = Model::with_random_weights(fixtures::resnet50(), 0).unwrap();
    let groups = discover_groups(m.graph()).unwrap();
    let reports = rank_model(&m, Method::L2, None, &RankOptions::default())
        .unwrap()
        .reports;
    for branch in [fixtures::Branch::Main, fixtures::Branch::All] {
        let sel = fixtures::resnet_selection(m.graph(), &[4, 5], branch);
        let plan = make_plan(&reports, &groups, 0.5, Some(&sel), &m.content_hash()).unwrap();
        let pruned = apply_plan(&m, &plan).unwrap();
        assert!(adds_agree(pruned.graph()));
        assert_eq!(
            count_params(pruned.graph(), true),
            predict_params(m.graph(), &plan, true).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_masks_revalidate(which in 0usize..3, p in 0.01f64..0.99, seed in any::<u64>()) {
        let m = &small_models()[which];
        let plan = plan_for(m, p, seed);
        prop_assert!(plan.groups.iter().all(|g| !g.keep.is_empty()));
        let pruned = apply_plan(m, &plan).unwrap();
        // rebinding checks every kernel against the surviving upstream channels
        let again = Model::new(pruned.graph().clone(), pruned.weights().clone());
        prop_assert!(again.is_ok());
        prop_assert!(adds_agree(pruned.graph()));
    }

    #[test]
    fn drop_sets_grow_with_ratio(which in 0usize..3, p1 in 0.01f64..0.99, p2 in 0.01f64..0.99, seed in any::<u64>()) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let m = &small_models()[which];
        let (a, b) = (plan_for(m, lo, seed), plan_for(m, hi, seed));
        for (ga, gb) in a.groups.iter().zip(&b.groups) {
            let sa: BTreeSet<_> = ga.drop.iter().collect();
            let sb: BTreeSet<_> = gb.drop.iter().collect();
            prop_assert!(sa.is_subset(&sb), "{:?} at {lo} vs {:?} at {hi}", ga.drop, gb.drop);
        }
    }

    #[test]
    fn applied_params_match_prediction(which in 0usize..3, p in 0.01f64..0.99, seed in any::<u64>(), bn in any::<bool>()) {
        let m = &small_models()[which];
        let plan = plan_for(m, p, seed);
        let pruned = apply_plan(m, &plan).unwrap();
        prop_assert_eq!(count_params(pruned.graph(), bn), predict_params(m.graph(), &plan, bn).unwrap());
        prop_assert_eq!(pruned.stored_scalars(), predict_params(m.graph(), &plan, true).unwrap());
    }

    #[test]
    fn pruned_models_verify(which in 0usize..2, p in 0.01f64..0.99, seed in any::<u64>()) {
        let m = &small_models()[which];
        let plan = plan_for(m, p, seed);
        let pruned = apply_plan(m, &plan).unwrap();
        let xs = fixtures::random_inputs(m.graph().input_shape(), 2, seed);
        let report = verify_equivalence(m, &pruned, &plan, &xs, Exec::Sequential).unwrap();
        prop_assert!(report.passed, "{:?}", report.violations);
    }
}
