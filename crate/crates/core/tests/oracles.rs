//! Region and dataflow analyses against brute-force enumeration.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use txforge_core::bpmn::parse_fragment;
use txforge_core::dataflow::{dataflow_in, external_reads, guaranteed_writes, required_out, Behaviors};
use txforge_core::expr::Expr;
use txforge_core::graph::build_flow_graph;
use txforge_core::region::enumerate_sese;
use txforge_core::repair::PatchSidecar;
use txforge_core::scenario::{parse_scenario, BoundModel};
use txforge_core::testkit::fixtures::{self, bind_fixture, patch};
use txforge_core::testkit::gen::{random_dag, random_model};
use txforge_core::testkit::oracle::{
    dataflow_in_paths, external_reads_paths, guaranteed_writes_choices, required_out_paths, sese_brute_force,
};

fn fixture_models() -> Vec<(&'static str, BoundModel)> {
    vec![
        (
            "harvester",
            bind_fixture(fixtures::HARVESTER_BPMN, fixtures::HARVESTER_JSON),
        ),
        (
            "gateways",
            bind_fixture(fixtures::GATEWAYS_BPMN, fixtures::GATEWAYS_JSON),
        ),
        ("minimal", bind_fixture(fixtures::MINIMAL_BPMN, fixtures::MINIMAL_JSON)),
    ]
}

fn check_regions(name: &str, bound: &BoundModel) {
    let regions = enumerate_sese(&bound.graph);
    let fast: BTreeSet<_> = regions.iter().cloned().collect();
    assert_eq!(fast, sese_brute_force(&bound.graph), "{name}: region sets differ");
    for r in &regions {
        assert_eq!(
            dataflow_in(&bound.graph, r, &bound.behaviors).unwrap(),
            dataflow_in_paths(&bound.graph, r, &bound.behaviors),
            "{name}: in-set of {r:?}"
        );
        assert_eq!(
            required_out(&bound.graph, r, &bound.behaviors).unwrap(),
            required_out_paths(&bound.graph, r, &bound.behaviors),
            "{name}: required-out of {r:?}"
        );
    }
}

#[test]
fn fixture_regions_and_dataflow_match_oracles() {
    for (name, bound) in fixture_models() {
        check_regions(name, &bound);
    }
}

#[test]
fn harvester_transport_sets() {
    let bound = bind_fixture(fixtures::HARVESTER_BPMN, fixtures::HARVESTER_JSON);
    let r = enumerate_sese(&bound.graph)
        .into_iter()
        .find(|r| r.entry == "GetTrRequirements" && r.exit == "DoTransport")
        .unwrap();
    let names = |s: BTreeSet<String>| s.into_iter().collect::<Vec<_>>();
    assert_eq!(
        names(dataflow_in_paths(&bound.graph, &r, &bound.behaviors)),
        ["escrowId", "price", "productWidthCm"]
    );
    assert_eq!(
        names(required_out_paths(&bound.graph, &r, &bound.behaviors)),
        ["deliveryStatus"]
    );
}

/// Behaviors of a patch fragment: the sidecar's entries over the harvester
/// scenario.
fn fragment_behaviors(xml: &str, sidecar: &str) -> (txforge_core::graph::FlowGraph, Behaviors) {
    let fragment = parse_fragment(xml).unwrap();
    let graph = build_flow_graph(&fragment.model).unwrap();
    let side: PatchSidecar = serde_json::from_str(sidecar).unwrap();
    let mut tasks = parse_scenario(fixtures::HARVESTER_JSON).unwrap().tasks;
    tasks.extend(side.scenario_patch);
    let ids = fragment.task_ids();
    let beh = Behaviors {
        reads: ids.iter().map(|t| (t.clone(), tasks[t].reads.clone())).collect(),
        writes: ids.iter().map(|t| (t.clone(), tasks[t].write_vars())).collect(),
        guard_reads: fragment
            .model
            .flows
            .iter()
            .filter_map(|f| {
                f.guard
                    .as_ref()
                    .map(|g| (f.id.clone(), Expr::parse(g).unwrap().variables()))
            })
            .collect(),
        results: BTreeSet::new(),
    };
    (graph, beh)
}

#[test]
fn patch_fragments_match_oracles() {
    for name in ["rail_reroute", "alt_two_task", "road_switch", "road_parent", "post_gap"] {
        let (xml, sidecar) = patch(name);
        let (g, beh) = fragment_behaviors(xml, sidecar);
        assert_eq!(
            external_reads(&g, &beh).unwrap(),
            external_reads_paths(&g, &beh),
            "{name}"
        );
        assert_eq!(
            guaranteed_writes(&g, &beh).unwrap(),
            guaranteed_writes_choices(&g, &beh),
            "{name}"
        );
    }
}

#[test]
fn a_write_on_one_exclusive_branch_is_not_guaranteed() {
    let (xml, sidecar) = patch("post_gap");
    let (g, beh) = fragment_behaviors(xml, sidecar);
    let oracle = guaranteed_writes_choices(&g, &beh);
    assert!(!oracle.contains("deliveryStatus"));
    assert!(!guaranteed_writes(&g, &beh).unwrap().contains("deliveryStatus"));
    // The guard variable is read before anything writes it.
    assert!(external_reads_paths(&g, &beh).contains("transporterContract"));

    // Under a parallel split both branches run, so the write is guaranteed.
    let parallel = xml
        .replace("exclusiveGateway", "parallelGateway")
        .replace(" default=\"Flow_postpone\"", "");
    let parallel = parallel.replace(
        "<bpmn:conditionExpression>transporterContract != \"\"</bpmn:conditionExpression>",
        "",
    );
    let (g, mut beh) = fragment_behaviors(&parallel, sidecar);
    beh.guard_reads.clear();
    assert!(guaranteed_writes_choices(&g, &beh).contains("deliveryStatus"));
    assert!(guaranteed_writes(&g, &beh).unwrap().contains("deliveryStatus"));
}

#[test]
fn sese_on_two_hundred_random_dags() {
    let mut rng = StdRng::seed_from_u64(0x5e5e);
    for i in 0..200 {
        let g = random_dag(&mut rng, 12, 20);
        assert!(g.len() <= 12 && g.edges().len() <= 20);
        let fast: BTreeSet<_> = enumerate_sese(&g).into_iter().collect();
        assert_eq!(fast, sese_brute_force(&g), "dag #{i}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sese_matches_brute_force(seed in any::<u64>()) {
        let g = random_dag(&mut StdRng::seed_from_u64(seed), 12, 20);
        let fast: BTreeSet<_> = enumerate_sese(&g).into_iter().collect();
        prop_assert_eq!(fast, sese_brute_force(&g));
    }

    #[test]
    fn regions_are_sorted_largest_first_and_pairwise_distinct(seed in any::<u64>()) {
        let g = random_dag(&mut StdRng::seed_from_u64(seed), 12, 20);
        let regions = enumerate_sese(&g);
        for w in regions.windows(2) {
            prop_assert!(w[0].len() >= w[1].len());
            prop_assert!(w[0] != w[1]);
        }
    }

    #[test]
    fn generated_model_dataflow_matches_oracles(seed in any::<u64>()) {
        let m = random_model(&mut StdRng::seed_from_u64(seed), 8);
        let bound = txforge_core::scenario::bind(&m.model, &m.scenario).unwrap();
        for r in enumerate_sese(&bound.graph) {
            prop_assert_eq!(
                dataflow_in(&bound.graph, &r, &bound.behaviors).unwrap(),
                dataflow_in_paths(&bound.graph, &r, &bound.behaviors)
            );
            prop_assert_eq!(
                required_out(&bound.graph, &r, &bound.behaviors).unwrap(),
                required_out_paths(&bound.graph, &r, &bound.behaviors)
            );
        }
        // The whole body as a standalone fragment.
        prop_assert_eq!(
            guaranteed_writes(&bound.graph, &bound.behaviors).unwrap(),
            guaranteed_writes_choices(&bound.graph, &bound.behaviors)
        );
        prop_assert_eq!(
            external_reads(&bound.graph, &bound.behaviors).unwrap(),
            external_reads_paths(&bound.graph, &bound.behaviors)
        );
    }
}
