use crate::bpmn::parse_bpmn;
use crate::compiler::{compile, DeploymentBundle};
use crate::region::{enumerate_sese, Selection, TransactionPlan};
use crate::scenario::{bind, parse_scenario, BoundModel};

pub const HARVESTER_BPMN: &str = include_str!("../../fixtures/harvester.bpmn");
pub const HARVESTER_JSON: &str = include_str!("../../fixtures/harvester.json");
pub const HARVESTER_HAPPY_JSON: &str = include_str!("../../fixtures/harvester_happy.json");
pub const GATEWAYS_BPMN: &str = include_str!("../../fixtures/gateways.bpmn");
pub const GATEWAYS_JSON: &str = include_str!("../../fixtures/gateways.json");
pub const MINIMAL_BPMN: &str = include_str!("../../fixtures/minimal.bpmn");
pub const MINIMAL_JSON: &str = include_str!("../../fixtures/minimal.json");

/// The nested harvester plan: two top-level transactions around a
/// transport transaction with two children.
pub const HARVESTER_PLAN: &[(&str, &[&str])] = &[
    ("priceAndEscrow_tx", &["PriceAndEscrow"]),
    (
        "transportProduct_tx",
        &[
            "DoTransport",
            "GetRailInsurance",
            "GetRailTransporter",
            "GetTrRequirements",
        ],
    ),
    (
        "getTrRequirements_tx",
        &["GetRailInsurance", "GetRailTransporter", "GetTrRequirements"],
    ),
    ("doTransport_tx", &["DoTransport"]),
    ("receiveAndFinalize_tx", &["ReceiveAndFinalize"]),
];

/// Fragment XML and sidecar JSON of a bundled patch.
pub fn patch(name: &str) -> (&'static str, &'static str) {
    match name {
        "rail_reroute" => (
            include_str!("../../fixtures/patches/rail_reroute.bpmn"),
            include_str!("../../fixtures/patches/rail_reroute.json"),
        ),
        "alt_two_task" => (
            include_str!("../../fixtures/patches/alt_two_task.bpmn"),
            include_str!("../../fixtures/patches/alt_two_task.json"),
        ),
        "road_switch" => (
            include_str!("../../fixtures/patches/road_switch.bpmn"),
            include_str!("../../fixtures/patches/road_switch.json"),
        ),
        "road_parent" => (
            include_str!("../../fixtures/patches/road_parent.bpmn"),
            include_str!("../../fixtures/patches/road_parent.json"),
        ),
        "post_gap" => (
            include_str!("../../fixtures/patches/post_gap.bpmn"),
            include_str!("../../fixtures/patches/post_gap.json"),
        ),
        "malformed" => (
            include_str!("../../fixtures/patches/malformed.bpmn"),
            "{\"ticketId\":\"T1\"}",
        ),
        other => panic!("no patch fixture `{other}`"),
    }
}

pub fn bind_fixture(xml: &str, scenario: &str) -> BoundModel {
    let model = parse_bpmn(xml).expect("fixture model parses");
    let spec = parse_scenario(scenario).expect("fixture scenario parses");
    bind(&model, &spec).expect("fixture binds")
}

/// Build a plan by naming each selection's exact member set.
pub fn select_members(bound: &BoundModel, picks: &[(&str, &[&str])]) -> TransactionPlan {
    let regions = enumerate_sese(&bound.graph);
    let selections = picks
        .iter()
        .map(|(name, members)| Selection {
            name: name.to_string(),
            region: regions
                .iter()
                .find(|r| r.members.iter().map(String::as_str).eq(members.iter().copied()))
                .unwrap_or_else(|| panic!("no region with members {members:?}"))
                .clone(),
        })
        .collect();
    TransactionPlan::from_selections(selections).expect("laminar fixture plan")
}

pub fn bundle(xml: &str, scenario: &str, picks: &[(&str, &[&str])]) -> DeploymentBundle {
    let bound = bind_fixture(xml, scenario);
    let plan = select_members(&bound, picks);
    compile(&bound, &plan).expect("fixture compiles")
}

/// The harvester under the nested plan, with or without the transport fault.
pub fn harvester_bundle(with_fault: bool) -> DeploymentBundle {
    let scenario = if with_fault {
        HARVESTER_JSON
    } else {
        HARVESTER_HAPPY_JSON
    };
    bundle(HARVESTER_BPMN, scenario, HARVESTER_PLAN)
}
