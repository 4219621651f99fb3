mod common;

use common::{block_tx_names, ok, s, txforge, Workspace};
use serde_json::json;

#[test]
fn usage_errors_exit_two() {
    assert_eq!(txforge(&[]).code, 2);
    assert_eq!(txforge(&["frobnicate"]).code, 2);
    assert_eq!(txforge(&["compile", "--model", "m.bpmn"]).code, 2);
    assert_eq!(txforge(&["step", "--checkpoint", "c.json", "-n", "lots"]).code, 2);
    assert_eq!(txforge(&["--help"]).code, 0);
}

#[test]
fn missing_input_is_a_domain_error() {
    let w = Workspace::new();
    let out = txforge(&["report", "--checkpoint", s(&w.path("nope.json"))]);
    assert_eq!(out.code, 1);
    assert_eq!(out.error()["error"], "FileNotFound");
    assert!(out.error()["message"].as_str().unwrap().contains("nope.json"));
}

#[test]
fn compile_rejects_broken_models() {
    let w = Workspace::new();
    let out = txforge(&[
        "compile",
        "--model",
        s(&w.path("malformed.bpmn")),
        "--scenario",
        s(&w.path("harvester.json")),
        "--out",
        s(&w.path("out.json")),
    ]);
    assert_eq!(out.code, 1);
    assert_eq!(out.error()["error"], "MalformedXml");
    assert!(!w.path("out.json").exists());
}

#[test]
fn regions_in_both_formats() {
    let w = Workspace::new();
    let bundle = w.path("b.json");
    ok(&[
        "compile",
        "--model",
        s(&w.path("harvester.bpmn")),
        "--scenario",
        s(&w.path("harvester_happy.json")),
        "--out",
        s(&bundle),
    ]);
    let rows = ok(&["regions", "--bundle", s(&bundle)]);
    let rows = rows.as_array().unwrap();
    assert!(!rows.is_empty());
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r["regionId"], format!("R{}", i + 1));
        assert_eq!(r["size"], r["members"].as_array().unwrap().len());
    }
    let table = txforge(&["regions", "--bundle", s(&bundle), "--format", "table"]);
    assert_eq!(table.code, 0);
    assert_eq!(table.stdout.lines().filter(|l| l.starts_with('R')).count(), rows.len());
}

#[test]
fn select_rejects_unknown_and_overlapping_regions() {
    let w = Workspace::new();
    let bundle = w.path("b.json");
    ok(&[
        "compile",
        "--model",
        s(&w.path("harvester.bpmn")),
        "--scenario",
        s(&w.path("harvester_happy.json")),
        "--out",
        s(&bundle),
    ]);
    let out = txforge(&[
        "select",
        "--bundle",
        s(&bundle),
        "--tx",
        "a=R999",
        "--out",
        s(&w.path("x.json")),
    ]);
    assert_eq!(out.code, 1);
    assert_eq!(out.error()["error"], "UnknownRegion");
    let out = txforge(&[
        "select",
        "--bundle",
        s(&bundle),
        "--tx",
        "garbage",
        "--out",
        s(&w.path("x.json")),
    ]);
    assert_eq!(out.code, 1);
    assert_eq!(out.error()["error"], "BadRequest");
}

#[test]
fn happy_run_commits_three_blocks() {
    let w = Workspace::new();
    let bundle = w.harvester(false);
    let cp = w.path("cp.json");
    let state = ok(&["run", "--bundle", s(&bundle), "--checkpoint", s(&cp)]);
    assert_eq!(state["mode"], json!({"state": "Done", "outcome": "Success"}));
    let report = ok(&["report", "--checkpoint", s(&cp)]);
    assert_eq!(
        block_tx_names(&report),
        ["priceAndEscrow_tx", "transportProduct_tx", "receiveAndFinalize_tx"]
    );
    assert_eq!(report["ledger"]["state"]["accepted"], true);
}

#[test]
fn stepping_a_bundle_starts_a_session() {
    let w = Workspace::new();
    let bundle = w.harvester(false);
    let cp = w.path("cp.json");
    std::fs::copy(&bundle, &cp).unwrap();
    let first = ok(&["step", "--checkpoint", s(&cp), "-n", "3"]);
    assert_eq!(first["steps"].as_array().unwrap().len(), 3);
    // The bundle was promoted to a checkpoint in place.
    let saved: serde_json::Value = serde_json::from_str(&w.read("cp.json")).unwrap();
    assert_eq!(saved["formatVersion"], 1);
    let rest = ok(&["step", "--checkpoint", s(&cp), "-n", "10000"]);
    assert_eq!(rest["state"]["mode"]["outcome"], "Success");
    let out = txforge(&["step", "--checkpoint", s(&cp)]);
    assert_eq!(out.code, 1);
    assert_eq!(out.error()["error"], "InvalidMode");
}

#[test]
fn rail_reroute_through_the_cli() {
    let w = Workspace::new();
    let bundle = w.harvester(true);
    let cp = w.path("cp.json");
    let state = ok(&["run", "--bundle", s(&bundle), "--checkpoint", s(&cp)]);
    assert_eq!(state["mode"], json!({"state": "AwaitingRepair", "ticket": "T1"}));

    let exported = ok(&[
        "ticket",
        "--checkpoint",
        s(&cp),
        "--fragment-out",
        s(&w.path("t1.bpmn")),
        "--sidecar-out",
        s(&w.path("t1.json")),
    ]);
    assert_eq!(exported["ticketId"], "T1");
    assert_eq!(exported["logicalName"], "doTransport_tx");
    assert!(w.read("t1.bpmn").contains("DoTransport"));

    let out = txforge(&["resume", "--checkpoint", s(&cp)]);
    assert_eq!(out.code, 1);
    assert_eq!(out.error()["error"], "NoPatchApplied");

    let verdict = ok(&[
        "repair",
        "--checkpoint",
        s(&cp),
        "--fragment",
        s(&w.path("rail_reroute.bpmn")),
        "--sidecar",
        s(&w.path("rail_reroute.sidecar.json")),
    ]);
    assert_eq!(verdict["verdict"], "accepted");
    assert_eq!(verdict["newVersion"], 2);

    let state = ok(&["resume", "--checkpoint", s(&cp)]);
    assert_eq!(state["mode"]["outcome"], "Success");
    let report = ok(&["report", "--checkpoint", s(&cp)]);
    assert_eq!(report["router"]["entries"]["doTransport_tx"]["active"], 2);
    assert_eq!(report["router"]["entries"]["transportProduct_tx"]["active"], 1);
}

#[test]
fn road_switch_escalates_then_parent_patch_lands() {
    let w = Workspace::new();
    let bundle = w.harvester(true);
    let cp = w.path("cp.json");
    ok(&["run", "--bundle", s(&bundle), "--checkpoint", s(&cp)]);
    let verdict = ok(&[
        "repair",
        "--checkpoint",
        s(&cp),
        "--fragment",
        s(&w.path("road_switch.bpmn")),
        "--sidecar",
        s(&w.path("road_switch.sidecar.json")),
    ]);
    assert_eq!(verdict["verdict"], "escalated");
    assert_eq!(verdict["target"], "transportProduct_tx");
    assert_eq!(verdict["ticket"], "T2");

    // The old ticket is gone.
    let stale = txforge(&[
        "repair",
        "--checkpoint",
        s(&cp),
        "--fragment",
        s(&w.path("rail_reroute.bpmn")),
        "--sidecar",
        s(&w.path("rail_reroute.sidecar.json")),
    ]);
    assert_eq!(stale.code, 1);
    assert_eq!(stale.error()["error"], "StaleTicket");

    let verdict = ok(&[
        "repair",
        "--checkpoint",
        s(&cp),
        "--fragment",
        s(&w.path("road_parent.bpmn")),
        "--sidecar",
        s(&w.path("road_parent.sidecar.json")),
    ]);
    assert_eq!(verdict["verdict"], "accepted");
    let state = ok(&["resume", "--checkpoint", s(&cp)]);
    assert_eq!(state["mode"]["outcome"], "Success");
}

#[test]
fn malformed_patch_is_rejected_not_crashed() {
    let w = Workspace::new();
    let bundle = w.harvester(true);
    let cp = w.path("cp.json");
    ok(&["run", "--bundle", s(&bundle), "--checkpoint", s(&cp)]);
    let out = txforge(&[
        "repair",
        "--checkpoint",
        s(&cp),
        "--fragment",
        s(&w.path("malformed.bpmn")),
        "--sidecar",
        s(&w.path("malformed.sidecar.json")),
    ]);
    // A verdict, even a rejection, is a successful command.
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(out.json()["verdict"], "rejected");
    assert_eq!(
        ok(&["report", "--checkpoint", s(&cp)])["mode"]["state"],
        "AwaitingRepair"
    );
}

#[test]
fn injected_fault_opens_a_ticket() {
    let w = Workspace::new();
    let bundle = w.harvester(false);
    let cp = w.path("cp.json");
    std::fs::copy(&bundle, &cp).unwrap();
    let faults = ok(&[
        "fault",
        "--checkpoint",
        s(&cp),
        "--task",
        "GetRailInsurance",
        "--attempt",
        "1",
        "--kind",
        "prepare-no",
        "--participant",
        "Insurer",
        "--message",
        "premium too high",
    ]);
    assert_eq!(faults["faults"].as_array().unwrap().len(), 1);
    let state = ok(&["step", "--checkpoint", s(&cp), "-n", "10000"]);
    assert_eq!(state["state"]["mode"]["state"], "AwaitingRepair");

    let bad = txforge(&[
        "fault",
        "--checkpoint",
        s(&cp),
        "--task",
        "DoTransport",
        "--attempt",
        "1",
        "--kind",
        "prepare-no",
        "--message",
        "no participant given",
    ]);
    assert_eq!(bad.code, 1);
    assert_eq!(bad.error()["error"], "InvalidFault");
}
