//! JSON views of a session. The CLI and the HTTP server print exactly these.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value as Json};

use txforge_core::dataflow::{dataflow_in, required_out};
use txforge_core::region::{enumerate_sese, region_label};
use txforge_core::runtime::{Engine, CHECKPOINT_FORMAT_VERSION};
use txforge_core::scenario::BoundModel;

use crate::error::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RegionRow {
    pub region_id: String,
    pub entry: String,
    pub exit: String,
    pub members: Vec<String>,
    pub size: usize,
    #[serde(rename = "in")]
    pub in_set: Vec<String>,
    pub required_out: Vec<String>,
}

pub fn regions(bound: &BoundModel) -> Result<Vec<RegionRow>, GatewayError> {
    enumerate_sese(&bound.graph)
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let in_set = dataflow_in(&bound.graph, &r, &bound.behaviors)
                .map_err(|e| GatewayError::new("UndeclaredBehavior", e.to_string()))?;
            let out = required_out(&bound.graph, &r, &bound.behaviors)
                .map_err(|e| GatewayError::new("UndeclaredBehavior", e.to_string()))?;
            Ok(RegionRow {
                region_id: region_label(i),
                size: r.len(),
                entry: r.entry,
                exit: r.exit,
                members: r.members.into_iter().collect(),
                in_set: in_set.into_iter().collect(),
                required_out: out.into_iter().collect(),
            })
        })
        .collect()
}

pub fn regions_table(rows: &[RegionRow]) -> String {
    let header = ["regionId", "entry", "exit", "size", "members", "in", "requiredOut"];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.region_id.clone(),
                r.entry.clone(),
                r.exit.clone(),
                r.size.to_string(),
                r.members.join(","),
                r.in_set.join(","),
                r.required_out.join(","),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: Vec<&str>| {
        let padded: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec());
    for row in &cells {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

pub fn session(engine: &Engine, checkpoint: Option<&str>) -> Json {
    let b = engine.bundle();
    json!({
        "formatVersion": CHECKPOINT_FORMAT_VERSION,
        "checkpoint": checkpoint,
        "modelHash": b.model_hash,
        "scenarioHash": b.scenario_hash,
        "mode": engine.mode(),
        "steps": engine.metrics().steps,
        "journalLength": engine.journal().len(),
    })
}

pub fn model(engine: &Engine) -> Json {
    let bound = engine.bound();
    json!({
        "xml": engine.bundle().model,
        "model": bound.model,
        "scenario": bound.scenario,
        "plan": engine.bundle().plan,
    })
}

fn ledger_summary(engine: &Engine) -> Json {
    let l = engine.ledger();
    json!({
        "height": l.height(),
        "headHash": l.head_hash(),
        "dumpHash": l.dump_hash(),
    })
}

pub fn state(engine: &Engine) -> Json {
    let txs: Vec<Json> = engine
        .txs()
        .values()
        .map(|t| {
            json!({
                "txId": t.tx_id,
                "logicalName": t.logical_name,
                "version": t.version,
                "parent": t.parent,
                "status": t.status,
                "participants": t.participants,
                "children": t.child_order,
                "beginSeq": t.begin_seq,
            })
        })
        .collect();
    json!({
        "mode": engine.mode(),
        "ticket": engine.ticket().map(|t| &t.ticket_id),
        "mainFinished": engine.main_finished(),
        "queue": engine.queue(),
        "txs": txs,
        "router": engine.router(),
        "ledger": ledger_summary(engine),
        "journalLength": engine.journal().len(),
    })
}

pub fn report(engine: &Engine) -> Json {
    let l = engine.ledger();
    let blocks: Vec<Json> = l
        .blocks()
        .iter()
        .map(|b| {
            json!({
                "height": b.height,
                "txId": b.tx_id,
                "contentHash": b.content_hash,
                "prevHash": b.prev_hash,
                "writes": b.writes,
            })
        })
        .collect();
    let mut ledger = ledger_summary(engine);
    ledger["blocks"] = Json::Array(blocks);
    ledger["state"] = serde_json::to_value(l.state()).expect("state serializes");
    json!({
        "mode": engine.mode(),
        "ledger": ledger,
        "router": engine.router(),
        "metrics": engine.metrics(),
        "txs": state(engine)["txs"],
        "ticket": engine.ticket(),
        "journalLength": engine.journal().len(),
        "journalHash": txforge_core::canon::sha256_hex(engine.journal().dump()),
    })
}
