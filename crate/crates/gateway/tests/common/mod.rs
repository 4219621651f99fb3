#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;
use txforge_core::testkit::fixtures::{self, HARVESTER_PLAN};

pub struct Out {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Out {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout))
    }

    pub fn error(&self) -> Value {
        serde_json::from_str(self.stderr.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", self.stderr))
    }
}

pub fn txforge(args: &[&str]) -> Out {
    let out = Command::new(env!("CARGO_BIN_EXE_txforge"))
        .args(args)
        .output()
        .expect("binary runs");
    Out {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).expect("utf8 stdout"),
        stderr: String::from_utf8(out.stderr).expect("utf8 stderr"),
    }
}

pub fn ok(args: &[&str]) -> Value {
    let out = txforge(args);
    assert_eq!(out.code, 0, "txforge {args:?} failed: {}", out.stderr);
    out.json()
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf8 path")
}

/// A scratch directory holding the fixtures as files.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new() -> Workspace {
        let dir = tempfile::tempdir().expect("tempdir");
        let w = Workspace { dir };
        w.write("harvester.bpmn", fixtures::HARVESTER_BPMN);
        w.write("harvester.json", fixtures::HARVESTER_JSON);
        w.write("harvester_happy.json", fixtures::HARVESTER_HAPPY_JSON);
        for name in [
            "rail_reroute",
            "alt_two_task",
            "road_switch",
            "road_parent",
            "post_gap",
            "malformed",
        ] {
            let (xml, sidecar) = fixtures::patch(name);
            w.write(&format!("{name}.bpmn"), xml);
            w.write(&format!("{name}.sidecar.json"), sidecar);
        }
        w
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).expect("write fixture");
        p
    }

    pub fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).expect("read file")
    }

    /// Compile the harvester and select the nested plan through the CLI.
    /// Returns the selected bundle's path.
    pub fn harvester(&self, with_fault: bool) -> PathBuf {
        let scenario = if with_fault {
            "harvester.json"
        } else {
            "harvester_happy.json"
        };
        let compiled = self.path("compiled.json");
        let selected = self.path(if with_fault {
            "selected_fault.json"
        } else {
            "selected_happy.json"
        });
        ok(&[
            "compile",
            "--model",
            s(&self.path("harvester.bpmn")),
            "--scenario",
            s(&self.path(scenario)),
            "--out",
            s(&compiled),
        ]);
        let rows = ok(&["regions", "--bundle", s(&compiled)]);
        let tx = harvester_tx_arg(&rows);
        ok(&["select", "--bundle", s(&compiled), "--tx", &tx, "--out", s(&selected)]);
        selected
    }
}

/// `name=R<i>,...` for the nested harvester plan, looked up by member set.
pub fn harvester_tx_arg(rows: &Value) -> String {
    HARVESTER_PLAN
        .iter()
        .map(|(name, members)| {
            let row = rows
                .as_array()
                .expect("region rows")
                .iter()
                .find(|r| {
                    let m: Vec<&str> = r["members"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|v| v.as_str().unwrap())
                        .collect();
                    m == *members
                })
                .unwrap_or_else(|| panic!("no region for {name}"));
            format!("{name}={}", row["regionId"].as_str().unwrap())
        })
        .collect::<Vec<_>>()
        .join(",")
}

pub fn block_tx_names(report: &Value) -> Vec<String> {
    let names: std::collections::BTreeMap<String, String> = report["txs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| {
            (
                t["txId"].as_str().unwrap().to_string(),
                t["logicalName"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    report["ledger"]["blocks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| names[b["txId"].as_str().unwrap()].clone())
        .collect()
}
