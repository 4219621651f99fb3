//! Session files and the commands shared by the CLI and the HTTP server.
//!
//! A session is persisted as a checkpoint. Wherever a checkpoint path is
//! expected, a deployment bundle is accepted too: it starts a fresh session
//! that has not taken a step yet.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use txforge_core::bpmn::parse_bpmn;
use txforge_core::compiler::{compile, DeploymentBundle};
use txforge_core::region::{enumerate_sese, parse_region_label, validate_selection, TransactionPlan};
use txforge_core::repair::{export_ticket, make_ticket, parse_patch, resume, submit_patch, VerdictReport};
use txforge_core::runtime::{Engine, JournalEvent, StepReport};
use txforge_core::scenario::{bind, parse_scenario, BoundModel, FaultKind, FaultSpec};

use crate::error::GatewayError;
use crate::views;

pub fn read_file(path: &Path) -> Result<String, GatewayError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => GatewayError::file_not_found(path),
        _ => GatewayError::new("IoError", format!("{}: {e}", path.display())),
    })
}

pub fn write_file(path: &Path, text: &str) -> Result<(), GatewayError> {
    fs::write(path, text).map_err(|e| GatewayError::new("IoError", format!("{}: {e}", path.display())))
}

pub fn read_bundle(path: &Path) -> Result<DeploymentBundle, GatewayError> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| GatewayError::new("BadBundle", format!("{}: {e}", path.display())))
}

/// Bind the model and scenario a bundle carries.
pub fn bound_of(bundle: &DeploymentBundle) -> Result<BoundModel, GatewayError> {
    let model = parse_bpmn(&bundle.model)?;
    Ok(bind(&model, &bundle.scenario)?)
}

/// `compile`: model and scenario text to a bundle with an empty plan.
pub fn compile_files(model_xml: &str, scenario_json: &str) -> Result<DeploymentBundle, GatewayError> {
    let model = parse_bpmn(model_xml)?;
    let spec = parse_scenario(scenario_json)?;
    let bound = bind(&model, &spec)?;
    Ok(compile(&bound, &TransactionPlan::empty())?)
}

/// Parse `name=R3,other=R5`.
pub fn parse_tx_list(spec: &str) -> Result<Vec<(String, String)>, GatewayError> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            item.split_once('=')
                .map(|(n, r)| (n.trim().to_string(), r.trim().to_string()))
                .ok_or_else(|| GatewayError::new("BadRequest", format!("`{item}` is not name=RegionId")))
        })
        .collect()
}

/// `select`: recompile `bundle` with the named regions as transactions.
pub fn select_bundle(bundle: &DeploymentBundle, picks: &[(String, String)]) -> Result<DeploymentBundle, GatewayError> {
    let bound = bound_of(bundle)?;
    let regions = enumerate_sese(&bound.graph);
    let mut indexed = Vec::with_capacity(picks.len());
    for (name, label) in picks {
        let i = parse_region_label(label)
            .filter(|&i| i < regions.len())
            .ok_or_else(|| GatewayError::new("UnknownRegion", format!("no region `{label}`")))?;
        indexed.push((i, name.clone()));
    }
    let plan = validate_selection(&regions, &indexed)?;
    Ok(compile(&bound, &plan)?)
}

/// A fault as given on the command line or in `POST /api/fault`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FaultRequest {
    pub task: String,
    pub attempt: u32,
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub participant: Option<String>,
    pub message: String,
}

impl FaultRequest {
    pub fn to_spec(&self) -> Result<FaultSpec, GatewayError> {
        let bad = |m: &str| GatewayError::new("InvalidFault", m);
        if self.attempt == 0 {
            return Err(bad("attempt must be at least 1"));
        }
        let kind = match (self.kind.as_deref().unwrap_or("exception"), &self.participant) {
            ("exception", None) => FaultKind::Exception,
            ("exception", Some(_)) => return Err(bad("an exception fault takes no participant")),
            ("prepare-no", Some(p)) => FaultKind::PrepareNo { participant: p.clone() },
            ("prepare-no", None) => return Err(bad("a prepare-no fault needs --participant")),
            (other, _) => return Err(bad(&format!("unknown fault kind `{other}`"))),
        };
        Ok(FaultSpec {
            task: self.task.clone(),
            attempt: self.attempt,
            kind,
            message: self.message.clone(),
        })
    }
}

pub struct Session {
    pub engine: Engine,
    pub path: Option<PathBuf>,
}

impl Session {
    pub fn new(engine: Engine, path: Option<PathBuf>) -> Session {
        Session { engine, path }
    }

    /// Load a checkpoint, or start a session from a bundle.
    pub fn load(path: &Path) -> Result<Session, GatewayError> {
        let text = read_file(path)?;
        let value: Json = serde_json::from_str(&text)
            .map_err(|e| GatewayError::new("CorruptCheckpoint", format!("{}: {e}", path.display())))?;
        let engine = if value.get("formatVersion").is_some() {
            Engine::restore(&text)?
        } else {
            let bundle: DeploymentBundle = serde_json::from_value(value)
                .map_err(|e| GatewayError::new("CorruptCheckpoint", format!("{}: {e}", path.display())))?;
            Engine::start(bundle)?
        };
        Ok(Session::new(engine, Some(path.to_path_buf())))
    }

    pub fn save(&self) -> Result<(), GatewayError> {
        match &self.path {
            Some(p) => write_file(p, &self.engine.checkpoint()),
            None => Ok(()),
        }
    }

    /// Replace the session with a fresh one on a reselected bundle. Only
    /// allowed before the first step; operator commands already journaled
    /// are carried over to the new session.
    pub fn select(&mut self, picks: &[(String, String)]) -> Result<Json, GatewayError> {
        let entries = self.engine.journal().entries();
        if self.engine.metrics().steps > 0 || entries.iter().any(|e| !matches!(e.event, JournalEvent::Command { .. })) {
            return Err(GatewayError::new(
                "AlreadyStarted",
                "transactions can only be selected before the session takes its first step",
            ));
        }
        let commands: Vec<(String, Json)> = entries
            .iter()
            .filter_map(|e| match &e.event {
                JournalEvent::Command { name, detail } => Some((name.clone(), detail.clone())),
                _ => None,
            })
            .collect();
        let bundle = select_bundle(self.engine.bundle(), picks)?;
        self.engine = Engine::start(bundle)?;
        for (name, detail) in commands {
            self.engine.note_command(&name, detail);
        }
        Ok(views::state(&self.engine))
    }

    pub fn run(&mut self) -> Result<Json, GatewayError> {
        self.engine.run()?;
        Ok(views::state(&self.engine))
    }

    pub fn step(&mut self, n: usize) -> Result<Json, GatewayError> {
        let mut reports: Vec<StepReport> = Vec::new();
        for _ in 0..n {
            if !reports.is_empty() && *self.engine.mode() != txforge_core::runtime::Mode::Running {
                break;
            }
            reports.push(self.engine.step()?);
        }
        Ok(json!({ "steps": reports, "state": views::state(&self.engine) }))
    }

    pub fn fault(&mut self, req: &FaultRequest) -> Result<Json, GatewayError> {
        self.engine.add_fault(req.to_spec()?)?;
        Ok(json!({ "faults": self.engine.bundle().scenario.faults }))
    }

    /// Fragment XML and sidecar JSON of the live ticket.
    pub fn ticket(&self) -> Result<(String, String), GatewayError> {
        let t = make_ticket(&self.engine)?;
        Ok(export_ticket(t))
    }

    pub fn repair(&mut self, fragment_xml: &str, sidecar_json: &str) -> Result<VerdictReport, GatewayError> {
        let (ticket, patch) = parse_patch(fragment_xml, sidecar_json)?;
        Ok(submit_patch(&mut self.engine, &ticket, &patch)?)
    }

    pub fn resume(&mut self) -> Result<Json, GatewayError> {
        resume(&mut self.engine)?;
        Ok(views::state(&self.engine))
    }
}
