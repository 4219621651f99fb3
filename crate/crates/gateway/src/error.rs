use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use txforge_core::bpmn::ModelError;
use txforge_core::compiler::CompileError;
use txforge_core::region::PlanError;
use txforge_core::repair::RepairError;
use txforge_core::runtime::RuntimeError;
use txforge_core::scenario::{BindError, ScenarioError};

/// A domain error as reported on stderr by the CLI and in HTTP error
/// bodies: `{"error": code, "message": text}`.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{code}: {message}")]
pub struct GatewayError {
    #[serde(rename = "error")]
    pub code: String,
    pub message: String,
}

impl GatewayError {
    pub fn new(code: &str, message: impl Into<String>) -> GatewayError {
        GatewayError {
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn file_not_found(path: &Path) -> GatewayError {
        GatewayError::new("FileNotFound", format!("{} does not exist", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }

    /// HTTP status for this error.
    pub fn status(&self) -> u16 {
        match self.code.as_str() {
            "InvalidMode" | "NotAwaitingRepair" | "NoPatchApplied" | "StaleTicket" | "HashMismatch"
            | "AlreadyStarted" => 409,
            "UnknownTask" | "UnknownActor" | "UnknownName" | "UnknownRegion" | "FileNotFound" | "NoTicket"
            | "TaskNotActive" => 404,
            "BadRequest" | "BadSidecar" | "PlanError" | "ParseError" | "UnknownField" | "MalformedXml"
            | "UnsupportedElement" | "StructureError" | "BindError" | "InvalidFault" => 400,
            _ => 500,
        }
    }
}

impl From<RuntimeError> for GatewayError {
    fn from(e: RuntimeError) -> GatewayError {
        GatewayError::new(e.code(), e.to_string())
    }
}

impl From<RepairError> for GatewayError {
    fn from(e: RepairError) -> GatewayError {
        GatewayError::new(e.code(), e.to_string())
    }
}

impl From<ModelError> for GatewayError {
    fn from(e: ModelError) -> GatewayError {
        GatewayError::new(e.code(), e.to_string())
    }
}

impl From<ScenarioError> for GatewayError {
    fn from(e: ScenarioError) -> GatewayError {
        let code = match e {
            ScenarioError::ParseError { .. } => "ParseError",
            ScenarioError::UnknownField(_) => "UnknownField",
        };
        GatewayError::new(code, e.to_string())
    }
}

impl From<BindError> for GatewayError {
    fn from(e: BindError) -> GatewayError {
        GatewayError::new("BindError", e.to_string())
    }
}

impl From<CompileError> for GatewayError {
    fn from(e: CompileError) -> GatewayError {
        RuntimeError::from(e).into()
    }
}

impl From<PlanError> for GatewayError {
    fn from(e: PlanError) -> GatewayError {
        GatewayError::new("PlanError", e.to_string())
    }
}
