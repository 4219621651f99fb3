//! Checkpoint documents: everything needed to continue a session in another
//! process, sealed with a self-hash.

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::{bind_bundle, Counters, Engine, EngineState, Journal, RuntimeError};
use crate::canon::{sha256_hex, to_canonical_string};
use crate::compiler::DeploymentBundle;
use crate::ledger::{Block, Ledger};

pub const CHECKPOINT_FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CheckpointDoc {
    format_version: u64,
    model_hash: String,
    scenario_hash: String,
    bundle: DeploymentBundle,
    engine: EngineState,
    journal: Journal,
    ledger_blocks: Vec<Block>,
    metrics: Counters,
    self_hash: String,
}

fn seal(mut doc: Json) -> Json {
    doc["selfHash"] = Json::String(String::new());
    let hash = sha256_hex(to_canonical_string(&doc));
    doc["selfHash"] = Json::String(hash);
    doc
}

impl Engine {
    /// Serialize the session as pretty JSON with sorted keys.
    pub fn checkpoint(&self) -> String {
        let mut engine = self.st.clone();
        engine.ledger_events = self.ledger.event_log().to_vec();
        let doc = CheckpointDoc {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_hash: self.bundle.model_hash.clone(),
            scenario_hash: self.bundle.scenario_hash.clone(),
            bundle: self.bundle.clone(),
            engine,
            journal: self.journal.clone(),
            ledger_blocks: self.ledger.blocks().to_vec(),
            metrics: self.metrics.clone(),
            self_hash: String::new(),
        };
        let value = seal(serde_json::to_value(&doc).expect("checkpoint serializes"));
        serde_json::to_string_pretty(&value).expect("value serializes")
    }

    pub fn restore(text: &str) -> Result<Engine, RuntimeError> {
        let corrupt = |m: String| RuntimeError::CorruptCheckpoint(m);
        let value: Json = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        match value.get("formatVersion").and_then(Json::as_u64) {
            Some(CHECKPOINT_FORMAT_VERSION) => {}
            Some(v) => return Err(RuntimeError::VersionMismatch(v)),
            None => return Err(corrupt("missing formatVersion".into())),
        }
        let claimed = value
            .get("selfHash")
            .and_then(Json::as_str)
            .ok_or_else(|| corrupt("missing selfHash".into()))?
            .to_string();
        if seal(value.clone())["selfHash"] != Json::String(claimed) {
            return Err(corrupt("self hash does not match the content".into()));
        }
        let doc: CheckpointDoc = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
        if doc.model_hash != doc.bundle.model_hash || doc.scenario_hash != doc.bundle.scenario_hash {
            return Err(RuntimeError::HashMismatch);
        }
        if !doc.journal.is_well_formed() {
            return Err(corrupt("journal sequence numbers are not contiguous".into()));
        }
        let mut st = doc.engine;
        let events = std::mem::take(&mut st.ledger_events);
        let ledger = Ledger::from_parts(doc.ledger_blocks, events).map_err(|e| corrupt(e.to_string()))?;
        let bound = bind_bundle(&doc.bundle)?;
        Ok(Engine {
            bound,
            bundle: doc.bundle,
            st,
            journal: doc.journal,
            ledger,
            metrics: doc.metrics,
        })
    }
}
