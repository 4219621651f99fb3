use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canon::to_canonical_string;
use crate::expr::Value;
use crate::ledger::BlockRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    #[serde(rename = "PREPARE")]
    Prepare,
    #[serde(rename = "VOTE")]
    Vote,
    #[serde(rename = "DECISION")]
    Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortStatus {
    Aborted,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Cause {
    pub task_id: String,
    pub message: String,
    pub attempt: u32,
}

/// One engine event. Serialized as `{"kind": ..., "payload": {...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all_fields = "camelCase")]
pub enum JournalEvent {
    TxBegun {
        tx: String,
        name: String,
        version: u32,
        parent: Option<String>,
        begin_seq: u64,
    },
    TaskCompleted {
        tx: String,
        task: String,
        actor: String,
        attempt: u32,
        reads: BTreeMap<String, Value>,
        writes: Vec<(String, Value)>,
        replayed: bool,
        handled: bool,
    },
    TxCommitted {
        tx: String,
        name: String,
        parent: Option<String>,
        block: Option<BlockRef>,
    },
    TxAborted {
        tx: String,
        name: String,
        status: AbortStatus,
        reason: String,
    },
    RecoveryNotified {
        tx: String,
        participant: String,
        aborted: String,
    },
    MessageSent {
        tx: String,
        from: String,
        to: String,
        message: MessageKind,
        value: Option<String>,
    },
    GuardEvaluated {
        frame: String,
        node: String,
        flow: String,
        guard: String,
        result: bool,
    },
    FaultInjected {
        task: String,
        attempt: u32,
        fault: String,
        participant: Option<String>,
        message: String,
    },
    PatchApplied {
        ticket: String,
        logical_name: String,
        old_version: u32,
        new_version: u32,
        old_fragment_hash: String,
        new_fragment_hash: String,
    },
    ReentrancyViolation {
        unit: String,
        task: String,
    },
    Command {
        name: String,
        detail: serde_json::Value,
    },
}

impl JournalEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            JournalEvent::TxBegun { .. } => "TxBegun",
            JournalEvent::TaskCompleted { .. } => "TaskCompleted",
            JournalEvent::TxCommitted { .. } => "TxCommitted",
            JournalEvent::TxAborted { .. } => "TxAborted",
            JournalEvent::RecoveryNotified { .. } => "RecoveryNotified",
            JournalEvent::MessageSent { .. } => "MessageSent",
            JournalEvent::GuardEvaluated { .. } => "GuardEvaluated",
            JournalEvent::FaultInjected { .. } => "FaultInjected",
            JournalEvent::PatchApplied { .. } => "PatchApplied",
            JournalEvent::ReentrancyViolation { .. } => "ReentrancyViolation",
            JournalEvent::Command { .. } => "Command",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub event: JournalEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Journal {
    entries: Vec<JournalEntry>,
}

impl Journal {
    pub fn append(&mut self, event: JournalEvent) -> u64 {
        let seq = self.entries.len() as u64 + 1;
        self.entries.push(JournalEntry { seq, event });
        seq
    }

    pub fn entries(&self) -> &[JournalEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries with `seq >= from`.
    pub fn since(&self, from: u64) -> &[JournalEntry] {
        let start = (from.max(1) - 1) as usize;
        self.entries.get(start..).unwrap_or(&[])
    }

    /// JSON lines, one canonical entry per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&to_canonical_string(e));
            out.push('\n');
        }
        out
    }

    /// Check the seq numbering, for restored journals.
    pub fn is_well_formed(&self) -> bool {
        self.entries.iter().enumerate().all(|(i, e)| e.seq == i as u64 + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_serialize_with_kind_and_payload() {
        let mut j = Journal::default();
        j.append(JournalEvent::ReentrancyViolation {
            unit: "u".into(),
            task: "A".into(),
        });
        let line = j.dump();
        assert_eq!(
            line,
            "{\"kind\":\"ReentrancyViolation\",\"payload\":{\"task\":\"A\",\"unit\":\"u\"},\"seq\":1}\n"
        );
        let back: JournalEntry = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(back, j.entries()[0]);
    }

    #[test]
    fn since_is_inclusive() {
        let mut j = Journal::default();
        for i in 0..4 {
            j.append(JournalEvent::Command {
                name: format!("c{i}"),
                detail: serde_json::Value::Null,
            });
        }
        assert_eq!(j.since(3).len(), 2);
        assert_eq!(j.since(0).len(), 4);
        assert!(j.since(9).is_empty());
    }
}
