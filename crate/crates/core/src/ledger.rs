//! An in-process, append-only ledger. Blocks carry committed writes and are
//! hash-chained; notices live in the event log only and never touch state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{sha256_hex, to_canonical_string};
use crate::expr::Value;

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LedgerEventKind {
    Committed,
    RecoveryNotice,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LedgerEvent {
    pub kind: LedgerEventKind,
    pub tx_id: String,
    pub participant: Option<String>,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Block {
    pub height: u64,
    pub tx_id: String,
    pub writes: Vec<(String, Value)>,
    pub events: Vec<LedgerEvent>,
    pub prev_hash: String,
    pub content_hash: String,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BlockContent<'a> {
    height: u64,
    tx_id: &'a str,
    writes: &'a [(String, Value)],
    events: &'a [LedgerEvent],
    prev_hash: &'a str,
}

impl Block {
    pub fn compute_hash(&self) -> String {
        sha256_hex(to_canonical_string(&BlockContent {
            height: self.height,
            tx_id: &self.tx_id,
            writes: &self.writes,
            events: &self.events,
            prev_hash: &self.prev_hash,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BlockRef {
    pub height: u64,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("block {height} is corrupt: {detail}")]
    CorruptBlock { height: u64, detail: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    blocks: Vec<Block>,
    state: BTreeMap<String, Value>,
    event_log: Vec<LedgerEvent>,
}

impl Ledger {
    pub fn new() -> Ledger {
        Ledger::default()
    }

    /// Rebuild from persisted blocks and events, verifying the hash chain.
    pub fn from_parts(blocks: Vec<Block>, event_log: Vec<LedgerEvent>) -> Result<Ledger, LedgerError> {
        let mut prev = GENESIS_HASH.to_string();
        let mut state = BTreeMap::new();
        for (i, b) in blocks.iter().enumerate() {
            let corrupt = |detail: &str| LedgerError::CorruptBlock {
                height: b.height,
                detail: detail.to_string(),
            };
            if b.height != i as u64 + 1 {
                return Err(corrupt("height out of sequence"));
            }
            if b.prev_hash != prev {
                return Err(corrupt("previous hash does not match"));
            }
            if b.compute_hash() != b.content_hash {
                return Err(corrupt("content hash does not match"));
            }
            for (k, v) in &b.writes {
                state.insert(k.clone(), v.clone());
            }
            prev = b.content_hash.clone();
        }
        Ok(Ledger {
            blocks,
            state,
            event_log,
        })
    }

    /// Append a block. Events are also appended to the event log.
    pub fn apply_block(&mut self, tx_id: &str, writes: Vec<(String, Value)>, events: Vec<LedgerEvent>) -> BlockRef {
        let mut block = Block {
            height: self.blocks.len() as u64 + 1,
            tx_id: tx_id.to_string(),
            writes,
            events,
            prev_hash: self.head_hash().to_string(),
            content_hash: String::new(),
        };
        block.content_hash = block.compute_hash();
        for (k, v) in &block.writes {
            self.state.insert(k.clone(), v.clone());
        }
        self.event_log.extend(block.events.iter().cloned());
        let out = BlockRef {
            height: block.height,
            content_hash: block.content_hash.clone(),
        };
        self.blocks.push(block);
        out
    }

    pub fn read(&self, var: &str) -> Option<&Value> {
        self.state.get(var)
    }

    /// Record a recovery notice. No block is created.
    pub fn emit_notice(&mut self, tx_id: &str, participant: &str, payload: &str) {
        self.event_log.push(LedgerEvent {
            kind: LedgerEventKind::RecoveryNotice,
            tx_id: tx_id.to_string(),
            participant: Some(participant.to_string()),
            payload: payload.to_string(),
        });
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn state(&self) -> &BTreeMap<String, Value> {
        &self.state
    }

    pub fn event_log(&self) -> &[LedgerEvent] {
        &self.event_log
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn head_hash(&self) -> &str {
        self.blocks.last().map_or(GENESIS_HASH, |b| b.content_hash.as_str())
    }

    /// One canonical JSON object per block, newline-terminated.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&to_canonical_string(b));
            out.push('\n');
        }
        out
    }

    pub fn dump_hash(&self) -> String {
        sha256_hex(self.dump())
    }

    /// Fold the blocks from scratch.
    pub fn recompute_state(&self) -> BTreeMap<String, Value> {
        let mut state = BTreeMap::new();
        for b in &self.blocks {
            for (k, v) in &b.writes {
                state.insert(k.clone(), v.clone());
            }
        }
        state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(pairs: &[(&str, i64)]) -> Vec<(String, Value)> {
        pairs.iter().map(|(k, v)| (k.to_string(), Value::Int(*v))).collect()
    }

    #[test]
    fn apply_and_read() {
        let mut l = Ledger::new();
        assert_eq!(l.read("x"), None);
        let r = l.apply_block("t1", w(&[("x", 1)]), vec![]);
        assert_eq!(r.height, 1);
        assert_eq!(l.read("x"), Some(&Value::Int(1)));
        l.apply_block("t2", w(&[("x", 2)]), vec![]);
        assert_eq!(l.read("x"), Some(&Value::Int(2)));
        assert_eq!(l.height(), 2);
        assert_eq!(l.recompute_state(), *l.state());
    }

    #[test]
    fn chain_links_and_recomputes() {
        let build = || {
            let mut l = Ledger::new();
            for i in 0..3 {
                l.apply_block(&format!("t{i}"), w(&[("x", i)]), vec![]);
            }
            l
        };
        let a = build();
        let b = build();
        assert_eq!(a.dump(), b.dump());
        assert_eq!(a.blocks()[0].prev_hash, GENESIS_HASH);
        for pair in a.blocks().windows(2) {
            assert_eq!(pair[1].prev_hash, pair[0].content_hash);
        }
        for blk in a.blocks() {
            assert_eq!(blk.compute_hash(), blk.content_hash);
        }
        let restored = Ledger::from_parts(a.blocks().to_vec(), vec![]).unwrap();
        assert_eq!(restored.state(), a.state());

        let mut tampered = a.blocks().to_vec();
        tampered[1].writes[0].1 = Value::Int(99);
        assert!(Ledger::from_parts(tampered, vec![]).is_err());
    }

    #[test]
    fn notices_do_not_touch_state() {
        let mut l = Ledger::new();
        l.apply_block("t", w(&[("x", 1)]), vec![]);
        let before = l.dump_hash();
        l.emit_notice("tx", "Alice", "release");
        l.emit_notice("tx", "Bob", "release");
        assert_eq!(l.dump_hash(), before);
        assert_eq!(l.height(), 1);
        let parts: Vec<_> = l.event_log().iter().map(|e| e.participant.clone().unwrap()).collect();
        assert_eq!(parts, ["Alice", "Bob"]);
    }
}
