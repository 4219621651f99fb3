//! Drives a session to the end while recording the ledger dump hash at every
//! transaction begin and checking it again at every abort.

use std::collections::BTreeMap;

use crate::compiler::DeploymentBundle;
use crate::repair::{escalate, RepairError};
use crate::runtime::{Engine, JournalEntry, JournalEvent, Mode};
use crate::scenario::FaultSpec;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AtomicityReport {
    /// Aborted or failed transactions whose ledger hash was compared.
    pub aborts_checked: usize,
    /// `(tx, hash at begin, hash after abort)` for every mismatch.
    pub violations: Vec<(String, String, String)>,
    pub final_mode: Option<Mode>,
}

fn scan(
    entries: &[JournalEntry],
    before: &str,
    after: &str,
    begun: &mut BTreeMap<String, String>,
    report: &mut AtomicityReport,
) {
    for e in entries {
        match &e.event {
            JournalEvent::TxBegun { tx, .. } => {
                begun.insert(tx.clone(), before.to_string());
            }
            JournalEvent::TxAborted { tx, .. } => {
                report.aborts_checked += 1;
                let at_begin = begun.get(tx).cloned().unwrap_or_default();
                if at_begin != after {
                    report.violations.push((tx.clone(), at_begin, after.to_string()));
                }
            }
            _ => {}
        }
    }
}

/// Run `bundle` with `faults` injected. Whenever the session waits for
/// repair, escalate until no enclosing transaction is left, so that every
/// level of the tree gets aborted at least once.
pub fn run_checking_atomicity(bundle: DeploymentBundle, faults: Vec<FaultSpec>) -> AtomicityReport {
    let mut engine = Engine::start(bundle).expect("bundle starts");
    for f in faults {
        engine.add_fault(f).expect("fault targets a model task");
    }
    let mut report = AtomicityReport::default();
    let mut begun = BTreeMap::new();
    loop {
        let before = engine.ledger().dump_hash();
        let seen = engine.journal().len();
        match engine.mode().clone() {
            Mode::Running => {
                let step = engine.step().expect("step succeeds");
                scan(
                    &step.entries,
                    &before,
                    &engine.ledger().dump_hash(),
                    &mut begun,
                    &mut report,
                );
            }
            Mode::AwaitingRepair { .. } => match escalate(&mut engine) {
                Ok(_) => {
                    let after = engine.ledger().dump_hash();
                    scan(
                        &engine.journal().entries()[seen..],
                        &before,
                        &after,
                        &mut begun,
                        &mut report,
                    );
                }
                Err(RepairError::NoParent(_)) => break,
                Err(e) => panic!("escalation failed: {e}"),
            },
            Mode::Done { .. } => break,
        }
    }
    report.final_mode = Some(engine.mode().clone());
    report
}
