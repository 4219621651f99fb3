//! Discrete-event execution of a deployment bundle.
//!
//! The engine is a single FIFO of [`EngineEvent`]s. Each `step` dequeues one
//! event and fires whatever it enables. Transactions buffer their writes;
//! children merge into their parent on commit and only a top-level commit
//! (after a two-phase vote) appends a ledger block. An unresolved fault
//! aborts the failing transaction and parks the engine in `AwaitingRepair`
//! with a ticket for the `repair` module.

mod checkpoint;
pub mod journal;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpmn::{parse_bpmn, ModelError};
use crate::compiler::{
    scenario_hash, CompileError, ContractUnit, DeploymentBundle, FsmKind, NodeFsm, Router, WireEdge,
};
use crate::dataflow::DataflowError;
use crate::expr::{Expr, Value};
use crate::ledger::{Ledger, LedgerEvent, LedgerEventKind};
use crate::region::MAIN;
use crate::repair::{build_ticket, RepairTicket};
use crate::scenario::{bind, BindError, BoundModel, FaultKind, FaultSpec, HandlerOutcome, ScenarioSpec};

pub use checkpoint::CHECKPOINT_FORMAT_VERSION;
pub use journal::{AbortStatus, Cause, Journal, JournalEntry, JournalEvent, MessageKind};

/// Frame id of the main unit. Transaction frames use their tx id.
pub const MAIN_FRAME: &str = "main";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("bundle hash does not match its model or scenario")]
    HashMismatch,
    #[error("the event queue is empty")]
    NothingToStep,
    #[error("`{command}` is not allowed while the session is {mode}")]
    InvalidMode { command: String, mode: String },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown actor `{0}`")]
    UnknownActor(String),
    #[error("task `{0}` is not active")]
    TaskNotActive(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("every queued event is waiting for the ledger lock")]
    Deadlock,
    #[error("checkpoint format version {0} is not supported")]
    VersionMismatch(u64),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
}

impl RuntimeError {
    pub fn code(&self) -> &'static str {
        match self {
            RuntimeError::HashMismatch => "HashMismatch",
            RuntimeError::NothingToStep => "NothingToStep",
            RuntimeError::InvalidMode { .. } => "InvalidMode",
            RuntimeError::UnknownTask(_) => "UnknownTask",
            RuntimeError::UnknownActor(_) => "UnknownActor",
            RuntimeError::TaskNotActive(_) => "TaskNotActive",
            RuntimeError::ProtocolError(_) => "ProtocolError",
            RuntimeError::Deadlock => "Deadlock",
            RuntimeError::VersionMismatch(_) => "VersionMismatch",
            RuntimeError::CorruptCheckpoint(_) => "CorruptCheckpoint",
            RuntimeError::Compile(CompileError::UnknownName(_)) => "UnknownName",
            RuntimeError::Compile(_) => "CompileError",
            RuntimeError::Bind(_) => "BindError",
            RuntimeError::Model(e) => e.code(),
            RuntimeError::Dataflow(_) => "UndeclaredBehavior",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all_fields = "camelCase")]
pub enum EngineEvent {
    TokenArrived {
        frame: String,
        node: String,
        flow: Option<String>,
    },
    ExecTask {
        frame: String,
        node: String,
    },
}

impl EngineEvent {
    pub fn frame(&self) -> &str {
        match self {
            EngineEvent::TokenArrived { frame, .. } | EngineEvent::ExecTask { frame, .. } => frame,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxStatus {
    Active,
    Preparing,
    Committed,
    Aborted,
    Failed,
}

/// Where a transaction was invoked from: an invocation node of a frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub frame: String,
    pub node: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TxContext {
    pub tx_id: String,
    pub logical_name: String,
    pub version: u32,
    pub parent: Option<String>,
    pub status: TxStatus,
    pub buffer: Vec<(String, Value)>,
    pub participants: BTreeSet<String>,
    pub child_order: Vec<String>,
    pub begin_seq: u64,
    /// `None` for the one-task transactions of tasks outside any selection.
    pub invoked_from: Option<Invocation>,
    pub arrivals: BTreeMap<String, usize>,
    /// Tasks whose writes were replayed at begin and are skipped when reached.
    pub reused: BTreeSet<String>,
    /// Participants that will vote NO, with the fault that caused it.
    pub prepare_no: BTreeMap<String, Cause>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MainFrame {
    pub version: u32,
    pub arrivals: BTreeMap<String, usize>,
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum Mode {
    Running,
    AwaitingRepair { ticket: String },
    Done { outcome: Outcome },
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Running => write!(f, "Running"),
            Mode::AwaitingRepair { ticket } => write!(f, "AwaitingRepair({ticket})"),
            Mode::Done { outcome } => write!(f, "Done({outcome:?})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Counters {
    pub messages2pc: BTreeMap<String, u64>,
    /// (step number, wall-clock nanoseconds).
    pub step_delays: Vec<(u64, u64)>,
    pub task_attempts: BTreeMap<String, u32>,
    pub steps: u64,
    pub deferrals: u64,
}

/// What a single step did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepReport {
    pub step: u64,
    pub event: EngineEvent,
    pub deferred: bool,
    pub entries: Vec<JournalEntry>,
    pub mode: Mode,
}

/// The serializable part of the engine besides bundle, journal and ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub(crate) struct EngineState {
    pub queue: VecDeque<EngineEvent>,
    pub tx_tree: BTreeMap<String, TxContext>,
    pub attempt_counts: BTreeMap<String, u32>,
    pub mode: Mode,
    pub main: MainFrame,
    pub ticket: Option<RepairTicket>,
    /// "unit/task" → frame currently executing it.
    pub task_locks: BTreeMap<String, String>,
    /// The top-level transaction currently allowed to touch the ledger.
    pub ledger_lock: Option<String>,
    pub next_tx: u64,
    pub next_ticket: u64,
    pub deferred_streak: usize,
    pub ledger_events: Vec<LedgerEvent>,
}

pub struct Engine {
    pub(crate) bound: BoundModel,
    pub(crate) bundle: DeploymentBundle,
    pub(crate) st: EngineState,
    pub(crate) journal: Journal,
    pub(crate) ledger: Ledger,
    pub(crate) metrics: Counters,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("mode", &self.st.mode)
            .field("queue", &self.st.queue.len())
            .field("journal", &self.journal.len())
            .field("ledgerHeight", &self.ledger.height())
            .finish()
    }
}

fn lock_key(unit: &str, task: &str) -> String {
    format!("{unit}/{task}")
}

pub(crate) fn bind_bundle(bundle: &DeploymentBundle) -> Result<BoundModel, RuntimeError> {
    let model = parse_bpmn(&bundle.model)?;
    Ok(bind(&model, &bundle.scenario)?)
}

impl Engine {
    /// Start a session on `bundle` with the scenario it embeds.
    pub fn start(bundle: DeploymentBundle) -> Result<Engine, RuntimeError> {
        let scenario = bundle.scenario.clone();
        Engine::start_with_scenario(bundle, &scenario)
    }

    pub fn start_with_scenario(bundle: DeploymentBundle, scenario: &ScenarioSpec) -> Result<Engine, RuntimeError> {
        if scenario_hash(scenario) != bundle.scenario_hash
            || crate::compiler::model_hash(&bundle.model) != bundle.model_hash
        {
            return Err(RuntimeError::HashMismatch);
        }
        let bound = bind_bundle(&bundle)?;
        let main_version = bundle.registry.route(MAIN)?.version;
        let mut engine = Engine {
            bound,
            bundle,
            st: EngineState {
                queue: VecDeque::new(),
                tx_tree: BTreeMap::new(),
                attempt_counts: BTreeMap::new(),
                mode: Mode::Running,
                main: MainFrame {
                    version: main_version,
                    arrivals: BTreeMap::new(),
                    finished: false,
                },
                ticket: None,
                task_locks: BTreeMap::new(),
                ledger_lock: None,
                next_tx: 0,
                next_ticket: 0,
                deferred_streak: 0,
                ledger_events: Vec::new(),
            },
            journal: Journal::default(),
            ledger: Ledger::new(),
            metrics: Counters::default(),
        };
        engine.seed_main()?;
        Ok(engine)
    }

    /// Put the tokens leaving the start event on the queue.
    pub(crate) fn seed_main(&mut self) -> Result<(), RuntimeError> {
        let unit = self.main_unit()?.clone();
        for w in unit.network.out_wires(&unit.network.entry) {
            self.st.queue.push_back(EngineEvent::TokenArrived {
                frame: MAIN_FRAME.into(),
                node: w.target.clone(),
                flow: Some(w.flow.clone()),
            });
        }
        Ok(())
    }

    // -- accessors ---------------------------------------------------------

    pub fn mode(&self) -> &Mode {
        &self.st.mode
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn bundle(&self) -> &DeploymentBundle {
        &self.bundle
    }

    pub fn bound(&self) -> &BoundModel {
        &self.bound
    }

    pub fn router(&self) -> &Router {
        &self.bundle.registry.router
    }

    pub fn queue(&self) -> &VecDeque<EngineEvent> {
        &self.st.queue
    }

    pub fn txs(&self) -> &BTreeMap<String, TxContext> {
        &self.st.tx_tree
    }

    pub fn tx(&self, id: &str) -> Option<&TxContext> {
        self.st.tx_tree.get(id)
    }

    /// Transactions of `name`, in begin order.
    pub fn txs_named(&self, name: &str) -> Vec<&TxContext> {
        let mut v: Vec<&TxContext> = self.st.tx_tree.values().filter(|t| t.logical_name == name).collect();
        v.sort_by_key(|t| t.begin_seq);
        v
    }

    pub fn ticket(&self) -> Option<&RepairTicket> {
        self.st.ticket.as_ref()
    }

    pub fn attempt_counts(&self) -> &BTreeMap<String, u32> {
        &self.st.attempt_counts
    }

    pub fn metrics(&self) -> Counters {
        let mut m = self.metrics.clone();
        m.task_attempts = self.st.attempt_counts.clone();
        m
    }

    pub fn main_finished(&self) -> bool {
        self.st.main.finished
    }

    pub(crate) fn main_unit(&self) -> Result<&ContractUnit, RuntimeError> {
        self.bundle
            .registry
            .unit(MAIN, self.st.main.version)
            .ok_or_else(|| RuntimeError::Compile(CompileError::UnknownName(MAIN.into())))
    }

    fn frame_unit(&self, frame: &str) -> Result<&ContractUnit, RuntimeError> {
        if frame == MAIN_FRAME {
            return self.main_unit();
        }
        let ctx = self
            .st
            .tx_tree
            .get(frame)
            .ok_or_else(|| RuntimeError::ProtocolError(format!("unknown frame `{frame}`")))?;
        self.bundle
            .registry
            .unit(&ctx.logical_name, ctx.version)
            .ok_or_else(|| RuntimeError::Compile(CompileError::UnknownName(ctx.logical_name.clone())))
    }

    fn frame_tx(frame: &str) -> Option<&str> {
        (frame != MAIN_FRAME).then_some(frame)
    }

    fn is_live_frame(&self, frame: &str) -> bool {
        frame == MAIN_FRAME || self.st.tx_tree.get(frame).is_some_and(|t| t.status == TxStatus::Active)
    }

    /// Scoped read chain: own buffer newest-first, then ancestors, then the
    /// ledger, then the initial variables.
    pub(crate) fn read_var(&self, tx: Option<&str>, var: &str) -> Option<Value> {
        let mut cur = tx;
        while let Some(id) = cur {
            let ctx = &self.st.tx_tree[id];
            if let Some((_, v)) = ctx.buffer.iter().rev().find(|(k, _)| k == var) {
                return Some(v.clone());
            }
            cur = ctx.parent.as_deref();
        }
        self.ledger
            .read(var)
            .cloned()
            .or_else(|| self.bound.scenario.initial.get(var).cloned())
    }

    fn top_of(&self, tx: &str) -> String {
        let mut cur = tx;
        while let Some(p) = self.st.tx_tree[cur].parent.as_deref() {
            cur = p;
        }
        cur.to_string()
    }

    /// `tx` and all its descendants.
    pub(crate) fn subtree(&self, tx: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![tx.to_string()];
        while let Some(t) = stack.pop() {
            if let Some(ctx) = self.st.tx_tree.get(&t) {
                stack.extend(ctx.child_order.iter().cloned());
            }
            out.insert(t);
        }
        out
    }

    // -- commands ----------------------------------------------------------

    fn require_running(&self, command: &str) -> Result<(), RuntimeError> {
        if self.st.mode != Mode::Running {
            return Err(RuntimeError::InvalidMode {
                command: command.into(),
                mode: self.st.mode.to_string(),
            });
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<StepReport, RuntimeError> {
        self.require_running("step")?;
        let event = self.st.queue.pop_front().ok_or(RuntimeError::NothingToStep)?;
        let before = self.journal.len();
        let started = Instant::now();
        self.metrics.steps += 1;
        let step = self.metrics.steps;

        let deferred = match self.process(event.clone()) {
            Ok(d) => d,
            Err(e) => {
                self.st.mode = Mode::Done {
                    outcome: Outcome::Failed,
                };
                return Err(e);
            }
        };
        if self.st.mode == Mode::Running && self.st.queue.is_empty() {
            let outcome = if self.st.main.finished {
                Outcome::Success
            } else {
                Outcome::Failed
            };
            self.st.mode = Mode::Done { outcome };
        }
        self.metrics
            .step_delays
            .push((step, started.elapsed().as_nanos() as u64));
        Ok(StepReport {
            step,
            event,
            deferred,
            entries: self.journal.entries()[before..].to_vec(),
            mode: self.st.mode.clone(),
        })
    }

    /// Step until the session leaves `Running`.
    pub fn run(&mut self) -> Result<Mode, RuntimeError> {
        self.require_running("run")?;
        while self.st.mode == Mode::Running {
            self.step()?;
        }
        Ok(self.st.mode.clone())
    }

    /// Re-deliver the arrival of an active task at the front of the queue,
    /// as a re-entrant call from inside the task would. Processing it trips
    /// the re-entrancy guard.
    pub fn redispatch(&mut self, task: &str) -> Result<(), RuntimeError> {
        let frame = self
            .st
            .task_locks
            .iter()
            .find(|(k, _)| k.rsplit_once('/').is_some_and(|(_, t)| t == task))
            .map(|(_, f)| f.clone())
            .ok_or_else(|| RuntimeError::TaskNotActive(task.into()))?;
        self.st.queue.push_front(EngineEvent::TokenArrived {
            frame,
            node: task.into(),
            flow: None,
        });
        Ok(())
    }

    /// Add a fault to the live scenario.
    pub fn add_fault(&mut self, fault: FaultSpec) -> Result<(), RuntimeError> {
        if let Mode::Done { .. } = self.st.mode {
            return Err(RuntimeError::InvalidMode {
                command: "fault".into(),
                mode: self.st.mode.to_string(),
            });
        }
        if self.bound.behavior(&fault.task).is_none() {
            return Err(RuntimeError::UnknownTask(fault.task));
        }
        if let FaultKind::PrepareNo { participant } = &fault.kind {
            if !self.bound.model.actors().contains(participant) {
                return Err(RuntimeError::UnknownActor(participant.clone()));
            }
        }
        self.bundle.scenario.faults.push(fault.clone());
        self.bundle.scenario_hash = scenario_hash(&self.bundle.scenario);
        self.bound.scenario.faults.push(fault);
        Ok(())
    }

    /// Journal an operator command.
    pub fn note_command(&mut self, name: &str, detail: serde_json::Value) {
        self.journal.append(JournalEvent::Command {
            name: name.into(),
            detail,
        });
    }

    // -- event processing --------------------------------------------------

    /// Returns whether the event was deferred.
    fn process(&mut self, event: EngineEvent) -> Result<bool, RuntimeError> {
        let frame = event.frame().to_string();
        if !self.is_live_frame(&frame) {
            return Ok(false);
        }
        let deferred = match &event {
            EngineEvent::TokenArrived { node, .. } => self.arrive(&frame, node)?,
            EngineEvent::ExecTask { node, .. } => self.exec(&frame, node)?,
        };
        if deferred {
            self.st.deferred_streak += 1;
            self.metrics.deferrals += 1;
            if self.st.deferred_streak > self.st.queue.len() {
                return Err(RuntimeError::Deadlock);
            }
            self.st.queue.push_back(event);
        } else {
            self.st.deferred_streak = 0;
        }
        Ok(deferred)
    }

    fn machine(&self, frame: &str, node: &str) -> Result<NodeFsm, RuntimeError> {
        self.frame_unit(frame)?
            .network
            .machines
            .get(node)
            .cloned()
            .ok_or_else(|| RuntimeError::ProtocolError(format!("no machine `{node}` in frame `{frame}`")))
    }

    fn arrivals_mut(&mut self, frame: &str) -> &mut BTreeMap<String, usize> {
        if frame == MAIN_FRAME {
            &mut self.st.main.arrivals
        } else {
            &mut self.st.tx_tree.get_mut(frame).expect("live frame").arrivals
        }
    }

    fn unit_name(&self, frame: &str) -> String {
        match Engine::frame_tx(frame) {
            Some(tx) => self.st.tx_tree[tx].logical_name.clone(),
            None => MAIN.to_string(),
        }
    }

    fn arrive(&mut self, frame: &str, node: &str) -> Result<bool, RuntimeError> {
        let machine = self.machine(frame, node)?;
        let count = self.arrivals_mut(frame).get(node).copied().unwrap_or(0) + 1;
        let fires = count >= machine.arrivals_needed();
        if fires && machine.kind == FsmKind::Invoke && frame == MAIN_FRAME && self.st.ledger_lock.is_some() {
            return Ok(true);
        }
        if machine.kind == FsmKind::Task {
            let key = lock_key(&self.unit_name(frame), node);
            if self.st.task_locks.contains_key(&key) {
                self.journal.append(JournalEvent::ReentrancyViolation {
                    unit: self.unit_name(frame),
                    task: node.into(),
                });
                return Ok(false);
            }
        }
        if !fires {
            self.arrivals_mut(frame).insert(node.into(), count);
            return Ok(false);
        }
        self.arrivals_mut(frame).remove(node);

        match machine.kind {
            FsmKind::Exit if frame == MAIN_FRAME => {
                self.st.main.finished = true;
            }
            FsmKind::Task => {
                let key = lock_key(&self.unit_name(frame), node);
                self.st.task_locks.insert(key, frame.into());
                self.st.queue.push_back(EngineEvent::ExecTask {
                    frame: frame.into(),
                    node: node.into(),
                });
            }
            FsmKind::Invoke => {
                let child = machine
                    .invokes
                    .clone()
                    .ok_or_else(|| RuntimeError::ProtocolError(format!("`{node}` invokes nothing")))?;
                self.begin_tx(
                    &child,
                    Engine::frame_tx(frame).map(str::to_string),
                    Some(Invocation {
                        frame: frame.into(),
                        node: node.into(),
                    }),
                    BTreeSet::new(),
                )?;
            }
            _ => {
                self.fire_emit(frame, node)?;
            }
        }
        Ok(false)
    }

    fn exec(&mut self, frame: &str, node: &str) -> Result<bool, RuntimeError> {
        if frame == MAIN_FRAME {
            if self.st.ledger_lock.is_some() {
                return Ok(true);
            }
            let tx = self.begin_tx(MAIN, None, None, BTreeSet::new())?;
            if self.run_task(&tx, frame, node)? && self.commit_top(&tx)? {
                self.fire_emit(frame, node)?;
            }
            return Ok(false);
        }
        if self.st.tx_tree[frame].reused.contains(node) {
            self.release_lock(frame, node);
            self.fire_emit(frame, node)?;
            return Ok(false);
        }
        if self.run_task(frame, frame, node)? {
            self.fire_emit(frame, node)?;
        }
        Ok(false)
    }

    fn release_lock(&mut self, frame: &str, node: &str) {
        let key = lock_key(&self.unit_name(frame), node);
        self.st.task_locks.remove(&key);
    }

    /// Emit from `node`, then complete the frame if `node` is its exit.
    fn fire_emit(&mut self, frame: &str, node: &str) -> Result<(), RuntimeError> {
        if !self.emit(frame, node)? {
            return Ok(());
        }
        if frame != MAIN_FRAME && self.frame_unit(frame)?.network.exit == node {
            self.complete_frame(frame)?;
        }
        Ok(())
    }

    /// Returns false when guard evaluation failed the frame.
    fn emit(&mut self, frame: &str, node: &str) -> Result<bool, RuntimeError> {
        let machine = self.machine(frame, node)?;
        let wires: Vec<WireEdge> = self.frame_unit(frame)?.network.out_wires(node).cloned().collect();
        let chosen: Vec<WireEdge> = if machine.exclusive {
            match self.choose_branch(frame, node, &wires) {
                Ok(w) => vec![w],
                Err(message) => {
                    self.fail_frame(
                        frame,
                        Cause {
                            task_id: node.into(),
                            message,
                            attempt: 0,
                        },
                    )?;
                    return Ok(false);
                }
            }
        } else {
            wires
        };
        for w in chosen {
            self.st.queue.push_back(EngineEvent::TokenArrived {
                frame: frame.into(),
                node: w.target,
                flow: Some(w.flow),
            });
        }
        Ok(true)
    }

    fn choose_branch(&mut self, frame: &str, node: &str, wires: &[WireEdge]) -> Result<WireEdge, String> {
        let tx = Engine::frame_tx(frame).map(str::to_string);
        for w in wires {
            let Some(guard) = self.bound.guards.get(&w.flow).cloned() else {
                continue;
            };
            let env = |var: &str| self.read_var(tx.as_deref(), var);
            let result = match guard.eval(&env) {
                Ok(Value::Bool(b)) => b,
                Ok(other) => return Err(format!("guard on `{}` evaluated to {other:?}", w.flow)),
                Err(e) => return Err(format!("guard on `{}`: {e}", w.flow)),
            };
            self.journal.append(JournalEvent::GuardEvaluated {
                frame: frame.into(),
                node: node.into(),
                flow: w.flow.clone(),
                guard: guard.source().into(),
                result,
            });
            if result {
                return Ok(w.clone());
            }
        }
        wires
            .iter()
            .find(|w| self.bound.model.flow(&w.flow).is_some_and(|f| f.is_default))
            .cloned()
            .ok_or_else(|| format!("no outgoing flow of `{node}` is enabled"))
    }

    // -- tasks -------------------------------------------------------------

    /// Run `node` inside `tx`. Returns whether the task completed.
    fn run_task(&mut self, tx: &str, frame: &str, node: &str) -> Result<bool, RuntimeError> {
        let behavior = self
            .bound
            .behavior(node)
            .cloned()
            .ok_or_else(|| RuntimeError::UnknownTask(node.into()))?;
        let attempt = {
            let a = self.st.attempt_counts.entry(node.into()).or_insert(0);
            *a += 1;
            *a
        };
        let fault = self
            .bound
            .scenario
            .faults
            .iter()
            .find(|f| f.task == node && f.attempt == attempt)
            .cloned();
        let mut failure = None;
        if let Some(f) = fault {
            let (kind, participant) = match &f.kind {
                FaultKind::Exception => ("exception", None),
                FaultKind::PrepareNo { participant } => ("prepare-no", Some(participant.clone())),
            };
            self.journal.append(JournalEvent::FaultInjected {
                task: node.into(),
                attempt,
                fault: kind.into(),
                participant: participant.clone(),
                message: f.message.clone(),
            });
            match participant {
                None => failure = Some(f.message.clone()),
                Some(p) => {
                    let top = self.top_of(tx);
                    self.st.tx_tree.get_mut(&top).expect("top tx").prepare_no.insert(
                        p,
                        Cause {
                            task_id: node.into(),
                            message: f.message.clone(),
                            attempt,
                        },
                    );
                }
            }
        }

        let readable = self.frame_unit(frame)?.scope.readable.clone();
        let unit = self.unit_name(frame);
        let result = match failure {
            Some(message) => Err(message),
            None => self.evaluate(tx, &behavior.reads, &behavior.writes, Some((&unit, &readable))),
        };
        self.release_lock(frame, node);
        let (reads, writes, handled) = match result {
            Ok((r, w)) => (r, w, false),
            Err(message) => {
                let handled = behavior
                    .handler
                    .as_ref()
                    .map(|h| (h.outcome, self.evaluate(tx, &behavior.reads, &h.actions, None)));
                match handled {
                    Some((HandlerOutcome::Resolve, Ok((r, w)))) => (r, w, true),
                    other => {
                        let message = match other {
                            Some((HandlerOutcome::Resolve, Err(e))) => format!("{message}; handler failed: {e}"),
                            Some((HandlerOutcome::Fail, _)) => format!("{message}; handler gave up"),
                            _ => message,
                        };
                        self.fail_tx(
                            tx,
                            Cause {
                                task_id: node.into(),
                                message,
                                attempt,
                            },
                        )?;
                        return Ok(false);
                    }
                }
            }
        };
        self.complete_task(tx, node, &behavior.actor, attempt, reads, writes, false, handled);
        Ok(true)
    }

    /// Evaluate `actions` against the read chain. With a scope, reads outside
    /// it are violations; without one, unreadable variables are skipped.
    #[allow(clippy::type_complexity)]
    fn evaluate(
        &self,
        tx: &str,
        reads: &BTreeSet<String>,
        actions: &[(String, Expr)],
        scope: Option<(&str, &BTreeSet<String>)>,
    ) -> Result<(BTreeMap<String, Value>, Vec<(String, Value)>), String> {
        let mut env = BTreeMap::new();
        for var in reads {
            if let Some((unit, readable)) = scope {
                if !readable.contains(var) {
                    return Err(format!("scope violation: `{var}` is not readable in `{unit}`"));
                }
            }
            match self.read_var(Some(tx), var) {
                Some(v) => {
                    env.insert(var.clone(), v);
                }
                None if scope.is_some() => return Err(format!("`{var}` has no value")),
                None => {}
            }
        }
        let snapshot = env.clone();
        let mut writes = Vec::with_capacity(actions.len());
        for (var, expr) in actions {
            let v = expr.eval(&env).map_err(|e| e.to_string())?;
            env.insert(var.clone(), v.clone());
            writes.push((var.clone(), v));
        }
        Ok((snapshot, writes))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn complete_task(
        &mut self,
        tx: &str,
        task: &str,
        actor: &str,
        attempt: u32,
        reads: BTreeMap<String, Value>,
        writes: Vec<(String, Value)>,
        replayed: bool,
        handled: bool,
    ) {
        let mut cur = Some(tx.to_string());
        while let Some(id) = cur {
            let ctx = self.st.tx_tree.get_mut(&id).expect("tx in tree");
            ctx.participants.insert(actor.into());
            cur = ctx.parent.clone();
        }
        self.st
            .tx_tree
            .get_mut(tx)
            .expect("tx in tree")
            .buffer
            .extend(writes.iter().cloned());
        self.journal.append(JournalEvent::TaskCompleted {
            tx: tx.into(),
            task: task.into(),
            actor: actor.into(),
            attempt,
            reads,
            writes,
            replayed,
            handled,
        });
    }

    // -- transactions ------------------------------------------------------

    pub(crate) fn begin_tx(
        &mut self,
        name: &str,
        parent: Option<String>,
        invoked_from: Option<Invocation>,
        reused: BTreeSet<String>,
    ) -> Result<String, RuntimeError> {
        let unit = self.bundle.registry.route(name)?;
        let (version, entry) = (unit.version, unit.network.entry.clone());
        if let Some(p) = &parent {
            if self.st.tx_tree.get(p).map(|c| c.status) != Some(TxStatus::Active) {
                return Err(RuntimeError::ProtocolError(format!("parent `{p}` is not active")));
            }
        }
        self.st.next_tx += 1;
        let tx_id = format!("{name}#{}", self.st.next_tx);
        let begin_seq = self.journal.append(JournalEvent::TxBegun {
            tx: tx_id.clone(),
            name: name.into(),
            version,
            parent: parent.clone(),
            begin_seq: self.journal.len() as u64 + 1,
        });
        let enqueue_entry = invoked_from.is_some();
        self.st.tx_tree.insert(
            tx_id.clone(),
            TxContext {
                tx_id: tx_id.clone(),
                logical_name: name.into(),
                version,
                parent: parent.clone(),
                status: TxStatus::Active,
                buffer: Vec::new(),
                participants: BTreeSet::new(),
                child_order: Vec::new(),
                begin_seq,
                invoked_from,
                arrivals: BTreeMap::new(),
                reused,
                prepare_no: BTreeMap::new(),
            },
        );
        match &parent {
            Some(p) => self
                .st
                .tx_tree
                .get_mut(p)
                .expect("parent")
                .child_order
                .push(tx_id.clone()),
            None => self.st.ledger_lock = Some(tx_id.clone()),
        }
        if enqueue_entry {
            self.st.queue.push_back(EngineEvent::TokenArrived {
                frame: tx_id.clone(),
                node: entry,
                flow: None,
            });
        }
        Ok(tx_id)
    }

    fn complete_frame(&mut self, tx: &str) -> Result<(), RuntimeError> {
        let ctx = &self.st.tx_tree[tx];
        let inv = ctx
            .invoked_from
            .clone()
            .ok_or_else(|| RuntimeError::ProtocolError(format!("`{tx}` has no invoking frame")))?;
        if ctx.parent.is_some() {
            self.commit_child(tx)?;
        } else if !self.commit_top(tx)? {
            return Ok(());
        }
        self.fire_emit(&inv.frame, &inv.node)
    }

    pub fn commit_child(&mut self, tx: &str) -> Result<(), RuntimeError> {
        let ctx = &self.st.tx_tree[tx];
        let parent = ctx
            .parent
            .clone()
            .ok_or_else(|| RuntimeError::ProtocolError(format!("`{tx}` is top-level")))?;
        if ctx.status != TxStatus::Active {
            return Err(RuntimeError::ProtocolError(format!("`{tx}` is not active")));
        }
        if self.st.tx_tree[&parent].status != TxStatus::Active {
            return Err(RuntimeError::ProtocolError(format!(
                "parent `{parent}` of `{tx}` is not active"
            )));
        }
        let ctx = self.st.tx_tree.get_mut(tx).expect("tx");
        let buffer = std::mem::take(&mut ctx.buffer);
        ctx.status = TxStatus::Committed;
        let name = ctx.logical_name.clone();
        let prepare_no = std::mem::take(&mut ctx.prepare_no);
        let p = self.st.tx_tree.get_mut(&parent).expect("parent");
        p.buffer.extend(buffer);
        p.prepare_no.extend(prepare_no);
        self.journal.append(JournalEvent::TxCommitted {
            tx: tx.into(),
            name,
            parent: Some(parent),
            block: None,
        });
        Ok(())
    }

    /// Two-phase commit of a top-level transaction. Returns whether it
    /// committed.
    fn commit_top(&mut self, tx: &str) -> Result<bool, RuntimeError> {
        let ctx = self.st.tx_tree.get_mut(tx).expect("tx");
        if ctx.status != TxStatus::Active {
            return Err(RuntimeError::ProtocolError(format!("`{tx}` is not active")));
        }
        ctx.status = TxStatus::Preparing;
        let name = ctx.logical_name.clone();
        let participants: Vec<String> = ctx.participants.iter().cloned().collect();
        let no: Vec<(String, Cause)> = participants
            .iter()
            .filter_map(|p| ctx.prepare_no.get(p).map(|c| (p.clone(), c.clone())))
            .collect();
        let coordinator = format!("coordinator:{name}");
        let mut sent = 0u64;
        let mut send = |journal: &mut Journal, from: &str, to: &str, message, value: Option<&str>| {
            sent += 1;
            journal.append(JournalEvent::MessageSent {
                tx: tx.into(),
                from: from.into(),
                to: to.into(),
                message,
                value: value.map(str::to_string),
            });
        };
        for p in &participants {
            send(&mut self.journal, &coordinator, p, MessageKind::Prepare, None);
        }
        for p in &participants {
            let ctx = &self.st.tx_tree[tx];
            let vote = if ctx.prepare_no.contains_key(p) { "NO" } else { "YES" };
            send(&mut self.journal, p, &coordinator, MessageKind::Vote, Some(vote));
            for q in participants.iter().filter(|q| *q != p) {
                send(&mut self.journal, p, q, MessageKind::Vote, Some(vote));
            }
        }
        let decision = if no.is_empty() { "COMMIT" } else { "ABORT" };
        for p in &participants {
            send(
                &mut self.journal,
                &coordinator,
                p,
                MessageKind::Decision,
                Some(decision),
            );
        }
        if sent > 0 {
            *self.metrics.messages2pc.entry(tx.into()).or_insert(0) += sent;
        }

        if let Some((voter, cause)) = no.into_iter().next() {
            self.fail_tx(
                tx,
                Cause {
                    message: format!("{voter} voted NO: {}", cause.message),
                    ..cause
                },
            )?;
            return Ok(false);
        }

        let ctx = self.st.tx_tree.get_mut(tx).expect("tx");
        let buffer = std::mem::take(&mut ctx.buffer);
        let block = (!buffer.is_empty()).then(|| {
            self.ledger.apply_block(
                tx,
                buffer,
                vec![LedgerEvent {
                    kind: LedgerEventKind::Committed,
                    tx_id: tx.into(),
                    participant: None,
                    payload: name.clone(),
                }],
            )
        });
        self.st.tx_tree.get_mut(tx).expect("tx").status = TxStatus::Committed;
        self.journal.append(JournalEvent::TxCommitted {
            tx: tx.into(),
            name,
            parent: None,
            block,
        });
        if self.st.ledger_lock.as_deref() == Some(tx) {
            self.st.ledger_lock = None;
        }
        Ok(true)
    }

    /// Abort `tx`: recover committed children in reverse invocation order,
    /// notify its own participants, discard its buffer.
    pub(crate) fn abort(&mut self, tx: &str, status: AbortStatus, reason: &str) {
        let children = self.st.tx_tree[tx].child_order.clone();
        for c in children.iter().rev() {
            match self.st.tx_tree[c].status {
                TxStatus::Committed => self.recover(c, tx),
                TxStatus::Active | TxStatus::Preparing => self.abort(c, AbortStatus::Aborted, "parent aborted"),
                TxStatus::Aborted | TxStatus::Failed => {}
            }
        }
        let participants: Vec<String> = self.st.tx_tree[tx].participants.iter().cloned().collect();
        for p in &participants {
            self.notify(tx, p, tx);
        }
        let ctx = self.st.tx_tree.get_mut(tx).expect("tx");
        ctx.buffer.clear();
        ctx.arrivals.clear();
        ctx.status = match status {
            AbortStatus::Aborted => TxStatus::Aborted,
            AbortStatus::Failed => TxStatus::Failed,
        };
        let name = ctx.logical_name.clone();
        self.journal.append(JournalEvent::TxAborted {
            tx: tx.into(),
            name,
            status,
            reason: reason.into(),
        });
        if self.st.ledger_lock.as_deref() == Some(tx) {
            self.st.ledger_lock = None;
        }
        self.st.queue.retain(|e| e.frame() != tx);
        self.st.task_locks.retain(|_, f| f != tx);
    }

    fn recover(&mut self, tx: &str, aborted: &str) {
        let children = self.st.tx_tree[tx].child_order.clone();
        for c in children.iter().rev() {
            if self.st.tx_tree[c].status == TxStatus::Committed {
                self.recover(c, aborted);
            }
        }
        let participants: Vec<String> = self.st.tx_tree[tx].participants.iter().cloned().collect();
        for p in &participants {
            self.notify(tx, p, aborted);
        }
    }

    fn notify(&mut self, tx: &str, participant: &str, aborted: &str) {
        self.ledger
            .emit_notice(tx, participant, &format!("release resources held for {aborted}"));
        self.journal.append(JournalEvent::RecoveryNotified {
            tx: tx.into(),
            participant: participant.into(),
            aborted: aborted.into(),
        });
    }

    /// An unresolved failure: abort the transaction and wait for repair.
    fn fail_tx(&mut self, tx: &str, cause: Cause) -> Result<(), RuntimeError> {
        self.abort(tx, AbortStatus::Failed, &cause.message);
        let root = self.st.tx_tree[tx].logical_name == MAIN;
        let ticket = build_ticket(self, tx, cause, 0, root)?;
        self.st.mode = Mode::AwaitingRepair {
            ticket: ticket.ticket_id.clone(),
        };
        self.st.ticket = Some(ticket);
        Ok(())
    }

    fn fail_frame(&mut self, frame: &str, cause: Cause) -> Result<(), RuntimeError> {
        match Engine::frame_tx(frame) {
            Some(tx) => self.fail_tx(tx, cause),
            None => {
                self.st.mode = Mode::Done {
                    outcome: Outcome::Failed,
                };
                Ok(())
            }
        }
    }
}
