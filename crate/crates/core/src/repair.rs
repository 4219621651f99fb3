//! Failure-to-fragment mapping, patch validation with escalation, and
//! versioned replacement of contract units.
//!
//! A ticket names the transaction region that must be replaced. A patch is
//! accepted when the replacement reads nothing beyond what flowed into the
//! old region (pre-repair) and writes on every path everything the rest of
//! the process consumes from it (post-repair). A violation of either moves
//! the ticket one selected region outwards.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpmn::{serialize, slice_fragment, splice_fragment, FragmentDoc, ModelError};
use crate::canon::sha256_hex;
use crate::compiler::{compile_unit, model_hash, scenario_hash};
use crate::dataflow::{dataflow_in, external_reads, guaranteed_writes, required_out, Behaviors, VarSet};
use crate::expr::{Expr, Value};
use crate::graph::{build_flow_graph, FlowGraph};
use crate::region::{PlanError, Region, TransactionPlan, MAIN};
use crate::runtime::{AbortStatus, Cause, Engine, Invocation, JournalEvent, MainFrame, Mode, RuntimeError};
use crate::scenario::{bind, ScenarioSpec, TaskBehavior};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepairError {
    #[error("the session is not awaiting repair")]
    NotAwaitingRepair,
    #[error("ticket `{given}` is not the live ticket (`{live}`)")]
    StaleTicket { given: String, live: String },
    #[error("`{0}` has no enclosing transaction to escalate to")]
    NoParent(String),
    #[error("no patch has been applied for the live ticket")]
    NoPatchApplied,
    #[error("invalid patch sidecar: {0}")]
    BadSidecar(String),
    #[error("repaired plan is invalid: {0}")]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

impl RepairError {
    pub fn code(&self) -> &'static str {
        match self {
            RepairError::NotAwaitingRepair => "NotAwaitingRepair",
            RepairError::StaleTicket { .. } => "StaleTicket",
            RepairError::NoParent(_) => "NoParent",
            RepairError::NoPatchApplied => "NoPatchApplied",
            RepairError::BadSidecar(_) => "BadSidecar",
            RepairError::Plan(_) => "PlanError",
            RepairError::Runtime(e) => e.code(),
        }
    }
}

impl From<ModelError> for RepairError {
    fn from(e: ModelError) -> RepairError {
        RepairError::Runtime(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompletedTask {
    pub task_id: String,
    pub tx: String,
    pub actor: String,
    pub attempt: u32,
    pub writes: Vec<(String, Value)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AppliedPatch {
    pub old_version: u32,
    pub new_version: u32,
    pub reuse: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RepairTicket {
    pub ticket_id: String,
    pub failed_tx_id: String,
    pub logical_name: String,
    pub region: Region,
    pub fragment: FragmentDoc,
    #[serde(rename = "in")]
    pub in_set: VarSet,
    pub required_out: VarSet,
    pub cause: Cause,
    pub completed_tasks: Vec<CompletedTask>,
    pub escalation_depth: u32,
    /// Invocation to restart after the patch; `None` restarts the process.
    pub resume_at: Option<Invocation>,
    pub parent_tx: Option<String>,
    pub applied: Option<AppliedPatch>,
}

impl RepairTicket {
    pub fn is_root(&self) -> bool {
        self.logical_name == MAIN
    }

    /// The last journaled completion of `task` inside the ticket's scope.
    pub fn completion(&self, task: &str) -> Option<&CompletedTask> {
        self.completed_tasks.iter().rev().find(|c| c.task_id == task)
    }

    /// The sidecar exported next to the fragment XML.
    pub fn sidecar(&self) -> TicketSidecar {
        TicketSidecar {
            ticket_id: self.ticket_id.clone(),
            logical_name: self.logical_name.clone(),
            cause: self.cause.clone(),
            in_set: self.in_set.clone(),
            required_out: self.required_out.clone(),
            completed_tasks: self.completed_tasks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TicketSidecar {
    pub ticket_id: String,
    pub logical_name: String,
    pub cause: Cause,
    #[serde(rename = "in")]
    pub in_set: VarSet,
    pub required_out: VarSet,
    pub completed_tasks: Vec<CompletedTask>,
}

/// Ticket export: fragment XML and the sidecar JSON.
pub fn export_ticket(ticket: &RepairTicket) -> (String, String) {
    let sidecar = serde_json::to_value(ticket.sidecar()).expect("sidecar serializes");
    (
        ticket.fragment.xml.clone(),
        serde_json::to_string_pretty(&sidecar).expect("value serializes"),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PatchSidecar {
    pub ticket_id: String,
    #[serde(default)]
    pub scenario_patch: BTreeMap<String, TaskBehavior>,
    #[serde(default)]
    pub reuse_completed: Vec<String>,
}

/// A candidate replacement fragment. The XML is kept raw: failing to parse
/// it is a verdict, not an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentPatch {
    pub fragment_xml: String,
    pub scenario_patch: BTreeMap<String, TaskBehavior>,
    pub reuse_completed: Vec<String>,
}

/// Read a patch from its two files. Returns the ticket id it targets.
pub fn parse_patch(fragment_xml: &str, sidecar_json: &str) -> Result<(String, FragmentPatch), RepairError> {
    let sidecar: PatchSidecar =
        serde_json::from_str(sidecar_json).map_err(|e| RepairError::BadSidecar(e.to_string()))?;
    for (task, b) in &sidecar.scenario_patch {
        b.check_references()
            .map_err(|(loc, var)| RepairError::BadSidecar(format!("{task}.{loc}: undeclared variable `{var}`")))?;
    }
    Ok((
        sidecar.ticket_id,
        FragmentPatch {
            fragment_xml: fragment_xml.to_string(),
            scenario_patch: sidecar.scenario_patch,
            reuse_completed: sidecar.reuse_completed,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Check {
    Structural,
    Behavior,
    Reuse,
    PreRepair,
    PostRepair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Reason {
    pub check: Check,
    pub detail: String,
    pub offending_vars: BTreeSet<String>,
}

impl Reason {
    fn new(check: Check, detail: impl Into<String>) -> Reason {
        Reason {
            check,
            detail: detail.into(),
            offending_vars: BTreeSet::new(),
        }
    }
}

/// Outcome of the pure validation. Escalation is carried out separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Escalate(Vec<Reason>),
    Rejected(Vec<Reason>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictKind {
    Accepted,
    Escalated,
    Rejected,
}

/// What `submit_patch` reports to operators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VerdictReport {
    pub verdict: VerdictKind,
    pub reasons: Vec<Reason>,
    /// Logical name the verdict applies to: the repaired name, or the
    /// escalation target.
    pub target: Option<String>,
    /// The live ticket after the command.
    pub ticket: Option<String>,
    pub new_version: Option<u32>,
    pub code: Option<String>,
}

// ---------------------------------------------------------------------------
// Tickets

/// Build the ticket for `failed_tx` (or the whole process when `root`).
pub(crate) fn build_ticket(
    engine: &mut Engine,
    failed_tx: &str,
    cause: Cause,
    depth: u32,
    root: bool,
) -> Result<RepairTicket, RuntimeError> {
    let bound = &engine.bound;
    let ctx = engine.st.tx_tree[failed_tx].clone();
    let (name, region) = if root {
        (MAIN.to_string(), Region::root(&bound.graph))
    } else {
        let plan = plan_of(engine)?;
        let sel = plan
            .selection(&ctx.logical_name)
            .ok_or_else(|| RuntimeError::ProtocolError(format!("`{}` is not selected", ctx.logical_name)))?;
        (ctx.logical_name.clone(), sel.region.clone())
    };
    let fragment = slice_fragment(&bound.model, &region)?;
    let in_set = dataflow_in(&bound.graph, &region, &bound.behaviors)?;
    let required = required_out(&bound.graph, &region, &bound.behaviors)?;

    let scope = if root { None } else { Some(engine.subtree(failed_tx)) };
    let completed_tasks = engine
        .journal
        .entries()
        .iter()
        .filter_map(|e| match &e.event {
            JournalEvent::TaskCompleted {
                tx,
                task,
                actor,
                attempt,
                writes,
                ..
            } if scope.as_ref().is_none_or(|s| s.contains(tx)) => Some(CompletedTask {
                task_id: task.clone(),
                tx: tx.clone(),
                actor: actor.clone(),
                attempt: *attempt,
                writes: writes.clone(),
            }),
            _ => None,
        })
        .collect();

    engine.st.next_ticket += 1;
    Ok(RepairTicket {
        ticket_id: format!("T{}", engine.st.next_ticket),
        failed_tx_id: failed_tx.to_string(),
        logical_name: name,
        region,
        fragment,
        in_set,
        required_out: required,
        cause,
        completed_tasks,
        escalation_depth: depth,
        resume_at: if root { None } else { ctx.invoked_from.clone() },
        parent_tx: if root { None } else { ctx.parent.clone() },
        applied: None,
    })
}

pub(crate) fn plan_of(engine: &Engine) -> Result<TransactionPlan, RuntimeError> {
    TransactionPlan::from_selections(engine.bundle.plan.clone())
        .map_err(|e| RuntimeError::ProtocolError(format!("bundle plan: {e}")))
}

/// The live ticket.
pub fn make_ticket(engine: &Engine) -> Result<&RepairTicket, RepairError> {
    match (engine.mode(), engine.ticket()) {
        (Mode::AwaitingRepair { .. }, Some(t)) => Ok(t),
        _ => Err(RepairError::NotAwaitingRepair),
    }
}

fn live_ticket<'a>(engine: &'a Engine, ticket_id: &str) -> Result<&'a RepairTicket, RepairError> {
    let t = make_ticket(engine)?;
    if t.ticket_id != ticket_id || t.applied.is_some() {
        return Err(RepairError::StaleTicket {
            given: ticket_id.to_string(),
            live: t.ticket_id.clone(),
        });
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// Validation

/// Behavior of `task` after the patch.
fn effective<'a>(engine: &'a Engine, patch: &'a FragmentPatch, task: &str) -> Option<&'a TaskBehavior> {
    patch
        .scenario_patch
        .get(task)
        .or_else(|| engine.bound.scenario.tasks.get(task))
}

/// Check `patch` against `ticket`. Pure.
pub fn validate_patch(engine: &Engine, ticket: &RepairTicket, patch: &FragmentPatch) -> Verdict {
    // Structural
    let doc = match FragmentDoc::from_xml(&patch.fragment_xml) {
        Ok(d) => d,
        Err(e) => return Verdict::Rejected(vec![Reason::new(Check::Structural, e.to_string())]),
    };
    let fragment = doc.parse().expect("parsed once already");
    let graph: FlowGraph = match build_flow_graph(&fragment.model) {
        Ok(g) => g,
        Err(e) => return Verdict::Rejected(vec![Reason::new(Check::Structural, e.to_string())]),
    };
    if let Err(e) = splice_fragment(&engine.bound.model, &ticket.region, &doc) {
        return Verdict::Rejected(vec![Reason::new(Check::Structural, e.to_string())]);
    }
    let mut guard_reads = BTreeMap::new();
    for f in &fragment.model.flows {
        if let Some(g) = &f.guard {
            match Expr::parse(g) {
                Ok(e) => {
                    guard_reads.insert(f.id.clone(), e.variables());
                }
                Err(e) => {
                    return Verdict::Rejected(vec![Reason::new(
                        Check::Structural,
                        format!("guard on `{}`: {e}", f.id),
                    )])
                }
            }
        }
    }

    // Behavior
    let tasks = fragment.task_ids();
    let actors = engine.bound.model.actors();
    let mut reasons = Vec::new();
    for t in &tasks {
        match effective(engine, patch, t) {
            None => reasons.push(Reason::new(Check::Behavior, format!("task `{t}` has no behavior"))),
            Some(b) => {
                let lane = fragment.model.actor_of(t).unwrap_or_default();
                if lane != b.actor {
                    reasons.push(Reason::new(
                        Check::Behavior,
                        format!(
                            "task `{t}` is in lane `{lane}` but its behavior names actor `{}`",
                            b.actor
                        ),
                    ));
                } else if !actors.contains(&b.actor) {
                    reasons.push(Reason::new(
                        Check::Behavior,
                        format!("actor `{}` of task `{t}` is not a lane of the process", b.actor),
                    ));
                }
            }
        }
    }
    for t in patch.scenario_patch.keys() {
        if !tasks.contains(t) {
            reasons.push(Reason::new(
                Check::Behavior,
                format!("scenario patch describes `{t}`, which is not a task of the fragment"),
            ));
        }
    }
    if !reasons.is_empty() {
        return Verdict::Rejected(reasons);
    }

    // Reuse
    let mut replayed = VarSet::new();
    for id in &patch.reuse_completed {
        if ticket.is_root() {
            reasons.push(Reason::new(
                Check::Reuse,
                format!("`{id}` cannot be replayed by a whole-process repair"),
            ));
            continue;
        }
        let Some(done) = ticket.completion(id) else {
            reasons.push(Reason::new(
                Check::Reuse,
                format!("`{id}` did not complete inside the failed transaction"),
            ));
            continue;
        };
        let before = engine.bound.scenario.tasks.get(id).map(TaskBehavior::write_vars);
        let after = effective(engine, patch, id).map(TaskBehavior::write_vars);
        if before != after {
            let mut r = Reason::new(Check::Reuse, format!("the write set of `{id}` changed"));
            r.offending_vars = before
                .unwrap_or_default()
                .symmetric_difference(&after.unwrap_or_default())
                .cloned()
                .collect();
            reasons.push(r);
            continue;
        }
        replayed.extend(done.writes.iter().map(|(k, _)| k.clone()));
    }
    if !reasons.is_empty() {
        return Verdict::Rejected(reasons);
    }

    // Pre- and post-repair
    let behaviors = Behaviors {
        reads: tasks
            .iter()
            .map(|t| (t.clone(), effective(engine, patch, t).expect("checked").reads.clone()))
            .collect(),
        writes: tasks
            .iter()
            .map(|t| (t.clone(), effective(engine, patch, t).expect("checked").write_vars()))
            .collect(),
        guard_reads,
        results: BTreeSet::new(),
    };
    let reads = external_reads(&graph, &behaviors).expect("behaviors cover the fragment");
    let extra: BTreeSet<String> = reads.difference(&ticket.in_set).cloned().collect();
    if !extra.is_empty() {
        reasons.push(Reason {
            check: Check::PreRepair,
            detail: "the replacement reads variables that do not flow into the region".into(),
            offending_vars: extra,
        });
    }
    let mut covered = guaranteed_writes(&graph, &behaviors).expect("behaviors cover the fragment");
    covered.extend(replayed);
    let missing: BTreeSet<String> = ticket.required_out.difference(&covered).cloned().collect();
    if !missing.is_empty() {
        reasons.push(Reason {
            check: Check::PostRepair,
            detail: "the replacement does not write, on every path, variables consumed downstream".into(),
            offending_vars: missing,
        });
    }
    if reasons.is_empty() {
        Verdict::Accepted
    } else {
        Verdict::Escalate(reasons)
    }
}

// ---------------------------------------------------------------------------
// Commands

/// Abort the parent transaction and move the live ticket to its region.
pub fn escalate(engine: &mut Engine) -> Result<&RepairTicket, RepairError> {
    let ticket = make_ticket(engine)?.clone();
    if ticket.is_root() {
        return Err(RepairError::NoParent(ticket.logical_name));
    }
    let new = match &ticket.parent_tx {
        Some(parent) => {
            engine.abort(
                parent,
                AbortStatus::Aborted,
                &format!("repair of {} escalated", ticket.logical_name),
            );
            build_ticket(engine, parent, ticket.cause.clone(), ticket.escalation_depth + 1, false)?
        }
        None => build_ticket(
            engine,
            &ticket.failed_tx_id,
            ticket.cause.clone(),
            ticket.escalation_depth + 1,
            true,
        )?,
    };
    engine.st.mode = Mode::AwaitingRepair {
        ticket: new.ticket_id.clone(),
    };
    engine.st.ticket = Some(new);
    Ok(engine.st.ticket.as_ref().expect("just set"))
}

/// Recompute the plan after replacing `region` (selected as `name`).
fn repaired_plan(
    plan: &TransactionPlan,
    name: &str,
    region: &Region,
    graph: &FlowGraph,
    entry: &str,
    exit: &str,
) -> Result<TransactionPlan, RepairError> {
    if name == MAIN {
        return Ok(TransactionPlan::empty());
    }
    let dropped: BTreeSet<&str> = plan.descendants(name).iter().map(|s| s.name.as_str()).collect();
    let mut selections = Vec::new();
    for s in &plan.selections {
        if dropped.contains(s.name.as_str()) {
            continue;
        }
        let e = if s.region.entry == region.entry {
            entry
        } else {
            &s.region.entry
        };
        let x = if s.region.exit == region.exit {
            exit
        } else {
            &s.region.exit
        };
        let r = Region::between(graph, e, x).ok_or_else(|| {
            RepairError::Runtime(RuntimeError::ProtocolError(format!(
                "selection `{}` is no longer a region after the splice",
                s.name
            )))
        })?;
        selections.push(crate::region::Selection {
            name: s.name.clone(),
            region: r,
        });
    }
    Ok(TransactionPlan::from_selections(selections)?)
}

fn merged_scenario(old: &ScenarioSpec, patch: &FragmentPatch, model: &crate::bpmn::ProcessModel) -> ScenarioSpec {
    let mut s = old.clone();
    for (k, b) in &patch.scenario_patch {
        s.tasks.insert(k.clone(), b.clone());
    }
    let tasks: BTreeSet<String> = model.tasks().map(|t| t.id.clone()).collect();
    s.tasks.retain(|k, _| tasks.contains(k));
    s.faults.retain(|f| tasks.contains(&f.task));
    s
}

/// Splice, recompile and activate. On error nothing changes.
pub fn apply_patch(engine: &mut Engine, ticket_id: &str, patch: &FragmentPatch) -> Result<u32, RepairError> {
    let ticket = live_ticket(engine, ticket_id)?.clone();
    let doc = FragmentDoc::from_xml(&patch.fragment_xml)?;
    let model = splice_fragment(&engine.bound.model, &ticket.region, &doc)?;
    let scenario = merged_scenario(&engine.bound.scenario, patch, &model);
    let bound = bind(&model, &scenario).map_err(RuntimeError::from)?;
    let plan = repaired_plan(
        &plan_of(engine)?,
        &ticket.logical_name,
        &ticket.region,
        &bound.graph,
        &doc.entry_id,
        &doc.exit_id,
    )?;
    let name = ticket.logical_name.clone();
    let router = &engine.bundle.registry.router;
    let old_version = router.active(&name).unwrap_or(1);
    let new_version = router.latest(&name).unwrap_or(0) + 1;
    let unit = compile_unit(&bound, &plan, (name != MAIN).then_some(name.as_str()), new_version)
        .map_err(RuntimeError::from)?;
    let mut registry = engine.bundle.registry.clone();
    registry.register(unit).map_err(RuntimeError::from)?;
    registry
        .router
        .activate(&name, new_version)
        .map_err(RuntimeError::from)?;

    let mut bundle = engine.bundle.clone();
    bundle.model = serialize(&model);
    bundle.model_hash = model_hash(&bundle.model);
    bundle.scenario = scenario;
    bundle.scenario_hash = scenario_hash(&bundle.scenario);
    bundle.plan = plan.selections;
    bundle.registry = registry;
    let bound = crate::runtime::bind_bundle(&bundle)?;

    engine.bundle = bundle;
    engine.bound = bound;
    engine.journal.append(JournalEvent::PatchApplied {
        ticket: ticket.ticket_id.clone(),
        logical_name: name,
        old_version,
        new_version,
        old_fragment_hash: sha256_hex(&ticket.fragment.xml),
        new_fragment_hash: sha256_hex(&patch.fragment_xml),
    });
    if let Some(t) = engine.st.ticket.as_mut() {
        t.applied = Some(AppliedPatch {
            old_version,
            new_version,
            reuse: patch.reuse_completed.clone(),
        });
    }
    Ok(new_version)
}

/// Validate and act on the verdict: apply when accepted, escalate when a
/// dataflow condition fails.
pub fn submit_patch(engine: &mut Engine, ticket_id: &str, patch: &FragmentPatch) -> Result<VerdictReport, RepairError> {
    let ticket = live_ticket(engine, ticket_id)?.clone();
    match validate_patch(engine, &ticket, patch) {
        Verdict::Accepted => {
            let v = apply_patch(engine, ticket_id, patch)?;
            Ok(VerdictReport {
                verdict: VerdictKind::Accepted,
                reasons: Vec::new(),
                target: Some(ticket.logical_name.clone()),
                ticket: Some(ticket.ticket_id.clone()),
                new_version: Some(v),
                code: None,
            })
        }
        Verdict::Rejected(reasons) => Ok(VerdictReport {
            verdict: VerdictKind::Rejected,
            reasons,
            target: Some(ticket.logical_name.clone()),
            ticket: Some(ticket.ticket_id.clone()),
            new_version: None,
            code: None,
        }),
        Verdict::Escalate(reasons) if ticket.is_root() => Ok(VerdictReport {
            verdict: VerdictKind::Rejected,
            reasons,
            target: None,
            ticket: Some(ticket.ticket_id.clone()),
            new_version: None,
            code: Some("NoParent".into()),
        }),
        Verdict::Escalate(reasons) => {
            let new = escalate(engine)?;
            Ok(VerdictReport {
                verdict: VerdictKind::Escalated,
                reasons,
                target: Some(new.logical_name.clone()),
                ticket: Some(new.ticket_id.clone()),
                new_version: None,
                code: None,
            })
        }
    }
}

/// Restart the repaired invocation and run to a terminal mode.
pub fn resume(engine: &mut Engine) -> Result<Mode, RepairError> {
    if !matches!(engine.mode(), Mode::AwaitingRepair { .. }) {
        return Err(RuntimeError::InvalidMode {
            command: "resume".into(),
            mode: engine.mode().to_string(),
        }
        .into());
    }
    let ticket = make_ticket(engine)?.clone();
    let applied = ticket.applied.clone().ok_or(RepairError::NoPatchApplied)?;
    engine.st.ticket = None;
    engine.st.mode = Mode::Running;
    match &ticket.resume_at {
        Some(inv) => {
            let reused: BTreeSet<String> = applied.reuse.iter().cloned().collect();
            let tx = engine.begin_tx(
                &ticket.logical_name,
                ticket.parent_tx.clone(),
                Some(inv.clone()),
                reused,
            )?;
            for id in &applied.reuse {
                let done = ticket.completion(id).expect("validated reuse");
                engine.complete_task(
                    &tx,
                    id,
                    &done.actor,
                    done.attempt,
                    BTreeMap::new(),
                    done.writes.clone(),
                    true,
                    false,
                );
            }
        }
        None => {
            let version = engine.bundle.registry.router.active(MAIN).unwrap_or(1);
            engine.st.queue.clear();
            engine.st.task_locks.clear();
            engine.st.main = MainFrame {
                version,
                arrivals: BTreeMap::new(),
                finished: false,
            };
            engine.seed_main()?;
        }
    }
    if engine.queue().is_empty() {
        return Ok(engine.mode().clone());
    }
    Ok(engine.run()?)
}
