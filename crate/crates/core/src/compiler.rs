//! Compiles a bound model and a transaction plan into contract units: one
//! finite-state-machine network per selected region plus a `main` unit,
//! registered behind a versioned router.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpmn::{serialize, ElementKind};
use crate::canon::sha256_hex;
use crate::dataflow::{dataflow_in, DataflowError};
use crate::region::{Region, Selection, TransactionPlan, MAIN};
use crate::scenario::{serialize_scenario, BoundModel, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("selection `{0}` is not a region of the model graph")]
    PlanGraphMismatch(String),
    #[error("`{name}` version {version} conflicts with the registry")]
    VersionConflict { name: String, version: u32 },
    #[error("no unit is registered as `{0}`")]
    UnknownName(String),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FsmKind {
    Entry,
    Exit,
    Task,
    XorSplit,
    XorMerge,
    AndSplit,
    AndJoin,
    Invoke,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FsmState {
    Idle,
    Active,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: FsmState,
    pub trigger: String,
    pub guard: Option<String>,
    pub actions: Vec<String>,
    pub to: FsmState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeFsm {
    pub node_id: String,
    pub kind: FsmKind,
    /// Incoming wires. Joins count arrivals up to this number.
    pub indegree: usize,
    /// Fires only after every incoming wire delivered a token.
    pub joins_all: bool,
    /// Emits along exactly one outgoing wire chosen by guards.
    pub exclusive: bool,
    /// Child logical name for invocation nodes.
    pub invokes: Option<String>,
    pub transitions: Vec<Transition>,
}

impl NodeFsm {
    /// Arrivals needed before the node fires.
    pub fn arrivals_needed(&self) -> usize {
        if self.joins_all {
            self.indegree.max(1)
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireEdge {
    pub source: String,
    pub target: String,
    pub flow: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsmNetwork {
    #[serde(rename = "nodes")]
    pub machines: BTreeMap<String, NodeFsm>,
    #[serde(rename = "edges")]
    pub wiring: Vec<WireEdge>,
    pub entry: String,
    pub exit: String,
}

impl FsmNetwork {
    pub fn out_wires<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a WireEdge> + 'a {
        self.wiring.iter().filter(move |w| w.source == node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Scope {
    pub readable: BTreeSet<String>,
    pub writable: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ContractUnit {
    pub logical_name: String,
    pub version: u32,
    #[serde(flatten)]
    pub network: FsmNetwork,
    pub scope: Scope,
    pub participants: BTreeSet<String>,
    pub child_invocations: BTreeMap<String, String>,
    /// `None` for the main unit, which spans the whole process.
    pub region: Option<Region>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterEntry {
    pub active: u32,
    pub history: Vec<u32>,
}

/// Logical name to active version.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Router {
    pub entries: BTreeMap<String, RouterEntry>,
}

impl Router {
    pub fn active(&self, name: &str) -> Option<u32> {
        self.entries.get(name).map(|e| e.active)
    }

    pub fn latest(&self, name: &str) -> Option<u32> {
        self.entries.get(name).and_then(|e| e.history.last().copied())
    }

    /// Record `version` for `name`. The active version is only set for a
    /// brand new name.
    pub fn register(&mut self, name: &str, version: u32) -> Result<u32, CompileError> {
        let expected = self.latest(name).map_or(1, |v| v + 1);
        if version != expected {
            return Err(CompileError::VersionConflict {
                name: name.to_string(),
                version,
            });
        }
        self.entries
            .entry(name.to_string())
            .or_insert(RouterEntry {
                active: version,
                history: Vec::new(),
            })
            .history
            .push(version);
        Ok(version)
    }

    pub fn activate(&mut self, name: &str, version: u32) -> Result<(), CompileError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| CompileError::UnknownName(name.to_string()))?;
        if !entry.history.contains(&version) {
            return Err(CompileError::VersionConflict {
                name: name.to_string(),
                version,
            });
        }
        entry.active = version;
        Ok(())
    }
}

/// All registered unit versions plus the router over them.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Registry {
    pub units: Vec<ContractUnit>,
    pub router: Router,
}

impl Registry {
    pub fn register(&mut self, unit: ContractUnit) -> Result<u32, CompileError> {
        let v = self.router.register(&unit.logical_name, unit.version)?;
        self.units.push(unit);
        Ok(v)
    }

    pub fn unit(&self, name: &str, version: u32) -> Option<&ContractUnit> {
        self.units
            .iter()
            .find(|u| u.logical_name == name && u.version == version)
    }

    pub fn route(&self, name: &str) -> Result<&ContractUnit, CompileError> {
        let v = self
            .router
            .active(name)
            .ok_or_else(|| CompileError::UnknownName(name.to_string()))?;
        self.unit(name, v)
            .ok_or_else(|| CompileError::UnknownName(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeploymentBundle {
    pub model_hash: String,
    pub scenario_hash: String,
    /// The compiled model as BPMN XML.
    pub model: String,
    pub scenario: ScenarioSpec,
    pub plan: Vec<Selection>,
    #[serde(flatten)]
    pub registry: Registry,
}

impl DeploymentBundle {
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("bundle serializes");
        serde_json::to_string_pretty(&value).expect("value serializes")
    }
}

pub fn model_hash(model_xml: &str) -> String {
    sha256_hex(model_xml)
}

pub fn scenario_hash(spec: &ScenarioSpec) -> String {
    sha256_hex(serialize_scenario(spec))
}

/// Check every selection against the graph of `bound`.
pub fn check_plan(bound: &BoundModel, plan: &TransactionPlan) -> Result<(), CompileError> {
    for s in &plan.selections {
        match Region::between(&bound.graph, &s.region.entry, &s.region.exit) {
            Some(r) if r == s.region => {}
            _ => return Err(CompileError::PlanGraphMismatch(s.name.clone())),
        }
    }
    Ok(())
}

pub fn compile(bound: &BoundModel, plan: &TransactionPlan) -> Result<DeploymentBundle, CompileError> {
    check_plan(bound, plan)?;
    let mut registry = Registry::default();
    registry.register(compile_unit(bound, plan, None, 1)?)?;
    for s in &plan.selections {
        registry.register(compile_unit(bound, plan, Some(&s.name), 1)?)?;
    }
    let model_xml = serialize(&bound.model);
    Ok(DeploymentBundle {
        model_hash: model_hash(&model_xml),
        scenario_hash: scenario_hash(&bound.scenario),
        model: model_xml,
        scenario: bound.scenario.clone(),
        plan: plan.selections.clone(),
        registry,
    })
}

pub fn invoke_node_id(child: &str) -> String {
    format!("invoke:{child}")
}

/// Compile the unit for selection `name`, or the main unit for `None`.
pub fn compile_unit(
    bound: &BoundModel,
    plan: &TransactionPlan,
    name: Option<&str>,
    version: u32,
) -> Result<ContractUnit, CompileError> {
    let graph = &bound.graph;
    let region = match name {
        Some(n) => Some(
            plan.selection(n)
                .ok_or_else(|| CompileError::UnknownName(n.to_string()))?
                .region
                .clone(),
        ),
        None => None,
    };
    let in_unit = |id: &str| region.as_ref().is_none_or(|r| r.contains(id));
    let children = plan.children(name);

    // Map each node of the unit's territory to the FSM that represents it.
    let represent = |id: &str| -> String {
        children
            .iter()
            .find(|c| c.region.contains(id))
            .map(|c| invoke_node_id(&c.name))
            .unwrap_or_else(|| id.to_string())
    };

    let mut wiring = Vec::new();
    for e in graph.edges() {
        let (s, d) = (graph.node_id(e.src), graph.node_id(e.dst));
        if !(in_unit(s) && in_unit(d)) {
            continue;
        }
        let (rs, rd) = (represent(s), represent(d));
        if rs == rd {
            continue;
        }
        wiring.push(WireEdge {
            source: rs,
            target: rd,
            flow: e.flow.clone(),
        });
    }

    let mut machines = BTreeMap::new();
    for v in 0..graph.len() {
        let id = graph.node_id(v);
        if !in_unit(id) || children.iter().any(|c| c.region.contains(id)) {
            continue;
        }
        let indegree = wiring.iter().filter(|w| w.target == id).count();
        let outdegree = wiring.iter().filter(|w| w.source == id).count();
        let kind = match graph.kind(v) {
            ElementKind::StartEvent => FsmKind::Entry,
            ElementKind::EndEvent => FsmKind::Exit,
            ElementKind::Task => FsmKind::Task,
            k => gateway_kind(k, graph.in_edges(v).len(), graph.out_edges(v).len()),
        };
        let fsm = NodeFsm {
            node_id: id.to_string(),
            kind,
            indegree,
            joins_all: kind == FsmKind::AndJoin,
            exclusive: kind == FsmKind::XorSplit && outdegree > 1,
            invokes: None,
            transitions: transitions(kind),
        };
        machines.insert(id.to_string(), fsm);
    }
    let mut child_invocations = BTreeMap::new();
    for c in &children {
        let id = invoke_node_id(&c.name);
        let entry = graph.node_index(&c.region.entry).expect("child entry in graph");
        let exit = graph.node_index(&c.region.exit).expect("child exit in graph");
        let entry_kind = gateway_kind(
            graph.kind(entry),
            graph.in_edges(entry).len(),
            graph.out_edges(entry).len(),
        );
        let exit_kind = gateway_kind(
            graph.kind(exit),
            graph.in_edges(exit).len(),
            graph.out_edges(exit).len(),
        );
        let indegree = wiring.iter().filter(|w| w.target == id).count();
        let outdegree = wiring.iter().filter(|w| w.source == id).count();
        machines.insert(
            id.clone(),
            NodeFsm {
                node_id: id.clone(),
                kind: FsmKind::Invoke,
                indegree,
                joins_all: graph.kind(entry) == ElementKind::ParallelGateway && entry_kind == FsmKind::AndJoin,
                exclusive: graph.kind(exit) == ElementKind::ExclusiveGateway
                    && exit_kind == FsmKind::XorSplit
                    && outdegree > 1,
                invokes: Some(c.name.clone()),
                transitions: transitions(FsmKind::Invoke),
            },
        );
        child_invocations.insert(id, c.name.clone());
    }

    let (entry, exit) = match &region {
        Some(r) => (represent(&r.entry), represent(&r.exit)),
        None => (
            graph.node_id(graph.source()).to_string(),
            graph.node_id(graph.sink()).to_string(),
        ),
    };

    let member_tasks: Vec<&str> = (0..graph.len())
        .filter(|&v| graph.kind(v) == ElementKind::Task && in_unit(graph.node_id(v)))
        .map(|v| graph.node_id(v))
        .collect();
    let writable: BTreeSet<String> = member_tasks
        .iter()
        .flat_map(|t| bound.behaviors.task_writes(t).iter().cloned())
        .collect();
    let readable = match &region {
        Some(r) => dataflow_in(graph, r, &bound.behaviors)?
            .into_iter()
            .chain(writable.iter().cloned())
            .collect(),
        None => bound.all_variables(),
    };
    let participants = member_tasks
        .iter()
        .filter_map(|t| bound.model.actor_of(t))
        .map(str::to_string)
        .collect();

    Ok(ContractUnit {
        logical_name: name.unwrap_or(MAIN).to_string(),
        version,
        network: FsmNetwork {
            machines,
            wiring,
            entry,
            exit,
        },
        scope: Scope { readable, writable },
        participants,
        child_invocations,
        region,
    })
}

fn gateway_kind(kind: ElementKind, indeg: usize, outdeg: usize) -> FsmKind {
    let split = outdeg > 1 || (outdeg == 1 && indeg <= 1);
    match (kind, split) {
        (ElementKind::ExclusiveGateway, true) => FsmKind::XorSplit,
        (ElementKind::ExclusiveGateway, false) => FsmKind::XorMerge,
        (ElementKind::ParallelGateway, true) => FsmKind::AndSplit,
        (ElementKind::ParallelGateway, false) => FsmKind::AndJoin,
        (ElementKind::Task, _) => FsmKind::Task,
        (ElementKind::StartEvent, _) => FsmKind::Entry,
        (ElementKind::EndEvent, _) => FsmKind::Exit,
    }
}

fn t(from: FsmState, trigger: &str, guard: Option<&str>, actions: &[&str], to: FsmState) -> Transition {
    Transition {
        from,
        trigger: trigger.to_string(),
        guard: guard.map(str::to_string),
        actions: actions.iter().map(|a| a.to_string()).collect(),
        to,
    }
}

fn transitions(kind: FsmKind) -> Vec<Transition> {
    use FsmState::*;
    match kind {
        FsmKind::Entry => vec![t(Idle, "Start", None, &["EmitAll"], Done)],
        FsmKind::Exit => vec![t(Idle, "TokenArrived", None, &["CompleteUnit"], Done)],
        FsmKind::Task => vec![
            t(Idle, "TokenArrived", None, &["AcquireLock", "TaskStart"], Active),
            t(
                Active,
                "TaskCompleted",
                None,
                &["ReleaseLock", "BufferWrites", "EmitAll"],
                Done,
            ),
            t(Active, "TaskFaulted", None, &["ReleaseLock", "HandleException"], Done),
        ],
        FsmKind::XorSplit => vec![t(
            Idle,
            "TokenArrived",
            Some("first true guard, else default"),
            &["EmitOne"],
            Done,
        )],
        FsmKind::XorMerge | FsmKind::AndSplit => {
            vec![t(Idle, "TokenArrived", None, &["EmitAll"], Done)]
        }
        FsmKind::AndJoin => vec![
            t(
                Idle,
                "TokenArrived",
                Some("arrivals < indegree"),
                &["CountArrival"],
                Idle,
            ),
            t(
                Idle,
                "TokenArrived",
                Some("arrivals == indegree"),
                &["ResetCounter", "EmitAll"],
                Done,
            ),
        ],
        FsmKind::Invoke => vec![
            t(
                Idle,
                "TokenArrived",
                Some("arrivals == needed"),
                &["BeginChildTx"],
                Active,
            ),
            t(Active, "ChildCommitted", None, &["Emit"], Done),
            t(Active, "ChildFailed", None, &["AwaitRepair"], Active),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpmn::parse_bpmn;
    use crate::region::enumerate_sese;
    use crate::scenario::{bind, parse_scenario};

    fn harvester() -> BoundModel {
        let m = parse_bpmn(include_str!("../fixtures/harvester.bpmn")).unwrap();
        let s = parse_scenario(include_str!("../fixtures/harvester.json")).unwrap();
        bind(&m, &s).unwrap()
    }

    fn select(bound: &BoundModel, picks: &[(&str, &[&str])]) -> TransactionPlan {
        let regions = enumerate_sese(&bound.graph);
        let sels = picks
            .iter()
            .map(|(name, members)| Selection {
                name: name.to_string(),
                region: regions
                    .iter()
                    .find(|r| r.members.iter().map(String::as_str).eq(members.iter().copied()))
                    .expect("fixture region")
                    .clone(),
            })
            .collect();
        TransactionPlan::from_selections(sels).unwrap()
    }

    #[test]
    fn empty_plan_has_only_main() {
        let b = harvester();
        let bundle = compile(&b, &TransactionPlan::empty()).unwrap();
        assert_eq!(bundle.registry.units.len(), 1);
        let main = bundle.registry.route(MAIN).unwrap();
        let tasks = main
            .network
            .machines
            .values()
            .filter(|m| m.kind == FsmKind::Task)
            .count();
        assert_eq!(tasks, 6);
        assert_eq!(main.network.entry, "Start");
    }

    #[test]
    fn root_selection_collapses_main_to_one_invocation() {
        let b = harvester();
        let regions = enumerate_sese(&b.graph);
        let plan = TransactionPlan::from_selections(vec![Selection {
            name: "all".into(),
            region: regions[0].clone(),
        }])
        .unwrap();
        let bundle = compile(&b, &plan).unwrap();
        let main = bundle.registry.route(MAIN).unwrap();
        let kinds: Vec<FsmKind> = main.network.machines.values().map(|m| m.kind).collect();
        assert_eq!(kinds.iter().filter(|k| **k == FsmKind::Invoke).count(), 1);
        assert!(kinds
            .iter()
            .all(|k| matches!(k, FsmKind::Invoke | FsmKind::Entry | FsmKind::Exit)));
    }

    #[test]
    fn nested_plan_produces_invocations_and_scopes() {
        let b = harvester();
        let plan = select(
            &b,
            &[
                ("priceAndEscrow_tx", &["PriceAndEscrow"]),
                (
                    "transportProduct_tx",
                    &[
                        "DoTransport",
                        "GetRailInsurance",
                        "GetRailTransporter",
                        "GetTrRequirements",
                    ],
                ),
                (
                    "getTrRequirements_tx",
                    &["GetRailInsurance", "GetRailTransporter", "GetTrRequirements"],
                ),
                ("doTransport_tx", &["DoTransport"]),
                ("receiveAndFinalize_tx", &["ReceiveAndFinalize"]),
            ],
        );
        let bundle = compile(&b, &plan).unwrap();
        assert_eq!(bundle.registry.units.len(), 6);
        let tp = bundle.registry.route("transportProduct_tx").unwrap();
        assert_eq!(tp.child_invocations.len(), 2);
        assert_eq!(tp.network.entry, "invoke:getTrRequirements_tx");
        assert_eq!(tp.network.exit, "invoke:doTransport_tx");
        assert_eq!(tp.network.wiring.len(), 1);

        let gt = bundle.registry.route("getTrRequirements_tx").unwrap();
        let order: Vec<&str> = gt.network.wiring.iter().map(|w| w.source.as_str()).collect();
        assert_eq!(order, ["GetTrRequirements", "GetRailInsurance"]);

        let dt = bundle.registry.route("doTransport_tx").unwrap();
        assert_eq!(dt.scope.writable, BTreeSet::from(["deliveryStatus".to_string()]));
        assert!(dt.scope.readable.contains("insuranceDoc"));
        assert!(!dt.scope.readable.contains("price"));
        assert_eq!(dt.participants, BTreeSet::from(["Transporter".to_string()]));

        // Every task appears in exactly one unit.
        let mut tasks: Vec<&str> = bundle
            .registry
            .units
            .iter()
            .flat_map(|u| u.network.machines.values())
            .filter(|m| m.kind == FsmKind::Task)
            .map(|m| m.node_id.as_str())
            .collect();
        tasks.sort();
        let mut expected: Vec<&str> = b.model.tasks().map(|t| t.id.as_str()).collect();
        expected.sort();
        assert_eq!(tasks, expected);

        assert_eq!(compile(&b, &plan).unwrap(), bundle);
    }

    #[test]
    fn gateway_kinds_map() {
        let m = parse_bpmn(include_str!("../fixtures/gateways.bpmn")).unwrap();
        let s = parse_scenario(include_str!("../fixtures/gateways.json")).unwrap();
        let b = bind(&m, &s).unwrap();
        let bundle = compile(&b, &TransactionPlan::empty()).unwrap();
        let main = bundle.registry.route(MAIN).unwrap();
        let kind = |id: &str| main.network.machines[id].kind;
        assert_eq!(kind("RouteCheck"), FsmKind::XorSplit);
        assert_eq!(kind("RouteMerge"), FsmKind::XorMerge);
        assert_eq!(kind("Fork"), FsmKind::AndSplit);
        assert_eq!(kind("Join"), FsmKind::AndJoin);
        assert_eq!(main.network.machines["Join"].arrivals_needed(), 2);
        assert!(main.network.machines["RouteCheck"].exclusive);
    }

    #[test]
    fn router_registration() {
        let mut r = Router::default();
        assert_eq!(r.register("doTransport_tx", 1), Ok(1));
        assert_eq!(r.register("doTransport_tx", 2), Ok(2));
        assert_eq!(r.entries["doTransport_tx"].history, [1, 2]);
        assert_eq!(r.active("doTransport_tx"), Some(1));
        assert!(matches!(
            r.register("doTransport_tx", 2),
            Err(CompileError::VersionConflict { .. })
        ));
        r.activate("doTransport_tx", 2).unwrap();
        assert_eq!(r.active("doTransport_tx"), Some(2));
        assert!(r.activate("doTransport_tx", 3).is_err());

        let reg = Registry::default();
        assert_eq!(reg.route("nope"), Err(CompileError::UnknownName("nope".into())));
    }

    #[test]
    fn mismatched_plan_is_refused() {
        let b = harvester();
        let bogus = TransactionPlan::from_selections(vec![Selection {
            name: "x".into(),
            region: Region {
                entry: "PriceAndEscrow".into(),
                exit: "DoTransport".into(),
                members: ["PriceAndEscrow", "DoTransport"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            },
        }])
        .unwrap();
        assert_eq!(compile(&b, &bogus), Err(CompileError::PlanGraphMismatch("x".into())));
    }
}
