//! Scenario files: task behaviors, initial values, result variables and
//! fault injections, plus binding a scenario to a process model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpmn::{ElementKind, ProcessModel};
use crate::dataflow::Behaviors;
use crate::expr::{Expr, Value};
use crate::graph::{build_flow_graph, FlowGraph, GraphError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("scenario parse error at {location}: {message}")]
    ParseError { location: String, message: String },
    #[error("unknown field: {0}")]
    UnknownField(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandlerOutcome {
    Resolve,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Handler {
    pub actions: Vec<(String, Expr)>,
    pub outcome: HandlerOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskBehavior {
    pub actor: String,
    pub reads: BTreeSet<String>,
    pub writes: Vec<(String, Expr)>,
    #[serde(default)]
    pub handler: Option<Handler>,
}

impl TaskBehavior {
    pub fn write_vars(&self) -> BTreeSet<String> {
        self.writes.iter().map(|(v, _)| v.clone()).collect()
    }

    /// Every expression variable must be a declared read or an earlier write
    /// of the same behavior. Returns the offending `(location, variable)`.
    pub fn check_references(&self) -> Result<(), (String, String)> {
        let mut known = self.reads.clone();
        for (i, (var, expr)) in self.writes.iter().enumerate() {
            if let Some(v) = expr.variables().into_iter().find(|v| !known.contains(v)) {
                return Err((format!("writes[{i}]"), v));
            }
            known.insert(var.clone());
        }
        if let Some(h) = &self.handler {
            let mut known = self.reads.clone();
            for (i, (var, expr)) in h.actions.iter().enumerate() {
                if let Some(v) = expr.variables().into_iter().find(|v| !known.contains(v)) {
                    return Err((format!("handler.actions[{i}]"), v));
                }
                known.insert(var.clone());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FaultKind {
    Exception,
    PrepareNo { participant: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFault", into = "RawFault")]
pub struct FaultSpec {
    pub task: String,
    /// 1-based execution count of `task` in the session.
    pub attempt: u32,
    pub kind: FaultKind,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFault {
    task: String,
    attempt: u32,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    participant: Option<String>,
    message: String,
}

impl TryFrom<RawFault> for FaultSpec {
    type Error = String;
    fn try_from(raw: RawFault) -> Result<Self, Self::Error> {
        if raw.attempt == 0 {
            return Err("attempt must be at least 1".into());
        }
        let kind = match (raw.kind.as_str(), raw.participant) {
            ("exception", None) => FaultKind::Exception,
            ("exception", Some(_)) => return Err("an exception fault takes no participant".into()),
            ("prepare-no", Some(p)) => FaultKind::PrepareNo { participant: p },
            ("prepare-no", None) => return Err("a prepare-no fault needs a participant".into()),
            (other, _) => return Err(format!("unknown fault kind `{other}`")),
        };
        Ok(FaultSpec {
            task: raw.task,
            attempt: raw.attempt,
            kind,
            message: raw.message,
        })
    }
}

impl From<FaultSpec> for RawFault {
    fn from(f: FaultSpec) -> RawFault {
        let (kind, participant) = match f.kind {
            FaultKind::Exception => ("exception".to_string(), None),
            FaultKind::PrepareNo { participant } => ("prepare-no".to_string(), Some(participant)),
        };
        RawFault {
            task: f.task,
            attempt: f.attempt,
            kind,
            participant,
            message: f.message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub tasks: BTreeMap<String, TaskBehavior>,
    pub initial: BTreeMap<String, Value>,
    pub results: BTreeSet<String>,
    pub faults: Vec<FaultSpec>,
}

pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        if let Some(rest) = msg.strip_prefix("unknown field `") {
            let field = rest.split('`').next().unwrap_or_default().to_string();
            ScenarioError::UnknownField(field)
        } else {
            ScenarioError::ParseError {
                location: format!("line {} column {}", e.line(), e.column()),
                message: msg,
            }
        }
    })?;
    for (task, b) in &spec.tasks {
        if let Err((at, var)) = b.check_references() {
            return Err(ScenarioError::ParseError {
                location: format!("tasks.{task}.{at}"),
                message: format!("`{var}` is neither a declared read nor an earlier write"),
            });
        }
    }
    Ok(spec)
}

/// Canonical JSON with sorted keys.
pub fn serialize_scenario(spec: &ScenarioSpec) -> String {
    crate::canon::to_canonical_string(spec)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error("task `{0}` has no behavior")]
    MissingBehavior(String),
    #[error("behavior or fault refers to unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{task}` sits in lane `{lane}` but its behavior names actor `{actor}`")]
    ActorMismatch { task: String, lane: String, actor: String },
    #[error("unknown actor `{0}`")]
    UnknownActor(String),
    #[error("`{variable}` read at `{node}` is never written upstream and has no initial value")]
    UnresolvableRead { variable: String, node: String },
    #[error("process input `{0}` has no initial value")]
    MissingInitial(String),
    #[error("guard on flow `{flow}`: {message}")]
    GuardSyntax { flow: String, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A model paired with its behaviors and the derived graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub model: ProcessModel,
    pub scenario: ScenarioSpec,
    pub graph: FlowGraph,
    pub behaviors: Behaviors,
    pub guards: BTreeMap<String, Expr>,
}

impl BoundModel {
    pub fn behavior(&self, task: &str) -> Option<&TaskBehavior> {
        self.scenario.tasks.get(task)
    }

    /// Variables with a value before anything runs.
    pub fn initial_names(&self) -> BTreeSet<String> {
        self.scenario
            .initial
            .keys()
            .cloned()
            .chain(self.model.initial_vars.iter().cloned())
            .collect()
    }

    /// Every variable mentioned anywhere.
    pub fn all_variables(&self) -> BTreeSet<String> {
        let mut out = self.initial_names();
        for b in self.behaviors.reads.values().chain(self.behaviors.writes.values()) {
            out.extend(b.iter().cloned());
        }
        for g in self.behaviors.guard_reads.values() {
            out.extend(g.iter().cloned());
        }
        out.extend(self.behaviors.results.iter().cloned());
        out
    }
}

pub fn bind(model: &ProcessModel, spec: &ScenarioSpec) -> Result<BoundModel, BindError> {
    let graph = build_flow_graph(model)?;
    for task in spec.tasks.keys() {
        if model.element(task).map(|e| e.kind) != Some(ElementKind::Task) {
            return Err(BindError::UnknownTask(task.clone()));
        }
    }
    for task in model.tasks() {
        let b = spec
            .tasks
            .get(&task.id)
            .ok_or_else(|| BindError::MissingBehavior(task.id.clone()))?;
        let lane = model.actor_of(&task.id).unwrap_or_default();
        if b.actor != lane {
            return Err(BindError::ActorMismatch {
                task: task.id.clone(),
                lane: lane.to_string(),
                actor: b.actor.clone(),
            });
        }
    }
    let actors = model.actors();
    for f in &spec.faults {
        if !spec.tasks.contains_key(&f.task) {
            return Err(BindError::UnknownTask(f.task.clone()));
        }
        if let FaultKind::PrepareNo { participant } = &f.kind {
            if !actors.contains(participant) {
                return Err(BindError::UnknownActor(participant.clone()));
            }
        }
    }
    if let Some(v) = model.initial_vars.iter().find(|v| !spec.initial.contains_key(*v)) {
        return Err(BindError::MissingInitial(v.clone()));
    }

    let mut guards = BTreeMap::new();
    let mut guard_reads = BTreeMap::new();
    for f in &model.flows {
        if let Some(text) = &f.guard {
            let expr = Expr::parse(text).map_err(|e| BindError::GuardSyntax {
                flow: f.id.clone(),
                message: e.to_string(),
            })?;
            guard_reads.insert(f.id.clone(), expr.variables());
            guards.insert(f.id.clone(), expr);
        }
    }
    let behaviors = Behaviors {
        reads: model
            .tasks()
            .map(|t| (t.id.clone(), spec.tasks[&t.id].reads.clone()))
            .collect(),
        writes: model
            .tasks()
            .map(|t| (t.id.clone(), spec.tasks[&t.id].write_vars()))
            .collect(),
        guard_reads,
        results: model.result_vars.iter().chain(spec.results.iter()).cloned().collect(),
    };

    let initial: BTreeSet<&String> = spec.initial.keys().chain(model.initial_vars.iter()).collect();
    let resolvable = |var: &String, node: usize| {
        initial.contains(var)
            || graph
                .ancestors(node)
                .ones()
                .any(|a| a != node && behaviors.writes.get(graph.node_id(a)).is_some_and(|w| w.contains(var)))
    };
    for t in model.tasks() {
        let v = graph.node_index(&t.id).expect("task is a graph node");
        if let Some(var) = behaviors.reads[&t.id].iter().find(|var| !resolvable(var, v)) {
            return Err(BindError::UnresolvableRead {
                variable: var.clone(),
                node: t.id.clone(),
            });
        }
    }
    for (flow, vars) in &behaviors.guard_reads {
        let src = graph.edges()[graph.edge_of_flow(flow).expect("guarded flow is an edge")].src;
        if let Some(var) = vars.iter().find(|var| !resolvable(var, src)) {
            return Err(BindError::UnresolvableRead {
                variable: var.clone(),
                node: graph.node_id(src).to_string(),
            });
        }
    }

    Ok(BoundModel {
        model: model.clone(),
        scenario: spec.clone(),
        graph,
        behaviors,
        guards,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpmn::parse_bpmn;

    const HARVESTER_BPMN: &str = include_str!("../fixtures/harvester.bpmn");
    const HARVESTER_JSON: &str = include_str!("../fixtures/harvester.json");

    #[test]
    fn harvester_scenario_parses() {
        let s = parse_scenario(HARVESTER_JSON).unwrap();
        assert_eq!(s.tasks.len(), 6);
        assert_eq!(
            s.faults,
            vec![FaultSpec {
                task: "DoTransport".into(),
                attempt: 1,
                kind: FaultKind::Exception,
                message: "rail line washed out".into(),
            }]
        );
        assert_eq!(parse_scenario(&serialize_scenario(&s)).unwrap(), s);
    }

    #[test]
    fn attempt_zero_is_rejected() {
        let text = HARVESTER_JSON.replace("\"attempt\": 1", "\"attempt\": 0");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::ParseError { .. })));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = HARVESTER_JSON.replacen("\"tasks\"", "\"extra\": 1, \"tasks\"", 1);
        assert_eq!(parse_scenario(&text), Err(ScenarioError::UnknownField("extra".into())));
    }

    #[test]
    fn undeclared_expression_variable_is_a_parse_error() {
        let text = r#"{"tasks":{"A":{"actor":"X","reads":[],"writes":[["y","x + 1"]],"handler":null}},
                       "initial":{},"results":[],"faults":[]}"#;
        match parse_scenario(text) {
            Err(ScenarioError::ParseError { location, .. }) => assert_eq!(location, "tasks.A.writes[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn harvester_binds() {
        let m = parse_bpmn(HARVESTER_BPMN).unwrap();
        let s = parse_scenario(HARVESTER_JSON).unwrap();
        let b = bind(&m, &s).unwrap();
        assert_eq!(b.behaviors.reads.len(), 6);
        assert!(b.behaviors.results.contains("accepted"));
    }

    #[test]
    fn bind_errors() {
        let m = parse_bpmn(HARVESTER_BPMN).unwrap();
        let s = parse_scenario(HARVESTER_JSON).unwrap();

        let mut empty = s.clone();
        empty.tasks.clear();
        empty.faults.clear();
        assert_eq!(
            bind(&m, &empty).unwrap_err(),
            BindError::MissingBehavior("PriceAndEscrow".into())
        );

        let mut extra = s.clone();
        extra.tasks.insert("Ghost".into(), s.tasks["DoTransport"].clone());
        assert_eq!(bind(&m, &extra).unwrap_err(), BindError::UnknownTask("Ghost".into()));

        let mut wrong_actor = s.clone();
        wrong_actor.tasks.get_mut("DoTransport").unwrap().actor = "Buyer".into();
        assert!(matches!(bind(&m, &wrong_actor), Err(BindError::ActorMismatch { .. })));

        let mut orphan = s.clone();
        orphan
            .tasks
            .get_mut("GetRailInsurance")
            .unwrap()
            .writes
            .retain(|(v, _)| v != "insuranceDoc");
        assert_eq!(
            bind(&m, &orphan).unwrap_err(),
            BindError::UnresolvableRead {
                variable: "insuranceDoc".into(),
                node: "DoTransport".into()
            }
        );

        let mut bad_fault = s.clone();
        bad_fault.faults[0].kind = FaultKind::PrepareNo {
            participant: "Nobody".into(),
        };
        assert_eq!(
            bind(&m, &bad_fault).unwrap_err(),
            BindError::UnknownActor("Nobody".into())
        );
    }
}
