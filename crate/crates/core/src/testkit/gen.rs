//! Random graphs and random executable models.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::bpmn::{parse_bpmn, serialize, Element, ElementKind, Lane, ProcessModel, SequenceFlow};
use crate::compiler::{compile, DeploymentBundle};
use crate::expr::{Expr, Value};
use crate::graph::FlowGraph;
use crate::region::{enumerate_sese, Selection, TransactionPlan};
use crate::scenario::{bind, FaultKind, FaultSpec, Handler, HandlerOutcome, ScenarioSpec, TaskBehavior};

/// A random DAG with one start and one end event, at most `max_nodes`
/// nodes and `max_edges` edges. Degree rules of the BPMN subset are not
/// respected; every node lies on a start-to-end path.
pub fn random_dag<R: Rng>(rng: &mut R, max_nodes: usize, max_edges: usize) -> FlowGraph {
    assert!(max_nodes >= 3 && max_edges >= 2 * (max_nodes - 2));
    let n = rng.gen_range(3..=max_nodes);
    let mut nodes = vec![("S".to_string(), ElementKind::StartEvent)];
    for i in 1..n - 1 {
        let kind = *[
            ElementKind::Task,
            ElementKind::ExclusiveGateway,
            ElementKind::ParallelGateway,
        ]
        .choose(rng)
        .expect("non-empty");
        nodes.push((format!("n{i}"), kind));
    }
    nodes.push(("E".to_string(), ElementKind::EndEvent));

    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    // Keep the start and end events at degree one.
    pairs.insert((0, 1));
    for i in 2..n - 1 {
        pairs.insert((rng.gen_range(1..i), i));
    }
    pairs.insert((n - 2, n - 1));
    for i in 1..n - 2 {
        if !pairs.iter().any(|&(s, _)| s == i) {
            pairs.insert((i, rng.gen_range(i + 1..n - 1)));
        }
    }
    let inner = n - 2;
    let mut attempts = 0;
    while pairs.len() < max_edges && inner >= 2 && attempts < 4 * max_edges {
        attempts += 1;
        if rng.gen_bool(0.3) {
            break;
        }
        let a = rng.gen_range(1..n - 2);
        let b = rng.gen_range(a + 1..n - 1);
        pairs.insert((a, b));
    }
    let edges = pairs
        .into_iter()
        .enumerate()
        .map(|(k, (a, b))| (nodes[a].0.clone(), nodes[b].0.clone(), format!("f{k}")))
        .collect();
    FlowGraph::from_parts(nodes, edges).expect("generated DAG is well formed")
}

enum Block {
    Task,
    Seq(Vec<Block>),
    Xor(Vec<Block>),
    And(Vec<Block>),
}

fn random_block<R: Rng>(rng: &mut R, depth: u32, budget: &mut usize) -> Block {
    if depth == 0 || *budget <= 1 || rng.gen_bool(0.35) {
        *budget = budget.saturating_sub(1);
        return Block::Task;
    }
    let width = rng.gen_range(2..=3);
    let parts: Vec<Block> = (0..width).map(|_| random_block(rng, depth - 1, budget)).collect();
    match rng.gen_range(0..3) {
        0 => Block::Seq(parts),
        1 => Block::Xor(parts),
        _ => Block::And(parts),
    }
}

struct Emitter {
    elements: Vec<Element>,
    flows: Vec<SequenceFlow>,
    tasks: Vec<String>,
    counter: usize,
}

impl Emitter {
    fn node(&mut self, prefix: &str, kind: ElementKind) -> String {
        self.counter += 1;
        let id = format!("{prefix}{}", self.counter);
        self.elements.push(Element {
            id: id.clone(),
            kind,
            name: id.clone(),
        });
        if kind == ElementKind::Task {
            self.tasks.push(id.clone());
        }
        id
    }

    fn flow(&mut self, from: &str, to: &str, guard: Option<String>, is_default: bool) {
        let id = format!("Flow_{}", self.flows.len() + 1);
        self.flows.push(SequenceFlow {
            id,
            source: from.into(),
            target: to.into(),
            guard,
            is_default,
        });
    }

    /// Returns (entry, exit).
    fn emit<R: Rng>(&mut self, rng: &mut R, block: &Block) -> (String, String) {
        match block {
            Block::Task => {
                let t = self.node("T", ElementKind::Task);
                (t.clone(), t)
            }
            Block::Seq(parts) => {
                let mut ends: Vec<(String, String)> = parts.iter().map(|p| self.emit(rng, p)).collect();
                for i in 1..ends.len() {
                    let (from, to) = (ends[i - 1].1.clone(), ends[i].0.clone());
                    self.flow(&from, &to, None, false);
                }
                let first = ends.remove(0).0;
                let last = ends.pop().map_or_else(|| first.clone(), |e| e.1);
                (first, last)
            }
            Block::Xor(parts) | Block::And(parts) => {
                let kind = if matches!(block, Block::Xor(_)) {
                    ElementKind::ExclusiveGateway
                } else {
                    ElementKind::ParallelGateway
                };
                let split = self.node("Split", kind);
                let join = self.node("Join", kind);
                let default = rng.gen_range(0..parts.len());
                for (i, p) in parts.iter().enumerate() {
                    let (a, b) = self.emit(rng, p);
                    if kind == ElementKind::ExclusiveGateway {
                        let guard = (i != default).then(|| format!("x0 > {}", rng.gen_range(0..10)));
                        self.flow(&split, &a, guard, i == default);
                    } else {
                        self.flow(&split, &a, None, false);
                    }
                    self.flow(&b, &join, None, false);
                }
                (split, join)
            }
        }
    }
}

pub const ACTORS: [&str; 3] = ["Alpha", "Beta", "Gamma"];

/// A generated process with a scenario and a random laminar plan.
#[derive(Debug, Clone)]
pub struct GeneratedModel {
    pub model: ProcessModel,
    pub xml: String,
    pub scenario: ScenarioSpec,
    pub plan: TransactionPlan,
}

impl GeneratedModel {
    pub fn bundle(&self) -> DeploymentBundle {
        let bound = bind(&self.model, &self.scenario).expect("generated model binds");
        compile(&bound, &self.plan).expect("generated model compiles")
    }

    pub fn tasks(&self) -> Vec<String> {
        self.model.tasks().map(|t| t.id.clone()).collect()
    }

    pub fn actors(&self) -> Vec<String> {
        self.model.actors().into_iter().collect()
    }
}

/// A structured model (nested sequence, exclusive and parallel blocks) with
/// at most `max_tasks` tasks, behaviors over two initial variables and up to
/// three selected regions.
pub fn random_model<R: Rng>(rng: &mut R, max_tasks: usize) -> GeneratedModel {
    let mut budget = max_tasks;
    let body = random_block(rng, 3, &mut budget);
    let mut em = Emitter {
        elements: Vec::new(),
        flows: Vec::new(),
        tasks: Vec::new(),
        counter: 0,
    };
    em.elements.push(Element {
        id: "Start".into(),
        kind: ElementKind::StartEvent,
        name: "Start".into(),
    });
    let (entry, exit) = em.emit(rng, &body);
    em.elements.push(Element {
        id: "End".into(),
        kind: ElementKind::EndEvent,
        name: "End".into(),
    });
    em.flow("Start", &entry, None, false);
    em.flow(&exit, "End", None, false);

    let mut lanes: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut tasks = BTreeMap::new();
    for (i, t) in em.tasks.iter().enumerate() {
        let actor = ACTORS[rng.gen_range(0..ACTORS.len())];
        lanes.entry(actor).or_default().push(t.clone());
        let mut reads = BTreeSet::new();
        let mut writes = vec![(format!("w_{t}"), Expr::parse(&format!("{}", i + 1)).expect("literal"))];
        if rng.gen_bool(0.6) {
            reads.insert("x0".to_string());
            writes.push(("acc".into(), Expr::parse(&format!("x0 + {i}")).expect("sum")));
        }
        if rng.gen_bool(0.4) {
            reads.insert("x1".to_string());
        }
        let handler = rng.gen_bool(0.2).then(|| Handler {
            actions: vec![(format!("w_{t}"), Expr::parse("0").expect("literal"))],
            outcome: if rng.gen_bool(0.5) {
                HandlerOutcome::Resolve
            } else {
                HandlerOutcome::Fail
            },
        });
        tasks.insert(
            t.clone(),
            TaskBehavior {
                actor: actor.into(),
                reads,
                writes,
                handler,
            },
        );
    }
    let model = ProcessModel {
        id: "generated".into(),
        elements: em.elements,
        flows: em.flows,
        lanes: lanes
            .into_iter()
            .map(|(actor, members)| Lane {
                id: format!("Lane_{actor}"),
                name: actor.into(),
                members,
            })
            .collect(),
        initial_vars: BTreeSet::new(),
        result_vars: BTreeSet::new(),
    };
    let xml = serialize(&model);
    let model = parse_bpmn(&xml).expect("generated model round-trips");
    let scenario = ScenarioSpec {
        tasks,
        initial: BTreeMap::from([
            ("x0".to_string(), Value::Int(rng.gen_range(0..10))),
            ("x1".to_string(), Value::Int(rng.gen_range(0..10))),
        ]),
        results: BTreeSet::new(),
        faults: Vec::new(),
    };
    let bound = bind(&model, &scenario).expect("generated model binds");
    let mut regions = enumerate_sese(&bound.graph);
    regions.shuffle(rng);
    let mut picked: Vec<Selection> = Vec::new();
    for r in regions {
        if picked.len() == 3 {
            break;
        }
        if rng.gen_bool(0.5) && picked.iter().all(|s| s.region.is_laminar_with(&r) && s.region != r) {
            picked.push(Selection {
                name: format!("tx{}", picked.len() + 1),
                region: r,
            });
        }
    }
    let plan = TransactionPlan::from_selections(picked).expect("laminar by construction");
    GeneratedModel {
        model,
        xml,
        scenario,
        plan,
    }
}

/// Up to `max` random faults on first attempts of the model's tasks.
pub fn random_faults<R: Rng>(rng: &mut R, m: &GeneratedModel, max: usize) -> Vec<FaultSpec> {
    let tasks = m.tasks();
    let actors = m.actors();
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..rng.gen_range(0..=max) {
        let task = tasks.choose(rng).expect("model has tasks").clone();
        if !used.insert(task.clone()) {
            continue;
        }
        let kind = if rng.gen_bool(0.5) {
            FaultKind::Exception
        } else {
            FaultKind::PrepareNo {
                participant: actors.choose(rng).expect("model has actors").clone(),
            }
        };
        out.push(FaultSpec {
            task,
            attempt: 1,
            kind,
            message: "injected".into(),
        });
    }
    out
}
