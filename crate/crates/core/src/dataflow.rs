//! Variable-level dataflow over regions and fragments.
//!
//! * `dataflow_in`: variables a region may read before writing them itself.
//! * `required_out`: variables a region writes that something downstream
//!   (or the process result) consumes.
//! * `external_reads`: `dataflow_in` of a standalone fragment.
//! * `guaranteed_writes`: variables a fragment writes on every execution.
//!
//! The first and the last are solved with one pass in topological order
//! instead of enumerating paths.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::FlowGraph;
use crate::region::Region;

pub type VarSet = BTreeSet<String>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Behaviors {
    /// Task id → declared reads.
    pub reads: BTreeMap<String, VarSet>,
    /// Task id → written variables.
    pub writes: BTreeMap<String, VarSet>,
    /// Flow id → variables referenced by its guard.
    pub guard_reads: BTreeMap<String, VarSet>,
    pub results: VarSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataflowError {
    #[error("task `{0}` has no declared reads/writes")]
    UndeclaredBehavior(String),
}

static EMPTY: VarSet = BTreeSet::new();

impl Behaviors {
    fn check(&self, graph: &FlowGraph, nodes: impl IntoIterator<Item = usize>) -> Result<(), DataflowError> {
        for v in nodes {
            if graph.kind(v) == crate::bpmn::ElementKind::Task {
                let id = graph.node_id(v);
                if !self.reads.contains_key(id) || !self.writes.contains_key(id) {
                    return Err(DataflowError::UndeclaredBehavior(id.to_string()));
                }
            }
        }
        Ok(())
    }

    pub fn task_reads(&self, node: &str) -> &VarSet {
        self.reads.get(node).unwrap_or(&EMPTY)
    }

    pub fn task_writes(&self, node: &str) -> &VarSet {
        self.writes.get(node).unwrap_or(&EMPTY)
    }

    pub fn guard(&self, flow: &str) -> &VarSet {
        self.guard_reads.get(flow).unwrap_or(&EMPTY)
    }
}

fn members(graph: &FlowGraph, region: &Region) -> Vec<bool> {
    (0..graph.len()).map(|v| region.contains(graph.node_id(v))).collect()
}

/// Reads attributed to `v` inside the region: its task reads plus the guard
/// reads of its outgoing edges that stay inside the region.
fn region_reads(graph: &FlowGraph, beh: &Behaviors, inside: &[bool], v: usize) -> VarSet {
    let mut out = beh.task_reads(graph.node_id(v)).clone();
    for &e in graph.out_edges(v) {
        let edge = &graph.edges()[e];
        if inside[edge.dst] {
            out.extend(beh.guard(&edge.flow).iter().cloned());
        }
    }
    out
}

pub fn dataflow_in(graph: &FlowGraph, region: &Region, beh: &Behaviors) -> Result<VarSet, DataflowError> {
    let inside = members(graph, region);
    let nodes: Vec<usize> = graph.topo_order().iter().copied().filter(|&v| inside[v]).collect();
    beh.check(graph, nodes.iter().copied())?;
    let entry = graph.node_index(&region.entry).expect("region entry is a graph node");

    let reads: BTreeMap<usize, VarSet> = nodes
        .iter()
        .map(|&v| (v, region_reads(graph, beh, &inside, v)))
        .collect();
    let universe: VarSet = reads.values().flatten().cloned().collect();

    // open[v]: variables left unwritten on at least one entry→v path, not
    // counting v's own writes.
    let mut open: BTreeMap<usize, VarSet> = BTreeMap::new();
    let mut result = VarSet::new();
    for &v in &nodes {
        let set = if v == entry {
            universe.clone()
        } else {
            let mut s = VarSet::new();
            for p in graph.predecessors(v).filter(|&p| inside[p]) {
                if let Some(ps) = open.get(&p) {
                    let w = beh.task_writes(graph.node_id(p));
                    s.extend(ps.iter().filter(|x| !w.contains(*x)).cloned());
                }
            }
            s
        };
        result.extend(reads[&v].intersection(&set).cloned());
        open.insert(v, set);
    }
    Ok(result)
}

pub fn required_out(graph: &FlowGraph, region: &Region, beh: &Behaviors) -> Result<VarSet, DataflowError> {
    let inside = members(graph, region);
    beh.check(graph, (0..graph.len()).filter(|&v| inside[v]))?;
    let exit = graph.node_index(&region.exit).expect("region exit is a graph node");

    let written: VarSet = (0..graph.len())
        .filter(|&v| inside[v])
        .flat_map(|v| beh.task_writes(graph.node_id(v)).iter().cloned())
        .collect();

    let mut consumed = beh.results.clone();
    for x in graph.descendants(exit).ones() {
        if !inside[x] {
            consumed.extend(beh.task_reads(graph.node_id(x)).iter().cloned());
        }
        for &e in graph.out_edges(x) {
            let edge = &graph.edges()[e];
            // Guards on edges internal to the region are the region's own.
            if !(inside[edge.src] && inside[edge.dst]) {
                consumed.extend(beh.guard(&edge.flow).iter().cloned());
            }
        }
    }
    Ok(written.intersection(&consumed).cloned().collect())
}

/// The non-event part of a standalone fragment graph.
fn fragment_region(fragment: &FlowGraph) -> Region {
    Region::root(fragment)
}

pub fn external_reads(fragment: &FlowGraph, beh: &Behaviors) -> Result<VarSet, DataflowError> {
    dataflow_in(fragment, &fragment_region(fragment), beh)
}

/// A variable is guaranteed iff no choice of exclusive branches lets a token
/// set run from entry to exit without writing it. `avoid[v]` answers "can
/// the execution started at v avoid writing d", folded in reverse
/// topological order: exclusive splits need one avoiding branch, every other
/// node needs all successors to avoid.
pub fn guaranteed_writes(fragment: &FlowGraph, beh: &Behaviors) -> Result<VarSet, DataflowError> {
    let region = fragment_region(fragment);
    let inside = members(fragment, &region);
    let nodes: Vec<usize> = fragment.topo_order().iter().copied().filter(|&v| inside[v]).collect();
    beh.check(fragment, nodes.iter().copied())?;
    let entry = fragment.node_index(&region.entry).expect("fragment entry");

    let candidates: VarSet = nodes
        .iter()
        .flat_map(|&v| beh.task_writes(fragment.node_id(v)).iter().cloned())
        .collect();
    let mut out = VarSet::new();
    for d in candidates {
        let mut avoid = vec![false; fragment.len()];
        for &v in nodes.iter().rev() {
            let succ: Vec<usize> = fragment.successors(v).filter(|&s| inside[s]).collect();
            avoid[v] = !beh.task_writes(fragment.node_id(v)).contains(&d)
                && if succ.is_empty() {
                    true
                } else if fragment.is_exclusive_split(v) {
                    succ.iter().any(|&s| avoid[s])
                } else {
                    succ.iter().all(|&s| avoid[s])
                };
        }
        if !avoid[entry] {
            out.insert(d);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpmn::ElementKind;

    fn vars(items: &[&str]) -> VarSet {
        items.iter().map(|s| s.to_string()).collect()
    }

    struct Fixture {
        graph: FlowGraph,
        beh: Behaviors,
    }

    /// `tasks`: (id, kind, reads, writes). Node "S" and "E" are added.
    fn fixture(
        tasks: &[(&str, ElementKind, &[&str], &[&str])],
        edges: &[(&str, &str)],
        guards: &[(usize, &[&str])],
    ) -> Fixture {
        let mut nodes = vec![("S".to_string(), ElementKind::StartEvent)];
        nodes.extend(tasks.iter().map(|(id, k, _, _)| (id.to_string(), *k)));
        nodes.push(("E".to_string(), ElementKind::EndEvent));
        let edges = edges
            .iter()
            .enumerate()
            .map(|(i, (a, b))| (a.to_string(), b.to_string(), format!("f{i}")))
            .collect();
        let graph = FlowGraph::from_parts(nodes, edges).unwrap();
        let mut beh = Behaviors::default();
        for (id, kind, r, w) in tasks {
            if *kind == ElementKind::Task {
                beh.reads.insert(id.to_string(), vars(r));
                beh.writes.insert(id.to_string(), vars(w));
            }
        }
        for (i, g) in guards {
            beh.guard_reads.insert(format!("f{i}"), vars(g));
        }
        Fixture { graph, beh }
    }

    use ElementKind::{ExclusiveGateway as Xor, ParallelGateway as And, Task};

    #[test]
    fn internal_write_hides_read() {
        let f = fixture(
            &[("A", Task, &[], &["x"]), ("B", Task, &["x", "y"], &["z"])],
            &[("S", "A"), ("A", "B"), ("B", "E")],
            &[],
        );
        let r = Region::between(&f.graph, "A", "B").unwrap();
        assert_eq!(dataflow_in(&f.graph, &r, &f.beh).unwrap(), vars(&["y"]));
        assert_eq!(external_reads(&f.graph, &f.beh).unwrap(), vars(&["y"]));
        let b = Region::between(&f.graph, "B", "B").unwrap();
        assert_eq!(dataflow_in(&f.graph, &b, &f.beh).unwrap(), vars(&["x", "y"]));
        assert_eq!(required_out(&f.graph, &r, &f.beh).unwrap(), vars(&[]));
    }

    #[test]
    fn required_out_sees_downstream_reads_and_results() {
        let mut f = fixture(
            &[("A", Task, &[], &["x", "tmp", "res"]), ("B", Task, &["x"], &[])],
            &[("S", "A"), ("A", "B"), ("B", "E")],
            &[],
        );
        f.beh.results = vars(&["res"]);
        let a = Region::between(&f.graph, "A", "A").unwrap();
        assert_eq!(required_out(&f.graph, &a, &f.beh).unwrap(), vars(&["res", "x"]));
    }

    #[test]
    fn exclusive_split_must_write() {
        // g splits to b1 (writes d) and b2 (writes nothing); m merges.
        let f = fixture(
            &[
                ("g", Xor, &[], &[]),
                ("b1", Task, &[], &["d", "e"]),
                ("b2", Task, &[], &["e"]),
                ("m", Xor, &[], &[]),
            ],
            &[
                ("S", "g"),
                ("g", "b1"),
                ("g", "b2"),
                ("b1", "m"),
                ("b2", "m"),
                ("m", "E"),
            ],
            &[(1, &["flag"])],
        );
        assert_eq!(guaranteed_writes(&f.graph, &f.beh).unwrap(), vars(&["e"]));
        assert_eq!(external_reads(&f.graph, &f.beh).unwrap(), vars(&["flag"]));
    }

    #[test]
    fn parallel_split_writes_on_one_branch_suffice() {
        let f = fixture(
            &[
                ("g", And, &[], &[]),
                ("b1", Task, &[], &["d"]),
                ("b2", Task, &[], &[]),
                ("j", And, &[], &[]),
            ],
            &[
                ("S", "g"),
                ("g", "b1"),
                ("g", "b2"),
                ("b1", "j"),
                ("b2", "j"),
                ("j", "E"),
            ],
            &[],
        );
        assert_eq!(guaranteed_writes(&f.graph, &f.beh).unwrap(), vars(&["d"]));
    }

    #[test]
    fn undeclared_behavior() {
        let mut f = fixture(&[("A", Task, &[], &[])], &[("S", "A"), ("A", "E")], &[]);
        f.beh.reads.clear();
        assert_eq!(
            external_reads(&f.graph, &f.beh),
            Err(DataflowError::UndeclaredBehavior("A".into()))
        );
    }
}
