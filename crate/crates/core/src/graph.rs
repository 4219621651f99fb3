//! The DAG view of a process model.

use std::collections::BTreeMap;

use fixedbitset::FixedBitSet;
use serde::Serialize;
use thiserror::Error;

use crate::bpmn::{ElementKind, ProcessModel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("cycle detected through {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("graph is malformed: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphEdge {
    pub src: usize,
    pub dst: usize,
    pub flow: String,
}

/// Nodes are indexed in element document order; edges in flow document
/// order. Node and edge ids are the BPMN element and flow ids.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    nodes: Vec<String>,
    kinds: Vec<ElementKind>,
    edges: Vec<GraphEdge>,
    source: usize,
    sink: usize,
    index: BTreeMap<String, usize>,
    flow_index: BTreeMap<String, usize>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
    topo: Vec<usize>,
    desc: Vec<FixedBitSet>,
    anc: Vec<FixedBitSet>,
}

pub fn build_flow_graph(model: &ProcessModel) -> Result<FlowGraph, GraphError> {
    FlowGraph::from_parts(
        model.elements.iter().map(|e| (e.id.clone(), e.kind)).collect(),
        model
            .flows
            .iter()
            .map(|f| (f.source.clone(), f.target.clone(), f.id.clone()))
            .collect(),
    )
}

impl FlowGraph {
    /// Build from raw nodes and `(source, target, flow-id)` triples. Exactly
    /// one start and one end event are required; degree rules of the BPMN
    /// subset are not enforced here.
    pub fn from_parts(
        nodes: Vec<(String, ElementKind)>,
        edges: Vec<(String, String, String)>,
    ) -> Result<FlowGraph, GraphError> {
        let index: BTreeMap<String, usize> = nodes.iter().enumerate().map(|(i, (id, _))| (id.clone(), i)).collect();
        if index.len() != nodes.len() {
            return Err(GraphError::Malformed("duplicate node id".into()));
        }
        let find = |kind: ElementKind| {
            let mut it = nodes.iter().enumerate().filter(|(_, (_, k))| *k == kind);
            match (it.next(), it.next()) {
                (Some((i, _)), None) => Ok(i),
                _ => Err(GraphError::Malformed(format!("expected exactly one {kind:?}"))),
            }
        };
        let source = find(ElementKind::StartEvent)?;
        let sink = find(ElementKind::EndEvent)?;

        let n = nodes.len();
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        let mut graph_edges = Vec::with_capacity(edges.len());
        let mut flow_index = BTreeMap::new();
        for (src, dst, flow) in edges {
            let lookup = |id: &str| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| GraphError::Malformed(format!("flow `{flow}` references unknown `{id}`")))
            };
            let (s, d) = (lookup(&src)?, lookup(&dst)?);
            let e = graph_edges.len();
            if flow_index.insert(flow.clone(), e).is_some() {
                return Err(GraphError::Malformed(format!("duplicate flow id `{flow}`")));
            }
            succ[s].push(e);
            pred[d].push(e);
            graph_edges.push(GraphEdge { src: s, dst: d, flow });
        }

        let (ids, kinds): (Vec<String>, Vec<ElementKind>) = nodes.into_iter().unzip();
        let mut g = FlowGraph {
            nodes: ids,
            kinds,
            edges: graph_edges,
            source,
            sink,
            index,
            flow_index,
            succ,
            pred,
            topo: Vec::new(),
            desc: Vec::new(),
            anc: Vec::new(),
        };
        g.topo = g.topological_order()?;
        g.desc = g.closure(true);
        g.anc = g.closure(false);
        if let Some(v) = (0..n).find(|&v| !g.desc[g.source].contains(v)) {
            return Err(GraphError::Malformed(format!(
                "`{}` is not reachable from the start event",
                g.nodes[v]
            )));
        }
        if let Some(v) = (0..n).find(|&v| !g.anc[g.sink].contains(v)) {
            return Err(GraphError::Malformed(format!(
                "`{}` does not reach the end event",
                g.nodes[v]
            )));
        }
        Ok(g)
    }

    /// Kahn's algorithm, taking the smallest ready index first. On failure a
    /// cycle is recovered by walking predecessors inside the residue.
    fn topological_order(&self) -> Result<Vec<usize>, GraphError> {
        let n = self.nodes.len();
        let mut indeg: Vec<usize> = self.pred.iter().map(Vec::len).collect();
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &e in &self.succ[v] {
                let d = self.edges[e].dst;
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    ready.insert(d);
                }
            }
        }
        if order.len() == n {
            return Ok(order);
        }
        // Every remaining node has a predecessor that also remains.
        let remaining: Vec<bool> = (0..n).map(|v| indeg[v] > 0).collect();
        let mut v = (0..n).find(|&v| remaining[v]).expect("residue is non-empty");
        let mut seen = vec![usize::MAX; n];
        let mut path = Vec::new();
        while seen[v] == usize::MAX {
            seen[v] = path.len();
            path.push(v);
            v = self.pred[v]
                .iter()
                .map(|&e| self.edges[e].src)
                .find(|&p| remaining[p])
                .expect("residue node has a residue predecessor");
        }
        let mut cycle: Vec<String> = path[seen[v]..].iter().rev().map(|&i| self.nodes[i].clone()).collect();
        cycle.push(cycle[0].clone());
        Err(GraphError::CycleDetected(cycle))
    }

    /// Reflexive reachability sets, forward (`desc`) or backward (`anc`).
    fn closure(&self, forward: bool) -> Vec<FixedBitSet> {
        let n = self.nodes.len();
        let mut sets: Vec<FixedBitSet> = (0..n)
            .map(|v| {
                let mut s = FixedBitSet::with_capacity(n);
                s.insert(v);
                s
            })
            .collect();
        let order: Vec<usize> = if forward {
            self.topo.iter().rev().copied().collect()
        } else {
            self.topo.clone()
        };
        for v in order {
            let next: Vec<usize> = if forward {
                self.successors(v).collect()
            } else {
                self.predecessors(v).collect()
            };
            for w in next {
                let other = sets[w].clone();
                sets[v].union_with(&other);
            }
        }
        sets
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn node_id(&self, v: usize) -> &str {
        &self.nodes[v]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn kind(&self, v: usize) -> ElementKind {
        self.kinds[v]
    }

    pub fn edge_of_flow(&self, flow: &str) -> Option<usize> {
        self.flow_index.get(flow).copied()
    }

    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.succ[v]
    }

    pub fn in_edges(&self, v: usize) -> &[usize] {
        &self.pred[v]
    }

    pub fn successors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.succ[v].iter().map(|&e| self.edges[e].dst)
    }

    pub fn predecessors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.pred[v].iter().map(|&e| self.edges[e].src)
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// Nodes reachable from `v`, including `v`.
    pub fn descendants(&self, v: usize) -> &FixedBitSet {
        &self.desc[v]
    }

    /// Nodes that reach `v`, including `v`.
    pub fn ancestors(&self, v: usize) -> &FixedBitSet {
        &self.anc[v]
    }

    pub fn reaches(&self, from: usize, to: usize) -> bool {
        self.desc[from].contains(to)
    }

    /// An exclusive gateway with more than one outgoing edge.
    pub fn is_exclusive_split(&self, v: usize) -> bool {
        self.kinds[v] == ElementKind::ExclusiveGateway && self.succ[v].len() > 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpmn::parse_bpmn;

    fn chain(ids: &[&str]) -> Result<FlowGraph, GraphError> {
        let nodes = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let kind = if i == 0 {
                    ElementKind::StartEvent
                } else if i + 1 == ids.len() {
                    ElementKind::EndEvent
                } else {
                    ElementKind::Task
                };
                (id.to_string(), kind)
            })
            .collect();
        let edges = ids
            .windows(2)
            .enumerate()
            .map(|(i, w)| (w[0].to_string(), w[1].to_string(), format!("f{i}")))
            .collect();
        FlowGraph::from_parts(nodes, edges)
    }

    #[test]
    fn minimal_graph_counts() {
        let m = parse_bpmn(include_str!("../fixtures/minimal.bpmn")).unwrap();
        let g = build_flow_graph(&m).unwrap();
        assert_eq!((g.len(), g.edges().len()), (3, 2));
        assert_eq!(g.node_id(g.source()), "Start");
        assert_eq!(g.node_id(g.sink()), "End");
    }

    #[test]
    fn mapping_is_invertible() {
        let m = parse_bpmn(include_str!("../fixtures/harvester.bpmn")).unwrap();
        let g = build_flow_graph(&m).unwrap();
        assert_eq!((g.len(), g.edges().len()), (8, 7));
        for (i, id) in g.nodes().iter().enumerate() {
            assert_eq!(g.node_index(id), Some(i));
        }
        for (i, e) in g.edges().iter().enumerate() {
            assert_eq!(g.edge_of_flow(&e.flow), Some(i));
        }
    }

    #[test]
    fn back_edge_is_a_cycle() {
        let m = parse_bpmn(include_str!("../fixtures/corrupt/cycle.bpmn")).unwrap();
        match build_flow_graph(&m) {
            Err(GraphError::CycleDetected(cycle)) => {
                assert!(cycle.len() >= 3);
                assert_eq!(cycle.first(), cycle.last());
            }
            other => panic!("expected a cycle, got {other:?}"),
        }
    }

    #[test]
    fn reachability_is_reflexive() {
        let g = chain(&["s", "a", "b", "e"]).unwrap();
        let a = g.node_index("a").unwrap();
        let b = g.node_index("b").unwrap();
        assert!(g.reaches(a, a));
        assert!(g.reaches(a, b));
        assert!(!g.reaches(b, a));
        assert_eq!(g.topo_order(), &[0, 1, 2, 3]);
    }
}
