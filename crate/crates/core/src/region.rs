//! Single-entry/single-exit regions and transaction plans over them.

use std::collections::{BTreeMap, BTreeSet};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::FlowGraph;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Region {
    pub entry: String,
    pub exit: String,
    /// BPMN element ids.
    pub members: BTreeSet<String>,
}

impl Region {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.members.contains(id)
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.members.is_subset(&other.members)
    }

    pub fn is_laminar_with(&self, other: &Region) -> bool {
        self.members.is_disjoint(&other.members) || self.is_subset(other) || other.is_subset(self)
    }

    /// The region of every non-event node.
    pub fn root(graph: &FlowGraph) -> Region {
        let entry = graph.successors(graph.source()).next().unwrap_or(graph.sink());
        let exit = graph.predecessors(graph.sink()).next().unwrap_or(graph.source());
        Region {
            entry: graph.node_id(entry).to_string(),
            exit: graph.node_id(exit).to_string(),
            members: (0..graph.len())
                .filter(|&v| !graph.kind(v).is_event())
                .map(|v| graph.node_id(v).to_string())
                .collect(),
        }
    }

    /// Recompute the region spanned by `entry` and `exit` in `graph` and
    /// check the boundary conditions.
    pub fn between(graph: &FlowGraph, entry: &str, exit: &str) -> Option<Region> {
        let u = graph.node_index(entry)?;
        let v = graph.node_index(exit)?;
        if graph.kind(u).is_event() || graph.kind(v).is_event() || !graph.reaches(u, v) {
            return None;
        }
        let mut members = graph.descendants(u).clone();
        members.intersect_with(graph.ancestors(v));
        let region = Region {
            entry: entry.to_string(),
            exit: exit.to_string(),
            members: members.ones().map(|w| graph.node_id(w).to_string()).collect(),
        };
        boundary_holds(graph, &region).then_some(region)
    }
}

/// Sort key shared by every producer of region lists.
pub fn region_order(a: &Region, b: &Region) -> std::cmp::Ordering {
    b.len()
        .cmp(&a.len())
        .then_with(|| a.entry.cmp(&b.entry))
        .then_with(|| a.exit.cmp(&b.exit))
}

/// Edge-by-edge check of the two boundary conditions.
pub fn boundary_holds(graph: &FlowGraph, region: &Region) -> bool {
    graph.edges().iter().all(|e| {
        let s = graph.node_id(e.src);
        let d = graph.node_id(e.dst);
        match (region.contains(s), region.contains(d)) {
            (false, true) => d == region.entry,
            (true, false) => s == region.exit,
            _ => true,
        }
    })
}

/// All SESE regions of `graph`, largest first.
///
/// A pair `(u, v)` with `u` reaching `v` spans `M = desc(u) ∩ anc(v)`. Every
/// edge into `M` lands on `u` exactly when `u` dominates each member of `M`,
/// and every edge out of `M` leaves from `v` exactly when `v` postdominates
/// each member. Both conditions reduce to bitset inclusions.
pub fn enumerate_sese(graph: &FlowGraph) -> Vec<Region> {
    let n = graph.len();
    let dominated = dominance(graph, true);
    let postdominated = dominance(graph, false);

    let mut out = Vec::new();
    for u in (0..n).filter(|&u| !graph.kind(u).is_event()) {
        for v in graph.descendants(u).ones().filter(|&v| !graph.kind(v).is_event()) {
            if !dominated[u].contains(v) || !postdominated[v].contains(u) {
                continue;
            }
            let mut members = graph.descendants(u).clone();
            members.intersect_with(graph.ancestors(v));
            if members.is_subset(&dominated[u]) && members.is_subset(&postdominated[v]) {
                out.push(Region {
                    entry: graph.node_id(u).to_string(),
                    exit: graph.node_id(v).to_string(),
                    members: members.ones().map(|w| graph.node_id(w).to_string()).collect(),
                });
            }
        }
    }
    out.sort_by(region_order);
    out
}

/// For each node `d`, the set of nodes it dominates (`forward`) or
/// postdominates. Dominator sets are folded in topological order, which is
/// exact on a DAG.
fn dominance(graph: &FlowGraph, forward: bool) -> Vec<FixedBitSet> {
    let n = graph.len();
    let mut dom: Vec<FixedBitSet> = vec![FixedBitSet::with_capacity(n); n];
    let order: Vec<usize> = if forward {
        graph.topo_order().to_vec()
    } else {
        graph.topo_order().iter().rev().copied().collect()
    };
    for &w in &order {
        let mut preds = if forward {
            graph.predecessors(w).collect::<Vec<_>>()
        } else {
            graph.successors(w).collect::<Vec<_>>()
        };
        preds.dedup();
        let mut set = match preds.split_first() {
            None => FixedBitSet::with_capacity(n),
            Some((&first, rest)) => {
                let mut s = dom[first].clone();
                for &p in rest {
                    s.intersect_with(&dom[p]);
                }
                s
            }
        };
        set.insert(w);
        dom[w] = set;
    }
    // Transpose: dominated[d] = { w : d ∈ dom(w) }.
    let mut dominated = vec![FixedBitSet::with_capacity(n); n];
    for (w, set) in dom.iter().enumerate() {
        for d in set.ones() {
            dominated[d].insert(w);
        }
    }
    dominated
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("selections `{0}` and `{1}` overlap without nesting")]
    NotLaminar(String, String),
    #[error("transaction name `{0}` is used more than once")]
    DuplicateName(String),
    #[error("region `{0}` is selected more than once")]
    DuplicateRegion(String),
    #[error("region index {0} is out of range")]
    InvalidIndex(usize),
    #[error("transaction names must be non-empty and may not be `main`")]
    InvalidName(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub name: String,
    pub region: Region,
}

/// The logical name of the unit that owns everything outside the
/// selections.
pub const MAIN: &str = "main";

/// A laminar family of named regions. The nesting tree hangs off an implicit
/// root standing for the whole process; `parent` of a top-level selection is
/// `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionPlan {
    pub selections: Vec<Selection>,
    parents: BTreeMap<String, Option<String>>,
}

impl TransactionPlan {
    pub fn empty() -> TransactionPlan {
        TransactionPlan {
            selections: Vec::new(),
            parents: BTreeMap::new(),
        }
    }

    pub fn from_selections(selections: Vec<Selection>) -> Result<TransactionPlan, PlanError> {
        let mut names = BTreeSet::new();
        let mut regions = BTreeSet::new();
        for s in &selections {
            if s.name.is_empty() || s.name == MAIN || s.name.contains(['#', '/']) {
                return Err(PlanError::InvalidName(s.name.clone()));
            }
            if !names.insert(s.name.as_str()) {
                return Err(PlanError::DuplicateName(s.name.clone()));
            }
            if !regions.insert(&s.region.members) {
                return Err(PlanError::DuplicateRegion(s.name.clone()));
            }
        }
        for (i, a) in selections.iter().enumerate() {
            for b in &selections[i + 1..] {
                if !a.region.is_laminar_with(&b.region) {
                    return Err(PlanError::NotLaminar(a.name.clone(), b.name.clone()));
                }
            }
        }
        let parents = selections
            .iter()
            .map(|s| {
                let parent = selections
                    .iter()
                    .filter(|p| p.name != s.name && s.region.is_subset(&p.region))
                    .min_by_key(|p| p.region.len())
                    .map(|p| p.name.clone());
                (s.name.clone(), parent)
            })
            .collect();
        Ok(TransactionPlan { selections, parents })
    }

    pub fn selection(&self, name: &str) -> Option<&Selection> {
        self.selections.iter().find(|s| s.name == name)
    }

    pub fn parent(&self, name: &str) -> Option<&str> {
        self.parents.get(name).and_then(|p| p.as_deref())
    }

    /// Direct children of `name`, or of the implicit root for `None`, in
    /// selection order.
    pub fn children(&self, name: Option<&str>) -> Vec<&Selection> {
        self.selections
            .iter()
            .filter(|s| self.parents.get(&s.name).map(|p| p.as_deref()) == Some(name))
            .collect()
    }

    /// Selections strictly inside `name`, at any depth.
    pub fn descendants(&self, name: &str) -> Vec<&Selection> {
        let mut out = Vec::new();
        let mut stack = vec![name];
        while let Some(n) = stack.pop() {
            for c in self.children(Some(n)) {
                out.push(c);
                stack.push(&c.name);
            }
        }
        out
    }

    /// Innermost selection containing `node`.
    pub fn innermost_containing(&self, node: &str) -> Option<&Selection> {
        self.selections
            .iter()
            .filter(|s| s.region.contains(node))
            .min_by_key(|s| s.region.len())
    }
}

pub fn validate_selection(regions: &[Region], picks: &[(usize, String)]) -> Result<TransactionPlan, PlanError> {
    let selections = picks
        .iter()
        .map(|(i, name)| {
            regions
                .get(*i)
                .map(|r| Selection {
                    name: name.clone(),
                    region: r.clone(),
                })
                .ok_or(PlanError::InvalidIndex(*i))
        })
        .collect::<Result<Vec<_>, _>>()?;
    TransactionPlan::from_selections(selections)
}

/// `R<k>` label used by reports for the k-th enumerated region (1-based).
pub fn region_label(index: usize) -> String {
    format!("R{}", index + 1)
}

pub fn parse_region_label(label: &str) -> Option<usize> {
    label
        .strip_prefix('R')
        .and_then(|n| n.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .map(|n| n - 1)
}
