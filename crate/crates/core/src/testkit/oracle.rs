//! Brute-force answers computed from path and branch-choice enumeration.
//! They share no code with `region` or `dataflow` beyond the graph itself.

use std::collections::{BTreeMap, BTreeSet};

use crate::bpmn::ElementKind;
use crate::dataflow::{Behaviors, VarSet};
use crate::graph::FlowGraph;
use crate::region::Region;

/// Every path from `from` to `to` as a node list. `allowed` restricts the
/// intermediate nodes.
pub fn all_paths(g: &FlowGraph, from: usize, to: usize, allowed: &dyn Fn(usize) -> bool) -> Vec<Vec<usize>> {
    fn walk(
        g: &FlowGraph,
        v: usize,
        to: usize,
        allowed: &dyn Fn(usize) -> bool,
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        path.push(v);
        if v == to {
            out.push(path.clone());
        } else {
            for &e in g.out_edges(v) {
                let d = g.edges()[e].dst;
                if allowed(d) {
                    walk(g, d, to, allowed, path, out);
                }
            }
        }
        path.pop();
    }
    let mut out = Vec::new();
    walk(g, from, to, allowed, &mut Vec::new(), &mut out);
    out
}

/// Every path starting at `from` that stays inside `inside`, including each
/// proper prefix.
fn all_prefixes(g: &FlowGraph, from: usize, inside: &dyn Fn(usize) -> bool) -> Vec<Vec<usize>> {
    fn walk(g: &FlowGraph, v: usize, inside: &dyn Fn(usize) -> bool, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        path.push(v);
        out.push(path.clone());
        for &e in g.out_edges(v) {
            let d = g.edges()[e].dst;
            if inside(d) {
                walk(g, d, inside, path, out);
            }
        }
        path.pop();
    }
    let mut out = Vec::new();
    walk(g, from, inside, &mut Vec::new(), &mut out);
    out
}

/// SESE regions by definition: for each ordered pair of non-event nodes,
/// collect the nodes on some path between them and test every edge against
/// the boundary rules.
pub fn sese_brute_force(g: &FlowGraph) -> BTreeSet<Region> {
    let mut out = BTreeSet::new();
    let candidates: Vec<usize> = (0..g.len()).filter(|&v| !g.kind(v).is_event()).collect();
    for &u in &candidates {
        for &v in &candidates {
            let paths = all_paths(g, u, v, &|_| true);
            if paths.is_empty() {
                continue;
            }
            let members: BTreeSet<usize> = paths.into_iter().flatten().collect();
            let ok = g.edges().iter().all(|e| {
                let (s_in, d_in) = (members.contains(&e.src), members.contains(&e.dst));
                (s_in || !d_in || e.dst == u) && (!s_in || d_in || e.src == v)
            });
            if ok {
                out.insert(Region {
                    entry: g.node_id(u).to_string(),
                    exit: g.node_id(v).to_string(),
                    members: members.iter().map(|&w| g.node_id(w).to_string()).collect(),
                });
            }
        }
    }
    out
}

fn reads_at(g: &FlowGraph, beh: &Behaviors, v: usize, inside: &dyn Fn(usize) -> bool) -> VarSet {
    let mut r: VarSet = beh.reads.get(g.node_id(v)).cloned().unwrap_or_default();
    for &e in g.out_edges(v) {
        let edge = &g.edges()[e];
        if inside(edge.dst) {
            r.extend(beh.guard_reads.get(&edge.flow).cloned().unwrap_or_default());
        }
    }
    r
}

fn writes_at(g: &FlowGraph, beh: &Behaviors, v: usize) -> VarSet {
    beh.writes.get(g.node_id(v)).cloned().unwrap_or_default()
}

/// Variables read somewhere in the region on a path from its entry along
/// which nothing earlier wrote them.
pub fn dataflow_in_paths(g: &FlowGraph, region: &Region, beh: &Behaviors) -> VarSet {
    let inside = |v: usize| region.contains(g.node_id(v));
    let entry = g.node_index(&region.entry).expect("entry");
    let mut out = VarSet::new();
    for path in all_prefixes(g, entry, &inside) {
        let (&last, before) = path.split_last().expect("non-empty path");
        let written: VarSet = before.iter().flat_map(|&w| writes_at(g, beh, w)).collect();
        out.extend(reads_at(g, beh, last, &inside).difference(&written).cloned());
    }
    out
}

/// Region writes consumed on some path from the exit to the end event, or
/// listed as a process result.
pub fn required_out_paths(g: &FlowGraph, region: &Region, beh: &Behaviors) -> VarSet {
    let inside = |v: usize| region.contains(g.node_id(v));
    let exit = g.node_index(&region.exit).expect("exit");
    let mut consumed = beh.results.clone();
    for path in all_paths(g, exit, g.sink(), &|_| true) {
        for pair in path.windows(2) {
            let flows: Vec<&str> = g
                .out_edges(pair[0])
                .iter()
                .map(|&e| &g.edges()[e])
                .filter(|e| e.dst == pair[1] && !(inside(e.src) && inside(e.dst)))
                .map(|e| e.flow.as_str())
                .collect();
            for f in flows {
                consumed.extend(beh.guard_reads.get(f).cloned().unwrap_or_default());
            }
        }
        for &w in &path {
            if !inside(w) {
                consumed.extend(beh.reads.get(g.node_id(w)).cloned().unwrap_or_default());
            }
        }
    }
    let written: VarSet = (0..g.len())
        .filter(|&v| inside(v))
        .flat_map(|v| writes_at(g, beh, v))
        .collect();
    written.intersection(&consumed).cloned().collect()
}

fn fragment_region(g: &FlowGraph) -> Region {
    let first = g.edges()[g.out_edges(g.source())[0]].dst;
    let last = g.edges()[g.in_edges(g.sink())[0]].src;
    Region {
        entry: g.node_id(first).to_string(),
        exit: g.node_id(last).to_string(),
        members: (0..g.len())
            .filter(|&v| !g.kind(v).is_event())
            .map(|v| g.node_id(v).to_string())
            .collect(),
    }
}

pub fn external_reads_paths(fragment: &FlowGraph, beh: &Behaviors) -> VarSet {
    dataflow_in_paths(fragment, &fragment_region(fragment), beh)
}

/// Intersection, over every assignment of one branch to each exclusive
/// split, of the variables written by the nodes that assignment executes.
pub fn guaranteed_writes_choices(fragment: &FlowGraph, beh: &Behaviors) -> VarSet {
    let g = fragment;
    let inside = |v: usize| !g.kind(v).is_event();
    let splits: Vec<(usize, Vec<usize>)> = (0..g.len())
        .filter(|&v| g.kind(v) == ElementKind::ExclusiveGateway)
        .map(|v| (v, g.successors(v).filter(|&s| inside(s)).collect::<Vec<_>>()))
        .filter(|(_, succ)| succ.len() > 1)
        .collect();
    assert!(splits.len() <= 16, "too many exclusive splits to enumerate");
    let entry = g.edges()[g.out_edges(g.source())[0]].dst;

    let mut result: Option<VarSet> = None;
    let mut choice = vec![0usize; splits.len()];
    loop {
        let chosen: BTreeMap<usize, usize> = splits
            .iter()
            .zip(&choice)
            .map(|((v, succ), &c)| (*v, succ[c]))
            .collect();
        let mut seen = BTreeSet::new();
        let mut stack = vec![entry];
        while let Some(v) = stack.pop() {
            if !seen.insert(v) {
                continue;
            }
            match chosen.get(&v) {
                Some(&s) => stack.push(s),
                None => stack.extend(g.successors(v).filter(|&s| inside(s))),
            }
        }
        let written: VarSet = seen.iter().flat_map(|&v| writes_at(g, beh, v)).collect();
        result = Some(match result {
            None => written,
            Some(acc) => acc.intersection(&written).cloned().collect(),
        });

        // Advance the mixed-radix counter.
        let mut i = 0;
        loop {
            if i == splits.len() {
                return result.unwrap_or_default();
            }
            choice[i] += 1;
            if choice[i] < splits[i].1.len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}
