//! Constraint-by-constraint check of a concrete placement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::model::{FlowId, FlowSpec, NodeId, PlacementSolution, Topology};

/// Tolerance for floating-point sums of delays and utilizations.
pub const EPS: f64 = 1e-9;

/// The constraint families of the placement model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Constraint {
    /// Instances on a node fit its cores.
    Cores,
    /// A flow is only placed where an instance of the service runs.
    Instance,
    /// Exactly one node per chain position.
    OneNode,
    /// Each segment's links form a path between consecutive chain nodes.
    Path,
    /// Total path delay within the flow's bound.
    Delay,
    /// Flows per (node, service) within instance count times capacity.
    Capacity,
    /// Link load within `U` of capacity, with `U` capped at one.
    LinkUtil,
    /// Instance load within `U`.
    CoreUtil,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: Constraint,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.constraint, self.detail)
    }
}

/// Checks every constraint; returns all violations found.
pub fn check_solution(topo: &Topology, flows: &[FlowSpec], sol: &PlacementSolution) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut v = |constraint: Constraint, detail: String| out.push(Violation { constraint, detail });
    let by_id: BTreeMap<FlowId, &FlowSpec> = flows.iter().map(|f| (f.id, f)).collect();

    let mut per_node: BTreeMap<NodeId, u32> = BTreeMap::new();
    for ((n, _), c) in &sol.instances {
        *per_node.entry(*n).or_default() += c;
    }
    for (n, used) in &per_node {
        if *used > topo.cores(*n) {
            v(Constraint::Cores, format!("node {n} runs {used} instances on {} cores", topo.cores(*n)));
        }
    }

    let mut load: BTreeMap<(NodeId, String), u32> = BTreeMap::new();
    let mut link_load: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
    let admitted: BTreeSet<FlowId> = sol.assignments.keys().chain(sol.routes.keys()).copied().collect();
    for k in admitted {
        let Some(f) = by_id.get(&k) else {
            v(Constraint::OneNode, format!("flow {k} is not requested"));
            continue;
        };
        let nodes = sol.assignments.get(&k).map(Vec::as_slice).unwrap_or(&[]);
        if nodes.len() != f.chain.len() {
            v(Constraint::OneNode, format!("flow {k} places {} of {} services", nodes.len(), f.chain.len()));
            continue;
        }
        if let Some(n) = nodes.iter().find(|n| !topo.nodes.contains_key(n)) {
            v(Constraint::OneNode, format!("flow {k} uses unknown node {n}"));
            continue;
        }
        for (l, (n, svc)) in nodes.iter().zip(&f.chain).enumerate() {
            if sol.instances.get(&(*n, svc.clone())).copied().unwrap_or(0) == 0 {
                v(Constraint::Instance, format!("flow {k} position {} on node {n} without {svc}", l + 1));
            }
            *load.entry((*n, svc.clone())).or_default() += 1;
        }

        // entry, chain nodes, exit
        let mut stops = vec![f.entry];
        stops.extend(nodes);
        stops.push(f.exit);
        let segs = sol.routes.get(&k).map(Vec::as_slice).unwrap_or(&[]);
        if segs.len() != f.chain.len() + 1 {
            v(Constraint::Path, format!("flow {k} has {} route segments, expected {}", segs.len(), f.chain.len() + 1));
        }
        let mut delay = 0.0;
        for (l, seg) in segs.iter().enumerate() {
            let mut balance: BTreeMap<NodeId, i64> = BTreeMap::new();
            let mut ok = true;
            for &(a, b) in seg {
                match topo.link(a, b) {
                    Some(link) => {
                        delay += link.delay_ms;
                        *link_load.entry((a, b)).or_default() += f.bandwidth;
                    }
                    None => {
                        v(Constraint::Path, format!("flow {k} segment {} uses missing link {a}-{b}", l + 1));
                        ok = false;
                    }
                }
                *balance.entry(a).or_default() += 1;
                *balance.entry(b).or_default() -= 1;
            }
            if let (Some(&from), Some(&to)) = (stops.get(l), stops.get(l + 1)) {
                if from != to {
                    *balance.entry(from).or_default() -= 1;
                    *balance.entry(to).or_default() += 1;
                }
                if ok && balance.values().any(|x| *x != 0) {
                    v(Constraint::Path, format!("flow {k} segment {} does not connect {from} to {to}", l + 1));
                }
            }
        }
        if delay > f.max_delay_ms + EPS {
            v(Constraint::Delay, format!("flow {k} delay {delay:.3} ms exceeds {} ms", f.max_delay_ms));
        }
    }

    for ((n, svc), flows_here) in &load {
        let m = sol.instances.get(&(*n, svc.clone())).copied().unwrap_or(0);
        let cap = u64::from(m) * u64::from(topo.flow_cap(*n, svc));
        if u64::from(*flows_here) > cap {
            v(Constraint::Capacity, format!("node {n} {svc}: {flows_here} flows over capacity {cap}"));
        }
        if f64::from(*flows_here) > sol.utilization * cap as f64 + EPS {
            v(Constraint::CoreUtil, format!("node {n} {svc} utilization above {}", sol.utilization));
        }
    }
    for ((a, b), used) in &link_load {
        if let Some(link) = topo.link(*a, *b) {
            // utilization above one would let a link carry more than it can
            if *used as f64 > sol.utilization.min(1.0) * link.capacity as f64 + EPS {
                v(Constraint::LinkUtil, format!("link {a}-{b} carries {used} of {} at utilization {}", link.capacity, sol.utilization));
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Largest link or instance utilization actually incurred by `sol`.
pub fn measured_utilization(topo: &Topology, flows: &[FlowSpec], sol: &PlacementSolution) -> f64 {
    let by_id: BTreeMap<FlowId, &FlowSpec> = flows.iter().map(|f| (f.id, f)).collect();
    let mut load: BTreeMap<(NodeId, &str), u32> = BTreeMap::new();
    let mut links: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
    for (k, nodes) in &sol.assignments {
        let Some(f) = by_id.get(k) else { continue };
        for (n, s) in nodes.iter().zip(&f.chain) {
            *load.entry((*n, s.as_str())).or_default() += 1;
        }
        for seg in sol.routes.get(k).into_iter().flatten() {
            for l in seg {
                *links.entry(*l).or_default() += f.bandwidth;
            }
        }
    }
    let mut u: f64 = 0.0;
    for ((n, s), c) in load {
        let cap = f64::from(sol.instances.get(&(n, s.to_string())).copied().unwrap_or(0)) * f64::from(topo.flow_cap(n, s));
        if cap > 0.0 {
            u = u.max(f64::from(c) / cap);
        }
    }
    for ((a, b), used) in links {
        if let Some(l) = topo.link(a, b) {
            u = u.max(used as f64 / l.capacity as f64);
        }
    }
    u
}
