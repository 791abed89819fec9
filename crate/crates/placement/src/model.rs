//! Topologies, flow requests and placement solutions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

pub type NodeId = u32;
pub type FlowId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub delay_ms: f64,
    /// Bandwidth units per direction.
    pub capacity: u64,
}

/// Switches with cores, full-duplex links, and per-(node, service) flow
/// capacity of one instance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Topology {
    pub nodes: BTreeMap<NodeId, u32>,
    pub links: Vec<Link>,
    pub flow_caps: BTreeMap<(NodeId, String), u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub id: FlowId,
    pub entry: NodeId,
    pub exit: NodeId,
    pub chain: Vec<String>,
    pub bandwidth: u64,
    pub max_delay_ms: f64,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: NodeId, cores: u32) -> &mut Self {
        self.nodes.insert(id, cores);
        self
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId, delay_ms: f64, capacity: u64) -> &mut Self {
        self.links.push(Link { a, b, delay_ms, capacity });
        self
    }

    pub fn set_flow_cap(&mut self, node: NodeId, service: &str, flows: u32) -> &mut Self {
        self.flow_caps.insert((node, service.to_string()), flows);
        self
    }

    pub fn cores(&self, node: NodeId) -> u32 {
        self.nodes.get(&node).copied().unwrap_or(0)
    }

    /// Flows one instance of `service` on `node` can carry; zero if the node
    /// cannot run it.
    pub fn flow_cap(&self, node: NodeId, service: &str) -> u32 {
        self.flow_caps.get(&(node, service.to_string())).copied().unwrap_or(0)
    }

    pub fn link(&self, a: NodeId, b: NodeId) -> Option<&Link> {
        self.links.iter().find(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a))
    }

    pub fn neighbors(&self, n: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .links
            .iter()
            .filter_map(|l| if l.a == n { Some(l.b) } else if l.b == n { Some(l.a) } else { None })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn services(&self) -> BTreeSet<String> {
        self.flow_caps.keys().map(|(_, s)| s.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.nodes.is_empty() {
            errs.push("topology has no nodes".to_string());
        }
        let mut seen = BTreeSet::new();
        for l in &self.links {
            for n in [l.a, l.b] {
                if !self.nodes.contains_key(&n) {
                    errs.push(format!("link {}-{} uses unknown node {n}", l.a, l.b));
                }
            }
            if l.a == l.b {
                errs.push(format!("self-loop on node {}", l.a));
            }
            if !seen.insert((l.a.min(l.b), l.a.max(l.b))) {
                errs.push(format!("duplicate link {}-{}", l.a, l.b));
            }
            if l.delay_ms < 0.0 || !l.delay_ms.is_finite() {
                errs.push(format!("link {}-{} has negative delay", l.a, l.b));
            }
            if l.capacity == 0 {
                errs.push(format!("link {}-{} has zero capacity", l.a, l.b));
            }
        }
        for (n, _) in self.flow_caps.keys() {
            if !self.nodes.contains_key(n) {
                errs.push(format!("service capacity for unknown node {n}"));
            }
        }
        if let Some(&first) = self.nodes.keys().next() {
            let mut reached = BTreeSet::from([first]);
            let mut queue = VecDeque::from([first]);
            while let Some(n) = queue.pop_front() {
                for m in self.neighbors(n) {
                    if reached.insert(m) {
                        queue.push_back(m);
                    }
                }
            }
            if reached.len() != self.nodes.len() {
                errs.push("topology is not connected".to_string());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Multiplies cores, instance flow capacity and link capacity by `s`.
    pub fn scaled(&self, s: f64) -> Topology {
        let up = |x: f64| (x * s).round().max(1.0);
        Topology {
            nodes: self.nodes.iter().map(|(n, c)| (*n, if *c == 0 { 0 } else { up(f64::from(*c)) as u32 })).collect(),
            links: self.links.iter().map(|l| Link { capacity: up(l.capacity as f64) as u64, ..l.clone() }).collect(),
            flow_caps: self
                .flow_caps
                .iter()
                .map(|(k, p)| (k.clone(), if *p == 0 { 0 } else { up(f64::from(*p)) as u32 }))
                .collect(),
        }
    }
}

impl FlowSpec {
    pub fn validate(&self, topo: &Topology) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.chain.is_empty() {
            errs.push(format!("flow {} has an empty chain", self.id));
        }
        for n in [self.entry, self.exit] {
            if !topo.nodes.contains_key(&n) {
                errs.push(format!("flow {} uses unknown node {n}", self.id));
            }
        }
        if self.max_delay_ms.is_nan() || self.max_delay_ms <= 0.0 {
            errs.push(format!("flow {} needs a positive delay bound", self.id));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Instance counts, per-flow node choices and routes. Flows without an
/// assignment are not admitted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlacementSolution {
    pub instances: BTreeMap<(NodeId, String), u32>,
    /// Node per chain position.
    pub assignments: BTreeMap<FlowId, Vec<NodeId>>,
    /// Per segment (entry to first service, ..., last service to exit), the
    /// directed links traversed.
    pub routes: BTreeMap<FlowId, Vec<Vec<(NodeId, NodeId)>>>,
    /// Maximum utilization over links and instances.
    pub utilization: f64,
}

impl PlacementSolution {
    pub fn admitted(&self) -> BTreeSet<FlowId> {
        self.assignments.keys().copied().collect()
    }

    pub fn admitted_count(&self) -> usize {
        self.assignments.len()
    }

    pub fn cores_used(&self, node: NodeId) -> u32 {
        self.instances.iter().filter(|((n, _), _)| *n == node).map(|(_, c)| *c).sum()
    }

    /// One sorted line per placed chain position, per traversed link, and per
    /// instance group, followed by a summary line.
    pub fn dump(&self, flows: &[FlowSpec]) -> String {
        let chain: BTreeMap<FlowId, &[String]> = flows.iter().map(|f| (f.id, f.chain.as_slice())).collect();
        let mut lines = Vec::new();
        for (k, nodes) in &self.assignments {
            for (l, n) in nodes.iter().enumerate() {
                let svc = chain.get(k).and_then(|c| c.get(l)).map_or("?", String::as_str);
                lines.push(format!("assign flow={k} pos={} node={n} service={svc}", l + 1));
            }
        }
        for (k, segs) in &self.routes {
            for (l, seg) in segs.iter().enumerate() {
                for (a, b) in seg {
                    lines.push(format!("route flow={k} seg={} link={a}-{b}", l + 1));
                }
            }
        }
        for ((n, s), c) in &self.instances {
            if *c > 0 {
                lines.push(format!("instance node={n} service={s} count={c}"));
            }
        }
        lines.sort();
        let mut out = String::new();
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        let _ = writeln!(out, "summary admitted={} utilization={:.6}", self.admitted_count(), self.utilization);
        out
    }
}
