//! Placement constraints evaluated term by term on dense variable arrays:
//! `m[i][j]` instances, `n[l][i]` position-to-node indicators, `v[l'][a]`
//! link use per segment, `x[i][j]` flows hosted and `y[a]` link load.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use nfchain_placement::{Constraint, FlowSpec, NodeId, PlacementSolution, Topology};

const TOL: f64 = 1e-9;

struct Dense {
    node_ids: Vec<NodeId>,
    known: Vec<bool>,
    services: Vec<String>,
    /// `c[i]`
    cores: Vec<f64>,
    /// `p[i][j]`
    per_instance: Vec<Vec<f64>>,
    /// Directed arcs `(from, to)` with delay `d[a]` and capacity `h[a]`.
    arcs: Vec<(usize, usize)>,
    d: Vec<f64>,
    h: Vec<f64>,
}

impl Dense {
    fn build(topo: &Topology, flows: &[FlowSpec], sol: &PlacementSolution) -> Self {
        let mut ids: BTreeSet<NodeId> = topo.nodes.keys().copied().collect();
        ids.extend(sol.instances.keys().map(|(n, _)| *n));
        ids.extend(sol.assignments.values().flatten());
        ids.extend(sol.routes.values().flatten().flatten().flat_map(|(a, b)| [*a, *b]));
        ids.extend(flows.iter().flat_map(|f| [f.entry, f.exit]));
        let node_ids: Vec<NodeId> = ids.into_iter().collect();
        let known = node_ids.iter().map(|n| topo.nodes.contains_key(n)).collect();
        let mut svc: BTreeSet<String> = topo.flow_caps.keys().map(|(_, s)| s.clone()).collect();
        svc.extend(sol.instances.keys().map(|(_, s)| s.clone()));
        svc.extend(flows.iter().flat_map(|f| f.chain.iter().cloned()));
        let services: Vec<String> = svc.into_iter().collect();
        let cores = node_ids.iter().map(|n| f64::from(topo.nodes.get(n).copied().unwrap_or(0))).collect();
        let per_instance = node_ids
            .iter()
            .map(|n| services.iter().map(|s| f64::from(topo.flow_cap(*n, s))).collect())
            .collect();
        let idx = |n: NodeId| node_ids.iter().position(|x| *x == n).expect("indexed");
        let mut arcs = Vec::new();
        let (mut d, mut h) = (Vec::new(), Vec::new());
        for l in &topo.links {
            for (a, b) in [(l.a, l.b), (l.b, l.a)] {
                arcs.push((idx(a), idx(b)));
                d.push(l.delay_ms);
                h.push(l.capacity as f64);
            }
        }
        Self { node_ids, known, services, cores, per_instance, arcs, d, h }
    }

    fn node(&self, n: NodeId) -> usize {
        self.node_ids.iter().position(|x| *x == n).expect("indexed")
    }

    fn service(&self, s: &str) -> usize {
        self.services.iter().position(|x| x == s).expect("indexed")
    }

    fn arc(&self, a: NodeId, b: NodeId) -> Option<usize> {
        let (a, b) = (self.node(a), self.node(b));
        self.arcs.iter().position(|x| *x == (a, b))
    }
}

/// Constraint families the candidate violates. A flow whose node
/// selection is malformed is reported once and contributes nothing else.
pub fn violated(topo: &Topology, flows: &[FlowSpec], sol: &PlacementSolution) -> BTreeSet<Constraint> {
    let dense = Dense::build(topo, flows, sol);
    let (nn, ns, na) = (dense.node_ids.len(), dense.services.len(), dense.arcs.len());
    let mut out = BTreeSet::new();
    let u = sol.utilization;

    let mut m = vec![vec![0.0; ns]; nn];
    for ((n, s), c) in &sol.instances {
        m[dense.node(*n)][dense.service(s)] += f64::from(*c);
    }
    for i in 0..nn {
        if m[i].iter().sum::<f64>() > dense.cores[i] {
            out.insert(Constraint::Cores);
        }
    }

    let spec: BTreeMap<u32, &FlowSpec> = flows.iter().map(|f| (f.id, f)).collect();
    let selected: BTreeSet<u32> = sol.assignments.keys().chain(sol.routes.keys()).copied().collect();
    let mut x = vec![vec![0.0; ns]; nn];
    let mut y = vec![0.0; na];
    for k in selected {
        let Some(f) = spec.get(&k) else {
            out.insert(Constraint::OneNode);
            continue;
        };
        let len = f.chain.len();
        let given = sol.assignments.get(&k).cloned().unwrap_or_default();
        let mut n = vec![vec![0.0; nn]; len];
        for (l, node) in given.iter().enumerate().take(len) {
            n[l][dense.node(*node)] += 1.0;
        }
        let one_each = given.len() == len
            && n.iter().all(|row| {
                let on_known: f64 = row.iter().zip(&dense.known).filter(|(_, k)| **k).map(|(v, _)| v).sum();
                let total: f64 = row.iter().sum();
                on_known == 1.0 && total == 1.0
            });
        if !one_each {
            out.insert(Constraint::OneNode);
            continue;
        }
        for (l, row) in n.iter().enumerate() {
            let j = dense.service(&f.chain[l]);
            for i in 0..nn {
                if row[i] > 0.0 {
                    if m[i][j] < 1.0 {
                        out.insert(Constraint::Instance);
                    }
                    x[i][j] += row[i];
                }
            }
        }

        // stop indicators: entry, chain positions, exit
        let mut stops = vec![vec![0.0; nn]; len + 2];
        stops[0][dense.node(f.entry)] = 1.0;
        stops[1..=len].clone_from_slice(&n);
        stops[len + 1][dense.node(f.exit)] = 1.0;

        let segs = sol.routes.get(&k).cloned().unwrap_or_default();
        if segs.len() != len + 1 {
            out.insert(Constraint::Path);
        }
        let mut delay = 0.0;
        for (l, seg) in segs.iter().enumerate() {
            let mut v = vec![0.0; na];
            let mut complete = true;
            for (a, b) in seg {
                match dense.arc(*a, *b) {
                    Some(arc) => v[arc] += 1.0,
                    None => complete = false,
                }
            }
            if !complete {
                out.insert(Constraint::Path);
            }
            for arc in 0..na {
                delay += v[arc] * dense.d[arc];
                y[arc] += v[arc] * f.bandwidth as f64;
            }
            if complete && l + 1 < stops.len() {
                for i in 0..nn {
                    let outflow: f64 = (0..na).filter(|a| dense.arcs[*a].0 == i).map(|a| v[a]).sum();
                    let inflow: f64 = (0..na).filter(|a| dense.arcs[*a].1 == i).map(|a| v[a]).sum();
                    if outflow - inflow != stops[l][i] - stops[l + 1][i] {
                        out.insert(Constraint::Path);
                    }
                }
            }
        }
        if delay > f.max_delay_ms + TOL {
            out.insert(Constraint::Delay);
        }
    }

    for i in 0..nn {
        for j in 0..ns {
            if x[i][j] == 0.0 {
                continue;
            }
            let cap = m[i][j] * dense.per_instance[i][j];
            if x[i][j] > cap {
                out.insert(Constraint::Capacity);
            }
            if x[i][j] > u * cap + TOL {
                out.insert(Constraint::CoreUtil);
            }
        }
    }
    for a in 0..na {
        if y[a] > u.min(1.0) * dense.h[a] + TOL {
            out.insert(Constraint::LinkUtil);
        }
    }
    out
}
