//! Indexed problem data and the residual-capacity state shared by the
//! solvers.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use crate::model::{FlowSpec, NodeId, PlacementSolution, Topology};
use crate::verify::EPS;

pub(crate) struct Arc {
    pub to: usize,
    pub link: usize,
    pub delay: f64,
}

pub(crate) struct FlowData {
    pub entry: Option<usize>,
    pub exit: Option<usize>,
    pub chain: Vec<usize>,
    pub bw: u64,
    pub tmax: f64,
}

/// Topology and flows with nodes, services and directed links numbered.
pub(crate) struct Problem<'a> {
    pub flows: &'a [FlowSpec],
    pub nodes: Vec<NodeId>,
    pub services: Vec<String>,
    pub cores: Vec<u32>,
    /// `[node][service]` flows per instance.
    pub cap: Vec<Vec<u32>>,
    pub adj: Vec<Vec<Arc>>,
    /// Directed links as `(from, to)` node indices.
    pub links: Vec<(usize, usize)>,
    pub link_cap: Vec<u64>,
    /// Minimum delay between nodes, ignoring bandwidth.
    pub dist: Vec<Vec<f64>>,
    pub fdata: Vec<FlowData>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct State {
    pub free: Vec<u32>,
    pub inst: Vec<Vec<u32>>,
    pub load: Vec<Vec<u32>>,
    pub link: Vec<u64>,
}

/// One admitted flow: node per position and directed links per segment.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Placed {
    pub flow: usize,
    pub nodes: Vec<usize>,
    pub paths: Vec<Vec<usize>>,
}

/// Largest load within `u` of `capacity`.
pub(crate) fn limit(capacity: u64, u: f64) -> u64 {
    if u >= 1.0 {
        capacity
    } else {
        (capacity as f64 * u + EPS).floor() as u64
    }
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl<'a> Problem<'a> {
    pub fn new(topo: &Topology, flows: &'a [FlowSpec]) -> Self {
        let nodes: Vec<NodeId> = topo.nodes.keys().copied().collect();
        let idx: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let mut services: Vec<String> = topo.services().into_iter().collect();
        for f in flows {
            for s in &f.chain {
                if !services.contains(s) {
                    services.push(s.clone());
                }
            }
        }
        services.sort();
        let sidx: BTreeMap<&str, usize> = services.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let cores = nodes.iter().map(|n| topo.cores(*n)).collect();
        let cap = nodes.iter().map(|n| services.iter().map(|s| topo.flow_cap(*n, s)).collect()).collect();
        let mut adj: Vec<Vec<Arc>> = nodes.iter().map(|_| Vec::new()).collect();
        let mut links = Vec::new();
        let mut link_cap = Vec::new();
        for l in &topo.links {
            let (Some(&a), Some(&b)) = (idx.get(&l.a), idx.get(&l.b)) else { continue };
            for (x, y) in [(a, b), (b, a)] {
                adj[x].push(Arc { to: y, link: links.len(), delay: l.delay_ms });
                links.push((x, y));
                link_cap.push(l.capacity);
            }
        }
        for a in &mut adj {
            a.sort_by_key(|x| x.to);
        }
        let fdata = flows
            .iter()
            .map(|f| FlowData {
                entry: idx.get(&f.entry).copied(),
                exit: idx.get(&f.exit).copied(),
                chain: f.chain.iter().map(|s| sidx[s.as_str()]).collect(),
                bw: f.bandwidth,
                tmax: f.max_delay_ms,
            })
            .collect();
        let mut p = Problem { flows, nodes, services, cores, cap, adj, links, link_cap, dist: Vec::new(), fdata };
        p.dist = (0..p.nodes.len()).map(|s| p.dijkstra(s, |_| true).0).collect();
        p
    }

    pub fn empty_state(&self) -> State {
        let s = self.services.len();
        State {
            free: self.cores.clone(),
            inst: vec![vec![0; s]; self.nodes.len()],
            load: vec![vec![0; s]; self.nodes.len()],
            link: vec![0; self.links.len()],
        }
    }

    fn dijkstra(&self, src: usize, usable: impl Fn(usize) -> bool) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(Item(0.0, src));
        while let Some(Item(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for a in &self.adj[u] {
                if !usable(a.link) {
                    continue;
                }
                let nd = d + a.delay;
                if nd < dist[a.to] {
                    dist[a.to] = nd;
                    prev[a.to] = Some(a.link);
                    heap.push(Item(nd, a.to));
                }
            }
        }
        (dist, prev)
    }

    /// Minimum-delay path whose links stay within `u` of capacity after
    /// adding `bw`.
    pub fn route(&self, st: &State, from: usize, to: usize, bw: u64, u: f64) -> Option<(Vec<usize>, f64)> {
        if from == to {
            return Some((Vec::new(), 0.0));
        }
        let (dist, prev) = self.dijkstra(from, |l| st.link[l] + bw <= limit(self.link_cap[l], u));
        if !dist[to].is_finite() {
            return None;
        }
        let mut path = Vec::new();
        let mut cur = to;
        while cur != from {
            let l = prev[cur]?;
            path.push(l);
            cur = self.links[l].0;
        }
        path.reverse();
        Some((path, dist[to]))
    }

    /// Flows `m` instances of `s` on `n` may carry at utilization `u`.
    pub fn slots(&self, n: usize, s: usize, m: u32, u: f64) -> u32 {
        limit(u64::from(m * self.cap[n][s]), u) as u32
    }

    /// Instances to add so `(n, s)` can take one more flow within `u`, or
    /// `None` if no number of instances allows it.
    pub fn fresh_needed(&self, st: &State, n: usize, s: usize, u: f64) -> Option<u32> {
        if self.cap[n][s] == 0 {
            return None;
        }
        let want = st.load[n][s] + 1;
        (0..=st.free[n]).find(|extra| self.slots(n, s, st.inst[n][s] + extra, u) >= want)
    }

    pub fn can_host(&self, st: &State, n: usize, s: usize, u: f64) -> bool {
        self.fresh_needed(st, n, s, u).is_some()
    }

    /// An existing instance can take one more flow.
    pub fn has_spare(&self, st: &State, n: usize, s: usize, u: f64) -> bool {
        st.load[n][s] < self.slots(n, s, st.inst[n][s], u)
    }

    /// Adds one flow at `(n, s)`; returns the instances started. The caller
    /// must have checked [`Problem::can_host`].
    pub fn host(&self, st: &mut State, n: usize, s: usize, u: f64) -> u32 {
        let fresh = self.fresh_needed(st, n, s, u).expect("host checked");
        st.inst[n][s] += fresh;
        st.free[n] -= fresh;
        st.load[n][s] += 1;
        fresh
    }

    pub fn unhost(&self, st: &mut State, n: usize, s: usize, fresh: u32) {
        st.load[n][s] -= 1;
        st.inst[n][s] -= fresh;
        st.free[n] += fresh;
    }

    pub fn add_path(&self, st: &mut State, path: &[usize], bw: u64) {
        for l in path {
            st.link[*l] += bw;
        }
    }

    pub fn remove_path(&self, st: &mut State, path: &[usize], bw: u64) {
        for l in path {
            st.link[*l] -= bw;
        }
    }

    /// Instance counts after spending each node's free cores on its most
    /// utilized services, and the resulting instance utilization.
    #[allow(clippy::needless_range_loop)]
    pub fn spread(&self, st: &State) -> (Vec<Vec<u32>>, f64) {
        let mut inst = st.inst.clone();
        let mut worst: f64 = 0.0;
        for n in 0..self.nodes.len() {
            let util = |m: &[u32], s: usize| {
                let c = m[s] * self.cap[n][s];
                if c == 0 { 0.0 } else { f64::from(st.load[n][s]) / f64::from(c) }
            };
            for _ in 0..st.free[n] {
                let best = (0..self.services.len())
                    .filter(|s| st.load[n][*s] > 0)
                    .max_by(|a, b| util(&inst[n], *a).total_cmp(&util(&inst[n], *b)).then(b.cmp(a)));
                match best {
                    Some(s) => inst[n][s] += 1,
                    None => break,
                }
            }
            for s in 0..self.services.len() {
                worst = worst.max(util(&inst[n], s));
            }
        }
        (inst, worst)
    }

    pub fn link_util(&self, st: &State) -> f64 {
        st.link.iter().zip(&self.link_cap).map(|(u, c)| *u as f64 / *c as f64).fold(0.0, f64::max)
    }

    /// Objective value of a state: spread instance utilization or link
    /// utilization, whichever is larger.
    pub fn utilization(&self, st: &State) -> f64 {
        self.spread(st).1.max(self.link_util(st))
    }

    pub fn solution(&self, st: &State, placed: &[Placed]) -> PlacementSolution {
        let (inst, core_u) = self.spread(st);
        let mut sol = PlacementSolution { utilization: core_u.max(self.link_util(st)), ..Default::default() };
        for (n, row) in inst.iter().enumerate() {
            for (s, c) in row.iter().enumerate() {
                if *c > 0 {
                    sol.instances.insert((self.nodes[n], self.services[s].clone()), *c);
                }
            }
        }
        for p in placed {
            let id = self.flows[p.flow].id;
            sol.assignments.insert(id, p.nodes.iter().map(|n| self.nodes[*n]).collect());
            sol.routes.insert(
                id,
                p.paths
                    .iter()
                    .map(|path| path.iter().map(|l| (self.nodes[self.links[*l].0], self.nodes[self.links[*l].1])).collect())
                    .collect(),
            );
        }
        sol
    }
}
