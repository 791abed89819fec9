//! Branch-and-bound over node choices per chain position. Routes follow
//! the minimum-delay path with enough residual bandwidth, so a node choice
//! fixes the whole placement of a flow.

use thiserror::Error;

use crate::model::{FlowSpec, PlacementSolution, Topology};
use crate::state::{Placed, Problem, State};
use crate::verify::EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// Admit as many flows as possible, then minimize utilization.
    #[default]
    AdmittedThenUtilization,
    /// Every flow must be admitted; minimize utilization.
    Utilization,
    /// Admit as many flows as possible, then take the fewest new cores and
    /// the least bandwidth.
    Admitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactConfig {
    pub objective: Objective,
    /// Search nodes expanded before giving up.
    pub node_budget: u64,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self { objective: Objective::default(), node_budget: 20_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid input: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("no placement admits every flow")]
    Infeasible,
    #[error("search budget exhausted; best so far admits {} flows", .best.admitted_count())]
    BudgetExceeded { best: Box<PlacementSolution> },
}

pub(crate) fn validate(topo: &Topology, flows: &[FlowSpec]) -> Result<(), SolveError> {
    let mut errs = topo.validate().err().unwrap_or_default();
    let mut ids = std::collections::BTreeSet::new();
    for f in flows {
        if let Err(e) = f.validate(topo) {
            errs.extend(e);
        }
        if !ids.insert(f.id) {
            errs.push(format!("duplicate flow id {}", f.id));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(SolveError::Invalid(errs))
    }
}

pub fn solve_exact(topo: &Topology, flows: &[FlowSpec], cfg: ExactConfig) -> Result<PlacementSolution, SolveError> {
    validate(topo, flows)?;
    let p = Problem::new(topo, flows);
    let order: Vec<usize> = (0..flows.len()).collect();
    let mask = vec![true; p.nodes.len()];
    match search(&p, &p.empty_state(), &order, &mask, cfg) {
        Ok(Some((placed, st))) => Ok(p.solution(&st, &placed)),
        Ok(None) => Err(SolveError::Infeasible),
        Err(best) => {
            let (placed, st) = best.unwrap_or_else(|| (Vec::new(), p.empty_state()));
            Err(SolveError::BudgetExceeded { best: Box::new(p.solution(&st, &placed)) })
        }
    }
}

type Found = (Vec<Placed>, State);

/// Best placement of `flows` on top of `start`, choosing service nodes only
/// where `mask` is set. The admitted count is maximized first at full
/// capacity; utilization is then minimized by searching for the lowest
/// utilization level at which that count still fits. `Ok(None)` means no
/// placement admits every flow under [`Objective::Utilization`]; `Err`
/// carries the incumbent when the budget runs out.
pub(crate) fn search(
    p: &Problem<'_>,
    start: &State,
    flows: &[usize],
    mask: &[bool],
    cfg: ExactConfig,
) -> Result<Option<Found>, Option<Found>> {
    let must_admit = cfg.objective == Objective::Utilization;
    let mut budget = cfg.node_budget;
    let first = match count_search(p, start, flows, mask, 1.0, flows.len(), if must_admit { flows.len() } else { 0 }, &mut budget) {
        Ok(Some(f)) => f,
        Ok(None) => return Ok(None),
        Err(best) => return Err(best),
    };
    let count = first.0.len();
    let mut best_u = p.utilization(&first.1);
    let mut best = first;
    if count == 0 {
        return Ok(Some(best));
    }
    if cfg.objective == Objective::Admitted {
        let mut s = Search::new(p, flows, mask, 1.0, count, count, budget);
        s.frugal = Some((start.free.iter().sum(), cost(start.free.iter().sum(), &best.1)));
        s.best = Some(best);
        let mut st = start.clone();
        s.flow_step(0, &mut st);
        return Ok(s.best);
    }
    let floor = p.utilization(start);
    let levels: Vec<f64> = utilization_levels(p).into_iter().filter(|u| *u >= floor - EPS).collect();
    let (mut lo, mut hi) = (0, levels.partition_point(|u| *u < best_u - EPS));
    while lo < hi {
        let mid = (lo + hi) / 2;
        match count_search(p, start, flows, mask, levels[mid], count, count, &mut budget) {
            Ok(Some(f)) if f.0.len() == count => {
                best_u = p.utilization(&f.1);
                best = f;
                hi = levels.partition_point(|u| *u < best_u - EPS).min(mid);
            }
            Ok(_) => lo = mid + 1,
            Err(_) => return Err(Some(best)),
        }
    }
    Ok(Some(best))
}

/// Every value a link or instance utilization can take, ascending.
fn utilization_levels(p: &Problem<'_>) -> Vec<f64> {
    let mut out = Vec::new();
    let mut seen_caps = std::collections::BTreeSet::new();
    for c in &p.link_cap {
        seen_caps.insert(*c);
    }
    for (n, row) in p.cap.iter().enumerate() {
        for pc in row {
            for m in 1..=p.cores[n] {
                seen_caps.insert(u64::from(m * pc));
            }
        }
    }
    for c in seen_caps.into_iter().filter(|c| *c > 0) {
        for x in 1..=c {
            out.push(x as f64 / c as f64);
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() < EPS);
    out
}

/// Most flows admissible within utilization `u`, stopping early once
/// `target` flows fit. Placements admitting fewer than `least` flows are
/// not of interest.
#[allow(clippy::too_many_arguments)]
fn count_search(
    p: &Problem<'_>,
    start: &State,
    flows: &[usize],
    mask: &[bool],
    u: f64,
    target: usize,
    least: usize,
    budget: &mut u64,
) -> Result<Option<Found>, Option<Found>> {
    let mut s = Search::new(p, flows, mask, u, target, least, *budget);
    let mut st = start.clone();
    s.flow_step(0, &mut st);
    *budget = s.budget;
    if s.exceeded {
        Err(s.best)
    } else {
        Ok(s.best)
    }
}

fn hops(p: &Problem<'_>, from: usize, to: usize) -> Option<u64> {
    let mut seen = vec![false; p.nodes.len()];
    let mut frontier = vec![from];
    seen[from] = true;
    let mut h = 0;
    while !frontier.is_empty() {
        if frontier.contains(&to) {
            return Some(h);
        }
        let mut next = Vec::new();
        for n in frontier {
            for a in &p.adj[n] {
                if !seen[a.to] {
                    seen[a.to] = true;
                    next.push(a.to);
                }
            }
        }
        frontier = next;
        h += 1;
    }
    None
}

/// Cores taken out of `free_at_start` and bandwidth reserved in `st`.
fn cost(free_at_start: u32, st: &State) -> (u32, u64) {
    (free_at_start - st.free.iter().sum::<u32>(), st.link.iter().sum())
}

struct Search<'a, 'p> {
    p: &'a Problem<'p>,
    flows: &'a [usize],
    mask: &'a [bool],
    u: f64,
    target: usize,
    least: usize,
    /// Per flow, instances needed of each service.
    needs: Vec<Vec<u32>>,
    budget: u64,
    exceeded: bool,
    done: bool,
    current: Vec<Placed>,
    best: Option<Found>,
    /// When set, keep the admitted count at `least` and look for a cheaper
    /// placement: free cores at the start and the incumbent's cost.
    frugal: Option<(u32, (u32, u64))>,
    /// Per flow, bandwidth its shortest hop path from entry to exit reserves.
    min_bw: Vec<u64>,
}

impl<'a, 'p> Search<'a, 'p> {
    fn new(p: &'a Problem<'p>, flows: &'a [usize], mask: &'a [bool], u: f64, target: usize, least: usize, budget: u64) -> Self {
        let needs = flows
            .iter()
            .map(|&k| {
                let mut v = vec![0u32; p.services.len()];
                for s in &p.fdata[k].chain {
                    v[*s] += 1;
                }
                v
            })
            .collect();
        let min_bw = flows
            .iter()
            .map(|&k| {
                let f = &p.fdata[k];
                match (f.entry, f.exit) {
                    (Some(a), Some(b)) => hops(p, a, b).map_or(0, |h| h * f.bw),
                    _ => 0,
                }
            })
            .collect();
        Self {
            p,
            min_bw,
            flows,
            mask,
            u,
            target,
            least,
            needs,
            budget,
            exceeded: false,
            done: false,
            current: Vec::new(),
            best: None,
            frugal: None,
        }
    }

    /// Whether `m` of the flows from position `t` on could still fit.
    /// Relaxes away routing and which node hosts what: a flow counts if
    /// each of its services has a host within reach of its delay bound,
    /// and a set of flows counts if spare instance slots plus free cores
    /// cover its demand per service.
    fn fits(&self, t: usize, st: &State, m: usize) -> bool {
        if m == 0 {
            return true;
        }
        let p = self.p;
        let ns = p.services.len();
        let cores: u32 = (0..p.nodes.len()).filter(|n| self.mask[*n]).map(|n| st.free[n]).sum();
        let rest: Vec<&[u32]> = (t..self.flows.len())
            .filter(|&i| self.reachable(self.flows[i], st))
            .map(|i| self.needs[i].as_slice())
            .collect();
        if rest.len() < m {
            return false;
        }
        // fewest free cores that cover a demand of `d` more flows of `s`,
        // letting every node spend all of its free cores on `s`
        let cost: Vec<Vec<u32>> = (0..ns)
            .map(|s| {
                let top = rest.iter().map(|v| v[s] as usize).sum::<usize>();
                let mut dp = vec![u32::MAX; top + 1];
                dp[0] = 0;
                for n in (0..p.nodes.len()).filter(|n| self.mask[*n]) {
                    let inst = st.inst[n][s];
                    let gains: Vec<usize> = (0..=st.free[n])
                        .map(|e| p.slots(n, s, inst + e, self.u).saturating_sub(st.load[n][s]) as usize)
                        .collect();
                    let mut next = dp.clone();
                    for (have, c) in dp.iter().enumerate().filter(|(_, c)| **c != u32::MAX) {
                        for (e, g) in gains.iter().enumerate() {
                            let to = (have + g).min(top);
                            next[to] = next[to].min(c + e as u32);
                        }
                    }
                    dp = next;
                }
                for d in (0..top).rev() {
                    dp[d] = dp[d].min(dp[d + 1]);
                }
                dp
            })
            .collect();
        let need_cores = |d: &[u64]| -> Option<u32> {
            let mut c = 0u32;
            for s in 0..ns {
                c = c.checked_add(cost[s][d[s] as usize])?;
            }
            Some(c)
        };
        fn pick(
            rest: &[&[u32]],
            from: usize,
            left: usize,
            d: &mut Vec<u64>,
            ok: &dyn Fn(&[u64]) -> bool,
        ) -> bool {
            if left == 0 {
                return true;
            }
            for i in from..=rest.len() - left {
                for (x, y) in d.iter_mut().zip(rest[i]) {
                    *x += u64::from(*y);
                }
                let good = ok(d) && pick(rest, i + 1, left - 1, d, ok);
                for (x, y) in d.iter_mut().zip(rest[i]) {
                    *x -= u64::from(*y);
                }
                if good {
                    return true;
                }
            }
            false
        }
        let ok = |d: &[u64]| need_cores(d).is_some_and(|c| c <= cores);
        pick(&rest, 0, m, &mut vec![0; ns], &ok)
    }

    /// Whether flow `k` alone could still be placed, judging delay by
    /// unloaded shortest paths.
    fn reachable(&self, k: usize, st: &State) -> bool {
        let p = self.p;
        let f = &p.fdata[k];
        let (Some(entry), Some(exit)) = (f.entry, f.exit) else { return false };
        let n = p.nodes.len();
        let mut best = vec![f64::INFINITY; n];
        best[entry] = 0.0;
        let mut from = vec![entry];
        for &s in &f.chain {
            let mut next = vec![f64::INFINITY; n];
            for v in (0..n).filter(|v| self.mask[*v] && p.can_host(st, *v, s, self.u)) {
                next[v] = from.iter().map(|a| best[*a] + p.dist[*a][v]).fold(f64::INFINITY, f64::min);
            }
            best = next;
            from = (0..n).filter(|v| best[*v] + p.dist[*v][exit] <= f.tmax + EPS).collect();
            if from.is_empty() {
                return false;
            }
        }
        true
    }

    fn flow_step(&mut self, t: usize, st: &mut State) {
        if self.exceeded || self.done {
            return;
        }
        if self.budget == 0 {
            self.exceeded = true;
            return;
        }
        self.budget -= 1;
        let so_far = self.current.len();
        let want = if let Some((free, bound)) = self.frugal {
            let (cores, bw) = cost(free, st);
            let mut rest: Vec<u64> = self.min_bw[t..].to_vec();
            rest.sort_unstable();
            let owed: u64 = rest.iter().take(self.least.saturating_sub(so_far)).sum();
            if (cores, bw + owed) >= bound {
                return;
            }
            if t == self.flows.len() {
                if so_far >= self.least {
                    self.frugal = Some((free, cost(free, st)));
                    self.best = Some((self.current.clone(), st.clone()));
                }
                return;
            }
            self.least.saturating_sub(so_far)
        } else {
            if t == self.flows.len() {
                if so_far >= self.least && self.best.as_ref().is_none_or(|b| so_far > b.0.len()) {
                    self.best = Some((self.current.clone(), st.clone()));
                    self.done = so_far >= self.target;
                }
                return;
            }
            self.best.as_ref().map_or(self.least, |b| b.0.len() + 1).max(self.least).saturating_sub(so_far)
        };
        if want > self.flows.len() - t || !self.fits(t, st, want) {
            return;
        }
        let k = self.flows[t];
        if let Some(entry) = self.p.fdata[k].entry {
            let mut nodes = Vec::new();
            let mut paths = Vec::new();
            self.place(t, 0, entry, 0.0, st, &mut nodes, &mut paths);
        }
        self.flow_step(t + 1, st);
    }

    #[allow(clippy::too_many_arguments)]
    fn place(
        &mut self,
        t: usize,
        l: usize,
        prev: usize,
        delay: f64,
        st: &mut State,
        nodes: &mut Vec<usize>,
        paths: &mut Vec<Vec<usize>>,
    ) {
        if self.exceeded || self.done {
            return;
        }
        let p = self.p;
        let u = self.u;
        let k = self.flows[t];
        let f = &p.fdata[k];
        let Some(exit) = f.exit else { return };
        if l == f.chain.len() {
            let Some((path, d)) = p.route(st, prev, exit, f.bw, u) else { return };
            if delay + d > f.tmax + EPS {
                return;
            }
            p.add_path(st, &path, f.bw);
            paths.push(path);
            self.current.push(Placed { flow: k, nodes: nodes.clone(), paths: paths.clone() });
            self.flow_step(t + 1, st);
            self.current.pop();
            let path = paths.pop().expect("pushed above");
            p.remove_path(st, &path, f.bw);
            return;
        }
        let s = f.chain[l];
        let mut cands: Vec<usize> = (0..p.nodes.len())
            .filter(|&n| self.mask[n] && p.can_host(st, n, s, u))
            .filter(|&n| delay + p.dist[prev][n] + p.dist[n][exit] <= f.tmax + EPS)
            .collect();
        cands.sort_by(|a, b| {
            let key = |n: usize| (!p.has_spare(st, n, s, u), p.dist[prev][n] + p.dist[n][exit]);
            let (ka, kb) = (key(*a), key(*b));
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(b))
        });
        for n in cands {
            let Some((path, d)) = p.route(st, prev, n, f.bw, u) else { continue };
            if delay + d + p.dist[n][exit] > f.tmax + EPS {
                continue;
            }
            p.add_path(st, &path, f.bw);
            let fresh = p.host(st, n, s, u);
            if let Some((free, bound)) = self.frugal {
                if cost(free, st) >= bound {
                    p.unhost(st, n, s, fresh);
                    p.remove_path(st, &path, f.bw);
                    continue;
                }
            }
            nodes.push(n);
            paths.push(path);
            self.place(t, l + 1, n, delay + d, st, nodes, paths);
            let path = paths.pop().expect("pushed above");
            nodes.pop();
            p.unhost(st, n, s, fresh);
            p.remove_path(st, &path, f.bw);
            if self.done {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FlowSpec;
    use crate::verify::check_solution;

    fn flow(id: u32, entry: u32, exit: u32, chain: &[&str]) -> FlowSpec {
        FlowSpec {
            id,
            entry,
            exit,
            chain: chain.iter().map(|s| s.to_string()).collect(),
            bandwidth: 1,
            max_delay_ms: 100.0,
        }
    }

    #[test]
    fn prefers_the_entry_node_on_a_line() {
        let mut t = Topology::new();
        t.add_node(1, 1).add_node(2, 1).add_link(1, 2, 1.0, 10);
        t.set_flow_cap(1, "A", 2).set_flow_cap(2, "A", 2);
        let flows = [flow(1, 1, 1, &["A"])];
        let sol = solve_exact(&t, &flows, ExactConfig::default()).unwrap();
        assert_eq!(sol.assignments[&1], vec![1]);
        assert!(sol.routes[&1].iter().all(Vec::is_empty));
        assert_eq!(check_solution(&t, &flows, &sol), Ok(()));
    }

    #[test]
    fn triangle_shares_nothing_when_each_instance_holds_one_flow() {
        let mut t = Topology::new();
        for n in 1..=3 {
            t.add_node(n, 1).set_flow_cap(n, "A", 1);
        }
        t.add_link(1, 2, 1.0, 5).add_link(2, 3, 1.0, 5).add_link(1, 3, 1.0, 5);
        let flows = [flow(1, 1, 2, &["A"]), flow(2, 2, 3, &["A"])];
        let sol = solve_exact(&t, &flows, ExactConfig::default()).unwrap();
        assert_eq!(sol.admitted_count(), 2);
        assert_eq!(sol.instances.values().sum::<u32>(), 2);
        assert_eq!(check_solution(&t, &flows, &sol), Ok(()));
    }

    #[test]
    fn utilization_objective_reports_infeasible() {
        let mut t = Topology::new();
        t.add_node(1, 1).set_flow_cap(1, "A", 1);
        let flows = [flow(1, 1, 1, &["A"]), flow(2, 1, 1, &["A"])];
        let cfg = ExactConfig { objective: Objective::Utilization, ..ExactConfig::default() };
        assert_eq!(solve_exact(&t, &flows, cfg), Err(SolveError::Infeasible));
        let sol = solve_exact(&t, &flows, ExactConfig::default()).unwrap();
        assert_eq!(sol.admitted_count(), 1);
    }

    #[test]
    fn tiny_budget_reports_the_incumbent() {
        let mut t = Topology::new();
        t.add_node(1, 4).set_flow_cap(1, "A", 1);
        let flows: Vec<FlowSpec> = (0..4).map(|i| flow(i, 1, 1, &["A"])).collect();
        let cfg = ExactConfig { node_budget: 3, ..ExactConfig::default() };
        assert!(matches!(solve_exact(&t, &flows, cfg), Err(SolveError::BudgetExceeded { .. })));
    }

    #[test]
    fn invalid_input_is_rejected() {
        let t = Topology::new();
        assert!(matches!(solve_exact(&t, &[], ExactConfig::default()), Err(SolveError::Invalid(_))));
    }
}
