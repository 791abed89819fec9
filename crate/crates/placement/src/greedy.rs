//! First-fit along each flow's shortest path, spilling to neighbours of
//! the path when no path node can take a service.

use crate::exact::{validate, SolveError};
use crate::model::{FlowSpec, PlacementSolution, Topology};
use crate::state::{Placed, Problem, State};
use crate::verify::EPS;

pub fn solve_greedy(topo: &Topology, flows: &[FlowSpec]) -> Result<PlacementSolution, SolveError> {
    validate(topo, flows)?;
    let p = Problem::new(topo, flows);
    let mut st = p.empty_state();
    let order: Vec<usize> = (0..flows.len()).collect();
    let placed = greedy_on(&p, &mut st, &order);
    Ok(p.solution(&st, &placed))
}

/// Places `flows` in order on top of `st`, returning the admitted ones.
pub(crate) fn greedy_on(p: &Problem<'_>, st: &mut State, flows: &[usize]) -> Vec<Placed> {
    let mut out = Vec::new();
    for &k in flows {
        let mut trial = st.clone();
        if let Some(placed) = place_one(p, &mut trial, k) {
            *st = trial;
            out.push(placed);
        }
    }
    out
}

fn place_one(p: &Problem<'_>, st: &mut State, k: usize) -> Option<Placed> {
    let f = &p.fdata[k];
    let (entry, exit) = (f.entry?, f.exit?);
    let (spine, _) = p.route(st, entry, exit, f.bw, 1.0)?;
    let mut path_nodes = vec![entry];
    path_nodes.extend(spine.iter().map(|l| p.links[*l].1));

    let mut nodes = Vec::with_capacity(f.chain.len());
    let mut at = 0;
    for &s in &f.chain {
        let on_path = (at..path_nodes.len()).find(|&i| p.can_host(st, path_nodes[i], s, 1.0));
        let chosen = match on_path {
            Some(i) => {
                at = i;
                path_nodes[i]
            }
            None => (at..path_nodes.len()).find_map(|i| {
                p.adj[path_nodes[i]]
                    .iter()
                    .map(|a| a.to)
                    .find(|n| !path_nodes.contains(n) && p.can_host(st, *n, s, 1.0))
                    .inspect(|_| at = i)
            })?,
        };
        p.host(st, chosen, s, 1.0);
        nodes.push(chosen);
    }

    let mut paths = Vec::with_capacity(nodes.len() + 1);
    let mut delay = 0.0;
    let mut prev = entry;
    for &n in nodes.iter().chain(std::iter::once(&exit)) {
        let (path, d) = p.route(st, prev, n, f.bw, 1.0)?;
        p.add_path(st, &path, f.bw);
        delay += d;
        paths.push(path);
        prev = n;
    }
    (delay <= f.tmax + EPS).then_some(Placed { flow: k, nodes, paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::check_solution;

    fn flow(id: u32) -> FlowSpec {
        FlowSpec { id, entry: 1, exit: 3, chain: vec!["A".into(), "B".into()], bandwidth: 1, max_delay_ms: 50.0 }
    }

    fn line() -> Topology {
        let mut t = Topology::new();
        for n in 1..=3 {
            t.add_node(n, 1).set_flow_cap(n, "A", 1).set_flow_cap(n, "B", 1);
        }
        t.add_node(4, 1).set_flow_cap(4, "B", 1);
        t.add_link(1, 2, 1.0, 10).add_link(2, 3, 1.0, 10).add_link(3, 4, 1.0, 10);
        t
    }

    #[test]
    fn single_flow_lands_on_path_nodes() {
        let t = line();
        let sol = solve_greedy(&t, &[flow(1)]).unwrap();
        assert_eq!(sol.assignments[&1], vec![1, 2]);
        assert_eq!(check_solution(&t, &[flow(1)], &sol), Ok(()));
    }

    #[test]
    fn admits_up_to_the_capacity_and_spills_to_neighbours() {
        let t = line();
        let flows: Vec<FlowSpec> = (1..=5).map(flow).collect();
        let sol = solve_greedy(&t, &flows).unwrap();
        // four cores, one flow per instance, two services per flow
        assert_eq!(sol.admitted_count(), 2);
        assert_eq!(sol.assignments[&2], vec![3, 4]);
        assert_eq!(check_solution(&t, &flows, &sol), Ok(()));
    }
}
