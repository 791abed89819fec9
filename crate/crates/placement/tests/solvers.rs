use nfchain_placement::gen::{random_instance, InstanceShape};
use nfchain_placement::io::{flows_to_text, topology_to_text};
use nfchain_placement::{
    check_solution, measured_utilization, parse_flows, parse_topology, solve_division, solve_exact, solve_greedy,
    ExactConfig, FlowSpec, Objective, PlacementSolution, SolveError, Topology,
};
use proptest::prelude::*;

fn small_shape() -> impl Strategy<Value = (u64, InstanceShape)> {
    (any::<u64>(), 3u32..=5, 2u32..=6, 1u32..=3, 1usize..=3).prop_map(|(seed, nodes, flows, cores, max_chain)| {
        let shape = InstanceShape { nodes, flows, cores, min_chain: 1, max_chain, extra_links: 1, ..InstanceShape::default() };
        (seed, shape)
    })
}

fn exact(t: &Topology, flows: &[FlowSpec]) -> PlacementSolution {
    match solve_exact(t, flows, ExactConfig::default()) {
        Ok(s) => s,
        Err(e) => panic!("exact search failed on a small instance: {e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_dominates_both_heuristics((seed, shape) in small_shape()) {
        let (t, flows) = random_instance(seed, &shape);
        let e = exact(&t, &flows);
        let d = solve_division(&t, &flows, 2, ExactConfig::default()).unwrap().solution;
        let g = solve_greedy(&t, &flows).unwrap();
        for s in [&e, &d, &g] {
            prop_assert_eq!(check_solution(&t, &flows, s), Ok(()));
        }
        prop_assert!(e.admitted_count() >= d.admitted_count());
        prop_assert!(e.admitted_count() >= g.admitted_count());
    }

    #[test]
    fn reported_utilization_covers_the_measured_load((seed, shape) in small_shape()) {
        let (t, flows) = random_instance(seed, &shape);
        let e = exact(&t, &flows);
        prop_assert!(measured_utilization(&t, &flows, &e) <= e.utilization + 1e-9);
    }

    #[test]
    fn instance_files_round_trip((seed, shape) in small_shape()) {
        let (t, flows) = random_instance(seed, &shape);
        prop_assert_eq!(parse_topology(&topology_to_text(&t)).unwrap(), t);
        prop_assert_eq!(parse_flows(&flows_to_text(&flows)).unwrap(), flows);
    }
}

#[test]
fn dumps_are_byte_stable() {
    let (t, flows) = random_instance(9, &InstanceShape { flows: 8, ..InstanceShape::default() });
    let runs: Vec<[String; 3]> = (0..2)
        .map(|_| {
            [
                exact(&t, &flows).dump(&flows),
                solve_division(&t, &flows, 4, ExactConfig::default()).unwrap().solution.dump(&flows),
                solve_greedy(&t, &flows).unwrap().dump(&flows),
            ]
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let lines: Vec<&str> = runs[0][0].lines().collect();
    let mut sorted = lines.clone();
    sorted.sort();
    assert_eq!(lines, sorted);
}

#[test]
fn utilization_objective_admits_everything_or_fails() {
    let (t, flows) = random_instance(4, &InstanceShape { flows: 3, ..InstanceShape::default() });
    let cfg = ExactConfig { objective: Objective::Utilization, ..ExactConfig::default() };
    match solve_exact(&t, &flows, cfg) {
        Ok(s) => assert_eq!(s.admitted_count(), flows.len()),
        Err(e) => assert_eq!(e, SolveError::Infeasible),
    }
    let more = solve_exact(&t.scaled(4.0), &flows, cfg).unwrap();
    assert_eq!(more.admitted_count(), flows.len());
    assert_eq!(check_solution(&t.scaled(4.0), &flows, &more), Ok(()));
}

#[test]
fn minimizing_utilization_never_costs_admissions() {
    let (t, flows) = random_instance(12, &InstanceShape { flows: 4, ..InstanceShape::default() });
    let default = exact(&t, &flows);
    let frugal = solve_exact(&t, &flows, ExactConfig { objective: Objective::Admitted, ..ExactConfig::default() }).unwrap();
    assert_eq!(default.admitted_count(), frugal.admitted_count());
    assert!(default.utilization <= frugal.utilization + 1e-9);
}
