//! Solver comparison across uniformly scaled capacities.

use std::fmt::Write as _;

use crate::division::solve_division;
use crate::exact::{solve_exact, ExactConfig, SolveError};
use crate::greedy::solve_greedy;
use crate::model::{FlowSpec, PlacementSolution, Topology};
use crate::par_map;
use crate::verify::check_solution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Exact,
    Division,
    Greedy,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Exact => "exact",
            Algorithm::Division => "division",
            Algorithm::Greedy => "greedy",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Algorithm::Exact),
            "division" => Ok(Algorithm::Division),
            "greedy" => Ok(Algorithm::Greedy),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepConfig {
    pub batch: usize,
    pub exact: ExactConfig,
    /// Exact search runs only up to this many flows.
    pub exact_max_flows: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { batch: crate::division::DEFAULT_BATCH, exact: ExactConfig { node_budget: 2_000_000, ..ExactConfig::default() }, exact_max_flows: 12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scale: f64,
    pub algorithm: Algorithm,
    pub admitted: usize,
    pub utilization: f64,
    /// The solution passed the constraint check.
    pub verified: bool,
    /// The solver hit its search budget.
    pub truncated: bool,
}

/// Runs one solver, returning the solution and whether the budget ran out.
pub fn run_algorithm(
    algo: Algorithm,
    topo: &Topology,
    flows: &[FlowSpec],
    cfg: &SweepConfig,
) -> Result<(PlacementSolution, bool), SolveError> {
    match algo {
        Algorithm::Exact => match solve_exact(topo, flows, cfg.exact) {
            Ok(s) => Ok((s, false)),
            Err(SolveError::BudgetExceeded { best }) => Ok((*best, true)),
            Err(e) => Err(e),
        },
        Algorithm::Division => solve_division(topo, flows, cfg.batch, cfg.exact).map(|d| {
            let truncated = d.fallbacks() > 0;
            (d.solution, truncated)
        }),
        Algorithm::Greedy => solve_greedy(topo, flows).map(|s| (s, false)),
    }
}

/// Every solver on every scale; scales run in parallel when enabled.
pub fn capacity_sweep(
    topo: &Topology,
    flows: &[FlowSpec],
    scales: &[f64],
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>, SolveError> {
    let per_scale = par_map(scales, |&scale| -> Result<Vec<SweepRow>, SolveError> {
        let t = topo.scaled(scale);
        let mut rows = Vec::new();
        for algo in [Algorithm::Exact, Algorithm::Division, Algorithm::Greedy] {
            if algo == Algorithm::Exact && flows.len() > cfg.exact_max_flows {
                continue;
            }
            let (sol, truncated) = run_algorithm(algo, &t, flows, cfg)?;
            rows.push(SweepRow {
                scale,
                algorithm: algo,
                admitted: sol.admitted_count(),
                utilization: sol.utilization,
                verified: check_solution(&t, flows, &sol).is_ok(),
                truncated,
            });
        }
        Ok(rows)
    });
    let mut out = Vec::new();
    for r in per_scale {
        out.extend(r?);
    }
    Ok(out)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("scale algorithm admitted utilization verified\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{} {} {} {:.6} {}{}",
            r.scale,
            r.algorithm.name(),
            r.admitted,
            r.utilization,
            if r.verified { "ok" } else { "FAILED" },
            if r.truncated { " budget" } else { "" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{random_instance, InstanceShape};

    #[test]
    fn more_capacity_never_admits_fewer_with_division() {
        let (t, flows) = random_instance(2, &InstanceShape::default());
        let cfg = SweepConfig { exact_max_flows: 0, batch: 4, ..SweepConfig::default() };
        let rows = capacity_sweep(&t, &flows, &[1.0, 2.0], &cfg).unwrap();
        assert!(rows.iter().all(|r| r.verified));
        let div: Vec<usize> = rows.iter().filter(|r| r.algorithm == Algorithm::Division).map(|r| r.admitted).collect();
        assert!(div[0] <= div[1], "{rows:?}");
        assert!(sweep_table(&rows).starts_with("scale algorithm"));
    }
}
