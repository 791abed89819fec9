//! Joint NF placement and flow routing.
//!
//! A placement picks instance counts per (node, service), a node for every
//! position of each admitted flow's service chain, and the links each flow
//! takes between consecutive stops. [`check_solution`] verifies any such
//! placement against the full constraint set; the solvers trade optimality
//! for speed:
//!
//! - [`solve_exact`]: branch and bound, most flows admitted then lowest
//!   utilization;
//! - [`solve_division`]: exact search over small batches on residual
//!   capacity, each batch taking as few cores as it can;
//! - [`solve_greedy`]: first fit along each flow's shortest path.

pub mod division;
pub mod exact;
pub mod gen;
pub mod greedy;
pub mod io;
pub mod model;
mod state;
pub mod sweep;
pub mod verify;

pub use division::{solve_division, BatchReport, DivisionOutcome, DEFAULT_BATCH};
pub use exact::{solve_exact, ExactConfig, Objective, SolveError};
pub use greedy::solve_greedy;
pub use io::{parse_flows, parse_topology, ParseError};
pub use model::{FlowId, FlowSpec, Link, NodeId, PlacementSolution, Topology};
pub use sweep::{capacity_sweep, run_algorithm, sweep_table, Algorithm, SweepConfig, SweepRow};
pub use verify::{check_solution, measured_utilization, Constraint, Violation};

/// Maps `f` over `items`, in parallel with the `parallel` feature. Output
/// order follows input order either way.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential [`par_map`], for comparison.
pub fn seq_map<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}
