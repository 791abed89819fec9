//! Exact search over small batches of flows against residual capacity.

use crate::exact::{search, validate, ExactConfig, Objective, SolveError};
use crate::greedy::greedy_on;
use crate::model::{FlowSpec, PlacementSolution, Topology};
use crate::state::{Placed, Problem};

pub const DEFAULT_BATCH: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchReport {
    pub flows: usize,
    pub admitted: usize,
    /// Cores newly taken by this batch.
    pub cores: u64,
    /// Bandwidth units newly reserved by this batch, summed over links.
    pub bandwidth: u64,
    /// The exact search ran out of budget and greedy placed the batch.
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivisionOutcome {
    pub solution: PlacementSolution,
    pub batches: Vec<BatchReport>,
}

impl DivisionOutcome {
    pub fn fallbacks(&self) -> usize {
        self.batches.iter().filter(|b| b.fell_back).count()
    }
}

pub fn solve_division(
    topo: &Topology,
    flows: &[FlowSpec],
    batch: usize,
    cfg: ExactConfig,
) -> Result<DivisionOutcome, SolveError> {
    validate(topo, flows)?;
    let p = Problem::new(topo, flows);
    let mut st = p.empty_state();
    let mut placed: Vec<Placed> = Vec::new();
    let mut batches = Vec::new();
    let order: Vec<usize> = (0..flows.len()).collect();
    let cfg = ExactConfig { objective: Objective::Admitted, ..cfg };
    for chunk in order.chunks(batch.max(1)) {
        // nodes with nothing left to offer are dropped from placement,
        // but stay available for transit
        let mask: Vec<bool> = (0..p.nodes.len())
            .map(|n| st.free[n] > 0 || (0..p.services.len()).any(|s| p.has_spare(&st, n, s, 1.0)))
            .collect();
        let before = st.clone();
        let (got, fell_back) = match search(&p, &st, chunk, &mask, cfg) {
            Ok(Some((got, next))) => {
                st = next;
                (got, false)
            }
            Ok(None) => (Vec::new(), false),
            Err(_) => (greedy_on(&p, &mut st, chunk), true),
        };
        batches.push(BatchReport {
            flows: chunk.len(),
            admitted: got.len(),
            cores: before.free.iter().zip(&st.free).map(|(a, b)| u64::from(a - b)).sum(),
            bandwidth: st.link.iter().zip(&before.link).map(|(a, b)| a - b).sum(),
            fell_back,
        });
        placed.extend(got);
    }
    placed.sort_by_key(|p| p.flow);
    Ok(DivisionOutcome { solution: p.solution(&st, &placed), batches })
}
