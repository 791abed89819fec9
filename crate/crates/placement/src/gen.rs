//! Seeded random instances for comparisons and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{FlowSpec, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceShape {
    pub nodes: u32,
    pub flows: u32,
    pub min_chain: usize,
    pub max_chain: usize,
    pub cores: u32,
    /// Services `J1..=Jn`; chains keep this order.
    pub services: usize,
    /// Chords added to the ring.
    pub extra_links: usize,
    /// Flows per instance for every service but the last.
    pub flow_cap: u32,
    /// Flows per instance for the last service.
    pub last_flow_cap: u32,
    pub link_cap: (u64, u64),
    pub delay_ms: (u32, u32),
    pub bandwidth: (u64, u64),
    /// Added to the entry-to-exit shortest delay to form the bound.
    pub slack_ms: (u32, u32),
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self {
            nodes: 6,
            flows: 12,
            min_chain: 3,
            max_chain: 5,
            cores: 2,
            services: 5,
            extra_links: 3,
            flow_cap: 3,
            last_flow_cap: 2,
            link_cap: (6, 10),
            delay_ms: (1, 5),
            bandwidth: (1, 2),
            slack_ms: (4, 12),
        }
    }
}

pub fn random_instance(seed: u64, shape: &InstanceShape) -> (Topology, Vec<FlowSpec>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.nodes.max(1);
    let mut t = Topology::new();
    let services: Vec<String> = (1..=shape.services).map(|j| format!("J{j}")).collect();
    for i in 1..=n {
        t.add_node(i, shape.cores);
        for (j, s) in services.iter().enumerate() {
            let p = if j + 1 == services.len() { shape.last_flow_cap } else { shape.flow_cap };
            t.set_flow_cap(i, s, p);
        }
    }
    let link = |t: &mut Topology, rng: &mut ChaCha8Rng, a: u32, b: u32| {
        if a != b && t.link(a, b).is_none() {
            let d = rng.gen_range(shape.delay_ms.0..=shape.delay_ms.1);
            let c = rng.gen_range(shape.link_cap.0..=shape.link_cap.1);
            t.add_link(a, b, f64::from(d), c);
        }
    };
    if n > 1 {
        for i in 1..=n {
            link(&mut t, &mut rng, i, i % n + 1);
        }
        for _ in 0..shape.extra_links {
            let a = rng.gen_range(1..=n);
            let b = rng.gen_range(1..=n);
            link(&mut t, &mut rng, a, b);
        }
    }
    let dist = all_pairs(&t);
    let mut flows = Vec::new();
    for k in 1..=shape.flows {
        let entry = rng.gen_range(1..=n);
        let exit = if n > 1 {
            loop {
                let e = rng.gen_range(1..=n);
                if e != entry {
                    break e;
                }
            }
        } else {
            entry
        };
        let len = rng.gen_range(shape.min_chain..=shape.max_chain).min(services.len());
        let mut chain: Vec<usize> = (0..services.len()).collect::<Vec<_>>().choose_multiple(&mut rng, len).copied().collect();
        chain.sort_unstable();
        let slack = rng.gen_range(shape.slack_ms.0..=shape.slack_ms.1);
        flows.push(FlowSpec {
            id: k,
            entry,
            exit,
            chain: chain.into_iter().map(|j| services[j].clone()).collect(),
            bandwidth: rng.gen_range(shape.bandwidth.0..=shape.bandwidth.1),
            max_delay_ms: dist[(entry - 1) as usize][(exit - 1) as usize] + f64::from(slack),
        });
    }
    (t, flows)
}

/// Floyd-Warshall over link delays; nodes must be numbered `1..=n`.
fn all_pairs(t: &Topology) -> Vec<Vec<f64>> {
    let n = t.nodes.len();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for l in &t.links {
        let (a, b) = ((l.a - 1) as usize, (l.b - 1) as usize);
        d[a][b] = d[a][b].min(l.delay_ms);
        d[b][a] = d[b][a].min(l.delay_ms);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_valid_and_seeded() {
        for seed in 0..20 {
            let (t, flows) = random_instance(seed, &InstanceShape::default());
            assert_eq!(t.validate(), Ok(()));
            assert_eq!(flows.len(), 12);
            for f in &flows {
                assert_eq!(f.validate(&t), Ok(()));
                assert!((3..=5).contains(&f.chain.len()));
            }
            assert_eq!(random_instance(seed, &InstanceShape::default()), (t, flows));
        }
    }
}
