//! New-flow throughput with per-flow decisions at the controller versus
//! decisions inside the NFs.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use nfchain_core::control::{Deployment, GraphApp};
use nfchain_core::engine::InstanceTiming;
use nfchain_core::graph::ServiceGraph;
use nfchain_core::ids::HostId;
use nfchain_core::nf::Params;
use nfchain_core::sim::{self, NfSpec, RateSegment, RuleSetup, SimConfig, SimError, TrafficFlow};
use nfchain_core::tuple::FiveTuple;
use nfchain_core::{secs, to_secs, Nanos};
use nfchain_placement::par_map;

const GRAPH: &str = "vertex Fwd id=1 readonly=false\nedge SOURCE -> Fwd default\nedge Fwd -> SINK default\n";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BottleneckConfig {
    pub duration: Nanos,
    /// Flows that first leave before this are not counted.
    pub warmup: Nanos,
    pub controller_queue: usize,
    pub seed: u64,
}

impl Default for BottleneckConfig {
    fn default() -> Self {
        Self { duration: secs(3.0), warmup: secs(1.0), controller_queue: 16, seed: 1 }
    }
}

/// Flows per second leaving the system at one offered new-flow rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BottleneckPoint {
    pub offered: f64,
    pub centralized: f64,
    pub data_plane: f64,
}

/// One single-packet flow every `1 / rate` seconds.
fn workload(rate: f64, duration: Nanos) -> Vec<TrafficFlow> {
    let n = (rate * to_secs(duration)).floor() as u32;
    (0..n)
        .map(|i| {
            let start = secs(f64::from(i) / rate);
            TrafficFlow {
                label: i,
                tuple: FiveTuple::new(
                    Ipv4Addr::from(0x0a00_0000 + i),
                    Ipv4Addr::new(10, 255, 0, 1),
                    1024 + (i % 50_000) as u16,
                    80,
                    17,
                ),
                segments: vec![RateSegment { start, stop: start + secs(0.001), pps: 1000.0 }],
                packet_len: 128,
                payload: Vec::new(),
                tracked: false,
            }
        })
        .collect()
}

fn throughput(rate: f64, setup: RuleSetup, latency: Nanos, cfg: &BottleneckConfig) -> Result<f64, SimError> {
    let graph = ServiceGraph::parse_named("bottleneck", GRAPH).expect("static graph");
    let fwd = graph.services()[0].id;
    let mut c = SimConfig::new(Deployment::single_host(graph, 4), Box::new(GraphApp::new()));
    c.nfs = vec![NfSpec {
        service: fwd,
        host: HostId(0),
        kind: "forwarder".into(),
        params: Params::new(),
        timing: InstanceTiming::default(),
        count: 2,
    }];
    c.flows = workload(rate, cfg.duration);
    c.setup = setup;
    c.controller_latency = latency;
    c.controller_queue = cfg.controller_queue;
    c.duration = cfg.duration;
    c.seed = cfg.seed;
    let out = sim::run(c)?;
    let mut first: BTreeMap<u32, Nanos> = BTreeMap::new();
    for r in &out.egress {
        let t = first.entry(r.flow_label).or_insert(r.at);
        *t = (*t).min(r.at);
    }
    let counted = first.values().filter(|t| **t >= cfg.warmup).count();
    Ok(counted as f64 / to_secs(cfg.duration - cfg.warmup))
}

/// Egress new-flow rate in both modes for each offered rate. Rates run in
/// parallel with the `parallel` feature.
pub fn run_controller_bottleneck(
    rates: &[f64],
    controller_latency: Nanos,
    cfg: &BottleneckConfig,
) -> Result<Vec<BottleneckPoint>, SimError> {
    par_map(rates, |&offered| {
        Ok(BottleneckPoint {
            offered,
            centralized: throughput(offered, RuleSetup::OnMiss, controller_latency, cfg)?,
            data_plane: throughput(offered, RuleSetup::Prepopulate, controller_latency, cfg)?,
        })
    })
    .into_iter()
    .collect()
}
