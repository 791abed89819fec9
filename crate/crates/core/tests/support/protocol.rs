//! Random service graphs and cross-layer message sequences.

use std::net::Ipv4Addr;

use nfchain_core::control::{ControlPlane, Deployment, MessageError, TrustMode};
use nfchain_core::graph::{ServiceGraph, Vertex};
use nfchain_core::ids::{HostId, InstanceId, ServiceId};
use nfchain_core::message::{ControlMessage, MessageKind};
use nfchain_core::tuple::{FiveTuple, FlowPattern};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn s(n: u16) -> ServiceId {
    ServiceId::new(n).unwrap()
}

/// Services in topological order 1..=n; every edge points forward, so the
/// graph is acyclic, and each default walk ends at SINK.
pub fn random_graph(rng: &mut ChaCha8Rng, n: u16) -> ServiceGraph {
    let mut g = ServiceGraph::new("rand");
    for i in 1..=n {
        g.add_service(s(i), format!("N{i}"), rng.gen_bool(0.6)).unwrap();
    }
    let later = |i: u16, rng: &mut ChaCha8Rng| {
        let k = rng.gen_range(i + 1..=n + 1);
        if k > n { Vertex::Sink } else { Vertex::Service(s(k)) }
    };
    g.add_edge(Vertex::Source, Vertex::Service(s(1)), true);
    for i in 1..=n {
        let from = Vertex::Service(s(i));
        let to = later(i, rng);
        g.add_edge(from, to, true);
        for _ in 0..rng.gen_range(0..3) {
            let to = later(i, rng);
            if !g.has_edge(from, to) {
                g.add_edge(from, to, false);
            }
        }
    }
    for i in 2..=n {
        let v = Vertex::Service(s(i));
        if g.predecessors(v).is_empty() {
            let k = rng.gen_range(0..i);
            let from = if k == 0 { Vertex::Source } else { Vertex::Service(s(k)) };
            g.add_edge(from, v, false);
        }
    }
    g
}

pub fn random_flow(rng: &mut ChaCha8Rng) -> FlowPattern {
    let t = FiveTuple::new(Ipv4Addr::new(10, 0, 0, rng.gen_range(1..4)), Ipv4Addr::new(10, 9, 9, 9), 4000, 80, 6);
    match rng.gen_range(0..3) {
        0 => FlowPattern::ANY,
        1 => FlowPattern::exact(&t),
        _ => FlowPattern::ANY.with_src(t.src_ip),
    }
}

pub fn random_message(rng: &mut ChaCha8Rng, g: &ServiceGraph, n: u16) -> ControlMessage {
    let service = s(rng.gen_range(1..=n));
    let flow = random_flow(rng);
    let kind = match rng.gen_range(0..4) {
        0 => MessageKind::SkipMe { flow, service },
        1 => MessageKind::RequestMe { flow, service },
        _ => {
            let mut targets = g.vertices();
            targets.retain(|v| *v != Vertex::Source);
            MessageKind::ChangeDefault { flow, service, target: *targets.choose(rng).unwrap() }
        }
    };
    ControlMessage { kind, origin: InstanceId(1), from: service }
}

/// Applies `len` random messages and checks containment, idempotence and
/// rejection of ChangeDefault along non-edges.
pub fn run_sequence(seed: u64, len: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=8);
    let g = random_graph(&mut rng, n);
    ensure_eq!(g.validate(), Ok(()), "random graph is invalid");
    let mut cp = ControlPlane::new(Deployment::single_host(g.clone(), 64), TrustMode::Trusted).unwrap();
    cp.prepopulate().unwrap();
    for _ in 0..len {
        let m = random_message(&mut rng, &g, n);
        let before = cp.snapshot(HostId(0)).rule_set();
        let first = cp.apply_message(0, &m);
        if let MessageKind::ChangeDefault { service, target, .. } = &m.kind {
            if !g.has_edge(Vertex::Service(*service), *target) {
                ensure!(matches!(first, Err(MessageError::EdgeNotInGraph { .. })), "{:?} -> {:?}", m, first);
            }
        }
        match first {
            Ok(_) => {
                let bad = cp.check_containment();
                ensure!(bad.is_empty(), "{:?} broke containment: {:?}", m, bad);
                let once = cp.snapshot(HostId(0)).rule_set();
                ensure!(cp.apply_message(0, &m).is_ok());
                ensure_eq!(cp.snapshot(HostId(0)).rule_set(), once, "{:?} is not idempotent", m);
            }
            Err(_) => ensure_eq!(cp.snapshot(HostId(0)).rule_set(), before, "rejected {:?} changed tables", m),
        }
    }
    Ok(())
}
