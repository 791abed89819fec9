//! NF manager data path: buffer accounting under parallel dispatch,
//! queue-depth balancing, and the flow-controller miss path.

mod support;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use nfchain_core::engine::{Effect, EngineConfig, InstanceTiming, NfManager};
use nfchain_core::flow_table::{Action, TableContext};
use nfchain_core::ids::{HostId, InstanceId};
use nfchain_core::nf::{NetworkFunction, NfContext, PacketVerdict, PacketView};
use nfchain_core::packet::PacketMeta;
use nfchain_core::tuple::FiveTuple;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::ledger::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parallel_dispatch_frees_every_buffer_once_and_resolves_verdicts(
        members in 1u16..=4,
        copies in proptest::collection::vec(1u32..=3, 4),
        salt in any::<u64>(),
        seed in any::<u64>(),
    ) {
        check_ledger(members, &copies, salt, 400, seed).map_err(TestCaseError::fail)?;
    }
}

// ---- queue-depth balancing -------------------------------------------------

struct Pass;

impl NetworkFunction for Pass {
    fn handle_packet(&mut self, _: &mut NfContext, _: &mut PacketView<'_>) -> PacketVerdict {
        PacketVerdict::Default
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Finish(InstanceId),
    Arrive(u64),
}

#[test]
fn queue_depth_keeps_replicas_within_two_packets() {
    const SERVICE: u64 = 10_000;
    const PACKETS: u64 = 10_000;
    let t = table(vec![rule(eth(0), vec![Action::ToService(s(1))]), rule(s(1), vec![Action::OutPort(eth(1))])], &[(1, false)], 2);
    let mut m = NfManager::new(HostId(0), t, BTreeMap::from([(s(1), false)]), EngineConfig::default());
    let ids = [InstanceId(1), InstanceId(2), InstanceId(3)];
    for id in ids {
        m.register_nf(id, s(1), false, Box::new(Pass), InstanceTiming { service: SERVICE, delay: 0 }, 0).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut events = BinaryHeap::new();
    // bursty arrivals at 95% of the three replicas' capacity
    let mean_gap = SERVICE as f64 / 3.0 / 0.95;
    let mut at = 0u64;
    for i in 0..PACKETS {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        at += (-u.ln() * mean_gap) as u64;
        events.push(Reverse((at, Ev::Arrive(i))));
    }
    let (mut worst, mut deepest, mut egress) = (0usize, 0usize, 0u64);
    while let Some(Reverse((now, ev))) = events.pop() {
        match ev {
            Ev::Arrive(i) => m.rx_dispatch(eth(0), &packet(i, (i % 97) as u32), PacketMeta::default(), now),
            Ev::Finish(id) => {
                assert_eq!(m.finish_service(id, now), 0);
                m.tx_collect(now);
            }
        }
        for e in m.take_effects() {
            if let Effect::Egress { .. } = e {
                egress += 1;
            }
        }
        for id in ids {
            if !m.is_busy(id) {
                if let Some(st) = m.start_service(id, now) {
                    events.push(Reverse((now + st, Ev::Finish(id))));
                }
            }
        }
        let depths: Vec<usize> = ids.iter().map(|i| m.rx_depth(*i)).collect();
        let (lo, hi) = (*depths.iter().min().unwrap(), *depths.iter().max().unwrap());
        worst = worst.max(hi - lo);
        deepest = deepest.max(hi);
    }
    assert!(worst <= 2, "depth spread {worst}");
    assert!(deepest >= 3, "load never queued (max depth {deepest})");
    assert_eq!(egress, PACKETS);
    let per: Vec<u64> = ids.iter().map(|i| m.processed(*i)).collect();
    assert!(per.iter().all(|p| *p > PACKETS / 5), "{per:?}");
}

// ---- miss path -------------------------------------------------------------

fn requests(effects: &[Effect]) -> Vec<(u64, FiveTuple)> {
    effects
        .iter()
        .filter_map(|e| match e {
            Effect::ControllerRequest { request, flow, .. } => Some((*request, *flow)),
            _ => None,
        })
        .collect()
}

#[test]
fn buffered_packets_replay_in_arrival_order_per_flow() {
    let t = table(vec![], &[], 2);
    let mut m = NfManager::new(HostId(0), t.clone(), BTreeMap::new(), EngineConfig::default());
    // A1 B1 A2 B2 A3 interleaved
    let order = [(0u64, 1u32), (1, 2), (2, 1), (3, 2), (4, 1)];
    for (id, f) in order {
        m.rx_dispatch(eth(0), &packet(id, f), PacketMeta { packet_id: id, ..PacketMeta::default() }, 0);
    }
    let reqs = requests(&m.take_effects());
    assert_eq!(reqs.len(), 2, "one request per flow");
    assert_eq!(m.pending_misses(), 5);

    let mut ctx = TableContext::default();
    ctx.ports.extend([eth(0), eth(1)]);
    ctx.allow(eth(0), Action::OutPort(eth(1)));
    t.modify(|tb| tb.install(rule(eth(0), vec![Action::OutPort(eth(1))]), &ctx)).unwrap();

    let (req_a, flow_a) = reqs[0];
    let (req_b, flow_b) = reqs[1];
    // a reply with the wrong request id is ignored
    m.controller_reply(&flow_b, req_a, 0);
    assert_eq!(m.pending_misses(), 5);
    m.controller_reply(&flow_b, req_b, 0);
    m.controller_reply(&flow_a, req_a, 0);
    let ids: Vec<u64> = m
        .take_effects()
        .into_iter()
        .filter_map(|e| match e {
            Effect::Egress { meta, .. } => Some(meta.packet_id),
            _ => None,
        })
        .collect();
    assert_eq!(ids, vec![1, 3, 0, 2, 4]);
    assert_eq!(m.counters().get("replayed"), 5);

    // later packets take the installed rule without asking again
    m.rx_dispatch(eth(0), &packet(9, 1), PacketMeta::default(), 0);
    assert!(requests(&m.take_effects()).is_empty());
    assert_eq!(m.counters().get("controller_requests"), 2);
    assert_eq!(m.in_flight(), 0);
}

#[test]
fn failed_request_drops_buffered_packets() {
    let mut m = NfManager::new(HostId(0), table(vec![], &[], 2), BTreeMap::new(), EngineConfig::default());
    for i in 0..3 {
        m.rx_dispatch(eth(0), &packet(i, 7), PacketMeta::default(), 0);
    }
    let (req, flow) = requests(&m.take_effects())[0];
    m.controller_failed(&flow, req, "drop_controller_timeout", 0);
    assert_eq!(m.counters().get("drop_controller_timeout"), 3);
    assert_eq!(m.in_flight(), 0);
    assert_eq!(m.pool().stats().frees, 3);
}
