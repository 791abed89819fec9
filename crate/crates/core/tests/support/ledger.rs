//! Scripted parallel pipelines and the verdict ledger that predicts where
//! every packet ends up.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use nfchain_core::engine::{Effect, EngineConfig, InstanceTiming, NfManager};
use nfchain_core::flow_table::{Action, FlowRule, FlowTable, MatchKey, SharedTable, TableContext, BASE_PRIORITY};
use nfchain_core::ids::{Endpoint, HostId, InstanceId, PortId, ServiceId};
use nfchain_core::nf::{NetworkFunction, NfContext, PacketVerdict, PacketView};
use nfchain_core::packet::{build_packet, PacketMeta, PROTO_UDP};
use nfchain_core::tuple::{FiveTuple, FlowPattern};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn s(n: u16) -> ServiceId {
    ServiceId::new(n).unwrap()
}

pub fn eth(i: u16) -> PortId {
    PortId::new(i)
}

pub fn tuple(n: u32) -> FiveTuple {
    FiveTuple::new(Ipv4Addr::from(0x0a00_0000 + n), Ipv4Addr::new(10, 9, 9, 9), 1000 + (n % 5000) as u16, 80, PROTO_UDP)
}

pub fn packet(id: u64, flow: u32) -> Vec<u8> {
    build_packet(&tuple(flow), 96, &id.to_be_bytes())
}

pub fn table(rules: Vec<FlowRule>, services: &[(u16, bool)], ports: u16) -> SharedTable {
    let mut ctx = TableContext::default();
    for (id, ro) in services {
        ctx.services.insert(s(*id), *ro);
    }
    for p in 0..ports {
        ctx.ports.insert(eth(p));
    }
    let mut t = FlowTable::new();
    for r in rules {
        for a in &r.actions {
            ctx.allow(r.key.ingress, *a);
        }
        t.install(r, &ctx).unwrap();
    }
    SharedTable::new(t)
}

pub fn rule(at: impl Into<Endpoint>, actions: Vec<Action>) -> FlowRule {
    FlowRule::new(MatchKey::new(at, FlowPattern::ANY), actions, BASE_PRIORITY)
}

/// Runs every instance at time zero until nothing moves, returning the
/// egress effects.
pub fn drain(m: &mut NfManager) -> Vec<(PortId, u64)> {
    let mut out = Vec::new();
    loop {
        let mut progressed = false;
        let ids: Vec<InstanceId> = m.instance_ids().collect();
        for id in ids {
            while m.start_service(id, 0).is_some() {
                m.finish_service(id, 0);
                progressed = true;
            }
        }
        m.tx_collect(0);
        for e in m.take_effects() {
            if let Effect::Egress { port, meta, .. } = e {
                out.push((port, meta.packet_id));
            }
        }
        if !progressed {
            return out;
        }
    }
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Verdict of `service` for packet `id`, under test `salt`.
pub fn verdict(salt: u64, id: u64, service: u16) -> PacketVerdict {
    match mix(salt ^ id.wrapping_mul(31) ^ u64::from(service) << 48) % 10 {
        0 => PacketVerdict::Discard,
        1 => PacketVerdict::SendTo(Endpoint::Port(eth(2))),
        2 => PacketVerdict::SendTo(Endpoint::Port(eth(3))),
        3 => PacketVerdict::SendTo(Endpoint::Port(eth(9))),
        4 => PacketVerdict::SendTo(Endpoint::Service(s(500))),
        _ => PacketVerdict::Default,
    }
}

struct Scripted {
    salt: u64,
}

impl NetworkFunction for Scripted {
    fn handle_packet(&mut self, ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict {
        let id = u64::from_be_bytes(pkt.payload()[..8].try_into().unwrap());
        verdict(self.salt, id, ctx.service().get())
    }
}

/// Where the packet should end up: `None` if dropped.
pub fn ledger_outcome(salt: u64, id: u64, members: u16) -> Option<PortId> {
    let vs: Vec<PacketVerdict> = (1..=members).map(|m| verdict(salt, id, m)).collect();
    if vs.contains(&PacketVerdict::Discard) {
        return None;
    }
    // services come before ports; lower ids first
    let lowest = vs
        .iter()
        .filter_map(|v| match v {
            PacketVerdict::SendTo(Endpoint::Service(x)) => Some((0, x.get())),
            PacketVerdict::SendTo(Endpoint::Port(p)) => Some((1, p.index())),
            _ => None,
        })
        .min();
    Some(match lowest {
        Some((1, p)) if p == 2 || p == 3 => eth(p),
        _ => eth(1),
    })
}

/// A chain of `members` read-only services dispatched in parallel; the last
/// one may exit through eth1 (default), eth2 or eth3.
pub fn ledger_manager(members: u16, copies: &[u32], salt: u64) -> NfManager {
    let mut rules = vec![rule(eth(0), vec![Action::ToService(s(1))])];
    for i in 1..members {
        rules.push(rule(s(i), vec![Action::ToService(s(i + 1))]).parallel());
    }
    rules.push(rule(s(members), vec![Action::OutPort(eth(1)), Action::OutPort(eth(2)), Action::OutPort(eth(3))]));
    let services: Vec<(u16, bool)> = (1..=members).map(|i| (i, true)).collect();
    let t = table(rules, &services, 4);
    let known = services.iter().map(|(i, ro)| (s(*i), *ro)).collect();
    let mut m = NfManager::new(HostId(0), t, known, EngineConfig::default());
    let mut next = 1;
    for i in 1..=members {
        for _ in 0..copies[usize::from(i) - 1] {
            m.register_nf(InstanceId(next), s(i), true, Box::new(Scripted { salt }), InstanceTiming::default(), 0)
                .unwrap();
            next += 1;
        }
    }
    m
}

pub fn check_ledger(members: u16, copies: &[u32], salt: u64, packets: u64, seed: u64) -> Result<(), String> {
    let mut m = ledger_manager(members, copies, salt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut egress = BTreeMap::new();
    let mut sent = 0;
    while sent < packets {
        let burst = rng.gen_range(1..=64).min(packets - sent);
        for _ in 0..burst {
            let meta = PacketMeta { packet_id: sent, ..PacketMeta::default() };
            m.rx_dispatch(eth(0), &packet(sent, rng.gen_range(0..32)), meta, 0);
            sent += 1;
        }
        for (port, id) in drain(&mut m) {
            ensure!(egress.insert(id, port).is_none(), "packet {} left twice", id);
        }
    }
    let mut drops = 0;
    for id in 0..packets {
        let expected = ledger_outcome(salt, id, members);
        ensure_eq!(egress.get(&id).copied(), expected, "packet {}", id);
        drops += u64::from(expected.is_none());
    }
    let stats = m.pool().stats();
    ensure_eq!(stats.allocs, packets);
    ensure_eq!(stats.frees, packets);
    ensure_eq!(stats.double_frees, 0);
    ensure_eq!(m.in_flight(), 0);
    ensure_eq!(m.counters().get("drop_nf"), drops);
    ensure_eq!(m.counters().get("stale_descriptor"), 0);
    if members > 1 {
        ensure_eq!(m.counters().get("parallel_dispatch"), packets);
    }
    Ok(())
}
