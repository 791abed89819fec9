//! The per-host NF manager: RX dispatch, per-instance rings, refcounted
//! parallel dispatch, TX action resolution, lookup caching, load balancing
//! and the flow-controller miss path.
//!
//! This type is driven step by step by a caller that owns the clock (the
//! discrete-event simulator, or a test). The multi-threaded pipeline lives
//! in [`threaded`].

use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use thiserror::Error;

use crate::flow_table::{Action, FlowRule, FlowTable, SharedTable};
use crate::ids::{Endpoint, HostId, InstanceId, PortId, ServiceId};
use crate::message::ControlMessage;
use crate::nf::{NetworkFunction, NfContext, PacketVerdict, PacketView};
use crate::packet::{
    parse_five_tuple, BufferHandle, BufferPool, CachedRule, PacketDescriptor, PacketMeta, PoolError,
    RequestedAction,
};
use crate::spsc;
use crate::tuple::{fnv1a, FiveTuple};
use crate::Nanos;

pub mod threaded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BalancePolicy {
    /// Fewest occupied RX slots, ties to the lowest instance id.
    #[default]
    QueueDepth,
    /// Stable hash of the five-tuple over the live instances.
    FlowHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ConflictPolicy {
    /// Drop beats SendTo beats Default; among SendTo the lowest target id wins.
    #[default]
    ActionPriority,
    /// The best-ranked (lowest rank) instance's verdict wins. Unranked
    /// instances rank after ranked ones, by instance id.
    InstancePriority(BTreeMap<InstanceId, u32>),
}

fn action_rank(a: &RequestedAction) -> (u8, u32) {
    match a {
        RequestedAction::Discard => (0, 0),
        RequestedAction::SendTo(e) => (1, e.namespace_value()),
        RequestedAction::Default => (2, 0),
    }
}

/// Merges the verdicts of every holder of a parallel-dispatched packet.
pub fn resolve_actions(pending: &[(InstanceId, RequestedAction)], policy: &ConflictPolicy) -> RequestedAction {
    match policy {
        ConflictPolicy::ActionPriority => {
            pending.iter().map(|(_, a)| *a).min_by_key(action_rank).unwrap_or(RequestedAction::Default)
        }
        ConflictPolicy::InstancePriority(ranks) => pending
            .iter()
            .min_by_key(|(i, a)| (ranks.get(i).copied().unwrap_or(u32::MAX), i.0, action_rank(a)))
            .map(|(_, a)| *a)
            .unwrap_or(RequestedAction::Default),
    }
}

/// Picks an instance from `(id, rx depth)` candidates, which must be sorted
/// by id.
pub fn pick_instance(policy: BalancePolicy, candidates: &[(InstanceId, usize)], flow: &FiveTuple) -> Option<InstanceId> {
    if candidates.is_empty() {
        return None;
    }
    match policy {
        BalancePolicy::QueueDepth => candidates.iter().min_by_key(|(id, d)| (*d, *id)).map(|(id, _)| *id),
        BalancePolicy::FlowHash => {
            Some(candidates[(flow.stable_hash() % candidates.len() as u64) as usize].0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub queue_capacity: usize,
    pub pool_capacity: usize,
    pub balance: BalancePolicy,
    pub conflict: ConflictPolicy,
    pub cache_lookups: bool,
    pub controller_timeout: Nanos,
    pub miss_buffer_per_flow: usize,
    pub max_hops: u16,
    pub trace: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            queue_capacity: 1024,
            pool_capacity: 1 << 16,
            balance: BalancePolicy::QueueDepth,
            conflict: ConflictPolicy::ActionPriority,
            cache_lookups: true,
            controller_timeout: crate::NANOS_PER_SEC,
            miss_buffer_per_flow: 256,
            max_hops: 64,
            trace: false,
        }
    }
}

/// Timing of one NF instance in simulated runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceTiming {
    /// Time the instance is busy per packet.
    pub service: Nanos,
    /// Extra latency after processing that does not occupy the instance.
    pub delay: Nanos,
}

impl Default for InstanceTiming {
    fn default() -> Self {
        Self { service: 2_000, delay: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("service {0} is not part of this deployment")]
    UnknownService(ServiceId),
    #[error("instance id {0} already registered")]
    DuplicateInstanceId(InstanceId),
    #[error("no instance of {0}")]
    NoInstance(ServiceId),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

/// Things the caller must act on after a step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    /// A packet left through `port`. Its buffer has already been freed.
    Egress { port: PortId, bytes: Vec<u8>, meta: PacketMeta },
    /// The instance has work queued and may be idle.
    Wake(InstanceId),
    /// A new flow missed; the caller should ask the controller.
    ControllerRequest { request: u64, ingress: Endpoint, flow: FiveTuple, bytes: Vec<u8> },
}

/// One NF visit, recorded when tracing is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visit {
    pub at: Nanos,
    pub packet_id: u64,
    pub flow_label: u32,
    pub service: ServiceId,
    pub instance: InstanceId,
}

struct InService {
    desc: PacketDescriptor,
    messages: Vec<ControlMessage>,
}

struct Instance {
    service: ServiceId,
    readonly: bool,
    healthy: bool,
    nf: Box<dyn NetworkFunction>,
    ctx: NfContext,
    rx_in: spsc::Producer<PacketDescriptor>,
    rx_out: spsc::Consumer<PacketDescriptor>,
    tx_in: spsc::Producer<PacketDescriptor>,
    tx_out: spsc::Consumer<PacketDescriptor>,
    timing: InstanceTiming,
    current: Option<InService>,
    delayed: VecDeque<PacketDescriptor>,
    processed: u64,
}

struct PendingFlow {
    request: u64,
    packets: VecDeque<(PacketDescriptor, Endpoint)>,
}

/// Named event counters. Drops are prefixed `drop_`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters(pub BTreeMap<&'static str, u64>);

impl Counters {
    pub fn bump(&mut self, name: &'static str) {
        *self.0.entry(name).or_default() += 1;
    }

    pub fn add(&mut self, name: &'static str, n: u64) {
        *self.0.entry(name).or_default() += n;
    }

    pub fn get(&self, name: &str) -> u64 {
        self.0.get(name).copied().unwrap_or(0)
    }

    pub fn drops(&self) -> u64 {
        self.0.iter().filter(|(k, _)| k.starts_with("drop_")).map(|(_, v)| v).sum()
    }
}

pub struct NfManager {
    host: HostId,
    table: SharedTable,
    pool: BufferPool,
    config: EngineConfig,
    known: BTreeMap<ServiceId, bool>,
    instances: BTreeMap<InstanceId, Instance>,
    by_service: BTreeMap<ServiceId, Vec<InstanceId>>,
    pending: BTreeMap<FiveTuple, PendingFlow>,
    next_request: u64,
    counters: Counters,
    effects: Vec<Effect>,
    messages: Vec<(Nanos, ControlMessage)>,
    visits: Vec<Visit>,
    now: Nanos,
}

impl NfManager {
    /// `services` maps every service this host may run to its read-only flag.
    pub fn new(host: HostId, table: SharedTable, services: BTreeMap<ServiceId, bool>, config: EngineConfig) -> Self {
        Self {
            host,
            table,
            pool: BufferPool::new(config.pool_capacity),
            config,
            known: services,
            instances: BTreeMap::new(),
            by_service: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_request: 0,
            counters: Counters::default(),
            effects: Vec::new(),
            messages: Vec::new(),
            visits: Vec::new(),
            now: 0,
        }
    }

    pub fn host(&self) -> HostId {
        self.host
    }

    pub fn table(&self) -> &SharedTable {
        &self.table
    }

    pub fn pool(&self) -> &BufferPool {
        &self.pool
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn add_known_service(&mut self, service: ServiceId, readonly: bool) {
        self.known.insert(service, readonly);
    }

    /// Advertises an NF instance for `service` and wires fresh rings to it.
    pub fn register_nf(
        &mut self,
        id: InstanceId,
        service: ServiceId,
        readonly: bool,
        nf: Box<dyn NetworkFunction>,
        timing: InstanceTiming,
        seed: u64,
    ) -> Result<(), EngineError> {
        if !self.known.contains_key(&service) {
            return Err(EngineError::UnknownService(service));
        }
        if self.instances.contains_key(&id) {
            return Err(EngineError::DuplicateInstanceId(id));
        }
        let (rx_in, rx_out) = spsc::channel(self.config.queue_capacity);
        let (tx_in, tx_out) = spsc::channel(self.config.queue_capacity);
        let mut ctx = NfContext::new(service, id, seed);
        ctx.advance(self.now);
        self.instances.insert(
            id,
            Instance {
                service,
                readonly,
                healthy: true,
                nf,
                ctx,
                rx_in,
                rx_out,
                tx_in,
                tx_out,
                timing,
                current: None,
                delayed: VecDeque::new(),
                processed: 0,
            },
        );
        let list = self.by_service.entry(service).or_default();
        list.push(id);
        list.sort();
        Ok(())
    }

    /// Runs the instance's start hook, collecting any messages it emits.
    pub fn start_instance(&mut self, id: InstanceId, now: Nanos) {
        self.now = now;
        if let Some(inst) = self.instances.get_mut(&id) {
            inst.ctx.advance(now);
            inst.nf.on_start(&mut inst.ctx);
            for m in inst.ctx.drain_messages() {
                self.messages.push((now, m));
            }
        }
    }

    /// Delivers a scripted event to every instance of `service`.
    pub fn deliver_event(&mut self, service: ServiceId, key: &str, value: &str, now: Nanos) {
        self.now = now;
        let ids = self.by_service.get(&service).cloned().unwrap_or_default();
        for id in ids {
            let inst = self.instances.get_mut(&id).expect("registered");
            inst.ctx.advance(now);
            inst.nf.on_event(&mut inst.ctx, key, value);
            for m in inst.ctx.drain_messages() {
                self.messages.push((now, m));
            }
        }
    }

    pub fn instances_of(&self, service: ServiceId) -> &[InstanceId] {
        self.by_service.get(&service).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn instance_ids(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.instances.keys().copied()
    }

    pub fn instance_service(&self, id: InstanceId) -> Option<ServiceId> {
        self.instances.get(&id).map(|i| i.service)
    }

    pub fn rx_depth(&self, id: InstanceId) -> usize {
        self.instances.get(&id).map_or(0, |i| i.rx_in.len())
    }

    pub fn is_healthy(&self, id: InstanceId) -> bool {
        self.instances.get(&id).is_some_and(|i| i.healthy)
    }

    pub fn processed(&self, id: InstanceId) -> u64 {
        self.instances.get(&id).map_or(0, |i| i.processed)
    }

    pub fn is_busy(&self, id: InstanceId) -> bool {
        self.instances.get(&id).is_some_and(|i| i.current.is_some())
    }

    pub fn take_effects(&mut self) -> Vec<Effect> {
        std::mem::take(&mut self.effects)
    }

    pub fn take_messages(&mut self) -> Vec<(Nanos, ControlMessage)> {
        std::mem::take(&mut self.messages)
    }

    pub fn take_visits(&mut self) -> Vec<Visit> {
        std::mem::take(&mut self.visits)
    }

    /// Buffers nowhere in the pipeline, no pending misses.
    pub fn in_flight(&self) -> u64 {
        self.pool.in_flight()
    }

    /// A packet arrived on `port`.
    pub fn rx_dispatch(&mut self, port: PortId, bytes: &[u8], meta: PacketMeta, now: Nanos) {
        self.now = now;
        self.counters.bump("rx");
        let Some(flow) = parse_five_tuple(bytes) else {
            self.counters.bump("drop_malformed");
            return;
        };
        let buf = match self.pool.alloc(bytes, meta) {
            Ok(b) => b,
            Err(_) => {
                self.counters.bump("drop_pool_exhausted");
                return;
            }
        };
        let desc = PacketDescriptor {
            buf,
            flow,
            exit: Endpoint::Port(port),
            cached: None,
            requested: RequestedAction::Default,
            hops: 0,
        };
        self.route_from(desc, Endpoint::Port(port), false);
    }

    fn lookup(&mut self, table: &FlowTable, ingress: Endpoint, flow: &FiveTuple) -> Option<CachedRule> {
        table.lookup(ingress, flow).map(|h| CachedRule { rule: h.rule, generation: h.generation })
    }

    /// Takes the default action of the rule at `ingress`, or hands the packet
    /// to the flow controller on a miss.
    fn route_from(&mut self, desc: PacketDescriptor, ingress: Endpoint, replay: bool) {
        let table = self.table.snapshot();
        match self.lookup(&table, ingress, &desc.flow) {
            Some(hit) => {
                let action = hit.rule.default_action();
                self.forward(desc, action, &table);
            }
            None if replay => {
                self.counters.bump("drop_no_rule");
                self.free(desc.buf);
            }
            None => self.miss(desc, ingress),
        }
    }

    fn free(&mut self, buf: BufferHandle) {
        if self.pool.free(buf).is_err() {
            self.counters.bump("double_free");
        }
    }

    fn forward(&mut self, mut desc: PacketDescriptor, action: Action, table: &FlowTable) {
        desc.hops += 1;
        if desc.hops > self.config.max_hops {
            self.counters.bump("drop_loop");
            self.free(desc.buf);
            return;
        }
        match action {
            Action::Drop => {
                self.counters.bump("drop_rule");
                self.free(desc.buf);
            }
            Action::OutPort(port) => {
                let bytes = self.pool.bytes(desc.buf).map(<[u8]>::to_vec).unwrap_or_default();
                let meta = self.pool.meta(desc.buf).unwrap_or_default();
                self.free(desc.buf);
                self.counters.bump("tx");
                self.effects.push(Effect::Egress { port, bytes, meta });
            }
            Action::ToService(s) => self.dispatch_service(desc, s, table),
        }
    }

    /// Members of the parallel group headed by `head`, plus the cached rule
    /// of the group's last member. A parallel rule at X lists the members
    /// that run alongside X; the chain continues from its last action.
    fn group(&mut self, head: ServiceId, table: &FlowTable, flow: &FiveTuple) -> (Vec<ServiceId>, Option<CachedRule>) {
        let mut members = vec![head];
        let mut hit = self.lookup(table, Endpoint::Service(head), flow);
        while let Some(h) = hit.as_ref().filter(|h| h.rule.parallel) {
            let next: Vec<ServiceId> = h.rule.actions.iter().filter_map(|a| a.endpoint().and_then(Endpoint::service)).collect();
            let Some(&last) = next.last() else { break };
            if next.iter().any(|s| members.contains(s)) {
                break;
            }
            members.extend(next);
            hit = self.lookup(table, Endpoint::Service(last), flow);
        }
        (members, hit)
    }

    fn balance(&self, service: ServiceId, flow: &FiveTuple) -> Result<InstanceId, EngineError> {
        let ids = self.instances_of(service);
        let healthy: Vec<(InstanceId, usize)> = ids
            .iter()
            .filter(|i| self.instances[i].healthy)
            .map(|i| (*i, self.instances[i].rx_in.len()))
            .collect();
        let candidates = if healthy.is_empty() {
            ids.iter().map(|i| (*i, self.instances[i].rx_in.len())).collect()
        } else {
            healthy
        };
        pick_instance(self.config.balance, &candidates, flow).ok_or(EngineError::NoInstance(service))
    }

    /// Public load-balancing entry point.
    pub fn balance_for(&self, service: ServiceId, flow: &FiveTuple) -> Result<InstanceId, EngineError> {
        self.balance(service, flow)
    }

    fn dispatch_service(&mut self, mut desc: PacketDescriptor, service: ServiceId, table: &FlowTable) {
        let (members, exit_rule) = self.group(service, table, &desc.flow);
        let exit = *members.last().expect("non-empty");
        desc.exit = Endpoint::Service(exit);
        desc.cached = exit_rule;
        desc.requested = RequestedAction::Default;
        let _ = self.pool.set_refcount(desc.buf, members.len() as u32);
        if members.len() > 1 {
            self.counters.bump("parallel_dispatch");
        }
        let mut held = members.len() as u32;
        for m in members {
            let target = match self.balance(m, &desc.flow) {
                Ok(t) => t,
                Err(_) => {
                    self.counters.bump("drop_no_instance");
                    held -= 1;
                    continue;
                }
            };
            let inst = self.instances.get_mut(&target).expect("balanced to registered instance");
            match inst.rx_in.push(desc.clone()) {
                Ok(()) => self.effects.push(Effect::Wake(target)),
                Err(_) => {
                    self.counters.bump("drop_queue_full");
                    held -= 1;
                }
            }
        }
        if held == 0 {
            self.free(desc.buf);
        } else {
            let _ = self.pool.set_refcount(desc.buf, held);
        }
    }

    fn miss(&mut self, desc: PacketDescriptor, ingress: Endpoint) {
        if let Some(p) = self.pending.get_mut(&desc.flow) {
            if p.packets.len() >= self.config.miss_buffer_per_flow {
                self.counters.bump("drop_miss_buffer_full");
                self.free(desc.buf);
            } else {
                p.packets.push_back((desc, ingress));
            }
            return;
        }
        let request = self.next_request;
        self.next_request += 1;
        self.counters.bump("controller_requests");
        let bytes = self.pool.bytes(desc.buf).map(<[u8]>::to_vec).unwrap_or_default();
        let flow = desc.flow;
        self.pending.insert(flow, PendingFlow { request, packets: VecDeque::from([(desc, ingress)]) });
        self.effects.push(Effect::ControllerRequest { request, ingress, flow, bytes });
    }

    /// The controller has answered (and installed rules). Buffered packets
    /// of the flow are replayed in arrival order.
    pub fn controller_reply(&mut self, flow: &FiveTuple, request: u64, now: Nanos) {
        self.now = now;
        let Some(p) = self.pending.get(flow) else { return };
        if p.request != request {
            return;
        }
        let p = self.pending.remove(flow).expect("checked");
        for (desc, ingress) in p.packets {
            self.counters.bump("replayed");
            self.route_from(desc, ingress, true);
        }
    }

    /// The request was refused or timed out; buffered packets are dropped.
    pub fn controller_failed(&mut self, flow: &FiveTuple, request: u64, cause: &'static str, now: Nanos) {
        self.now = now;
        let Some(p) = self.pending.get(flow) else { return };
        if p.request != request {
            return;
        }
        let p = self.pending.remove(flow).expect("checked");
        for (desc, _) in p.packets {
            self.counters.bump(cause);
            self.free(desc.buf);
        }
    }

    pub fn pending_misses(&self) -> usize {
        self.pending.values().map(|p| p.packets.len()).sum()
    }

    /// Pops one descriptor from the instance's RX ring and runs the handler.
    /// Returns the service time, or `None` if the instance is busy or idle.
    pub fn start_service(&mut self, id: InstanceId, now: Nanos) -> Option<Nanos> {
        self.now = now;
        let trace = self.config.trace;
        let inst = self.instances.get_mut(&id)?;
        if inst.current.is_some() {
            return None;
        }
        let mut desc = inst.rx_out.pop()?;
        inst.ctx.advance(now);
        let readonly = inst.readonly;
        let Ok(bytes) = self.pool.bytes_mut(desc.buf) else {
            self.counters.bump("stale_descriptor");
            return Some(0);
        };
        let before = readonly.then(|| fnv1a(bytes));
        let flow = desc.flow;
        let result = catch_unwind(AssertUnwindSafe(|| {
            let mut view = PacketView::new(bytes, flow, readonly);
            let verdict = inst.nf.handle_packet(&mut inst.ctx, &mut view);
            (verdict, view.write_attempted())
        }));
        let verdict = match result {
            Ok((v, attempted)) => {
                if attempted {
                    self.counters.bump("write_violations");
                    inst.healthy = false;
                }
                v
            }
            Err(_) => {
                self.counters.bump("nf_panics");
                inst.healthy = false;
                PacketVerdict::Default
            }
        };
        if let Some(before) = before {
            let after = self.pool.bytes(desc.buf).map(fnv1a).unwrap_or(before);
            if after != before {
                self.counters.bump("write_violations");
                inst.healthy = false;
            }
        }
        desc.requested = match verdict {
            PacketVerdict::Discard => RequestedAction::Discard,
            PacketVerdict::SendTo(e) => RequestedAction::SendTo(e),
            PacketVerdict::Default => RequestedAction::Default,
        };
        inst.processed += 1;
        if trace {
            let meta = self.pool.meta(desc.buf).unwrap_or_default();
            self.visits.push(Visit {
                at: now,
                packet_id: meta.packet_id,
                flow_label: meta.flow_label,
                service: inst.service,
                instance: id,
            });
        }
        let messages = inst.ctx.drain_messages();
        let service = inst.timing.service;
        inst.current = Some(InService { desc, messages });
        Some(service)
    }

    /// Finishes the in-service packet. Returns the post-processing delay; if
    /// it is zero the packet is already on the TX ring, otherwise the caller
    /// must call [`NfManager::release_delayed`] after that delay.
    pub fn finish_service(&mut self, id: InstanceId, now: Nanos) -> Nanos {
        self.now = now;
        let Some(inst) = self.instances.get_mut(&id) else { return 0 };
        let Some(done) = inst.current.take() else { return 0 };
        for m in done.messages {
            self.messages.push((now, m));
        }
        let delay = inst.timing.delay;
        if delay == 0 {
            if let Err(d) = inst.tx_in.push(done.desc) {
                inst.delayed.push_back(d);
                return 0;
            }
        } else {
            inst.delayed.push_back(done.desc);
        }
        delay
    }

    /// Moves the oldest delayed packet of the instance onto its TX ring.
    pub fn release_delayed(&mut self, id: InstanceId) {
        if let Some(inst) = self.instances.get_mut(&id) {
            if let Some(d) = inst.delayed.pop_front() {
                if let Err(d) = inst.tx_in.push(d) {
                    inst.delayed.push_front(d);
                }
            }
        }
    }

    /// Drains every instance's TX ring, releasing references and executing
    /// resolved actions for packets no NF holds any more.
    pub fn tx_collect(&mut self, now: Nanos) {
        self.now = now;
        let ids: Vec<InstanceId> = self.instances.keys().copied().collect();
        for id in ids {
            while let Some(desc) = self.instances.get_mut(&id).and_then(|i| i.tx_out.pop()) {
                self.tx_one(id, desc);
            }
        }
    }

    fn tx_one(&mut self, from: InstanceId, desc: PacketDescriptor) {
        let remaining = match self.pool.release(desc.buf, from, desc.requested) {
            Ok(r) => r,
            Err(_) => {
                self.counters.bump("stale_descriptor");
                return;
            }
        };
        if remaining > 0 {
            return;
        }
        let pending = self.pool.take_pending(desc.buf).unwrap_or_default();
        let resolved = resolve_actions(&pending, &self.config.conflict);
        self.execute(desc, resolved);
    }

    fn exit_rule(&mut self, desc: &PacketDescriptor, table: &FlowTable) -> Option<Arc<FlowRule>> {
        if self.config.cache_lookups {
            if let Some(c) = desc.cached.as_ref().filter(|c| c.generation == table.generation()) {
                self.counters.bump("cache_hits");
                return Some(Arc::clone(&c.rule));
            }
        }
        self.counters.bump("table_lookups");
        table.lookup(desc.exit, &desc.flow).map(|h| h.rule)
    }

    fn execute(&mut self, desc: PacketDescriptor, resolved: RequestedAction) {
        let table = self.table.snapshot();
        match resolved {
            RequestedAction::Discard => {
                self.counters.bump("drop_nf");
                self.free(desc.buf);
            }
            RequestedAction::SendTo(target) => {
                let action = Action::from(target);
                match self.exit_rule(&desc, &table) {
                    Some(rule) if rule.permits(action) => self.forward(desc, action, &table),
                    Some(rule) => {
                        self.counters.bump("illegal_sendto");
                        self.forward(desc, rule.default_action(), &table);
                    }
                    None => {
                        self.counters.bump("illegal_sendto");
                        let exit = desc.exit;
                        self.miss(desc, exit);
                    }
                }
            }
            RequestedAction::Default => match self.exit_rule(&desc, &table) {
                Some(rule) => self.forward(desc, rule.default_action(), &table),
                None => {
                    let exit = desc.exit;
                    self.miss(desc, exit);
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_table::{MatchKey, TableContext, BASE_PRIORITY};
    use crate::nf::PacketVerdict;
    use crate::packet::{build_packet, PROTO_UDP};
    use crate::tuple::FlowPattern;
    use std::net::Ipv4Addr;

    fn sid(n: u16) -> ServiceId {
        ServiceId::new(n).unwrap()
    }

    fn flow(n: u16) -> FiveTuple {
        FiveTuple::new(Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(10, 0, 1, 1), n, 80, PROTO_UDP)
    }

    struct Fixed(PacketVerdict);

    impl NetworkFunction for Fixed {
        fn handle_packet(&mut self, _: &mut NfContext, _: &mut PacketView<'_>) -> PacketVerdict {
            self.0
        }
    }

    struct Panics;

    impl NetworkFunction for Panics {
        fn handle_packet(&mut self, _: &mut NfContext, _: &mut PacketView<'_>) -> PacketVerdict {
            panic!("handler bug")
        }
    }

    fn ctx() -> TableContext {
        let mut c = TableContext::default();
        for i in 1..=4 {
            c.services.insert(sid(i), true);
        }
        c.ports.insert(PortId::new(0));
        c.ports.insert(PortId::new(1));
        c
    }

    fn manager(rules: Vec<FlowRule>) -> NfManager {
        let mut t = FlowTable::new();
        let c = ctx();
        for r in rules {
            t.install(r, &c).unwrap();
        }
        let services = (1..=4).map(|i| (sid(i), true)).collect();
        NfManager::new(HostId(0), SharedTable::new(t), services, EngineConfig::default())
    }

    fn rule(ingress: Endpoint, actions: &[Action]) -> FlowRule {
        FlowRule::new(MatchKey::new(ingress, FlowPattern::ANY), actions.to_vec(), BASE_PRIORITY)
    }

    fn eth(i: u16) -> Endpoint {
        Endpoint::Port(PortId::new(i))
    }

    /// Runs every instance until the pipeline is quiet.
    fn drain(m: &mut NfManager) -> Vec<Effect> {
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
            out.extend(m.take_effects().into_iter().filter(|e| !matches!(e, Effect::Wake(_))));
            if !progressed {
                return out;
            }
        }
    }

    #[test]
    fn parallel_rule_sets_refcount_to_group_size() {
        let mut m = manager(vec![
            rule(eth(0), &[Action::ToService(sid(1))]),
            rule(Endpoint::Service(sid(1)), &[Action::ToService(sid(2))]).parallel(),
            rule(Endpoint::Service(sid(2)), &[Action::OutPort(PortId::new(1)), Action::ToService(sid(3))]),
        ]);
        m.register_nf(InstanceId(1), sid(1), true, Box::new(Fixed(PacketVerdict::Default)), InstanceTiming::default(), 0).unwrap();
        m.register_nf(InstanceId(2), sid(2), true, Box::new(Fixed(PacketVerdict::SendTo(Endpoint::Service(sid(3))))), InstanceTiming::default(), 0).unwrap();
        m.register_nf(InstanceId(3), sid(3), false, Box::new(Fixed(PacketVerdict::Default)), InstanceTiming::default(), 0).unwrap();
        m.rx_dispatch(PortId::new(0), &build_packet(&flow(1), 64, b""), PacketMeta::default(), 0);
        assert_eq!(m.rx_depth(InstanceId(1)), 1);
        assert_eq!(m.rx_depth(InstanceId(2)), 1);
        assert_eq!(m.counters().get("parallel_dispatch"), 1);
        // both copies share one buffer
        assert_eq!(m.pool().in_flight(), 1);
        let effects = drain(&mut m);
        // SendTo(3) beats Default; 3 then defaults to... it has no rule, so the flow misses
        assert_eq!(m.processed(InstanceId(3)), 1);
        assert!(matches!(effects[0], Effect::ControllerRequest { .. }));
    }

    #[test]
    fn single_target_refcount_one_and_drop_frees_once() {
        let mut m = manager(vec![rule(eth(0), &[Action::ToService(sid(1))])]);
        m.register_nf(InstanceId(1), sid(1), true, Box::new(Fixed(PacketVerdict::Discard)), InstanceTiming::default(), 0).unwrap();
        m.rx_dispatch(PortId::new(0), &build_packet(&flow(1), 64, b""), PacketMeta::default(), 0);
        drain(&mut m);
        assert_eq!(m.pool().stats().allocs, 1);
        assert_eq!(m.pool().stats().frees, 1);
        assert_eq!(m.pool().stats().double_frees, 0);
        assert_eq!(m.counters().get("drop_nf"), 1);
    }

    #[test]
    fn empty_table_goes_to_flow_controller_once_per_flow() {
        let mut m = manager(vec![]);
        for _ in 0..3 {
            m.rx_dispatch(PortId::new(0), &build_packet(&flow(1), 64, b""), PacketMeta::default(), 0);
        }
        m.rx_dispatch(PortId::new(0), &build_packet(&flow(2), 64, b""), PacketMeta::default(), 0);
        let reqs = m.take_effects().into_iter().filter(|e| matches!(e, Effect::ControllerRequest { .. })).count();
        assert_eq!(reqs, 2);
        assert_eq!(m.pending_misses(), 4);
    }

    #[test]
    fn illegal_send_to_degrades_to_default() {
        let mut m = manager(vec![
            rule(eth(0), &[Action::ToService(sid(1))]),
            rule(Endpoint::Service(sid(1)), &[Action::OutPort(PortId::new(1))]),
        ]);
        m.register_nf(InstanceId(1), sid(1), true, Box::new(Fixed(PacketVerdict::SendTo(Endpoint::Service(sid(4))))), InstanceTiming::default(), 0).unwrap();
        m.rx_dispatch(PortId::new(0), &build_packet(&flow(1), 64, b""), PacketMeta::default(), 0);
        let eff = drain(&mut m);
        assert_eq!(m.counters().get("illegal_sendto"), 1);
        assert!(matches!(&eff[0], Effect::Egress { port, .. } if *port == PortId::new(1)));
    }

    #[test]
    fn panicking_handler_defaults_and_marks_unhealthy() {
        let mut m = manager(vec![
            rule(eth(0), &[Action::ToService(sid(1))]),
            rule(Endpoint::Service(sid(1)), &[Action::OutPort(PortId::new(1))]),
        ]);
        m.register_nf(InstanceId(1), sid(1), true, Box::new(Panics), InstanceTiming::default(), 0).unwrap();
        let hook = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        m.rx_dispatch(PortId::new(0), &build_packet(&flow(1), 64, b""), PacketMeta::default(), 0);
        let eff = drain(&mut m);
        std::panic::set_hook(hook);
        assert!(!m.is_healthy(InstanceId(1)));
        assert_eq!(m.counters().get("nf_panics"), 1);
        assert!(matches!(eff[0], Effect::Egress { .. }));
    }

    #[test]
    fn register_rejects_unknown_service_and_duplicate_id() {
        let mut m = manager(vec![]);
        let nf = || Box::new(Fixed(PacketVerdict::Default));
        assert_eq!(
            m.register_nf(InstanceId(1), sid(9), true, nf(), InstanceTiming::default(), 0),
            Err(EngineError::UnknownService(sid(9)))
        );
        m.register_nf(InstanceId(1), sid(1), true, nf(), InstanceTiming::default(), 0).unwrap();
        m.register_nf(InstanceId(2), sid(1), true, nf(), InstanceTiming::default(), 0).unwrap();
        assert_eq!(
            m.register_nf(InstanceId(2), sid(2), true, nf(), InstanceTiming::default(), 0),
            Err(EngineError::DuplicateInstanceId(InstanceId(2)))
        );
        assert_eq!(m.instances_of(sid(1)).len(), 2);
    }

    #[test]
    fn conflict_resolution_orders() {
        use RequestedAction::*;
        let p = ConflictPolicy::ActionPriority;
        let a = |v: Vec<RequestedAction>| v.into_iter().enumerate().map(|(i, a)| (InstanceId(i as u32), a)).collect::<Vec<_>>();
        let s = |n| SendTo(Endpoint::Service(sid(n)));
        assert_eq!(resolve_actions(&a(vec![Default, s(3)]), &p), s(3));
        assert_eq!(resolve_actions(&a(vec![s(3), Discard, Default]), &p), Discard);
        assert_eq!(resolve_actions(&a(vec![s(3), s(2)]), &p), s(2));
        assert_eq!(resolve_actions(&a(vec![Default, SendTo(eth(0)), s(1000)]), &p), s(1000));
        let ranks = ConflictPolicy::InstancePriority(BTreeMap::from([(InstanceId(1), 0)]));
        assert_eq!(resolve_actions(&a(vec![Discard, Default]), &ranks), Default);
    }

    #[test]
    fn queue_depth_and_flow_hash_balancing() {
        let f = flow(7);
        let c = [(InstanceId(1), 3), (InstanceId(2), 7)];
        assert_eq!(pick_instance(BalancePolicy::QueueDepth, &c, &f), Some(InstanceId(1)));
        let tie = [(InstanceId(1), 2), (InstanceId(2), 2)];
        assert_eq!(pick_instance(BalancePolicy::QueueDepth, &tie, &f), Some(InstanceId(1)));
        let a = pick_instance(BalancePolicy::FlowHash, &c, &f);
        assert_eq!(a, pick_instance(BalancePolicy::FlowHash, &c, &f));
        assert_eq!(pick_instance(BalancePolicy::FlowHash, &[], &f), None);
    }

    #[test]
    fn stale_cache_forces_fresh_lookup() {
        let mut m = manager(vec![
            rule(eth(0), &[Action::ToService(sid(1))]),
            rule(Endpoint::Service(sid(1)), &[Action::OutPort(PortId::new(1)), Action::Drop]),
        ]);
        m.register_nf(InstanceId(1), sid(1), true, Box::new(Fixed(PacketVerdict::Default)), InstanceTiming::default(), 0).unwrap();
        m.rx_dispatch(PortId::new(0), &build_packet(&flow(1), 64, b""), PacketMeta::default(), 0);
        // change the default while the packet sits in the NF's queue
        m.table().modify(|t| {
            let mut c = ctx();
            c.allow(Endpoint::Service(sid(1)), Action::Drop);
            t.update_default(MatchKey::new(sid(1), FlowPattern::ANY), Action::Drop, &c).unwrap();
        });
        drain(&mut m);
        assert_eq!(m.counters().get("drop_rule"), 1);
        assert_eq!(m.counters().get("cache_hits"), 0);
        m.rx_dispatch(PortId::new(0), &build_packet(&flow(1), 64, b""), PacketMeta::default(), 0);
        drain(&mut m);
        assert_eq!(m.counters().get("cache_hits"), 1);
    }
}
