//! Multi-threaded pipeline: one RX thread, one TX thread, one flow
//! controller thread and one thread per NF instance, connected only by
//! bounded SPSC rings.
//!
//! Packet bytes live in a fixed arena of slots. Descriptors carry a slot
//! index; under parallel dispatch several NF threads hold the same slot and
//! its atomic reference count decides who resolves the merged verdict.
//! Freed slot indices flow back to RX over their own rings.
//!
//! Every NF instance has two input rings, one fed by RX and one by TX, so
//! that each ring keeps a single producer.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use crate::flow_table::{Action, SharedTable};
use crate::ids::{Endpoint, InstanceId, PortId, ServiceId};
use crate::message::ControlMessage;
use crate::nf::{NetworkFunction, NfContext, PacketVerdict, PacketView};
use crate::packet::{parse_five_tuple, RequestedAction};
use crate::spsc::{self, Consumer, Producer};
use crate::tuple::{fnv1a, FiveTuple};

use super::{pick_instance, resolve_actions, BalancePolicy, ConflictPolicy, Counters};

pub struct ThreadedNf {
    pub id: InstanceId,
    pub service: ServiceId,
    pub readonly: bool,
    pub nf: Box<dyn NetworkFunction>,
    pub seed: u64,
}

/// Called on the controller thread for the first packet of a flow that
/// missed. Installs rules and returns whether any were installed.
pub type MissHandler = Box<dyn FnMut(Endpoint, &FiveTuple, &[u8]) -> bool + Send>;

#[derive(Debug, Clone)]
pub struct ThreadedConfig {
    pub queue_capacity: usize,
    pub pool_capacity: usize,
    pub balance: BalancePolicy,
    pub conflict: ConflictPolicy,
    pub max_hops: u16,
    pub ingress: PortId,
    /// Give up waiting for in-flight packets after this long.
    pub drain_timeout: Duration,
}

impl Default for ThreadedConfig {
    fn default() -> Self {
        Self {
            queue_capacity: 1024,
            pool_capacity: 4096,
            balance: BalancePolicy::QueueDepth,
            conflict: ConflictPolicy::ActionPriority,
            max_hops: 64,
            ingress: PortId::new(0),
            drain_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ThreadedReport {
    pub counters: Counters,
    pub allocs: u64,
    pub frees: u64,
    pub egress: u64,
    pub egress_by_port: BTreeMap<PortId, u64>,
    pub mean_latency: Duration,
    pub elapsed: Duration,
    pub messages: Vec<ControlMessage>,
    /// Every worker exited and nothing was left in flight.
    pub drained: bool,
}

impl ThreadedReport {
    pub fn clean(&self) -> bool {
        self.drained
            && self.allocs == self.frees
            && self.counters.get("double_free") == 0
            && self.counters.get("write_violations") == 0
    }
}

struct Slot {
    bytes: RwLock<Vec<u8>>,
    refs: AtomicU32,
    live: AtomicBool,
    pending: Mutex<Vec<(InstanceId, RequestedAction)>>,
}

#[derive(Debug, Clone)]
struct Desc {
    slot: u32,
    flow: FiveTuple,
    exit: Endpoint,
    hops: u16,
    requested: RequestedAction,
    born: u64,
    reroute: Option<Endpoint>,
}

struct Returned {
    from: InstanceId,
    desc: Desc,
}

enum FreeSink {
    Local(Vec<u32>),
    Ring(Producer<u32>),
}

struct Shared {
    slots: Vec<Slot>,
    table: SharedTable,
    depth: BTreeMap<InstanceId, AtomicUsize>,
    by_service: BTreeMap<ServiceId, Vec<InstanceId>>,
    freed: AtomicU64,
    allocated: AtomicU64,
    stop: AtomicBool,
    start: Instant,
}

impl Shared {
    fn now(&self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }
}

/// Routing state owned by one thread (RX or TX).
struct Router {
    shared: Arc<Shared>,
    inputs: BTreeMap<InstanceId, Producer<Desc>>,
    free: FreeSink,
    balance: BalancePolicy,
    conflict: ConflictPolicy,
    max_hops: u16,
    counters: Counters,
    egress_by_port: BTreeMap<PortId, u64>,
    latency_sum: u64,
}

impl Router {
    fn free(&mut self, slot: u32) {
        let s = &self.shared.slots[slot as usize];
        if !s.live.swap(false, Ordering::AcqRel) {
            self.counters.bump("double_free");
            return;
        }
        self.shared.freed.fetch_add(1, Ordering::AcqRel);
        match &mut self.free {
            FreeSink::Local(v) => v.push(slot),
            FreeSink::Ring(p) => {
                let mut slot = slot;
                while let Err(back) = p.push(slot) {
                    slot = back;
                    thread::yield_now();
                }
            }
        }
    }

    /// Forwards by the rule at `ingress`, or hands the descriptor back on a miss.
    fn route_from(&mut self, d: Desc, ingress: Endpoint) -> Option<Desc> {
        let table = self.shared.table.snapshot();
        match table.lookup(ingress, &d.flow) {
            Some(hit) => {
                self.forward(d, hit.rule.default_action());
                None
            }
            None => Some(d),
        }
    }

    fn forward(&mut self, mut d: Desc, action: Action) {
        d.hops += 1;
        if d.hops > self.max_hops {
            self.counters.bump("drop_loop");
            self.free(d.slot);
            return;
        }
        match action {
            Action::Drop => {
                self.counters.bump("drop_rule");
                self.free(d.slot);
            }
            Action::OutPort(p) => {
                self.counters.bump("tx");
                *self.egress_by_port.entry(p).or_default() += 1;
                self.latency_sum += self.shared.now().saturating_sub(d.born);
                self.free(d.slot);
            }
            Action::ToService(s) => self.dispatch(d, s),
        }
    }

    fn group(&self, head: ServiceId, flow: &FiveTuple) -> Vec<ServiceId> {
        let table = self.shared.table.snapshot();
        let mut members = vec![head];
        let mut hit = table.lookup(Endpoint::Service(head), flow);
        while let Some(h) = hit.as_ref().filter(|h| h.rule.parallel) {
            let next: Vec<ServiceId> =
                h.rule.actions.iter().filter_map(|a| a.endpoint().and_then(Endpoint::service)).collect();
            let Some(&last) = next.last() else { break };
            if next.iter().any(|s| members.contains(s)) {
                break;
            }
            members.extend(next);
            hit = table.lookup(Endpoint::Service(last), flow);
        }
        members
    }

    fn pick(&self, service: ServiceId, flow: &FiveTuple) -> Option<InstanceId> {
        let ids = self.shared.by_service.get(&service)?;
        let c: Vec<(InstanceId, usize)> =
            ids.iter().map(|i| (*i, self.shared.depth[i].load(Ordering::Acquire))).collect();
        pick_instance(self.balance, &c, flow)
    }

    fn dispatch(&mut self, mut d: Desc, service: ServiceId) {
        let members = self.group(service, &d.flow);
        d.exit = Endpoint::Service(*members.last().expect("non-empty"));
        d.requested = RequestedAction::Default;
        if members.len() > 1 {
            self.counters.bump("parallel_dispatch");
        }
        let slot = &self.shared.slots[d.slot as usize];
        slot.refs.store(members.len() as u32, Ordering::Release);
        for m in members {
            let pushed = match self.pick(m, &d.flow) {
                None => {
                    self.counters.bump("drop_no_instance");
                    false
                }
                Some(target) => {
                    self.shared.depth[&target].fetch_add(1, Ordering::AcqRel);
                    match self.inputs.get_mut(&target).expect("ring per instance").push(d.clone()) {
                        Ok(()) => true,
                        Err(_) => {
                            self.shared.depth[&target].fetch_sub(1, Ordering::AcqRel);
                            self.counters.bump("drop_queue_full");
                            false
                        }
                    }
                }
            };
            if !pushed && self.shared.slots[d.slot as usize].refs.fetch_sub(1, Ordering::AcqRel) == 1 {
                self.finalize(d.clone(), true);
            }
        }
    }

    fn returned(&mut self, r: Returned) {
        let slot = &self.shared.slots[r.desc.slot as usize];
        slot.pending.lock().unwrap_or_else(|p| p.into_inner()).push((r.from, r.desc.requested));
        if slot.refs.fetch_sub(1, Ordering::AcqRel) == 1 {
            self.finalize(r.desc, false);
        }
    }

    /// Resolves the verdicts of every holder and acts on the result. If no
    /// holder saw the packet it is dropped.
    fn finalize(&mut self, d: Desc, undelivered: bool) {
        let pending: Vec<_> = std::mem::take(
            &mut *self.shared.slots[d.slot as usize].pending.lock().unwrap_or_else(|p| p.into_inner()),
        );
        if undelivered && pending.is_empty() {
            self.free(d.slot);
            return;
        }
        let table = self.shared.table.snapshot();
        let rule = table.lookup(d.exit, &d.flow).map(|h| h.rule);
        match (resolve_actions(&pending, &self.conflict), rule) {
            (RequestedAction::Discard, _) => {
                self.counters.bump("drop_nf");
                self.free(d.slot);
            }
            (_, None) => {
                self.counters.bump("drop_no_rule");
                self.free(d.slot);
            }
            (RequestedAction::SendTo(e), Some(rule)) if rule.permits(Action::from(e)) => {
                self.forward(d, Action::from(e))
            }
            (RequestedAction::SendTo(_), Some(rule)) => {
                self.counters.bump("illegal_sendto");
                self.forward(d, rule.default_action());
            }
            (RequestedAction::Default, Some(rule)) => self.forward(d, rule.default_action()),
        }
    }
}

struct NfWorker {
    id: InstanceId,
    readonly: bool,
    nf: Box<dyn NetworkFunction>,
    ctx: NfContext,
    from_rx: Consumer<Desc>,
    from_tx: Consumer<Desc>,
    out: Producer<Returned>,
    shared: Arc<Shared>,
    counters: Counters,
    messages: Vec<ControlMessage>,
}

impl NfWorker {
    fn run(mut self) -> (Counters, Vec<ControlMessage>) {
        loop {
            let next = self.from_rx.pop().or_else(|| self.from_tx.pop());
            let Some(mut d) = next else {
                if self.shared.stop.load(Ordering::Acquire) {
                    break;
                }
                thread::yield_now();
                continue;
            };
            self.shared.depth[&self.id].fetch_sub(1, Ordering::AcqRel);
            d.requested = self.process(&d);
            let mut r = Returned { from: self.id, desc: d };
            while let Err(back) = self.out.push(r) {
                r = back;
                thread::yield_now();
            }
        }
        (self.counters, self.messages)
    }

    fn process(&mut self, d: &Desc) -> RequestedAction {
        self.ctx.advance(self.shared.now());
        let slot = &self.shared.slots[d.slot as usize];
        let nf = &mut self.nf;
        let ctx = &mut self.ctx;
        let (result, violated) = if self.readonly {
            let guard = slot.bytes.read().unwrap_or_else(|p| p.into_inner());
            let before = fnv1a(&guard);
            let result = catch_unwind(AssertUnwindSafe(|| {
                let mut view = PacketView::shared(&guard, d.flow);
                let v = nf.handle_packet(ctx, &mut view);
                (v, view.write_attempted())
            }));
            let changed = fnv1a(&guard) != before;
            (result, changed)
        } else {
            let mut guard = slot.bytes.write().unwrap_or_else(|p| p.into_inner());
            let result = catch_unwind(AssertUnwindSafe(|| {
                let mut view = PacketView::new(&mut guard, d.flow, false);
                (nf.handle_packet(ctx, &mut view), false)
            }));
            (result, false)
        };
        self.counters.bump("processed");
        self.messages.extend(self.ctx.drain_messages());
        let verdict = match result {
            Ok((v, attempted)) => {
                if attempted || violated {
                    self.counters.bump("write_violations");
                }
                v
            }
            Err(_) => {
                self.counters.bump("nf_panics");
                PacketVerdict::Default
            }
        };
        match verdict {
            PacketVerdict::Discard => RequestedAction::Discard,
            PacketVerdict::SendTo(e) => RequestedAction::SendTo(e),
            PacketVerdict::Default => RequestedAction::Default,
        }
    }
}

/// Pushes `packets` through the pipeline as fast as the workers accept
/// them, waits for everything in flight to finish, and stops the workers.
pub fn run_pipeline(
    table: SharedTable,
    nfs: Vec<ThreadedNf>,
    packets: Vec<Vec<u8>>,
    mut miss: Option<MissHandler>,
    cfg: ThreadedConfig,
) -> ThreadedReport {
    let pool = cfg.pool_capacity.max(1);
    let mut by_service: BTreeMap<ServiceId, Vec<InstanceId>> = BTreeMap::new();
    for n in &nfs {
        by_service.entry(n.service).or_default().push(n.id);
    }
    by_service.values_mut().for_each(|v| v.sort());
    let shared = Arc::new(Shared {
        slots: (0..pool)
            .map(|_| Slot {
                bytes: RwLock::new(Vec::new()),
                refs: AtomicU32::new(0),
                live: AtomicBool::new(false),
                pending: Mutex::new(Vec::new()),
            })
            .collect(),
        table,
        depth: nfs.iter().map(|n| (n.id, AtomicUsize::new(0))).collect(),
        by_service,
        freed: AtomicU64::new(0),
        allocated: AtomicU64::new(0),
        stop: AtomicBool::new(false),
        start: Instant::now(),
    });

    let router = |inputs, free| Router {
        shared: Arc::clone(&shared),
        inputs,
        free,
        balance: cfg.balance,
        conflict: cfg.conflict.clone(),
        max_hops: cfg.max_hops,
        counters: Counters::default(),
        egress_by_port: BTreeMap::new(),
        latency_sum: 0,
    };

    let mut rx_inputs = BTreeMap::new();
    let mut tx_inputs = BTreeMap::new();
    let mut returns = Vec::new();
    let mut workers = Vec::new();
    for n in nfs {
        let (rx_p, rx_c) = spsc::channel(cfg.queue_capacity);
        let (tx_p, tx_c) = spsc::channel(cfg.queue_capacity);
        let (ret_p, ret_c) = spsc::channel(cfg.queue_capacity);
        rx_inputs.insert(n.id, rx_p);
        tx_inputs.insert(n.id, tx_p);
        returns.push(ret_c);
        workers.push(NfWorker {
            id: n.id,
            readonly: n.readonly,
            ctx: NfContext::new(n.service, n.id, n.seed),
            nf: n.nf,
            from_rx: rx_c,
            from_tx: tx_c,
            out: ret_p,
            shared: Arc::clone(&shared),
            counters: Counters::default(),
            messages: Vec::new(),
        });
    }
    let (free_p, mut free_c) = spsc::channel::<u32>(pool);
    let (miss_p, mut miss_c) = spsc::channel::<Desc>(cfg.queue_capacity);
    let (replay_p, mut replay_c) = spsc::channel::<Desc>(cfg.queue_capacity);
    let mut rx_router = router(rx_inputs, FreeSink::Local((0..pool as u32).rev().collect()));
    let mut tx_router = router(tx_inputs, FreeSink::Ring(free_p));

    let nf_handles: Vec<_> = workers.into_iter().map(|w| thread::spawn(move || w.run())).collect();

    let sh = Arc::clone(&shared);
    let tx_handle = thread::spawn(move || {
        let mut returns = returns;
        loop {
            let mut idle = true;
            for r in returns.iter_mut() {
                while let Some(x) = r.pop() {
                    idle = false;
                    tx_router.returned(x);
                }
            }
            while let Some(d) = replay_c.pop() {
                idle = false;
                let ingress = d.reroute.expect("replayed descriptors carry their ingress");
                if let Some(d) = tx_router.route_from(d, ingress) {
                    tx_router.counters.bump("drop_no_rule");
                    tx_router.free(d.slot);
                }
            }
            if idle {
                if sh.stop.load(Ordering::Acquire) {
                    break;
                }
                thread::yield_now();
            }
        }
        tx_router
    });

    let sh = Arc::clone(&shared);
    let ctrl_handle = thread::spawn(move || {
        let mut counters = Counters::default();
        let mut asked: HashSet<FiveTuple> = HashSet::new();
        let mut replay_p = replay_p;
        loop {
            let Some(mut d) = miss_c.pop() else {
                if sh.stop.load(Ordering::Acquire) {
                    break;
                }
                thread::yield_now();
                continue;
            };
            let ingress = d.reroute.expect("misses carry their ingress");
            if asked.insert(d.flow) {
                counters.bump("controller_requests");
                let bytes = sh.slots[d.slot as usize].bytes.read().unwrap_or_else(|p| p.into_inner()).clone();
                if let Some(h) = miss.as_mut() {
                    h(ingress, &d.flow, &bytes);
                }
            }
            d.reroute = Some(ingress);
            while let Err(back) = replay_p.push(d) {
                d = back;
                thread::yield_now();
            }
        }
        counters
    });

    let sh = Arc::clone(&shared);
    let ingress = cfg.ingress;
    let rx_handle = thread::spawn(move || {
        let mut miss_p = miss_p;
        for bytes in packets {
            rx_router.counters.bump("rx");
            let Some(flow) = parse_five_tuple(&bytes) else {
                rx_router.counters.bump("drop_malformed");
                continue;
            };
            let slot = loop {
                while let Some(s) = free_c.pop() {
                    if let FreeSink::Local(v) = &mut rx_router.free {
                        v.push(s);
                    }
                }
                if let FreeSink::Local(v) = &mut rx_router.free {
                    if let Some(s) = v.pop() {
                        break s;
                    }
                }
                thread::yield_now();
            };
            let s = &sh.slots[slot as usize];
            {
                let mut b = s.bytes.write().unwrap_or_else(|p| p.into_inner());
                b.clear();
                b.extend_from_slice(&bytes);
            }
            s.live.store(true, Ordering::Release);
            sh.allocated.fetch_add(1, Ordering::AcqRel);
            let d = Desc {
                slot,
                flow,
                exit: Endpoint::Port(ingress),
                hops: 0,
                requested: RequestedAction::Default,
                born: sh.now(),
                reroute: None,
            };
            if let Some(mut d) = rx_router.route_from(d, Endpoint::Port(ingress)) {
                d.reroute = Some(Endpoint::Port(ingress));
                while let Err(back) = miss_p.push(d) {
                    d = back;
                    thread::yield_now();
                }
            }
        }
        rx_router
    });

    let rx_router = rx_handle.join().expect("rx thread");
    let deadline = Instant::now() + cfg.drain_timeout;
    let mut drained = false;
    while Instant::now() < deadline {
        if shared.freed.load(Ordering::Acquire) == shared.allocated.load(Ordering::Acquire) {
            drained = true;
            break;
        }
        thread::sleep(Duration::from_micros(200));
    }
    shared.stop.store(true, Ordering::Release);
    let tx_router = tx_handle.join().expect("tx thread");
    let ctrl_counters = ctrl_handle.join().expect("controller thread");
    let mut report = ThreadedReport { drained, ..ThreadedReport::default() };
    let mut merge = |c: &Counters| {
        for (k, v) in &c.0 {
            report.counters.add(k, *v);
        }
    };
    merge(&rx_router.counters);
    merge(&tx_router.counters);
    merge(&ctrl_counters);
    for h in nf_handles {
        match h.join() {
            Ok((c, m)) => {
                merge(&c);
                report.messages.extend(m);
            }
            Err(_) => report.drained = false,
        }
    }
    for r in [&rx_router, &tx_router] {
        for (p, n) in &r.egress_by_port {
            *report.egress_by_port.entry(*p).or_default() += n;
        }
    }
    report.egress = report.egress_by_port.values().sum();
    let lat = rx_router.latency_sum + tx_router.latency_sum;
    if let Some(mean) = lat.checked_div(report.egress) {
        report.mean_latency = Duration::from_nanos(mean);
    }
    report.allocs = shared.allocated.load(Ordering::Acquire);
    report.frees = shared.freed.load(Ordering::Acquire);
    report.elapsed = shared.start.elapsed();
    report
}
