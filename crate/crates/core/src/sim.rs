//! Deterministic discrete-event simulation of a deployment: traffic
//! sources, one NF manager per host, inter-host links, and the control
//! process with its queueing delay.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::control::{
    AppCommand, ControlError, ControlPlane, ControllerApp, Deployment, DeploymentError, MessageOutcome, TrustMode,
    EGRESS_PORT, INGRESS_PORT,
};
use crate::engine::{Counters, Effect, EngineConfig, EngineError, InstanceTiming, NfManager, Visit};
use crate::ids::{Endpoint, HostId, InstanceId, PortId, ServiceId};
use crate::message::ControlMessage;
use crate::metrics::Metrics;
use crate::nf::{build_nf, NfConfigError, Params};
use crate::packet::{build_packet, PacketMeta};
use crate::tuple::FiveTuple;
use crate::{secs, Nanos, NANOS_PER_SEC};

/// How NF instances of one service are created.
#[derive(Debug, Clone, PartialEq)]
pub struct NfSpec {
    pub service: ServiceId,
    pub host: HostId,
    pub kind: String,
    pub params: Params,
    pub timing: InstanceTiming,
    /// Instances started at time zero. On-demand services use 0.
    pub count: u32,
}

/// Constant packet rate between `start` and `stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSegment {
    pub start: Nanos,
    pub stop: Nanos,
    pub pps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficFlow {
    pub label: u32,
    pub tuple: FiveTuple,
    pub segments: Vec<RateSegment>,
    pub packet_len: usize,
    pub payload: Vec<u8>,
    /// Per-flow latency and egress series are emitted for tracked flows.
    pub tracked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventTarget {
    Service(ServiceId),
    Controller,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEvent {
    pub at: Nanos,
    pub target: EventTarget,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RuleSetup {
    /// Compiled wildcard rules are installed before traffic starts.
    #[default]
    Prepopulate,
    /// Tables start empty; every new flow goes to the controller.
    OnMiss,
}

pub struct SimConfig {
    pub deployment: Deployment,
    pub nfs: Vec<NfSpec>,
    pub flows: Vec<TrafficFlow>,
    pub events: Vec<ScriptEvent>,
    pub app: Box<dyn ControllerApp>,
    pub setup: RuleSetup,
    pub trust: TrustMode,
    pub engine: EngineConfig,
    /// Time the controller spends per packet-in.
    pub controller_latency: Nanos,
    /// Packet-ins waiting beyond this are refused.
    pub controller_queue: usize,
    /// Extra delay before an NF message takes effect in untrusted mode.
    pub message_latency: Nanos,
    pub startup_delay: Nanos,
    pub bin: Nanos,
    pub duration: Nanos,
    /// Keep running after `duration` until no packet is left in flight.
    pub drain: bool,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(deployment: Deployment, app: Box<dyn ControllerApp>) -> Self {
        Self {
            deployment,
            nfs: Vec::new(),
            flows: Vec::new(),
            events: Vec::new(),
            app,
            setup: RuleSetup::Prepopulate,
            trust: TrustMode::Trusted,
            engine: EngineConfig::default(),
            controller_latency: secs(0.031),
            controller_queue: 16,
            message_latency: 0,
            startup_delay: secs(0.5),
            bin: secs(0.1),
            duration: NANOS_PER_SEC,
            drain: false,
            seed: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid deployment: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Deployment(Vec<DeploymentError>),
    #[error("nf for service {service}: {source}")]
    Nf { service: ServiceId, source: NfConfigError },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("rule installation failed: {0}")]
    Rules(String),
}

/// One packet leaving through the egress port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EgressRecord {
    pub at: Nanos,
    pub flow_label: u32,
    pub packet_id: u64,
    pub latency: Nanos,
    pub len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub metrics: Metrics,
    pub summary: BTreeMap<String, String>,
    pub egress: Vec<EgressRecord>,
    pub visits: Vec<Visit>,
    pub message_log: Vec<String>,
    /// Notable control events: `(time, description)`.
    pub timeline: Vec<(Nanos, String)>,
    pub counters: Counters,
    /// Invariant violations; empty for a clean run.
    pub violations: Vec<String>,
    /// Final flow table of each host, as dumped by the control plane.
    pub tables: BTreeMap<HostId, String>,
}

impl RunOutcome {
    pub fn summary_text(&self) -> String {
        self.summary.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Time of the first timeline entry starting with `prefix`.
    pub fn first_event(&self, prefix: &str) -> Option<Nanos> {
        self.timeline.iter().find(|(_, s)| s.starts_with(prefix)).map(|(t, _)| *t)
    }
}

enum Ev {
    Generate { flow: usize },
    Arrive { host: HostId, port: PortId, bytes: Vec<u8>, meta: PacketMeta },
    NfDone { host: HostId, inst: InstanceId },
    Release { host: HostId, inst: InstanceId },
    CtrlDone,
    FcTimeout { host: HostId, flow: FiveTuple, request: u64 },
    ApplyMsg { msg: ControlMessage },
    Ready { spec: usize, inst: InstanceId, params: Params },
    Script { index: usize },
    Sample,
}

struct CtrlRequest {
    host: HostId,
    request: u64,
    ingress: Endpoint,
    flow: FiveTuple,
    bytes: Vec<u8>,
}

pub struct Simulation {
    cfg: SimConfig,
    cp: ControlPlane,
    engines: BTreeMap<HostId, NfManager>,
    heap: BinaryHeap<Reverse<(Nanos, u64)>>,
    events: BTreeMap<u64, Ev>,
    seq: u64,
    now: Nanos,
    busy: BTreeSet<(HostId, InstanceId)>,
    ctrl_queue: VecDeque<CtrlRequest>,
    ctrl_busy: bool,
    packet_bytes: Vec<Vec<u8>>,
    next_packet: u64,
    in_transit: u64,
    generated: u64,
    egressed: u64,
    sim_drops: Counters,
    last_counters: Counters,
    metrics: Metrics,
    egress: Vec<EgressRecord>,
    timeline: Vec<(Nanos, String)>,
    messages: u64,
    rng: ChaCha8Rng,
}

fn merge_counters(into: &mut Counters, from: &Counters) {
    for (k, v) in &from.0 {
        into.add(k, *v);
    }
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        let mut cp = ControlPlane::new(cfg.deployment.clone(), cfg.trust).map_err(SimError::Deployment)?;
        if cfg.setup == RuleSetup::Prepopulate {
            cp.prepopulate().map_err(|e| SimError::Rules(e.to_string()))?;
        }
        let services = cfg.deployment.services();
        let engines = cfg
            .deployment
            .hosts
            .keys()
            .map(|h| {
                let table = cp.table(*h).expect("table per host");
                (*h, NfManager::new(*h, table, services.clone(), cfg.engine.clone()))
            })
            .collect();
        let packet_bytes = cfg.flows.iter().map(|f| build_packet(&f.tuple, f.packet_len, &f.payload)).collect();
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut sim = Self {
            metrics: Metrics::new(cfg.bin),
            cp,
            engines,
            heap: BinaryHeap::new(),
            events: BTreeMap::new(),
            seq: 0,
            now: 0,
            busy: BTreeSet::new(),
            ctrl_queue: VecDeque::new(),
            ctrl_busy: false,
            packet_bytes,
            next_packet: 0,
            in_transit: 0,
            generated: 0,
            egressed: 0,
            sim_drops: Counters::default(),
            last_counters: Counters::default(),
            egress: Vec::new(),
            timeline: Vec::new(),
            messages: 0,
            rng,
            cfg,
        };
        for (i, spec) in sim.cfg.nfs.clone().iter().enumerate() {
            for _ in 0..spec.count {
                let id = sim.cp.register_instance(spec.service, spec.host)?;
                sim.bring_up(i, id, &spec.params)?;
            }
        }
        sim.cp.check_instances().map_err(SimError::Deployment)?;
        for i in 0..sim.cfg.flows.len() {
            if let Some(t) = sim.first_send(i) {
                sim.push(t, Ev::Generate { flow: i });
            }
        }
        let script: Vec<Nanos> = sim.cfg.events.iter().map(|e| e.at).collect();
        for (index, at) in script.into_iter().enumerate() {
            if at <= sim.cfg.duration {
                sim.push(at, Ev::Script { index });
            }
        }
        sim.push(sim.cfg.bin.min(sim.cfg.duration), Ev::Sample);
        Ok(sim)
    }

    pub fn control(&self) -> &ControlPlane {
        &self.cp
    }

    pub fn engine(&self, host: HostId) -> Option<&NfManager> {
        self.engines.get(&host)
    }

    fn push(&mut self, at: Nanos, ev: Ev) {
        self.heap.push(Reverse((at, self.seq)));
        self.events.insert(self.seq, ev);
        self.seq += 1;
    }

    fn bring_up(&mut self, spec: usize, id: InstanceId, extra: &Params) -> Result<(), SimError> {
        let s = &self.cfg.nfs[spec];
        let mut params = s.params.clone();
        for (k, v) in &extra.0 {
            params.insert(k.clone(), v.clone());
        }
        let nf = build_nf(&s.kind, &params, self.cp.catalog()).map_err(|source| SimError::Nf { service: s.service, source })?;
        let readonly = self.cfg.deployment.services().get(&s.service).copied().unwrap_or(false);
        let (host, service, timing) = (s.host, s.service, s.timing);
        let seed = self.cfg.seed ^ u64::from(id.0).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let eng = self.engines.get_mut(&host).ok_or(ControlError::UnknownHost(host))?;
        eng.register_nf(id, service, readonly, nf, timing, seed)?;
        eng.start_instance(id, self.now);
        self.timeline.push((self.now, format!("instance_ready service={} instance={id} host={host}", self.cp.catalog().service_name(service))));
        self.after_engine(host);
        Ok(())
    }

    fn rate_at(&self, flow: usize, t: Nanos) -> Option<(f64, Nanos)> {
        self.cfg.flows[flow]
            .segments
            .iter()
            .find(|s| s.start <= t && t < s.stop && s.pps > 0.0)
            .map(|s| (s.pps, s.stop))
    }

    /// Start of the next active segment at or after `t`.
    fn next_active(&self, flow: usize, t: Nanos) -> Option<Nanos> {
        self.cfg.flows[flow]
            .segments
            .iter()
            .filter(|s| s.pps > 0.0 && s.stop > t)
            .map(|s| s.start.max(t))
            .min()
    }

    fn first_send(&mut self, flow: usize) -> Option<Nanos> {
        let start = self.next_active(flow, 0)?;
        let (pps, _) = self.rate_at(flow, start)?;
        let gap = (NANOS_PER_SEC as f64 / pps) as Nanos;
        let t = start + if gap > 0 { self.rng.gen_range(0..gap) } else { 0 };
        if t < self.cfg.duration && self.rate_at(flow, t).is_some() {
            Some(t)
        } else {
            self.next_send(flow, t)
        }
    }

    fn next_send(&self, flow: usize, after: Nanos) -> Option<Nanos> {
        let candidate = match self.rate_at(flow, after) {
            Some((pps, _)) => after + ((NANOS_PER_SEC as f64 / pps) as Nanos).max(1),
            None => after,
        };
        let t = if self.rate_at(flow, candidate).is_some() { candidate } else { self.next_active(flow, candidate)? };
        (t < self.cfg.duration).then_some(t)
    }

    /// Runs to completion and returns the report.
    pub fn run(mut self) -> RunOutcome {
        while let Some(Reverse((t, seq))) = self.heap.pop() {
            let ev = self.events.remove(&seq).expect("scheduled event");
            if t > self.cfg.duration && !self.cfg.drain {
                break;
            }
            self.now = t;
            self.handle(ev);
        }
        self.finish()
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Generate { flow } => self.generate(flow),
            Ev::Arrive { host, port, bytes, meta } => {
                if port != INGRESS_PORT {
                    self.in_transit -= 1;
                }
                let now = self.now;
                if let Some(e) = self.engines.get_mut(&host) {
                    e.rx_dispatch(port, &bytes, meta, now);
                }
                self.after_engine(host);
            }
            Ev::NfDone { host, inst } => {
                let now = self.now;
                let e = self.engines.get_mut(&host).expect("host");
                let delay = e.finish_service(inst, now);
                if delay == 0 {
                    e.tx_collect(now);
                } else {
                    self.push(now + delay, Ev::Release { host, inst });
                }
                self.busy.remove(&(host, inst));
                self.try_start(host, inst);
                self.after_engine(host);
            }
            Ev::Release { host, inst } => {
                let now = self.now;
                let e = self.engines.get_mut(&host).expect("host");
                e.release_delayed(inst);
                e.tx_collect(now);
                self.after_engine(host);
            }
            Ev::CtrlDone => self.controller_done(),
            Ev::FcTimeout { host, flow, request } => {
                let now = self.now;
                if let Some(e) = self.engines.get_mut(&host) {
                    e.controller_failed(&flow, request, "drop_controller_timeout", now);
                }
                self.after_engine(host);
            }
            Ev::ApplyMsg { msg } => self.apply(msg),
            Ev::Ready { spec, inst, params } => {
                if let Err(e) = self.bring_up(spec, inst, &params) {
                    self.timeline.push((self.now, format!("instance_failed error=\"{e}\"")));
                }
            }
            Ev::Script { index } => self.script(index),
            Ev::Sample => {
                self.sample();
                let next = self.now + self.cfg.bin;
                if self.now < self.cfg.duration {
                    self.push(next.min(self.cfg.duration), Ev::Sample);
                }
            }
        }
    }

    fn generate(&mut self, flow: usize) {
        let f = &self.cfg.flows[flow];
        let meta = PacketMeta { born: self.now, packet_id: self.next_packet, flow_label: f.label };
        self.next_packet += 1;
        self.generated += 1;
        let bytes = self.packet_bytes[flow].clone();
        let host = self.cfg.deployment.entry_host;
        let now = self.now;
        self.metrics.add(now, "gen", 1);
        self.push(now, Ev::Arrive { host, port: INGRESS_PORT, bytes, meta });
        if let Some(t) = self.next_send(flow, now) {
            self.push(t, Ev::Generate { flow });
        }
    }

    fn try_start(&mut self, host: HostId, inst: InstanceId) {
        if self.busy.contains(&(host, inst)) {
            return;
        }
        let now = self.now;
        let e = self.engines.get_mut(&host).expect("host");
        if let Some(st) = e.start_service(inst, now) {
            self.busy.insert((host, inst));
            self.push(now + st, Ev::NfDone { host, inst });
        }
    }

    /// Acts on everything the engine produced in the last step.
    fn after_engine(&mut self, host: HostId) {
        loop {
            let e = self.engines.get_mut(&host).expect("host");
            let effects = e.take_effects();
            let messages = e.take_messages();
            if effects.is_empty() && messages.is_empty() {
                break;
            }
            for eff in effects {
                self.effect(host, eff);
            }
            for (_, m) in messages {
                match self.cfg.trust {
                    TrustMode::Trusted => self.apply(m),
                    TrustMode::Untrusted => {
                        let at = self.now + self.cfg.message_latency;
                        self.push(at, Ev::ApplyMsg { msg: m });
                    }
                }
            }
        }
    }

    fn effect(&mut self, host: HostId, eff: Effect) {
        let now = self.now;
        match eff {
            Effect::Egress { port, bytes, meta } => {
                if port == EGRESS_PORT && host == self.cfg.deployment.exit_host {
                    self.egressed += 1;
                    let latency = now - meta.born;
                    self.metrics.add(now, "egress", 1);
                    self.metrics.add(now, "egress_bytes", bytes.len() as i64);
                    self.metrics.sample(now, "lat_us", (latency / 1_000) as i64);
                    if self.cfg.flows.iter().any(|f| f.label == meta.flow_label && f.tracked) {
                        let l = meta.flow_label;
                        self.metrics.add(now, &format!("egress.f{l}"), 1);
                        self.metrics.sample(now, &format!("lat_us.f{l}"), (latency / 1_000) as i64);
                    }
                    self.egress.push(EgressRecord {
                        at: now,
                        flow_label: meta.flow_label,
                        packet_id: meta.packet_id,
                        latency,
                        len: bytes.len(),
                    });
                } else if let Some(link) = self.cp.link_port(port).copied().filter(|l| l.from == host) {
                    self.in_transit += 1;
                    let at = now + self.cfg.deployment.link_delay(link.from, link.to);
                    self.push(at, Ev::Arrive { host: link.to, port, bytes, meta });
                } else {
                    self.sim_drops.bump("drop_unknown_port");
                }
            }
            Effect::Wake(inst) => self.try_start(host, inst),
            Effect::ControllerRequest { request, ingress, flow, bytes } => {
                if self.ctrl_queue.len() >= self.cfg.controller_queue {
                    let e = self.engines.get_mut(&host).expect("host");
                    e.controller_failed(&flow, request, "drop_controller_overflow", now);
                    return;
                }
                self.metrics.add(now, "ctrl_requests", 1);
                self.ctrl_queue.push_back(CtrlRequest { host, request, ingress, flow, bytes });
                let timeout = self.engines[&host].config().controller_timeout;
                self.push(now + timeout, Ev::FcTimeout { host, flow, request });
                if !self.ctrl_busy {
                    self.ctrl_busy = true;
                    self.push(now + self.cfg.controller_latency, Ev::CtrlDone);
                }
            }
        }
    }

    fn controller_done(&mut self) {
        let now = self.now;
        let Some(req) = self.ctrl_queue.pop_front() else {
            self.ctrl_busy = false;
            return;
        };
        let rules = self.cfg.app.packet_in(&mut self.cp, req.host, req.ingress, &req.flow, &req.bytes);
        let e = self.engines.get_mut(&req.host).expect("host");
        match self.cp.install(req.host, rules) {
            Ok(()) => e.controller_reply(&req.flow, req.request, now),
            Err(_) => e.controller_failed(&req.flow, req.request, "drop_bad_rules", now),
        }
        self.metrics.add(now, "ctrl_replies", 1);
        if self.ctrl_queue.is_empty() {
            self.ctrl_busy = false;
        } else {
            self.push(now + self.cfg.controller_latency, Ev::CtrlDone);
        }
        self.after_engine(req.host);
    }

    fn apply(&mut self, msg: ControlMessage) {
        let now = self.now;
        self.messages += 1;
        self.metrics.add(now, "ctrl_msgs", 1);
        match self.cp.apply_message(now, &msg) {
            Ok(MessageOutcome::Forward { from, key, value }) => {
                self.timeline.push((now, format!("message key={key} value={value}")));
                let cmds = self.cfg.app.on_message(&self.cp, from, &key, &value);
                for c in cmds {
                    self.command(c);
                }
            }
            Ok(MessageOutcome::Applied(_)) => {}
            Err(_) => self.metrics.add(now, "ctrl_rejected", 1),
        }
    }

    fn command(&mut self, c: AppCommand) {
        let now = self.now;
        match c {
            AppCommand::Instantiate { service, host, params } => {
                let Some(spec) = self.cfg.nfs.iter().position(|s| s.service == service) else {
                    self.timeline.push((now, format!("instantiate_failed service={service} error=\"no nf spec\"")));
                    return;
                };
                match self.cp.instantiate_nf(service, host) {
                    Ok(inst) => {
                        let name = self.cp.catalog().service_name(service);
                        self.timeline.push((now, format!("instantiate service={name} instance={inst} host={host}")));
                        self.push(now + self.cfg.startup_delay, Ev::Ready { spec, inst, params });
                    }
                    Err(e) => self.timeline.push((now, format!("instantiate_failed service={service} error=\"{e}\""))),
                }
            }
        }
    }

    fn script(&mut self, index: usize) {
        let now = self.now;
        let ev = self.cfg.events[index].clone();
        self.timeline.push((now, format!("event key={} value={}", ev.key, ev.value)));
        match ev.target {
            EventTarget::Controller => self.cfg.app.on_event(&ev.key, &ev.value),
            EventTarget::Service(s) => {
                let hosts: Vec<HostId> = self.engines.keys().copied().collect();
                for h in hosts {
                    self.engines.get_mut(&h).expect("host").deliver_event(s, &ev.key, &ev.value, now);
                    self.after_engine(h);
                }
            }
        }
    }

    fn totals(&self) -> Counters {
        let mut c = Counters::default();
        for e in self.engines.values() {
            merge_counters(&mut c, e.counters());
        }
        merge_counters(&mut c, &self.sim_drops);
        c
    }

    /// Per-bin deltas of the engine counters plus queue depths.
    fn sample(&mut self) {
        // samples belong to the bin that just ended
        let t = self.now.saturating_sub(1);
        let totals = self.totals();
        for (k, v) in &totals.0 {
            let d = v - self.last_counters.get(k);
            if d > 0 {
                self.metrics.add(t, k, d as i64);
            }
        }
        self.last_counters = totals;
        let mut depth: BTreeMap<String, i64> = BTreeMap::new();
        for e in self.engines.values() {
            for id in e.instance_ids() {
                let svc = e.instance_service(id).expect("registered");
                *depth.entry(format!("depth.{}", self.cp.catalog().service_name(svc))).or_default() += e.rx_depth(id) as i64;
            }
        }
        for (k, v) in depth {
            self.metrics.set(t, &k, v);
        }
        self.metrics.set(t, "depth.controller", self.ctrl_queue.len() as i64);
    }

    fn finish(mut self) -> RunOutcome {
        let counters = self.totals();
        let in_flight: u64 = self.engines.values().map(NfManager::in_flight).sum::<u64>() + self.in_transit;
        let drops = counters.drops();
        let mut violations = Vec::new();
        if self.generated != self.egressed + drops + in_flight {
            violations.push(format!(
                "conservation: generated={} egressed={} dropped={drops} in_flight={in_flight}",
                self.generated, self.egressed
            ));
        }
        for k in ["write_violations", "double_free", "stale_descriptor"] {
            if counters.get(k) > 0 {
                violations.push(format!("{k}={}", counters.get(k)));
            }
        }
        let mut summary = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            summary.insert(k.to_string(), v);
        };
        put("seed", self.cfg.seed.to_string());
        put("duration_s", format!("{:.3}", crate::to_secs(self.cfg.duration)));
        put("generated", self.generated.to_string());
        put("egressed", self.egressed.to_string());
        put("dropped", drops.to_string());
        put("in_flight", in_flight.to_string());
        put("conservation", if violations.iter().any(|v| v.starts_with("conservation")) { "fail" } else { "ok" }.into());
        put("control_messages", self.messages.to_string());
        put("instances", self.cp.instance_count().to_string());
        put("violations", violations.len().to_string());
        for (k, v) in &counters.0 {
            put(&format!("count.{k}"), v.to_string());
        }
        if !self.egress.is_empty() {
            let mean = self.egress.iter().map(|r| r.latency as f64).sum::<f64>() / self.egress.len() as f64;
            put("mean_latency_us", format!("{:.3}", mean / 1_000.0));
        }
        let visits = self.engines.values_mut().flat_map(NfManager::take_visits).collect();
        let tables = self.engines.keys().map(|h| (*h, self.cp.snapshot(*h).dump(self.cp.catalog()))).collect();
        RunOutcome {
            metrics: self.metrics,
            summary,
            egress: self.egress,
            visits,
            message_log: self.cp.take_log(),
            timeline: self.timeline,
            counters,
            violations,
            tables,
        }
    }
}

/// Builds and runs a simulation.
pub fn run(cfg: SimConfig) -> Result<RunOutcome, SimError> {
    Ok(Simulation::new(cfg)?.run())
}
