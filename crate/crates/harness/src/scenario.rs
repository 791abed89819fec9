//! Line-oriented scenario files.
//!
//! A scenario starts with run settings, then `[deployment]`, `[traffic]`
//! and `[events]` sections. `#` starts a comment. Times are seconds unless
//! suffixed with `ms` or `us`.
//!
//! ```text
//! seed 7
//! duration 6
//! setup prepopulate
//! controller app=graph latency=31ms queue=16
//!
//! [deployment]
//! host 0 cores=4
//! graph ddos match=*
//! vertex DDoS id=1 readonly=true
//! edge SOURCE -> DDoS default
//! edge DDoS -> SINK default
//! nf ddos_detector service=DDoS window=0.5
//!
//! [traffic]
//! flow 1 src=10.0.0.1 dst=10.9.9.9 sport=4000 dport=80 proto=17 len=500 rate=100
//! flows 5 label=100 src=66.6.6.1 dst=10.9.9.9 rate=400@2-6
//!
//! [events]
//! at 3 service=DDoS window=1
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use nfchain_core::control::{CentralizedVideo, ControllerApp, Deployment, GraphApp, GraphBinding, Reaction, TrustMode};
use nfchain_core::engine::{BalancePolicy, EngineConfig, InstanceTiming};
use nfchain_core::graph::ServiceGraph;
use nfchain_core::ids::{HostId, ServiceId};
use nfchain_core::nf::{build_nf, Params};
use nfchain_core::sim::{EventTarget, NfSpec, RateSegment, RuleSetup, ScriptEvent, SimConfig, TrafficFlow};
use nfchain_core::tuple::{FiveTuple, FlowPattern};
use nfchain_core::{secs, Nanos};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppChoice {
    /// Installs the compiled graph and reacts to NF messages.
    Graph { reactions: Vec<(String, ServiceId, String)> },
    /// Per-flow rules decided at the first packet.
    CentralizedVideo { transcoder: ServiceId, active: bool },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration: Nanos,
    pub bin: Nanos,
    pub drain: bool,
    pub setup: RuleSetup,
    pub trust: TrustMode,
    pub app: AppChoice,
    pub controller_latency: Nanos,
    pub controller_queue: usize,
    pub message_latency: Nanos,
    pub startup_delay: Nanos,
    pub engine: EngineConfig,
    pub deployment: Deployment,
    pub nfs: Vec<NfSpec>,
    pub flows: Vec<TrafficFlow>,
    pub events: Vec<ScriptEvent>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Run,
    Deployment,
    Traffic,
    Events,
}

/// Controller settings kept as text until the graphs are known.
#[derive(Default)]
struct ControllerLine {
    line: usize,
    app: Option<String>,
    transcoder: Option<String>,
    active: bool,
}

struct Parser {
    sc: Scenario,
    controller: ControllerLine,
    reactions: Vec<(String, ServiceId, String)>,
    entry: Option<HostId>,
    exit: Option<HostId>,
    placed: BTreeMap<ServiceId, HostId>,
    nf_lines: Vec<NfLine>,
}

/// Line number, kind, service name and parameters of an `nf` record.
type NfLine = (usize, String, String, Vec<(String, String)>);

type Fields<'a> = Vec<(&'a str, &'a str)>;

fn err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Syntax { line, message: message.into() }
}

/// Seconds, or a number suffixed with `s`, `ms` or `us`.
pub fn parse_time(v: &str) -> Result<Nanos, String> {
    let (num, scale) = if let Some(n) = v.strip_suffix("ms") {
        (n, 1e-3)
    } else if let Some(n) = v.strip_suffix("us") {
        (n, 1e-6)
    } else if let Some(n) = v.strip_suffix('s') {
        (n, 1.0)
    } else {
        (v, 1.0)
    };
    let x: f64 = num.parse().map_err(|_| format!("bad time `{v}`"))?;
    if !x.is_finite() || x < 0.0 {
        return Err(format!("bad time `{v}`"));
    }
    Ok(secs(x * scale))
}

fn parse_flag(v: &str) -> Result<bool, String> {
    match v {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(format!("expected on or off, got `{v}`")),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("bad value for {key}: `{v}`"))
}

/// Decodes `\s`, `\t`, `\r`, `\n` and `\\`.
fn unescape(v: &str) -> Vec<u8> {
    let mut out = Vec::new();
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next() {
            Some('s') => out.push(b' '),
            Some('t') => out.push(b'\t'),
            Some('r') => out.push(b'\r'),
            Some('n') => out.push(b'\n'),
            Some(other) => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(other.encode_utf8(&mut buf).as_bytes());
            }
            None => out.push(b'\\'),
        }
    }
    out
}

fn fields<'a>(tokens: &[&'a str]) -> Result<Fields<'a>, String> {
    tokens.iter().map(|t| t.split_once('=').ok_or_else(|| format!("expected key=value, got `{t}`"))).collect()
}

/// `100` for the whole run, or `100@0-2,400@2-6` for piecewise rates.
fn parse_rate(v: &str, start: Nanos, stop: Nanos) -> Result<Vec<RateSegment>, String> {
    let mut out = Vec::new();
    for part in v.split(',') {
        let (pps, span) = match part.split_once('@') {
            Some((p, s)) => (p, Some(s)),
            None => (part, None),
        };
        let pps: f64 = parse_num("rate", pps)?;
        if !pps.is_finite() || pps <= 0.0 {
            return Err(format!("rate must be positive, got `{part}`"));
        }
        let (a, b) = match span {
            Some(s) => {
                let (a, b) = s.split_once('-').ok_or_else(|| format!("expected <start>-<stop>, got `{s}`"))?;
                (parse_time(a)?, parse_time(b)?)
            }
            None => (start, stop),
        };
        if b <= a {
            return Err(format!("empty rate segment `{part}`"));
        }
        out.push(RateSegment { start: a, stop: b, pps });
    }
    Ok(out)
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: 1,
            duration: secs(1.0),
            bin: secs(0.1),
            drain: false,
            setup: RuleSetup::Prepopulate,
            trust: TrustMode::Trusted,
            app: AppChoice::Graph { reactions: Vec::new() },
            controller_latency: secs(0.031),
            controller_queue: 16,
            message_latency: 0,
            startup_delay: secs(0.5),
            engine: EngineConfig::default(),
            deployment: Deployment {
                graphs: Vec::new(),
                hosts: BTreeMap::new(),
                placement: BTreeMap::new(),
                entry_host: HostId(0),
                exit_host: HostId(0),
                link_delays: BTreeMap::new(),
                default_link_delay: 0,
                ondemand: BTreeSet::new(),
            },
            nfs: Vec::new(),
            flows: Vec::new(),
            events: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut p = Parser {
            sc: Scenario::default(),
            controller: ControllerLine::default(),
            reactions: Vec::new(),
            entry: None,
            exit: None,
            placed: BTreeMap::new(),
            nf_lines: Vec::new(),
        };
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, raw)| (i + 1, raw.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        // graphs first, so later records may name services defined below them
        for pass in 0..2 {
            let mut section = Section::Run;
            for &(line, text) in &lines {
                if let Some(name) = text.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
                    section = match name.trim() {
                        "run" => Section::Run,
                        "deployment" => Section::Deployment,
                        "traffic" => Section::Traffic,
                        "events" => Section::Events,
                        other => return Err(err(line, format!("unknown section `{other}`"))),
                    };
                    continue;
                }
                let tokens: Vec<&str> = text.split_whitespace().collect();
                let structural = section == Section::Deployment && matches!(tokens[0], "graph" | "vertex" | "edge" | "host");
                if structural != (pass == 0) {
                    continue;
                }
                let r = match section {
                    Section::Run => p.run_record(&tokens, line),
                    Section::Deployment => p.deployment_record(&tokens, line),
                    Section::Traffic => p.traffic_record(&tokens),
                    Section::Events => p.event_record(&tokens),
                };
                r.map_err(|m| err(line, m))?;
            }
        }
        p.finish()
    }

    fn service(&self, name: &str) -> Result<ServiceId, String> {
        self.deployment.service_by_name(name).ok_or_else(|| format!("unknown service `{name}`"))
    }

    /// Checks everything a run needs: the deployment, every NF's
    /// parameters, and that traffic and events fall inside the run.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs: Vec<String> = Vec::new();
        if let Err(v) = self.deployment.validate() {
            errs.extend(v.iter().map(ToString::to_string));
        }
        let catalog = self.deployment.catalog();
        let mut covered = BTreeSet::new();
        for nf in &self.nfs {
            covered.insert(nf.service);
            if let Err(e) = build_nf(&nf.kind, &nf.params, &catalog) {
                errs.push(format!("nf {} for {}: {e}", nf.kind, catalog.service_name(nf.service)));
            }
            if nf.count == 0 && !self.deployment.ondemand.contains(&nf.service) {
                errs.push(format!("service {} has no instance", catalog.service_name(nf.service)));
            }
        }
        for (id, _) in self.deployment.services() {
            if !covered.contains(&id) {
                errs.push(format!("service {} has no nf record", catalog.service_name(id)));
            }
        }
        for f in &self.flows {
            if f.segments.iter().any(|s| s.start >= self.duration) {
                errs.push(format!("flow {} starts after the run ends", f.label));
            }
        }
        let labels: BTreeSet<u32> = self.flows.iter().map(|f| f.label).collect();
        if labels.len() != self.flows.len() {
            errs.push("flow labels are not unique".into());
        }
        for e in &self.events {
            if e.at > self.duration {
                errs.push(format!("event {}={} after the run ends", e.key, e.value));
            }
        }
        if self.bin == 0 {
            errs.push("bin must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errs))
        }
    }

    pub fn app(&self) -> Box<dyn ControllerApp> {
        match &self.app {
            AppChoice::Graph { reactions } => {
                let mut app = GraphApp::new();
                for (key, service, param) in reactions {
                    app = app.with_reaction(Reaction { key: key.clone(), service: *service, param: param.clone() });
                }
                Box::new(app)
            }
            AppChoice::CentralizedVideo { transcoder, active } => {
                Box::new(CentralizedVideo { transcoder: *transcoder, active: *active })
            }
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut c = SimConfig::new(self.deployment.clone(), self.app());
        c.nfs = self.nfs.clone();
        c.flows = self.flows.clone();
        c.events = self.events.clone();
        c.setup = self.setup;
        c.trust = self.trust;
        c.engine = self.engine.clone();
        c.controller_latency = self.controller_latency;
        c.controller_queue = self.controller_queue;
        c.message_latency = self.message_latency;
        c.startup_delay = self.startup_delay;
        c.bin = self.bin;
        c.duration = self.duration;
        c.drain = self.drain;
        c.seed = self.seed;
        c
    }

    /// First event of `key` sent to `target`, if scripted.
    pub fn event_time(&self, key: &str) -> Option<Nanos> {
        self.events.iter().filter(|e| e.key == key).map(|e| e.at).min()
    }
}

impl Parser {
    fn run_record(&mut self, t: &[&str], line: usize) -> Result<(), String> {
        let arg = || t.get(1).copied().ok_or_else(|| format!("`{}` needs a value", t[0]));
        let sc = &mut self.sc;
        match t[0] {
            "name" => sc.name = arg()?.to_string(),
            "seed" => sc.seed = parse_num("seed", arg()?)?,
            "duration" => sc.duration = parse_time(arg()?)?,
            "bin" => sc.bin = parse_time(arg()?)?,
            "drain" => sc.drain = parse_flag(arg()?)?,
            "startup" => sc.startup_delay = parse_time(arg()?)?,
            "message_latency" => sc.message_latency = parse_time(arg()?)?,
            "setup" => {
                sc.setup = match arg()? {
                    "prepopulate" => RuleSetup::Prepopulate,
                    "on_miss" => RuleSetup::OnMiss,
                    other => return Err(format!("unknown setup `{other}`")),
                }
            }
            "trust" => {
                sc.trust = match arg()? {
                    "trusted" => TrustMode::Trusted,
                    "untrusted" => TrustMode::Untrusted,
                    other => return Err(format!("unknown trust mode `{other}`")),
                }
            }
            "controller" => {
                self.controller.line = line;
                for (k, v) in fields(&t[1..])? {
                    match k {
                        "app" => self.controller.app = Some(v.to_string()),
                        "latency" => sc.controller_latency = parse_time(v)?,
                        "queue" => sc.controller_queue = parse_num(k, v)?,
                        "transcoder" => self.controller.transcoder = Some(v.to_string()),
                        "active" => self.controller.active = parse_flag(v)?,
                        other => return Err(format!("unknown controller setting `{other}`")),
                    }
                }
            }
            "engine" => {
                for (k, v) in fields(&t[1..])? {
                    let e = &mut sc.engine;
                    match k {
                        "queue" => e.queue_capacity = parse_num(k, v)?,
                        "pool" => e.pool_capacity = parse_num(k, v)?,
                        "timeout" => e.controller_timeout = parse_time(v)?,
                        "miss_buffer" => e.miss_buffer_per_flow = parse_num(k, v)?,
                        "max_hops" => e.max_hops = parse_num(k, v)?,
                        "cache" => e.cache_lookups = parse_flag(v)?,
                        "trace" => e.trace = parse_flag(v)?,
                        "balance" => {
                            e.balance = match v {
                                "queue" => BalancePolicy::QueueDepth,
                                "hash" => BalancePolicy::FlowHash,
                                other => return Err(format!("unknown balance policy `{other}`")),
                            }
                        }
                        other => return Err(format!("unknown engine setting `{other}`")),
                    }
                }
            }
            other => return Err(format!("unknown run setting `{other}`")),
        }
        Ok(())
    }

    fn host(v: &str) -> Result<HostId, String> {
        parse_num("host", v).map(HostId)
    }

    fn deployment_record(&mut self, t: &[&str], line: usize) -> Result<(), String> {
        let d = &mut self.sc.deployment;
        match t[0] {
            "host" => {
                let id = Self::host(t.get(1).ok_or("host needs an id")?)?;
                let mut cores = 1;
                for (k, v) in fields(&t[2..])? {
                    match k {
                        "cores" => cores = parse_num(k, v)?,
                        other => return Err(format!("unknown host setting `{other}`")),
                    }
                }
                if d.hosts.insert(id, cores).is_some() {
                    return Err(format!("host {id} defined twice"));
                }
            }
            "graph" => {
                let name = t.get(1).ok_or("graph needs a name")?;
                let mut classifier = FlowPattern::ANY;
                for (k, v) in fields(&t[2..])? {
                    match k {
                        "match" => classifier = v.parse().map_err(|e| format!("{e}"))?,
                        other => return Err(format!("unknown graph setting `{other}`")),
                    }
                }
                d.graphs.push(GraphBinding { graph: ServiceGraph::new(*name), classifier });
            }
            "vertex" | "edge" => {
                let g = d.graphs.last_mut().ok_or("vertex or edge before any graph")?;
                g.graph.parse_record(&t.join(" "))?;
            }
            "entry" => self.entry = Some(Self::host(t.get(1).ok_or("entry needs a host")?)?),
            "exit" => self.exit = Some(Self::host(t.get(1).ok_or("exit needs a host")?)?),
            "link" => {
                let (a, b) = match t {
                    [_, a, b, ..] => (Self::host(a)?, Self::host(b)?),
                    _ => return Err("link needs two hosts".into()),
                };
                for (k, v) in fields(&t[3..])? {
                    match k {
                        "delay" => {
                            d.link_delays.insert((a.min(b), a.max(b)), parse_time(v)?);
                        }
                        other => return Err(format!("unknown link setting `{other}`")),
                    }
                }
            }
            "default_link" => {
                for (k, v) in fields(&t[1..])? {
                    match k {
                        "delay" => d.default_link_delay = parse_time(v)?,
                        other => return Err(format!("unknown link setting `{other}`")),
                    }
                }
            }
            "place" => {
                let s = self.sc.service(t.get(1).ok_or("place needs a service")?)?;
                for (k, v) in fields(&t[2..])? {
                    match k {
                        "host" => {
                            self.placed.insert(s, Self::host(v)?);
                        }
                        other => return Err(format!("unknown placement setting `{other}`")),
                    }
                }
            }
            "ondemand" => {
                let s = self.sc.service(t.get(1).ok_or("ondemand needs a service")?)?;
                self.sc.deployment.ondemand.insert(s);
            }
            "nf" => {
                let kind = t.get(1).ok_or("nf needs a kind")?.to_string();
                let mut service = None;
                let mut rest = Vec::new();
                for (k, v) in fields(&t[2..])? {
                    if k == "service" {
                        service = Some(v.to_string());
                    } else {
                        rest.push((k.to_string(), v.to_string()));
                    }
                }
                let service = service.ok_or("nf needs service=<name>")?;
                self.nf_lines.push((line, kind, service, rest));
            }
            "react" => {
                let key = t.get(1).ok_or("react needs a message key")?.to_string();
                let (mut service, mut param) = (None, None);
                for (k, v) in fields(&t[2..])? {
                    match k {
                        "service" => service = Some(self.sc.service(v)?),
                        "param" => param = Some(v.to_string()),
                        other => return Err(format!("unknown react setting `{other}`")),
                    }
                }
                let service = service.ok_or("react needs service=<name>")?;
                self.reactions.push((key, service, param.ok_or("react needs param=<name>")?));
            }
            other => return Err(format!("unknown deployment record `{other}`")),
        }
        Ok(())
    }

    fn traffic_record(&mut self, t: &[&str]) -> Result<(), String> {
        let (count, first_label, rest) = match t[0] {
            "flow" => (1, parse_num::<u32>("label", t.get(1).ok_or("flow needs a label")?)?, &t[2..]),
            "flows" => (parse_num::<u32>("count", t.get(1).ok_or("flows needs a count")?)?, 0, &t[2..]),
            other => return Err(format!("unknown traffic record `{other}`")),
        };
        let mut label = first_label;
        let mut src = Ipv4Addr::new(10, 0, 0, 1);
        let mut dst = Ipv4Addr::new(10, 9, 9, 9);
        let (mut sport, mut dport, mut proto) = (1000u16, 80u16, 17u8);
        let (mut src_step, mut sport_step) = (1u32, 1u16);
        let mut len = 200usize;
        let mut rate: Option<&str> = None;
        let mut start = 0;
        let mut stop = None;
        let mut every = 0;
        let mut lifetime = None;
        let mut payload = Vec::new();
        let mut tracked = false;
        for (k, v) in fields(rest)? {
            match k {
                "label" => label = parse_num(k, v)?,
                "src" => src = parse_num(k, v)?,
                "dst" => dst = parse_num(k, v)?,
                "sport" => sport = parse_num(k, v)?,
                "dport" => dport = parse_num(k, v)?,
                "proto" => proto = parse_num(k, v)?,
                "src_step" => src_step = parse_num(k, v)?,
                "sport_step" => sport_step = parse_num(k, v)?,
                "len" => len = parse_num(k, v)?,
                "rate" => rate = Some(v),
                "start" => start = parse_time(v)?,
                "stop" => stop = Some(parse_time(v)?),
                "every" => every = parse_time(v)?,
                "lifetime" => lifetime = Some(parse_time(v)?),
                "payload" => payload = unescape(v),
                "tracked" => tracked = parse_flag(v)?,
                other => return Err(format!("unknown flow setting `{other}`")),
            }
        }
        let rate = rate.ok_or("flow needs rate=<pps>")?;
        for i in 0..count {
            let begin = start + Nanos::from(i) * every;
            let end = match (lifetime, stop) {
                (Some(l), _) => begin + l,
                (None, Some(s)) => s,
                (None, None) => self.sc.duration,
            };
            let segments = parse_rate(rate, begin, end.min(self.sc.duration))?;
            let tuple = FiveTuple::new(
                Ipv4Addr::from(u32::from(src).wrapping_add(i * src_step)),
                dst,
                sport.wrapping_add((i as u16).wrapping_mul(sport_step)),
                dport,
                proto,
            );
            self.sc.flows.push(TrafficFlow {
                label: label + i,
                tuple,
                segments,
                packet_len: len,
                payload: payload.clone(),
                tracked,
            });
        }
        Ok(())
    }

    fn event_record(&mut self, t: &[&str]) -> Result<(), String> {
        if t[0] != "at" {
            return Err(format!("unknown event record `{}`", t[0]));
        }
        let at = parse_time(t.get(1).ok_or("at needs a time")?)?;
        let (target, rest) = match t.get(2) {
            Some(&"controller") => (EventTarget::Controller, &t[3..]),
            Some(s) if s.starts_with("service=") => (EventTarget::Service(self.sc.service(&s["service=".len()..])?), &t[3..]),
            _ => return Err("event needs `controller` or service=<name>".into()),
        };
        let kv = fields(rest)?;
        if kv.is_empty() {
            return Err("event needs key=value".into());
        }
        for (k, v) in kv {
            self.sc.events.push(ScriptEvent { at, target: target.clone(), key: k.into(), value: v.into() });
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Scenario, ScenarioError> {
        let sc = &mut self.sc;
        if sc.deployment.hosts.is_empty() {
            sc.deployment.hosts.insert(HostId(0), 1);
        }
        let first = *sc.deployment.hosts.keys().next().expect("one host");
        sc.deployment.entry_host = self.entry.unwrap_or(first);
        sc.deployment.exit_host = self.exit.unwrap_or(sc.deployment.entry_host);
        for (id, _) in sc.deployment.services() {
            let host = self.placed.get(&id).copied().unwrap_or(sc.deployment.entry_host);
            sc.deployment.placement.insert(id, host);
        }
        for (line, kind, service, rest) in std::mem::take(&mut self.nf_lines) {
            let id = sc.service(&service).map_err(|m| err(line, m))?;
            let mut params = Params::new();
            let mut timing = InstanceTiming::default();
            let mut count = u32::from(!sc.deployment.ondemand.contains(&id));
            for (k, v) in rest {
                match k.as_str() {
                    "count" => count = parse_num(&k, &v).map_err(|m| err(line, m))?,
                    "service_time" => timing.service = parse_time(&v).map_err(|m| err(line, m))?,
                    "delay" => timing.delay = parse_time(&v).map_err(|m| err(line, m))?,
                    _ => params.insert(k, v),
                }
            }
            let host = sc.deployment.placement[&id];
            sc.nfs.push(NfSpec { service: id, host, kind, params, timing, count });
        }
        let c = &self.controller;
        sc.app = match c.app.as_deref() {
            None | Some("graph") => AppChoice::Graph { reactions: std::mem::take(&mut self.reactions) },
            Some("centralized_video") => {
                let name = c.transcoder.as_deref().ok_or_else(|| err(c.line, "centralized_video needs transcoder=<name>"))?;
                let transcoder = sc.service(name).map_err(|m| err(c.line, m))?;
                AppChoice::CentralizedVideo { transcoder, active: c.active }
            }
            Some(other) => return Err(err(c.line, format!("unknown controller app `{other}`"))),
        };
        Ok(self.sc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
name small
seed 3
duration 2
controller app=graph latency=5ms

[deployment]
host 0 cores=2
graph g
vertex A id=1 readonly=true
edge SOURCE -> A default
edge A -> SINK default
nf monitor service=A count=2 service_time=3us

[traffic]
flows 3 label=10 src=10.0.0.1 rate=100@0-1,50@1-2 payload=Content-Type:\\svideo/mp4

[events]
at 1.5 service=A mode=x
at 1 controller policy=on
";

    #[test]
    fn parses_every_section() {
        let sc = Scenario::parse(SMALL).unwrap();
        assert_eq!(sc.seed, 3);
        assert_eq!(sc.duration, secs(2.0));
        assert_eq!(sc.controller_latency, secs(0.005));
        assert_eq!(sc.nfs.len(), 1);
        assert_eq!(sc.nfs[0].count, 2);
        assert_eq!(sc.nfs[0].timing.service, 3_000);
        assert_eq!(sc.flows.len(), 3);
        assert_eq!(sc.flows[2].label, 12);
        assert_eq!(sc.flows[2].tuple.src_ip, Ipv4Addr::new(10, 0, 0, 3));
        assert_eq!(sc.flows[0].segments.len(), 2);
        assert_eq!(sc.flows[0].payload, b"Content-Type: video/mp4");
        assert_eq!(sc.events.len(), 2);
        assert_eq!(sc.events[1].target, EventTarget::Controller);
        assert_eq!(sc.validate(), Ok(()));
    }

    #[test]
    fn records_may_name_services_defined_later() {
        let text = "[deployment]\nnf forwarder service=A\nhost 0 cores=1\ngraph g\nvertex A id=1 readonly=false\n\
                    edge SOURCE -> A default\nedge A -> SINK default\n";
        let sc = Scenario::parse(text).unwrap();
        assert_eq!(sc.validate(), Ok(()));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Scenario::parse("seed 1\nduration soon\n").unwrap_err();
        assert_eq!(e, err(2, "bad time `soon`"));
        let e = Scenario::parse("[deployment]\nhost 0 cores=1\nnf forwarder service=Nope\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Syntax { line: 3, .. }), "{e}");
    }

    #[test]
    fn validation_reports_missing_nfs_and_late_traffic() {
        let text = "duration 1\n[deployment]\nhost 0 cores=1\ngraph g\nvertex A id=1 readonly=false\n\
                    edge SOURCE -> A default\nedge A -> SINK default\n[traffic]\nflow 1 rate=10@2-3\n";
        let Err(ScenarioError::Invalid(v)) = Scenario::parse(text).unwrap().validate() else { panic!() };
        assert!(v.iter().any(|m| m.contains("no nf record")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("after the run ends")), "{v:?}");
    }

    #[test]
    fn time_units() {
        assert_eq!(parse_time("31ms"), Ok(31_000_000));
        assert_eq!(parse_time("2us"), Ok(2_000));
        assert_eq!(parse_time("1.5s"), Ok(1_500_000_000));
        assert_eq!(parse_time("0.25"), Ok(250_000_000));
        assert!(parse_time("-1").is_err());
    }
}
