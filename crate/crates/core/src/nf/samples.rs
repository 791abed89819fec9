//! Sample NFs. Every threshold is a parameter; defaults are desk-scale.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::net::Ipv4Addr;

use rand::Rng;
use thiserror::Error;

use super::{NetworkFunction, NfContext, PacketVerdict, PacketView};
use crate::graph::{Vertex, SINK_NAME};
use crate::ids::{Catalog, Endpoint, ServiceId};
use crate::packet;
use crate::tuple::{fnv1a, FiveTuple, FlowPattern};
use crate::{secs, Nanos};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NfConfigError {
    #[error("unknown NF kind `{0}`")]
    UnknownKind(String),
    #[error("missing parameter `{0}`")]
    Missing(String),
    #[error("bad value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
    #[error("unknown service or port `{0}`")]
    UnknownName(String),
}

/// `key=value` parameters from an `nf` config line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Params(pub BTreeMap<String, String>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.0.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, NfConfigError> {
        self.get(key).ok_or_else(|| NfConfigError::Missing(key.to_string()))
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, NfConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| NfConfigError::BadValue { key: key.into(), value: v.into() }),
        }
    }

    pub fn secs_or(&self, key: &str, default: f64) -> Result<Nanos, NfConfigError> {
        self.parse_or(key, default).map(secs)
    }
}

/// IPv4 prefix such as `10.9.9.0/24`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix {
    pub addr: u32,
    pub len: u8,
}

impl Prefix {
    pub fn of(ip: Ipv4Addr, len: u8) -> Self {
        Self { addr: u32::from(ip) & mask(len), len }
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & mask(self.len) == self.addr
    }
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len.min(32)))
    }
}

impl std::fmt::Display for Prefix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", Ipv4Addr::from(self.addr), self.len)
    }
}

impl std::str::FromStr for Prefix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (ip, len) = s.split_once('/').unwrap_or((s, "32"));
        let ip: Ipv4Addr = ip.parse().map_err(|_| format!("bad prefix `{s}`"))?;
        let len: u8 = len.parse().ok().filter(|l| *l <= 32).ok_or_else(|| format!("bad prefix `{s}`"))?;
        Ok(Prefix::of(ip, len))
    }
}

fn prefixes(params: &Params, key: &str) -> Result<Vec<Prefix>, NfConfigError> {
    let Some(v) = params.get(key) else { return Ok(Vec::new()) };
    v.split(';')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| NfConfigError::BadValue { key: key.into(), value: s.into() }))
        .collect()
}

fn endpoint(params: &Params, key: &str, catalog: &Catalog) -> Result<Endpoint, NfConfigError> {
    let name = params.require(key)?;
    catalog.resolve(name).ok_or_else(|| NfConfigError::UnknownName(name.into()))
}

fn service(params: &Params, key: &str, catalog: &Catalog) -> Result<ServiceId, NfConfigError> {
    match endpoint(params, key, catalog)? {
        Endpoint::Service(s) => Ok(s),
        Endpoint::Port(_) => Err(NfConfigError::BadValue { key: key.into(), value: params.require(key)?.into() }),
    }
}

fn vertex(params: &Params, key: &str, catalog: &Catalog) -> Result<Vertex, NfConfigError> {
    if params.get(key) == Some(SINK_NAME) {
        return Ok(Vertex::Sink);
    }
    service(params, key, catalog).map(Vertex::Service)
}

/// Builds a sample NF by kind name.
pub fn build_nf(kind: &str, params: &Params, catalog: &Catalog) -> Result<Box<dyn NetworkFunction>, NfConfigError> {
    Ok(match kind {
        "firewall" => Box::new(Firewall { deny: prefixes(params, "deny")? }),
        "sampler" => Box::new(Sampler {
            fraction: params.parse_or("p", 0.1)?,
            target: endpoint(params, "target", catalog)?,
        }),
        "proxy" => {
            let backends = params
                .require("backends")?
                .split(';')
                .map(|s| s.parse().map_err(|_| NfConfigError::BadValue { key: "backends".into(), value: s.into() }))
                .collect::<Result<Vec<Ipv4Addr>, _>>()?;
            if backends.is_empty() {
                return Err(NfConfigError::Missing("backends".into()));
            }
            Box::new(KeyHashProxy { backends })
        }
        "ant_detector" => {
            let threshold: f64 = params.parse_or("threshold", 20_000.0)?;
            let hysteresis: f64 = params.parse_or("hysteresis", 0.0)?;
            Box::new(AntDetector {
                window: params.secs_or("window", 2.0)?,
                high: threshold * (1.0 + hysteresis),
                low: threshold * (1.0 - hysteresis),
                fast: vertex(params, "fast", catalog)?,
                slow: vertex(params, "slow", catalog)?,
            })
        }
        "ddos_detector" => Box::new(DdosDetector {
            window: params.secs_or("window", 1.0)?,
            threshold: params.parse_or("threshold", 400_000.0)?,
            prefix_len: params.parse_or("prefix_len", 24u8)?,
            current: u64::MAX,
            bytes: HashMap::new(),
            alarmed: BTreeSet::new(),
        }),
        "scrubber" => Box::new(Scrubber { drop: prefixes(params, "prefix")? }),
        "video_detector" => Box::new(VideoDetector {
            bypass: params.get("bypass").map(|_| endpoint(params, "bypass", catalog)).transpose()?,
        }),
        "policy_engine" => Box::new(PolicyEngine {
            transcoder: service(params, "transcoder", catalog)?,
            upstream: service(params, "upstream", catalog)?,
            active: params.get("policy") == Some("on"),
            epoch: 0,
        }),
        "transcoder" => Box::new(Transcoder),
        "shaper" => Box::new(Shaper {
            rate: params.parse_or("rate", 125_000.0)?,
            burst: params.parse_or("burst", 15_000.0)?,
        }),
        "forwarder" => Box::new(Forwarder),
        "monitor" => Box::new(Monitor::default()),
        other => return Err(NfConfigError::UnknownKind(other.to_string())),
    })
}

pub struct Firewall {
    pub deny: Vec<Prefix>,
}

impl NetworkFunction for Firewall {
    fn handle_packet(&mut self, _ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict {
        let src = pkt.flow().src_ip;
        if self.deny.iter().any(|p| p.contains(src)) {
            PacketVerdict::Discard
        } else {
            PacketVerdict::Default
        }
    }
}

/// Sends a random fraction of packets to `target` and the rest along the
/// default path.
pub struct Sampler {
    pub fraction: f64,
    pub target: Endpoint,
}

impl NetworkFunction for Sampler {
    fn handle_packet(&mut self, ctx: &mut NfContext, _pkt: &mut PacketView<'_>) -> PacketVerdict {
        if ctx.rng().gen_bool(self.fraction.clamp(0.0, 1.0)) {
            PacketVerdict::SendTo(self.target)
        } else {
            PacketVerdict::Default
        }
    }
}

/// Extracts the key of a text memcached request (`get <key>`).
pub fn request_key(payload: &[u8]) -> Option<&[u8]> {
    let rest = payload.strip_prefix(b"get ")?;
    let end = rest.iter().position(|b| b.is_ascii_whitespace() || *b == 0).unwrap_or(rest.len());
    (end > 0).then(|| &rest[..end])
}

/// Rewrites the destination address to the backend owning the request key.
pub struct KeyHashProxy {
    pub backends: Vec<Ipv4Addr>,
}

impl KeyHashProxy {
    pub fn backend_for(&self, key: &[u8]) -> Ipv4Addr {
        self.backends[(fnv1a(key) % self.backends.len() as u64) as usize]
    }
}

impl NetworkFunction for KeyHashProxy {
    fn handle_packet(&mut self, _ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict {
        let Some(key) = request_key(pkt.payload()) else { return PacketVerdict::Default };
        let backend = self.backend_for(key);
        if let Ok(bytes) = pkt.bytes_mut() {
            packet::set_dst_ip(bytes, backend);
        }
        PacketVerdict::Default
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowClass {
    Ant,
    Elephant,
}

/// Sliding-window byte-rate classifier with optional hysteresis band.
pub fn classify(rate: f64, previous: Option<FlowClass>, low: f64, high: f64) -> FlowClass {
    match previous {
        Some(FlowClass::Elephant) if rate >= low => FlowClass::Elephant,
        Some(FlowClass::Ant) if rate <= high => FlowClass::Ant,
        _ if rate > high => FlowClass::Elephant,
        _ if rate < low => FlowClass::Ant,
        Some(c) => c,
        None => FlowClass::Ant,
    }
}

struct AntState {
    first: Nanos,
    samples: VecDeque<(Nanos, u64)>,
    bytes: u64,
    class: Option<FlowClass>,
}

/// Classifies flows as ants or elephants by their byte rate over a sliding
/// window and moves each flow's default to the matching path. A flow is
/// first classified once it has been seen for a full window.
pub struct AntDetector {
    pub window: Nanos,
    pub low: f64,
    pub high: f64,
    pub fast: Vertex,
    pub slow: Vertex,
}

impl NetworkFunction for AntDetector {
    fn handle_packet(&mut self, ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict {
        let now = ctx.now();
        let flow = pkt.flow();
        let len = pkt.len() as u64;
        let window = self.window;
        let st = ctx.state().get_or_insert_with(flow, || AntState {
            first: now,
            samples: VecDeque::new(),
            bytes: 0,
            class: None,
        });
        st.samples.push_back((now, len));
        st.bytes += len;
        while let Some(&(t, b)) = st.samples.front() {
            if t + window <= now {
                st.samples.pop_front();
                st.bytes -= b;
            } else {
                break;
            }
        }
        if now.saturating_sub(st.first) < window {
            return PacketVerdict::Default;
        }
        let rate = st.bytes as f64 / crate::to_secs(window);
        let class = classify(rate, st.class, self.low, self.high);
        if st.class != Some(class) {
            st.class = Some(class);
            let target = if class == FlowClass::Ant { self.fast } else { self.slow };
            let service = ctx.service();
            ctx.change_default(FlowPattern::exact(&flow), service, target);
        }
        PacketVerdict::Default
    }
}

/// Aggregates bytes per source prefix over tumbling windows and raises one
/// alarm per prefix when a window's rate exceeds the threshold.
pub struct DdosDetector {
    pub window: Nanos,
    /// Bytes per second.
    pub threshold: f64,
    pub prefix_len: u8,
    current: u64,
    bytes: HashMap<Prefix, u64>,
    alarmed: BTreeSet<Prefix>,
}

impl NetworkFunction for DdosDetector {
    fn handle_packet(&mut self, ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict {
        let w = ctx.now() / self.window.max(1);
        if w != self.current {
            self.current = w;
            self.bytes.clear();
        }
        let prefix = Prefix::of(pkt.flow().src_ip, self.prefix_len);
        let total = self.bytes.entry(prefix).or_default();
        *total += pkt.len() as u64;
        let limit = self.threshold * crate::to_secs(self.window);
        if *total as f64 > limit && self.alarmed.insert(prefix) {
            ctx.message("alarm", prefix.to_string());
        }
        PacketVerdict::Default
    }
}

/// Drops traffic from the given prefixes and, on start, pulls all flows of
/// its predecessors to itself.
pub struct Scrubber {
    pub drop: Vec<Prefix>,
}

impl NetworkFunction for Scrubber {
    fn on_start(&mut self, ctx: &mut NfContext) {
        ctx.request_me(FlowPattern::ANY);
    }

    fn handle_packet(&mut self, _ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict {
        let src = pkt.flow().src_ip;
        if self.drop.iter().any(|p| p.contains(src)) {
            PacketVerdict::Discard
        } else {
            PacketVerdict::Default
        }
    }
}

/// Returns the media type from a `Content-Type:` header in `payload`.
pub fn content_type(payload: &[u8]) -> Option<&str> {
    let text = std::str::from_utf8(&payload[..payload.iter().position(|b| *b == 0).unwrap_or(payload.len())]).ok()?;
    text.split("\r\n").flat_map(|l| l.split('\n')).find_map(|line| {
        let (k, v) = line.split_once(':')?;
        k.trim().eq_ignore_ascii_case("content-type").then(|| v.trim())
    })
}

pub fn is_video(payload: &[u8]) -> bool {
    content_type(payload).is_some_and(|t| t.to_ascii_lowercase().starts_with("video/"))
}

/// Classifies flows from the first packet's headers. Non-video flows are
/// sent straight out and bypass the rest of the chain afterwards.
pub struct VideoDetector {
    pub bypass: Option<Endpoint>,
}

impl NetworkFunction for VideoDetector {
    fn handle_packet(&mut self, ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict {
        let flow = pkt.flow();
        let video = is_video(pkt.payload());
        let service = ctx.service();
        let (video, first) = {
            let st = ctx.state();
            let first = !st.contains(&flow);
            (*st.get_or_insert_with(flow, || video), first)
        };
        if video {
            return PacketVerdict::Default;
        }
        if first {
            ctx.change_default(FlowPattern::exact(&flow), service, Vertex::Sink);
        }
        self.bypass.map_or(PacketVerdict::Default, PacketVerdict::SendTo)
    }
}

struct PolicyFlow {
    video: bool,
    epoch_done: Option<u64>,
}

/// Time-varying policy: while active, video flows go through the
/// transcoder; otherwise every flow is told to bypass this NF.
pub struct PolicyEngine {
    pub transcoder: ServiceId,
    pub upstream: ServiceId,
    pub active: bool,
    epoch: u64,
}

impl NetworkFunction for PolicyEngine {
    fn on_event(&mut self, ctx: &mut NfContext, key: &str, value: &str) {
        if key != "policy" {
            return;
        }
        let active = value == "on";
        if active == self.active {
            return;
        }
        self.active = active;
        self.epoch += 1;
        if active {
            ctx.request_me(FlowPattern::ANY);
        }
    }

    fn handle_packet(&mut self, ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict {
        let flow = pkt.flow();
        let video_now = is_video(pkt.payload());
        let epoch = self.epoch;
        let service = ctx.service();
        let (video, fresh) = {
            let st = ctx.state().get_or_insert_with(flow, || PolicyFlow { video: video_now, epoch_done: None });
            let fresh = st.epoch_done != Some(epoch);
            st.epoch_done = Some(epoch);
            (st.video, fresh)
        };
        let exact = FlowPattern::exact(&flow);
        if self.active && video {
            if fresh {
                ctx.change_default(exact, service, Vertex::Service(self.transcoder));
            }
            return PacketVerdict::SendTo(Endpoint::Service(self.transcoder));
        }
        if fresh {
            ctx.change_default(exact, self.upstream, Vertex::Sink);
        }
        PacketVerdict::Default
    }
}

/// Halves each flow's rate by dropping every second packet.
pub struct Transcoder;

impl NetworkFunction for Transcoder {
    fn handle_packet(&mut self, ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict {
        let n = ctx.state().get_or_insert_with(pkt.flow(), || 0u64);
        *n += 1;
        if n.is_multiple_of(2) {
            PacketVerdict::Discard
        } else {
            PacketVerdict::Default
        }
    }
}

struct Bucket {
    tokens: f64,
    last: Nanos,
}

/// Per-flow token bucket.
pub struct Shaper {
    /// Bytes per second.
    pub rate: f64,
    pub burst: f64,
}

impl NetworkFunction for Shaper {
    fn handle_packet(&mut self, ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict {
        let now = ctx.now();
        let burst = self.burst;
        let b = ctx.state().get_or_insert_with(pkt.flow(), || Bucket { tokens: burst, last: now });
        b.tokens = (b.tokens + self.rate * crate::to_secs(now - b.last)).min(burst);
        b.last = now;
        let need = pkt.len() as f64;
        if b.tokens >= need {
            b.tokens -= need;
            PacketVerdict::Default
        } else {
            PacketVerdict::Discard
        }
    }
}

pub struct Forwarder;

impl NetworkFunction for Forwarder {
    fn handle_packet(&mut self, _ctx: &mut NfContext, _pkt: &mut PacketView<'_>) -> PacketVerdict {
        PacketVerdict::Default
    }
}

#[derive(Default)]
pub struct Monitor {
    pub packets: u64,
    pub bytes: u64,
    pub flows: BTreeSet<FiveTuple>,
}

impl NetworkFunction for Monitor {
    fn handle_packet(&mut self, _ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict {
        self.packets += 1;
        self.bytes += pkt.len() as u64;
        self.flows.insert(pkt.flow());
        PacketVerdict::Default
    }
}
