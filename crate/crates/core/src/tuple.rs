//! Five-tuples and per-field exact/wildcard match patterns.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FiveTuple {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl FiveTuple {
    pub fn new(src_ip: Ipv4Addr, dst_ip: Ipv4Addr, src_port: u16, dst_port: u16, proto: u8) -> Self {
        Self { src_ip, dst_ip, src_port, dst_port, proto }
    }

    /// FNV-1a over the tuple fields. Stable across runs and platforms.
    pub fn stable_hash(&self) -> u64 {
        let mut bytes = [0u8; 13];
        bytes[0..4].copy_from_slice(&self.src_ip.octets());
        bytes[4..8].copy_from_slice(&self.dst_ip.octets());
        bytes[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        bytes[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        bytes[12] = self.proto;
        fnv1a(&bytes)
    }
}

impl fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}>{}:{}/{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.proto
        )
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Match pattern over the five-tuple; `None` is a wildcard.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowPattern {
    pub src_ip: Option<Ipv4Addr>,
    pub dst_ip: Option<Ipv4Addr>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub proto: Option<u8>,
}

impl FlowPattern {
    pub const ANY: FlowPattern =
        FlowPattern { src_ip: None, dst_ip: None, src_port: None, dst_port: None, proto: None };

    pub fn exact(t: &FiveTuple) -> Self {
        Self {
            src_ip: Some(t.src_ip),
            dst_ip: Some(t.dst_ip),
            src_port: Some(t.src_port),
            dst_port: Some(t.dst_port),
            proto: Some(t.proto),
        }
    }

    pub fn with_src(mut self, ip: Ipv4Addr) -> Self {
        self.src_ip = Some(ip);
        self
    }

    pub fn with_dst_port(mut self, port: u16) -> Self {
        self.dst_port = Some(port);
        self
    }

    pub fn matches(&self, t: &FiveTuple) -> bool {
        self.src_ip.is_none_or(|v| v == t.src_ip)
            && self.dst_ip.is_none_or(|v| v == t.dst_ip)
            && self.src_port.is_none_or(|v| v == t.src_port)
            && self.dst_port.is_none_or(|v| v == t.dst_port)
            && self.proto.is_none_or(|v| v == t.proto)
    }

    pub fn wildcard_count(&self) -> u8 {
        u8::from(self.src_ip.is_none())
            + u8::from(self.dst_ip.is_none())
            + u8::from(self.src_port.is_none())
            + u8::from(self.dst_port.is_none())
            + u8::from(self.proto.is_none())
    }

    /// True when every tuple matched by `self` is also matched by `other`.
    pub fn is_subset_of(&self, other: &FlowPattern) -> bool {
        fn field<T: PartialEq>(mine: Option<T>, theirs: Option<T>) -> bool {
            match (mine, theirs) {
                (_, None) => true,
                (Some(a), Some(b)) => a == b,
                (None, Some(_)) => false,
            }
        }
        field(self.src_ip, other.src_ip)
            && field(self.dst_ip, other.dst_ip)
            && field(self.src_port, other.src_port)
            && field(self.dst_port, other.dst_port)
            && field(self.proto, other.proto)
    }

    pub fn intersects(&self, other: &FlowPattern) -> bool {
        fn field<T: PartialEq>(a: Option<T>, b: Option<T>) -> bool {
            match (a, b) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
        }
        field(self.src_ip, other.src_ip)
            && field(self.dst_ip, other.dst_ip)
            && field(self.src_port, other.src_port)
            && field(self.dst_port, other.dst_port)
            && field(self.proto, other.proto)
    }
}

impl fmt::Display for FlowPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(v) = self.src_ip {
            parts.push(format!("src={v}"));
        }
        if let Some(v) = self.dst_ip {
            parts.push(format!("dst={v}"));
        }
        if let Some(v) = self.src_port {
            parts.push(format!("sport={v}"));
        }
        if let Some(v) = self.dst_port {
            parts.push(format!("dport={v}"));
        }
        if let Some(v) = self.proto {
            parts.push(format!("proto={v}"));
        }
        if parts.is_empty() {
            f.write_str("*")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad flow pattern `{input}`: {reason}")]
pub struct PatternError {
    pub input: String,
    pub reason: String,
}

impl FromStr for FlowPattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| PatternError { input: s.to_string(), reason };
        let s = s.trim();
        let mut p = FlowPattern::ANY;
        if s == "*" || s.is_empty() {
            return Ok(p);
        }
        for part in s.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{part}`")))?;
            let bad = |_| err(format!("bad value for {k}: `{v}`"));
            match k {
                "src" | "srcIP" => p.src_ip = Some(v.parse().map_err(|_| err(format!("bad ip `{v}`")))?),
                "dst" | "dstIP" => p.dst_ip = Some(v.parse().map_err(|_| err(format!("bad ip `{v}`")))?),
                "sport" => p.src_port = Some(v.parse().map_err(bad)?),
                "dport" => p.dst_port = Some(v.parse().map_err(bad)?),
                "proto" => p.proto = Some(v.parse().map_err(bad)?),
                other => return Err(err(format!("unknown field `{other}`"))),
            }
        }
        Ok(p)
    }
}
