//! Identifier newtypes shared by the graph, flow table and data path.
//!
//! Services and ports live in one numeric namespace so that a flow-table
//! ingress can hold either: service ids occupy `1..=1023`, port ids start at
//! [`PortId::BASE`].

use std::collections::BTreeMap;
use std::fmt;

/// Highest id a service may use.
pub const MAX_SERVICE_ID: u16 = 1023;

/// Opaque service-type identifier (`1..=1023`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServiceId(u16);

impl ServiceId {
    pub fn new(id: u16) -> Option<Self> {
        (1..=MAX_SERVICE_ID).contains(&id).then_some(Self(id))
    }

    pub fn get(self) -> u16 {
        self.0
    }
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "svc{}", self.0)
    }
}

/// A NIC port or a logical inter-host link port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortId(u16);

impl PortId {
    /// First value of the port range in the shared ingress namespace.
    pub const BASE: u16 = 1024;

    pub const fn new(index: u16) -> Self {
        Self(index)
    }

    pub fn index(self) -> u16 {
        self.0
    }

    /// Position in the shared ingress namespace (disjoint from services).
    pub fn namespace_value(self) -> u32 {
        u32::from(Self::BASE) + u32::from(self.0)
    }
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "eth{}", self.0)
    }
}

/// Identifier of one running NF instance on a host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceId(pub u32);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "nf{}", self.0)
    }
}

/// Identifier of an NF host (one NF manager each).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HostId(pub u16);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

/// Either side of a flow-table ingress or a forwarding target.
///
/// Ordering follows the shared namespace: every service sorts before every
/// port, and lower ids sort first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Service(ServiceId),
    Port(PortId),
}

impl Endpoint {
    pub fn namespace_value(self) -> u32 {
        match self {
            Endpoint::Service(s) => u32::from(s.get()),
            Endpoint::Port(p) => p.namespace_value(),
        }
    }

    pub fn service(self) -> Option<ServiceId> {
        match self {
            Endpoint::Service(s) => Some(s),
            Endpoint::Port(_) => None,
        }
    }
}

impl From<ServiceId> for Endpoint {
    fn from(s: ServiceId) -> Self {
        Endpoint::Service(s)
    }
}

impl From<PortId> for Endpoint {
    fn from(p: PortId) -> Self {
        Endpoint::Port(p)
    }
}

/// Human-readable names for services and ports, used by rule dumps and logs.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    services: BTreeMap<ServiceId, String>,
    ports: BTreeMap<PortId, String>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_service(&mut self, id: ServiceId, name: impl Into<String>) {
        self.services.insert(id, name.into());
    }

    pub fn add_port(&mut self, id: PortId, name: impl Into<String>) {
        self.ports.insert(id, name.into());
    }

    pub fn service_name(&self, id: ServiceId) -> String {
        self.services.get(&id).cloned().unwrap_or_else(|| id.to_string())
    }

    pub fn port_name(&self, id: PortId) -> String {
        self.ports.get(&id).cloned().unwrap_or_else(|| id.to_string())
    }

    pub fn endpoint_name(&self, e: Endpoint) -> String {
        match e {
            Endpoint::Service(s) => self.service_name(s),
            Endpoint::Port(p) => self.port_name(p),
        }
    }

    /// Resolves a name back to an endpoint. Accepts registered names as well
    /// as the raw `svcN` / `ethN` forms.
    pub fn resolve(&self, name: &str) -> Option<Endpoint> {
        if let Some((id, _)) = self.services.iter().find(|(_, n)| n.as_str() == name) {
            return Some(Endpoint::Service(*id));
        }
        if let Some((id, _)) = self.ports.iter().find(|(_, n)| n.as_str() == name) {
            return Some(Endpoint::Port(*id));
        }
        if let Some(rest) = name.strip_prefix("svc") {
            return rest.parse().ok().and_then(ServiceId::new).map(Endpoint::Service);
        }
        if let Some(rest) = name.strip_prefix("eth") {
            return rest.parse().ok().map(|i| Endpoint::Port(PortId::new(i)));
        }
        None
    }

    pub fn services(&self) -> impl Iterator<Item = (ServiceId, &str)> {
        self.services.iter().map(|(id, n)| (*id, n.as_str()))
    }
}
