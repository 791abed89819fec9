//! Cross-layer control messages sent by NFs to the NF manager and upward to
//! the control application.

use std::fmt;

use crate::graph::Vertex;
use crate::ids::{Catalog, InstanceId, ServiceId};
use crate::tuple::FlowPattern;
use crate::{to_secs, Nanos};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MessageKind {
    /// Vertices whose default edge leads to `service` bypass it for `flow`.
    SkipMe { flow: FlowPattern, service: ServiceId },
    /// Every vertex with an edge into `service` makes it the default for `flow`.
    RequestMe { flow: FlowPattern, service: ServiceId },
    /// The rule for `flow` at `service` gets `target` as its default.
    ChangeDefault { flow: FlowPattern, service: ServiceId, target: Vertex },
    /// Application-level notification from `service`.
    Message { service: ServiceId, key: String, value: String },
}

impl MessageKind {
    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::SkipMe { .. } => "SkipMe",
            MessageKind::RequestMe { .. } => "RequestMe",
            MessageKind::ChangeDefault { .. } => "ChangeDefault",
            MessageKind::Message { .. } => "Message",
        }
    }

    pub fn flow(&self) -> FlowPattern {
        match self {
            MessageKind::SkipMe { flow, .. }
            | MessageKind::RequestMe { flow, .. }
            | MessageKind::ChangeDefault { flow, .. } => *flow,
            MessageKind::Message { .. } => FlowPattern::ANY,
        }
    }

    pub fn service(&self) -> ServiceId {
        match self {
            MessageKind::SkipMe { service, .. }
            | MessageKind::RequestMe { service, .. }
            | MessageKind::ChangeDefault { service, .. }
            | MessageKind::Message { service, .. } => *service,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ControlMessage {
    pub kind: MessageKind,
    pub origin: InstanceId,
    /// Service of the sending instance.
    pub from: ServiceId,
}

impl ControlMessage {
    /// `t=<time> msg=<kind> from=<svc> flow=<pattern> [target=<svc>]`
    pub fn log_line(&self, now: Nanos, catalog: &Catalog, vertex_name: impl Fn(Vertex) -> String) -> String {
        let mut line = format!(
            "t={:.6} msg={} from={} flow={}",
            to_secs(now),
            self.kind.name(),
            catalog.service_name(self.from),
            self.kind.flow()
        );
        match &self.kind {
            MessageKind::SkipMe { service, .. } | MessageKind::RequestMe { service, .. } => {
                if *service != self.from {
                    line.push_str(&format!(" target={}", catalog.service_name(*service)));
                }
            }
            MessageKind::ChangeDefault { service, target, .. } => {
                line.push_str(&format!(" at={} target={}", catalog.service_name(*service), vertex_name(*target)));
            }
            MessageKind::Message { key, value, .. } => {
                line.push_str(&format!(" key={key} value={value}"));
            }
        }
        line
    }
}

impl fmt::Display for ControlMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}) from {}", self.kind.name(), self.kind.flow(), self.origin)
    }
}
