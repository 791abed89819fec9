//! Controller applications: what runs on packet-in and on application
//! messages from NFs.

use std::collections::BTreeSet;

use crate::flow_table::{Action, FlowRule, MatchKey, FLOW_PRIORITY};
use crate::ids::{Endpoint, HostId, ServiceId};
use crate::nf::samples::is_video;
use crate::nf::Params;
use crate::packet;
use crate::tuple::{FiveTuple, FlowPattern};

use super::{ControlPlane, EGRESS_PORT, INGRESS_PORT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppCommand {
    /// Start a new instance of `service` on `host` with the given parameters.
    Instantiate { service: ServiceId, host: HostId, params: Params },
}

pub trait ControllerApp: Send {
    /// Rules to install for a flow that missed at `host`.
    fn packet_in(
        &mut self,
        cp: &mut ControlPlane,
        host: HostId,
        ingress: Endpoint,
        flow: &FiveTuple,
        bytes: &[u8],
    ) -> Vec<FlowRule>;

    fn on_message(&mut self, _cp: &ControlPlane, _from: ServiceId, _key: &str, _value: &str) -> Vec<AppCommand> {
        Vec::new()
    }

    fn on_event(&mut self, _key: &str, _value: &str) {}
}

/// Starts an instance of `service` when a message with `key` arrives,
/// passing the message value as parameter `param`. Each distinct value
/// triggers once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reaction {
    pub key: String,
    pub service: ServiceId,
    pub param: String,
}

/// Installs the compiled graph for each new flow and runs [`Reaction`]s.
#[derive(Debug, Clone, Default)]
pub struct GraphApp {
    reactions: Vec<Reaction>,
    fired: BTreeSet<(String, String)>,
}

impl GraphApp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_reaction(mut self, r: Reaction) -> Self {
        self.reactions.push(r);
        self
    }
}

impl ControllerApp for GraphApp {
    fn packet_in(
        &mut self,
        cp: &mut ControlPlane,
        host: HostId,
        ingress: Endpoint,
        flow: &FiveTuple,
        _bytes: &[u8],
    ) -> Vec<FlowRule> {
        cp.handle_miss(host, ingress, flow)
    }

    fn on_message(&mut self, cp: &ControlPlane, _from: ServiceId, key: &str, value: &str) -> Vec<AppCommand> {
        let mut out = Vec::new();
        for r in self.reactions.iter().filter(|r| r.key == key) {
            if !self.fired.insert((key.to_string(), format!("{}:{value}", r.service))) {
                continue;
            }
            let Some(host) = cp.deployment().placement.get(&r.service).copied() else { continue };
            out.push(AppCommand::Instantiate {
                service: r.service,
                host,
                params: Params::new().with(&r.param, value),
            });
        }
        out
    }
}

/// Controller-side video policy: on the first packet of a flow, decides
/// from the payload whether the flow goes through the transcoder, and
/// installs exact rules for the whole path. The decision is never revisited.
#[derive(Debug, Clone)]
pub struct CentralizedVideo {
    pub transcoder: ServiceId,
    pub active: bool,
}

impl ControllerApp for CentralizedVideo {
    fn packet_in(
        &mut self,
        cp: &mut ControlPlane,
        host: HostId,
        ingress: Endpoint,
        flow: &FiveTuple,
        bytes: &[u8],
    ) -> Vec<FlowRule> {
        let exact = FlowPattern::exact(flow);
        let rule = |at: Endpoint, to: Action| FlowRule::new(MatchKey::new(at, exact), vec![to], FLOW_PRIORITY);
        if ingress != Endpoint::Port(INGRESS_PORT) {
            return cp.handle_miss(host, ingress, flow);
        }
        if self.active && is_video(packet::payload(bytes)) {
            vec![
                rule(Endpoint::Port(INGRESS_PORT), Action::ToService(self.transcoder)),
                rule(Endpoint::Service(self.transcoder), Action::OutPort(EGRESS_PORT)),
            ]
        } else {
            vec![rule(Endpoint::Port(INGRESS_PORT), Action::OutPort(EGRESS_PORT))]
        }
    }

    fn on_event(&mut self, key: &str, value: &str) {
        if key == "policy" {
            self.active = value == "on";
        }
    }
}
