//! The video-optimizer graph and the per-flow rules for bronze and gold
//! users.

use std::net::Ipv4Addr;

use nfchain_core::control::{ControlPlane, Deployment, TrustMode, INGRESS_PORT};
use nfchain_core::flow_table::{Action, FlowRule, MatchKey, FLOW_PRIORITY};
use nfchain_core::graph::ServiceGraph;
use nfchain_core::ids::{Endpoint, HostId, ServiceId};
use nfchain_core::tuple::{FiveTuple, FlowPattern};

pub const VIDEO: &str = "\
vertex VD id=1 readonly=true
vertex PE id=2 readonly=true
vertex TC id=3 readonly=false
vertex C id=4 readonly=false
edge SOURCE -> VD default
edge VD -> PE default
edge VD -> SINK
edge PE -> TC default
edge PE -> C
edge TC -> C default
edge C -> SINK default
";

pub const BRONZE: Ipv4Addr = Ipv4Addr::new(10, 1, 0, 7);
pub const GOLD: Ipv4Addr = Ipv4Addr::new(10, 2, 0, 7);

pub fn s(n: u16) -> ServiceId {
    ServiceId::new(n).unwrap()
}

pub fn from(src: Ipv4Addr) -> FiveTuple {
    FiveTuple::new(src, Ipv4Addr::new(93, 184, 216, 34), 50_000, 80, 6)
}

pub fn plane() -> ControlPlane {
    let g = ServiceGraph::parse(VIDEO).unwrap();
    let mut cp = ControlPlane::new(Deployment::single_host(g, 8), TrustMode::Trusted).unwrap();
    cp.prepopulate().unwrap();
    cp
}

pub fn actions(cp: &ControlPlane, at: Endpoint, f: &FiveTuple) -> Vec<Action> {
    cp.snapshot(HostId(0)).lookup(at, f).unwrap().rule.actions.clone()
}

pub fn per_flow_rules() -> Vec<FlowRule> {
    let rule = |at: Endpoint, src: Ipv4Addr, a: Vec<Action>| {
        FlowRule::new(MatchKey::new(at, FlowPattern::ANY.with_src(src)), a, FLOW_PRIORITY)
    };
    vec![
        rule(INGRESS_PORT.into(), BRONZE, vec![Action::ToService(s(2))]),
        rule(s(2).into(), BRONZE, vec![Action::ToService(s(3))]),
        rule(INGRESS_PORT.into(), GOLD, vec![Action::ToService(s(2))]),
        rule(s(2).into(), GOLD, vec![Action::ToService(s(4)), Action::ToService(s(3))]),
    ]
}

/// Compiled default table of the video graph as dumped by the control plane.
pub const GOLDEN_DUMP: &str = "\
prio=100 in=VD match=* par=0 actions=PE,eth1
prio=100 in=PE match=* par=0 actions=TC,C
prio=100 in=TC match=* par=0 actions=C
prio=100 in=C match=* par=0 actions=eth1
prio=100 in=eth0 match=* par=0 actions=VD
";
