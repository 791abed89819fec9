use super::*;
use crate::graph::tests::{sid, ANOMALY, VIDEO};
use crate::ids::InstanceId;
use std::net::Ipv4Addr;

fn flow(src: u8) -> FiveTuple {
    FiveTuple::new(Ipv4Addr::new(10, 0, 0, src), Ipv4Addr::new(10, 9, 9, 9), 4000, 80, 6)
}

fn cp_for(text: &str) -> ControlPlane {
    let g = ServiceGraph::parse(text).unwrap();
    let mut cp = ControlPlane::new(Deployment::single_host(g, 16), TrustMode::Trusted).unwrap();
    cp.prepopulate().unwrap();
    cp
}

fn msg(kind: MessageKind, from: u16) -> ControlMessage {
    ControlMessage { kind, origin: InstanceId(1), from: sid(from) }
}

fn lookup(cp: &ControlPlane, at: Endpoint, f: &FiveTuple) -> Vec<Action> {
    cp.snapshot(HostId(0)).lookup(at, f).map(|h| h.rule.actions.clone()).unwrap_or_default()
}

#[test]
fn single_vertex_graph_compiles_to_two_rules() {
    let cp = cp_for("vertex FW id=1 readonly=false\nedge SOURCE -> FW default\nedge FW -> SINK default\n");
    let t = cp.snapshot(HostId(0));
    assert_eq!(t.len(), 2);
    assert_eq!(lookup(&cp, INGRESS_PORT.into(), &flow(1)), vec![Action::ToService(sid(1))]);
    assert_eq!(lookup(&cp, sid(1).into(), &flow(1)), vec![Action::OutPort(EGRESS_PORT)]);
}

#[test]
fn anomaly_graph_flags_read_only_chains_parallel() {
    let cp = cp_for(ANOMALY);
    let t = cp.snapshot(HostId(0));
    let parallel: Vec<Endpoint> = t.rules().filter(|r| r.parallel).map(|r| r.key.ingress).collect();
    // Firewall->Sampler and DDoS->IDS; the group tails keep plain rules
    assert_eq!(parallel, vec![Endpoint::Service(sid(1)), Endpoint::Service(sid(3))]);
    assert_eq!(lookup(&cp, sid(3).into(), &flow(1)), vec![Action::ToService(sid(4))]);
}

#[test]
fn skip_me_moves_upstream_default_past_the_service() {
    let mut cp = cp_for(
        "vertex A id=1 readonly=false\nvertex B id=2 readonly=false\nvertex C id=3 readonly=false\n\
         edge SOURCE -> A default\nedge A -> B default\nedge B -> C default\nedge C -> SINK default\n",
    );
    let f = flow(1);
    let out = cp.apply_message(0, &msg(MessageKind::SkipMe { flow: FlowPattern::exact(&f), service: sid(2) }, 2));
    assert_eq!(out, Ok(MessageOutcome::Applied(1)));
    assert_eq!(lookup(&cp, sid(1).into(), &f)[0], Action::ToService(sid(3)));
    assert_eq!(lookup(&cp, sid(1).into(), &flow(2))[0], Action::ToService(sid(2)));
    assert!(cp.check_containment().is_empty());
}

#[test]
fn change_default_to_non_edge_is_rejected_and_tables_untouched() {
    let mut cp = cp_for(VIDEO);
    let before = cp.snapshot(HostId(0)).rule_set();
    let m = msg(
        MessageKind::ChangeDefault { flow: FlowPattern::ANY, service: sid(3), target: Vertex::Service(sid(1)) },
        3,
    );
    assert!(matches!(cp.apply_message(0, &m), Err(MessageError::EdgeNotInGraph { .. })));
    assert_eq!(cp.snapshot(HostId(0)).rule_set(), before);
    assert_eq!(cp.stats().rejected, 1);
    assert!(cp.log()[0].contains("rejected="));
}

#[test]
fn request_me_retargets_every_predecessor() {
    let mut cp = cp_for(ANOMALY);
    let m = msg(MessageKind::RequestMe { flow: FlowPattern::ANY, service: sid(5) }, 5);
    cp.apply_message(0, &m).unwrap();
    assert_eq!(lookup(&cp, sid(4).into(), &flow(1))[0], Action::ToService(sid(5)));
    assert_eq!(lookup(&cp, sid(3).into(), &flow(1))[0], Action::ToService(sid(4)));
    assert!(cp.check_containment().is_empty());
}

#[test]
fn skip_me_on_parallel_member_is_rejected() {
    let mut cp = cp_for(ANOMALY);
    let m = msg(MessageKind::SkipMe { flow: FlowPattern::ANY, service: sid(4) }, 4);
    assert!(matches!(cp.apply_message(0, &m), Err(MessageError::ValidationRejected(_))));
}

#[test]
fn untrusted_mode_checks_the_sender() {
    let g = ServiceGraph::parse(ANOMALY).unwrap();
    let mut cp = ControlPlane::new(Deployment::single_host(g, 16), TrustMode::Untrusted).unwrap();
    cp.prepopulate().unwrap();
    let foreign = msg(MessageKind::RequestMe { flow: FlowPattern::ANY, service: sid(5) }, 4);
    assert!(matches!(cp.apply_message(0, &foreign), Err(MessageError::ValidationRejected(_))));
    let neighbour = msg(
        MessageKind::ChangeDefault { flow: FlowPattern::ANY, service: sid(4), target: Vertex::Service(sid(5)) },
        5,
    );
    assert!(cp.apply_message(0, &neighbour).is_ok());
    let far = msg(
        MessageKind::ChangeDefault { flow: FlowPattern::ANY, service: sid(2), target: Vertex::Service(sid(3)) },
        5,
    );
    assert!(matches!(cp.apply_message(0, &far), Err(MessageError::ValidationRejected(_))));
}

#[test]
fn app_message_is_forwarded() {
    let mut cp = cp_for(ANOMALY);
    let m = msg(MessageKind::Message { service: sid(3), key: "alarm".into(), value: "10.0.0.0/24".into() }, 3);
    assert_eq!(
        cp.apply_message(0, &m),
        Ok(MessageOutcome::Forward { from: sid(3), key: "alarm".into(), value: "10.0.0.0/24".into() })
    );
}

#[test]
fn unclassifiable_flow_gets_a_drop_rule() {
    let g = ServiceGraph::parse(VIDEO).unwrap();
    let mut d = Deployment::single_host(g, 4);
    d.graphs[0].classifier = FlowPattern::ANY.with_dst_port(80);
    let mut cp = ControlPlane::new(d, TrustMode::Trusted).unwrap();
    let mut f = flow(1);
    f.dst_port = 443;
    let rules = cp.handle_miss(HostId(0), INGRESS_PORT.into(), &f);
    assert_eq!(rules.len(), 1);
    assert_eq!(rules[0].actions, vec![Action::Drop]);
    let rules = cp.handle_miss(HostId(0), INGRESS_PORT.into(), &flow(1));
    assert_eq!(rules.len(), 5);
    assert!(rules.iter().all(|r| r.key.pattern == FlowPattern::exact(&flow(1))));
}

fn two_host_video() -> Deployment {
    let g = ServiceGraph::parse(VIDEO).unwrap();
    let mut d = Deployment::single_host(g, 4);
    d.hosts.insert(HostId(1), 4);
    d.placement.insert(sid(3), HostId(1));
    d.placement.insert(sid(4), HostId(1));
    d.exit_host = HostId(1);
    d
}

#[test]
fn two_host_split_matches_whole_graph_compile() {
    let d = two_host_video();
    let mut links = LinkPorts::default();
    let split = compile_rules(&d.graphs[0].graph, FlowPattern::ANY, &d.placement, HostId(0), HostId(1), &mut links)
        .unwrap();
    let whole = compile_rules(
        &d.graphs[0].graph,
        FlowPattern::ANY,
        &d.graphs[0].graph.services().iter().map(|s| (s.id, HostId(0))).collect(),
        HostId(0),
        HostId(0),
        &mut LinkPorts::default(),
    )
    .unwrap()
    .remove(&HostId(0))
    .unwrap();
    // mapping every link port back to its target and dropping receive rules
    // recovers the single-host compile
    let local = |a: Action| match a {
        Action::OutPort(p) => match links.get(p).map(|l| l.target) {
            Some(Vertex::Service(s)) => Action::ToService(s),
            Some(_) => Action::OutPort(EGRESS_PORT),
            None => a,
        },
        _ => a,
    };
    let mut merged: Vec<(Endpoint, Vec<Action>)> = split
        .values()
        .flatten()
        .filter(|r| !matches!(r.key.ingress, Endpoint::Port(p) if links.get(p).is_some()))
        .map(|r| (r.key.ingress, r.actions.iter().map(|a| local(*a)).collect()))
        .collect();
    merged.sort();
    let mut expected: Vec<(Endpoint, Vec<Action>)> = whole.iter().map(|r| (r.key.ingress, r.actions.clone())).collect();
    expected.sort();
    assert_eq!(merged, expected);
    // host 0 forwards towards host 1 for TC and C, and VD's SINK edge leaves through a link
    let h0 = &split[&HostId(0)];
    assert!(h0.iter().all(|r| r.actions.iter().all(|a| *a != Action::OutPort(EGRESS_PORT))));
    let h1 = &split[&HostId(1)];
    assert!(h1.iter().any(|r| r.actions == vec![Action::OutPort(EGRESS_PORT)]));
}

#[test]
fn cross_host_change_default_installs_receive_rule() {
    let mut cp = ControlPlane::new(two_host_video(), TrustMode::Trusted).unwrap();
    cp.prepopulate().unwrap();
    let f = flow(7);
    let m = msg(
        MessageKind::ChangeDefault { flow: FlowPattern::exact(&f), service: sid(2), target: Vertex::Service(sid(4)) },
        2,
    );
    cp.apply_message(0, &m).unwrap();
    let hit = cp.snapshot(HostId(0)).lookup(sid(2).into(), &f).unwrap();
    let Action::OutPort(p) = hit.rule.actions[0] else { panic!("expected link port") };
    assert_eq!(cp.link_port(p).unwrap().target, Vertex::Service(sid(4)));
    let recv = cp.snapshot(HostId(1)).lookup(p.into(), &f).unwrap();
    assert_eq!(recv.rule.actions, vec![Action::ToService(sid(4))]);
    assert!(cp.check_containment().is_empty());
}

#[test]
fn instance_capacity_is_enforced() {
    let g = ServiceGraph::parse(VIDEO).unwrap();
    let mut cp = ControlPlane::new(Deployment::single_host(g, 2), TrustMode::Trusted).unwrap();
    let a = cp.register_instance(sid(1), HostId(0)).unwrap();
    let b = cp.register_instance(sid(2), HostId(0)).unwrap();
    assert_ne!(a, b);
    assert_eq!(cp.instance_count(), 2);
    assert_eq!(cp.register_instance(sid(3), HostId(0)), Err(ControlError::CapacityExceeded(HostId(0))));
    assert_eq!(cp.instance_count(), 2);
    assert!(cp.check_instances().is_err());
}

#[test]
fn unplaced_service_invalidates_deployment() {
    let g = ServiceGraph::parse(VIDEO).unwrap();
    let mut d = Deployment::single_host(g, 2);
    d.placement.remove(&sid(2));
    let errs = d.validate().unwrap_err();
    assert_eq!(errs, vec![DeploymentError::UnplacedService("PE".into())]);
}

#[test]
fn graph_app_reacts_once_per_value() {
    let mut cp = cp_for(ANOMALY);
    let mut app = GraphApp::new().with_reaction(Reaction { key: "alarm".into(), service: sid(5), param: "prefix".into() });
    let first = app.on_message(&cp, sid(3), "alarm", "10.0.0.0/24");
    assert_eq!(first.len(), 1);
    assert!(app.on_message(&cp, sid(3), "alarm", "10.0.0.0/24").is_empty());
    assert!(app.on_message(&cp, sid(3), "other", "x").is_empty());
    let AppCommand::Instantiate { params, .. } = &first[0];
    assert_eq!(params.get("prefix"), Some("10.0.0.0/24"));
    assert!(!app.packet_in(&mut cp, HostId(0), INGRESS_PORT.into(), &flow(1), &[]).is_empty());
}
