//! The video-optimizer graph: compiled default table, per-flow rules on top
//! of it, and the lookups they produce.

mod support;

use std::net::Ipv4Addr;

use nfchain_core::control::{EGRESS_PORT, INGRESS_PORT};
use nfchain_core::flow_table::Action;
use nfchain_core::ids::{Endpoint, HostId};
use nfchain_core::tuple::FlowPattern;
use support::video::*;

#[test]
fn compiled_table_lists_every_edge_default_first() {
    let cp = plane();
    let t = cp.snapshot(HostId(0));
    let mut rows: Vec<(Endpoint, Vec<Action>)> =
        t.rules().map(|r| { assert_eq!(r.key.pattern, FlowPattern::ANY); (r.key.ingress, r.actions.clone()) }).collect();
    rows.sort();
    let mut expected = vec![
        (Endpoint::Port(INGRESS_PORT), vec![Action::ToService(s(1))]),
        (s(1).into(), vec![Action::ToService(s(2)), Action::OutPort(EGRESS_PORT)]),
        (s(2).into(), vec![Action::ToService(s(3)), Action::ToService(s(4))]),
        (s(3).into(), vec![Action::ToService(s(4))]),
        (s(4).into(), vec![Action::OutPort(EGRESS_PORT)]),
    ];
    expected.sort();
    assert_eq!(rows, expected);
    assert!(t.rules().all(|r| !r.parallel));
}

#[test]
fn compiled_table_dump_is_stable() {
    let cp = plane();
    let dump = cp.snapshot(HostId(0)).dump(cp.catalog());
    assert_eq!(dump, GOLDEN_DUMP);
}

#[test]
fn per_flow_rules_steer_bronze_and_gold_users() {
    let mut cp = plane();
    cp.install(HostId(0), per_flow_rules()).unwrap();
    let pe = Endpoint::Service(s(2));
    assert_eq!(actions(&cp, pe, &from(BRONZE)), vec![Action::ToService(s(3))]);
    assert_eq!(actions(&cp, pe, &from(GOLD)), vec![Action::ToService(s(4)), Action::ToService(s(3))]);
    let other = from(Ipv4Addr::new(10, 3, 0, 1));
    assert_eq!(actions(&cp, pe, &other), vec![Action::ToService(s(3)), Action::ToService(s(4))]);
    // the ingress rules for both classes still enter at PE; everyone else at VD
    assert_eq!(actions(&cp, INGRESS_PORT.into(), &from(GOLD)), vec![Action::ToService(s(2))]);
    assert_eq!(actions(&cp, INGRESS_PORT.into(), &other), vec![Action::ToService(s(1))]);
    assert!(cp.check_containment().is_empty(), "{:?}", cp.check_containment());
}
