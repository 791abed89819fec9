use nfchain_core::secs;
use nfchain_harness::builtin::builtin;
use nfchain_harness::threaded::{run_threaded, schedule};
use nfchain_harness::{run_scenario, Scenario};

fn scenario(name: &str) -> Scenario {
    Scenario::parse(builtin(name).unwrap()).unwrap()
}

#[test]
fn ant_flow_gets_the_fast_path_after_reclassification() {
    let sc = scenario("ant");
    let (report, out) = run_scenario(&sc).unwrap();
    assert!(out.violations.is_empty());
    let lat = report.metrics.series("lat_us.f1");
    assert!(!out.message_log.is_empty(), "the detector never reclassified a flow");
    // the detector window is 2 s, so the switch lands between 2 s and 3 s
    let before: Vec<i64> = lat.iter().filter(|(t, _)| *t < secs(2.0)).map(|(_, v)| *v).collect();
    let after: Vec<i64> = lat.iter().filter(|(t, _)| *t >= secs(3.0)).map(|(_, v)| *v).collect();
    assert!(!before.is_empty() && !after.is_empty());
    let mean = |v: &[i64]| v.iter().sum::<i64>() as f64 / v.len() as f64;
    assert!(mean(&after) < mean(&before) / 2.0, "before {:?} after {:?}", before, after);
}

#[test]
fn zero_traffic_run_is_empty_and_conserved() {
    let (_, out) = run_scenario(&scenario("zero")).unwrap();
    assert_eq!(out.summary["generated"], "0");
    assert_eq!(out.summary["egressed"], "0");
    assert_eq!(out.summary["conservation"], "ok");
    assert!(out.egress.is_empty());
}

#[test]
fn ddos_scrubber_only_starts_after_the_alarm() {
    let (_, out) = run_scenario(&scenario("ddos")).unwrap();
    let alarm = out.first_event("message key=alarm").unwrap();
    let ready = out.first_event("instance_ready service=Scrubber").unwrap();
    assert!(ready > alarm);
    assert_eq!(out.summary["conservation"], "ok");
}

#[test]
fn seed_changes_the_run_but_not_its_shape() {
    let mut sc = scenario("ddos");
    let (_, a) = run_scenario(&sc).unwrap();
    sc.seed += 1;
    let (_, b) = run_scenario(&sc).unwrap();
    assert_ne!(a.egress.iter().map(|r| r.at).collect::<Vec<_>>(), b.egress.iter().map(|r| r.at).collect::<Vec<_>>());
    let (ta, tb) = (a.first_event("message key=alarm").unwrap(), b.first_event("message key=alarm").unwrap());
    assert!(ta.abs_diff(tb) <= secs(0.5));
}

#[test]
fn threaded_smoke_is_live_and_clean() {
    for name in ["zero", "ddos"] {
        let sc = scenario(name);
        let sent = schedule(&sc).len() as u64;
        let r = run_threaded(&sc).unwrap();
        assert!(r.clean(), "{name}: {r:?}");
        assert_eq!(r.allocs, r.frees);
        assert!(r.egress <= sent);
        if sent > 0 {
            assert!(r.egress > 0, "{name}: nothing left the pipeline");
        }
    }
}
