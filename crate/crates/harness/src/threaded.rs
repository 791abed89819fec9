//! Runs a single-host scenario on real worker threads.
//!
//! Packets follow the scenario's traffic schedule in order but are pushed
//! as fast as the pipeline takes them. Scripted events, reactions and
//! on-demand services are not driven in this mode.

use std::collections::BTreeMap;

use nfchain_core::control::{ControlPlane, TrustMode};
use nfchain_core::engine::threaded::{run_pipeline, MissHandler, ThreadedConfig, ThreadedNf, ThreadedReport};
use nfchain_core::nf::build_nf;
use nfchain_core::packet::build_packet;
use nfchain_core::sim::{RuleSetup, TrafficFlow};
use nfchain_core::{Nanos, NANOS_PER_SEC};

use crate::scenario::{AppChoice, Scenario};
use crate::HarnessError;

/// Send times of a flow's packets at exact spacing from each segment start.
fn send_times(f: &TrafficFlow, duration: Nanos) -> Vec<Nanos> {
    let mut out = Vec::new();
    for s in &f.segments {
        let gap = ((NANOS_PER_SEC as f64 / s.pps) as Nanos).max(1);
        let mut t = s.start;
        while t < s.stop && t < duration {
            out.push(t);
            t += gap;
        }
    }
    out
}

/// Every packet of the scenario in send order.
pub fn schedule(sc: &Scenario) -> Vec<Vec<u8>> {
    let mut all: Vec<(Nanos, u32, Vec<u8>)> = Vec::new();
    for f in &sc.flows {
        let bytes = build_packet(&f.tuple, f.packet_len, &f.payload);
        all.extend(send_times(f, sc.duration).into_iter().map(|t| (t, f.label, bytes.clone())));
    }
    all.sort_by_key(|(t, l, _)| (*t, *l));
    all.into_iter().map(|(_, _, b)| b).collect()
}

pub fn run_threaded(sc: &Scenario) -> Result<ThreadedReport, HarnessError> {
    let d = &sc.deployment;
    let host = d.entry_host;
    if d.exit_host != host || d.placement.values().any(|h| *h != host) {
        return Err(HarnessError::Unsupported("threaded mode runs single-host deployments only".into()));
    }
    if !matches!(sc.app, AppChoice::Graph { .. }) {
        return Err(HarnessError::Unsupported("threaded mode uses the graph controller only".into()));
    }
    let mut cp = ControlPlane::new(d.clone(), TrustMode::Trusted)
        .map_err(|v| HarnessError::Invalid(v.iter().map(ToString::to_string).collect()))?;
    if sc.setup == RuleSetup::Prepopulate {
        cp.prepopulate().map_err(|e| HarnessError::Runtime(e.to_string()))?;
    }
    let readonly = d.services();
    let mut nfs = Vec::new();
    for spec in &sc.nfs {
        for _ in 0..spec.count {
            let id = cp.register_instance(spec.service, host).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            let nf = build_nf(&spec.kind, &spec.params, cp.catalog()).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            nfs.push(ThreadedNf {
                id,
                service: spec.service,
                readonly: readonly.get(&spec.service).copied().unwrap_or(false),
                nf,
                seed: sc.seed ^ u64::from(id.0),
            });
        }
    }
    let table = cp.table(host).ok_or_else(|| HarnessError::Runtime(format!("no table for host {host}")))?;
    let miss: Option<MissHandler> = (sc.setup == RuleSetup::OnMiss).then(|| {
        let handler: MissHandler = Box::new(move |ingress, flow, _bytes| {
            let rules = cp.handle_miss(host, ingress, flow);
            cp.install(host, rules).is_ok()
        });
        handler
    });
    let cfg = ThreadedConfig {
        queue_capacity: sc.engine.queue_capacity,
        pool_capacity: sc.engine.pool_capacity.min(ThreadedConfig::default().pool_capacity),
        balance: sc.engine.balance,
        conflict: sc.engine.conflict.clone(),
        max_hops: sc.engine.max_hops,
        ..ThreadedConfig::default()
    };
    Ok(run_pipeline(table, nfs, schedule(sc), miss, cfg))
}

/// Flat `key=value` summary of a threaded run.
pub fn summary(sc: &Scenario, r: &ThreadedReport) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        out.insert(k.to_string(), v);
    };
    put("mode", "threaded".into());
    put("seed", sc.seed.to_string());
    put("egressed", r.egress.to_string());
    put("allocs", r.allocs.to_string());
    put("frees", r.frees.to_string());
    put("drained", r.drained.to_string());
    put("clean", r.clean().to_string());
    put("control_messages", r.messages.len().to_string());
    put("elapsed_ms", format!("{:.3}", r.elapsed.as_secs_f64() * 1e3));
    put("mean_latency_us", format!("{:.3}", r.mean_latency.as_secs_f64() * 1e6));
    for (k, v) in &r.counters.0 {
        put(&format!("count.{k}"), v.to_string());
    }
    out
}
