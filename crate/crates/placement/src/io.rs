//! Line-record topology and flow files.
//!
//! ```text
//! node 1 cores=2
//! link 1 2 delay=1.5 cap=10
//! svccap 1 J1 3
//! svccap * J5 2
//! flow 1 in=1 out=2 chain=J1,J2 bw=1 tmax=20
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{FlowSpec, NodeId, Topology};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then(|| (i + 1, line.split_whitespace().collect()))
    })
}

fn kv<'a>(fields: &[&'a str]) -> Result<BTreeMap<&'a str, &'a str>, String> {
    fields
        .iter()
        .map(|f| f.split_once('=').ok_or_else(|| format!("expected key=value, got `{f}`")))
        .collect()
}

fn num<T: FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T, String> {
    let v = map.get(key).ok_or_else(|| format!("missing `{key}=`"))?;
    v.parse().map_err(|_| format!("bad value for `{key}`: `{v}`"))
}

fn positional<T: FromStr>(fields: &[&str], i: usize, what: &str) -> Result<T, String> {
    let v = fields.get(i).ok_or_else(|| format!("missing {what}"))?;
    v.parse().map_err(|_| format!("bad {what} `{v}`"))
}

pub fn parse_topology(text: &str) -> Result<Topology, ParseError> {
    let mut t = Topology::new();
    let mut wildcard = Vec::new();
    for (line, f) in records(text) {
        let err = |message: String| ParseError { line, message };
        match f[0] {
            "node" => {
                let id: NodeId = positional(&f, 1, "node id").map_err(err)?;
                let m = kv(&f[2..]).map_err(err)?;
                t.add_node(id, num(&m, "cores").map_err(err)?);
            }
            "link" => {
                let a: NodeId = positional(&f, 1, "node id").map_err(err)?;
                let b: NodeId = positional(&f, 2, "node id").map_err(err)?;
                let m = kv(&f[3..]).map_err(err)?;
                let delay: f64 = num(&m, "delay").map_err(err)?;
                let cap: u64 = num(&m, "cap").map_err(err)?;
                t.add_link(a, b, delay, cap);
            }
            "svccap" => {
                let svc = f.get(2).ok_or_else(|| err("missing service".into()))?.to_string();
                let p: u32 = positional(&f, 3, "flow capacity").map_err(err)?;
                if f.get(1) == Some(&"*") {
                    wildcard.push((svc, p));
                } else {
                    let n: NodeId = positional(&f, 1, "node id").map_err(err)?;
                    t.set_flow_cap(n, &svc, p);
                }
            }
            other => return Err(err(format!("unknown record `{other}`"))),
        }
    }
    let nodes: Vec<NodeId> = t.nodes.keys().copied().collect();
    for (svc, p) in wildcard {
        for n in &nodes {
            t.flow_caps.entry((*n, svc.clone())).or_insert(p);
        }
    }
    Ok(t)
}

pub fn parse_flows(text: &str) -> Result<Vec<FlowSpec>, ParseError> {
    let mut out = Vec::new();
    for (line, f) in records(text) {
        let err = |message: String| ParseError { line, message };
        if f[0] != "flow" {
            return Err(err(format!("unknown record `{}`", f[0])));
        }
        let id = positional(&f, 1, "flow id").map_err(err)?;
        let m = kv(&f[2..]).map_err(err)?;
        let chain: Vec<String> = m
            .get("chain")
            .ok_or_else(|| err("missing `chain=`".into()))?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        out.push(FlowSpec {
            id,
            entry: num(&m, "in").map_err(err)?,
            exit: num(&m, "out").map_err(err)?,
            chain,
            bandwidth: num(&m, "bw").map_err(err)?,
            max_delay_ms: num(&m, "tmax").map_err(err)?,
        });
    }
    Ok(out)
}

pub fn topology_to_text(t: &Topology) -> String {
    let mut out = String::new();
    for (n, c) in &t.nodes {
        let _ = writeln!(out, "node {n} cores={c}");
    }
    for l in &t.links {
        let _ = writeln!(out, "link {} {} delay={} cap={}", l.a, l.b, l.delay_ms, l.capacity);
    }
    for ((n, s), p) in &t.flow_caps {
        let _ = writeln!(out, "svccap {n} {s} {p}");
    }
    out
}

pub fn flows_to_text(flows: &[FlowSpec]) -> String {
    let mut out = String::new();
    for f in flows {
        let _ = writeln!(
            out,
            "flow {} in={} out={} chain={} bw={} tmax={}",
            f.id,
            f.entry,
            f.exit,
            f.chain.join(","),
            f.bandwidth,
            f.max_delay_ms
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOPO: &str = "node 1 cores=2\nnode 2 cores=1 # edge box\nlink 1 2 delay=1.5 cap=10\n\
                        svccap 1 J1 3\nsvccap * J2 2\n";

    #[test]
    fn parses_and_round_trips() {
        let t = parse_topology(TOPO).unwrap();
        assert_eq!(t.cores(2), 1);
        assert_eq!(t.flow_cap(1, "J1"), 3);
        assert_eq!(t.flow_cap(2, "J1"), 0);
        assert_eq!(t.flow_cap(2, "J2"), 2);
        assert_eq!(parse_topology(&topology_to_text(&t)).unwrap(), t);
        let flows = parse_flows("flow 7 in=1 out=2 chain=J1,J2 bw=3 tmax=12.5\n").unwrap();
        assert_eq!(flows[0].chain, vec!["J1", "J2"]);
        assert_eq!(flows[0].max_delay_ms, 12.5);
        assert_eq!(parse_flows(&flows_to_text(&flows)).unwrap(), flows);
    }

    #[test]
    fn reports_line_numbers() {
        let e = parse_topology("node 1 cores=2\nlink 1 x delay=1 cap=1\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(parse_flows("flow 1 in=1 out=2 bw=1 tmax=1").is_err());
        assert!(parse_topology("router 1").is_err());
    }
}
