//! Service graphs: DAGs of NF service types with one default out-edge per
//! vertex, bracketed by `SOURCE` and `SINK` pseudo-vertices.
//!
//! Config format, one record per line (`#` starts a comment):
//!
//! ```text
//! vertex Firewall id=1 readonly=true
//! edge SOURCE -> Firewall default
//! edge Firewall -> SINK default
//! ```

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::ids::ServiceId;

pub const SOURCE_NAME: &str = "SOURCE";
pub const SINK_NAME: &str = "SINK";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Vertex {
    Source,
    Service(ServiceId),
    Sink,
}

impl Vertex {
    pub fn service(self) -> Option<ServiceId> {
        match self {
            Vertex::Service(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceVertex {
    pub id: ServiceId,
    pub name: String,
    pub readonly: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: Vertex,
    pub to: Vertex,
    pub default: bool,
}

/// An operator-authored service graph. May be structurally invalid until
/// [`ServiceGraph::validate`] says otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ServiceGraph {
    pub name: String,
    services: Vec<ServiceVertex>,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    DuplicateName(String),
    DuplicateId(ServiceId),
    SelfLoop(String),
    DuplicateEdge(String, String),
    EdgeIntoSource(String),
    EdgeOutOfSink(String),
    Cycle(Vec<String>),
    Unreachable(String),
    CannotReachSink(String),
    MissingDefault(String),
    MultipleDefaults(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateName(n) => write!(f, "duplicate vertex name {n}"),
            Violation::DuplicateId(id) => write!(f, "duplicate service id {}", id.get()),
            Violation::SelfLoop(n) => write!(f, "self-loop on {n}"),
            Violation::DuplicateEdge(a, b) => write!(f, "duplicate edge {a} -> {b}"),
            Violation::EdgeIntoSource(n) => write!(f, "edge from {n} into SOURCE"),
            Violation::EdgeOutOfSink(n) => write!(f, "edge from SINK to {n}"),
            Violation::Cycle(vs) => write!(f, "cycle through {}", vs.join(" -> ")),
            Violation::Unreachable(n) => write!(f, "{n} is not reachable from SOURCE"),
            Violation::CannotReachSink(n) => write!(f, "{n} cannot reach SINK"),
            Violation::MissingDefault(n) => write!(f, "{n} has no default edge"),
            Violation::MultipleDefaults(n) => write!(f, "{n} has multiple defaults"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("reserved vertex name `{0}`")]
    ReservedName(String),
}

impl ServiceGraph {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), services: Vec::new(), edges: Vec::new() }
    }

    pub fn add_service(&mut self, id: ServiceId, name: impl Into<String>, readonly: bool) -> Result<(), GraphError> {
        let name = name.into();
        if name == SOURCE_NAME || name == SINK_NAME {
            return Err(GraphError::ReservedName(name));
        }
        self.services.push(ServiceVertex { id, name, readonly });
        Ok(())
    }

    pub fn add_edge(&mut self, from: Vertex, to: Vertex, default: bool) {
        self.edges.push(Edge { from, to, default });
    }

    /// Adds an edge by vertex names (`SOURCE`/`SINK` allowed).
    pub fn add_edge_named(&mut self, from: &str, to: &str, default: bool) -> Result<(), GraphError> {
        let f = self.vertex_by_name(from).ok_or_else(|| GraphError::UnknownVertex(from.into()))?;
        let t = self.vertex_by_name(to).ok_or_else(|| GraphError::UnknownVertex(to.into()))?;
        self.add_edge(f, t, default);
        Ok(())
    }

    pub fn services(&self) -> &[ServiceVertex] {
        &self.services
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn service(&self, id: ServiceId) -> Option<&ServiceVertex> {
        self.services.iter().find(|s| s.id == id)
    }

    pub fn contains_service(&self, id: ServiceId) -> bool {
        self.service(id).is_some()
    }

    pub fn is_readonly(&self, id: ServiceId) -> Option<bool> {
        self.service(id).map(|s| s.readonly)
    }

    pub fn vertex_by_name(&self, name: &str) -> Option<Vertex> {
        match name {
            SOURCE_NAME => Some(Vertex::Source),
            SINK_NAME => Some(Vertex::Sink),
            _ => self.services.iter().find(|s| s.name == name).map(|s| Vertex::Service(s.id)),
        }
    }

    pub fn vertex_name(&self, v: Vertex) -> String {
        match v {
            Vertex::Source => SOURCE_NAME.to_string(),
            Vertex::Sink => SINK_NAME.to_string(),
            Vertex::Service(id) => {
                self.service(id).map(|s| s.name.clone()).unwrap_or_else(|| id.to_string())
            }
        }
    }

    /// All vertices: SOURCE, services in declaration order, SINK.
    pub fn vertices(&self) -> Vec<Vertex> {
        let mut vs = vec![Vertex::Source];
        let mut seen = BTreeSet::new();
        for s in &self.services {
            if seen.insert(s.id) {
                vs.push(Vertex::Service(s.id));
            }
        }
        vs.push(Vertex::Sink);
        vs
    }

    pub fn has_edge(&self, from: Vertex, to: Vertex) -> bool {
        self.edges.iter().any(|e| e.from == from && e.to == to)
    }

    /// Out-neighbours with the default successor first, the rest in
    /// declaration order.
    pub fn successors(&self, v: Vertex) -> Vec<Vertex> {
        let mut out: Vec<Vertex> = Vec::new();
        if let Some(d) = self.default_successor(v) {
            out.push(d);
        }
        for e in self.edges.iter().filter(|e| e.from == v) {
            if !out.contains(&e.to) {
                out.push(e.to);
            }
        }
        out
    }

    pub fn predecessors(&self, v: Vertex) -> Vec<Vertex> {
        let mut out = Vec::new();
        for e in self.edges.iter().filter(|e| e.to == v) {
            if !out.contains(&e.from) {
                out.push(e.from);
            }
        }
        out
    }

    pub fn default_successor(&self, v: Vertex) -> Option<Vertex> {
        self.edges.iter().find(|e| e.from == v && e.default).map(|e| e.to)
    }

    /// Every vertex reachable from `v` through one or more edges.
    pub fn descendants(&self, v: Vertex) -> BTreeSet<Vertex> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<Vertex> = self.successors(v).into();
        while let Some(x) = queue.pop_front() {
            if seen.insert(x) {
                queue.extend(self.successors(x));
            }
        }
        seen
    }

    /// Reports every structural violation, not just the first.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut violations = BTreeSet::new();

        let mut names = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for s in &self.services {
            if !names.insert(s.name.as_str()) {
                violations.insert(Violation::DuplicateName(s.name.clone()));
            }
            if !ids.insert(s.id) {
                violations.insert(Violation::DuplicateId(s.id));
            }
        }

        let mut seen_edges = BTreeSet::new();
        for e in &self.edges {
            let (a, b) = (self.vertex_name(e.from), self.vertex_name(e.to));
            if e.from == e.to {
                violations.insert(Violation::SelfLoop(a.clone()));
            }
            if !seen_edges.insert((e.from, e.to)) {
                violations.insert(Violation::DuplicateEdge(a.clone(), b.clone()));
            }
            if e.to == Vertex::Source {
                violations.insert(Violation::EdgeIntoSource(a.clone()));
            }
            if e.from == Vertex::Sink {
                violations.insert(Violation::EdgeOutOfSink(b.clone()));
            }
        }

        let vertices = self.vertices();
        for &v in &vertices {
            if v == Vertex::Sink {
                continue;
            }
            let defaults = self.edges.iter().filter(|e| e.from == v && e.default).count();
            match defaults {
                0 => {
                    violations.insert(Violation::MissingDefault(self.vertex_name(v)));
                }
                1 => {}
                _ => {
                    violations.insert(Violation::MultipleDefaults(self.vertex_name(v)));
                }
            }
        }

        if let Some(cycle) = self.find_cycle() {
            violations.insert(Violation::Cycle(cycle.into_iter().map(|v| self.vertex_name(v)).collect()));
        }

        let from_source = self.descendants(Vertex::Source);
        for &v in &vertices {
            if v != Vertex::Source && !from_source.contains(&v) {
                violations.insert(Violation::Unreachable(self.vertex_name(v)));
            }
            if v != Vertex::Sink && !self.descendants(v).contains(&Vertex::Sink) {
                violations.insert(Violation::CannotReachSink(self.vertex_name(v)));
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations.into_iter().collect())
        }
    }

    fn find_cycle(&self) -> Option<Vec<Vertex>> {
        // iterative three-colour DFS; returns the first cycle found in vertex order
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let vertices = self.vertices();
        let mut mark: BTreeMap<Vertex, Mark> = vertices.iter().map(|v| (*v, Mark::White)).collect();
        for &root in &vertices {
            if mark[&root] != Mark::White {
                continue;
            }
            let mut stack: Vec<(Vertex, usize)> = vec![(root, 0)];
            mark.insert(root, Mark::Grey);
            while let Some(&mut (v, ref mut idx)) = stack.last_mut() {
                let succ: Vec<Vertex> =
                    self.edges.iter().filter(|e| e.from == v).map(|e| e.to).collect();
                if *idx < succ.len() {
                    let next = succ[*idx];
                    *idx += 1;
                    match mark.get(&next).copied().unwrap_or(Mark::Black) {
                        Mark::White => {
                            mark.insert(next, Mark::Grey);
                            stack.push((next, 0));
                        }
                        Mark::Grey => {
                            let start = stack.iter().position(|(x, _)| *x == next).unwrap_or(0);
                            let mut cyc: Vec<Vertex> = stack[start..].iter().map(|(x, _)| *x).collect();
                            cyc.push(next);
                            return Some(cyc);
                        }
                        Mark::Black => {}
                    }
                } else {
                    mark.insert(v, Mark::Black);
                    stack.pop();
                }
            }
        }
        None
    }

    /// The walk that follows default edges from `from` until SINK. `from`
    /// itself is not included; the walk from SINK is empty.
    pub fn default_path(&self, from: Vertex) -> Vec<Vertex> {
        let mut path = Vec::new();
        let mut visited = BTreeSet::from([from]);
        let mut cur = from;
        while cur != Vertex::Sink {
            match self.default_successor(cur) {
                Some(next) if visited.insert(next) => {
                    path.push(next);
                    cur = next;
                }
                _ => break,
            }
        }
        path
    }

    /// Partitions the vertices into groups eligible for simultaneous
    /// dispatch.
    ///
    /// `A` and `B` join a group when both are read-only, `A`'s only out-edge
    /// targets `B` and `B`'s only in-edge comes from `A`, so every packet that
    /// reaches one reaches the other. Links chain into longer groups. Every
    /// other vertex forms a singleton. Group members are listed in chain order.
    pub fn parallel_groups(&self) -> Vec<Vec<Vertex>> {
        let vertices = self.vertices();
        let mut next: BTreeMap<Vertex, Vertex> = BTreeMap::new();
        let mut has_prev: BTreeSet<Vertex> = BTreeSet::new();
        for &v in &vertices {
            if let Some(b) = self.parallel_successor(v) {
                next.insert(v, b);
                has_prev.insert(b);
            }
        }
        let mut groups = Vec::new();
        let mut placed = BTreeSet::new();
        for &v in &vertices {
            if has_prev.contains(&v) || placed.contains(&v) {
                continue;
            }
            let mut group = vec![v];
            placed.insert(v);
            let mut cur = v;
            while let Some(&n) = next.get(&cur) {
                if !placed.insert(n) {
                    break;
                }
                group.push(n);
                cur = n;
            }
            groups.push(group);
        }
        // anything left over sits on a cycle of eligible links (invalid graph)
        for &v in &vertices {
            if placed.insert(v) {
                groups.push(vec![v]);
            }
        }
        groups
    }

    /// The vertex that `v` would be dispatched in parallel with, if any.
    pub fn parallel_successor(&self, v: Vertex) -> Option<Vertex> {
        let a = v.service()?;
        if !self.is_readonly(a)? {
            return None;
        }
        let outs: Vec<&Edge> = self.edges.iter().filter(|e| e.from == v).collect();
        let [only] = outs.as_slice() else { return None };
        let b = only.to.service()?;
        if b == a || !self.is_readonly(b)? {
            return None;
        }
        let ins = self.edges.iter().filter(|e| e.to == only.to).count();
        (ins == 1).then_some(only.to)
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Self::parse_named("graph", text)
    }

    pub fn parse_named(name: &str, text: &str) -> Result<Self, ParseError> {
        let mut g = ServiceGraph::new(name);
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            g.parse_record(stripped).map_err(|message| ParseError { line, message })?;
        }
        Ok(g)
    }

    /// Parses one `vertex` or `edge` record into this graph.
    pub fn parse_record(&mut self, line: &str) -> Result<(), String> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            Some("vertex") => {
                let name = tokens.get(1).ok_or("vertex needs a name")?;
                let mut id = None;
                let mut readonly = false;
                for t in &tokens[2..] {
                    let (k, v) = t.split_once('=').ok_or_else(|| format!("expected key=value, got `{t}`"))?;
                    match k {
                        "id" => {
                            let n: u16 = v.parse().map_err(|_| format!("bad id `{v}`"))?;
                            id = Some(ServiceId::new(n).ok_or_else(|| format!("service id {n} outside 1..=1023"))?);
                        }
                        "readonly" => {
                            readonly = v.parse().map_err(|_| format!("bad readonly flag `{v}`"))?;
                        }
                        other => return Err(format!("unknown vertex attribute `{other}`")),
                    }
                }
                let id = id.ok_or_else(|| format!("vertex {name} needs id=<n>"))?;
                self.add_service(id, *name, readonly).map_err(|e| e.to_string())
            }
            Some("edge") => {
                let (from, arrow, to) = match tokens.as_slice() {
                    [_, f, a, t, ..] => (*f, *a, *t),
                    _ => return Err("edge needs `<from> -> <to>`".into()),
                };
                if arrow != "->" {
                    return Err(format!("expected `->`, got `{arrow}`"));
                }
                let default = match tokens.get(4).copied() {
                    None => false,
                    Some("default") => true,
                    Some(other) => return Err(format!("unexpected `{other}` after edge")),
                };
                if tokens.len() > 5 {
                    return Err("trailing tokens after edge".into());
                }
                self.add_edge_named(from, to, default).map_err(|e| e.to_string())
            }
            Some(other) => Err(format!("unknown record `{other}`")),
            None => Ok(()),
        }
    }

    /// Serialises back to the config format.
    pub fn to_config(&self) -> String {
        let mut out = String::new();
        for s in &self.services {
            out.push_str(&format!("vertex {} id={} readonly={}\n", s.name, s.id.get(), s.readonly));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "edge {} -> {}{}\n",
                self.vertex_name(e.from),
                self.vertex_name(e.to),
                if e.default { " default" } else { "" }
            ));
        }
        out
    }
}
