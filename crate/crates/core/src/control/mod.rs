//! The control application: compiles service graphs into per-host flow
//! rules, answers table misses, validates and applies cross-layer messages,
//! and keeps the instance registry.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::flow_table::{Action, FlowRule, FlowTable, MatchKey, RuleContext, SharedTable, TableError, BASE_PRIORITY};
use crate::graph::{ServiceGraph, Vertex, Violation, SINK_NAME, SOURCE_NAME};
use crate::ids::{Catalog, Endpoint, HostId, InstanceId, PortId, ServiceId};
use crate::message::{ControlMessage, MessageKind};
use crate::tuple::{FiveTuple, FlowPattern};
use crate::Nanos;

pub mod apps;

pub use apps::{AppCommand, CentralizedVideo, ControllerApp, GraphApp, Reaction};

/// NIC port where traffic enters the entry host.
pub const INGRESS_PORT: PortId = PortId::new(0);
/// NIC port where traffic leaves the exit host.
pub const EGRESS_PORT: PortId = PortId::new(1);
const FIRST_LINK_PORT: u16 = 2;

/// A service graph and the traffic it applies to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphBinding {
    pub graph: ServiceGraph,
    pub classifier: FlowPattern,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deployment {
    pub graphs: Vec<GraphBinding>,
    /// Cores per host.
    pub hosts: BTreeMap<HostId, u32>,
    /// Host running each service.
    pub placement: BTreeMap<ServiceId, HostId>,
    pub entry_host: HostId,
    pub exit_host: HostId,
    /// One-way delay per unordered host pair.
    pub link_delays: BTreeMap<(HostId, HostId), Nanos>,
    pub default_link_delay: Nanos,
    /// Services allowed to have no instance until instantiated at run time.
    pub ondemand: BTreeSet<ServiceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeploymentError {
    #[error("graph {graph}: {}", join(violations))]
    InvalidGraph { graph: String, violations: Vec<Violation> },
    #[error("service {0} is not placed on any host")]
    UnplacedService(String),
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("service id {0} has conflicting names or read-only flags across graphs")]
    InconsistentService(ServiceId),
    #[error("service {0} has no instance")]
    NoInstance(String),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Deployment {
    /// Every service of `graph` on host 0, matching all traffic.
    pub fn single_host(graph: ServiceGraph, cores: u32) -> Self {
        let h = HostId(0);
        let placement = graph.services().iter().map(|s| (s.id, h)).collect();
        Self {
            graphs: vec![GraphBinding { graph, classifier: FlowPattern::ANY }],
            hosts: BTreeMap::from([(h, cores)]),
            placement,
            entry_host: h,
            exit_host: h,
            link_delays: BTreeMap::new(),
            default_link_delay: 0,
            ondemand: BTreeSet::new(),
        }
    }

    pub fn catalog(&self) -> Catalog {
        let mut c = Catalog::new();
        for b in &self.graphs {
            for s in b.graph.services() {
                c.add_service(s.id, s.name.clone());
            }
        }
        c.add_port(INGRESS_PORT, "eth0");
        c.add_port(EGRESS_PORT, "eth1");
        c
    }

    pub fn services(&self) -> BTreeMap<ServiceId, bool> {
        let mut out = BTreeMap::new();
        for b in &self.graphs {
            for s in b.graph.services() {
                out.insert(s.id, s.readonly);
            }
        }
        out
    }

    pub fn service_by_name(&self, name: &str) -> Option<ServiceId> {
        self.graphs.iter().find_map(|b| b.graph.vertex_by_name(name).and_then(Vertex::service))
    }

    pub fn link_delay(&self, a: HostId, b: HostId) -> Nanos {
        let key = (a.min(b), a.max(b));
        self.link_delays.get(&key).copied().unwrap_or(self.default_link_delay)
    }

    /// Reports every structural problem.
    pub fn validate(&self) -> Result<(), Vec<DeploymentError>> {
        let mut errs = Vec::new();
        let mut seen: BTreeMap<ServiceId, (String, bool)> = BTreeMap::new();
        for b in &self.graphs {
            if let Err(v) = b.graph.validate() {
                errs.push(DeploymentError::InvalidGraph { graph: b.graph.name.clone(), violations: v });
            }
            for s in b.graph.services() {
                let entry = seen.entry(s.id).or_insert_with(|| (s.name.clone(), s.readonly));
                if *entry != (s.name.clone(), s.readonly) {
                    errs.push(DeploymentError::InconsistentService(s.id));
                }
                match self.placement.get(&s.id) {
                    None => errs.push(DeploymentError::UnplacedService(s.name.clone())),
                    Some(h) if !self.hosts.contains_key(h) => errs.push(DeploymentError::UnknownHost(*h)),
                    Some(_) => {}
                }
            }
        }
        for h in [self.entry_host, self.exit_host] {
            if !self.hosts.contains_key(&h) {
                errs.push(DeploymentError::UnknownHost(h));
            }
        }
        errs.dedup();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Logical port carrying traffic for `target` from one host to another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkPort {
    pub from: HostId,
    pub to: HostId,
    pub target: Vertex,
}

/// Deterministic allocator of inter-host link ports.
#[derive(Debug, Clone, Default)]
pub struct LinkPorts {
    by_key: BTreeMap<(HostId, HostId, Vertex), PortId>,
    info: BTreeMap<PortId, LinkPort>,
}

impl LinkPorts {
    pub fn get_or_alloc(&mut self, from: HostId, to: HostId, target: Vertex) -> PortId {
        if let Some(p) = self.by_key.get(&(from, to, target)) {
            return *p;
        }
        let p = PortId::new(FIRST_LINK_PORT + self.info.len() as u16);
        self.by_key.insert((from, to, target), p);
        self.info.insert(p, LinkPort { from, to, target });
        p
    }

    pub fn get(&self, p: PortId) -> Option<&LinkPort> {
        self.info.get(&p)
    }

    pub fn iter(&self) -> impl Iterator<Item = (PortId, &LinkPort)> {
        self.info.iter().map(|(p, l)| (*p, l))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("service {0} is not placed")]
    UnplacedService(ServiceId),
}

/// Where a vertex's rules live and what their ingress is.
fn locate(
    v: Vertex,
    placement: &BTreeMap<ServiceId, HostId>,
    entry: HostId,
    exit: HostId,
) -> Result<(HostId, Option<Endpoint>), CompileError> {
    Ok(match v {
        Vertex::Source => (entry, Some(Endpoint::Port(INGRESS_PORT))),
        Vertex::Sink => (exit, None),
        Vertex::Service(s) => (*placement.get(&s).ok_or(CompileError::UnplacedService(s))?, Some(Endpoint::Service(s))),
    })
}

/// The action that moves a packet on `host` towards `target`. Crossing
/// hosts goes through a link port; the matching receive rule for the far
/// host is returned alongside.
fn action_towards(
    host: HostId,
    target: Vertex,
    placement: &BTreeMap<ServiceId, HostId>,
    entry: HostId,
    exit: HostId,
    links: &mut LinkPorts,
    pattern: FlowPattern,
) -> Result<(Action, Option<(HostId, FlowRule)>), CompileError> {
    let (to, _) = locate(target, placement, entry, exit)?;
    let local = match target {
        Vertex::Service(s) => Action::ToService(s),
        Vertex::Sink => Action::OutPort(EGRESS_PORT),
        Vertex::Source => Action::Drop,
    };
    if to == host {
        return Ok((local, None));
    }
    let port = links.get_or_alloc(host, to, target);
    let receive = FlowRule::new(MatchKey::new(port, pattern), vec![local], BASE_PRIORITY);
    Ok((Action::OutPort(port), Some((to, receive))))
}

fn push_unique(rules: &mut Vec<FlowRule>, r: FlowRule) {
    if !rules.iter().any(|x| x.key == r.key && x.priority == r.priority) {
        rules.push(r);
    }
}

/// Compiles one graph into per-host wildcard rules: one rule per vertex
/// listing its out-edges with the default first, link-port rules for edges
/// that cross hosts, and the parallel flag on co-located read-only groups.
pub fn compile_rules(
    graph: &ServiceGraph,
    pattern: FlowPattern,
    placement: &BTreeMap<ServiceId, HostId>,
    entry: HostId,
    exit: HostId,
    links: &mut LinkPorts,
) -> Result<BTreeMap<HostId, Vec<FlowRule>>, CompileError> {
    let mut parallel = BTreeSet::new();
    for group in graph.parallel_groups() {
        if group.len() < 2 {
            continue;
        }
        let hosts: BTreeSet<HostId> =
            group.iter().map(|v| locate(*v, placement, entry, exit).map(|(h, _)| h)).collect::<Result<_, _>>()?;
        if hosts.len() == 1 {
            parallel.extend(group[..group.len() - 1].iter().copied());
        }
    }
    let mut out: BTreeMap<HostId, Vec<FlowRule>> = BTreeMap::new();
    for v in graph.vertices() {
        let (host, Some(ingress)) = locate(v, placement, entry, exit)? else { continue };
        let mut actions = Vec::new();
        for w in graph.successors(v) {
            let (a, receive) = action_towards(host, w, placement, entry, exit, links, pattern)?;
            if !actions.contains(&a) {
                actions.push(a);
            }
            if let Some((h, r)) = receive {
                push_unique(out.entry(h).or_default(), r);
            }
        }
        if actions.is_empty() {
            continue;
        }
        let mut rule = FlowRule::new(MatchKey::new(ingress, pattern), actions, BASE_PRIORITY);
        if parallel.contains(&v) {
            rule = rule.parallel();
        }
        push_unique(out.entry(host).or_default(), rule);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrustMode {
    /// The NF manager applies messages as soon as they are emitted.
    #[default]
    Trusted,
    /// Messages round-trip the application, which also checks that the
    /// sender only touches edges adjacent to itself.
    Untrusted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("unknown service {0}")]
    UnknownService(ServiceId),
    #[error("{from:?} -> {to:?} is not an edge of any graph")]
    EdgeNotInGraph { from: Vertex, to: Vertex },
    #[error("rejected: {0}")]
    ValidationRejected(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageOutcome {
    /// Table updates were made on this many (host, ingress) pairs.
    Applied(usize),
    /// An application-level message for the controller app.
    Forward { from: ServiceId, key: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControlError {
    #[error("host {0} has no free core")]
    CapacityExceeded(HostId),
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("unknown service {0}")]
    UnknownService(ServiceId),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControlStats {
    pub messages: u64,
    pub rejected: u64,
    pub packet_ins: u64,
    pub rules_installed: u64,
}

pub struct ControlPlane {
    deployment: Deployment,
    catalog: Catalog,
    services: BTreeMap<ServiceId, bool>,
    tables: BTreeMap<HostId, SharedTable>,
    links: LinkPorts,
    compiled: Vec<BTreeMap<HostId, Vec<FlowRule>>>,
    registry: BTreeMap<ServiceId, Vec<(HostId, InstanceId)>>,
    next_instance: u32,
    mode: TrustMode,
    log: Vec<String>,
    stats: ControlStats,
}

struct HostCtx<'a> {
    cp: &'a ControlPlane,
}

impl RuleContext for HostCtx<'_> {
    fn service_readonly(&self, s: ServiceId) -> Option<bool> {
        self.cp.services.get(&s).copied()
    }

    fn port_known(&self, p: PortId) -> bool {
        p == INGRESS_PORT || p == EGRESS_PORT || self.cp.links.get(p).is_some()
    }

    fn permits(&self, ingress: Endpoint, action: Action) -> bool {
        self.cp.contained(ingress, action)
    }
}

impl ControlPlane {
    pub fn new(deployment: Deployment, mode: TrustMode) -> Result<Self, Vec<DeploymentError>> {
        deployment.validate()?;
        let mut links = LinkPorts::default();
        let mut compiled = Vec::new();
        for b in &deployment.graphs {
            let rules = compile_rules(
                &b.graph,
                b.classifier,
                &deployment.placement,
                deployment.entry_host,
                deployment.exit_host,
                &mut links,
            )
            .map_err(|CompileError::UnplacedService(s)| vec![DeploymentError::UnplacedService(s.to_string())])?;
            compiled.push(rules);
        }
        let mut catalog = deployment.catalog();
        for (p, l) in links.iter() {
            catalog.add_port(p, format!("link-{}-{}", l.from, l.to));
        }
        let tables = deployment.hosts.keys().map(|h| (*h, SharedTable::default())).collect();
        Ok(Self {
            services: deployment.services(),
            deployment,
            catalog,
            tables,
            links,
            compiled,
            registry: BTreeMap::new(),
            next_instance: 1,
            mode,
            log: Vec::new(),
            stats: ControlStats::default(),
        })
    }

    pub fn deployment(&self) -> &Deployment {
        &self.deployment
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn mode(&self) -> TrustMode {
        self.mode
    }

    pub fn stats(&self) -> ControlStats {
        self.stats
    }

    pub fn table(&self, host: HostId) -> Option<SharedTable> {
        self.tables.get(&host).cloned()
    }

    pub fn snapshot(&self, host: HostId) -> Arc<FlowTable> {
        self.tables.get(&host).map(SharedTable::snapshot).unwrap_or_default()
    }

    pub fn link_port(&self, p: PortId) -> Option<&LinkPort> {
        self.links.get(p)
    }

    /// Compiled wildcard rules of graph `index`, per host.
    pub fn compiled(&self, index: usize) -> Option<&BTreeMap<HostId, Vec<FlowRule>>> {
        self.compiled.get(index)
    }

    pub fn vertex_name(&self, v: Vertex) -> String {
        match v {
            Vertex::Source => SOURCE_NAME.to_string(),
            Vertex::Sink => SINK_NAME.to_string(),
            Vertex::Service(s) => self.catalog.service_name(s),
        }
    }

    /// Installs every compiled rule up front.
    pub fn prepopulate(&mut self) -> Result<(), TableError> {
        let all: Vec<(HostId, FlowRule)> = self
            .compiled
            .iter()
            .flat_map(|m| m.iter().flat_map(|(h, rs)| rs.iter().map(|r| (*h, r.clone()))))
            .collect();
        for (h, r) in all {
            self.install(h, vec![r])?;
        }
        Ok(())
    }

    pub fn install(&mut self, host: HostId, rules: Vec<FlowRule>) -> Result<(), TableError> {
        let Some(table) = self.tables.get(&host).cloned() else { return Ok(()) };
        let ctx = HostCtx { cp: self };
        let n = rules.len() as u64;
        table.modify(|t| rules.into_iter().try_for_each(|r| t.install(r, &ctx)))?;
        self.stats.rules_installed += n;
        Ok(())
    }

    pub fn classify(&self, flow: &FiveTuple) -> Option<usize> {
        self.deployment.graphs.iter().position(|b| b.classifier.matches(flow))
    }

    /// Rules for a flow that missed at `host`: the host's part of the
    /// matching graph, narrowed to the exact five-tuple. An unclassifiable
    /// flow gets a drop rule.
    pub fn handle_miss(&mut self, host: HostId, ingress: Endpoint, flow: &FiveTuple) -> Vec<FlowRule> {
        self.stats.packet_ins += 1;
        let exact = FlowPattern::exact(flow);
        let Some(g) = self.classify(flow) else {
            return vec![FlowRule::new(MatchKey::new(ingress, exact), vec![Action::Drop], BASE_PRIORITY)];
        };
        self.compiled[g]
            .get(&host)
            .map(|rules| {
                rules
                    .iter()
                    .map(|r| {
                        let mut r = r.clone();
                        r.key.pattern = exact;
                        r
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    fn graphs_with(&self, s: ServiceId) -> impl Iterator<Item = &ServiceGraph> {
        self.deployment.graphs.iter().map(|b| &b.graph).filter(move |g| g.contains_service(s))
    }

    fn ingress_vertex(&self, ingress: Endpoint) -> Option<Vertex> {
        match ingress {
            Endpoint::Service(s) => Some(Vertex::Service(s)),
            Endpoint::Port(p) if p == INGRESS_PORT => Some(Vertex::Source),
            Endpoint::Port(p) => self.links.get(p).map(|l| l.target),
        }
    }

    fn action_vertex(&self, a: Action) -> Option<Vertex> {
        match a {
            Action::ToService(s) => Some(Vertex::Service(s)),
            Action::OutPort(p) if p == EGRESS_PORT => Some(Vertex::Sink),
            Action::OutPort(p) => self.links.get(p).map(|l| l.target),
            Action::Drop => None,
        }
    }

    /// Whether a rule at `ingress` may forward with `action`: the target must
    /// be downstream of the ingress vertex in some graph. Link-port rules may
    /// only deliver to the port's own target.
    fn contained(&self, ingress: Endpoint, action: Action) -> bool {
        let Some(to) = self.action_vertex(action) else { return action == Action::Drop };
        let Some(from) = self.ingress_vertex(ingress) else { return false };
        if let Endpoint::Port(p) = ingress {
            if let Some(l) = self.links.get(p) {
                return to == l.target;
            }
        }
        self.deployment.graphs.iter().any(|b| b.graph.descendants(from).contains(&to))
    }

    /// Every rule on every host whose actions leave the graph's downstream
    /// region.
    pub fn check_containment(&self) -> Vec<String> {
        let mut bad = Vec::new();
        for (h, t) in &self.tables {
            for r in t.snapshot().rules() {
                for a in &r.actions {
                    if !self.contained(r.key.ingress, *a) {
                        bad.push(format!("{h}: {}", r.dump_line(&self.catalog)));
                    }
                }
            }
        }
        bad
    }

    fn host_of(&self, v: Vertex) -> Option<HostId> {
        locate(v, &self.deployment.placement, self.deployment.entry_host, self.deployment.exit_host)
            .ok()
            .map(|(h, _)| h)
    }

    fn ingress_of(&self, v: Vertex) -> Option<Endpoint> {
        match v {
            Vertex::Source => Some(Endpoint::Port(INGRESS_PORT)),
            Vertex::Service(s) => Some(Endpoint::Service(s)),
            Vertex::Sink => None,
        }
    }

    /// Plans "rules at `at` for `flow` default to `to`" as a table update,
    /// allocating link ports if needed.
    fn plan(
        &mut self,
        at: Vertex,
        to: Vertex,
        flow: FlowPattern,
        updates: &mut Vec<(HostId, MatchKey, Action)>,
        receives: &mut Vec<(HostId, FlowRule)>,
    ) -> Result<(), MessageError> {
        let reject = || MessageError::ValidationRejected(format!("no rules live at {}", self.vertex_name(at)));
        let host = self.host_of(at).ok_or_else(reject)?;
        let ingress = self.ingress_of(at).ok_or_else(reject)?;
        let d = &self.deployment;
        let (action, receive) =
            action_towards(host, to, &d.placement, d.entry_host, d.exit_host, &mut self.links, FlowPattern::ANY)
                .map_err(|CompileError::UnplacedService(s)| MessageError::UnknownService(s))?;
        if let Some((_, FlowRule { key: MatchKey { ingress: Endpoint::Port(p), .. }, .. })) = &receive {
            let l = *self.links.get(*p).expect("allocated above");
            self.catalog.add_port(*p, format!("link-{}-{}", l.from, l.to));
        }
        receives.extend(receive);
        updates.push((host, MatchKey::new(ingress, flow), action));
        Ok(())
    }

    fn check_known(&self, s: ServiceId) -> Result<(), MessageError> {
        if self.services.contains_key(&s) {
            Ok(())
        } else {
            Err(MessageError::UnknownService(s))
        }
    }

    fn in_parallel_group(&self, s: ServiceId) -> bool {
        self.graphs_with(s).any(|g| g.parallel_groups().iter().any(|grp| grp.len() > 1 && grp.contains(&Vertex::Service(s))))
    }

    /// Validates a message and, if accepted, applies all of its table
    /// changes atomically across hosts. Every message is logged.
    pub fn apply_message(&mut self, now: Nanos, msg: &ControlMessage) -> Result<MessageOutcome, MessageError> {
        self.stats.messages += 1;
        let result = self.apply_inner(msg);
        let names = |v: Vertex| match v {
            Vertex::Source => SOURCE_NAME.to_string(),
            Vertex::Sink => SINK_NAME.to_string(),
            Vertex::Service(s) => self.catalog.service_name(s),
        };
        let mut line = msg.log_line(now, &self.catalog, names);
        if let Err(e) = &result {
            self.stats.rejected += 1;
            line.push_str(&format!(" rejected=\"{e}\""));
        }
        self.log.push(line);
        result
    }

    fn apply_inner(&mut self, msg: &ControlMessage) -> Result<MessageOutcome, MessageError> {
        let mut updates = Vec::new();
        let mut receives = Vec::new();
        let untrusted = self.mode == TrustMode::Untrusted;
        match &msg.kind {
            MessageKind::SkipMe { flow, service } => {
                self.check_known(*service)?;
                if untrusted && *service != msg.from {
                    return Err(MessageError::ValidationRejected("SkipMe for another service".into()));
                }
                if self.in_parallel_group(*service) {
                    return Err(MessageError::ValidationRejected("SkipMe on a parallel group member".into()));
                }
                let s = Vertex::Service(*service);
                let mut plans = Vec::new();
                for g in self.graphs_with(*service) {
                    let Some(next) = g.default_successor(s) else { continue };
                    for x in g.predecessors(s) {
                        if g.default_successor(x) == Some(s) {
                            plans.push((x, next));
                        }
                    }
                }
                for (x, next) in plans {
                    self.plan(x, next, *flow, &mut updates, &mut receives)?;
                }
            }
            MessageKind::RequestMe { flow, service } => {
                self.check_known(*service)?;
                if untrusted && *service != msg.from {
                    return Err(MessageError::ValidationRejected("RequestMe for another service".into()));
                }
                let s = Vertex::Service(*service);
                let preds: Vec<Vertex> = self.graphs_with(*service).flat_map(|g| g.predecessors(s)).collect();
                for x in preds {
                    self.plan(x, s, *flow, &mut updates, &mut receives)?;
                }
            }
            MessageKind::ChangeDefault { flow, service, target } => {
                self.check_known(*service)?;
                if let Vertex::Service(t) = target {
                    self.check_known(*t)?;
                }
                let s = Vertex::Service(*service);
                if !self.graphs_with(*service).any(|g| g.has_edge(s, *target)) {
                    return Err(MessageError::EdgeNotInGraph { from: s, to: *target });
                }
                if untrusted
                    && *service != msg.from
                    && !self.graphs_with(*service).any(|g| g.has_edge(s, Vertex::Service(msg.from)))
                {
                    return Err(MessageError::ValidationRejected("ChangeDefault on a non-adjacent service".into()));
                }
                self.plan(s, *target, *flow, &mut updates, &mut receives)?;
            }
            MessageKind::Message { service, key, value } => {
                self.check_known(*service)?;
                return Ok(MessageOutcome::Forward { from: *service, key: key.clone(), value: value.clone() });
            }
        }
        updates.sort();
        updates.dedup();
        // stage on copies so a failure leaves every table untouched
        let mut staged: BTreeMap<HostId, FlowTable> = BTreeMap::new();
        {
            let ctx = HostCtx { cp: self };
            for (h, r) in &receives {
                let t = staged.entry(*h).or_insert_with(|| (*self.snapshot(*h)).clone());
                if !t.rules().any(|x| x.key.ingress == r.key.ingress) {
                    t.install(r.clone(), &ctx)?;
                }
            }
            for (h, key, action) in &updates {
                let t = staged.entry(*h).or_insert_with(|| (*self.snapshot(*h)).clone());
                t.update_default(*key, *action, &ctx)?;
            }
        }
        for (h, t) in staged {
            if let Some(shared) = self.tables.get(&h) {
                shared.modify(|cur| *cur = t);
            }
        }
        Ok(MessageOutcome::Applied(updates.len()))
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<String> {
        std::mem::take(&mut self.log)
    }

    pub fn registry(&self) -> &BTreeMap<ServiceId, Vec<(HostId, InstanceId)>> {
        &self.registry
    }

    pub fn instance_count(&self) -> usize {
        self.registry.values().map(Vec::len).sum()
    }

    fn cores_used(&self, host: HostId) -> usize {
        self.registry.values().flatten().filter(|(h, _)| *h == host).count()
    }

    /// Allocates an instance id for `service` on `host`, charging one core.
    pub fn register_instance(&mut self, service: ServiceId, host: HostId) -> Result<InstanceId, ControlError> {
        if !self.services.contains_key(&service) {
            return Err(ControlError::UnknownService(service));
        }
        let cores = *self.deployment.hosts.get(&host).ok_or(ControlError::UnknownHost(host))?;
        if self.cores_used(host) >= cores as usize {
            return Err(ControlError::CapacityExceeded(host));
        }
        let id = InstanceId(self.next_instance);
        self.next_instance += 1;
        self.registry.entry(service).or_default().push((host, id));
        Ok(id)
    }

    /// Starts a new instance at run time. The caller brings it up after the
    /// startup delay.
    pub fn instantiate_nf(&mut self, service: ServiceId, host: HostId) -> Result<InstanceId, ControlError> {
        self.deployment.placement.entry(service).or_insert(host);
        self.register_instance(service, host)
    }

    /// Every non-on-demand service must have at least one instance.
    pub fn check_instances(&self) -> Result<(), Vec<DeploymentError>> {
        let missing: Vec<DeploymentError> = self
            .services
            .keys()
            .filter(|s| !self.deployment.ondemand.contains(s) && !self.registry.contains_key(s))
            .map(|s| DeploymentError::NoInstance(self.catalog.service_name(*s)))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(missing)
        }
    }
}

#[cfg(test)]
mod tests;
