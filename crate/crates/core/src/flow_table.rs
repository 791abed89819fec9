//! Per-host match/action table extended with service ids as an ingress
//! dimension and ordered multi-action lists carrying a parallel flag.
//!
//! Lookup order among matching rules: highest priority, then fewest
//! wildcards, then earliest insertion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::ids::{Catalog, Endpoint, PortId, ServiceId};
use crate::tuple::{FiveTuple, FlowPattern};

/// Priority band of rules compiled from a service graph.
pub const BASE_PRIORITY: u16 = 100;
/// Priority band of flow-specific rules created at run time.
pub const FLOW_PRIORITY: u16 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MatchKey {
    pub ingress: Endpoint,
    pub pattern: FlowPattern,
}

impl MatchKey {
    pub fn new(ingress: impl Into<Endpoint>, pattern: FlowPattern) -> Self {
        Self { ingress: ingress.into(), pattern }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    ToService(ServiceId),
    OutPort(PortId),
    Drop,
}

impl Action {
    pub fn endpoint(self) -> Option<Endpoint> {
        match self {
            Action::ToService(s) => Some(Endpoint::Service(s)),
            Action::OutPort(p) => Some(Endpoint::Port(p)),
            Action::Drop => None,
        }
    }
}

impl From<Endpoint> for Action {
    fn from(e: Endpoint) -> Self {
        match e {
            Endpoint::Service(s) => Action::ToService(s),
            Endpoint::Port(p) => Action::OutPort(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRule {
    pub key: MatchKey,
    /// `actions[0]` is the default action.
    pub actions: Vec<Action>,
    pub parallel: bool,
    pub priority: u16,
}

impl FlowRule {
    pub fn new(key: MatchKey, actions: Vec<Action>, priority: u16) -> Self {
        Self { key, actions, parallel: false, priority }
    }

    pub fn parallel(mut self) -> Self {
        self.parallel = true;
        self
    }

    pub fn default_action(&self) -> Action {
        self.actions.first().copied().unwrap_or(Action::Drop)
    }

    pub fn permits(&self, target: Action) -> bool {
        self.actions.contains(&target)
    }

    /// One line of the rule dump format.
    pub fn dump_line(&self, catalog: &Catalog) -> String {
        let actions: Vec<String> = self
            .actions
            .iter()
            .map(|a| match a {
                Action::ToService(s) => catalog.service_name(*s),
                Action::OutPort(p) => catalog.port_name(*p),
                Action::Drop => "drop".to_string(),
            })
            .collect();
        format!(
            "prio={} in={} match={} par={} actions={}",
            self.priority,
            catalog.endpoint_name(self.key.ingress),
            self.key.pattern,
            u8::from(self.parallel),
            actions.join(",")
        )
    }
}

/// What the table needs to know about the deployment to accept a rule.
pub trait RuleContext {
    /// `Some(readonly)` for a known service, `None` if unknown.
    fn service_readonly(&self, s: ServiceId) -> Option<bool>;
    fn port_known(&self, p: PortId) -> bool;
    /// Whether `action` is a legal next hop after `ingress` under the graph.
    fn permits(&self, ingress: Endpoint, action: Action) -> bool;
}

/// Set-backed [`RuleContext`].
#[derive(Debug, Clone, Default)]
pub struct TableContext {
    pub services: BTreeMap<ServiceId, bool>,
    pub ports: BTreeSet<PortId>,
    pub next_hops: BTreeSet<(Endpoint, Action)>,
}

impl TableContext {
    pub fn allow(&mut self, ingress: impl Into<Endpoint>, action: Action) {
        self.next_hops.insert((ingress.into(), action));
    }
}

impl RuleContext for TableContext {
    fn service_readonly(&self, s: ServiceId) -> Option<bool> {
        self.services.get(&s).copied()
    }

    fn port_known(&self, p: PortId) -> bool {
        self.ports.contains(&p)
    }

    fn permits(&self, ingress: Endpoint, action: Action) -> bool {
        action == Action::Drop || self.next_hops.contains(&(ingress, action))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("parallel flag on a rule whose targets are not all read-only services")]
    IllegalParallel,
    #[error("unknown target {0:?}")]
    UnknownTarget(Action),
    #[error("{target:?} is not a next hop of {ingress:?} in the service graph")]
    EdgeNotInGraph { ingress: Endpoint, target: Action },
    #[error("rule has no actions")]
    EmptyActions,
}

#[derive(Debug, Clone)]
struct Entry {
    seq: u64,
    rule: Arc<FlowRule>,
}

impl Entry {
    fn order_key(&self) -> (std::cmp::Reverse<u16>, u8, u64) {
        (std::cmp::Reverse(self.rule.priority), self.rule.key.pattern.wildcard_count(), self.seq)
    }
}

/// A rule returned by [`FlowTable::lookup`] together with the table
/// generation it was read at.
#[derive(Debug, Clone)]
pub struct LookupHit {
    pub rule: Arc<FlowRule>,
    pub generation: u64,
}

#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    by_ingress: BTreeMap<Endpoint, Vec<Entry>>,
    generation: u64,
    next_seq: u64,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.by_ingress.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rules in lookup order, grouped by ingress.
    pub fn rules(&self) -> impl Iterator<Item = &FlowRule> {
        self.by_ingress.values().flat_map(|v| v.iter().map(|e| e.rule.as_ref()))
    }

    /// Rule set without insertion metadata, for state comparisons.
    pub fn rule_set(&self) -> BTreeMap<(MatchKey, u16), (Vec<Action>, bool)> {
        self.rules().map(|r| ((r.key, r.priority), (r.actions.clone(), r.parallel))).collect()
    }

    pub fn install(&mut self, rule: FlowRule, ctx: &dyn RuleContext) -> Result<(), TableError> {
        check_rule(&rule, ctx)?;
        self.insert_unchecked(rule);
        Ok(())
    }

    fn insert_unchecked(&mut self, rule: FlowRule) {
        let entries = self.by_ingress.entry(rule.key.ingress).or_default();
        if let Some(e) = entries.iter_mut().find(|e| e.rule.key == rule.key && e.rule.priority == rule.priority) {
            e.rule = Arc::new(rule);
        } else {
            entries.push(Entry { seq: self.next_seq, rule: Arc::new(rule) });
            self.next_seq += 1;
            entries.sort_by_key(Entry::order_key);
        }
        self.generation += 1;
    }

    pub fn remove(&mut self, key: &MatchKey, priority: u16) -> bool {
        let Some(entries) = self.by_ingress.get_mut(&key.ingress) else { return false };
        let before = entries.len();
        entries.retain(|e| !(e.rule.key == *key && e.rule.priority == priority));
        let removed = entries.len() != before;
        if removed {
            self.generation += 1;
        }
        removed
    }

    pub fn lookup(&self, ingress: Endpoint, tuple: &FiveTuple) -> Option<LookupHit> {
        self.by_ingress
            .get(&ingress)?
            .iter()
            .find(|e| e.rule.key.pattern.matches(tuple))
            .map(|e| LookupHit { rule: Arc::clone(&e.rule), generation: self.generation })
    }

    /// Makes `new_default` the first action of every rule at `key.ingress`
    /// whose pattern lies inside `key.pattern`, keeping prior actions after
    /// it. If no rule has exactly `key.pattern`, one is created at the flow
    /// priority band by cloning the best rule covering the pattern; with no
    /// covering rule, a bare rule is created only if nothing else matched.
    pub fn update_default(
        &mut self,
        key: MatchKey,
        new_default: Action,
        ctx: &dyn RuleContext,
    ) -> Result<(), TableError> {
        check_target(new_default, ctx)?;
        if !ctx.permits(key.ingress, new_default) {
            return Err(TableError::EdgeNotInGraph { ingress: key.ingress, target: new_default });
        }

        let entries = self.by_ingress.get(&key.ingress).cloned().unwrap_or_default();
        let mut updated: Vec<FlowRule> = Vec::new();
        let mut exact_present = false;
        for e in &entries {
            if e.rule.key.pattern.is_subset_of(&key.pattern) {
                exact_present |= e.rule.key.pattern == key.pattern;
                updated.push(with_default(&e.rule, new_default));
            }
        }
        if !exact_present {
            let base = entries.iter().find(|e| key.pattern.is_subset_of(&e.rule.key.pattern));
            match base {
                Some(e) => {
                    let mut r = with_default(&e.rule, new_default);
                    r.key = key;
                    r.priority = e.rule.priority.max(FLOW_PRIORITY);
                    updated.push(r);
                }
                None if updated.is_empty() => updated.push(FlowRule::new(key, vec![new_default], FLOW_PRIORITY)),
                None => {}
            }
        }
        for r in &updated {
            check_rule(r, ctx)?;
        }
        for r in updated {
            let entries = self.by_ingress.entry(r.key.ingress).or_default();
            if let Some(e) = entries.iter_mut().find(|e| e.rule.key == r.key && e.rule.priority == r.priority) {
                e.rule = Arc::new(r);
            } else {
                entries.push(Entry { seq: self.next_seq, rule: Arc::new(r) });
                self.next_seq += 1;
                entries.sort_by_key(Entry::order_key);
            }
        }
        self.generation += 1;
        Ok(())
    }

    /// One line per rule in lookup order.
    pub fn dump(&self, catalog: &Catalog) -> String {
        let mut out = String::new();
        for r in self.rules() {
            out.push_str(&r.dump_line(catalog));
            out.push('\n');
        }
        out
    }
}

fn with_default(rule: &FlowRule, new_default: Action) -> FlowRule {
    let mut r = rule.clone();
    r.actions.retain(|a| *a != new_default);
    r.actions.insert(0, new_default);
    r
}

fn check_target(a: Action, ctx: &dyn RuleContext) -> Result<(), TableError> {
    let known = match a {
        Action::ToService(s) => ctx.service_readonly(s).is_some(),
        Action::OutPort(p) => ctx.port_known(p),
        Action::Drop => true,
    };
    if known {
        Ok(())
    } else {
        Err(TableError::UnknownTarget(a))
    }
}

fn check_rule(rule: &FlowRule, ctx: &dyn RuleContext) -> Result<(), TableError> {
    if rule.actions.is_empty() {
        return Err(TableError::EmptyActions);
    }
    for a in &rule.actions {
        check_target(*a, ctx)?;
    }
    if rule.parallel {
        let ingress_ok = match rule.key.ingress {
            Endpoint::Service(s) => ctx.service_readonly(s) == Some(true),
            Endpoint::Port(_) => true,
        };
        let targets_ok = rule
            .actions
            .iter()
            .all(|a| matches!(a, Action::ToService(s) if ctx.service_readonly(*s) == Some(true)));
        if !ingress_ok || !targets_ok {
            return Err(TableError::IllegalParallel);
        }
    }
    Ok(())
}

impl fmt::Display for FlowTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dump(&Catalog::new()))
    }
}

/// Single-writer, multi-reader handle. Readers take an immutable snapshot;
/// writers clone-on-write and publish the new table in one step, so a reader
/// never observes a half-applied mutation.
#[derive(Debug, Clone, Default)]
pub struct SharedTable {
    inner: Arc<RwLock<Arc<FlowTable>>>,
}

impl SharedTable {
    pub fn new(table: FlowTable) -> Self {
        Self { inner: Arc::new(RwLock::new(Arc::new(table))) }
    }

    pub fn snapshot(&self) -> Arc<FlowTable> {
        Arc::clone(&self.inner.read().unwrap_or_else(|p| p.into_inner()))
    }

    pub fn generation(&self) -> u64 {
        self.snapshot().generation()
    }

    pub fn modify<R>(&self, f: impl FnOnce(&mut FlowTable) -> R) -> R {
        let mut guard = self.inner.write().unwrap_or_else(|p| p.into_inner());
        let table = Arc::make_mut(&mut guard);
        f(table)
    }
}
