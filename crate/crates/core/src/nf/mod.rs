//! NF authoring interface: the per-packet callback, its context, and the
//! sample NFs used by the scenarios.

use std::any::Any;
use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::Vertex;
use crate::ids::{Endpoint, InstanceId, ServiceId};
use crate::message::{ControlMessage, MessageKind};
use crate::packet;
use crate::tuple::{FiveTuple, FlowPattern};
use crate::{Nanos, NANOS_PER_SEC};

pub mod samples;

pub use samples::{build_nf, NfConfigError, Params};

/// What an NF wants done with a packet when it returns it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketVerdict {
    Discard,
    SendTo(Endpoint),
    Default,
}

pub trait NetworkFunction: Send {
    fn handle_packet(&mut self, ctx: &mut NfContext, pkt: &mut PacketView<'_>) -> PacketVerdict;

    /// Called once when the instance comes up.
    fn on_start(&mut self, _ctx: &mut NfContext) {}

    /// Scripted configuration change, e.g. a policy switch.
    fn on_event(&mut self, _ctx: &mut NfContext, _key: &str, _value: &str) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("read-only NF attempted to write packet bytes")]
pub struct ReadOnlyViolation;

enum ViewBytes<'a> {
    Owned(&'a mut Vec<u8>),
    Shared(&'a [u8]),
}

/// The NF's view of one packet. Read-only NFs get an immutable byte view.
pub struct PacketView<'a> {
    bytes: ViewBytes<'a>,
    flow: FiveTuple,
    readonly: bool,
    write_attempted: bool,
}

impl<'a> PacketView<'a> {
    pub fn new(bytes: &'a mut Vec<u8>, flow: FiveTuple, readonly: bool) -> Self {
        Self { bytes: ViewBytes::Owned(bytes), flow, readonly, write_attempted: false }
    }

    /// A read-only view over bytes other NFs may be reading concurrently.
    pub fn shared(bytes: &'a [u8], flow: FiveTuple) -> Self {
        Self { bytes: ViewBytes::Shared(bytes), flow, readonly: true, write_attempted: false }
    }

    pub fn flow(&self) -> FiveTuple {
        self.flow
    }

    pub fn bytes(&self) -> &[u8] {
        match &self.bytes {
            ViewBytes::Owned(b) => b,
            ViewBytes::Shared(b) => b,
        }
    }

    pub fn len(&self) -> usize {
        self.bytes().len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes().is_empty()
    }

    pub fn payload(&self) -> &[u8] {
        packet::payload(self.bytes())
    }

    pub fn bytes_mut(&mut self) -> Result<&mut Vec<u8>, ReadOnlyViolation> {
        match &mut self.bytes {
            ViewBytes::Owned(b) if !self.readonly => Ok(b),
            _ => {
                self.write_attempted = true;
                Err(ReadOnlyViolation)
            }
        }
    }

    pub fn write_attempted(&self) -> bool {
        self.write_attempted
    }
}

struct StateEntry {
    value: Box<dyn Any + Send>,
    touched: Nanos,
}

/// Per-flow NF state with idle expiry. Eviction only happens in
/// [`FlowStateStore::expire`], which the engine calls between callbacks.
pub struct FlowStateStore {
    entries: HashMap<FiveTuple, StateEntry>,
    ttl: Nanos,
    capacity: usize,
    now: Nanos,
}

pub const DEFAULT_STATE_TTL: Nanos = 60 * NANOS_PER_SEC;
pub const DEFAULT_STATE_CAPACITY: usize = 1 << 16;

impl FlowStateStore {
    pub fn new(ttl: Nanos, capacity: usize) -> Self {
        Self { entries: HashMap::new(), ttl, capacity: capacity.max(1), now: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, flow: &FiveTuple) -> bool {
        self.entries.contains_key(flow)
    }

    pub fn get<T: Any + Send>(&mut self, flow: &FiveTuple) -> Option<&mut T> {
        let now = self.now;
        let e = self.entries.get_mut(flow)?;
        e.touched = now;
        e.value.downcast_mut::<T>()
    }

    /// Returns the flow's state, creating it with `init` if absent or if the
    /// stored value has a different type.
    pub fn get_or_insert_with<T: Any + Send>(&mut self, flow: FiveTuple, init: impl FnOnce() -> T) -> &mut T {
        let now = self.now;
        let e = self
            .entries
            .entry(flow)
            .or_insert_with(|| StateEntry { value: Box::new(()), touched: now });
        e.touched = now;
        if !e.value.is::<T>() {
            e.value = Box::new(init());
        }
        e.value.downcast_mut::<T>().expect("type checked above")
    }

    pub fn remove(&mut self, flow: &FiveTuple) -> bool {
        self.entries.remove(flow).is_some()
    }

    /// Drops idle entries, then the least recently touched ones until the
    /// store is back within capacity.
    pub fn expire(&mut self, now: Nanos) {
        self.now = now;
        let ttl = self.ttl;
        self.entries.retain(|_, e| now.saturating_sub(e.touched) < ttl);
        while self.entries.len() > self.capacity {
            let oldest = self
                .entries
                .iter()
                .min_by_key(|(k, e)| (e.touched, **k))
                .map(|(k, _)| *k)
                .expect("non-empty");
            self.entries.remove(&oldest);
        }
    }
}

/// Everything an NF may touch besides the packet.
pub struct NfContext {
    service: ServiceId,
    instance: InstanceId,
    now: Nanos,
    outbox: Vec<MessageKind>,
    state: FlowStateStore,
    rng: ChaCha8Rng,
}

impl NfContext {
    pub fn new(service: ServiceId, instance: InstanceId, seed: u64) -> Self {
        Self {
            service,
            instance,
            now: 0,
            outbox: Vec::new(),
            state: FlowStateStore::new(DEFAULT_STATE_TTL, DEFAULT_STATE_CAPACITY),
            rng: ChaCha8Rng::seed_from_u64(seed ^ (u64::from(instance.0) << 32)),
        }
    }

    pub fn with_state_limits(mut self, ttl: Nanos, capacity: usize) -> Self {
        self.state = FlowStateStore::new(ttl, capacity);
        self
    }

    pub fn service(&self) -> ServiceId {
        self.service
    }

    pub fn instance(&self) -> InstanceId {
        self.instance
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    /// Advances the clock and runs state expiry. Called by the engine before
    /// each callback.
    pub fn advance(&mut self, now: Nanos) {
        self.now = now;
        self.state.expire(now);
    }

    pub fn state(&mut self) -> &mut FlowStateStore {
        &mut self.state
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn send(&mut self, kind: MessageKind) {
        self.outbox.push(kind);
    }

    pub fn skip_me(&mut self, flow: FlowPattern) {
        let service = self.service;
        self.send(MessageKind::SkipMe { flow, service });
    }

    pub fn request_me(&mut self, flow: FlowPattern) {
        let service = self.service;
        self.send(MessageKind::RequestMe { flow, service });
    }

    pub fn change_default(&mut self, flow: FlowPattern, service: ServiceId, target: Vertex) {
        self.send(MessageKind::ChangeDefault { flow, service, target });
    }

    pub fn message(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let service = self.service;
        self.send(MessageKind::Message { service, key: key.into(), value: value.into() });
    }

    pub fn drain_messages(&mut self) -> Vec<ControlMessage> {
        let (origin, from) = (self.instance, self.service);
        self.outbox.drain(..).map(|kind| ControlMessage { kind, origin, from }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn flow(n: u8) -> FiveTuple {
        FiveTuple::new(Ipv4Addr::new(10, 0, 0, n), Ipv4Addr::new(10, 0, 1, 1), 1000, 80, 6)
    }

    #[test]
    fn state_expires_after_ttl_between_callbacks() {
        let mut s = FlowStateStore::new(100, 10);
        s.expire(0);
        *s.get_or_insert_with(flow(1), || 0u32) += 1;
        s.expire(50);
        assert_eq!(s.get::<u32>(&flow(1)).copied(), Some(1));
        s.expire(149);
        assert!(s.contains(&flow(1)));
        s.expire(250);
        assert!(!s.contains(&flow(1)));
    }

    #[test]
    fn state_is_bounded_by_capacity() {
        let mut s = FlowStateStore::new(1_000, 3);
        for i in 0..5u8 {
            s.expire(u64::from(i));
            s.get_or_insert_with(flow(i), || i);
        }
        s.expire(5);
        assert_eq!(s.len(), 3);
        assert!(!s.contains(&flow(0)) && !s.contains(&flow(1)));
    }

    #[test]
    fn readonly_view_refuses_writes() {
        let mut bytes = vec![1, 2, 3];
        let mut v = PacketView::new(&mut bytes, flow(1), true);
        assert!(v.bytes_mut().is_err());
        assert!(v.write_attempted());
        let mut v = PacketView::new(&mut bytes, flow(1), false);
        v.bytes_mut().unwrap()[0] = 9;
        assert_eq!(bytes[0], 9);
    }

    #[test]
    fn messages_carry_origin() {
        let s = ServiceId::new(4).unwrap();
        let mut ctx = NfContext::new(s, InstanceId(7), 1);
        ctx.request_me(FlowPattern::ANY);
        ctx.message("alarm", "10.0.0.0/24");
        let msgs = ctx.drain_messages();
        assert_eq!(msgs.len(), 2);
        assert!(msgs.iter().all(|m| m.origin == InstanceId(7) && m.from == s));
        assert!(ctx.drain_messages().is_empty());
    }
}
