//! Pooled packet buffers, lightweight descriptors, and header helpers.

use std::net::Ipv4Addr;
use std::sync::Arc;

use thiserror::Error;

use crate::flow_table::FlowRule;
use crate::ids::{Endpoint, InstanceId};
use crate::tuple::FiveTuple;
use crate::Nanos;

pub const IPV4_HEADER_LEN: usize = 20;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

fn l4_header_len(proto: u8) -> usize {
    if proto == PROTO_TCP {
        20
    } else {
        8
    }
}

/// Builds an IPv4 packet of `total_len` bytes (grown if the headers and
/// payload need more) carrying `payload` after the L4 header.
pub fn build_packet(t: &FiveTuple, total_len: usize, payload: &[u8]) -> Vec<u8> {
    let hdr = IPV4_HEADER_LEN + l4_header_len(t.proto);
    let len = total_len.max(hdr + payload.len()).min(usize::from(u16::MAX));
    let mut p = vec![0u8; len];
    p[0] = 0x45;
    p[2..4].copy_from_slice(&(len as u16).to_be_bytes());
    p[8] = 64;
    p[9] = t.proto;
    p[12..16].copy_from_slice(&t.src_ip.octets());
    p[16..20].copy_from_slice(&t.dst_ip.octets());
    p[20..22].copy_from_slice(&t.src_port.to_be_bytes());
    p[22..24].copy_from_slice(&t.dst_port.to_be_bytes());
    if t.proto == PROTO_TCP {
        p[32] = 0x50;
    } else {
        p[24..26].copy_from_slice(&((len - IPV4_HEADER_LEN) as u16).to_be_bytes());
    }
    p[hdr..hdr + payload.len()].copy_from_slice(payload);
    write_ipv4_checksum(&mut p);
    p
}

pub fn parse_five_tuple(p: &[u8]) -> Option<FiveTuple> {
    if p.len() < IPV4_HEADER_LEN + 4 || p[0] >> 4 != 4 {
        return None;
    }
    let ihl = usize::from(p[0] & 0x0f) * 4;
    if p.len() < ihl + 4 {
        return None;
    }
    Some(FiveTuple {
        src_ip: Ipv4Addr::new(p[12], p[13], p[14], p[15]),
        dst_ip: Ipv4Addr::new(p[16], p[17], p[18], p[19]),
        src_port: u16::from_be_bytes([p[ihl], p[ihl + 1]]),
        dst_port: u16::from_be_bytes([p[ihl + 2], p[ihl + 3]]),
        proto: p[9],
    })
}

/// Bytes after the L4 header.
pub fn payload(p: &[u8]) -> &[u8] {
    if p.len() < IPV4_HEADER_LEN {
        return &[];
    }
    let ihl = usize::from(p[0] & 0x0f) * 4;
    let start = ihl + l4_header_len(p[9]);
    p.get(start..).unwrap_or(&[])
}

pub fn set_dst_ip(p: &mut [u8], ip: Ipv4Addr) {
    if p.len() >= IPV4_HEADER_LEN {
        p[16..20].copy_from_slice(&ip.octets());
        write_ipv4_checksum(p);
    }
}

pub fn set_src_ip(p: &mut [u8], ip: Ipv4Addr) {
    if p.len() >= IPV4_HEADER_LEN {
        p[12..16].copy_from_slice(&ip.octets());
        write_ipv4_checksum(p);
    }
}

fn write_ipv4_checksum(p: &mut [u8]) {
    p[10] = 0;
    p[11] = 0;
    let c = ipv4_checksum(&p[..IPV4_HEADER_LEN]);
    p[10..12].copy_from_slice(&c.to_be_bytes());
}

pub fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in header.chunks(2) {
        let word = u16::from_be_bytes([chunk[0], *chunk.get(1).unwrap_or(&0)]);
        sum += u32::from(word);
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// What an NF asked the manager to do with a packet it is finished with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RequestedAction {
    Discard,
    SendTo(Endpoint),
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferHandle {
    index: u32,
    epoch: u32,
}

impl BufferHandle {
    pub fn index(self) -> u32 {
        self.index
    }
}

/// Bookkeeping carried with each buffer for latency and tracing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PacketMeta {
    /// Generation time at the traffic source.
    pub born: Nanos,
    pub packet_id: u64,
    pub flow_label: u32,
}

/// A cached lookup result: valid only while the table generation matches.
#[derive(Debug, Clone)]
pub struct CachedRule {
    pub rule: Arc<FlowRule>,
    pub generation: u64,
}

/// Handle passed through the rings instead of packet bytes.
#[derive(Debug, Clone)]
pub struct PacketDescriptor {
    pub buf: BufferHandle,
    pub flow: FiveTuple,
    /// Ingress whose rule decides where the packet goes after the current
    /// holders return it.
    pub exit: Endpoint,
    pub cached: Option<CachedRule>,
    pub requested: RequestedAction,
    pub hops: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("packet pool exhausted")]
    Exhausted,
    #[error("buffer freed twice")]
    DoubleFree,
    #[error("stale buffer handle")]
    Stale,
}

#[derive(Debug, Default)]
struct Slot {
    data: Vec<u8>,
    epoch: u32,
    live: bool,
    refcount: u32,
    meta: PacketMeta,
    pending: Vec<(InstanceId, RequestedAction)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub allocs: u64,
    pub frees: u64,
    pub double_frees: u64,
}

/// Fixed-capacity arena of packet buffers. Single-threaded; the threaded
/// pipeline has its own shared arena.
#[derive(Debug)]
pub struct BufferPool {
    slots: Vec<Slot>,
    free: Vec<u32>,
    stats: PoolStats,
}

impl BufferPool {
    pub fn new(capacity: usize) -> Self {
        let slots = (0..capacity).map(|_| Slot::default()).collect();
        let free = (0..capacity as u32).rev().collect();
        Self { slots, free, stats: PoolStats::default() }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn stats(&self) -> PoolStats {
        self.stats
    }

    pub fn in_flight(&self) -> u64 {
        self.stats.allocs - self.stats.frees
    }

    pub fn alloc(&mut self, bytes: &[u8], meta: PacketMeta) -> Result<BufferHandle, PoolError> {
        let index = self.free.pop().ok_or(PoolError::Exhausted)?;
        let slot = &mut self.slots[index as usize];
        slot.data.clear();
        slot.data.extend_from_slice(bytes);
        slot.live = true;
        slot.refcount = 0;
        slot.meta = meta;
        slot.pending.clear();
        self.stats.allocs += 1;
        Ok(BufferHandle { index, epoch: slot.epoch })
    }

    fn slot(&self, h: BufferHandle) -> Result<&Slot, PoolError> {
        let s = self.slots.get(h.index as usize).ok_or(PoolError::Stale)?;
        if s.epoch != h.epoch || !s.live {
            return Err(PoolError::Stale);
        }
        Ok(s)
    }

    fn slot_mut(&mut self, h: BufferHandle) -> Result<&mut Slot, PoolError> {
        let s = self.slots.get_mut(h.index as usize).ok_or(PoolError::Stale)?;
        if s.epoch != h.epoch || !s.live {
            return Err(PoolError::Stale);
        }
        Ok(s)
    }

    pub fn free(&mut self, h: BufferHandle) -> Result<(), PoolError> {
        let Some(s) = self.slots.get_mut(h.index as usize) else { return Err(PoolError::Stale) };
        if s.epoch != h.epoch || !s.live {
            self.stats.double_frees += 1;
            return Err(PoolError::DoubleFree);
        }
        s.live = false;
        s.epoch = s.epoch.wrapping_add(1);
        s.pending.clear();
        self.free.push(h.index);
        self.stats.frees += 1;
        Ok(())
    }

    pub fn is_live(&self, h: BufferHandle) -> bool {
        self.slot(h).is_ok()
    }

    pub fn bytes(&self, h: BufferHandle) -> Result<&[u8], PoolError> {
        self.slot(h).map(|s| s.data.as_slice())
    }

    pub fn bytes_mut(&mut self, h: BufferHandle) -> Result<&mut Vec<u8>, PoolError> {
        self.slot_mut(h).map(|s| &mut s.data)
    }

    pub fn meta(&self, h: BufferHandle) -> Result<PacketMeta, PoolError> {
        self.slot(h).map(|s| s.meta)
    }

    pub fn refcount(&self, h: BufferHandle) -> Result<u32, PoolError> {
        self.slot(h).map(|s| s.refcount)
    }

    pub fn set_refcount(&mut self, h: BufferHandle, n: u32) -> Result<(), PoolError> {
        self.slot_mut(h).map(|s| s.refcount = n)
    }

    /// Records one holder's verdict and drops its reference. Returns the
    /// remaining count.
    pub fn release(&mut self, h: BufferHandle, who: InstanceId, action: RequestedAction) -> Result<u32, PoolError> {
        let s = self.slot_mut(h)?;
        debug_assert!(s.refcount > 0, "release on a buffer nobody holds");
        s.refcount = s.refcount.saturating_sub(1);
        s.pending.push((who, action));
        Ok(s.refcount)
    }

    pub fn take_pending(&mut self, h: BufferHandle) -> Result<Vec<(InstanceId, RequestedAction)>, PoolError> {
        self.slot_mut(h).map(|s| std::mem::take(&mut s.pending))
    }
}
