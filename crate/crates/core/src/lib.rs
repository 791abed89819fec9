//! Service graphs, extended flow tables, and the NF manager data path.

pub mod control;
pub mod engine;
pub mod flow_table;
pub mod graph;
pub mod ids;
pub mod message;
pub mod metrics;
pub mod nf;
pub mod packet;
pub mod sim;
pub mod spsc;
pub mod tuple;

/// Virtual or wall-clock time in nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_SEC: Nanos = 1_000_000_000;

pub fn secs(s: f64) -> Nanos {
    (s * NANOS_PER_SEC as f64).round() as Nanos
}

pub fn to_secs(t: Nanos) -> f64 {
    t as f64 / NANOS_PER_SEC as f64
}
