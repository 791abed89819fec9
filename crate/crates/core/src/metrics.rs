//! Binned time series emitted as `t=<time> stat=<name> val=<n>` lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::{secs, to_secs, Nanos};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Metrics {
    bin: Nanos,
    values: BTreeMap<(u64, String), i64>,
    means: BTreeMap<(u64, String), (i128, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct MetricsParseError {
    pub line: usize,
    pub message: String,
}

impl Metrics {
    pub fn new(bin: Nanos) -> Self {
        Self { bin: bin.max(1), ..Self::default() }
    }

    pub fn bin(&self) -> Nanos {
        self.bin
    }

    fn index(&self, t: Nanos) -> u64 {
        t / self.bin
    }

    pub fn add(&mut self, t: Nanos, name: &str, v: i64) {
        let i = self.index(t);
        *self.values.entry((i, name.to_string())).or_default() += v;
    }

    pub fn set(&mut self, t: Nanos, name: &str, v: i64) {
        let i = self.index(t);
        self.values.insert((i, name.to_string()), v);
    }

    /// Records a sample whose per-bin mean is reported.
    pub fn sample(&mut self, t: Nanos, name: &str, v: i64) {
        let i = self.index(t);
        let e = self.means.entry((i, name.to_string())).or_default();
        e.0 += i128::from(v);
        e.1 += 1;
    }

    fn merged(&self) -> BTreeMap<(u64, String), i64> {
        let mut out = self.values.clone();
        for (k, (sum, n)) in &self.means {
            out.insert(k.clone(), (sum / i128::from(*n)) as i64);
        }
        out
    }

    /// `(bin start, value)` pairs of one stat, in time order.
    pub fn series(&self, name: &str) -> Vec<(Nanos, i64)> {
        self.merged()
            .into_iter()
            .filter(|((_, n), _)| n == name)
            .map(|((i, _), v)| (i * self.bin, v))
            .collect()
    }

    pub fn total(&self, name: &str) -> i64 {
        self.series(name).iter().map(|(_, v)| v).sum()
    }

    pub fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = self.values.keys().chain(self.means.keys()).map(|(_, n)| n.clone()).collect();
        n.sort();
        n.dedup();
        n
    }

    /// Sorted by time, then stat name.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for ((i, name), v) in self.merged() {
            let _ = writeln!(out, "t={:.3} stat={name} val={v}", to_secs(i * self.bin));
        }
        out
    }

    /// Reads rendered lines back. The bin width is inferred from the
    /// smallest gap between distinct timestamps.
    pub fn parse(text: &str) -> Result<Self, MetricsParseError> {
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| MetricsParseError { line: idx + 1, message: m.to_string() };
            let mut t = None;
            let mut stat = None;
            let mut val = None;
            for tok in line.split_whitespace() {
                match tok.split_once('=') {
                    Some(("t", v)) => t = Some(v.parse::<f64>().map_err(|_| err("bad time"))?),
                    Some(("stat", v)) => stat = Some(v.to_string()),
                    Some(("val", v)) => val = Some(v.parse::<i64>().map_err(|_| err("bad value"))?),
                    _ => return Err(err("expected t=, stat=, val=")),
                }
            }
            rows.push((
                secs(t.ok_or_else(|| err("missing t"))?),
                stat.ok_or_else(|| err("missing stat"))?,
                val.ok_or_else(|| err("missing val"))?,
            ));
        }
        let mut times: Vec<Nanos> = rows.iter().map(|r| r.0).collect();
        times.sort_unstable();
        times.dedup();
        let bin = times.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(crate::NANOS_PER_SEC / 10);
        let mut m = Metrics::new(bin);
        for (t, s, v) in rows {
            m.set(t, &s, v);
        }
        Ok(m)
    }
}
