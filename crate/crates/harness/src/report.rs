//! Run reports: metrics series, a flat summary, and line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use nfchain_core::metrics::{Metrics, MetricsParseError};
use nfchain_core::sim::RunOutcome;
use nfchain_core::{to_secs, Nanos};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetricsReport {
    pub metrics: Metrics,
    pub summary: BTreeMap<String, String>,
    /// Extra text files written next to the metrics, by file name.
    pub dumps: BTreeMap<String, String>,
}

/// Aggregates of one stat over the run.
#[derive(Debug, Clone, PartialEq)]
pub struct StatSummary {
    pub name: String,
    pub bins: usize,
    pub total: i64,
    pub mean: f64,
    pub max: i64,
}

/// Charts drawn when any of their stats is present.
const CHARTS: &[(&str, &str, &[&str])] = &[
    ("traffic", "packets per bin", &["gen", "egress"]),
    ("latency", "mean latency (us)", &["lat_us"]),
    ("control", "controller and NF messages per bin", &["ctrl_requests", "ctrl_replies", "ctrl_msgs", "ctrl_rejected"]),
    ("queues", "queue depth", &["depth."]),
    ("drops", "drops per bin", &["drop_"]),
    ("flows", "per-flow latency (us)", &["lat_us.f"]),
];

impl MetricsReport {
    pub fn from_outcome(out: &RunOutcome) -> Self {
        let mut dumps = BTreeMap::new();
        let mut tables = String::new();
        for (h, t) in &out.tables {
            let _ = writeln!(tables, "host {h}");
            tables.push_str(t);
        }
        dumps.insert("tables.txt".into(), tables);
        let timeline: String =
            out.timeline.iter().map(|(t, e)| format!("t={:.6} {e}\n", to_secs(*t))).collect();
        dumps.insert("timeline.txt".into(), timeline);
        Self { metrics: out.metrics.clone(), summary: out.summary.clone(), dumps }
    }

    pub fn parse_metrics(text: &str) -> Result<Self, MetricsParseError> {
        Ok(Self { metrics: Metrics::parse(text)?, ..Self::default() })
    }

    pub fn summary_text(&self) -> String {
        self.summary.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn stats(&self) -> Vec<StatSummary> {
        self.metrics
            .names()
            .into_iter()
            .map(|name| {
                let s = self.metrics.series(&name);
                let total: i64 = s.iter().map(|(_, v)| v).sum();
                StatSummary {
                    bins: s.len(),
                    total,
                    mean: if s.is_empty() { 0.0 } else { total as f64 / s.len() as f64 },
                    max: s.iter().map(|(_, v)| *v).max().unwrap_or(0),
                    name,
                }
            })
            .collect()
    }

    /// Summary lines as `stat.<name>.<aggregate>=<value>`.
    pub fn stats_text(&self) -> String {
        let mut out = String::new();
        for s in self.stats() {
            let _ = writeln!(out, "stat.{}.bins={}", s.name, s.bins);
            let _ = writeln!(out, "stat.{}.total={}", s.name, s.total);
            let _ = writeln!(out, "stat.{}.mean={:.3}", s.name, s.mean);
            let _ = writeln!(out, "stat.{}.max={}", s.name, s.max);
        }
        out
    }

    /// One chart per group whose stats appear in the metrics.
    pub fn charts(&self) -> Vec<(String, String)> {
        let names = self.metrics.names();
        let mut out = Vec::new();
        for (file, title, prefixes) in CHARTS {
            let picked: Vec<&String> = names
                .iter()
                .filter(|n| {
                    prefixes.iter().any(|p| if p.ends_with(['.', '_']) { n.starts_with(p) } else { *n == p })
                })
                .filter(|n| *file == "flows" || !n.starts_with("lat_us.f"))
                .collect();
            if picked.is_empty() {
                continue;
            }
            let series: Vec<(String, Vec<(Nanos, i64)>)> =
                picked.iter().map(|n| ((*n).clone(), self.metrics.series(n))).collect();
            out.push((format!("{file}.svg"), line_chart(title, &series)));
        }
        out
    }

    /// Writes `metrics.txt`, `summary.txt`, the dumps and the charts into
    /// `dir`, returning the paths written.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = vec![
            ("metrics.txt".to_string(), self.metrics.render()),
            ("summary.txt".to_string(), self.summary_text()),
        ];
        files.extend(self.dumps.iter().map(|(k, v)| (k.clone(), v.clone())));
        files.extend(self.charts());
        let mut written = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            written.push(p);
        }
        Ok(written)
    }
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Plain SVG line chart of several series over time.
pub fn line_chart(title: &str, series: &[(String, Vec<(Nanos, i64)>)]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 360.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 170.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 40.0;
    let points = series.iter().flat_map(|(_, s)| s.iter());
    let t_max = points.clone().map(|(t, _)| *t).max().unwrap_or(0).max(1) as f64;
    let v_max = points.clone().map(|(_, v)| *v).max().unwrap_or(0).max(1) as f64;
    let v_min = points.map(|(_, v)| *v).min().unwrap_or(0).min(0) as f64;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x = |t: f64| LEFT + t / t_max * pw;
    let y = |v: f64| TOP + ph - (v - v_min) / (v_max - v_min) * ph;
    let mut out = String::new();
    let _ = writeln!(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">");
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"{}\" y=\"18\" font-size=\"13\">{}</text>", LEFT, escape(title));
    let _ = writeln!(
        out,
        "<path d=\"M{LEFT} {TOP} V{} H{}\" fill=\"none\" stroke=\"black\"/>",
        TOP + ph,
        LEFT + pw
    );
    for i in 0..=4 {
        let f = f64::from(i) / 4.0;
        let v = v_min + f * (v_max - v_min);
        let t = f * t_max;
        let _ = writeln!(out, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{:.0}</text>", LEFT - 6.0, y(v) + 4.0, v);
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{:.1}s</text>", x(t), H - BOTTOM + 16.0, to_secs(t as Nanos));
    }
    for (i, (name, s)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.iter().map(|(t, v)| format!("{:.1},{:.1}", x(*t as f64), y(*v as f64))).collect();
        let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>", pts.join(" "));
        let ly = TOP + 14.0 * i as f64;
        let _ = writeln!(out, "<rect x=\"{}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{colour}\"/>", W - RIGHT + 12.0, ly);
        let _ = writeln!(out, "<text x=\"{}\" y=\"{:.1}\">{}</text>", W - RIGHT + 26.0, ly + 9.0, escape(name));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nfchain_core::secs;

    fn report() -> MetricsReport {
        let mut m = Metrics::new(secs(0.1));
        for i in 0..10 {
            m.add(secs(0.1) * i, "gen", 10);
            m.add(secs(0.1) * i, "egress", 9);
            m.sample(secs(0.1) * i, "lat_us", 40 + i as i64);
        }
        MetricsReport { metrics: m, ..MetricsReport::default() }
    }

    #[test]
    fn stats_aggregate_each_series() {
        let s = report().stats();
        let gen = s.iter().find(|s| s.name == "gen").unwrap();
        assert_eq!((gen.bins, gen.total, gen.max), (10, 100, 10));
        assert!((gen.mean - 10.0).abs() < 1e-9);
        assert!(report().stats_text().contains("stat.egress.total=90\n"));
    }

    #[test]
    fn charts_cover_present_groups_only() {
        let charts = report().charts();
        let names: Vec<&str> = charts.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["traffic.svg", "latency.svg"]);
        let (_, svg) = &charts[0];
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn write_round_trips_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        let files = r.write(dir.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("traffic.svg")));
        let text = std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
        assert_eq!(MetricsReport::parse_metrics(&text).unwrap().metrics.render(), r.metrics.render());
    }
}
