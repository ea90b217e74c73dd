//! Offline summary of a trace file: link utilization, transfer latency
//! histogram, fault timeline, detection latencies and app completions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::sim::{Category, Record};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkUse {
    pub packets: u64,
    pub wire_bytes: u64,
    pub payload_bytes: u64,
    pub busy_cycles: u64,
    /// Hops that departed before the previous one finished serializing.
    pub overlaps: u64,
    last_free: u64,
}

/// An injected fault and when the master first recorded it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Detection {
    pub injected_at: u64,
    pub action: String,
    pub target: String,
    pub detected_at: Option<u64>,
    pub kind: Option<String>,
}

impl Detection {
    pub fn latency(&self) -> Option<u64> {
        self.detected_at.map(|t| t - self.injected_at)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub records: u64,
    pub t_end: u64,
    pub links: BTreeMap<String, LinkUse>,
    /// Completed transfers by latency bucket: bucket k holds latencies in
    /// `[2^k, 2^(k+1))`, bucket 0 also holds 0.
    pub latency_buckets: BTreeMap<u32, u64>,
    pub transfers_failed: u64,
    /// `(t, level, summary)` of every fault record.
    pub fault_timeline: Vec<(u64, String, String)>,
    pub detections: Vec<Detection>,
    /// `(t, app, state)` of every terminal app state.
    pub completions: Vec<(u64, String, String)>,
    pub alarms: Vec<(u64, String)>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("trace line {line}: {msg}")]
pub struct TraceError {
    pub line: usize,
    pub msg: String,
}

impl Report {
    pub fn utilization(&self, link: &str) -> f64 {
        match (self.links.get(link), self.t_end) {
            (Some(u), t) if t > 0 => u.busy_cycles as f64 / t as f64,
            _ => 0.0,
        }
    }

    /// Per-link CSV with a header row.
    pub fn links_csv(&self) -> String {
        let mut s = String::from("link,packets,wire_bytes,payload_bytes,busy_cycles,utilization\n");
        for (l, u) in &self.links {
            let _ = writeln!(
                s,
                "{l},{},{},{},{},{:.6}",
                u.packets,
                u.wire_bytes,
                u.payload_bytes,
                u.busy_cycles,
                self.utilization(l)
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "records {} last_t {}", self.records, self.t_end);
        let _ = writeln!(s, "\nlinks (busiest first)");
        let mut busy: Vec<_> = self.links.iter().collect();
        busy.sort_by(|a, b| b.1.busy_cycles.cmp(&a.1.busy_cycles).then(a.0.cmp(b.0)));
        for (l, u) in busy.iter().take(12) {
            let _ = writeln!(
                s,
                "  {l:<14} packets={:<8} payload={:<10} util={:.4}",
                u.packets,
                u.payload_bytes,
                self.utilization(l)
            );
        }
        if self.links.len() > 12 {
            let _ = writeln!(s, "  ... {} more", self.links.len() - 12);
        }
        let _ = writeln!(s, "\ntransfer latency (cycles)");
        for (k, n) in &self.latency_buckets {
            let lo = if *k == 0 { 0 } else { 1u64 << k };
            let _ = writeln!(s, "  [{lo}, {}) {n}", 1u64 << (k + 1));
        }
        if self.transfers_failed > 0 {
            let _ = writeln!(s, "  failed {}", self.transfers_failed);
        }
        let _ = writeln!(s, "\nfault timeline");
        if self.fault_timeline.is_empty() {
            let _ = writeln!(s, "  (none)");
        }
        for (t, level, what) in &self.fault_timeline {
            let _ = writeln!(s, "  t={t} {level} {what}");
        }
        let _ = writeln!(s, "\ndetection latency");
        for d in &self.detections {
            match d.latency() {
                Some(l) => {
                    let kind = d.kind.as_deref().unwrap_or("?");
                    let _ = writeln!(s, "  {} {} at {}: {kind} after {l}", d.action, d.target, d.injected_at);
                }
                None => {
                    let _ = writeln!(s, "  {} {} at {}: not detected", d.action, d.target, d.injected_at);
                }
            }
        }
        let _ = writeln!(s, "\napps");
        for (t, app, state) in &self.completions {
            let _ = writeln!(s, "  t={t} {app} {state}");
        }
        for (t, msg) in &self.alarms {
            let _ = writeln!(s, "  t={t} ALARM {msg}");
        }
        s
    }
}

fn bucket(latency: u64) -> u32 {
    if latency == 0 {
        0
    } else {
        63 - latency.leading_zeros()
    }
}

/// Link kills pair with LINK_FAULT, restores with LINK_RESTORED and so on;
/// tile kills with any tile-level verdict other than a critical event.
fn matches(action: &str, kind: &str) -> bool {
    match action {
        "link_kill" => kind == "link_fault",
        "link_degrade" => kind == "link_degraded",
        "restore" => kind == "link_restored",
        "critical_event" => kind == "critical_event",
        "tile_kill_host" | "tile_kill_dnp" => {
            matches!(kind, "host_fault_suspected" | "dnp_fault_suspected" | "tile_silent")
        }
        _ => false,
    }
}

pub fn analyze(text: &str) -> Result<Report, TraceError> {
    let mut r = Report::default();
    let mut last: Option<(u64, u64)> = None;
    let mut pending: Vec<(Detection, Vec<String>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec = Record::parse(line).map_err(|msg| TraceError { line: lineno, msg })?;
        if let Some((t, n)) = last {
            if rec.t < t || rec.n != n + 1 {
                return Err(TraceError {
                    line: lineno,
                    msg: format!("record (t={}, n={}) out of order", rec.t, rec.n),
                });
            }
        }
        last = Some((rec.t, rec.n));
        r.records += 1;
        r.t_end = rec.t;
        let field = |k: &str| rec.get(k).ok_or_else(|| TraceError { line: lineno, msg: format!("missing {k}") });
        let num =
            |k: &str| rec.get_u64(k).ok_or_else(|| TraceError { line: lineno, msg: format!("missing or bad {k}") });
        match (rec.cat, rec.get("ev")) {
            (Category::Packet, Some("hop")) => {
                let u = r.links.entry(field("link")?.to_string()).or_default();
                let (depart, busy) = (num("depart")?, num("busy")?);
                if u.packets > 0 && depart < u.last_free {
                    u.overlaps += 1;
                }
                u.last_free = depart + busy;
                u.packets += 1;
                u.wire_bytes += num("bytes")?;
                u.payload_bytes += num("payload")?;
                u.busy_cycles += busy;
            }
            (Category::Packet, Some("complete")) => {
                if field("status")? == "complete" {
                    *r.latency_buckets.entry(bucket(num("latency")?)).or_default() += 1;
                } else {
                    r.transfers_failed += 1;
                }
            }
            (Category::Fault, _) => {
                let level = field("level")?.to_string();
                let kind = field("kind")?.to_string();
                let entity = rec
                    .get("link")
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("tile({})", rec.get("tile").unwrap_or("?")));
                let what = match level.as_str() {
                    "tile" => format!("{kind} {entity} by {}", rec.get("origin").unwrap_or("?")),
                    _ => format!("{kind} {entity} at {}", rec.get("node").unwrap_or("?")),
                };
                if level == "master" {
                    for (d, targets) in pending.iter_mut() {
                        if d.detected_at.is_none() && targets.contains(&entity) && matches(&d.action, &kind) {
                            d.detected_at = Some(rec.t);
                            d.kind = Some(kind.clone());
                        }
                    }
                }
                r.fault_timeline.push((rec.t, level, what));
            }
            (Category::Injector, _) => {
                let action = field("action")?;
                if action == "drop" || action == "corrupt" {
                    continue;
                }
                let target = field("target")?.to_string();
                let mut targets = vec![target.clone()];
                targets.extend(rec.get("peer").map(str::to_string));
                let d =
                    Detection { injected_at: rec.t, action: action.to_string(), target, detected_at: None, kind: None };
                pending.push((d, targets));
            }
            (Category::App, Some("state")) => {
                let state = field("state")?;
                if matches!(state, "completed" | "stopped" | "failed") {
                    r.completions.push((rec.t, field("app")?.to_string(), state.to_string()));
                }
            }
            (Category::App, Some("alarm")) => r.alarms.push((rec.t, field("msg")?.to_string())),
            _ => {}
        }
    }
    r.detections = pending.into_iter().map(|(d, _)| d).collect();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupt_line_is_named() {
        let t = "t=0 n=0 cat=app ev=fsm state=all\nt=1 n=1 cat=bogus\n";
        assert_eq!(analyze(t).unwrap_err().line, 2);
        let back = "t=5 n=0 cat=app ev=x\nt=4 n=1 cat=app ev=x\n";
        assert_eq!(analyze(back).unwrap_err().line, 2);
    }

    #[test]
    fn hop_records_accumulate_per_link() {
        let t = "t=0 n=0 cat=packet ev=hop link=link(0,+x) bytes=100 payload=68 depart=0 busy=24 arrive=44\n\
                 t=10 n=1 cat=packet ev=hop link=link(0,+x) bytes=100 payload=68 depart=24 busy=24 arrive=68\n\
                 t=100 n=2 cat=packet ev=complete xfer=1 status=complete latency=68\n";
        let r = analyze(t).unwrap();
        let u = r.links["link(0,+x)"];
        assert_eq!((u.packets, u.payload_bytes, u.busy_cycles, u.overlaps), (2, 136, 48, 0));
        assert!((r.utilization("link(0,+x)") - 0.48).abs() < 1e-12);
        assert_eq!(r.latency_buckets[&6], 1);
    }

    #[test]
    fn detection_pairs_injection_with_master_record() {
        let t = "t=100 n=0 cat=injector origin=injector action=link_kill target=link(0,+x) peer=link(1,-x) clause=0\n\
                 t=900 n=1 cat=fault level=tile origin=1 tile=1 kind=link_fault link=link(0,+x) evidence=k\n\
                 t=950 n=2 cat=fault level=master node=0 origin=1 tile=1 kind=link_fault link=link(0,+x) event_at=900 path=1>0\n";
        let r = analyze(t).unwrap();
        assert_eq!(r.detections[0].latency(), Some(850));
        assert_eq!(r.fault_timeline.len(), 2);
    }
}
