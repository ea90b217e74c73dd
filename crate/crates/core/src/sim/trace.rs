//! Line-oriented run trace with a running hash.
//!
//! ```text
//! t=<cycle> n=<emission seq> cat=<category> key=value ...
//! ```
//!
//! Categories: `packet`, `fault`, `lofamo`, `control`, `app`,
//! `injector`. Values never contain spaces.

use std::fmt;
use std::io::Write;

use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Packet,
    Fault,
    Lofamo,
    Control,
    App,
    Injector,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Packet => "packet",
            Category::Fault => "fault",
            Category::Lofamo => "lofamo",
            Category::Control => "control",
            Category::App => "app",
            Category::Injector => "injector",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "packet" => Category::Packet,
            "fault" => Category::Fault,
            "lofamo" => Category::Lofamo,
            "control" => Category::Control,
            "app" => Category::App,
            "injector" => Category::Injector,
            _ => return None,
        })
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub struct Trace {
    lines: Option<Vec<String>>,
    hasher: Sha256,
    count: u64,
    last_t: u64,
    /// Skip per-hop packet records when false.
    pub packets: bool,
}

impl Trace {
    pub fn new(keep_lines: bool) -> Self {
        Trace { lines: keep_lines.then(Vec::new), hasher: Sha256::new(), count: 0, last_t: 0, packets: true }
    }

    pub fn emit(&mut self, t: u64, cat: Category, body: fmt::Arguments<'_>) {
        debug_assert!(t >= self.last_t, "trace went back in time");
        self.last_t = t;
        let line = format!("t={t} n={} cat={cat} {body}", self.count);
        self.count += 1;
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        if let Some(v) = &mut self.lines {
            v.push(line);
        }
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Retained lines; empty when the trace was created hash-only.
    pub fn lines(&self) -> &[String] {
        self.lines.as_deref().unwrap_or(&[])
    }

    pub fn hash(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        for l in self.lines() {
            writeln!(w, "{l}")?;
        }
        Ok(())
    }
}

/// Emit a record: `trace!(sim.trace, t, Category::Packet, "ev=send src={}", s)`.
#[macro_export]
macro_rules! trace {
    ($tr:expr, $t:expr, $cat:expr, $($arg:tt)*) => {
        $tr.emit($t, $cat, format_args!($($arg)*))
    };
}

/// A parsed trace record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub t: u64,
    pub n: u64,
    pub cat: Category,
    pub fields: Vec<(String, String)>,
}

impl Record {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key)?.parse().ok()
    }

    pub fn parse(line: &str) -> Result<Record, String> {
        let mut t = None;
        let mut n = None;
        let mut cat = None;
        let mut fields = Vec::new();
        for tok in line.split(' ').filter(|s| !s.is_empty()) {
            let (k, v) = tok.split_once('=').ok_or_else(|| format!("token '{tok}' is not key=value"))?;
            match k {
                "t" if t.is_none() => t = Some(v.parse::<u64>().map_err(|_| format!("bad time '{v}'"))?),
                "n" if n.is_none() => n = Some(v.parse::<u64>().map_err(|_| format!("bad seq '{v}'"))?),
                "cat" if cat.is_none() => {
                    cat = Some(Category::parse(v).ok_or_else(|| format!("unknown category '{v}'"))?)
                }
                _ => fields.push((k.to_string(), v.to_string())),
            }
        }
        Ok(Record { t: t.ok_or("missing t")?, n: n.ok_or("missing n")?, cat: cat.ok_or("missing cat")?, fields })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emit_parse_roundtrip() {
        let mut tr = Trace::new(true);
        trace!(tr, 5, Category::Packet, "ev=send src={} dst={}", 1, 2);
        trace!(tr, 7, Category::Fault, "kind=link_fault");
        assert_eq!(tr.lines()[0], "t=5 n=0 cat=packet ev=send src=1 dst=2");
        let r = Record::parse(&tr.lines()[1]).unwrap();
        assert_eq!((r.t, r.n, r.cat, r.get("kind")), (7, 1, Category::Fault, Some("link_fault")));
        assert!(Record::parse("t=1 cat=packet").is_err());
        assert!(Record::parse("t=x n=0 cat=packet").is_err());
    }

    #[test]
    fn hash_independent_of_retention() {
        let mut a = Trace::new(true);
        let mut b = Trace::new(false);
        for tr in [&mut a, &mut b] {
            trace!(tr, 1, Category::App, "x=1");
        }
        assert_eq!(a.hash(), b.hash());
        assert!(b.lines().is_empty());
    }
}
