//! Fault spec grammar.
//!
//! ```text
//! seed=42
//! kind=link_kill    where=link(0,+x) when=at 50000
//! kind=link_drop    where=link(3,-y) when=window 1000..9000 prob=0.1 stream=7
//! kind=link_degrade where=link(1,+z) when=at 0 factor=4
//! kind=tile_kill_host where=tile(5) when=at 20000
//! kind=critical_event where=tile(2) when=periodic 0,100000 code=17
//! ```
//!
//! Probes (`link_drop`, `link_corrupt`) need `prob` in [0,1] and accept
//! `at T` (active from T on) or `window T1..T2` (inclusive). Every other kind
//! is instantaneous and accepts `at` or `periodic START,INTERVAL`. `stream`
//! defaults to the clause index. Printing yields the canonical form, which
//! parses back to an equal spec.

use std::fmt;

use crate::specfmt::{self, Clause, SpecError};
use crate::topology::{Direction, LinkId, Rank, TorusGeometry};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaultKind {
    LinkDrop,
    LinkCorrupt,
    LinkKill,
    LinkDegrade(u32),
    TileKillHost,
    TileKillDnp,
    CriticalEvent(u16),
}

impl FaultKind {
    pub fn name(&self) -> &'static str {
        match self {
            FaultKind::LinkDrop => "link_drop",
            FaultKind::LinkCorrupt => "link_corrupt",
            FaultKind::LinkKill => "link_kill",
            FaultKind::LinkDegrade(_) => "link_degrade",
            FaultKind::TileKillHost => "tile_kill_host",
            FaultKind::TileKillDnp => "tile_kill_dnp",
            FaultKind::CriticalEvent(_) => "critical_event",
        }
    }

    pub fn is_probe(&self) -> bool {
        matches!(self, FaultKind::LinkDrop | FaultKind::LinkCorrupt)
    }

    fn wants_link(&self) -> bool {
        matches!(self, FaultKind::LinkDrop | FaultKind::LinkCorrupt | FaultKind::LinkKill | FaultKind::LinkDegrade(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Link(LinkId),
    Tile(Rank),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Link(l) => write!(f, "link({},{})", l.src, l.dir),
            Target::Tile(r) => write!(f, "tile({r})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum When {
    At(u64),
    Window(u64, u64),
    Periodic { start: u64, interval: u64 },
}

impl When {
    /// Whether a probe clause covers cycle `t`.
    pub fn covers(&self, t: u64) -> bool {
        match *self {
            When::At(s) => t >= s,
            When::Window(a, b) => a <= t && t <= b,
            When::Periodic { .. } => false,
        }
    }
}

impl fmt::Display for When {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            When::At(t) => write!(f, "at {t}"),
            When::Window(a, b) => write!(f, "window {a}..{b}"),
            When::Periodic { start, interval } => write!(f, "periodic {start},{interval}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultClause {
    pub kind: FaultKind,
    pub target: Target,
    pub when: When,
    pub prob: Option<f64>,
    pub stream_key: u64,
    /// Source line, for diagnostics. Not part of equality-relevant content.
    pub line: usize,
}

impl FaultClause {
    pub fn link(&self) -> Option<LinkId> {
        match self.target {
            Target::Link(l) => Some(l),
            Target::Tile(_) => None,
        }
    }

    pub fn tile(&self) -> Option<Rank> {
        match self.target {
            Target::Tile(r) => Some(r),
            Target::Link(_) => None,
        }
    }

    fn same_content(&self, other: &FaultClause) -> bool {
        self.kind == other.kind
            && self.target == other.target
            && self.when == other.when
            && self.prob == other.prob
            && self.stream_key == other.stream_key
    }
}

impl fmt::Display for FaultClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kind={} where={} when={}", self.kind.name(), self.target, self.when)?;
        match self.kind {
            FaultKind::LinkDegrade(x) => write!(f, " factor={x}")?,
            FaultKind::CriticalEvent(c) => write!(f, " code={c}")?,
            _ => {}
        }
        if let Some(p) = self.prob {
            write!(f, " prob={p}")?;
        }
        write!(f, " stream={}", self.stream_key)
    }
}

#[derive(Clone, Debug, Default)]
pub struct FaultSpec {
    pub seed: Option<u64>,
    pub clauses: Vec<FaultClause>,
}

impl PartialEq for FaultSpec {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.clauses.len() == other.clauses.len()
            && self.clauses.iter().zip(&other.clauses).all(|(a, b)| a.same_content(b))
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = self.seed {
            writeln!(f, "seed={s}")?;
        }
        for c in &self.clauses {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

fn parse_target(c: &Clause) -> Result<Target, SpecError> {
    let f = c.require("where")?;
    let (name, args) = specfmt::call_args(c.line, f, &f.value)?;
    let bad = || SpecError::parse(c.line, f.col, format!("bad target '{}': expected link(R,DIR) or tile(R)", f.value));
    match (name.as_str(), args.as_slice()) {
        ("tile", [(k, r)]) if k.is_empty() => Ok(Target::Tile(Rank(specfmt::parse_u64(c.line, f, r)? as u32))),
        ("link", [(k1, r), (k2, d)]) if k1.is_empty() && k2.is_empty() => {
            let rank = Rank(specfmt::parse_u64(c.line, f, r)? as u32);
            let dir: Direction =
                d.parse().map_err(|_| SpecError::parse(c.line, f.col, format!("bad direction '{d}'")))?;
            Ok(Target::Link(LinkId::new(rank, dir)))
        }
        _ => Err(bad()),
    }
}

fn parse_when(c: &Clause) -> Result<When, SpecError> {
    let f = c.require("when")?;
    let mut words = f.value.splitn(2, ' ');
    let mode = words.next().unwrap_or("");
    let rest = words.next().unwrap_or("").replace(' ', "");
    match mode {
        "at" => Ok(When::At(specfmt::parse_u64(c.line, f, &rest)?)),
        "window" => {
            let (a, b) = rest.split_once("..").ok_or_else(|| SpecError::parse(c.line, f.col, "window needs T1..T2"))?;
            Ok(When::Window(specfmt::parse_u64(c.line, f, a)?, specfmt::parse_u64(c.line, f, b)?))
        }
        "periodic" => {
            let (a, b) =
                rest.split_once(',').ok_or_else(|| SpecError::parse(c.line, f.col, "periodic needs START,INTERVAL"))?;
            Ok(When::Periodic { start: specfmt::parse_u64(c.line, f, a)?, interval: specfmt::parse_u64(c.line, f, b)? })
        }
        other => Err(SpecError::parse(c.line, f.col, format!("unknown timing '{other}'"))),
    }
}

fn parse_clause(c: &Clause, index: usize) -> Result<FaultClause, SpecError> {
    c.only(&["kind", "where", "when", "prob", "stream", "factor", "code"])?;
    let kf = c.require("kind")?;
    let number = |key: &str| -> Result<Option<u64>, SpecError> {
        c.get(key).map(|f| specfmt::parse_u64(c.line, f, &f.value)).transpose()
    };
    let kind = match kf.value.as_str() {
        "link_drop" => FaultKind::LinkDrop,
        "link_corrupt" => FaultKind::LinkCorrupt,
        "link_kill" => FaultKind::LinkKill,
        "link_degrade" => {
            let x = number("factor")?.ok_or_else(|| SpecError::parse(c.line, kf.col, "link_degrade needs factor"))?;
            if x < 1 || x > u32::MAX as u64 {
                return Err(SpecError::semantic(c.line, format!("degrade factor {x} must be >= 1")));
            }
            FaultKind::LinkDegrade(x as u32)
        }
        "tile_kill_host" => FaultKind::TileKillHost,
        "tile_kill_dnp" => FaultKind::TileKillDnp,
        "critical_event" => {
            let x = number("code")?.ok_or_else(|| SpecError::parse(c.line, kf.col, "critical_event needs code"))?;
            if x > u16::MAX as u64 {
                return Err(SpecError::semantic(c.line, format!("event code {x} exceeds 65535")));
            }
            FaultKind::CriticalEvent(x as u16)
        }
        other => return Err(SpecError::parse(c.line, kf.col, format!("unknown fault kind '{other}'"))),
    };
    if c.get("factor").is_some() && !matches!(kind, FaultKind::LinkDegrade(_)) {
        return Err(SpecError::semantic(c.line, "factor only applies to link_degrade"));
    }
    if c.get("code").is_some() && !matches!(kind, FaultKind::CriticalEvent(_)) {
        return Err(SpecError::semantic(c.line, "code only applies to critical_event"));
    }
    let target = parse_target(c)?;
    match (kind.wants_link(), target) {
        (true, Target::Tile(_)) => return Err(SpecError::semantic(c.line, format!("{} targets a link", kind.name()))),
        (false, Target::Link(_)) => return Err(SpecError::semantic(c.line, format!("{} targets a tile", kind.name()))),
        _ => {}
    }
    let when = parse_when(c)?;
    let prob = match c.get("prob") {
        None => None,
        Some(f) => {
            let p: f64 = f
                .value
                .parse()
                .map_err(|_| SpecError::parse(c.line, f.col, format!("bad probability '{}'", f.value)))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(SpecError::semantic(c.line, format!("probability {p} outside [0,1]")));
            }
            Some(p)
        }
    };
    if kind.is_probe() {
        if prob.is_none() {
            return Err(SpecError::semantic(c.line, format!("{} needs prob", kind.name())));
        }
        if matches!(when, When::Periodic { .. }) {
            return Err(SpecError::semantic(c.line, "probes take 'at' or 'window' timing"));
        }
    } else {
        if prob.is_some() {
            return Err(SpecError::semantic(c.line, format!("prob does not apply to {}", kind.name())));
        }
        if matches!(when, When::Window(..)) {
            return Err(SpecError::semantic(
                c.line,
                format!("{} is instantaneous; use 'at' or 'periodic'", kind.name()),
            ));
        }
    }
    match when {
        When::Window(a, b) if a > b => {
            return Err(SpecError::semantic(c.line, format!("window start {a} after end {b}")));
        }
        When::Periodic { interval: 0, .. } => return Err(SpecError::semantic(c.line, "periodic interval must be > 0")),
        _ => {}
    }
    let stream_key = number("stream")?.unwrap_or(index as u64);
    Ok(FaultClause { kind, target, when, prob, stream_key, line: c.line })
}

pub fn parse_fault_spec(text: &str) -> Result<FaultSpec, SpecError> {
    let mut spec = FaultSpec::default();
    for c in specfmt::tokenize(text)? {
        if c.fields.len() == 1 && c.fields[0].key == "seed" {
            let f = &c.fields[0];
            if spec.seed.is_some() {
                return Err(SpecError::parse(c.line, f.col, "seed given twice"));
            }
            spec.seed = Some(specfmt::parse_u64(c.line, f, &f.value)?);
            continue;
        }
        let idx = spec.clauses.len();
        spec.clauses.push(parse_clause(&c, idx)?);
    }
    Ok(spec)
}

impl FaultSpec {
    /// Check every target against the torus shape.
    pub fn validate(&self, g: &TorusGeometry) -> Result<(), SpecError> {
        for c in &self.clauses {
            match c.target {
                Target::Tile(r) => {
                    if !g.contains(r) {
                        return Err(SpecError::semantic(c.line, format!("tile {r} does not exist in {g}")));
                    }
                }
                Target::Link(l) => {
                    if !g.contains(l.src) {
                        return Err(SpecError::semantic(c.line, format!("{l}: rank {} does not exist in {g}", l.src)));
                    }
                    if g.is_self_link(l) {
                        return Err(SpecError::semantic(c.line, format!("{l} is a self-link in {g}")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_kill() {
        let s = parse_fault_spec("kind=link_kill where=link(0,+x) when=at 50000").unwrap();
        assert_eq!(s.clauses.len(), 1);
        let c = &s.clauses[0];
        assert_eq!(c.kind, FaultKind::LinkKill);
        assert_eq!(c.target, Target::Link(LinkId::new(Rank(0), Direction::XPlus)));
        assert_eq!(c.when, When::At(50000));
        assert_eq!(c.to_string(), "kind=link_kill where=link(0,+x) when=at 50000 stream=0");
    }

    #[test]
    fn probability_range() {
        let e = parse_fault_spec("kind=link_drop where=link(0,+x) when=at 0 prob=1.5").unwrap_err();
        assert!(matches!(e, SpecError::Semantic { line: 1, .. }), "{e}");
    }

    #[test]
    fn unknown_key_rejected_with_column() {
        let e = parse_fault_spec("kind=link_kill where=link(0,+x) when=at 5 colour=red").unwrap_err();
        assert_eq!(e, SpecError::parse(1, 43, "unknown key 'colour'"));
    }

    #[test]
    fn topology_validation_names_the_target() {
        let g: TorusGeometry = "2x2x2".parse().unwrap();
        let s = parse_fault_spec("\nkind=tile_kill_host where=tile(9) when=at 5").unwrap();
        let e = s.validate(&g).unwrap_err();
        assert_eq!(e, SpecError::semantic(2, "tile 9 does not exist in 2x2x2"));
        let s = parse_fault_spec("kind=link_kill where=link(0,+z) when=at 5").unwrap();
        assert!(s.validate(&"2x2x1".parse().unwrap()).is_err());
    }

    #[test]
    fn timing_rules() {
        assert!(parse_fault_spec("kind=link_kill where=link(0,+x) when=window 1..5").is_err());
        assert!(parse_fault_spec("kind=link_drop where=link(0,+x) when=periodic 1,5 prob=0.5").is_err());
        assert!(parse_fault_spec("kind=link_drop where=link(0,+x) when=window 9..5 prob=0.5").is_err());
        let s = parse_fault_spec("kind=critical_event where=tile(1) when=periodic 10,100 code=3").unwrap();
        assert_eq!(s.clauses[0].when, When::Periodic { start: 10, interval: 100 });
    }

    #[test]
    fn window_coverage() {
        let w = When::Window(10, 20);
        assert!(!w.covers(9) && w.covers(10) && w.covers(20) && !w.covers(21));
        assert!(When::At(5).covers(1000));
    }
}
