//! Application and scenario spec grammar.
//!
//! ```text
//! app name=pipe critical=false spares=1
//! process app=pipe id=src behavior=source(count=100,start=0,step=1) weight=10
//! process app=pipe id=snk behavior=sink weight=1
//! channel app=pipe from=src to=snk capacity=4
//! state name=idle apps=
//! state name=run apps=pipe
//! initial state=idle
//! transition from=idle event=start(pipe) to=run
//! trigger at=1000 event=start(pipe)
//! ```
//!
//! A process's input ports are its incoming channels in declaration order,
//! and likewise for outputs. Without any `state` line the scenario is a
//! single state running every app from t=0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::specfmt::{call_args, parse_u64, tokenize_headed, Clause, Field, SpecError};

pub const DEFAULT_CAPACITY: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum BehaviorSpec {
    Source {
        count: u64,
        start: u64,
        step: u64,
    },
    Identity,
    Affine {
        mul: u64,
        add: u64,
    },
    Lookup {
        table: Vec<u64>,
    },
    Fork,
    Merge,
    Sink,
    Dpsnn {
        part: u32,
        of: u32,
        neurons: u32,
        synapses: u32,
        ms: u32,
        seed: u64,
    },
    RasterSink,
    /// Replica comparator, inserted by redundant deployment only.
    Comparator,
}

impl BehaviorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BehaviorSpec::Source { .. } => "source",
            BehaviorSpec::Identity => "identity",
            BehaviorSpec::Affine { .. } => "affine",
            BehaviorSpec::Lookup { .. } => "lookup",
            BehaviorSpec::Fork => "fork",
            BehaviorSpec::Merge => "merge",
            BehaviorSpec::Sink => "sink",
            BehaviorSpec::Dpsnn { .. } => "dpsnn",
            BehaviorSpec::RasterSink => "raster_sink",
            BehaviorSpec::Comparator => "comparator",
        }
    }

    pub fn is_sink(&self) -> bool {
        matches!(self, BehaviorSpec::Sink | BehaviorSpec::RasterSink)
    }

    /// Allowed (inputs, outputs) port counts; `None` means any positive.
    fn arity(&self) -> (Option<usize>, Option<usize>) {
        match self {
            BehaviorSpec::Source { .. } => (Some(0), None),
            BehaviorSpec::Identity | BehaviorSpec::Affine { .. } | BehaviorSpec::Lookup { .. } | BehaviorSpec::Fork => {
                (Some(1), None)
            }
            BehaviorSpec::Merge => (None, Some(1)),
            BehaviorSpec::Sink | BehaviorSpec::RasterSink => (None, Some(0)),
            BehaviorSpec::Dpsnn { of, .. } => (Some(*of as usize - 1), None),
            BehaviorSpec::Comparator => (Some(2), Some(1)),
        }
    }

    fn parse(line: usize, f: &Field) -> Result<Self, SpecError> {
        let (name, args) = call_args(line, f, &f.value)?;
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for (k, v) in &args {
            if k.is_empty() || map.insert(k.as_str(), v.as_str()).is_some() {
                return Err(SpecError::parse(line, f.col, format!("bad argument list in '{}'", f.value)));
            }
        }
        let allowed: &[&str] = match name.as_str() {
            "source" => &["count", "start", "step"],
            "affine" => &["mul", "add"],
            "lookup" => &["table"],
            "dpsnn" => &["part", "of", "neurons", "synapses", "ms", "seed"],
            _ => &[],
        };
        if let Some(k) = map.keys().find(|k| !allowed.contains(k)) {
            return Err(SpecError::parse(line, f.col, format!("{name}: unknown argument '{k}'")));
        }
        let num = |k: &str, default: Option<u64>| -> Result<u64, SpecError> {
            match (map.get(k), default) {
                (Some(v), _) => parse_u64(line, f, v),
                (None, Some(d)) => Ok(d),
                (None, None) => Err(SpecError::parse(line, f.col, format!("{name}: missing argument '{k}'"))),
            }
        };
        let b = match name.as_str() {
            "source" => BehaviorSpec::Source {
                count: num("count", None)?,
                start: num("start", Some(0))?,
                step: num("step", Some(1))?,
            },
            "identity" => BehaviorSpec::Identity,
            "affine" => BehaviorSpec::Affine { mul: num("mul", Some(1))?, add: num("add", Some(0))? },
            "lookup" => {
                let raw = map
                    .get("table")
                    .ok_or_else(|| SpecError::parse(line, f.col, "lookup: missing argument 'table'"))?;
                let table = raw.split(':').map(|v| parse_u64(line, f, v)).collect::<Result<Vec<_>, _>>()?;
                BehaviorSpec::Lookup { table }
            }
            "fork" => BehaviorSpec::Fork,
            "merge" => BehaviorSpec::Merge,
            "sink" => BehaviorSpec::Sink,
            "raster_sink" => BehaviorSpec::RasterSink,
            "dpsnn" => {
                let b = BehaviorSpec::Dpsnn {
                    part: num("part", None)? as u32,
                    of: num("of", None)? as u32,
                    neurons: num("neurons", Some(1000))? as u32,
                    synapses: num("synapses", Some(100))? as u32,
                    ms: num("ms", Some(1000))? as u32,
                    seed: num("seed", Some(1))?,
                };
                if let BehaviorSpec::Dpsnn { part, of, .. } = b {
                    if of == 0 || part >= of {
                        return Err(SpecError::semantic(line, format!("dpsnn: partition {part} of {of}")));
                    }
                }
                b
            }
            other => return Err(SpecError::parse(line, f.col, format!("unknown behavior '{other}'"))),
        };
        if !args.is_empty()
            && !matches!(
                b,
                BehaviorSpec::Source { .. }
                    | BehaviorSpec::Affine { .. }
                    | BehaviorSpec::Lookup { .. }
                    | BehaviorSpec::Dpsnn { .. }
            )
        {
            return Err(SpecError::parse(line, f.col, format!("{name} takes no arguments")));
        }
        if let BehaviorSpec::Lookup { table } = &b {
            if table.is_empty() {
                return Err(SpecError::semantic(line, "lookup: empty table"));
            }
        }
        Ok(b)
    }
}

impl fmt::Display for BehaviorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BehaviorSpec::Source { count, start, step } => write!(f, "source(count={count},start={start},step={step})"),
            BehaviorSpec::Affine { mul, add } => write!(f, "affine(mul={mul},add={add})"),
            BehaviorSpec::Lookup { table } => {
                let t: Vec<String> = table.iter().map(|v| v.to_string()).collect();
                write!(f, "lookup(table={})", t.join(":"))
            }
            BehaviorSpec::Dpsnn { part, of, neurons, synapses, ms, seed } => {
                write!(f, "dpsnn(part={part},of={of},neurons={neurons},synapses={synapses},ms={ms},seed={seed})")
            }
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessSpec {
    pub id: String,
    pub behavior: BehaviorSpec,
    pub weight: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelSpec {
    pub from: String,
    pub to: String,
    /// Declared capacity; 0 runs as 1.
    pub capacity: usize,
}

impl ChannelSpec {
    pub fn effective_capacity(&self) -> usize {
        self.capacity.max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessNetwork {
    pub name: String,
    pub critical: bool,
    pub spares: usize,
    pub processes: Vec<ProcessSpec>,
    pub channels: Vec<ChannelSpec>,
}

impl ProcessNetwork {
    pub fn new(name: &str) -> Self {
        ProcessNetwork { name: name.into(), critical: false, spares: 0, processes: Vec::new(), channels: Vec::new() }
    }

    pub fn process(&self, id: &str) -> Option<&ProcessSpec> {
        self.processes.iter().find(|p| p.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.processes.iter().position(|p| p.id == id)
    }

    pub fn inputs(&self, id: &str) -> Vec<usize> {
        (0..self.channels.len()).filter(|&c| self.channels[c].to == id).collect()
    }

    pub fn outputs(&self, id: &str) -> Vec<usize> {
        (0..self.channels.len()).filter(|&c| self.channels[c].from == id).collect()
    }

    pub fn total_weight(&self) -> u64 {
        self.processes.iter().map(|p| p.weight).sum()
    }

    /// Structural checks shared by the parser and programmatic builders.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for p in &self.processes {
            if !seen.insert(p.id.as_str()) {
                return Err(format!("app {}: duplicate process id '{}'", self.name, p.id));
            }
        }
        for c in &self.channels {
            for end in [&c.from, &c.to] {
                if self.process(end).is_none() {
                    return Err(format!("app {}: channel endpoint '{end}' is not a process", self.name));
                }
            }
            if c.from == c.to {
                return Err(format!("app {}: channel {} -> {} is a self loop", self.name, c.from, c.to));
            }
        }
        for p in &self.processes {
            let (ins, outs) = (self.inputs(&p.id).len(), self.outputs(&p.id).len());
            let (want_in, want_out) = p.behavior.arity();
            let ok_in = want_in.map_or(ins > 0, |n| n == ins);
            let ok_out = want_out.map_or(outs > 0, |n| n == outs);
            if !ok_in || !ok_out {
                return Err(format!(
                    "app {}: process '{}' ({}) has {ins} inputs and {outs} outputs",
                    self.name,
                    p.id,
                    p.behavior.name()
                ));
            }
        }
        if let Some(cycle) = self.zero_capacity_cycle() {
            return Err(format!("app {}: zero-capacity cycle through {}", self.name, cycle.join(" -> ")));
        }
        Ok(())
    }

    /// A cycle made only of zero-capacity channels can never make progress.
    fn zero_capacity_cycle(&self) -> Option<Vec<String>> {
        let edges: Vec<(&str, &str)> =
            self.channels.iter().filter(|c| c.capacity == 0).map(|c| (c.from.as_str(), c.to.as_str())).collect();
        fn visit<'a>(
            n: &'a str,
            edges: &[(&'a str, &'a str)],
            state: &mut BTreeMap<&'a str, u8>,
            path: &mut Vec<&'a str>,
        ) -> Option<Vec<String>> {
            match state.get(n) {
                Some(1) => {
                    let start = path.iter().position(|p| *p == n).unwrap_or(0);
                    let mut cyc: Vec<String> = path[start..].iter().map(|s| s.to_string()).collect();
                    cyc.push(n.to_string());
                    return Some(cyc);
                }
                Some(2) => return None,
                _ => {}
            }
            state.insert(n, 1);
            path.push(n);
            for (a, b) in edges {
                if *a == n {
                    if let Some(c) = visit(b, edges, state, path) {
                        return Some(c);
                    }
                }
            }
            path.pop();
            state.insert(n, 2);
            None
        }
        let mut state = BTreeMap::new();
        for p in &self.processes {
            let mut path = Vec::new();
            if let Some(c) = visit(&p.id, &edges, &mut state, &mut path) {
                return Some(c);
            }
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FsmEvent {
    Start(String),
    Stop(String),
    Fail(String),
    /// Freeze an app between firings; not a scenario transition.
    Pause(String),
    Resume(String),
}

impl FsmEvent {
    pub fn app(&self) -> &str {
        match self {
            FsmEvent::Start(a) | FsmEvent::Stop(a) | FsmEvent::Fail(a) | FsmEvent::Pause(a) | FsmEvent::Resume(a) => a,
        }
    }

    fn parse(line: usize, f: &Field) -> Result<Self, SpecError> {
        let (name, args) = call_args(line, f, &f.value)?;
        let app = match args.as_slice() {
            [(k, v)] if k.is_empty() && !v.is_empty() => v.clone(),
            _ => return Err(SpecError::parse(line, f.col, format!("event '{}': expected name(app)", f.value))),
        };
        match name.as_str() {
            "start" => Ok(FsmEvent::Start(app)),
            "stop" => Ok(FsmEvent::Stop(app)),
            "fail" => Ok(FsmEvent::Fail(app)),
            "pause" => Ok(FsmEvent::Pause(app)),
            "resume" => Ok(FsmEvent::Resume(app)),
            other => Err(SpecError::parse(line, f.col, format!("unknown event '{other}'"))),
        }
    }
}

impl fmt::Display for FsmEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FsmEvent::Start(a) => write!(f, "start({a})"),
            FsmEvent::Stop(a) => write!(f, "stop({a})"),
            FsmEvent::Fail(a) => write!(f, "fail({a})"),
            FsmEvent::Pause(a) => write!(f, "pause({a})"),
            FsmEvent::Resume(a) => write!(f, "resume({a})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioFsm {
    pub states: BTreeMap<String, BTreeSet<String>>,
    pub transitions: BTreeMap<(String, FsmEvent), String>,
    pub initial: String,
}

impl ScenarioFsm {
    pub fn next(&self, from: &str, ev: &FsmEvent) -> Option<&str> {
        self.transitions.get(&(from.to_string(), ev.clone())).map(String::as_str)
    }

    pub fn apps_in(&self, state: &str) -> &BTreeSet<String> {
        &self.states[state]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trigger {
    pub at: u64,
    pub event: FsmEvent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppSpec {
    pub apps: Vec<ProcessNetwork>,
    pub fsm: ScenarioFsm,
    pub triggers: Vec<Trigger>,
}

impl AppSpec {
    /// Apps that all run from the start, with no scenario.
    pub fn from_apps(apps: Vec<ProcessNetwork>) -> Self {
        let all: BTreeSet<String> = apps.iter().map(|a| a.name.clone()).collect();
        let fsm = ScenarioFsm {
            states: BTreeMap::from([("all".to_string(), all)]),
            transitions: BTreeMap::new(),
            initial: "all".into(),
        };
        AppSpec { apps, fsm, triggers: Vec::new() }
    }

    pub fn app(&self, name: &str) -> Option<&ProcessNetwork> {
        self.apps.iter().find(|a| a.name == name)
    }
}

fn parse_bool(line: usize, f: &Field) -> Result<bool, SpecError> {
    match f.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        v => Err(SpecError::parse(line, f.col, format!("'{}': expected true or false, found '{v}'", f.key))),
    }
}

fn ident(line: usize, f: &Field) -> Result<String, SpecError> {
    let v = f.value.trim();
    let ok = !v.is_empty() && v.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
    if ok {
        Ok(v.to_string())
    } else {
        Err(SpecError::parse(line, f.col, format!("'{}': bad name '{v}'", f.key)))
    }
}

fn app_of<'a>(apps: &'a mut [ProcessNetwork], c: &Clause) -> Result<&'a mut ProcessNetwork, SpecError> {
    let f = c.require("app")?;
    apps.iter_mut()
        .find(|a| a.name == f.value)
        .ok_or_else(|| SpecError::semantic(c.line, format!("unknown app '{}'", f.value)))
}

pub fn parse_app_spec(text: &str) -> Result<AppSpec, SpecError> {
    let mut apps: Vec<ProcessNetwork> = Vec::new();
    let mut states: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut state_lines: BTreeMap<String, usize> = BTreeMap::new();
    let mut transitions: Vec<(usize, String, FsmEvent, String)> = Vec::new();
    let mut initial: Option<(usize, String)> = None;
    let mut triggers = Vec::new();
    let mut proc_lines: BTreeMap<(String, String), usize> = BTreeMap::new();

    for c in tokenize_headed(text)? {
        let head = &c.fields[0];
        let rest = Clause { line: c.line, fields: c.fields[1..].to_vec() };
        match head.key.as_str() {
            "app" => {
                rest.only(&["name", "critical", "spares"])?;
                let name = ident(c.line, rest.require("name")?)?;
                if apps.iter().any(|a| a.name == name) {
                    return Err(SpecError::parse(c.line, rest.require("name")?.col, format!("duplicate app '{name}'")));
                }
                let mut a = ProcessNetwork::new(&name);
                if let Some(f) = rest.get("critical") {
                    a.critical = parse_bool(c.line, f)?;
                }
                if let Some(f) = rest.get("spares") {
                    a.spares = parse_u64(c.line, f, &f.value)? as usize;
                }
                apps.push(a);
            }
            "process" => {
                rest.only(&["app", "id", "behavior", "weight"])?;
                let idf = rest.require("id")?;
                let id = ident(c.line, idf)?;
                let behavior = BehaviorSpec::parse(c.line, rest.require("behavior")?)?;
                let weight = match rest.get("weight") {
                    Some(f) => parse_u64(c.line, f, &f.value)?,
                    None => 1,
                };
                if weight == 0 {
                    return Err(SpecError::semantic(c.line, format!("process '{id}': weight must be positive")));
                }
                let app = app_of(&mut apps, &rest)?;
                if app.process(&id).is_some() {
                    return Err(SpecError::parse(c.line, idf.col, format!("duplicate process id '{id}'")));
                }
                proc_lines.insert((app.name.clone(), id.clone()), c.line);
                app.processes.push(ProcessSpec { id, behavior, weight });
            }
            "channel" => {
                rest.only(&["app", "from", "to", "capacity"])?;
                let from = ident(c.line, rest.require("from")?)?;
                let to = ident(c.line, rest.require("to")?)?;
                let capacity = match rest.get("capacity") {
                    Some(f) => parse_u64(c.line, f, &f.value)? as usize,
                    None => DEFAULT_CAPACITY,
                };
                let app = app_of(&mut apps, &rest)?;
                for end in [&from, &to] {
                    if app.process(end).is_none() {
                        return Err(SpecError::semantic(c.line, format!("app {}: unknown process '{end}'", app.name)));
                    }
                }
                app.channels.push(ChannelSpec { from, to, capacity });
            }
            "state" => {
                rest.only(&["name", "apps"])?;
                let name = ident(c.line, rest.require("name")?)?;
                let members: BTreeSet<String> = rest
                    .require("apps")?
                    .value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
                if states.insert(name.clone(), members).is_some() {
                    return Err(SpecError::parse(
                        c.line,
                        rest.require("name")?.col,
                        format!("duplicate state '{name}'"),
                    ));
                }
                state_lines.insert(name, c.line);
            }
            "initial" => {
                rest.only(&["state"])?;
                if initial.is_some() {
                    return Err(SpecError::parse(c.line, head.col, "duplicate initial state"));
                }
                initial = Some((c.line, ident(c.line, rest.require("state")?)?));
            }
            "transition" => {
                rest.only(&["from", "event", "to"])?;
                let from = ident(c.line, rest.require("from")?)?;
                let ev = FsmEvent::parse(c.line, rest.require("event")?)?;
                if matches!(ev, FsmEvent::Pause(_) | FsmEvent::Resume(_)) {
                    return Err(SpecError::semantic(c.line, format!("{ev} is a command, not a transition event")));
                }
                let to = ident(c.line, rest.require("to")?)?;
                transitions.push((c.line, from, ev, to));
            }
            "trigger" => {
                rest.only(&["at", "event"])?;
                let f = rest.require("at")?;
                let at = parse_u64(c.line, f, &f.value)?;
                let event = FsmEvent::parse(c.line, rest.require("event")?)?;
                triggers.push((c.line, Trigger { at, event }));
            }
            other => return Err(SpecError::parse(c.line, head.col, format!("unknown clause '{other}'"))),
        }
    }

    for a in &apps {
        a.validate().map_err(|msg| {
            let line =
                a.processes.first().and_then(|p| proc_lines.get(&(a.name.clone(), p.id.clone()))).copied().unwrap_or(1);
            SpecError::semantic(line, msg)
        })?;
    }

    let fsm = if states.is_empty() {
        if !transitions.is_empty() || initial.is_some() {
            let line = transitions.first().map(|t| t.0).or(initial.as_ref().map(|i| i.0)).unwrap_or(1);
            return Err(SpecError::semantic(line, "transitions need declared states"));
        }
        let all: BTreeSet<String> = apps.iter().map(|a| a.name.clone()).collect();
        ScenarioFsm {
            states: BTreeMap::from([("all".to_string(), all)]),
            transitions: BTreeMap::new(),
            initial: "all".into(),
        }
    } else {
        for (name, members) in &states {
            if let Some(m) = members.iter().find(|m| !apps.iter().any(|a| &a.name == *m)) {
                return Err(SpecError::semantic(state_lines[name], format!("state {name}: unknown app '{m}'")));
            }
        }
        let (iline, init) = initial.ok_or_else(|| SpecError::semantic(1, "missing 'initial state=...'"))?;
        if !states.contains_key(&init) {
            return Err(SpecError::semantic(iline, format!("unknown initial state '{init}'")));
        }
        let mut map = BTreeMap::new();
        for (line, from, ev, to) in transitions {
            for s in [&from, &to] {
                if !states.contains_key(s) {
                    return Err(SpecError::semantic(line, format!("unknown state '{s}'")));
                }
            }
            if !apps.iter().any(|a| a.name == ev.app()) {
                return Err(SpecError::semantic(line, format!("event {ev}: unknown app")));
            }
            if map.insert((from.clone(), ev.clone()), to).is_some() {
                return Err(SpecError::semantic(line, format!("duplicate transition from {from} on {ev}")));
            }
        }
        ScenarioFsm { states, transitions: map, initial: init }
    };
    let mut out = Vec::new();
    for (line, t) in triggers {
        if !apps.iter().any(|a| a.name == t.event.app()) {
            return Err(SpecError::semantic(line, format!("trigger {}: unknown app", t.event)));
        }
        out.push(t);
    }
    Ok(AppSpec { apps, fsm, triggers: out })
}

impl fmt::Display for AppSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.apps {
            writeln!(f, "app name={} critical={} spares={}", a.name, a.critical, a.spares)?;
            for p in &a.processes {
                writeln!(f, "process app={} id={} behavior={} weight={}", a.name, p.id, p.behavior, p.weight)?;
            }
            for c in &a.channels {
                writeln!(f, "channel app={} from={} to={} capacity={}", a.name, c.from, c.to, c.capacity)?;
            }
        }
        for (name, apps) in &self.fsm.states {
            let list: Vec<&str> = apps.iter().map(String::as_str).collect();
            writeln!(f, "state name={name} apps={}", list.join(","))?;
        }
        writeln!(f, "initial state={}", self.fsm.initial)?;
        for ((from, ev), to) in &self.fsm.transitions {
            writeln!(f, "transition from={from} event={ev} to={to}")?;
        }
        for t in &self.triggers {
            writeln!(f, "trigger at={} event={}", t.at, t.event)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PIPE: &str = "\
app name=pipe
process app=pipe id=producer behavior=source(count=100) weight=4
process app=pipe id=filter behavior=identity weight=2
process app=pipe id=consumer behavior=sink
channel app=pipe from=producer to=filter
channel app=pipe from=filter to=consumer capacity=1
";

    #[test]
    fn minimal_pipeline() {
        let s = parse_app_spec(PIPE).unwrap();
        let a = &s.apps[0];
        assert_eq!(a.processes.len(), 3);
        assert_eq!(a.channels.len(), 2);
        assert_eq!(a.channels[0].capacity, DEFAULT_CAPACITY);
        assert_eq!(a.processes[0].behavior, BehaviorSpec::Source { count: 100, start: 0, step: 1 });
        assert_eq!(s.fsm.initial, "all");
    }

    #[test]
    fn two_apps_three_states() {
        let text = format!(
            "{PIPE}{}",
            "\
app name=b
process app=b id=s behavior=source(count=5)
process app=b id=k behavior=sink
channel app=b from=s to=k
state name=idle apps=
state name=A apps=pipe
state name=AB apps=pipe,b
initial state=idle
transition from=idle event=start(pipe) to=A
transition from=A event=start(b) to=AB
transition from=AB event=stop(b) to=A
trigger at=100 event=start(pipe)
"
        );
        let s = parse_app_spec(&text).unwrap();
        assert_eq!(s.fsm.states.len(), 3);
        assert_eq!(s.fsm.next("A", &FsmEvent::Start("b".into())), Some("AB"));
        assert_eq!(s.fsm.next("idle", &FsmEvent::Start("b".into())), None);
        let again = parse_app_spec(&s.to_string()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn duplicate_process_id_is_a_parse_error() {
        let text = format!("{PIPE}process app=pipe id=filter behavior=identity\n");
        assert!(matches!(parse_app_spec(&text), Err(SpecError::Parse { line: 7, .. })));
    }

    #[test]
    fn zero_capacity_cycle_rejected() {
        let text = "\
app name=loop
process app=loop id=a behavior=merge
process app=loop id=b behavior=fork
process app=loop id=s behavior=source(count=1)
process app=loop id=k behavior=sink
channel app=loop from=s to=a
channel app=loop from=b to=a capacity=0
channel app=loop from=a to=b capacity=0
channel app=loop from=b to=k
";
        let e = parse_app_spec(text).unwrap_err().to_string();
        assert!(e.contains("zero-capacity cycle"), "{e}");
        let ok = text.replace("from=b to=a capacity=0", "from=b to=a capacity=2");
        assert!(parse_app_spec(&ok).is_ok());
    }

    #[test]
    fn unknown_behavior_and_bad_arity() {
        let e = parse_app_spec("app name=x\nprocess app=x id=p behavior=teleport\n").unwrap_err();
        assert!(matches!(e, SpecError::Parse { line: 2, col: 20, .. }), "{e}");
        let e = parse_app_spec("app name=x\nprocess app=x id=p behavior=sink\n").unwrap_err();
        assert!(e.to_string().contains("0 inputs"), "{e}");
    }

    #[test]
    fn behavior_canonical_forms() {
        let text = "app name=x\nprocess app=x id=s behavior=source(count=3,step=2)\nprocess app=x id=l behavior=lookup(table=5:6:7)\nprocess app=x id=k behavior=sink\nchannel app=x from=s to=l\nchannel app=x from=l to=k\n";
        let s = parse_app_spec(text).unwrap();
        let printed = s.to_string();
        assert!(printed.contains("behavior=source(count=3,start=0,step=2)"));
        assert!(printed.contains("behavior=lookup(table=5:6:7)"));
        assert_eq!(parse_app_spec(&printed).unwrap(), s);
    }
}
