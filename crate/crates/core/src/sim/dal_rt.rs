//! Application runtime: process firing over bounded channels, the master's
//! control plane, the scenario FSM, and fault recovery.
//!
//! Channel traffic between tiles travels as tagged SENDs. Each message is
//! `[type u8][app u16][epoch u32][chan u32][seq u64][data]`; type 0 is an
//! item, 1 end-of-stream, 2 a cumulative credit. Control messages are
//! `[verb u8][cmd u64][app u16][epoch u32][tile u32]` on the service path.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use super::net::DAL_TAG;
use super::{Action, Category, Sim};
use crate::dal::{
    expand_critical, instantiate, map_network, map_redundant, remap, AppSpec, Behavior, Demand, Firing, FsmEvent, Item,
    MapContext, Mapping, ProcessNetwork, ScenarioFsm, Trigger,
};
use crate::dnp::{CompletionEvent, Owner, Side, TransferKind, TransferStatus};
use crate::engine::{EventClass, SimTime};
use crate::lofamo::{LocalFaultEvent, LocalFaultKind, ServiceBody, Writer};
use crate::topology::{Rank, TorusGeometry};
use crate::trace;

const MSG_ITEM: u8 = 0;
const MSG_EOS: u8 = 1;
const MSG_CREDIT: u8 = 2;
const MSG_HEADER: usize = 19;
const CONTROL_BYTES: usize = 19;
const MAX_TRIES: u32 = 16;
const RETRY_BACKOFF: u64 = 2_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AppState {
    Idle,
    Installing,
    Running,
    Stopping,
    Completed,
    Stopped,
    Failed,
}

impl AppState {
    pub fn name(self) -> &'static str {
        match self {
            AppState::Idle => "idle",
            AppState::Installing => "installing",
            AppState::Running => "running",
            AppState::Stopping => "stopping",
            AppState::Completed => "completed",
            AppState::Stopped => "stopped",
            AppState::Failed => "failed",
        }
    }

    fn active(self) -> bool {
        matches!(self, AppState::Installing | AppState::Running | AppState::Stopping)
    }
}

impl fmt::Display for AppState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Snapshot of one application.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppStatus {
    pub name: String,
    pub state: AppState,
    /// Deployment counter; 1 for the first deployment.
    pub epoch: u32,
    pub restarts: u32,
    pub mapping: Option<Mapping>,
    pub firings: u64,
    /// Watchdog intervals that passed without a firing.
    pub stalls: u32,
    pub lost_replicas: Vec<u8>,
    pub reason: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Verb {
    Install = 1,
    Start = 2,
    Stop = 3,
    Pause = 4,
    Resume = 5,
    Ack = 6,
}

impl Verb {
    fn from_u8(v: u8) -> Option<Verb> {
        Some(match v {
            1 => Verb::Install,
            2 => Verb::Start,
            3 => Verb::Stop,
            4 => Verb::Pause,
            5 => Verb::Resume,
            6 => Verb::Ack,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Verb::Install => "install",
            Verb::Start => "start",
            Verb::Stop => "stop",
            Verb::Pause => "pause",
            Verb::Resume => "resume",
            Verb::Ack => "ack",
        }
    }
}

struct Control {
    verb: Verb,
    cmd: u64,
    app: u16,
    epoch: u32,
    tile: Rank,
}

impl Control {
    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(CONTROL_BYTES);
        b.push(self.verb as u8);
        b.extend_from_slice(&self.cmd.to_le_bytes());
        b.extend_from_slice(&self.app.to_le_bytes());
        b.extend_from_slice(&self.epoch.to_le_bytes());
        b.extend_from_slice(&self.tile.0.to_le_bytes());
        b
    }

    fn decode(b: &[u8]) -> Option<Control> {
        if b.len() != CONTROL_BYTES {
            return None;
        }
        Some(Control {
            verb: Verb::from_u8(b[0])?,
            cmd: u64::from_le_bytes(b[1..9].try_into().ok()?),
            app: u16::from_le_bytes(b[9..11].try_into().ok()?),
            epoch: u32::from_le_bytes(b[11..15].try_into().ok()?),
            tile: Rank(u32::from_le_bytes(b[15..19].try_into().ok()?)),
        })
    }
}

struct Msg<'a> {
    ty: u8,
    app: usize,
    epoch: u32,
    chan: usize,
    seq: u64,
    data: &'a [u8],
}

fn encode_msg(ty: u8, app: usize, epoch: u32, chan: usize, seq: u64, data: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(MSG_HEADER + data.len());
    b.push(ty);
    b.extend_from_slice(&(app as u16).to_le_bytes());
    b.extend_from_slice(&epoch.to_le_bytes());
    b.extend_from_slice(&(chan as u32).to_le_bytes());
    b.extend_from_slice(&seq.to_le_bytes());
    b.extend_from_slice(data);
    b
}

fn decode_msg(b: &[u8]) -> Option<Msg<'_>> {
    if b.len() < MSG_HEADER || b[0] > MSG_CREDIT {
        return None;
    }
    Some(Msg {
        ty: b[0],
        app: u16::from_le_bytes(b[1..3].try_into().ok()?) as usize,
        epoch: u32::from_le_bytes(b[3..7].try_into().ok()?),
        chan: u32::from_le_bytes(b[7..11].try_into().ok()?) as usize,
        seq: u64::from_le_bytes(b[11..19].try_into().ok()?),
        data: &b[MSG_HEADER..],
    })
}

#[derive(Debug)]
pub(crate) enum DalAction {
    Trigger(usize),
    Deliver { tile: Rank, msg: Vec<u8> },
    FireDone { app: usize, epoch: u32, proc: usize },
    ControlTimeout { app: usize, epoch: u32, cmd: u64 },
    StopGrace { app: usize, epoch: u32 },
    Retry { src: Rank, dst: Rank, msg: Vec<u8>, tries: u32 },
    Watchdog,
}

struct Proc {
    tile: Rank,
    behavior: Box<dyn Behavior>,
    weight: u64,
    ins: Vec<usize>,
    outs: Vec<usize>,
    /// Replica index inside a critical deployment.
    replica: Option<u8>,
    installed: bool,
    running: bool,
    paused: bool,
    busy: bool,
    done: bool,
    dead: bool,
    pending: Option<Firing>,
}

impl Proc {
    fn settled(&self) -> bool {
        self.done || self.dead
    }
}

struct Chan {
    name: String,
    from: usize,
    to: usize,
    capacity: u64,
    sent: u64,
    acked: u64,
    eos_sent: bool,
    next: u64,
    reorder: BTreeMap<u64, Item>,
    queue: VecDeque<Item>,
    eos_at: Option<u64>,
    cut: bool,
    consumed: u64,
    log: Vec<Item>,
}

impl Chan {
    fn closed(&self) -> bool {
        self.cut || self.eos_at == Some(self.next)
    }

    fn live(&self) -> bool {
        !(self.closed() && self.queue.is_empty())
    }

    fn has_credit(&self) -> bool {
        self.sent - self.acked < self.capacity
    }
}

struct App {
    spec: ProcessNetwork,
    net: ProcessNetwork,
    replica_of: BTreeMap<String, (String, u8)>,
    state: AppState,
    epoch: u32,
    restarts: u32,
    mapping: Option<Mapping>,
    procs: Vec<Proc>,
    chans: Vec<Chan>,
    pending: BTreeMap<u64, (Rank, Verb)>,
    paused: bool,
    progress: u64,
    watched: u64,
    stalls: u32,
    lost_replicas: BTreeSet<u8>,
    reason: Option<String>,
}

impl App {
    fn load(&self) -> BTreeMap<Rank, u64> {
        let mut load = BTreeMap::new();
        if self.state.active() {
            for p in &self.procs {
                *load.entry(p.tile).or_default() += p.weight;
            }
        }
        load
    }

    fn sink_output(&self, sink: &str) -> Option<Vec<Item>> {
        let i = self.net.index_of(sink)?;
        self.procs.get(i)?.behavior.recorded().map(<[Item]>::to_vec)
    }
}

pub(crate) struct DalRuntime {
    fsm: ScenarioFsm,
    triggers: Vec<Trigger>,
    state: String,
    apps: Vec<App>,
    next_cmd: u64,
    seen_cmds: BTreeSet<(Rank, u64)>,
    /// Tiles that failed to acknowledge a command.
    suspect: BTreeSet<Rank>,
    inflight: BTreeMap<u64, (Rank, Rank, Vec<u8>, u32)>,
    fsm_violations: u32,
    /// start/stop commands with no matching transition, until the next one.
    overrides: BTreeMap<String, bool>,
}

impl DalRuntime {
    pub fn new(spec: AppSpec, geom: &TorusGeometry) -> Result<DalRuntime, String> {
        if spec.apps.len() > u16::MAX as usize {
            return Err("too many apps".into());
        }
        for a in &spec.apps {
            a.validate()?;
            for p in &a.processes {
                instantiate(&p.behavior, a.inputs(&p.id).len(), a.outputs(&p.id).len())
                    .map_err(|e| format!("app {}: process {}: {e}", a.name, p.id))?;
            }
            if a.critical && geom.tiles() < 2 {
                return Err(format!("app {}: critical apps need at least 2 tiles", a.name));
            }
        }
        let apps = spec
            .apps
            .iter()
            .map(|a| App {
                spec: a.clone(),
                net: a.clone(),
                replica_of: BTreeMap::new(),
                state: AppState::Idle,
                epoch: 0,
                restarts: 0,
                mapping: None,
                procs: Vec::new(),
                chans: Vec::new(),
                pending: BTreeMap::new(),
                paused: false,
                progress: 0,
                watched: 0,
                stalls: 0,
                lost_replicas: BTreeSet::new(),
                reason: None,
            })
            .collect();
        Ok(DalRuntime {
            state: spec.fsm.initial.clone(),
            fsm: spec.fsm,
            triggers: spec.triggers,
            apps,
            next_cmd: 0,
            seen_cmds: BTreeSet::new(),
            suspect: BTreeSet::new(),
            inflight: BTreeMap::new(),
            fsm_violations: 0,
            overrides: BTreeMap::new(),
        })
    }

    /// Whether `app` should be deployed right now.
    fn wanted(&self, app: &str) -> bool {
        self.overrides.get(app).copied().unwrap_or_else(|| self.fsm.apps_in(&self.state).contains(app))
    }

    fn app_index(&self, name: &str) -> Option<usize> {
        self.apps.iter().position(|a| a.spec.name == name)
    }

    fn status(&self, a: &App) -> AppStatus {
        AppStatus {
            name: a.spec.name.clone(),
            state: a.state,
            epoch: a.epoch,
            restarts: a.restarts,
            mapping: a.mapping.clone(),
            firings: a.progress,
            stalls: a.stalls,
            lost_replicas: a.lost_replicas.iter().copied().collect(),
            reason: a.reason.clone(),
        }
    }
}

impl Sim {
    fn rt(&mut self) -> &mut DalRuntime {
        self.dal.as_mut().expect("application runtime installed")
    }

    fn rt_ref(&self) -> &DalRuntime {
        self.dal.as_ref().expect("application runtime installed")
    }

    pub fn app_statuses(&self) -> Vec<AppStatus> {
        self.dal.as_ref().map_or_else(Vec::new, |d| d.apps.iter().map(|a| d.status(a)).collect())
    }

    pub fn app_status(&self, name: &str) -> Option<AppStatus> {
        let d = self.dal.as_ref()?;
        d.app_index(name).map(|i| d.status(&d.apps[i]))
    }

    /// The process network `app` was deployed from.
    pub fn app_spec(&self, app: &str) -> Option<&ProcessNetwork> {
        let d = self.dal.as_ref()?;
        Some(&d.apps[d.app_index(app)?].spec)
    }

    /// Items a sink of `app` has consumed so far.
    pub fn app_output(&self, app: &str, sink: &str) -> Option<Vec<Item>> {
        let d = self.dal.as_ref()?;
        d.apps[d.app_index(app)?].sink_output(sink)
    }

    /// Every sink's output, keyed by sink id.
    pub fn app_outputs(&self, app: &str) -> BTreeMap<String, Vec<Item>> {
        let Some(d) = self.dal.as_ref() else { return BTreeMap::new() };
        let Some(i) = d.app_index(app) else { return BTreeMap::new() };
        let a = &d.apps[i];
        a.net
            .processes
            .iter()
            .filter(|p| p.behavior.is_sink())
            .filter_map(|p| Some((p.id.clone(), a.sink_output(&p.id)?)))
            .collect()
    }

    /// Values consumed on every channel of the current deployment, keyed
    /// `from->to`.
    pub fn channel_streams(&self, app: &str) -> BTreeMap<String, Vec<Item>> {
        let Some(d) = self.dal.as_ref() else { return BTreeMap::new() };
        let Some(i) = d.app_index(app) else { return BTreeMap::new() };
        d.apps[i].chans.iter().map(|c| (c.name.clone(), c.log.clone())).collect()
    }

    pub fn fsm_state(&self) -> Option<&str> {
        self.dal.as_ref().map(|d| d.state.as_str())
    }

    /// Times the running set differed from the FSM state's set once a
    /// transition settled.
    pub fn fsm_violations(&self) -> u32 {
        self.dal.as_ref().map_or(0, |d| d.fsm_violations)
    }

    pub(super) fn start_dal(&mut self) {
        let n = self.rt().triggers.len();
        for i in 0..n {
            let at = self.rt().triggers[i].at;
            self.sched.schedule(SimTime(at), EventClass::Application, Action::Dal(DalAction::Trigger(i))).ok();
        }
        let iv = self.cfg.watchdog_interval;
        self.sched.schedule_in(iv, EventClass::Application, Action::Dal(DalAction::Watchdog));
        let now = self.now();
        let st = self.rt().state.clone();
        trace!(self.trace, now, Category::App, "ev=fsm state={st}");
        self.reconcile();
    }

    pub(super) fn on_dal(&mut self, a: DalAction) {
        match a {
            DalAction::Trigger(i) => {
                let ev = self.rt().triggers[i].event.clone();
                self.fsm_event(ev);
            }
            DalAction::Deliver { tile, msg } => self.dal_receive(tile, msg),
            DalAction::FireDone { app, epoch, proc } => self.fire_done(app, epoch, proc),
            DalAction::ControlTimeout { app, epoch, cmd } => self.control_timeout(app, epoch, cmd),
            DalAction::StopGrace { app, epoch } => {
                let now = self.now();
                let ap = &self.rt_ref().apps[app];
                if ap.epoch == epoch && ap.state == AppState::Stopping {
                    let name = ap.spec.name.clone();
                    trace!(self.trace, now, Category::App, "ev=stop_forced app={name} epoch={epoch}");
                    self.set_state(app, AppState::Stopped);
                }
            }
            DalAction::Retry { src, dst, msg, tries } => {
                let current = decode_msg(&msg).is_some_and(|m| {
                    let ap = &self.rt_ref().apps[m.app];
                    ap.epoch == m.epoch && ap.state.active()
                });
                if current {
                    self.dal_transmit(src, dst, msg, tries);
                }
            }
            DalAction::Watchdog => self.dal_watchdog(),
        }
    }

    fn fsm_event(&mut self, ev: FsmEvent) {
        let now = self.now();
        if let FsmEvent::Pause(name) | FsmEvent::Resume(name) = &ev {
            let Some(a) = self.rt().app_index(name) else { return };
            let verb = if matches!(ev, FsmEvent::Pause(_)) { Verb::Pause } else { Verb::Resume };
            let ap = &mut self.rt().apps[a];
            if !matches!(ap.state, AppState::Installing | AppState::Running) {
                trace!(self.trace, now, Category::App, "ev=fsm_ignored event={ev}");
                return;
            }
            ap.paused = verb == Verb::Pause;
            let tiles = ap.mapping.as_ref().map(Mapping::tiles).unwrap_or_default();
            trace!(self.trace, now, Category::App, "ev={} app={name}", verb.name());
            for t in tiles {
                self.issue(a, verb, t);
            }
            return;
        }
        let d = self.rt_ref();
        match d.fsm.next(&d.state, &ev).map(str::to_string) {
            Some(to) => {
                let from = std::mem::replace(&mut self.rt().state, to.clone());
                self.rt().overrides.clear();
                trace!(self.trace, now, Category::App, "ev=fsm from={from} event={ev} to={to}");
            }
            None => {
                let want = match &ev {
                    FsmEvent::Start(_) => true,
                    FsmEvent::Stop(_) => false,
                    _ => return trace!(self.trace, now, Category::App, "ev=fsm_ignored event={ev}"),
                };
                trace!(self.trace, now, Category::App, "ev=command event={ev}");
                self.rt().overrides.insert(ev.app().to_string(), want);
            }
        }
        self.reconcile();
    }

    /// Start apps the current state lists, stop the ones it does not, then
    /// check the running set.
    fn reconcile(&mut self) {
        let n = self.rt().apps.len();
        for a in 0..n {
            let d = self.rt_ref();
            let want = d.wanted(&d.apps[a].spec.name);
            match (want, d.apps[a].state) {
                (true, AppState::Idle | AppState::Stopped) => self.deploy(a, None),
                (false, AppState::Installing | AppState::Running) => self.stop_app(a),
                _ => {}
            }
        }
        let d = self.rt_ref();
        let bad: Vec<String> = d
            .apps
            .iter()
            .filter(|a| {
                let want = d.wanted(&a.spec.name);
                let running = matches!(a.state, AppState::Installing | AppState::Running);
                let parked = matches!(a.state, AppState::Idle | AppState::Stopped | AppState::Stopping);
                (running && !want) || (want && parked)
            })
            .map(|a| a.spec.name.clone())
            .collect();
        if !bad.is_empty() {
            let now = self.now();
            self.rt().fsm_violations += 1;
            trace!(self.trace, now, Category::App, "ev=fsm_violation apps={}", bad.join(","));
        }
    }

    fn set_state(&mut self, a: usize, s: AppState) {
        let now = self.now();
        let ap = &mut self.rt().apps[a];
        ap.state = s;
        let (name, epoch) = (ap.spec.name.clone(), ap.epoch);
        trace!(self.trace, now, Category::App, "ev=state app={name} state={s} epoch={epoch}");
        if s == AppState::Stopped {
            self.reconcile();
        }
    }

    fn fail_app(&mut self, a: usize, reason: String) {
        let ap = &mut self.rt().apps[a];
        ap.epoch += 1;
        ap.reason = Some(reason.clone());
        ap.pending.clear();
        let name = ap.spec.name.clone();
        let now = self.now();
        trace!(self.trace, now, Category::App, "ev=failed app={name} reason={}", reason.replace(' ', "_"));
        self.set_state(a, AppState::Failed);
        self.fsm_event(FsmEvent::Fail(name));
    }

    fn map_context_parts(&self, a: usize) -> (BTreeMap<Rank, u64>, BTreeSet<Rank>) {
        let d = self.rt_ref();
        let mut load = BTreeMap::new();
        let mut reserved = BTreeSet::new();
        for (_, o) in d.apps.iter().enumerate().filter(|(i, _)| *i != a) {
            for (t, w) in o.load() {
                *load.entry(t).or_default() += w;
            }
            if o.state.active() {
                reserved.extend(o.mapping.iter().flat_map(|m| m.spares.iter().copied()));
            }
        }
        (load, reserved)
    }

    /// Map and install app `a` under a new epoch. `failed` is the tile that
    /// caused a recovery, if any.
    fn deploy(&mut self, a: usize, failed: Option<Rank>) {
        let (load, reserved) = self.map_context_parts(a);
        let table = &self.tiles[self.hier.master().index()].table;
        let suspect = &self.rt_ref().suspect;
        let healthy = |r: Rank| table.tile_ok(r) && !suspect.contains(&r);
        let ctx = MapContext { geom: &self.geom, healthy: &healthy, load, reserved };
        let ap = &self.rt_ref().apps[a];
        let (net, replica_of, mapped) = if ap.spec.critical {
            let exp = expand_critical(&ap.spec);
            let m = map_redundant(&exp, &ctx);
            (exp.net, exp.replica_of, m)
        } else {
            let m = match (&ap.mapping, failed) {
                (Some(old), Some(_)) => remap(&ap.spec, old, &ctx),
                _ => map_network(&ap.spec, &ctx),
            };
            (ap.spec.clone(), BTreeMap::new(), m)
        };
        let mapping = match mapped {
            Ok(m) => m,
            Err(e) => return self.fail_app(a, e.to_string()),
        };
        let procs = net
            .processes
            .iter()
            .map(|p| {
                let ins = net.inputs(&p.id);
                let outs = net.outputs(&p.id);
                Proc {
                    tile: mapping.placement[&p.id],
                    behavior: instantiate(&p.behavior, ins.len(), outs.len()).expect("validated at install"),
                    weight: p.weight,
                    ins,
                    outs,
                    replica: replica_of.get(&p.id).map(|r| r.1),
                    installed: false,
                    running: false,
                    paused: false,
                    busy: false,
                    done: false,
                    dead: false,
                    pending: None,
                }
            })
            .collect();
        let chans = net
            .channels
            .iter()
            .map(|c| Chan {
                name: format!("{}->{}", c.from, c.to),
                from: net.index_of(&c.from).expect("validated"),
                to: net.index_of(&c.to).expect("validated"),
                capacity: c.effective_capacity() as u64,
                sent: 0,
                acked: 0,
                eos_sent: false,
                next: 0,
                reorder: BTreeMap::new(),
                queue: VecDeque::new(),
                eos_at: None,
                cut: false,
                consumed: 0,
                log: Vec::new(),
            })
            .collect();
        let ap = &mut self.rt().apps[a];
        if failed.is_some() {
            ap.restarts += 1;
        }
        ap.epoch += 1;
        ap.net = net;
        ap.replica_of = replica_of;
        ap.procs = procs;
        ap.chans = chans;
        ap.pending.clear();
        ap.paused = false;
        ap.lost_replicas.clear();
        ap.reason = None;
        let tiles = mapping.tiles();
        let place: Vec<String> = mapping.placement.iter().map(|(p, t)| format!("{p}@{t}")).collect();
        let spares: Vec<String> = mapping.spares.iter().map(Rank::to_string).collect();
        ap.mapping = Some(mapping);
        let (name, epoch) = (ap.spec.name.clone(), ap.epoch);
        let now = self.now();
        trace!(
            self.trace,
            now,
            Category::App,
            "ev=mapped app={name} epoch={epoch} placement={} spares={}",
            place.join(","),
            if spares.is_empty() { "-".to_string() } else { spares.join(",") }
        );
        self.set_state(a, AppState::Installing);
        for t in tiles {
            self.issue(a, Verb::Install, t);
        }
    }

    fn stop_app(&mut self, a: usize) {
        let ap = &mut self.rt().apps[a];
        if ap.state == AppState::Installing {
            ap.epoch += 1;
            ap.pending.clear();
            return self.set_state(a, AppState::Stopped);
        }
        let tiles = ap.mapping.as_ref().map(Mapping::tiles).unwrap_or_default();
        let epoch = ap.epoch;
        self.set_state(a, AppState::Stopping);
        for t in tiles {
            self.issue(a, Verb::Stop, t);
        }
        let grace = self.cfg.stop_grace;
        self.sched.schedule_in(grace, EventClass::Application, Action::Dal(DalAction::StopGrace { app: a, epoch }));
    }

    fn issue(&mut self, a: usize, verb: Verb, tile: Rank) {
        let d = self.rt();
        let cmd = d.next_cmd;
        d.next_cmd += 1;
        let ap = &mut d.apps[a];
        ap.pending.insert(cmd, (tile, verb));
        let epoch = ap.epoch;
        let name = ap.spec.name.clone();
        let now = self.now();
        trace!(
            self.trace,
            now,
            Category::Control,
            "ev=cmd verb={} app={name} epoch={epoch} tile={tile} cmd={cmd}",
            verb.name()
        );
        let c = Control { verb, cmd, app: a as u16, epoch, tile };
        let master = self.hier.master();
        self.send_service(master, tile, ServiceBody::Control(c.encode()));
        let to = self.cfg.control_timeout;
        self.sched.schedule_in(
            to,
            EventClass::Application,
            Action::Dal(DalAction::ControlTimeout { app: a, epoch, cmd }),
        );
    }

    pub(crate) fn on_control(&mut self, at: Rank, _side: Writer, bytes: &[u8]) {
        let Some(c) = Control::decode(bytes) else { return };
        if self.dal.is_none() || c.app as usize >= self.rt().apps.len() {
            return;
        }
        let a = c.app as usize;
        let now = self.now();
        if c.verb == Verb::Ack {
            let ap = &mut self.dal.as_mut().expect("runtime").apps[a];
            if ap.epoch != c.epoch {
                return;
            }
            let Some((tile, verb)) = ap.pending.remove(&c.cmd) else { return };
            let install_done = verb == Verb::Install && !ap.pending.values().any(|p| p.1 == Verb::Install);
            let name = ap.spec.name.clone();
            trace!(
                self.trace,
                now,
                Category::Control,
                "ev=ack verb={} app={name} tile={tile} cmd={}",
                verb.name(),
                c.cmd
            );
            if install_done && ap.state == AppState::Installing {
                let tiles = ap.mapping.as_ref().map(Mapping::tiles).unwrap_or_default();
                self.set_state(a, AppState::Running);
                for t in tiles {
                    self.issue(a, Verb::Start, t);
                }
            }
            return;
        }
        if !self.rt().seen_cmds.insert((at, c.cmd)) || !self.tiles[at.index()].healthy() {
            return;
        }
        if self.rt().apps[a].epoch != c.epoch {
            return;
        }
        let on_tile: Vec<usize> =
            (0..self.rt().apps[a].procs.len()).filter(|&p| self.rt_ref().apps[a].procs[p].tile == at).collect();
        for &p in &on_tile {
            let pr = &mut self.rt().apps[a].procs[p];
            match c.verb {
                Verb::Install => pr.installed = true,
                Verb::Start => pr.running = pr.installed,
                Verb::Pause => pr.paused = true,
                Verb::Resume => pr.paused = false,
                Verb::Stop | Verb::Ack => {}
            }
        }
        if c.verb == Verb::Stop {
            for &p in &on_tile {
                if self.rt_ref().apps[a].procs[p].ins.is_empty() {
                    self.proc_finished(a, p);
                }
            }
        }
        let ack = Control { verb: Verb::Ack, ..c };
        let master = self.hier.master();
        self.send_service(at, master, ServiceBody::Control(ack.encode()));
        if matches!(c.verb, Verb::Start | Verb::Resume) {
            for &p in &on_tile {
                self.try_fire(a, p);
            }
        }
    }

    fn control_timeout(&mut self, a: usize, epoch: u32, cmd: u64) {
        let ap = &mut self.rt().apps[a];
        if ap.epoch != epoch {
            return;
        }
        let Some((tile, verb)) = ap.pending.remove(&cmd) else { return };
        let state = ap.state;
        let name = ap.spec.name.clone();
        let now = self.now();
        trace!(self.trace, now, Category::Control, "ev=nack verb={} app={name} tile={tile} cmd={cmd}", verb.name());
        if matches!(state, AppState::Installing | AppState::Running) {
            self.rt().suspect.insert(tile);
            self.recover(a, tile);
        }
    }

    /// The master learned something new about a tile or link.
    pub(crate) fn on_master_update(&mut self, ev: &LocalFaultEvent) {
        if self.dal.is_none() {
            return;
        }
        let tile = match ev.kind {
            LocalFaultKind::HostFaultSuspected | LocalFaultKind::DnpFaultSuspected | LocalFaultKind::TileSilent => {
                ev.tile
            }
            _ => return,
        };
        let n = self.rt().apps.len();
        for a in 0..n {
            let ap = &mut self.rt().apps[a];
            if !ap.state.active() {
                continue;
            }
            if let Some(m) = &mut ap.mapping {
                m.spares.remove(&tile);
            }
            if !ap.procs.iter().any(|p| p.tile == tile && !p.dead) {
                continue;
            }
            if ap.state == AppState::Stopping {
                self.set_state(a, AppState::Stopped);
                continue;
            }
            let hit: BTreeSet<Option<u8>> =
                ap.procs.iter().filter(|p| p.tile == tile && !p.dead).map(|p| p.replica).collect();
            match (hit.len(), hit.first().copied().flatten()) {
                (1, Some(r)) if ap.lost_replicas.is_empty() => self.drop_replica(a, r),
                _ => self.recover(a, tile),
            }
        }
    }

    /// Abandon replica `r` of a critical app; the comparators continue
    /// from the other one.
    fn drop_replica(&mut self, a: usize, r: u8) {
        let now = self.now();
        let ap = &mut self.rt().apps[a];
        ap.lost_replicas.insert(r);
        for p in ap.procs.iter_mut().filter(|p| p.replica == Some(r)) {
            p.dead = true;
            p.pending = None;
        }
        let mut woken = BTreeSet::new();
        for c in ap.chans.iter_mut() {
            if ap.procs[c.from].replica == Some(r) && ap.procs[c.to].replica.is_none() {
                c.cut = true;
                woken.insert(c.to);
            }
        }
        let name = ap.spec.name.clone();
        trace!(self.trace, now, Category::App, "ev=replica_lost app={name} replica={r}");
        for p in woken {
            self.try_fire(a, p);
        }
        self.check_app_done(a);
    }

    /// Restart app `a` from its initial state away from `failed`.
    fn recover(&mut self, a: usize, failed: Rank) {
        let now = self.now();
        let ap = &self.rt().apps[a];
        let (name, epoch) = (ap.spec.name.clone(), ap.epoch);
        trace!(self.trace, now, Category::App, "ev=recover app={name} epoch={epoch} failed_tile={failed}");
        self.deploy(a, Some(failed));
    }

    fn dal_watchdog(&mut self) {
        let now = self.now();
        let n = self.rt().apps.len();
        for a in 0..n {
            let ap = &mut self.rt().apps[a];
            if ap.state == AppState::Running && !ap.paused && ap.progress == ap.watched {
                ap.stalls += 1;
                let (name, epoch) = (ap.spec.name.clone(), ap.epoch);
                trace!(self.trace, now, Category::App, "ev=zero_progress app={name} epoch={epoch}");
            }
            let ap = &mut self.rt().apps[a];
            ap.watched = ap.progress;
        }
        let iv = self.cfg.watchdog_interval;
        self.sched.schedule_in(iv, EventClass::Application, Action::Dal(DalAction::Watchdog));
    }

    fn try_fire(&mut self, a: usize, p: usize) {
        let ap = &mut self.dal.as_mut().expect("runtime").apps[a];
        if !matches!(ap.state, AppState::Running | AppState::Stopping) {
            return;
        }
        let pr = &ap.procs[p];
        if !pr.running || pr.busy || pr.settled() || pr.paused || !self.tiles[pr.tile.index()].host_alive {
            return;
        }
        let live: Vec<bool> = pr.ins.iter().map(|&c| ap.chans[c].live()).collect();
        let counts = match pr.behavior.demand(&live) {
            Demand::Done => return self.proc_finished(a, p),
            Demand::Ports(v) => {
                if v.iter().zip(&pr.ins).any(|(&n, &c)| ap.chans[c].queue.len() < n) {
                    return;
                }
                v
            }
            Demand::AnyOne => match pr.ins.iter().position(|&c| !ap.chans[c].queue.is_empty()) {
                Some(k) => (0..pr.ins.len()).map(|i| usize::from(i == k)).collect(),
                None => return,
            },
        };
        if !pr.outs.iter().all(|&c| ap.chans[c].has_credit()) {
            return;
        }
        let epoch = ap.epoch;
        let mut inputs = Vec::with_capacity(counts.len());
        let mut credits = Vec::new();
        for (k, &c) in ap.procs[p].ins.clone().iter().enumerate() {
            let ch = &mut ap.chans[c];
            let items: Vec<Item> = ch.queue.drain(..counts[k]).collect();
            if !items.is_empty() {
                ch.consumed += items.len() as u64;
                ch.log.extend(items.iter().cloned());
                credits.push((c, ch.consumed, ap.procs[ch.from].tile));
            }
            inputs.push(items);
        }
        let pr = &mut ap.procs[p];
        let (tile, weight) = (pr.tile, pr.weight);
        let fired = pr.behavior.fire(inputs);
        match fired {
            Ok(f) => {
                let alarm = f.alarm.clone();
                pr.pending = Some(f);
                pr.busy = true;
                self.sched.schedule_in(
                    weight,
                    EventClass::Application,
                    Action::Dal(DalAction::FireDone { app: a, epoch, proc: p }),
                );
                if let Some(msg) = alarm {
                    let name = self.rt_ref().apps[a].net.processes[p].id.clone();
                    self.alarm(format!("{} {name}: {msg}", self.rt_ref().apps[a].spec.name));
                }
            }
            Err(e) => {
                let id = ap.net.processes[p].id.clone();
                return self.fail_app(a, format!("process {id}: {e}"));
            }
        }
        for (c, consumed, writer) in credits {
            let msg = encode_msg(MSG_CREDIT, a, epoch, c, consumed, &[]);
            self.channel_send(tile, writer, msg);
        }
    }

    fn fire_done(&mut self, a: usize, epoch: u32, p: usize) {
        let ap = &mut self.rt().apps[a];
        if ap.epoch != epoch || ap.procs[p].dead {
            return;
        }
        let pr = &mut ap.procs[p];
        pr.busy = false;
        let firing = pr.pending.take().unwrap_or_default();
        let tile = pr.tile;
        let outs = pr.outs.clone();
        ap.progress += 1;
        let mut sends = Vec::new();
        for (k, item) in firing.outputs.into_iter().enumerate() {
            let Some(item) = item else { continue };
            let ch = &mut ap.chans[outs[k]];
            sends.push((ap.procs[ch.to].tile, encode_msg(MSG_ITEM, a, epoch, outs[k], ch.sent, &item)));
            ch.sent += 1;
        }
        for (dst, msg) in sends {
            self.channel_send(tile, dst, msg);
        }
        self.try_fire(a, p);
    }

    fn proc_finished(&mut self, a: usize, p: usize) {
        let ap = &mut self.rt().apps[a];
        let epoch = ap.epoch;
        let pr = &mut ap.procs[p];
        if pr.settled() {
            return;
        }
        pr.done = true;
        let tile = pr.tile;
        let mut sends = Vec::new();
        for &c in &ap.procs[p].outs {
            let ch = &mut ap.chans[c];
            if !ch.eos_sent {
                ch.eos_sent = true;
                sends.push((ap.procs[ch.to].tile, encode_msg(MSG_EOS, a, epoch, c, ch.sent, &[])));
            }
        }
        for (dst, msg) in sends {
            self.channel_send(tile, dst, msg);
        }
        self.check_app_done(a);
    }

    fn check_app_done(&mut self, a: usize) {
        let ap = &self.rt().apps[a];
        if !ap.procs.iter().all(Proc::settled) {
            return;
        }
        match ap.state {
            AppState::Running => self.set_state(a, AppState::Completed),
            AppState::Stopping => self.set_state(a, AppState::Stopped),
            _ => {}
        }
    }

    fn channel_send(&mut self, src: Rank, dst: Rank, msg: Vec<u8>) {
        if src == dst {
            self.sched.schedule_in(0, EventClass::Application, Action::Dal(DalAction::Deliver { tile: dst, msg }));
        } else {
            self.dal_transmit(src, dst, msg, 0);
        }
    }

    fn dal_transmit(&mut self, src: Rank, dst: Rank, msg: Vec<u8>, tries: u32) {
        match self.start_transfer(TransferKind::Send, src, dst, msg.clone(), DAL_TAG, 0, Owner::Internal(0)) {
            Ok(id) => {
                if self.transfer_status(id) == Some(TransferStatus::InFlight) {
                    self.rt().inflight.insert(id, (src, dst, msg, tries));
                } else if self.transfer_status(id) != Some(TransferStatus::Complete) {
                    self.schedule_retry(src, dst, msg, tries);
                }
            }
            Err(e) => self.alarm(format!("application message rejected: {e}")),
        }
    }

    fn schedule_retry(&mut self, src: Rank, dst: Rank, msg: Vec<u8>, tries: u32) {
        if tries + 1 >= MAX_TRIES || !self.tiles[src.index()].dnp_alive {
            return;
        }
        let action = Action::Dal(DalAction::Retry { src, dst, msg, tries: tries + 1 });
        self.sched.schedule_in(RETRY_BACKOFF, EventClass::Application, action);
    }

    pub(crate) fn dal_completion(&mut self, ev: CompletionEvent) {
        if ev.side != Side::Initiator || self.dal.is_none() {
            return;
        }
        let Some((src, dst, msg, tries)) = self.rt().inflight.remove(&ev.transfer_id) else { return };
        if let TransferStatus::Failed(_) = ev.status {
            self.schedule_retry(src, dst, msg, tries);
        }
    }

    /// A channel message reached `tile`.
    pub(crate) fn dal_receive(&mut self, tile: Rank, bytes: Vec<u8>) {
        if self.dal.is_none() || !self.tiles[tile.index()].host_alive {
            return;
        }
        let Some(m) = decode_msg(&bytes) else { return };
        let d = self.dal.as_mut().expect("runtime");
        let Some(ap) = d.apps.get_mut(m.app) else { return };
        if ap.epoch != m.epoch || !ap.state.active() || m.chan >= ap.chans.len() {
            return;
        }
        let ch = &mut ap.chans[m.chan];
        let wake = match m.ty {
            MSG_CREDIT => {
                ch.acked = ch.acked.max(m.seq);
                ch.from
            }
            _ if ch.cut => return,
            MSG_EOS => {
                ch.eos_at = Some(m.seq);
                ch.to
            }
            _ => {
                if m.seq >= ch.next {
                    ch.reorder.entry(m.seq).or_insert_with(|| m.data.to_vec());
                }
                while let Some(item) = ch.reorder.remove(&ch.next) {
                    ch.queue.push_back(item);
                    ch.next += 1;
                }
                ch.to
            }
        };
        self.try_fire(m.app, wake);
    }
}

impl fmt::Debug for DalRuntime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DalRuntime").field("state", &self.state).field("apps", &self.apps.len()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_roundtrip() {
        let b = encode_msg(MSG_ITEM, 3, 7, 2, 99, b"abc");
        let m = decode_msg(&b).unwrap();
        assert_eq!((m.ty, m.app, m.epoch, m.chan, m.seq, m.data), (MSG_ITEM, 3, 7, 2, 99, &b"abc"[..]));
        assert!(decode_msg(&b[..10]).is_none());
        let c = Control { verb: Verb::Pause, cmd: 5, app: 1, epoch: 2, tile: Rank(3) };
        let d = Control::decode(&c.encode()).unwrap();
        assert_eq!((d.verb, d.cmd, d.app, d.epoch, d.tile), (Verb::Pause, 5, 1, 2, Rank(3)));
    }
}
