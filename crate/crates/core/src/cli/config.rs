//! Run configuration file (TOML) and its resolution into a ready-to-run plan.
//!
//! ```toml
//! topology = "2x2x2"
//! seed = 7
//! until = 5_000_000
//! apps = "pipeline.apps"      # relative to this file
//! faults = "kill.faults"
//!
//! [lofamo]
//! heartbeat_period = 2000
//!
//! [stencil]
//! iterations = 10
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bench::dpsnn::DpsnnConfig;
use crate::bench::stencil::StencilConfig;
use crate::dal::{parse_app_spec, AppSpec};
use crate::engine::TieBreak;
use crate::faultinject::{parse_fault_spec, FaultSpec};
use crate::sim::{ServiceNet, SimConfig};
use crate::topology::TorusGeometry;

pub const DEFAULT_UNTIL: u64 = 10_000_000;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub topology: String,
    #[serde(default = "one")]
    pub seed: u64,
    #[serde(default = "default_until")]
    pub until: u64,
    #[serde(default)]
    pub tie: TieMode,
    #[serde(default)]
    pub service_net: ServiceMode,
    pub apps: Option<PathBuf>,
    pub faults: Option<PathBuf>,
    #[serde(default)]
    pub link: LinkSection,
    #[serde(default)]
    pub lofamo: LofamoSection,
    #[serde(default)]
    pub dal: DalSection,
    #[serde(default)]
    pub output: OutputSection,
    pub stencil: Option<StencilSection>,
    pub dpsnn: Option<DpsnnSection>,
}

fn one() -> u64 {
    1
}

fn default_until() -> u64 {
    DEFAULT_UNTIL
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieMode {
    #[default]
    Fifo,
    /// Same-time events of one class in a seeded random order.
    Permuted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceMode {
    #[default]
    Shared,
    Dedicated,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub bandwidth_bits_per_cycle: Option<u64>,
    pub hop_latency: Option<u64>,
    pub mtu: Option<usize>,
    pub ttl: Option<u32>,
    pub ring_capacity: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LofamoSection {
    pub enabled: Option<bool>,
    pub heartbeat_period: Option<u64>,
    pub t_wd: Option<u64>,
    pub t_check: Option<u64>,
    pub keepalive_period: Option<u64>,
    pub threshold: Option<u32>,
    pub controller_keepalive: Option<u64>,
    pub host_net_latency: Option<u64>,
    pub service_net_latency: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DalSection {
    pub control_timeout: Option<u64>,
    pub watchdog_interval: Option<u64>,
    pub stop_grace: Option<u64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Per-packet send/hop/deliver records.
    #[serde(default = "yes")]
    pub trace_packets: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: None, trace_packets: true }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StencilSection {
    pub dims: Option<[usize; 4]>,
    pub blocks: Option<[usize; 4]>,
    pub iterations: Option<u32>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpsnnSection {
    pub neurons: Option<u32>,
    pub synapses_per_neuron: Option<u32>,
    pub partitions: Option<u32>,
    pub duration_ms: Option<u32>,
    pub seed: Option<u64>,
}

/// Everything a run needs, parsed and checked.
#[derive(Clone, Debug)]
pub struct Plan {
    pub sim: SimConfig,
    pub until: u64,
    pub apps: Option<AppSpec>,
    pub faults: Option<FaultSpec>,
    pub stencil: Option<StencilConfig>,
    pub dpsnn: Option<DpsnnConfig>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Resolve spec paths against `base`, parse them and check every
    /// parameter. Nothing is written.
    pub fn plan(&self, base: &Path) -> Result<Plan, String> {
        let geometry: TorusGeometry = self.topology.parse().map_err(|e| format!("topology: {e}"))?;
        let mut sim = SimConfig::new(geometry);
        sim.seed = self.seed;
        sim.tie = match self.tie {
            TieMode::Fifo => TieBreak::Fifo,
            TieMode::Permuted => TieBreak::Permuted(self.seed),
        };
        sim.service_net = match self.service_net {
            ServiceMode::Shared => ServiceNet::Shared,
            ServiceMode::Dedicated => ServiceNet::Dedicated,
        };
        let l = &self.link;
        set(&mut sim.link.bandwidth_bits_per_cycle, l.bandwidth_bits_per_cycle);
        set(&mut sim.link.hop_latency, l.hop_latency);
        set(&mut sim.mtu, l.mtu);
        set(&mut sim.ttl, l.ttl);
        set(&mut sim.ring_capacity, l.ring_capacity);
        let f = &self.lofamo;
        let p = &mut sim.lofamo;
        set(&mut sim.lofamo_enabled, f.enabled);
        set(&mut p.heartbeat_period, f.heartbeat_period);
        set(&mut p.t_wd, f.t_wd);
        set(&mut p.t_check, f.t_check);
        set(&mut p.keepalive_period, f.keepalive_period);
        set(&mut p.threshold, f.threshold);
        set(&mut p.controller_keepalive, f.controller_keepalive);
        set(&mut p.host_net_latency, f.host_net_latency);
        set(&mut p.service_net_latency, f.service_net_latency);
        set(&mut sim.control_timeout, self.dal.control_timeout);
        set(&mut sim.watchdog_interval, self.dal.watchdog_interval);
        set(&mut sim.stop_grace, self.dal.stop_grace);
        sim.trace_packets = self.output.trace_packets;
        sim.keep_trace = true;
        sim.validate().map_err(|e| e.to_string())?;

        let read = |p: &Path| {
            let full = base.join(p);
            std::fs::read_to_string(&full).map_err(|e| format!("{}: {e}", full.display()))
        };
        let apps = match &self.apps {
            Some(p) => Some(parse_app_spec(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?),
            None => None,
        };
        let faults = match &self.faults {
            Some(p) => Some(load_faults(&read(p)?, &geometry).map_err(|e| format!("{}: {e}", p.display()))?),
            None => None,
        };
        let stencil = self.stencil.as_ref().map(|s| {
            let d = StencilConfig::default();
            StencilConfig {
                dims: s.dims.unwrap_or(d.dims),
                blocks: s.blocks.unwrap_or(d.blocks),
                iterations: s.iterations.unwrap_or(d.iterations),
                seed: s.seed.unwrap_or(d.seed),
            }
        });
        if let Some(s) = &stencil {
            s.validate().map_err(|e| e.to_string())?;
        }
        let dpsnn = self.dpsnn.as_ref().map(|s| {
            let d = DpsnnConfig::default();
            DpsnnConfig {
                neurons: s.neurons.unwrap_or(d.neurons),
                synapses_per_neuron: s.synapses_per_neuron.unwrap_or(d.synapses_per_neuron),
                partitions: s.partitions.unwrap_or(d.partitions),
                duration_ms: s.duration_ms.unwrap_or(d.duration_ms),
                seed: s.seed.unwrap_or(d.seed),
                ..d
            }
        });
        if let Some(d) = &dpsnn {
            d.validate().map_err(|e| e.to_string())?;
            if apps.as_ref().is_some_and(|a| a.app(crate::bench::fabric::DPSNN_APP).is_some()) {
                return Err(format!(
                    "app name '{}' is reserved for the [dpsnn] benchmark",
                    crate::bench::fabric::DPSNN_APP
                ));
            }
        }
        Ok(Plan { sim, until: self.until, apps, faults, stencil, dpsnn, out_dir: self.output.dir.clone() })
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Parse a fault spec and check its targets exist on `geom`.
pub fn load_faults(text: &str, geom: &TorusGeometry) -> Result<FaultSpec, String> {
    let spec = parse_fault_spec(text).map_err(|e| e.to_string())?;
    spec.validate(geom).map_err(|e| e.to_string())?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse("topology = \"4x2x2\"\n").unwrap();
        let p = c.plan(Path::new(".")).unwrap();
        assert_eq!(p.until, DEFAULT_UNTIL);
        assert_eq!(p.sim.geometry.tiles(), 16);
        assert!(p.apps.is_none() && p.stencil.is_none());
    }

    #[test]
    fn sections_override_parameters() {
        let c = RunConfig::parse(
            "topology = \"2x2x2\"\nseed = 9\ntie = \"permuted\"\nservice_net = \"dedicated\"\n\
             [link]\nhop_latency = 7\n[lofamo]\nt_wd = 20000\n[stencil]\niterations = 2\n",
        )
        .unwrap();
        let p = c.plan(Path::new(".")).unwrap();
        assert_eq!(p.sim.link.hop_latency, 7);
        assert_eq!(p.sim.lofamo.t_wd, 20000);
        assert_eq!(p.sim.tie, TieBreak::Permuted(9));
        assert_eq!(p.stencil.unwrap().iterations, 2);
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(RunConfig::parse("topology = \"2x2x2\"\nbogus = 1\n").is_err());
        let bad_dims = RunConfig::parse("topology = \"0x2x2\"\n").unwrap();
        assert!(bad_dims.plan(Path::new(".")).is_err());
        let bad_wd = RunConfig::parse("topology = \"2x2x2\"\n[lofamo]\nheartbeat_period = 50000\n").unwrap();
        assert!(bad_wd.plan(Path::new(".")).is_err());
        let missing = RunConfig::parse("topology = \"2x2x2\"\nfaults = \"/nonexistent/f\"\n").unwrap();
        assert!(missing.plan(Path::new(".")).unwrap_err().contains("nonexistent"));
    }
}
