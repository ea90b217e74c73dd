//! Izhikevich neuron and pair-based STDP.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuronError {
    #[error("neuron {id}: non-finite state v={v} u={u}")]
    NonFinite { id: u32, v: f64, u: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IzhParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl IzhParams {
    /// Regular spiking cortical cell.
    pub const RS: IzhParams = IzhParams { a: 0.02, b: 0.2, c: -65.0, d: 8.0 };

    /// Fast spiking interneuron.
    pub const FS: IzhParams = IzhParams { a: 0.1, b: 0.2, c: -65.0, d: 2.0 };

    /// Excitatory cell with heterogeneity `r` in [0,1).
    pub fn excitatory(r: f64) -> Self {
        let r2 = r * r;
        IzhParams { a: 0.02, b: 0.2, c: -65.0 + 15.0 * r2, d: 8.0 - 6.0 * r2 }
    }

    /// Inhibitory cell with heterogeneity `r` in [0,1).
    pub fn inhibitory(r: f64) -> Self {
        IzhParams { a: 0.02 + 0.08 * r, b: 0.25 - 0.05 * r, c: -65.0, d: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeuronKind {
    Excitatory,
    Inhibitory,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronState {
    pub v: f64,
    pub u: f64,
    pub params: IzhParams,
    pub global_id: u32,
    pub kind: NeuronKind,
}

impl NeuronState {
    /// Resting start: v = -65, u = b * v.
    pub fn at_rest(global_id: u32, kind: NeuronKind, params: IzhParams) -> Self {
        let v = -65.0;
        NeuronState { v, u: params.b * v, params, global_id, kind }
    }
}

/// Advance one 1 ms step under input `current`.
///
/// A membrane potential at or above 30 mV at the start of the step is a
/// spike: it is reported and the cell is reset (v = c, u += d) before
/// integrating. v then takes two 0.5 ms explicit Euler sub-steps of
/// `0.04 v^2 + 5 v + 140 - u + I`, and u one 1 ms step of `a (b v - u)`.
pub fn izhikevich_step(n: &mut NeuronState, current: f64) -> Result<bool, NeuronError> {
    let spiked = n.v >= 30.0;
    if spiked {
        n.v = n.params.c;
        n.u += n.params.d;
    }
    for _ in 0..2 {
        n.v += 0.5 * (0.04 * n.v * n.v + 5.0 * n.v + 140.0 - n.u + current);
    }
    n.u += n.params.a * (n.params.b * n.v - n.u);
    if !(n.v.is_finite() && n.u.is_finite()) {
        return Err(NeuronError::NonFinite { id: n.global_id, v: n.v, u: n.u });
    }
    Ok(spiked)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StdpParams {
    pub a_plus: f64,
    pub a_minus: f64,
    pub tau_plus: f64,
    pub tau_minus: f64,
    pub w_max: f64,
}

impl Default for StdpParams {
    fn default() -> Self {
        StdpParams { a_plus: 0.10, a_minus: 0.12, tau_plus: 20.0, tau_minus: 20.0, w_max: 10.0 }
    }
}

impl StdpParams {
    pub fn potentiation(&self, dt_ms: u32) -> f64 {
        self.a_plus * (-(dt_ms as f64) / self.tau_plus).exp()
    }

    pub fn depression(&self, dt_ms: u32) -> f64 {
        -self.a_minus * (-(dt_ms as f64) / self.tau_minus).exp()
    }

    pub fn clip(&self, w: f64) -> f64 {
        w.clamp(0.0, self.w_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Synapse {
    pub pre_id: u32,
    pub post_id: u32,
    pub weight: f64,
    pub delay: u32,
    /// Time the most recent pre-synaptic spike reached this synapse
    /// (pre spike time + delay).
    pub last_arrival: Option<u32>,
    pub last_post_spike: Option<u32>,
    pub plastic: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpikeEvent {
    /// The post-synaptic cell fired at this ms.
    Post(u32),
    /// A pre-synaptic spike arrived at this ms.
    PreArrival(u32),
}

/// Apply the pair rule for one event and return the new weight.
///
/// Post spike at `t` after an arrival at `a <= t`: `+A+ exp(-(t-a)/tau+)`.
/// Arrival at `t` after a post spike at `p < t`: `-A- exp(-(t-p)/tau-)`.
/// The synapse's spike timestamps are updated by the event.
pub fn stdp_update(syn: &mut Synapse, event: SpikeEvent, p: &StdpParams) -> f64 {
    match event {
        SpikeEvent::Post(t) => {
            if syn.plastic {
                if let Some(a) = syn.last_arrival.filter(|&a| a <= t) {
                    syn.weight = p.clip(syn.weight + p.potentiation(t - a));
                }
            }
            syn.last_post_spike = Some(t);
        }
        SpikeEvent::PreArrival(t) => {
            if syn.plastic {
                if let Some(post) = syn.last_post_spike.filter(|&post| post < t) {
                    syn.weight = p.clip(syn.weight + p.depression(t - post));
                }
            }
            syn.last_arrival = Some(t);
        }
    }
    syn.weight
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_on_threshold() {
        let mut n = NeuronState::at_rest(0, NeuronKind::Excitatory, IzhParams::RS);
        n.v = 35.0;
        n.u = -10.0;
        assert!(izhikevich_step(&mut n, 0.0).unwrap());
        // reset then integrated from v = c, u = -10 + d
        let mut v = -65.0f64;
        let u0 = -2.0f64;
        for _ in 0..2 {
            v += 0.5 * (0.04 * v * v + 5.0 * v + 140.0 - u0);
        }
        assert_eq!(n.v, v);
        assert_eq!(n.u, u0 + 0.02 * (0.2 * v - u0));
    }

    #[test]
    fn just_below_threshold_does_not_spike_this_step() {
        let mut n = NeuronState::at_rest(0, NeuronKind::Excitatory, IzhParams::RS);
        n.v = 29.999;
        assert!(!izhikevich_step(&mut n, 0.0).unwrap());
        assert!(n.v >= 30.0);
        assert!(izhikevich_step(&mut n, 0.0).unwrap());
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut n = NeuronState::at_rest(4, NeuronKind::Excitatory, IzhParams::RS);
        assert!(izhikevich_step(&mut n, f64::NAN).is_err());
    }

    #[test]
    fn stdp_shapes() {
        let p = StdpParams::default();
        assert_eq!(p.potentiation(0), 0.10);
        assert_eq!(p.potentiation(20), 0.10 * (-1.0f64).exp());
        let mut s = Synapse {
            pre_id: 0,
            post_id: 1,
            weight: 5.0,
            delay: 3,
            last_arrival: None,
            last_post_spike: None,
            plastic: true,
        };
        stdp_update(&mut s, SpikeEvent::PreArrival(10), &p);
        assert_eq!(s.weight, 5.0);
        assert_eq!(stdp_update(&mut s, SpikeEvent::Post(10), &p), 5.1);
        let w = stdp_update(&mut s, SpikeEvent::PreArrival(15), &p);
        assert_eq!(w, 5.1 - 0.12 * (-5.0f64 / 20.0).exp());
    }

    #[test]
    fn weights_stay_clipped() {
        let p = StdpParams::default();
        let mut s = Synapse {
            pre_id: 0,
            post_id: 1,
            weight: 9.95,
            delay: 1,
            last_arrival: Some(4),
            last_post_spike: None,
            plastic: true,
        };
        assert_eq!(stdp_update(&mut s, SpikeEvent::Post(4), &p), 10.0);
        s.weight = 0.01;
        assert_eq!(stdp_update(&mut s, SpikeEvent::PreArrival(5), &p), 0.0);
    }

    #[test]
    fn fixed_synapses_ignore_timing() {
        let p = StdpParams::default();
        let mut s = Synapse {
            pre_id: 0,
            post_id: 1,
            weight: 5.0,
            delay: 1,
            last_arrival: Some(4),
            last_post_spike: None,
            plastic: false,
        };
        assert_eq!(stdp_update(&mut s, SpikeEvent::Post(4), &p), 5.0);
        assert_eq!(s.last_post_spike, Some(4));
    }
}
