//! Stochastic sono-switching of droplets.
//!
//! Every transmission can vaporize a dormant droplet (turning it into an
//! echogenic bubble) and can destroy a bubble that was already active. Both
//! probabilities are logistic in the local mechanical index. Probabilities are
//! per transmission, not per second.
//!
//! Default constants (37 °C behaviour):
//!
//! | gas    | onset MI | peak MI | plane-wave switchable | spontaneous (1/s) |
//! |--------|----------|---------|-----------------------|-------------------|
//! | C3F8   | 0.11     | 0.17    | yes                   | 1e-4              |
//! | MIX    | 0.17     | 0.28    | yes                   | 0                 |
//! | C4F10  | 0.50     | 1.00    | no                    | 0                 |
//!
//! Shared switching constants: vaporization slope 10, onset probability 1e-6,
//! destruction threshold 0.34 with slope 9.0 (survival half-life 17
//! transmissions at MI 0.22), focused threshold factor 0.45.

use std::fmt;
use std::str::FromStr;

use crate::phantom::{DropletState, Population};
use crate::rng::{uniform, Stream};
use crate::{par, Error, Result};

/// Version tag of the defaults table above.
pub const DEFAULTS_VERSION: &str = "kinetics-defaults-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gas {
    C3F8,
    Mix,
    C4F10,
}

impl Gas {
    pub const ALL: [Gas; 3] = [Gas::C3F8, Gas::Mix, Gas::C4F10];

    pub fn name(self) -> &'static str {
        match self {
            Gas::C3F8 => "C3F8",
            Gas::Mix => "MIX",
            Gas::C4F10 => "C4F10",
        }
    }
}

impl fmt::Display for Gas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gas {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C3F8" => Ok(Gas::C3F8),
            "MIX" | "C3F8:C4F10" => Ok(Gas::Mix),
            "C4F10" => Ok(Gas::C4F10),
            other => Err(Error::param("gas", format!("unknown gas `{other}` (expected C3F8, MIX or C4F10)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasSpecies {
    pub gas: Gas,
    pub mi_onset: f64,
    pub mi_peak: f64,
    pub planewave_vaporizable: bool,
    /// Background vaporization rate per droplet (1/s).
    pub spontaneous_rate: f64,
}

impl GasSpecies {
    pub fn defaults(gas: Gas) -> Self {
        match gas {
            Gas::C3F8 => GasSpecies {
                gas,
                mi_onset: 0.11,
                mi_peak: 0.17,
                planewave_vaporizable: true,
                spontaneous_rate: 1e-4,
            },
            Gas::Mix => GasSpecies {
                gas,
                mi_onset: 0.17,
                mi_peak: 0.28,
                planewave_vaporizable: true,
                spontaneous_rate: 0.0,
            },
            Gas::C4F10 => GasSpecies {
                gas,
                mi_onset: 0.5,
                mi_peak: 1.0,
                planewave_vaporizable: false,
                spontaneous_rate: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mi_onset > 0.0 && self.mi_onset < self.mi_peak && self.mi_peak <= 1.5) {
            return Err(Error::param(
                "kinetics.mi_onset",
                format!("need 0 < onset ({}) < peak ({}) <= 1.5", self.mi_onset, self.mi_peak),
            ));
        }
        if !(self.spontaneous_rate >= 0.0) {
            return Err(Error::param("kinetics.spontaneous_rate", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchingParams {
    /// Logistic steepness of vaporization, per unit of `mi / threshold`.
    pub vap_slope: f64,
    /// Per-transmission vaporization probability at the onset MI.
    pub onset_probability: f64,
    pub dest_onset: f64,
    /// Logistic steepness of destruction, per unit of `mi / dest_onset`.
    pub dest_slope: f64,
    /// Survival half-life (transmissions) at `reference_mi`.
    pub survival_halflife_frames: f64,
    pub reference_mi: f64,
    /// Focused bursts vaporize at `factor × mi_onset`.
    pub focused_threshold_factor: f64,
}

impl Default for SwitchingParams {
    fn default() -> Self {
        SwitchingParams {
            vap_slope: 10.0,
            onset_probability: 1e-6,
            dest_onset: 0.34,
            dest_slope: 9.0,
            survival_halflife_frames: 17.0,
            reference_mi: 0.22,
            focused_threshold_factor: 0.45,
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl SwitchingParams {
    /// Recomputes `dest_slope` so that a bubble at `reference_mi` survives
    /// `halflife` transmissions with probability one half.
    pub fn with_halflife(mut self, halflife: f64) -> Result<Self> {
        if !(halflife >= 1.0) {
            return Err(Error::param("kinetics.survival_halflife_frames", "must be >= 1"));
        }
        let p = 1.0 - 0.5f64.powf(1.0 / halflife);
        let denom = self.reference_mi / self.dest_onset - 1.0;
        if denom == 0.0 {
            return Err(Error::param("kinetics.reference_mi", "must differ from dest_onset"));
        }
        self.dest_slope = logit(p) / denom;
        self.survival_halflife_frames = halflife;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dest_onset > 0.0) {
            return Err(Error::param("kinetics.dest_onset", "must be > 0"));
        }
        if !(self.survival_halflife_frames >= 1.0) {
            return Err(Error::param("kinetics.survival_halflife_frames", "must be >= 1"));
        }
        if !(self.vap_slope > 0.0 && self.dest_slope > 0.0) {
            return Err(Error::param("kinetics.vap_slope", "slopes must be > 0"));
        }
        if !(self.onset_probability > 0.0 && self.onset_probability < 1.0) {
            return Err(Error::param("kinetics.onset_probability", "must lie in (0, 1)"));
        }
        if !(self.focused_threshold_factor > 0.0) {
            return Err(Error::param("kinetics.focused_threshold_factor", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PulseKind {
    Plane,
    Focused,
}

/// Probability that one transmission vaporizes a dormant droplet.
pub fn vaporization_probability(gas: &GasSpecies, params: &SwitchingParams, mi_local: f64, kind: PulseKind) -> f64 {
    let threshold = match kind {
        PulseKind::Plane if !gas.planewave_vaporizable => return 0.0,
        PulseKind::Plane => gas.mi_onset,
        PulseKind::Focused => gas.mi_onset * params.focused_threshold_factor,
    };
    let mi = mi_local.max(0.0);
    logistic(params.vap_slope * (mi / threshold - 1.0) + logit(params.onset_probability))
}

/// Probability that one transmission destroys an active bubble.
pub fn destruction_probability(params: &SwitchingParams, mi_local: f64) -> f64 {
    logistic(params.dest_slope * (mi_local.max(0.0) / params.dest_onset - 1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SwitchingEvents {
    pub vaporized: Vec<u64>,
    pub destroyed: Vec<u64>,
}

/// Per-transmission context of a switching step.
#[derive(Debug, Clone, Copy)]
pub struct Transmission {
    pub kind: PulseKind,
    /// Global transmission counter; keys the random draws.
    pub index: u64,
    /// Time since the previous transmission (spontaneous vaporization).
    pub dt: f64,
    /// Frame that will image this transmission's result.
    pub frame: u32,
}

const PARALLEL_THRESHOLD: usize = 4096;

/// Applies one transmission to the population.
///
/// `mi_field[k]` is the local MI at droplet `k`. Bubbles active before this
/// transmission may be destroyed; dormant droplets may vaporize. A droplet
/// vaporized here is not also destroyed by the same pulse. Random draws are
/// keyed by `(seed, transmission, droplet id)`.
pub fn step_switching(
    pop: &mut Population,
    mi_field: &[f64],
    tx: Transmission,
    gas: &GasSpecies,
    params: &SwitchingParams,
    seed: u64,
) -> SwitchingEvents {
    assert_eq!(mi_field.len(), pop.droplets.len(), "MI field must cover every droplet");
    let p_spont = if gas.spontaneous_rate > 0.0 && tx.dt > 0.0 {
        -(-gas.spontaneous_rate * tx.dt).exp_m1()
    } else {
        0.0
    };
    let decide = |k: usize| -> Option<DropletState> {
        let d = &pop.droplets[k];
        let u = uniform(seed, Stream::Switching, tx.index, d.id);
        match d.state {
            DropletState::Dormant => {
                let pv = vaporization_probability(gas, params, mi_field[k], tx.kind);
                let p = 1.0 - (1.0 - pv) * (1.0 - p_spont);
                (u < p).then_some(DropletState::Active)
            }
            DropletState::Active => {
                (u < destruction_probability(params, mi_field[k])).then_some(DropletState::Destroyed)
            }
            DropletState::Destroyed => None,
        }
    };
    let n = pop.droplets.len();
    let decisions: Vec<Option<DropletState>> = if n >= PARALLEL_THRESHOLD {
        par::map_range(n, decide)
    } else {
        (0..n).map(decide).collect()
    };
    let mut events = SwitchingEvents::default();
    for (d, next) in pop.droplets.iter_mut().zip(decisions) {
        match next {
            Some(DropletState::Active) => {
                d.state = DropletState::Active;
                d.activation_frame = Some(tx.frame);
                events.vaporized.push(d.id);
            }
            Some(DropletState::Destroyed) => {
                d.state = DropletState::Destroyed;
                events.destroyed.push(d.id);
            }
            _ => {}
        }
    }
    events
}

/// Mean bubble survival in transmissions at constant MI (geometric law).
pub fn mean_lifetime(params: &SwitchingParams, mi: f64) -> f64 {
    1.0 / destruction_probability(params, mi)
}

/// Chi-square goodness-of-fit of observed lifetimes (in transmissions, ≥ 1)
/// against the geometric law `P(L = k) = (1 - p)^(k-1) p`. Returns
/// `(statistic, degrees of freedom, p-value)`. Bins are merged from the tail
/// until each expected count is at least 5.
pub fn geometric_gof(lifetimes: &[u32], p: f64) -> (f64, usize, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n = lifetimes.len() as f64;
    if lifetimes.is_empty() || !(p > 0.0 && p < 1.0) {
        return (f64::NAN, 0, f64::NAN);
    }
    // Bins k = 1..K-1 individually, K collects the tail.
    let mut k_max = 1usize;
    while n * (1.0 - p).powi(k_max as i32) >= 5.0 && k_max < 10_000 {
        k_max += 1;
    }
    let mut observed = vec![0f64; k_max];
    for &l in lifetimes {
        let k = (l.max(1) as usize).min(k_max);
        observed[k - 1] += 1.0;
    }
    let mut expected: Vec<f64> = (1..k_max).map(|k| n * (1.0 - p).powi(k as i32 - 1) * p).collect();
    expected.push(n * (1.0 - p).powi(k_max as i32 - 1));
    let stat: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = k_max.saturating_sub(1).max(1);
    let pval = match ChiSquared::new(dof as f64) {
        Ok(chi) => 1.0 - chi.cdf(stat),
        Err(_) => f64::NAN,
    };
    (stat, dof, pval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{build_straight_vessel, seed_droplets};
    use crate::Point;

    fn params() -> SwitchingParams {
        SwitchingParams::default()
    }

    #[test]
    fn nothing_vaporizes_at_lowest_mi() {
        for g in Gas::ALL {
            let p = vaporization_probability(&GasSpecies::defaults(g), &params(), 0.06, PulseKind::Plane);
            assert!(p < 0.01, "{g}: {p}");
        }
    }

    #[test]
    fn c4f10_needs_focused_bursts() {
        let c4 = GasSpecies::defaults(Gas::C4F10);
        for mi in [0.06, 0.22, 0.65, 1.5] {
            assert_eq!(vaporization_probability(&c4, &params(), mi, PulseKind::Plane), 0.0);
        }
        assert!(vaporization_probability(&c4, &params(), 1.5, PulseKind::Focused) >= 0.5);
    }

    #[test]
    fn probabilities_are_bounded_and_monotone() {
        let p = params();
        for g in Gas::ALL {
            let gas = GasSpecies::defaults(g);
            for kind in [PulseKind::Plane, PulseKind::Focused] {
                let mut last = 0.0;
                for k in 0..=400 {
                    let mi = k as f64 * 0.01;
                    let v = vaporization_probability(&gas, &p, mi, kind);
                    assert!((0.0..=1.0).contains(&v));
                    assert!(v >= last);
                    last = v;
                }
            }
        }
        assert!(vaporization_probability(&GasSpecies::defaults(Gas::C3F8), &p, 1e6, PulseKind::Plane) <= 1.0);
        assert!(destruction_probability(&p, 0.5) >= destruction_probability(&p, 0.3));
    }

    #[test]
    fn destruction_landmarks() {
        let p = params();
        assert!(destruction_probability(&p, 0.10) < 0.05);
        assert!((destruction_probability(&p, 0.34) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn halflife_and_slope_defaults_agree() {
        let p = params();
        let derived = p.with_halflife(17.0).unwrap();
        assert!((derived.dest_slope - p.dest_slope).abs() / p.dest_slope < 0.002);
        // Discrete half-life: P(survive 17 transmissions) = 1/2.
        let q = 1.0 - destruction_probability(&derived, 0.22);
        assert!((q.powf(17.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_field_only_spontaneous() {
        let ph = build_straight_vessel(Point::new(14.0, -5.0), Point::new(14.0, 5.0), 200.0, 30.0).unwrap();
        let mut pop = seed_droplets(&ph, 50.0, Gas::Mix, 1).unwrap();
        let mi = vec![0.0; pop.droplets.len()];
        let gas = GasSpecies::defaults(Gas::Mix);
        for k in 0..100 {
            let tx = Transmission {
                kind: PulseKind::Plane,
                index: k,
                dt: 2e-4,
                frame: k as u32,
            };
            let ev = step_switching(&mut pop, &mi, tx, &gas, &params(), 5);
            assert!(ev.vaporized.is_empty() && ev.destroyed.is_empty());
        }
    }

    #[test]
    fn destroyed_droplets_never_come_back() {
        let ph = build_straight_vessel(Point::new(14.0, -5.0), Point::new(14.0, 5.0), 200.0, 30.0).unwrap();
        let mut pop = seed_droplets(&ph, 50.0, Gas::C3F8, 1).unwrap();
        let mi = vec![0.3; pop.droplets.len()];
        let gas = GasSpecies::defaults(Gas::C3F8);
        let mut destroyed = std::collections::HashSet::new();
        for k in 0..200 {
            let tx = Transmission {
                kind: PulseKind::Plane,
                index: k,
                dt: 2e-4,
                frame: k as u32,
            };
            let ev = step_switching(&mut pop, &mi, tx, &gas, &params(), 5);
            for id in &ev.vaporized {
                assert!(!destroyed.contains(id));
            }
            destroyed.extend(ev.destroyed);
        }
        assert!(!destroyed.is_empty());
    }

    /// Bubbles activated at frame 0 under a constant MI of 0.22 survive a
    /// geometric number of transmissions with mean 1/p.
    #[test]
    fn survival_is_geometric_at_reference_mi() {
        let ph = build_straight_vessel(Point::new(14.0, -50.0), Point::new(14.0, 50.0), 200.0, 30.0).unwrap();
        let mut pop = seed_droplets(&ph, 100.0, Gas::C3F8, 11).unwrap();
        for d in &mut pop.droplets {
            d.state = DropletState::Active;
        }
        let n = pop.droplets.len();
        let mi = vec![0.22; n];
        let gas = GasSpecies::defaults(Gas::C3F8);
        let p = params();
        let mut lifetimes = Vec::new();
        for k in 1..2000u64 {
            let tx = Transmission {
                kind: PulseKind::Plane,
                index: k,
                dt: 2e-4,
                frame: k as u32,
            };
            let ev = step_switching(&mut pop, &mi, tx, &gas, &p, 21);
            lifetimes.extend(std::iter::repeat_n(k as u32, ev.destroyed.len()));
        }
        assert_eq!(lifetimes.len(), n);
        let mean = lifetimes.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
        let expected = mean_lifetime(&p, 0.22);
        let se = expected / (n as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se, "mean {mean} vs {expected}");
        // Continuous-time approximation of the same law.
        assert!((expected - p.survival_halflife_frames / std::f64::consts::LN_2).abs() / expected < 0.03);
        let (_, _, pval) = geometric_gof(&lifetimes, destruction_probability(&p, 0.22));
        assert!(pval > 0.01, "p = {pval}");
    }

    #[test]
    fn gof_rejects_wrong_law() {
        let lifetimes: Vec<u32> = (0..5000).map(|k| 1 + (k % 50) as u32).collect();
        let (_, _, pval) = geometric_gof(&lifetimes, 0.04);
        assert!(pval < 1e-6);
    }

    #[test]
    fn gas_names_round_trip() {
        for g in Gas::ALL {
            assert_eq!(g.name().parse::<Gas>().unwrap(), g);
        }
        assert!("N2".parse::<Gas>().is_err());
    }
}
