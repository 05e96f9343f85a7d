//! Forward simulation: advect the droplet population, apply every
//! transmission of a pulse sequence, and render the imaging frames.
//!
//! Frame `f` shows the bubbles that are active after the last transmission
//! of that frame. Switching draws are keyed by transmission index and
//! droplet id, and frames are rendered independently, so the output does
//! not depend on the thread count.

use std::collections::HashMap;

use crate::acoustics::grid::{FrameStack, Grid};
use crate::acoustics::psf::PsfModel;
use crate::acoustics::render::{Motion, Renderer, Scatterer};
use crate::acoustics::sequence::PulseSequence;
use crate::geometry::Point;
use crate::kinetics::{step_switching, GasSpecies, PulseKind, SwitchingParams, Transmission};
use crate::phantom::{advect_step, seed_droplets, DropletState, FlowField, Phantom};
use crate::rng::{stream_rng, Stream};
use crate::{par, Result};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub phantom: Phantom,
    pub flow: FlowField,
    pub gas: GasSpecies,
    pub switching: SwitchingParams,
    /// Droplets per mm of vessel.
    pub concentration: f64,
    pub sequence: PulseSequence,
    pub grid: Grid,
    pub psf: PsfModel,
    pub noise_sigma: f64,
    /// Mean tissue clutter level (0 disables clutter).
    pub clutter_mean: f64,
    pub motion: Option<Motion>,
    pub attenuation_db_per_cm: f64,
    /// Echo amplitude of one bubble at unit transmit gain.
    pub bubble_amplitude: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.flow.validate()?;
        self.gas.validate()?;
        self.switching.validate()?;
        self.sequence.validate()?;
        self.renderer().map(|_| ())
    }

    pub fn renderer(&self) -> Result<Renderer> {
        let mut r = Renderer::new(self.grid, self.psf, self.seed)?
            .with_noise(self.noise_sigma)
            .with_attenuation(self.attenuation_db_per_cm);
        if let Some(m) = &self.motion {
            r = r.with_motion(m.clone());
        }
        if self.clutter_mean > 0.0 {
            r = r.with_clutter(self.clutter_mean);
        }
        Ok(r)
    }
}

/// One switching event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthEvent {
    pub transmission: u64,
    pub t: f64,
    /// Frame that first shows (vaporization) or no longer shows (destruction) the bubble.
    pub frame: u32,
    pub id: u64,
    pub position: Point,
    pub kind: PulseKind,
    pub vaporized: bool,
}

/// A bubble visible in a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthBubble {
    pub id: u64,
    pub position: Point,
    pub segment: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    /// Active bubbles per imaging frame.
    pub frames: Vec<Vec<TruthBubble>>,
    pub events: Vec<TruthEvent>,
    /// Completed lifetimes in transmissions (vaporization to destruction).
    pub lifetimes: Vec<u32>,
    /// Bubbles that left the phantom or outlived the sequence.
    pub censored: usize,
    /// Gain (nominal imaging MI) of each frame.
    pub frame_gain: Vec<f64>,
}

impl GroundTruth {
    pub fn vaporizations(&self) -> usize {
        self.events.iter().filter(|e| e.vaporized).count()
    }
}

/// Runs the droplet/switching model over the whole sequence.
pub fn simulate_truth(cfg: &SimConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let seq = &cfg.sequence;
    let mut pop = seed_droplets(&cfg.phantom, cfg.concentration, cfg.gas.gas, cfg.seed)?;
    let mut adv = stream_rng(cfg.seed, Stream::Advection, 0);
    let n_frames = seq.n_frames();
    let mut truth = GroundTruth {
        frames: vec![Vec::new(); n_frames],
        frame_gain: vec![0.0; n_frames],
        ..GroundTruth::default()
    };
    let mut born: HashMap<u64, u64> = HashMap::new();
    let mut t_prev = seq.events.first().map_or(0.0, |e| e.timestamp);
    let mut next_frame = 0u32;
    for (n, ev) in seq.events.iter().enumerate() {
        let dt = ev.timestamp - t_prev;
        let before: Vec<u64> = if born.is_empty() {
            Vec::new()
        } else {
            pop.droplets
                .iter()
                .filter(|d| d.state == DropletState::Active)
                .map(|d| d.id)
                .collect()
        };
        advect_step(&mut pop, &cfg.phantom, &cfg.flow, dt, t_prev, &mut adv);
        if !before.is_empty() {
            // active bubbles that were flushed out of the phantom
            let alive: std::collections::HashSet<u64> = pop.droplets.iter().map(|d| d.id).collect();
            for id in before {
                if !alive.contains(&id) && born.remove(&id).is_some() {
                    truth.censored += 1;
                }
            }
        }
        t_prev = ev.timestamp;
        let beam = ev.beam();
        let phantom = &cfg.phantom;
        let mi: Vec<f64> = pop
            .droplets
            .iter()
            .map(|d| beam.mi_at(d.position(phantom)))
            .collect();
        let frame = ev.frame.unwrap_or(next_frame);
        let tx = Transmission {
            kind: ev.pulse_kind(),
            index: n as u64,
            dt,
            frame,
        };
        let out = step_switching(&mut pop, &mi, tx, &cfg.gas, &cfg.switching, cfg.seed);
        if !out.vaporized.is_empty() || !out.destroyed.is_empty() {
            let index: HashMap<u64, usize> = pop.droplets.iter().enumerate().map(|(k, d)| (d.id, k)).collect();
            for (ids, vaporized) in [(&out.vaporized, true), (&out.destroyed, false)] {
                for id in ids {
                    let d = &pop.droplets[index[id]];
                    truth.events.push(TruthEvent {
                        transmission: n as u64,
                        t: ev.timestamp,
                        frame,
                        id: *id,
                        position: d.position(phantom),
                        kind: tx.kind,
                        vaporized,
                    });
                    if vaporized {
                        born.insert(*id, n as u64);
                    } else if let Some(b) = born.remove(id) {
                        truth.lifetimes.push((n as u64 - b) as u32);
                    }
                }
            }
        }
        let ends_frame = match ev.frame {
            Some(f) => seq.events.get(n + 1).and_then(|e| e.frame) != Some(f),
            None => false,
        };
        if ends_frame {
            let f = frame as usize;
            truth.frames[f] = pop
                .droplets
                .iter()
                .filter(|d| d.state == DropletState::Active)
                .map(|d| TruthBubble {
                    id: d.id,
                    position: d.position(phantom),
                    segment: d.segment,
                })
                .collect();
            truth.frame_gain[f] = ev.nominal_mi();
            next_frame = frame + 1;
        }
    }
    truth.censored += born.len();
    Ok(truth)
}

/// Renders frames `range` of a simulated acquisition into `out`
/// (`range.len() × grid.len()` values).
pub fn render_range(renderer: &Renderer, cfg: &SimConfig, truth: &GroundTruth, start: usize, out: &mut [f32]) {
    let n = cfg.grid.len();
    let times = &cfg.sequence.frame_times;
    par::for_each_chunk_mut(out, n, |k, chunk| {
        let f = start + k;
        let bubbles: Vec<Scatterer> = truth.frames[f]
            .iter()
            .map(|b| Scatterer {
                position: b.position,
                amplitude: cfg.bubble_amplitude,
            })
            .collect();
        renderer.render_frame(&bubbles, f, times[f], truth.frame_gain[f], chunk);
    });
}

/// Renders every frame into a stack.
pub fn render_stack(cfg: &SimConfig, truth: &GroundTruth) -> Result<FrameStack> {
    let renderer = cfg.renderer()?;
    let mut stack = FrameStack::zeros(cfg.grid, cfg.sequence.frame_times.clone(), cfg.sequence.meta());
    render_range(&renderer, cfg, truth, 0, &mut stack.data);
    Ok(stack)
}

/// Renders frames in batches and hands each one to `visit` in frame order,
/// without holding the whole stack in memory.
pub fn for_each_frame(
    cfg: &SimConfig,
    truth: &GroundTruth,
    batch: usize,
    mut visit: impl FnMut(usize, &[f32]),
) -> Result<()> {
    let renderer = cfg.renderer()?;
    let n = cfg.grid.len();
    let nt = truth.frames.len();
    let batch = batch.max(1);
    let mut buf = vec![0f32; n * batch];
    let mut start = 0;
    while start < nt {
        let m = batch.min(nt - start);
        render_range(&renderer, cfg, truth, start, &mut buf[..m * n]);
        for k in 0..m {
            visit(start + k, &buf[k * n..(k + 1) * n]);
        }
        start += m;
    }
    Ok(())
}

/// Full forward run.
pub fn simulate(cfg: &SimConfig) -> Result<(FrameStack, GroundTruth)> {
    let truth = simulate_truth(cfg)?;
    let stack = render_stack(cfg, &truth)?;
    Ok((stack, truth))
}
