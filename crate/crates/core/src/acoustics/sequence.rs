//! Transmit schedules.
//!
//! AWSALM alternates an activation block (focused, high-MI, long bursts at a
//! low pulse rate) with a burst of compounded plane-wave imaging frames.
//! fast-AWSALM is a uniform train of single plane waves that activate, image
//! and destroy at once.

use super::grid::{SequenceKind, StackMeta};
use super::mi::{derate_mi, Beam, FocusedBeam, PLANE_WAVE_PEAK_DEPTH_MM};
use super::CENTER_FREQUENCY_MHZ;
use crate::geometry::Point;
use crate::kinetics::PulseKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransmitKind {
    PlaneWave { angle_deg: f64 },
    Focused { focus: Point, f_number: f64, cycles: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmitEvent {
    pub kind: TransmitKind,
    pub surface_mi: f64,
    pub center_frequency_mhz: f64,
    pub timestamp: f64,
    /// Imaging frame this transmission contributes to; `None` for activation.
    pub frame: Option<u32>,
}

impl TransmitEvent {
    pub fn pulse_kind(&self) -> PulseKind {
        match self.kind {
            TransmitKind::PlaneWave { .. } => PulseKind::Plane,
            TransmitKind::Focused { .. } => PulseKind::Focused,
        }
    }

    /// Pressure field of this transmission in MI units.
    pub fn beam(&self) -> Beam {
        let f = self.center_frequency_mhz;
        match self.kind {
            TransmitKind::PlaneWave { .. } => Beam::Plane {
                nominal_mi: derate_mi(self.surface_mi, PLANE_WAVE_PEAK_DEPTH_MM, f),
                freq_mhz: f,
            },
            TransmitKind::Focused { focus, f_number, .. } => Beam::Focused(FocusedBeam {
                focus,
                f_number,
                peak_mi: derate_mi(self.surface_mi, focus.z, f),
                freq_mhz: f,
            }),
        }
    }

    /// Nominal (peak derated) MI.
    pub fn nominal_mi(&self) -> f64 {
        match self.beam() {
            Beam::Plane { nominal_mi, .. } => nominal_mi,
            Beam::Focused(b) => b.peak_mi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.surface_mi > 0.0) {
            return Err(Error::param("sequence.mi", "surface MI must be > 0"));
        }
        if let TransmitKind::Focused { cycles, f_number, .. } = self.kind {
            if cycles < 1 {
                return Err(Error::param("sequence.cycles_activation", "must be >= 1"));
            }
            if !(f_number > 0.0) {
                return Err(Error::param("sequence.f_number", "must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub kind: SequenceKind,
    pub events: Vec<TransmitEvent>,
    pub imaging_frame_rate: f64,
    pub compounding: usize,
    /// Acquisition time of each imaging frame (first transmission of the frame).
    pub frame_times: Vec<f64>,
    /// First frame of every imaging block.
    pub block_starts: Vec<usize>,
    /// Total schedule length in seconds.
    pub duration_s: f64,
    /// Time spent in activation blocks.
    pub activation_time_s: f64,
}

impl PulseSequence {
    pub fn n_frames(&self) -> usize {
        self.frame_times.len()
    }

    /// Share of the schedule spent imaging.
    pub fn imaging_fraction(&self) -> f64 {
        if self.duration_s <= 0.0 {
            return 0.0;
        }
        1.0 - self.activation_time_s / self.duration_s
    }

    pub fn count_kind(&self, kind: PulseKind) -> usize {
        self.events.iter().filter(|e| e.pulse_kind() == kind).count()
    }

    pub fn meta(&self) -> StackMeta {
        StackMeta {
            sequence: self.kind,
            frame_rate_hz: self.imaging_frame_rate,
            block_starts: self.block_starts.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.compounding < 1 {
            return Err(Error::param("sequence.compounding", "must be >= 1"));
        }
        for w in self.events.windows(2) {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::Domain(format!(
                    "transmit timestamps must increase strictly ({} s then {} s)",
                    w[0].timestamp, w[1].timestamp
                )));
            }
        }
        for e in &self.events {
            e.validate()?;
        }
        Ok(())
    }

    /// Uniform train of single plane waves without the paper's parameter
    /// ranges; only physical validity is checked.
    pub fn uniform_plane_wave(nominal_mi: f64, frame_rate_hz: f64, n_frames: usize) -> Result<Self> {
        if !(nominal_mi > 0.0) {
            return Err(Error::param("sequence.mi", "must be > 0"));
        }
        if !(frame_rate_hz > 0.0) {
            return Err(Error::param("sequence.frame_rate_hz", "must be > 0"));
        }
        let surface_mi = nominal_mi / derate_mi(1.0, PLANE_WAVE_PEAK_DEPTH_MM, CENTER_FREQUENCY_MHZ);
        let frame_times: Vec<f64> = (0..n_frames).map(|k| k as f64 / frame_rate_hz).collect();
        let events = frame_times
            .iter()
            .enumerate()
            .map(|(k, &t)| TransmitEvent {
                kind: TransmitKind::PlaneWave { angle_deg: 0.0 },
                surface_mi,
                center_frequency_mhz: CENTER_FREQUENCY_MHZ,
                timestamp: t,
                frame: Some(k as u32),
            })
            .collect();
        Ok(PulseSequence {
            kind: SequenceKind::FastAwsalm,
            events,
            imaging_frame_rate: frame_rate_hz,
            compounding: 1,
            frame_times,
            block_starts: vec![0],
            duration_s: n_frames as f64 / frame_rate_hz,
            activation_time_s: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AwsalmConfig {
    pub focal_points: Vec<Point>,
    pub f_number: f64,
    pub cycles_activation: u32,
    /// Number of activation/imaging cycles.
    pub n_cycles: usize,
    pub imaging_mi: f64,
    pub activation_mi: f64,
    /// Compounded imaging frame rate.
    pub frame_rate_hz: f64,
    pub compounding: usize,
    pub angle_step_deg: f64,
    /// Pulse rate of the focused activation transmissions.
    pub activation_rate_hz: f64,
    pub activation_pulses: usize,
    pub frames_per_block: usize,
}

impl Default for AwsalmConfig {
    fn default() -> Self {
        AwsalmConfig {
            focal_points: vec![Point::new(16.0, 0.0)],
            f_number: 2.0,
            cycles_activation: 20,
            n_cycles: 18,
            imaging_mi: 0.1,
            activation_mi: 1.5,
            frame_rate_hz: 500.0,
            compounding: 5,
            angle_step_deg: 5.0,
            activation_rate_hz: 50.0,
            activation_pulses: 2,
            frames_per_block: 85,
        }
    }
}

impl AwsalmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.focal_points.is_empty() {
            return Err(Error::param("sequence.focal_points", "at least one focal point is required"));
        }
        for p in &self.focal_points {
            if !(5.0..=30.0).contains(&p.z) || !(-15.0..=15.0).contains(&p.x) {
                return Err(Error::param(
                    "sequence.focal_points",
                    format!("focus ({}, {}) mm outside depth 5-30 mm / lateral ±15 mm", p.z, p.x),
                ));
            }
        }
        let positive = [
            ("sequence.f_number", self.f_number),
            ("sequence.imaging_mi", self.imaging_mi),
            ("sequence.activation_mi", self.activation_mi),
            ("sequence.frame_rate_hz", self.frame_rate_hz),
            ("sequence.activation_rate_hz", self.activation_rate_hz),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return Err(Error::param(key, "must be > 0"));
            }
        }
        if self.cycles_activation < 1 {
            return Err(Error::param("sequence.cycles_activation", "must be >= 1"));
        }
        if self.n_cycles < 1 {
            return Err(Error::param("sequence.n_cycles", "must be >= 1"));
        }
        if self.compounding < 1 {
            return Err(Error::param("sequence.compounding", "must be >= 1"));
        }
        if self.activation_pulses < 1 || self.frames_per_block < 1 {
            return Err(Error::param("sequence.frames_per_block", "blocks must not be empty"));
        }
        Ok(())
    }

    pub fn angles_deg(&self) -> Vec<f64> {
        let mid = (self.compounding as f64 - 1.0) / 2.0;
        (0..self.compounding)
            .map(|k| (k as f64 - mid) * self.angle_step_deg)
            .collect()
    }
}

/// AWSALM schedule: every cycle is an activation block of focused bursts
/// (cycling through the focal points) followed by an imaging block.
pub fn build_awsalm_sequence(cfg: &AwsalmConfig) -> Result<PulseSequence> {
    cfg.validate()?;
    let f0 = CENTER_FREQUENCY_MHZ;
    let plane_surface = cfg.imaging_mi / derate_mi(1.0, PLANE_WAVE_PEAK_DEPTH_MM, f0);
    let angles = cfg.angles_deg();
    let act_period = 1.0 / cfg.activation_rate_hz;
    let frame_period = 1.0 / cfg.frame_rate_hz;
    let angle_period = frame_period / cfg.compounding as f64;
    let act_block = cfg.activation_pulses as f64 * act_period;
    let img_block = cfg.frames_per_block as f64 * frame_period;
    let cycle = act_block + img_block;

    let mut events = Vec::new();
    let mut frame_times = Vec::new();
    let mut block_starts = Vec::new();
    for c in 0..cfg.n_cycles {
        let t_cycle = c as f64 * cycle;
        for p in 0..cfg.activation_pulses {
            let focus = cfg.focal_points[p % cfg.focal_points.len()];
            events.push(TransmitEvent {
                kind: TransmitKind::Focused {
                    focus,
                    f_number: cfg.f_number,
                    cycles: cfg.cycles_activation,
                },
                surface_mi: cfg.activation_mi / derate_mi(1.0, focus.z, f0),
                center_frequency_mhz: f0,
                timestamp: t_cycle + p as f64 * act_period,
                frame: None,
            });
        }
        block_starts.push(frame_times.len());
        let t_img = t_cycle + act_block;
        for f in 0..cfg.frames_per_block {
            let frame = frame_times.len() as u32;
            let t_frame = t_img + f as f64 * frame_period;
            frame_times.push(t_frame);
            for (a, &angle) in angles.iter().enumerate() {
                events.push(TransmitEvent {
                    kind: TransmitKind::PlaneWave { angle_deg: angle },
                    surface_mi: plane_surface,
                    center_frequency_mhz: f0,
                    timestamp: t_frame + a as f64 * angle_period,
                    frame: Some(frame),
                });
            }
        }
    }
    let seq = PulseSequence {
        kind: SequenceKind::Awsalm,
        events,
        imaging_frame_rate: cfg.frame_rate_hz,
        compounding: cfg.compounding,
        frame_times,
        block_starts,
        duration_s: cfg.n_cycles as f64 * cycle,
        activation_time_s: cfg.n_cycles as f64 * act_block,
    };
    seq.validate()?;
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastAwsalmConfig {
    pub mi: f64,
    pub frame_rate_hz: f64,
    pub duration_s: f64,
}

impl Default for FastAwsalmConfig {
    fn default() -> Self {
        FastAwsalmConfig {
            mi: 0.22,
            frame_rate_hz: 5000.0,
            duration_s: 1.0,
        }
    }
}

impl FastAwsalmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.06..=0.65).contains(&self.mi) {
            return Err(Error::param("sequence.mi", format!("{} outside 0.06-0.65", self.mi)));
        }
        if !(2000.0..=10000.0).contains(&self.frame_rate_hz) {
            return Err(Error::param(
                "sequence.frame_rate_hz",
                format!("{} outside 2000-10000 Hz", self.frame_rate_hz),
            ));
        }
        if !(0.25..=1.0).contains(&self.duration_s) {
            return Err(Error::param(
                "sequence.duration_s",
                format!("{} outside 0.25-1 s", self.duration_s),
            ));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.frame_rate_hz).round() as usize
    }
}

pub fn build_fast_awsalm_sequence(cfg: &FastAwsalmConfig) -> Result<PulseSequence> {
    cfg.validate()?;
    PulseSequence::uniform_plane_wave(cfg.mi, cfg.frame_rate_hz, cfg.n_frames())
}
