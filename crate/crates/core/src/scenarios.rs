//! Desk-scale experiments: each scenario builds a phantom and sequence,
//! simulates, runs the pipeline where needed and reduces the result to the
//! numbers the figure reports are built from.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::acoustics::grid::{Grid, Image};
use crate::acoustics::psf::PsfModel;
use crate::acoustics::sequence::{build_awsalm_sequence, AwsalmConfig, FastAwsalmConfig, PulseSequence};
use crate::geometry::{Point, Polygon};
use crate::kinetics::{destruction_probability, geometric_gof, Gas, GasSpecies, SwitchingParams};
use crate::maps::{
    accumulate_maps, normalize_dose_response, profile_band_fwhm, resolution_gain, time_gate, DoseKey, ProfileMeasurement,
    RoiMask, SrMaps, DEFAULT_SR_PITCH_UM,
};
use crate::phantom::{build_straight_vessel, BranchingTree, CrossedTubes, FlowField, FlowProfile, Phantom, Pulsatility};
use crate::pipeline::{self, PipelineConfig, PipelineOutput, Track};
use crate::sim::{self, GroundTruth, SimConfig};
use crate::{Error, Result};

/// MI grid of the dose-response sweep.
pub const DOSE_MI_GRID: [f64; 8] = [0.06, 0.11, 0.17, 0.22, 0.28, 0.34, 0.5, 0.65];

/// Cardiac-like modulation used by the gating scenario.
pub const CARDIAC: Pulsatility = Pulsatility {
    amplitude: 0.8,
    period_s: 1.0,
    phase_rad: 0.0,
};

/// Volume flow (µL/min) giving a mean velocity of `v` mm/s in a tube of `d` µm.
pub fn flow_for_velocity(v_mm_s: f64, d_um: f64) -> f64 {
    let r = d_um * 5e-4;
    v_mm_s * PI * r * r * 60.0
}

/// Simulation settings shared by the scenarios; phantom, sequence and grid
/// are filled in by each one.
fn base_config(phantom: Phantom, gas: Gas, sequence: PulseSequence, grid: Grid, psf: PsfModel, seed: u64) -> SimConfig {
    SimConfig {
        flow: FlowField::from_phantom(&phantom),
        phantom,
        gas: GasSpecies::defaults(gas),
        switching: SwitchingParams::default(),
        concentration: 20.0,
        sequence,
        grid,
        psf,
        noise_sigma: 0.02,
        clutter_mean: 0.5,
        motion: None,
        attenuation_db_per_cm: 0.0,
        bubble_amplitude: 1.0,
        seed,
    }
}

/// Pipeline settings matched to a simulation. Simulated tissue clutter is
/// static (rank one), so only the first singular component is removed; the
/// 5% default would also strip the strongest bubbles of a sparse scene.
pub fn pipeline_for(cfg: &SimConfig) -> PipelineConfig {
    PipelineConfig {
        psf: cfg.psf,
        svd_low_frac: 0.0,
        ..PipelineConfig::default()
    }
}

/// Simulated acquisition after processing.
#[derive(Debug, Clone)]
pub struct Processed {
    pub truth: GroundTruth,
    pub output: PipelineOutput,
    /// Sum of the unfiltered frames.
    pub bmode: Image,
    pub grid: Grid,
}

pub fn simulate_and_process(cfg: &SimConfig, pipe: &PipelineConfig) -> Result<Processed> {
    let (mut stack, truth) = sim::simulate(cfg)?;
    let bmode = stack.sum_frames();
    let output = pipeline::run(&mut stack, pipe)?;
    Ok(Processed {
        truth,
        output,
        bmode,
        grid: cfg.grid,
    })
}

/// SR grid covering a source grid at `pitch_um`.
pub fn sr_grid(source: &Grid, pitch_um: f64) -> Result<Grid> {
    Ok(SrMaps::spanning(source.origin.z, source.z_max(), source.origin.x, source.x_max(), pitch_um, source.pitch_um)?.grid)
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-rank percentile, `q` in [0, 100].
pub fn percentile(sorted: &[u32], q: f64) -> u32 {
    if sorted.is_empty() {
        return 0;
    }
    let k = ((q / 100.0 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

/// Thin rectangle around the axis `a`–`b`.
fn band_polygon(a: Point, b: Point, half_width: f64) -> Polygon {
    let u = b - a;
    let n = (u * (1.0 / u.norm())).perp() * half_width;
    Polygon::new(vec![a + n, b + n, b - n, a - n])
}

// ---------------------------------------------------------------- dose

#[derive(Debug, Clone)]
pub struct DoseResponse {
    pub mi_grid: Vec<f64>,
    pub gases: Vec<Gas>,
    pub frame_rate_hz: f64,
    pub n_frames: usize,
    /// Droplets per mm of tube.
    pub concentration: f64,
    /// Lateral half-extent of the tube ROI (mm).
    pub roi_half_extent: f64,
    pub noise_sigma: f64,
    pub clutter_mean: f64,
    pub seed: u64,
}

impl Default for DoseResponse {
    fn default() -> Self {
        DoseResponse {
            mi_grid: DOSE_MI_GRID.to_vec(),
            gases: Gas::ALL.to_vec(),
            frame_rate_hz: 5000.0,
            n_frames: 5000,
            concentration: 100.0,
            roi_half_extent: 8.0,
            noise_sigma: 0.005,
            clutter_mean: 0.5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DoseCurve {
    pub gas: Gas,
    /// `(MI, normalized intensity)`.
    pub points: Vec<(f64, f64)>,
}

impl DoseCurve {
    pub fn peak_mi(&self) -> f64 {
        self.points.iter().copied().fold((f64::NAN, f64::NEG_INFINITY), |m, p| if p.1 > m.1 { p } else { m }).0
    }
}

#[derive(Debug, Clone)]
pub struct DoseResult {
    /// Time-averaged ROI mean per acquisition.
    pub raw: BTreeMap<DoseKey, f64>,
    pub curves: Vec<DoseCurve>,
}

impl DoseResponse {
    fn phantom(&self) -> Result<Phantom> {
        CrossedTubes::default().build()
    }

    fn grid(&self) -> Result<Grid> {
        let t = CrossedTubes::default();
        let dz = self.roi_half_extent * (t.crossing_angle_deg / 2.0).to_radians().tan() + 0.5;
        let c = t.crossing_depth_mm;
        Grid::spanning(c - dz, c + dz, -self.roi_half_extent, self.roi_half_extent, 50.0)
    }

    /// ROI: both tube axes with a 150 µm margin, out to the lateral half-extent.
    pub fn roi(&self) -> Result<RoiMask> {
        let phantom = self.phantom()?;
        let polys: Vec<Polygon> = phantom
            .segments
            .iter()
            .map(|s| {
                let u = s.direction();
                let c = (s.start + s.end) * 0.5;
                let h = self.roi_half_extent / u.x.abs();
                band_polygon(c - u * h, c + u * h, s.radius_mm() + 0.15)
            })
            .collect();
        RoiMask::union(&self.grid()?, &polys)
    }

    /// Time-averaged ROI intensity of one acquisition.
    pub fn acquisition(&self, gas: Gas, mi: f64) -> Result<f64> {
        let seq = PulseSequence::uniform_plane_wave(mi, self.frame_rate_hz, self.n_frames)?;
        let mut cfg = base_config(self.phantom()?, gas, seq, self.grid()?, PsfModel::FAST_AWSALM, self.seed);
        cfg.concentration = self.concentration;
        cfg.noise_sigma = self.noise_sigma;
        cfg.clutter_mean = self.clutter_mean;
        let roi = self.roi()?;
        let truth = sim::simulate_truth(&cfg)?;
        let mut sum = 0.0;
        sim::for_each_frame(&cfg, &truth, 64, |_, frame| sum += roi.mean(frame))?;
        Ok(sum / self.n_frames.max(1) as f64)
    }

    pub fn run(&self) -> Result<DoseResult> {
        let mut raw = BTreeMap::new();
        if !self.gases.contains(&Gas::C4F10) || !self.mi_grid.iter().any(|&m| DoseKey::new(Gas::C4F10, m) == DoseKey::REFERENCE) {
            raw.insert(DoseKey::REFERENCE, self.acquisition(Gas::C4F10, DoseKey::REFERENCE.mi())?);
        }
        for &gas in &self.gases {
            for &mi in &self.mi_grid {
                let v = self.acquisition(gas, mi)?;
                log::info!("dose {} MI {mi}: {v:.5}", gas.name());
                raw.insert(DoseKey::new(gas, mi), v);
            }
        }
        let norm = normalize_dose_response(&raw)?;
        let curves = self
            .gases
            .iter()
            .map(|&gas| DoseCurve {
                gas,
                points: self.mi_grid.iter().map(|&mi| (mi, norm[&DoseKey::new(gas, mi)])).collect(),
            })
            .collect();
        Ok(DoseResult { raw, curves })
    }
}

// ----------------------------------------------------------- lifetimes

#[derive(Debug, Clone)]
pub struct LifetimeStudy {
    pub mi: f64,
    pub frame_rate_hz: f64,
    pub n_frames: usize,
    pub concentration: f64,
    pub seed: u64,
}

impl Default for LifetimeStudy {
    fn default() -> Self {
        LifetimeStudy {
            mi: 0.22,
            frame_rate_hz: 5000.0,
            n_frames: 2500,
            concentration: 20.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LifetimeResult {
    /// Completed lifetimes, sorted.
    pub lifetimes: Vec<u32>,
    pub p5: u32,
    pub p95: u32,
    pub destruction_probability: f64,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl LifetimeStudy {
    pub fn run(&self) -> Result<LifetimeResult> {
        // lateral vessel at the plane-wave MI peak so every bubble sees the nominal MI
        let phantom = build_straight_vessel(Point::new(14.0, -10.0), Point::new(14.0, 10.0), 200.0, 30.0)?;
        let seq = PulseSequence::uniform_plane_wave(self.mi, self.frame_rate_hz, self.n_frames)?;
        let grid = Grid::spanning(13.5, 14.5, -10.0, 10.0, 50.0)?;
        let mut cfg = base_config(phantom, Gas::C3F8, seq, grid, PsfModel::FAST_AWSALM, self.seed);
        cfg.concentration = self.concentration;
        let truth = sim::simulate_truth(&cfg)?;
        let mut lifetimes = truth.lifetimes;
        lifetimes.sort_unstable();
        let p = destruction_probability(&cfg.switching, self.mi);
        let (chi2, dof, p_value) = geometric_gof(&lifetimes, p);
        Ok(LifetimeResult {
            p5: percentile(&lifetimes, 5.0),
            p95: percentile(&lifetimes, 95.0),
            lifetimes,
            destruction_probability: p,
            chi2,
            dof,
            p_value,
        })
    }
}

// ------------------------------------------------------------ velocity

/// Lateral tube with plug flow; median tracked speed against the set speed.
#[derive(Debug, Clone)]
pub struct VelocityStudy {
    pub speed_mm_s: f64,
    pub diameter_um: f64,
    pub mi: f64,
    pub frame_rate_hz: f64,
    pub n_frames: usize,
    pub concentration: f64,
    /// Shortest track (points) that enters the speed estimate.
    pub min_track_length: usize,
    pub seed: u64,
}

impl Default for VelocityStudy {
    fn default() -> Self {
        VelocityStudy {
            speed_mm_s: 16.0,
            diameter_um: 200.0,
            mi: 0.17,
            frame_rate_hz: 5000.0,
            n_frames: 2500,
            concentration: 10.0,
            min_track_length: 15,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VelocityResult {
    pub median_speed: f64,
    pub n_tracks: usize,
    pub relative_error: f64,
}

impl VelocityStudy {
    pub fn sim_config(&self) -> Result<SimConfig> {
        let q = flow_for_velocity(self.speed_mm_s, self.diameter_um);
        let phantom = build_straight_vessel(Point::new(14.0, -6.0), Point::new(14.0, 6.0), self.diameter_um, q)?;
        let seq = PulseSequence::uniform_plane_wave(self.mi, self.frame_rate_hz, self.n_frames)?;
        let grid = Grid::spanning(12.5, 15.5, -5.0, 5.0, 50.0)?;
        let mut cfg = base_config(phantom, Gas::C3F8, seq, grid, PsfModel::FAST_AWSALM, self.seed);
        cfg.concentration = self.concentration;
        Ok(cfg)
    }

    pub fn run(&self) -> Result<VelocityResult> {
        let cfg = self.sim_config()?;
        let mut pipe = pipeline_for(&cfg);
        pipe.track.min_track_length = self.min_track_length;
        let run = simulate_and_process(&cfg, &pipe)?;
        let mut speeds: Vec<f64> = run.output.tracks.iter().map(Track::speed).filter(|s| s.is_finite()).collect();
        let median_speed = median(&mut speeds);
        Ok(VelocityResult {
            median_speed,
            n_tracks: speeds.len(),
            relative_error: median_speed / self.speed_mm_s - 1.0,
        })
    }
}

// --------------------------------------------------------------- width

/// Axially running vessel imaged with the compounded PSF; SR width measured
/// across it and compared with the lateral PSF FWHM.
#[derive(Debug, Clone)]
pub struct WidthStudy {
    pub diameter_um: f64,
    pub speed_mm_s: f64,
    pub mi: f64,
    pub frame_rate_hz: f64,
    pub n_frames: usize,
    pub concentration: f64,
    pub psf: PsfModel,
    pub sr_pitch_um: f64,
    pub seeds: Vec<u64>,
}

impl Default for WidthStudy {
    fn default() -> Self {
        WidthStudy {
            diameter_um: 100.0,
            speed_mm_s: 16.0,
            mi: 0.185,
            frame_rate_hz: 1000.0,
            n_frames: 3000,
            concentration: 30.0,
            psf: PsfModel::AWSALM,
            sr_pitch_um: DEFAULT_SR_PITCH_UM,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone)]
pub struct WidthRun {
    pub seed: u64,
    pub profile: ProfileMeasurement,
    pub maps: SrMaps,
    pub n_tracks: usize,
}

impl WidthRun {
    /// Width of the strongest peak, NaN when none was found.
    pub fn fwhm_um(&self) -> f64 {
        let p = &self.profile;
        (0..p.peaks_um.len())
            .max_by(|&a, &b| {
                let ya = peak_height(p, a);
                let yb = peak_height(p, b);
                ya.total_cmp(&yb)
            })
            .map_or(f64::NAN, |k| p.fwhm_um[k])
    }
}

fn peak_height(p: &ProfileMeasurement, k: usize) -> f64 {
    let x = p.peaks_um[k];
    let i = p.distance_um.partition_point(|&d| d < x).min(p.intensity.len() - 1);
    p.intensity[i]
}

#[derive(Debug, Clone)]
pub struct WidthResult {
    pub runs: Vec<WidthRun>,
    pub median_fwhm_um: f64,
    pub resolution_gain: f64,
}

impl WidthStudy {
    pub fn sim_config(&self, seed: u64) -> Result<SimConfig> {
        let q = flow_for_velocity(self.speed_mm_s, self.diameter_um);
        let phantom = build_straight_vessel(Point::new(10.0, 0.0), Point::new(18.0, 0.0), self.diameter_um, q)?;
        let seq = PulseSequence::uniform_plane_wave(self.mi, self.frame_rate_hz, self.n_frames)?;
        let grid = Grid::spanning(11.0, 17.0, -1.5, 1.5, 50.0)?;
        let mut cfg = base_config(phantom, Gas::C3F8, seq, grid, self.psf, seed);
        cfg.concentration = self.concentration;
        Ok(cfg)
    }

    pub fn run_seed(&self, seed: u64) -> Result<WidthRun> {
        let cfg = self.sim_config(seed)?;
        let run = simulate_and_process(&cfg, &pipeline_for(&cfg))?;
        let maps = accumulate_maps(&run.output.tracks, sr_grid(&cfg.grid, self.sr_pitch_um)?);
        let profile = profile_band_fwhm(&maps.density(), &maps.grid, Point::new(14.0, -0.5), Point::new(14.0, 0.5), 1.5, 0.2)?;
        Ok(WidthRun {
            seed,
            profile,
            maps,
            n_tracks: run.output.tracks.len(),
        })
    }

    pub fn run(&self) -> Result<WidthResult> {
        let runs = self.seeds.iter().map(|&s| self.run_seed(s)).collect::<Result<Vec<_>>>()?;
        let mut w: Vec<f64> = runs.iter().map(WidthRun::fwhm_um).collect();
        let median_fwhm_um = median(&mut w);
        let resolution_gain = if median_fwhm_um.is_finite() {
            resolution_gain(median_fwhm_um, self.psf.fwhm_lateral_um)?
        } else {
            f64::NAN
        };
        Ok(WidthResult {
            runs,
            median_fwhm_um,
            resolution_gain,
        })
    }
}

// ------------------------------------------------------- crossed tubes

/// Crossed tubes imaged with a 1000 Hz plane-wave sequence; SR density and
/// summed B-mode sampled across both tubes where their axes are 250 µm apart.
#[derive(Debug, Clone)]
pub struct CrossedTubeSr {
    pub mi: f64,
    pub gas: Gas,
    pub frame_rate_hz: f64,
    pub n_frames: usize,
    pub concentration: f64,
    pub separation_um: f64,
    pub sr_pitch_um: f64,
    /// Half width of the averaging band around the profile line (mm).
    pub band_half_width: f64,
    pub seed: u64,
}

impl Default for CrossedTubeSr {
    fn default() -> Self {
        CrossedTubeSr {
            mi: 0.186,
            gas: Gas::C3F8,
            frame_rate_hz: 1000.0,
            n_frames: 1000,
            concentration: 15.0,
            separation_um: 250.0,
            sr_pitch_um: DEFAULT_SR_PITCH_UM,
            band_half_width: 0.1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossedTubeResult {
    pub sr: ProfileMeasurement,
    pub bmode: ProfileMeasurement,
    pub sr_dip: Option<TubeDip>,
    pub bmode_dip: Option<TubeDip>,
    pub maps: SrMaps,
    pub bmode_image: Image,
    pub grid: Grid,
    pub n_tracks: usize,
}

/// Two-tube reading of a profile: the strongest sample inside each tube's
/// expected interval and the lowest sample between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeDip {
    pub peaks_um: (f64, f64),
    pub heights: (f64, f64),
    pub minimum: f64,
}

impl TubeDip {
    /// Minimum over the lower peak.
    pub fn ratio(&self) -> f64 {
        let low = self.heights.0.min(self.heights.1);
        if low > 0.0 {
            self.minimum / low
        } else {
            1.0
        }
    }

    pub fn resolved(&self) -> bool {
        self.ratio() < 0.5
    }
}

/// Reads a two-tube profile with tube centres `centres_um` along the line and
/// tube half-extent `half_um` along the line.
pub fn tube_dip(p: &ProfileMeasurement, centres_um: (f64, f64), half_um: f64) -> Option<TubeDip> {
    let best = |c: f64| {
        (0..p.intensity.len())
            .filter(|&k| (p.distance_um[k] - c).abs() <= half_um)
            .max_by(|&a, &b| p.intensity[a].total_cmp(&p.intensity[b]).then(b.cmp(&a)))
    };
    let (a, b) = (best(centres_um.0)?, best(centres_um.1)?);
    let (a, b) = (a.min(b), a.max(b));
    let minimum = p.intensity[a..=b].iter().copied().fold(f64::INFINITY, f64::min);
    Some(TubeDip {
        peaks_um: (p.distance_um[a], p.distance_um[b]),
        heights: (p.intensity[a], p.intensity[b]),
        minimum,
    })
}

impl CrossedTubeSr {
    pub fn tubes(&self) -> CrossedTubes {
        CrossedTubes::default()
    }

    /// Expected tube centres along the profile line and the tubes' half
    /// extent along it (µm).
    pub fn expected(&self) -> ((f64, f64), f64) {
        let t = self.tubes();
        let half_angle = (t.crossing_angle_deg / 2.0).to_radians();
        let (a, b) = self.profile_line();
        let mid = a.distance(b) * 500.0;
        let s = self.separation_um / 2.0;
        ((mid - s, mid + s), t.diameter_um / 2.0 / half_angle.cos())
    }

    /// Axial profile line through the point where the tube axes are
    /// `separation_um` apart.
    pub fn profile_line(&self) -> (Point, Point) {
        let t = self.tubes();
        let tan = (t.crossing_angle_deg / 2.0).to_radians().tan();
        let x = self.separation_um * 1e-3 / (2.0 * tan);
        let c = t.crossing_depth_mm;
        (Point::new(c - 0.6, x), Point::new(c + 0.6, x))
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let t = self.tubes();
        let seq = PulseSequence::uniform_plane_wave(self.mi, self.frame_rate_hz, self.n_frames)?;
        let c = t.crossing_depth_mm;
        let grid = Grid::spanning(c - 2.0, c + 2.0, -3.0, 3.0, 50.0)?;
        let mut cfg = base_config(t.build()?, self.gas, seq, grid, PsfModel::FAST_AWSALM, self.seed);
        cfg.concentration = self.concentration;
        Ok(cfg)
    }

    pub fn run(&self) -> Result<CrossedTubeResult> {
        let cfg = self.sim_config()?;
        let run = simulate_and_process(&cfg, &pipeline_for(&cfg))?;
        let maps = accumulate_maps(&run.output.tracks, sr_grid(&cfg.grid, self.sr_pitch_um)?);
        let (a, b) = self.profile_line();
        let sr = profile_band_fwhm(&maps.density(), &maps.grid, a, b, self.band_half_width, 0.2)?;
        let bmode = profile_band_fwhm(&run.bmode, &cfg.grid, a, b, self.band_half_width, 0.2)?;
        let (centres, half) = self.expected();
        Ok(CrossedTubeResult {
            sr_dip: tube_dip(&sr, centres, half),
            bmode_dip: tube_dip(&bmode, centres, half),
            sr,
            bmode,
            maps,
            bmode_image: run.bmode,
            grid: cfg.grid,
            n_tracks: run.output.tracks.len(),
        })
    }
}

// -------------------------------------------------- selective activation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Left,
    Full,
    Right,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Left, Activation::Full, Activation::Right];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Left => "left",
            Activation::Full => "full",
            Activation::Right => "right",
        }
    }
}

/// Focused AWSALM activation of one branch of a tree (C4F10) against
/// full-plane fast-AWSALM (C3F8) on the same phantom.
#[derive(Debug, Clone)]
pub struct SelectiveActivation {
    pub tree: BranchingTree,
    pub awsalm: AwsalmConfig,
    pub fast: FastAwsalmConfig,
    pub concentration: f64,
    pub sr_pitch_um: f64,
    pub seed: u64,
}

impl Default for SelectiveActivation {
    fn default() -> Self {
        SelectiveActivation {
            tree: BranchingTree::default(),
            awsalm: AwsalmConfig {
                n_cycles: 6,
                ..AwsalmConfig::default()
            },
            fast: FastAwsalmConfig {
                mi: 0.22,
                frame_rate_hz: 2000.0,
                duration_s: 0.25,
            },
            concentration: 30.0,
            sr_pitch_um: 25.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectiveRun {
    pub activation: Activation,
    pub events: usize,
    pub left_fraction: f64,
    pub right_fraction: f64,
    pub maps: SrMaps,
}

impl SelectiveActivation {
    pub fn grid(&self) -> Result<Grid> {
        Grid::spanning(3.0, 17.0, -5.0, 5.0, 50.0)
    }

    /// Focus on the middle of a level-2 segment.
    pub fn focus(&self, phantom: &Phantom, side: Activation) -> Point {
        let s = &phantom.segments[if side == Activation::Left { 1 } else { 2 }];
        (s.start + s.end) * 0.5
    }

    pub fn sim_config(&self, activation: Activation) -> Result<SimConfig> {
        let phantom = self.tree.build()?;
        let (gas, seq, psf) = match activation {
            Activation::Full => (Gas::C3F8, crate::acoustics::sequence::build_fast_awsalm_sequence(&self.fast)?, PsfModel::FAST_AWSALM),
            side => {
                let cfg = AwsalmConfig {
                    focal_points: vec![self.focus(&phantom, side)],
                    ..self.awsalm.clone()
                };
                (Gas::C4F10, build_awsalm_sequence(&cfg)?, PsfModel::AWSALM)
            }
        };
        let mut cfg = base_config(phantom, gas, seq, self.grid()?, psf, self.seed);
        cfg.concentration = self.concentration;
        Ok(cfg)
    }

    pub fn run_one(&self, activation: Activation) -> Result<SelectiveRun> {
        let cfg = self.sim_config(activation)?;
        let run = simulate_and_process(&cfg, &pipeline_for(&cfg))?;
        let phantom = &cfg.phantom;
        let (left, right) = (phantom.subtree(1), phantom.subtree(2));
        let (mut n, mut l, mut r) = (0usize, 0usize, 0usize);
        for t in &run.output.tracks {
            for p in &t.points {
                n += 1;
                match phantom.nearest_segment(p.position) {
                    Some(s) if left.contains(&s) => l += 1,
                    Some(s) if right.contains(&s) => r += 1,
                    _ => {}
                }
            }
        }
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        Ok(SelectiveRun {
            activation,
            events: n,
            left_fraction: frac(l),
            right_fraction: frac(r),
            maps: accumulate_maps(&run.output.tracks, sr_grid(&cfg.grid, self.sr_pitch_um)?),
        })
    }

    pub fn run(&self) -> Result<Vec<SelectiveRun>> {
        Activation::ALL.iter().map(|&a| self.run_one(a)).collect()
    }
}

// -------------------------------------------------------------- gating

/// One pulsatile fast-AWSALM run on the tree, gated into systole and
/// diastole windows.
#[derive(Debug, Clone)]
pub struct GatingStudy {
    pub tree: BranchingTree,
    pub pulsatility: Pulsatility,
    pub fast: FastAwsalmConfig,
    pub concentration: f64,
    pub systole: (f64, f64),
    pub diastole: (f64, f64),
    pub sr_pitch_um: f64,
    /// Cells within this distance (mm) beyond a small vessel's wall count as
    /// belonging to it.
    pub cell_margin: f64,
    pub seed: u64,
}

impl Default for GatingStudy {
    fn default() -> Self {
        GatingStudy {
            tree: BranchingTree::default(),
            pulsatility: CARDIAC,
            fast: FastAwsalmConfig {
                mi: 0.22,
                frame_rate_hz: 2000.0,
                duration_s: 1.0,
            },
            concentration: 30.0,
            systole: (0.125, 0.375),
            diastole: (0.625, 0.875),
            sr_pitch_um: DEFAULT_SR_PITCH_UM,
            cell_margin: 0.05,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatingResult {
    pub systole_cells: usize,
    pub diastole_cells: usize,
    pub systole: SrMaps,
    pub diastole: SrMaps,
    pub full: SrMaps,
    /// Whether gating `[0, T)` into consecutive windows reproduces every event.
    pub partition_exact: bool,
}

impl GatingResult {
    pub fn reduction(&self) -> f64 {
        if self.systole_cells == 0 {
            return 0.0;
        }
        1.0 - self.diastole_cells as f64 / self.systole_cells as f64
    }
}

impl GatingStudy {
    pub fn sim_config(&self) -> Result<SimConfig> {
        let phantom = self.tree.build()?;
        let seq = crate::acoustics::sequence::build_fast_awsalm_sequence(&self.fast)?;
        let grid = Grid::spanning(3.0, 17.0, -5.0, 5.0, 50.0)?;
        let mut cfg = base_config(phantom, Gas::C3F8, seq, grid, PsfModel::FAST_AWSALM, self.seed);
        cfg.flow = FlowField::from_phantom(&cfg.phantom).with_pulsatility(self.pulsatility);
        cfg.flow.profile = FlowProfile::Plug;
        cfg.concentration = self.concentration;
        Ok(cfg)
    }

    /// Deepest-level segments of the tree.
    pub fn small_vessels(phantom: &Phantom) -> Vec<usize> {
        (0..phantom.segments.len()).filter(|&s| phantom.segments[s].children.is_empty()).collect()
    }

    fn small_vessel_cells(&self, maps: &SrMaps, phantom: &Phantom, small: &[usize]) -> usize {
        let g = maps.grid;
        let mut n = 0;
        for j in 0..g.nx {
            for i in 0..g.nz {
                if maps.count[g.index(i, j)] == 0 {
                    continue;
                }
                let p = g.point(i, j);
                if let Some(s) = phantom.nearest_segment(p) {
                    let seg = &phantom.segments[s];
                    let d = crate::geometry::distance_to_segment(p, seg.start, seg.end).0;
                    if small.contains(&s) && d <= seg.radius_mm() + self.cell_margin {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    pub fn run(&self) -> Result<GatingResult> {
        let cfg = self.sim_config()?;
        let run = simulate_and_process(&cfg, &pipeline_for(&cfg))?;
        let tracks = &run.output.tracks;
        let grid = sr_grid(&cfg.grid, self.sr_pitch_um)?;
        let min_len = 1;
        let sys = accumulate_maps(&time_gate(tracks, self.systole.0, self.systole.1, min_len)?, grid);
        let dia = accumulate_maps(&time_gate(tracks, self.diastole.0, self.diastole.1, min_len)?, grid);
        let full = accumulate_maps(tracks, grid);

        let t_end = cfg.sequence.frame_times.last().copied().unwrap_or(0.0) + 1.0;
        let edges = [0.0, 0.25, 0.5, 0.75, t_end];
        let mut parts = SrMaps::new(grid);
        let mut gated_events = 0usize;
        for w in edges.windows(2) {
            let g = time_gate(tracks, w[0], w[1], min_len)?;
            gated_events += g.iter().map(|t| t.points.len()).sum::<usize>();
            parts.merge(&accumulate_maps(&g, grid));
        }
        let total: usize = tracks.iter().map(|t| t.points.len()).sum();
        let partition_exact = gated_events == total && parts.count == full.count;

        let small = Self::small_vessels(&cfg.phantom);
        Ok(GatingResult {
            systole_cells: self.small_vessel_cells(&sys, &cfg.phantom, &small),
            diastole_cells: self.small_vessel_cells(&dia, &cfg.phantom, &small),
            systole: sys,
            diastole: dia,
            full,
            partition_exact,
        })
    }
}

/// Fails with a domain error when `cond` is false.
pub fn ensure(cond: bool, what: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Domain(what.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_for_16_mm_s_in_200_um() {
        let q = flow_for_velocity(16.0, 200.0);
        assert!((q - 30.159).abs() < 1e-3, "{q}");
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<u32> = (1..=100).collect();
        assert_eq!(percentile(&v, 5.0), 5);
        assert_eq!(percentile(&v, 95.0), 95);
        assert_eq!(percentile(&v, 0.0), 1);
        assert_eq!(percentile(&[], 50.0), 0);
    }

    #[test]
    fn crossed_profile_line_sits_at_requested_separation() {
        let s = CrossedTubeSr::default();
        let (a, _) = s.profile_line();
        let tan = 15f64.to_radians().tan();
        let sep = 2.0 * a.x * tan;
        assert!((sep - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dose_roi_covers_both_tubes() {
        let d = DoseResponse::default();
        let roi = d.roi().unwrap();
        let g = d.grid().unwrap();
        // crossing point and a point on each tube near the edge are inside
        let tan = 15f64.to_radians().tan();
        for p in [Point::new(15.0, 0.0), Point::new(15.0 - 7.0 * tan, 7.0), Point::new(15.0 + 7.0 * tan, 7.0)] {
            let (fi, fj) = g.pixel_f(p);
            let k = g.index(fi.round() as usize, fj.round() as usize);
            assert!(roi.indices.contains(&k), "{p:?}");
        }
        assert!(roi.indices.len() < g.len() / 5);
    }

    #[test]
    fn tree_small_vessels_are_leaves() {
        let p = BranchingTree::default().build().unwrap();
        assert_eq!(GatingStudy::small_vessels(&p), vec![3, 4, 5, 6]);
    }
}
