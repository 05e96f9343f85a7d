//! Plain-text experiment configuration.
//!
//! The format is `key = value` lines grouped under `[section]` headers, with
//! `#` or `;` comments. Values come from, in increasing precedence, built-in
//! defaults, the config file, environment variables named
//! `AWSALM_<SECTION>_<KEY>` and explicit command-line overrides. Every error
//! names the offending `section.key`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::acoustics::psf::PsfModel;
use crate::acoustics::render::Motion;
use crate::acoustics::sequence::{
    build_awsalm_sequence, build_fast_awsalm_sequence, AwsalmConfig, FastAwsalmConfig, PulseSequence,
};
use crate::acoustics::grid::{Grid, SequenceKind};
use crate::geometry::{Point, Polygon};
use crate::kinetics::{Gas, GasSpecies, SwitchingParams};
use crate::phantom::{build_straight_vessel, BranchingTree, CrossedTubes, FlowField, FlowProfile, Phantom, Pulsatility};
use crate::pipeline::{PipelineConfig, SvdMode};
use crate::sim::SimConfig;
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "AWSALM_";

/// Where a value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    File(usize),
    Env(String),
    Cli,
}

impl Source {
    fn describe(&self) -> String {
        match self {
            Source::File(line) => format!("line {line}"),
            Source::Env(var) => format!("environment variable {var}"),
            Source::Cli => "command line".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    pub source: Source,
}

/// Raw sectioned key/value store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    pub sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::ConfigSyntax {
                    line,
                    message: format!("unterminated section header `{s}`"),
                })?;
                let name = name.trim().to_ascii_lowercase();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric()) {
                    return Err(Error::ConfigSyntax {
                        line,
                        message: format!("invalid section name `{name}`"),
                    });
                }
                section = Some(name);
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| Error::ConfigSyntax {
                line,
                message: format!("expected `key = value`, found `{s}`"),
            })?;
            let sec = section.clone().ok_or_else(|| Error::ConfigSyntax {
                line,
                message: format!("key `{}` appears before any [section]", k.trim()),
            })?;
            let key = k.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::ConfigSyntax {
                    line,
                    message: "empty key".into(),
                });
            }
            let v = v.split(" #").next().unwrap_or("").trim().to_string();
            let prev = ini.sections.entry(sec.clone()).or_default().insert(
                key.clone(),
                Entry {
                    value: v,
                    source: Source::File(line),
                },
            );
            if let Some(p) = prev {
                return Err(Error::ConfigSyntax {
                    line,
                    message: format!("`{sec}.{key}` already set at {}", p.source.describe()),
                });
            }
        }
        Ok(ini)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ini::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str, source: Source) {
        self.sections.entry(section.to_ascii_lowercase()).or_default().insert(
            key.to_ascii_lowercase(),
            Entry {
                value: value.trim().to_string(),
                source,
            },
        );
    }

    /// Applies `AWSALM_<SECTION>_<KEY>` variables from `vars`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) {
        let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (name, value) in vars {
            if let Some((sec, key)) = name[ENV_PREFIX.len()..].split_once('_') {
                self.set(sec, key, &value, Source::Env(name.clone()));
            }
        }
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::param(spec, "override must look like section.key=value"))?;
        let (sec, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::param(path.trim(), "override key must look like section.key"))?;
        self.set(sec, key, value, Source::Cli);
        Ok(())
    }

    /// Sorted `key = value` text of every explicitly set value.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (sec, keys) in &self.sections {
            out.push_str(&format!("[{sec}]\n"));
            for (k, e) in keys {
                out.push_str(&format!("{k} = {}\n", e.value));
            }
        }
        out
    }

    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Typed reader that tracks which keys were consumed.
struct Reader<'a> {
    ini: &'a Ini,
    used: BTreeMap<(String, String), ()>,
}

impl<'a> Reader<'a> {
    fn new(ini: &'a Ini) -> Self {
        Reader {
            ini,
            used: BTreeMap::new(),
        }
    }

    fn raw(&mut self, sec: &str, key: &str) -> Option<&'a Entry> {
        let e = self.ini.sections.get(sec)?.get(key)?;
        self.used.insert((sec.into(), key.into()), ());
        Some(e)
    }

    fn parse_with<T>(&mut self, sec: &str, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.raw(sec, key) {
            None => Ok(None),
            Some(e) => f(&e.value).map(Some).ok_or_else(|| {
                Error::param(
                    format!("{sec}.{key}"),
                    format!("{}: cannot read `{}` as {what}", e.source.describe(), e.value),
                )
            }),
        }
    }

    fn f64(&mut self, sec: &str, key: &str, default: f64) -> Result<f64> {
        Ok(self
            .parse_with(sec, key, "a number", |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))?
            .unwrap_or(default))
    }

    fn usize(&mut self, sec: &str, key: &str, default: usize) -> Result<usize> {
        Ok(self.parse_with(sec, key, "a non-negative integer", |s| s.parse().ok())?.unwrap_or(default))
    }

    fn u64(&mut self, sec: &str, key: &str, default: u64) -> Result<u64> {
        Ok(self.parse_with(sec, key, "a non-negative integer", |s| s.parse().ok())?.unwrap_or(default))
    }

    fn bool(&mut self, sec: &str, key: &str, default: bool) -> Result<bool> {
        Ok(self
            .parse_with(sec, key, "a boolean", |s| match s.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Some(true),
                "false" | "no" | "off" | "0" => Some(false),
                _ => None,
            })?
            .unwrap_or(default))
    }

    fn string(&mut self, sec: &str, key: &str, default: &str) -> String {
        self.raw(sec, key).map_or(default.to_string(), |e| e.value.clone())
    }

    fn point(&mut self, sec: &str, key: &str, default: Point) -> Result<Point> {
        Ok(self.parse_with(sec, key, "a point `z, x`", parse_point)?.unwrap_or(default))
    }

    fn points(&mut self, sec: &str, key: &str) -> Result<Option<Vec<Point>>> {
        self.parse_with(sec, key, "points `z, x; z, x; ...`", |s| {
            s.split(';').filter(|p| !p.trim().is_empty()).map(parse_point).collect()
        })
    }

    /// `"auto"` maps to `None`.
    fn f64_or_auto(&mut self, sec: &str, key: &str, default: Option<f64>) -> Result<Option<f64>> {
        Ok(self
            .parse_with(sec, key, "a number or `auto`", |s| {
                if s.eq_ignore_ascii_case("auto") {
                    Some(None)
                } else {
                    s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
                }
            })?
            .unwrap_or(default))
    }

    fn bad(&mut self, sec: &str, key: &str, reason: String) -> Error {
        let at = self.raw(sec, key).map(|e| format!("{}: ", e.source.describe())).unwrap_or_default();
        Error::param(format!("{sec}.{key}"), format!("{at}{reason}"))
    }

    fn finish(self) -> Result<()> {
        for (sec, keys) in &self.ini.sections {
            for (key, e) in keys {
                if !self.used.contains_key(&(sec.clone(), key.clone())) {
                    return Err(Error::param(
                        format!("{sec}.{key}"),
                        format!("{}: unknown key", e.source.describe()),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn parse_point(s: &str) -> Option<Point> {
    let (a, b) = s.split_once(',')?;
    let z = a.trim().parse::<f64>().ok()?;
    let x = b.trim().parse::<f64>().ok()?;
    (z.is_finite() && x.is_finite()).then_some(Point::new(z, x))
}

fn fmt_point(p: Point) -> String {
    format!("{}, {}", p.z, p.x)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhantomSpec {
    CrossedTubes(CrossedTubes),
    Tree(BranchingTree),
    Straight {
        start: Point,
        end: Point,
        diameter_um: f64,
        flow_ul_min: f64,
    },
}

impl PhantomSpec {
    pub fn build(&self) -> Result<Phantom> {
        match self {
            PhantomSpec::CrossedTubes(c) => c.build(),
            PhantomSpec::Tree(t) => t.build(),
            PhantomSpec::Straight {
                start,
                end,
                diameter_um,
                flow_ul_min,
            } => build_straight_vessel(*start, *end, *diameter_um, *flow_ul_min),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSection {
    pub spec: PhantomSpec,
    /// Droplets per mm of vessel.
    pub concentration: f64,
    pub pulsatility: Pulsatility,
    pub profile: FlowProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceSpec {
    Awsalm(AwsalmConfig),
    FastAwsalm(FastAwsalmConfig),
    /// Constant-MI plane-wave train without the fast-AWSALM parameter ranges.
    Uniform { mi: f64, frame_rate_hz: f64, n_frames: usize },
}

impl SequenceSpec {
    pub fn build(&self) -> Result<PulseSequence> {
        match self {
            SequenceSpec::Awsalm(c) => build_awsalm_sequence(c),
            SequenceSpec::FastAwsalm(c) => build_fast_awsalm_sequence(c),
            SequenceSpec::Uniform {
                mi,
                frame_rate_hz,
                n_frames,
            } => PulseSequence::uniform_plane_wave(*mi, *frame_rate_hz, *n_frames),
        }
    }

    pub fn kind(&self) -> SequenceKind {
        match self {
            SequenceSpec::Awsalm(_) => SequenceKind::Awsalm,
            _ => SequenceKind::FastAwsalm,
        }
    }

    /// Default PSF of the sequence type.
    pub fn default_psf(&self) -> PsfModel {
        match self.kind() {
            SequenceKind::Awsalm => PsfModel::AWSALM,
            SequenceKind::FastAwsalm => PsfModel::FAST_AWSALM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagingSection {
    /// `(z0, z1, x0, x1)` in mm.
    pub extent: (f64, f64, f64, f64),
    pub pitch_um: f64,
    pub psf: Option<PsfModel>,
    pub noise_sigma: f64,
    pub clutter_mean: f64,
    pub bubble_amplitude: f64,
    pub attenuation_db_per_cm: f64,
    pub motion: Option<Motion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSection {
    pub sr_pitch_um: f64,
    pub roi: Option<Polygon>,
    /// Depth band (mm) of the spatiotemporal projection.
    pub band: Option<(f64, f64)>,
    pub profile: Option<(Point, Point)>,
    pub min_peak_height: f64,
    /// Time gates `[t0, t1)` in seconds.
    pub gates: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub pgm: bool,
    pub csv_maps: bool,
    /// Writes per-frame ground-truth bubble positions.
    pub truth_frames: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub phantom: PhantomSection,
    pub gas: GasSpecies,
    pub switching: SwitchingParams,
    pub sequence: SequenceSpec,
    pub imaging: ImagingSection,
    pub pipeline: PipelineConfig,
    pub analysis: AnalysisSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::from_ini(&Ini::default()).expect("built-in defaults are valid")
    }
}

impl ExperimentConfig {
    /// Reads a config from the file at `path` (if any), the process
    /// environment and `overrides` (`section.key=value`).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<(Self, Ini)> {
        let mut ini = match path {
            Some(p) => Ini::load(p)?,
            None => Ini::default(),
        };
        ini.apply_env(std::env::vars());
        for o in overrides {
            ini.apply_override(o)?;
        }
        Ok((ExperimentConfig::from_ini(&ini)?, ini))
    }

    pub fn from_ini(ini: &Ini) -> Result<Self> {
        let mut r = Reader::new(ini);
        let seed = r.u64("experiment", "seed", 1)?;

        // phantom
        let kind = r.string("phantom", "kind", "crossed_tubes");
        let spec = match kind.as_str() {
            "crossed_tubes" => {
                let d = CrossedTubes::default();
                PhantomSpec::CrossedTubes(CrossedTubes {
                    diameter_um: r.f64("phantom", "diameter_um", d.diameter_um)?,
                    crossing_depth_mm: r.f64("phantom", "crossing_depth_mm", d.crossing_depth_mm)?,
                    crossing_angle_deg: r.f64("phantom", "crossing_angle_deg", d.crossing_angle_deg)?,
                    flow_ul_min: r.f64("phantom", "flow_ul_min", d.flow_ul_min)?,
                    half_length_mm: r.f64("phantom", "half_length_mm", d.half_length_mm)?,
                })
            }
            "tree" => {
                let d = BranchingTree::default();
                PhantomSpec::Tree(BranchingTree {
                    levels: r.usize("phantom", "levels", d.levels)?,
                    root_diameter_um: r.f64("phantom", "root_diameter_um", d.root_diameter_um)?,
                    split_ratio: r.f64("phantom", "split_ratio", d.split_ratio)?,
                    root_flow_ul_min: r.f64("phantom", "root_flow_ul_min", d.root_flow_ul_min)?,
                    root_start: r.point("phantom", "root_start", d.root_start)?,
                    root_length_mm: r.f64("phantom", "root_length_mm", d.root_length_mm)?,
                    length_ratio: r.f64("phantom", "length_ratio", d.length_ratio)?,
                    branch_angle_deg: r.f64("phantom", "branch_angle_deg", d.branch_angle_deg)?,
                })
            }
            "straight" => PhantomSpec::Straight {
                start: r.point("phantom", "start", Point::new(14.0, -5.0))?,
                end: r.point("phantom", "end", Point::new(14.0, 5.0))?,
                diameter_um: r.f64("phantom", "diameter_um", 200.0)?,
                flow_ul_min: r.f64("phantom", "flow_ul_min", 30.0)?,
            },
            other => {
                return Err(r.bad(
                    "phantom",
                    "kind",
                    format!("unknown phantom `{other}` (expected crossed_tubes, tree or straight)"),
                ))
            }
        };
        let profile = match r.string("phantom", "profile", "plug").as_str() {
            "plug" => FlowProfile::Plug,
            "parabolic" => FlowProfile::Parabolic,
            other => return Err(r.bad("phantom", "profile", format!("unknown profile `{other}` (plug or parabolic)"))),
        };
        let phantom = PhantomSection {
            spec,
            concentration: r.f64("phantom", "concentration", 2.0)?,
            pulsatility: Pulsatility {
                amplitude: r.f64("phantom", "pulsatility_amplitude", 0.0)?,
                period_s: r.f64("phantom", "pulsatility_period_s", 1.0)?,
                phase_rad: r.f64("phantom", "pulsatility_phase_rad", 0.0)?,
            },
            profile,
        };

        // kinetics
        let gas_name = r.string("kinetics", "gas", "C3F8");
        let gas = gas_name.parse::<Gas>().map_err(|_| {
            r.bad("kinetics", "gas", format!("unknown gas `{gas_name}` (expected C3F8, MIX or C4F10)"))
        })?;
        let g = GasSpecies::defaults(gas);
        let gas = GasSpecies {
            gas,
            mi_onset: r.f64("kinetics", "mi_onset", g.mi_onset)?,
            mi_peak: r.f64("kinetics", "mi_peak", g.mi_peak)?,
            planewave_vaporizable: r.bool("kinetics", "planewave_vaporizable", g.planewave_vaporizable)?,
            spontaneous_rate: r.f64("kinetics", "spontaneous_rate", g.spontaneous_rate)?,
        };
        let s = SwitchingParams::default();
        let mut switching = SwitchingParams {
            vap_slope: r.f64("kinetics", "vap_slope", s.vap_slope)?,
            onset_probability: r.f64("kinetics", "onset_probability", s.onset_probability)?,
            dest_onset: r.f64("kinetics", "dest_onset", s.dest_onset)?,
            dest_slope: r.f64("kinetics", "dest_slope", s.dest_slope)?,
            survival_halflife_frames: s.survival_halflife_frames,
            reference_mi: r.f64("kinetics", "reference_mi", s.reference_mi)?,
            focused_threshold_factor: r.f64("kinetics", "focused_threshold_factor", s.focused_threshold_factor)?,
        };
        if let Some(h) = r.parse_with("kinetics", "survival_halflife_frames", "a number", |v| v.parse::<f64>().ok())? {
            switching = switching.with_halflife(h)?;
        }

        // sequence
        let kind = r.string("sequence", "kind", "fast_awsalm");
        let sequence = match kind.as_str() {
            "fast_awsalm" => {
                let d = FastAwsalmConfig::default();
                SequenceSpec::FastAwsalm(FastAwsalmConfig {
                    mi: r.f64("sequence", "mi", d.mi)?,
                    frame_rate_hz: r.f64("sequence", "frame_rate_hz", d.frame_rate_hz)?,
                    duration_s: r.f64("sequence", "duration_s", 0.25)?,
                })
            }
            "uniform" => SequenceSpec::Uniform {
                mi: r.f64("sequence", "mi", 0.22)?,
                frame_rate_hz: r.f64("sequence", "frame_rate_hz", 5000.0)?,
                n_frames: r.usize("sequence", "n_frames", 1250)?,
            },
            "awsalm" => {
                let d = AwsalmConfig::default();
                SequenceSpec::Awsalm(AwsalmConfig {
                    focal_points: r.points("sequence", "focal_points")?.unwrap_or(d.focal_points),
                    f_number: r.f64("sequence", "f_number", d.f_number)?,
                    cycles_activation: r.usize("sequence", "cycles_activation", d.cycles_activation as usize)? as u32,
                    n_cycles: r.usize("sequence", "n_cycles", d.n_cycles)?,
                    imaging_mi: r.f64("sequence", "imaging_mi", d.imaging_mi)?,
                    activation_mi: r.f64("sequence", "activation_mi", d.activation_mi)?,
                    frame_rate_hz: r.f64("sequence", "frame_rate_hz", d.frame_rate_hz)?,
                    compounding: r.usize("sequence", "compounding", d.compounding)?,
                    angle_step_deg: r.f64("sequence", "angle_step_deg", d.angle_step_deg)?,
                    activation_rate_hz: r.f64("sequence", "activation_rate_hz", d.activation_rate_hz)?,
                    activation_pulses: r.usize("sequence", "activation_pulses", d.activation_pulses)?,
                    frames_per_block: r.usize("sequence", "frames_per_block", d.frames_per_block)?,
                })
            }
            other => {
                return Err(r.bad(
                    "sequence",
                    "kind",
                    format!("unknown sequence `{other}` (expected awsalm, fast_awsalm or uniform)"),
                ))
            }
        };

        // imaging
        let psf = match (
            r.f64_or_auto("imaging", "psf_lateral_um", None)?,
            r.f64_or_auto("imaging", "psf_axial_um", None)?,
        ) {
            (Some(l), Some(a)) => Some(PsfModel::new(l, a)?),
            (None, None) => None,
            _ => {
                return Err(r.bad(
                    "imaging",
                    "psf_lateral_um",
                    "set both psf_lateral_um and psf_axial_um, or neither".into(),
                ))
            }
        };
        let amp_z = r.f64("imaging", "motion_amp_z_px", 0.0)?;
        let amp_x = r.f64("imaging", "motion_amp_x_px", 0.0)?;
        let period = r.f64("imaging", "motion_period_s", 1.0)?;
        let motion = (amp_z != 0.0 || amp_x != 0.0).then_some(Motion::Sinusoid {
            amp_z_px: amp_z,
            amp_x_px: amp_x,
            period_s: period,
        });
        let imaging = ImagingSection {
            extent: (
                r.f64("imaging", "z0_mm", 0.0)?,
                r.f64("imaging", "z1_mm", 29.95)?,
                r.f64("imaging", "x0_mm", -15.0)?,
                r.f64("imaging", "x1_mm", 14.95)?,
            ),
            pitch_um: r.f64("imaging", "pitch_um", 50.0)?,
            psf,
            noise_sigma: r.f64("imaging", "noise_sigma", 0.02)?,
            clutter_mean: r.f64("imaging", "clutter_mean", 0.5)?,
            bubble_amplitude: r.f64("imaging", "bubble_amplitude", 1.0)?,
            attenuation_db_per_cm: r.f64("imaging", "attenuation_db_per_cm", 0.0)?,
            motion,
        };

        // pipeline
        let d = PipelineConfig::default();
        let mode_name = r.string("pipeline", "svd_mode", "auto");
        let svd_mode = SvdMode::parse(&mode_name).ok_or_else(|| {
            r.bad("pipeline", "svd_mode", format!("unknown mode `{mode_name}` (auto, per_block or whole)"))
        })?;
        let motion_max = r.usize("pipeline", "motion_max_shift", 0)?;
        let tgc = r.f64("pipeline", "tgc_max_gain", 0.0)?;
        let wz = r.usize("pipeline", "wiener_axial", 5)?;
        let wt = r.usize("pipeline", "wiener_frames", 5)?;
        let pipeline = PipelineConfig {
            motion_max_shift: (motion_max > 0).then_some(motion_max),
            motion_reference: r.usize("pipeline", "motion_reference", 0)?,
            tgc_max_gain: (tgc > 0.0).then_some(tgc),
            svd_mode,
            svd_low_frac: r.f64("pipeline", "svd_low", d.svd_low_frac)?,
            svd_high_frac: r.f64("pipeline", "svd_high", d.svd_high_frac)?,
            svd_rectify: r.bool("pipeline", "svd_rectify", d.svd_rectify)?,
            wiener_window: (wz > 0 && wt > 0).then_some((wz, wt)),
            wiener_noise: r.f64_or_auto("pipeline", "wiener_noise", None)?,
            lowpass_sigma: (
                r.f64("pipeline", "lowpass_axial", 0.0)?,
                r.f64("pipeline", "lowpass_lateral", 0.0)?,
                r.f64("pipeline", "lowpass_temporal", 0.0)?,
            ),
            psf: psf.unwrap_or(sequence.default_psf()),
            psf_samples: r.usize("pipeline", "psf_samples", 0)?,
            localize: crate::pipeline::LocalizeParams {
                threshold: r.f64("pipeline", "threshold", d.localize.threshold)?,
                noise_k: r.f64("pipeline", "noise_k", d.localize.noise_k)?,
                min_amplitude: r.f64("pipeline", "min_amplitude", d.localize.min_amplitude)?,
            },
            track: crate::pipeline::TrackParams {
                gate_radius_mm: r.f64("pipeline", "gate_radius_mm", d.track.gate_radius_mm)?,
                max_gap: r.usize("pipeline", "max_gap", d.track.max_gap)?,
                min_track_length: r.usize("pipeline", "min_track_length", d.track.min_track_length)?,
                sigma_accel: r.f64("pipeline", "sigma_accel", d.track.sigma_accel)?,
                sigma_meas: r.f64("pipeline", "sigma_meas", d.track.sigma_meas)?,
                sigma_v0: r.f64("pipeline", "sigma_v0", d.track.sigma_v0)?,
                max_optimal: r.usize("pipeline", "max_optimal", d.track.max_optimal)?,
            },
        };

        // analysis
        let roi = r.points("analysis", "roi")?.map(Polygon::new);
        let band = match (
            r.f64_or_auto("analysis", "band_z0_mm", None)?,
            r.f64_or_auto("analysis", "band_z1_mm", None)?,
        ) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        };
        let profile = match r.points("analysis", "profile")? {
            None => None,
            Some(p) if p.len() == 2 => Some((p[0], p[1])),
            Some(_) => return Err(r.bad("analysis", "profile", "expected exactly two points".into())),
        };
        let gates = match r.points("analysis", "gates")? {
            None => Vec::new(),
            Some(p) => p.iter().map(|g| (g.z, g.x)).collect(),
        };
        let analysis = AnalysisSection {
            sr_pitch_um: r.f64("analysis", "sr_pitch_um", crate::maps::DEFAULT_SR_PITCH_UM)?,
            roi,
            band,
            profile,
            min_peak_height: r.f64("analysis", "min_peak_height", 0.2)?,
            gates,
        };

        let output = OutputSection {
            dir: PathBuf::from(r.string("output", "dir", "out")),
            pgm: r.bool("output", "pgm", true)?,
            csv_maps: r.bool("output", "csv_maps", false)?,
            truth_frames: r.bool("output", "truth_frames", false)?,
        };

        r.finish()?;
        let cfg = ExperimentConfig {
            seed,
            phantom,
            gas,
            switching,
            sequence,
            imaging,
            pipeline,
            analysis,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks that span sections.
    pub fn validate(&self) -> Result<()> {
        if !(self.phantom.concentration > 0.0) {
            return Err(Error::param("phantom.concentration", "must be > 0 droplets/mm"));
        }
        let (z0, z1, x0, x1) = self.imaging.extent;
        if !(z1 > z0 && x1 > x0) {
            return Err(Error::param("imaging.z0_mm", "imaging extent is empty"));
        }
        if !(self.imaging.noise_sigma >= 0.0 && self.imaging.clutter_mean >= 0.0) {
            return Err(Error::param("imaging.noise_sigma", "noise and clutter levels must be >= 0"));
        }
        if !(self.analysis.sr_pitch_um > 0.0) {
            return Err(Error::param("analysis.sr_pitch_um", "must be > 0"));
        }
        for &(a, b) in &self.analysis.gates {
            if !(b > a) {
                return Err(Error::param("analysis.gates", format!("gate [{a}, {b}) is empty")));
            }
        }
        self.gas.validate()?;
        self.switching.validate()?;
        self.pipeline.validate()?;
        if let SequenceSpec::FastAwsalm(c) = &self.sequence {
            c.validate()?;
        }
        if let SequenceSpec::Awsalm(c) = &self.sequence {
            c.validate()?;
        }
        Ok(())
    }

    pub fn psf(&self) -> PsfModel {
        self.imaging.psf.unwrap_or(self.sequence.default_psf())
    }

    pub fn grid(&self) -> Result<Grid> {
        let (z0, z1, x0, x1) = self.imaging.extent;
        Grid::spanning(z0, z1, x0, x1, self.imaging.pitch_um)
    }

    /// Forward-simulation settings.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let phantom = self.phantom.spec.build()?;
        let mut flow = FlowField::from_phantom(&phantom).with_pulsatility(self.phantom.pulsatility);
        flow.profile = self.phantom.profile;
        Ok(SimConfig {
            phantom,
            flow,
            gas: self.gas,
            switching: self.switching,
            concentration: self.phantom.concentration,
            sequence: self.sequence.build()?,
            grid: self.grid()?,
            psf: self.psf(),
            noise_sigma: self.imaging.noise_sigma,
            clutter_mean: self.imaging.clutter_mean,
            motion: self.imaging.motion.clone(),
            attenuation_db_per_cm: self.imaging.attenuation_db_per_cm,
            bubble_amplitude: self.imaging.bubble_amplitude,
            seed: self.seed,
        })
    }
}

/// Human-readable summary of the main settings, one `key = value` per line.
pub fn describe(cfg: &ExperimentConfig) -> String {
    let seq = match &cfg.sequence {
        SequenceSpec::Awsalm(c) => format!(
            "awsalm ({} cycles, focal points {})",
            c.n_cycles,
            c.focal_points.iter().map(|p| fmt_point(*p)).collect::<Vec<_>>().join("; ")
        ),
        SequenceSpec::FastAwsalm(c) => format!("fast_awsalm (MI {}, {} Hz, {} s)", c.mi, c.frame_rate_hz, c.duration_s),
        SequenceSpec::Uniform {
            mi,
            frame_rate_hz,
            n_frames,
        } => format!("uniform (MI {mi}, {frame_rate_hz} Hz, {n_frames} frames)"),
    };
    format!(
        "seed = {}\ngas = {}\nsequence = {seq}\npsf = {} x {} um\n",
        cfg.seed,
        cfg.gas.gas.name(),
        cfg.psf().fwhm_lateral_um,
        cfg.psf().fwhm_axial_um
    )
}
