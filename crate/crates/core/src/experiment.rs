//! Reproducible runs: simulate, process, analyze and figure reproduction.
//!
//! Every command writes into its own output directory and finishes with
//! two files. `config.ini` is the resolved configuration, which can be fed
//! back with `--config`. `manifest.txt` records the tool version, seed,
//! config hash and the SHA-256 of every output. Stage timings go to
//! `timings.txt`, so the manifest depends on the inputs alone.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::acoustics::grid::Image;
use crate::config::{ExperimentConfig, Ini, Source};
use crate::kinetics::{Gas, PulseKind};
use crate::maps::{
    accumulate_maps, profile_fwhm, resolution_gain, roi_intensity_curve, spatiotemporal_projection, time_gate,
    write_csv_matrix, write_pgm, write_profile_csv, ProfileMeasurement, SrMaps,
};
use crate::pipeline::export::{read_tracks, write_localizations, write_tracks};
use crate::pipeline::Track;
use crate::scenarios::{
    self, sr_grid, Activation, CrossedTubeSr, DoseResponse, GatingStudy, SelectiveActivation, VelocityStudy,
    WidthStudy, DOSE_MI_GRID,
};
use crate::sim::{render_stack, simulate_truth, GroundTruth};
use crate::{stackio, Error, Result};

pub const STACK_FILE: &str = "stack.aws";
pub const CONFIG_FILE: &str = "config.ini";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TIMINGS_FILE: &str = "timings.txt";
pub const TRACKS_FILE: &str = "tracks.csv";
pub const LOCALIZATIONS_FILE: &str = "localizations.csv";

/// Inputs and output hashes of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// `(file name, sha256)` in the order the files were written.
    pub outputs: Vec<(String, String)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "command = {}\nversion = {}\nseed = {}\nconfig_sha256 = {}\n",
            self.command, self.version, self.seed, self.config_sha256
        );
        for (name, hash) in &self.outputs {
            let _ = writeln!(s, "output {name} = {hash}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest {
            command: String::new(),
            version: String::new(),
            seed: 0,
            config_sha256: String::new(),
            outputs: Vec::new(),
        };
        for (n, line) in text.lines().enumerate() {
            let bad = || Error::Format(format!("manifest line {}: cannot parse `{line}`", n + 1));
            let (k, v) = line.split_once(" = ").ok_or_else(bad)?;
            match k {
                "command" => m.command = v.to_string(),
                "version" => m.version = v.to_string(),
                "seed" => m.seed = v.parse().map_err(|_| bad())?,
                "config_sha256" => m.config_sha256 = v.to_string(),
                _ => match k.strip_prefix("output ") {
                    Some(name) => m.outputs.push((name.to_string(), v.to_string())),
                    None => return Err(bad()),
                },
            }
        }
        Ok(m)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        Manifest::parse(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Output directory of one command: records every file it writes.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    timings: Vec<(String, f64)>,
    clock: Instant,
}

impl Artifacts {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            timings: Vec::new(),
            clock: Instant::now(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn with_writer(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let p = self.path(name);
        let mut w = BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(&p, e))
    }

    fn image(&mut self, stem: &str, img: &Image, pgm: bool, csv: bool) -> Result<()> {
        if pgm {
            let p = self.path(&format!("{stem}.pgm"));
            write_pgm(&p, img)?;
        }
        if csv {
            let p = self.path(&format!("{stem}.csv"));
            write_csv_matrix(&p, img)?;
        }
        Ok(())
    }

    fn maps(&mut self, prefix: &str, maps: &SrMaps, pgm: bool, csv: bool) -> Result<()> {
        self.image(&format!("{prefix}density"), &maps.density(), pgm, csv)?;
        self.image(&format!("{prefix}velocity"), &maps.velocity(), pgm, csv)?;
        self.image(&format!("{prefix}direction"), &maps.direction(), pgm, csv)
    }

    fn lap(&mut self, stage: &str) {
        let s = self.clock.elapsed().as_secs_f64();
        log::info!("{stage}: {s:.2} s");
        self.timings.push((stage.to_string(), s));
        self.clock = Instant::now();
    }

    /// Writes the config, timings and manifest.
    fn finish(mut self, command: &str, seed: u64, ini: &Ini) -> Result<Manifest> {
        let cfg_path = self.dir.join(CONFIG_FILE);
        fs::write(&cfg_path, ini.canonical()).map_err(|e| Error::io(&cfg_path, e))?;
        let mut outputs = Vec::with_capacity(self.files.len());
        for name in &self.files {
            outputs.push((name.clone(), sha256_file(&self.dir.join(name))?));
        }
        let m = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: ini.sha256(),
            outputs,
        };
        let mp = self.dir.join(MANIFEST_FILE);
        fs::write(&mp, m.to_text()).map_err(|e| Error::io(&mp, e))?;
        let mut t = String::new();
        for (k, s) in &self.timings {
            let _ = writeln!(t, "{k} = {s:.3}");
        }
        let tp = self.dir.join(TIMINGS_FILE);
        fs::write(&tp, t).map_err(|e| Error::io(&tp, e))?;
        self.timings.clear();
        Ok(m)
    }
}

/// Pins the seed into the config so that `config.ini` alone reproduces a run.
fn resolved(cfg: &ExperimentConfig, ini: &Ini) -> Ini {
    let mut ini = ini.clone();
    ini.set("experiment", "seed", &cfg.seed.to_string(), Source::Cli);
    ini
}

// ---------------------------------------------------------------- simulate

pub const TRUTH_EVENTS_HEADER: &str = "transmission,t_s,frame,droplet_id,axial_mm,lateral_mm,pulse,kind";
pub const TRUTH_BUBBLES_HEADER: &str = "frame,droplet_id,segment,axial_mm,lateral_mm";

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub frames: usize,
    pub vaporizations: usize,
    pub destructions: usize,
    pub manifest: Manifest,
}

fn write_truth_events(w: &mut impl Write, truth: &GroundTruth) -> Result<()> {
    let mut s = String::from(TRUTH_EVENTS_HEADER);
    s.push('\n');
    for e in &truth.events {
        let pulse = match e.kind {
            PulseKind::Plane => "plane",
            PulseKind::Focused => "focused",
        };
        let kind = if e.vaporized { "vaporized" } else { "destroyed" };
        let _ = writeln!(
            s,
            "{},{:.9},{},{},{:.6},{:.6},{pulse},{kind}",
            e.transmission, e.t, e.frame, e.id, e.position.z, e.position.x
        );
    }
    w.write_all(s.as_bytes()).map_err(|e| Error::io("truth events", e))
}

fn write_truth_bubbles(w: &mut impl Write, truth: &GroundTruth) -> Result<()> {
    w.write_all(TRUTH_BUBBLES_HEADER.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .map_err(|e| Error::io("truth bubbles", e))?;
    let mut s = String::new();
    for (f, bubbles) in truth.frames.iter().enumerate() {
        for b in bubbles {
            let _ = writeln!(s, "{f},{},{},{:.6},{:.6}", b.id, b.segment, b.position.z, b.position.x);
        }
        if s.len() > 1 << 20 {
            w.write_all(s.as_bytes()).map_err(|e| Error::io("truth bubbles", e))?;
            s.clear();
        }
    }
    w.write_all(s.as_bytes()).map_err(|e| Error::io("truth bubbles", e))
}

/// Forward simulation: stack file plus ground-truth CSVs.
pub fn cmd_simulate(cfg: &ExperimentConfig, ini: &Ini, out: &Path) -> Result<SimulateSummary> {
    let mut art = Artifacts::create(out)?;
    let sim = cfg.sim_config()?;
    let truth = simulate_truth(&sim)?;
    art.lap("kinetics");
    let stack = render_stack(&sim, &truth)?;
    art.lap("render");
    let sp = art.path(STACK_FILE);
    stackio::write_stack(&sp, &stack)?;
    art.files.push(format!("{STACK_FILE}.meta"));
    drop(stack);
    art.with_writer("truth_events.csv", |w| write_truth_events(w, &truth))?;
    let mut lt = String::from("lifetime_transmissions\n");
    for l in &truth.lifetimes {
        let _ = writeln!(lt, "{l}");
    }
    art.text("truth_lifetimes.csv", &lt)?;
    if cfg.output.truth_frames {
        art.with_writer("truth_bubbles.csv", |w| write_truth_bubbles(w, &truth))?;
    }
    art.lap("write");
    let vaporizations = truth.vaporizations();
    Ok(SimulateSummary {
        frames: truth.frames.len(),
        vaporizations,
        destructions: truth.events.len() - vaporizations,
        manifest: art.finish("simulate", cfg.seed, &resolved(cfg, ini))?,
    })
}

// ---------------------------------------------------------------- process

#[derive(Debug, Clone)]
pub struct ProcessSummary {
    pub frames: usize,
    pub events: usize,
    pub tracks: usize,
    /// Pipeline stage timings in seconds.
    pub timings: Vec<(&'static str, f64)>,
    pub manifest: Manifest,
}

/// Runs the localization chain on a stack file and writes localizations,
/// tracks and SR maps.
pub fn cmd_process(stack_path: &Path, cfg: &ExperimentConfig, ini: &Ini, out: &Path) -> Result<ProcessSummary> {
    let mut art = Artifacts::create(out)?;
    let mut stack = stackio::read_stack(stack_path)?;
    art.lap("read");
    let grid = stack.grid;
    let frames = stack.nt;
    let output = crate::pipeline::run(&mut stack, &cfg.pipeline)?;
    drop(stack);
    for (stage, s) in &output.timings {
        art.timings.push((format!("pipeline.{stage}"), *s));
    }
    art.clock = Instant::now();
    art.with_writer(LOCALIZATIONS_FILE, |w| write_localizations(w, &output.events, &output.tracks))?;
    art.with_writer(TRACKS_FILE, |w| write_tracks(w, &output.tracks))?;
    if !grid.is_empty() {
        let maps = accumulate_maps(&output.tracks, sr_grid(&grid, cfg.analysis.sr_pitch_um)?);
        art.maps("", &maps, cfg.output.pgm, cfg.output.csv_maps)?;
    }
    art.lap("write");
    Ok(ProcessSummary {
        frames,
        events: output.n_events(),
        tracks: output.tracks.len(),
        timings: output.timings.clone(),
        manifest: art.finish("process", cfg.seed, &resolved(cfg, ini))?,
    })
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone)]
pub struct AnalyzeSummary {
    /// `key = value` metric lines, also written to `metrics.txt`.
    pub metrics: Vec<(String, String)>,
    pub manifest: Manifest,
}

fn median(mut v: Vec<f64>) -> f64 {
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

fn profile_metrics(metrics: &mut Vec<(String, String)>, prefix: &str, p: &ProfileMeasurement, psf_um: f64) {
    metrics.push((format!("{prefix}peaks"), p.resolved().to_string()));
    for (k, (c, w)) in p.peaks_um.iter().zip(&p.fwhm_um).enumerate() {
        metrics.push((format!("{prefix}peak{k}_um"), format!("{c:.1}")));
        metrics.push((format!("{prefix}peak{k}_fwhm_um"), format!("{w:.1}")));
        if let Ok(g) = resolution_gain(*w, psf_um) {
            metrics.push((format!("{prefix}peak{k}_resolution_gain"), format!("{g:.2}")));
        }
    }
    for (k, s) in p.separations_um.iter().enumerate() {
        metrics.push((format!("{prefix}separation{k}_um"), format!("{s:.1}")));
    }
}

/// Metrics from the tracks of a `process` run: speeds, occupied cells, the
/// configured profile and time gates, and, when the stack is given, the ROI
/// intensity curve and spatiotemporal projection.
pub fn cmd_analyze(
    processed: &Path,
    stack_path: Option<&Path>,
    cfg: &ExperimentConfig,
    ini: &Ini,
    out: &Path,
) -> Result<AnalyzeSummary> {
    let tp = processed.join(TRACKS_FILE);
    let tracks = read_tracks(&fs::read_to_string(&tp).map_err(|e| Error::io(&tp, e))?)?;
    let stack = stack_path.map(stackio::read_stack).transpose()?;
    let source = match &stack {
        Some(s) => s.grid,
        None => cfg.grid()?,
    };
    let mut art = Artifacts::create(out)?;
    let (pgm, csv) = (cfg.output.pgm, cfg.output.csv_maps);
    let grid = sr_grid(&source, cfg.analysis.sr_pitch_um)?;
    let maps = accumulate_maps(&tracks, grid);
    let speeds: Vec<f64> = tracks.iter().filter(|t| t.len() >= 2).map(Track::speed).collect();
    let mut m: Vec<(String, String)> = vec![
        ("tracks".into(), tracks.len().to_string()),
        ("track_points".into(), tracks.iter().map(Track::len).sum::<usize>().to_string()),
        ("occupied_cells".into(), maps.occupied().to_string()),
        ("median_speed_mm_s".into(), format!("{:.3}", median(speeds.clone()))),
        ("max_speed_mm_s".into(), format!("{:.3}", speeds.iter().copied().fold(0.0, f64::max))),
    ];
    art.maps("", &maps, pgm, csv)?;

    if let Some((a, b)) = cfg.analysis.profile {
        let p = profile_fwhm(&maps.density(), &grid, a, b, cfg.analysis.min_peak_height)?;
        let path = art.path("profile.csv");
        write_profile_csv(&path, &p)?;
        profile_metrics(&mut m, "profile_", &p, cfg.psf().fwhm_lateral_um);
    }
    for (k, &(t0, t1)) in cfg.analysis.gates.iter().enumerate() {
        let gated = accumulate_maps(&time_gate(&tracks, t0, t1, 1)?, grid);
        m.push((format!("gate{k}_window_s"), format!("{t0}, {t1}")));
        m.push((format!("gate{k}_events"), gated.total_count().to_string()));
        m.push((format!("gate{k}_occupied_cells"), gated.occupied().to_string()));
        art.image(&format!("gate{k}_density"), &gated.density(), pgm, csv)?;
    }
    if let Some(stack) = &stack {
        if let Some(roi) = &cfg.analysis.roi {
            let curve = roi_intensity_curve(stack, roi)?;
            let mut s = String::from("frame,t_s,roi_mean\n");
            for (f, v) in curve.iter().enumerate() {
                let _ = writeln!(s, "{f},{:.9},{v:.6}", stack.frame_times[f]);
            }
            art.text("roi_curve.csv", &s)?;
            let mean = curve.iter().sum::<f64>() / curve.len().max(1) as f64;
            m.push(("roi_mean".into(), format!("{mean:.6}")));
        }
        if let Some((z0, z1)) = cfg.analysis.band {
            art.image("spatiotemporal", &spatiotemporal_projection(stack, z0, z1)?, pgm, csv)?;
        }
    }
    let mut text = String::new();
    for (k, v) in &m {
        let _ = writeln!(text, "{k} = {v}");
    }
    art.text("metrics.txt", &text)?;
    art.lap("analyze");
    Ok(AnalyzeSummary {
        metrics: m,
        manifest: art.finish("analyze", cfg.seed, &resolved(cfg, ini))?,
    })
}

// ---------------------------------------------------------------- reproduce

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Dose response per gas.
    Fig2k,
    /// Vessel width and velocity recovery.
    Fig5,
    /// Crossed-tube super-resolution.
    Fig6,
    /// Selective activation.
    Fig7,
    /// Cardiac gating.
    Fig8,
}

impl Figure {
    pub const ALL: [Figure; 5] = [Figure::Fig2k, Figure::Fig5, Figure::Fig6, Figure::Fig7, Figure::Fig8];

    pub fn id(self) -> &'static str {
        match self {
            Figure::Fig2k => "fig2k",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
            Figure::Fig8 => "fig8",
        }
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL.into_iter().find(|f| f.id() == s.trim().to_ascii_lowercase()).ok_or_else(|| {
            let ids: Vec<&str> = Figure::ALL.iter().map(|f| f.id()).collect();
            Error::param("figure", format!("unknown figure `{s}`; valid ids: {}", ids.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

#[derive(Debug, Clone)]
pub struct ReproduceReport {
    pub figure: Figure,
    pub checks: Vec<Check>,
    pub manifest: Manifest,
}

impl ReproduceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn within_one_step(peak: f64, target: f64) -> bool {
    let k = DOSE_MI_GRID.iter().position(|&m| (m - target).abs() < 1e-9);
    let p = DOSE_MI_GRID.iter().position(|&m| (m - peak).abs() < 1e-9);
    matches!((k, p), (Some(k), Some(p)) if k.abs_diff(p) <= 1)
}

/// Runs the scenario behind `figure`, writes its maps and curves and a
/// `report.txt` with one PASS/FAIL line per check. `seed` replaces the
/// scenario's default seed.
pub fn cmd_reproduce(figure: Figure, seed: Option<u64>, out: &Path) -> Result<ReproduceReport> {
    let mut art = Artifacts::create(out)?;
    let mut ini = Ini::default();
    ini.set("reproduce", "figure", figure.id(), Source::Cli);
    let checks = match figure {
        Figure::Fig2k => fig2k(&mut art, seed)?,
        Figure::Fig5 => fig5(&mut art, seed)?,
        Figure::Fig6 => fig6(&mut art, seed)?,
        Figure::Fig7 => fig7(&mut art, seed)?,
        Figure::Fig8 => fig8(&mut art, seed)?,
    };
    art.lap(figure.id());
    let mut text = String::new();
    for c in &checks {
        let _ = writeln!(text, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    art.text("report.txt", &text)?;
    if let Some(s) = seed {
        ini.set("experiment", "seed", &s.to_string(), Source::Cli);
    }
    let manifest = art.finish("reproduce", seed.unwrap_or(0), &ini)?;
    Ok(ReproduceReport {
        figure,
        checks,
        manifest,
    })
}

fn fig2k(art: &mut Artifacts, seed: Option<u64>) -> Result<Vec<Check>> {
    let mut study = DoseResponse::default();
    if let Some(s) = seed {
        study.seed = s;
    }
    let res = study.run()?;
    let mut csv = String::from("gas,mi,normalized_intensity\n");
    let mut peaks = String::from("gas,peak_mi\n");
    for c in &res.curves {
        for (mi, v) in &c.points {
            let _ = writeln!(csv, "{},{mi},{v:.6}", c.gas.name());
        }
        let _ = writeln!(peaks, "{},{}", c.gas.name(), c.peak_mi());
    }
    art.text("dose_response.csv", &csv)?;
    art.text("dose_peaks.csv", &peaks)?;

    let curve = |g: Gas| res.curves.iter().find(|c| c.gas == g);
    let mut checks = Vec::new();
    for (gas, target) in [(Gas::C3F8, 0.17), (Gas::Mix, 0.28)] {
        if let Some(c) = curve(gas) {
            let p = c.peak_mi();
            checks.push(check(
                &format!("{} peak", gas.name()),
                within_one_step(p, target),
                format!("peak at MI {p}, expected {target} +/- one grid step"),
            ));
        }
    }
    if let Some(c) = curve(Gas::C4F10) {
        let dev = c.points.iter().map(|p| (p.1 - 1.0).abs()).fold(0.0, f64::max);
        checks.push(check("C4F10 flat", dev <= 0.1, format!("max deviation from baseline {:.3}", dev)));
    }
    let base = res
        .curves
        .iter()
        .filter_map(|c| c.points.iter().find(|p| (p.0 - 0.06).abs() < 1e-9).map(|p| (p.1 - 1.0).abs()))
        .fold(0.0, f64::max);
    checks.push(check("baseline at MI 0.06", base <= 0.1, format!("max deviation {base:.3}")));
    Ok(checks)
}

fn fig5(art: &mut Artifacts, seed: Option<u64>) -> Result<Vec<Check>> {
    let mut width = WidthStudy::default();
    if let Some(s) = seed {
        width.seeds = (s..s + width.seeds.len() as u64).collect();
    }
    let w = width.run()?;
    for r in &w.runs {
        let p = art.path(&format!("width_profile_seed{}.csv", r.seed));
        write_profile_csv(&p, &r.profile)?;
        art.image(&format!("width_density_seed{}", r.seed), &r.maps.density(), true, false)?;
    }
    let fwhms: Vec<String> = w.runs.iter().map(|r| format!("{:.0}", r.fwhm_um())).collect();
    let mut checks = vec![check(
        "vessel width",
        w.median_fwhm_um <= 150.0 && w.resolution_gain >= 3.5,
        format!(
            "median FWHM {:.1} um over seeds (per seed {}), resolution gain {:.2}",
            w.median_fwhm_um,
            fwhms.join(", "),
            w.resolution_gain
        ),
    )];
    let mut csv = String::from("true_speed_mm_s,median_speed_mm_s,tracks,relative_error\n");
    for (speed, tol) in [(16.0, 0.15), (60.0, 0.20)] {
        let mut v = VelocityStudy {
            speed_mm_s: speed,
            ..VelocityStudy::default()
        };
        if let Some(s) = seed {
            v.seed = s;
        }
        let r = v.run()?;
        let _ = writeln!(csv, "{speed},{:.3},{},{:.4}", r.median_speed, r.n_tracks, r.relative_error);
        checks.push(check(
            &format!("velocity {speed} mm/s"),
            r.relative_error.abs() <= tol,
            format!("median {:.2} mm/s from {} tracks ({:+.1}%)", r.median_speed, r.n_tracks, 100.0 * r.relative_error),
        ));
    }
    art.text("velocity.csv", &csv)?;
    Ok(checks)
}

fn fig6(art: &mut Artifacts, seed: Option<u64>) -> Result<Vec<Check>> {
    let mut study = CrossedTubeSr::default();
    if let Some(s) = seed {
        study.seed = s;
    }
    let r = study.run()?;
    let p = art.path("sr_profile.csv");
    write_profile_csv(&p, &r.sr)?;
    let p = art.path("bmode_profile.csv");
    write_profile_csv(&p, &r.bmode)?;
    art.maps("sr_", &r.maps, true, false)?;
    art.image("bmode", &r.bmode_image, true, false)?;
    let describe = |d: &Option<scenarios::TubeDip>| match d {
        Some(d) => format!("peaks {:.0}/{:.0} um, dip ratio {:.2}", d.peaks_um.0, d.peaks_um.1, d.ratio()),
        None => "no signal in the tube intervals".into(),
    };
    Ok(vec![
        check(
            "SR resolves tubes at 250 um",
            r.sr_dip.as_ref().is_some_and(|d| d.resolved()),
            format!("{} ({} tracks)", describe(&r.sr_dip), r.n_tracks),
        ),
        check(
            "B-mode does not resolve",
            !r.bmode_dip.as_ref().is_some_and(|d| d.resolved()),
            describe(&r.bmode_dip),
        ),
    ])
}

fn fig7(art: &mut Artifacts, seed: Option<u64>) -> Result<Vec<Check>> {
    let mut study = SelectiveActivation::default();
    if let Some(s) = seed {
        study.seed = s;
    }
    let runs = study.run()?;
    let mut csv = String::from("activation,events,left_fraction,right_fraction\n");
    let mut checks = Vec::new();
    for r in &runs {
        let name = r.activation.name();
        let _ = writeln!(csv, "{name},{},{:.4},{:.4}", r.events, r.left_fraction, r.right_fraction);
        art.image(&format!("{name}_density"), &r.maps.density(), true, false)?;
        let detail = format!("{} events, left {:.3}, right {:.3}", r.events, r.left_fraction, r.right_fraction);
        let ok = match r.activation {
            Activation::Left => r.left_fraction > 0.9,
            Activation::Right => r.right_fraction > 0.9,
            Activation::Full => r.left_fraction >= 0.3 && r.right_fraction >= 0.3,
        };
        checks.push(check(&format!("{name} activation"), ok, detail));
    }
    art.text("selective.csv", &csv)?;
    Ok(checks)
}

fn fig8(art: &mut Artifacts, seed: Option<u64>) -> Result<Vec<Check>> {
    let mut study = GatingStudy::default();
    if let Some(s) = seed {
        study.seed = s;
    }
    let r = study.run()?;
    art.maps("systole_", &r.systole, true, false)?;
    art.maps("diastole_", &r.diastole, true, false)?;
    art.image("full_density", &r.full.density(), true, false)?;
    Ok(vec![
        check(
            "diastolic small-vessel reduction",
            r.reduction() >= 0.2,
            format!(
                "small-vessel cells systole {} diastole {} ({:.0}% fewer)",
                r.systole_cells,
                r.diastole_cells,
                100.0 * r.reduction()
            ),
        ),
        check("gates partition events", r.partition_exact, format!("{} events", r.full.total_count())),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            command: "simulate".into(),
            version: "0.1.0".into(),
            seed: 7,
            config_sha256: "ab".into(),
            outputs: vec![("stack.aws".into(), "00ff".into())],
        };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(Manifest::parse("garbage").is_err());
    }

    #[test]
    fn figure_ids() {
        assert_eq!("FIG2K".parse::<Figure>().unwrap(), Figure::Fig2k);
        let e = "fig9".parse::<Figure>().unwrap_err().to_string();
        for f in Figure::ALL {
            assert!(e.contains(f.id()), "{e}");
        }
    }

    #[test]
    fn one_grid_step() {
        assert!(within_one_step(0.22, 0.17));
        assert!(within_one_step(0.11, 0.17));
        assert!(!within_one_step(0.28, 0.17));
    }
}
