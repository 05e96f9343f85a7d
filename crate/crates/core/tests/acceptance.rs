//! Acceptance report: one PASS/FAIL line per criterion, then a non-zero
//! exit status if any criterion failed. Runs every desk-scale scenario, so
//! expect about half an hour on one core.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use awsalm::config::ExperimentConfig;
use awsalm::experiment::{cmd_process, cmd_simulate, Manifest, STACK_FILE};
use awsalm::kinetics::Gas;
use awsalm::par;
use awsalm::scenarios::{
    Activation, CrossedTubeSr, DoseResponse, GatingStudy, LifetimeStudy, SelectiveActivation, VelocityStudy,
    WidthStudy, DOSE_MI_GRID,
};

// C1
const DOSE_BUDGET: Duration = Duration::from_secs(300);
const C3F8_PEAK_MI: f64 = 0.17;
const MIX_PEAK_MI: f64 = 0.28;
const FLAT_TOLERANCE: f64 = 0.10;
// C2
const CROSSED_BUDGET: Duration = Duration::from_secs(600);
const DIP_RATIO: f64 = 0.5;
// C3
const MAX_FWHM_UM: f64 = 150.0;
const MIN_GAIN: f64 = 3.5;
// C4
const SLOW_TOLERANCE: f64 = 0.15;
const FAST_TOLERANCE: f64 = 0.20;
// C5
const SVD_RESIDUAL: f64 = 1e-10;
const SWAP_SEEDS: u64 = 100;
const DAS_PIXELS: f64 = 1.0;
// C6
const FOCUSED_FRACTION: f64 = 0.9;
const FULL_FRACTION: f64 = 0.3;
// C7
const DIASTOLE_REDUCTION: f64 = 0.2;
// C8
const LIFETIME_RANGE: (u32, u32) = (2, 100);
const GOF_P: f64 = 0.01;
// C9
const DESK_BUDGET: Duration = Duration::from_secs(15 * 60);
const THREAD_COUNTS: [usize; 2] = [1, 4];

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn one_step(peak: f64, target: f64) -> bool {
    let idx = |m: f64| DOSE_MI_GRID.iter().position(|&g| (g - m).abs() < 1e-9);
    matches!((idx(peak), idx(target)), (Some(a), Some(b)) if a.abs_diff(b) <= 1)
}

fn c1() -> Outcome {
    let t = Instant::now();
    let r = DoseResponse::default().run().map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let curve = |g: Gas| r.curves.iter().find(|c| c.gas == g).ok_or(format!("no {g} curve"));
    let (c3, mix, c4) = (curve(Gas::C3F8)?, curve(Gas::Mix)?, curve(Gas::C4F10)?);
    let c4_dev = c4.points.iter().map(|p| (p.1 - 1.0).abs()).fold(0.0, f64::max);
    let base_dev = r
        .curves
        .iter()
        .flat_map(|c| c.points.iter().filter(|p| (p.0 - DOSE_MI_GRID[0]).abs() < 1e-9))
        .map(|p| (p.1 - 1.0).abs())
        .fold(0.0, f64::max);
    let ok = one_step(c3.peak_mi(), C3F8_PEAK_MI)
        && one_step(mix.peak_mi(), MIX_PEAK_MI)
        && c4_dev <= FLAT_TOLERANCE
        && base_dev <= FLAT_TOLERANCE
        && elapsed <= DOSE_BUDGET;
    Ok((
        ok,
        format!(
            "peaks C3F8 {} MIX {}, C4F10 max dev {:.3}, MI 0.06 max dev {:.3}, {:.0} s",
            c3.peak_mi(),
            mix.peak_mi(),
            c4_dev,
            base_dev,
            elapsed.as_secs_f64()
        ),
    ))
}

fn c2() -> Outcome {
    let t = Instant::now();
    let r = CrossedTubeSr::default().run().map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let sr = r.sr_dip.map(|d| d.ratio());
    let bm = r.bmode_dip.map(|d| d.ratio());
    let ok = sr.is_some_and(|v| v < DIP_RATIO) && !bm.is_some_and(|v| v < DIP_RATIO) && elapsed <= CROSSED_BUDGET;
    Ok((
        ok,
        format!(
            "SR dip ratio {}, B-mode {}, {} tracks, {:.0} s",
            sr.map_or("n/a".into(), |v| format!("{v:.2}")),
            bm.map_or("n/a".into(), |v| format!("{v:.2}")),
            r.n_tracks,
            elapsed.as_secs_f64()
        ),
    ))
}

fn c3() -> Outcome {
    let r = WidthStudy::default().run().map_err(|e| e.to_string())?;
    let per: Vec<String> = r.runs.iter().map(|w| format!("{:.0}", w.fwhm_um())).collect();
    Ok((
        r.median_fwhm_um <= MAX_FWHM_UM && r.resolution_gain >= MIN_GAIN,
        format!(
            "median FWHM {:.1} um (seeds: {}), gain {:.2}",
            r.median_fwhm_um,
            per.join(", "),
            r.resolution_gain
        ),
    ))
}

fn c4() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (speed, tol) in [(16.0, SLOW_TOLERANCE), (60.0, FAST_TOLERANCE)] {
        let r = VelocityStudy {
            speed_mm_s: speed,
            ..VelocityStudy::default()
        }
        .run()
        .map_err(|e| e.to_string())?;
        ok &= r.relative_error.abs() <= tol;
        parts.push(format!("{speed} mm/s -> {:.2} ({:+.1}%, {} tracks)", r.median_speed, 100.0 * r.relative_error, r.n_tracks));
    }
    Ok((ok, parts.join("; ")))
}

fn c5() -> Outcome {
    let residual = common::svd_static_residual();
    let (loc, pitch) = common::localization_worst_error();
    let mut swaps = 0;
    let mut bad_counts = 0;
    for seed in 0..SWAP_SEEDS {
        let (w, n) = common::two_bubble_swaps(seed);
        swaps += w;
        bad_counts += (n != 2) as usize;
    }
    let das = common::das_worst_offset_px();
    let ok = residual < SVD_RESIDUAL && loc < pitch / 10.0 && swaps == 0 && bad_counts == 0 && das <= DAS_PIXELS;
    Ok((
        ok,
        format!(
            "(a) SVD residual {residual:.1e}; (b) worst localization {:.2} um of {:.1} um limit; (c) {swaps} swaps, {bad_counts} seeds without two tracks; (d) worst DAS offset {das:.2} px",
            loc * 1e3,
            pitch * 1e2
        ),
    ))
}

fn c6() -> Outcome {
    let runs = SelectiveActivation::default().run().map_err(|e| e.to_string())?;
    let mut ok = runs.len() == 3;
    let mut parts = Vec::new();
    for r in &runs {
        ok &= match r.activation {
            Activation::Left => r.left_fraction > FOCUSED_FRACTION,
            Activation::Right => r.right_fraction > FOCUSED_FRACTION,
            Activation::Full => r.left_fraction >= FULL_FRACTION && r.right_fraction >= FULL_FRACTION,
        };
        parts.push(format!(
            "{}: L {:.2} R {:.2} ({} events)",
            r.activation.name(),
            r.left_fraction,
            r.right_fraction,
            r.events
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn c7() -> Outcome {
    let r = GatingStudy::default().run().map_err(|e| e.to_string())?;
    Ok((
        r.reduction() >= DIASTOLE_REDUCTION && r.partition_exact,
        format!(
            "small-vessel cells systole {} diastole {} ({:.0}% fewer), partition exact: {}",
            r.systole_cells,
            r.diastole_cells,
            100.0 * r.reduction(),
            r.partition_exact
        ),
    ))
}

fn c8() -> Outcome {
    let r = LifetimeStudy::default().run().map_err(|e| e.to_string())?;
    Ok((
        r.p5 >= LIFETIME_RANGE.0 && r.p95 <= LIFETIME_RANGE.1 && r.p_value > GOF_P,
        format!(
            "n {}, P5 {} P95 {} transmissions, chi2 {:.1} on {} dof, p {:.3}",
            r.lifetimes.len(),
            r.p5,
            r.p95,
            r.chi2,
            r.dof,
            r.p_value
        ),
    ))
}

fn c9() -> Outcome {
    let (cfg, ini) = ExperimentConfig::load(None, &[]).map_err(|e| e.to_string())?;
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    let mut times = Vec::new();
    for threads in THREAD_COUNTS {
        let dir = root.path().join(format!("t{threads}"));
        let t = Instant::now();
        par::with_threads(threads, || -> awsalm::Result<()> {
            cmd_simulate(&cfg, &ini, &dir.join("sim"))?;
            cmd_process(&dir.join("sim").join(STACK_FILE), &cfg, &ini, &dir.join("proc"))?;
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        times.push(t.elapsed());
        let sim = Manifest::read(&dir.join("sim")).map_err(|e| e.to_string())?;
        let pro = Manifest::read(&dir.join("proc")).map_err(|e| e.to_string())?;
        runs.push((sim.outputs, pro.outputs));
        // keep disk use to one stack at a time
        let _ = std::fs::remove_file(dir.join("sim").join(STACK_FILE));
    }
    let identical = runs.windows(2).all(|w| w[0] == w[1]);
    let slowest = times.iter().max().copied().unwrap_or_default();
    let secs: Vec<String> = times.iter().map(|t| format!("{:.0} s", t.as_secs_f64())).collect();
    Ok((
        identical && slowest <= DESK_BUDGET,
        format!(
            "600x600x1250 simulate+process at {THREAD_COUNTS:?} threads: {}; outputs identical: {identical}; {} cores available",
            secs.join(", "),
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("C1 dose-response shape", c1),
        ("C2 crossed-tube super-resolution", c2),
        ("C3 resolution gain", c3),
        ("C4 velocity recovery", c4),
        ("C5 pipeline oracles", c5),
        ("C6 selective activation", c6),
        ("C7 time gating", c7),
        ("C8 lifetime statistics", c8),
        ("C9 determinism and performance", c9),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = run().unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += !ok as usize;
        println!(
            "{} {name}: {detail} [{:.0} s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
