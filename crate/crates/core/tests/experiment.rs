//! End-to-end runs of the experiment commands on small configurations.

use std::fs;
use std::path::Path;

use awsalm::acoustics::grid::{FrameStack, Grid, SequenceKind, StackMeta};
use awsalm::config::{ExperimentConfig, Ini};
use awsalm::experiment::{cmd_analyze, cmd_process, cmd_simulate, Manifest, CONFIG_FILE, STACK_FILE};
use awsalm::pipeline::{self, PipelineConfig, SvdMode};
use awsalm::{sim, stackio};

fn small(extra: &[&str]) -> (ExperimentConfig, Ini) {
    let mut o: Vec<String> = [
        "imaging.z0_mm=13",
        "imaging.z1_mm=17",
        "imaging.x0_mm=-2",
        "imaging.x1_mm=2",
        "phantom.concentration=10",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if !extra.iter().any(|e| e.starts_with("sequence.kind=")) {
        o.extend(["sequence.kind=uniform".to_string(), "sequence.n_frames=100".to_string()]);
    }
    o.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::load(None, &o).unwrap()
}

fn outputs(dir: &Path) -> Vec<(String, String)> {
    Manifest::read(dir).unwrap().outputs
}

#[test]
fn simulate_is_deterministic() {
    let (cfg, ini) = small(&[]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_simulate(&cfg, &ini, a.path()).unwrap();
    cmd_simulate(&cfg, &ini, b.path()).unwrap();
    assert_eq!(outputs(a.path()), outputs(b.path()));
    assert!(outputs(a.path()).iter().any(|(n, _)| n == STACK_FILE));
}

#[test]
fn quarter_second_at_5_khz_is_1250_frames() {
    let (cfg, ini) = small(&[
        "sequence.kind=fast_awsalm",
        "sequence.duration_s=0.25",
        "imaging.z1_mm=13.5",
        "imaging.x1_mm=-1.5",
    ]);
    let out = tempfile::tempdir().unwrap();
    let s = cmd_simulate(&cfg, &ini, out.path()).unwrap();
    assert_eq!(s.frames, 1250);
    assert_eq!(stackio::read_header(&out.path().join(STACK_FILE)).unwrap().nt, 1250);
}

#[test]
fn c4f10_is_not_vaporized_by_plane_waves() {
    let (cfg, ini) = small(&[
        "kinetics.gas=C4F10",
        "sequence.kind=fast_awsalm",
        "sequence.duration_s=0.25",
        "sequence.mi=0.22",
        "phantom.concentration=50",
    ]);
    let out = tempfile::tempdir().unwrap();
    let s = cmd_simulate(&cfg, &ini, out.path()).unwrap();
    assert_eq!(s.vaporizations, 0);
    let events = fs::read_to_string(out.path().join("truth_events.csv")).unwrap();
    assert_eq!(events.lines().count(), 1, "header only");
}

#[test]
fn resolved_config_reproduces_the_run() {
    let (cfg, ini) = small(&["experiment.seed=9"]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_simulate(&cfg, &ini, a.path()).unwrap();
    let (cfg2, ini2) = ExperimentConfig::load(Some(&a.path().join(CONFIG_FILE)), &[]).unwrap();
    assert_eq!(cfg2, cfg);
    cmd_simulate(&cfg2, &ini2, b.path()).unwrap();
    assert_eq!(outputs(a.path()), outputs(b.path()));
    let pa = a.path().join("p");
    let pb = b.path().join("p");
    cmd_process(&a.path().join(STACK_FILE), &cfg, &ini, &pa).unwrap();
    cmd_process(&b.path().join(STACK_FILE), &cfg2, &ini2, &pb).unwrap();
    assert_eq!(outputs(&pa), outputs(&pb));
}

#[test]
fn empty_stack_gives_empty_outputs() {
    let grid = Grid::spanning(13.0, 14.0, -1.0, 1.0, 50.0).unwrap();
    let stack = FrameStack::zeros(grid, Vec::new(), StackMeta::default());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.aws");
    stackio::write_stack(&p, &stack).unwrap();
    let (cfg, ini) = small(&[]);
    let s = cmd_process(&p, &cfg, &ini, &dir.path().join("out")).unwrap();
    assert_eq!((s.frames, s.events, s.tracks), (0, 0, 0));
    let loc = fs::read_to_string(dir.path().join("out/localizations.csv")).unwrap();
    assert_eq!(loc.lines().count(), 1);
}

#[test]
fn corrupt_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.aws");
    fs::write(&p, b"NOPE 1 2 3\n").unwrap();
    let (cfg, ini) = small(&[]);
    assert!(cmd_process(&p, &cfg, &ini, &dir.path().join("out")).is_err());
}

#[test]
fn awsalm_stacks_are_filtered_per_block() {
    let (cfg, _) = small(&[
        "sequence.kind=awsalm",
        "sequence.n_cycles=3",
        "sequence.frames_per_block=20",
        "kinetics.gas=C4F10",
        "phantom.concentration=30",
    ]);
    let (stack, _) = sim::simulate(&cfg.sim_config().unwrap()).unwrap();
    assert_eq!(stack.meta.sequence, SequenceKind::Awsalm);
    let blocks = stack.meta.block_starts.len();
    assert!(blocks >= 2, "{blocks} blocks");
    let mut s = stack.clone();
    let out = pipeline::run(
        &mut s,
        &PipelineConfig {
            svd_mode: SvdMode::Auto,
            ..PipelineConfig::default()
        },
    )
    .unwrap();
    assert_eq!(out.svd_blocks.len(), blocks);
}

#[test]
fn analyze_reads_processed_tracks() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let extra = [
        "analysis.profile=14.3, 0; 13.7, 0".to_string(),
        "analysis.gates=0, 0.1; 0.1, 0.2".to_string(),
        "analysis.roi=13.8, -1; 14.2, -1; 14.2, 1; 13.8, 1".to_string(),
    ];
    let (cfg, ini) = ExperimentConfig::load(Some(&data.join("mini.ini")), &extra).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let stack = data.join("mini_stack.aws");
    cmd_process(&stack, &cfg, &ini, &dir.path().join("p")).unwrap();
    let a = cmd_analyze(&dir.path().join("p"), Some(&stack), &cfg, &ini, &dir.path().join("a")).unwrap();
    let get = |k: &str| a.metrics.iter().find(|m| m.0 == k).map(|m| m.1.clone()).unwrap_or_default();
    assert!(get("tracks").parse::<usize>().unwrap() > 0);
    let g0: u64 = get("gate0_events").parse().unwrap();
    let g1: u64 = get("gate1_events").parse().unwrap();
    assert_eq!(g0 + g1, get("track_points").parse::<u64>().unwrap());
    assert!(get("profile_peaks").parse::<usize>().unwrap() >= 1);
    assert!(get("roi_mean").parse::<f64>().unwrap() >= 0.0);
    let p = get("profile_peak0_um").parse::<f64>().unwrap();
    // the vessel axis sits 300 µm along the profile
    assert!((p - 300.0).abs() < 60.0, "{p}");
    assert!(dir.path().join("a/roi_curve.csv").exists());
}
