//! Pipeline stages checked against independent constructions: rank-one
//! scenes, rendered blobs with known centres, two-bubble tracking and
//! delay-and-sum round trips.

mod common;

use awsalm::acoustics::grid::{FrameStack, Grid, StackMeta};
use awsalm::acoustics::psf::PsfModel;
use awsalm::acoustics::render::Renderer;
use awsalm::pipeline::{svd_clutter_filter, track_events, wiener_axial_temporal, LocalizationEvent, TrackParams};
use awsalm::rng::{stream_rng, Stream};
use awsalm::Point;
use common::{frob, scatter};
use rand::Rng;

#[test]
fn static_clutter_is_nulled_by_svd() {
    let residual = common::svd_static_residual();
    assert!(residual < 1e-10, "relative residual {residual:e}");
}

#[test]
fn svd_lifts_moving_bubble_over_static_clutter() {
    let grid = Grid::spanning(10.0, 14.0, -3.0, 3.0, 50.0).unwrap();
    let clutter = Renderer::new(grid, PsfModel::FAST_AWSALM, 5).unwrap().with_clutter(0.5);
    let nt = 60;
    let mut s = FrameStack::zeros(grid, (0..nt).map(|k| k as f64 * 1e-3).collect(), StackMeta::default());
    let mut truth = Vec::new();
    for f in 0..nt {
        let p = Point::new(12.0, -2.5 + 0.08 * f as f64);
        let img = clutter.render(&scatter(&[p]), f, f as f64 * 1e-3, 1.0);
        s.frame_mut(f).copy_from_slice(&img.data);
        truth.push(p);
    }
    // peak power at the bubble over mean power more than 1 mm away from it
    let ratio = |s: &FrameStack| {
        let (mut num, mut den, mut n) = (0.0, 0.0, 0usize);
        for f in 0..s.nt {
            let (i, j) = grid.pixel_f(truth[f]);
            num += (s.frame(f)[grid.index(i.round() as usize, j.round() as usize)] as f64).powi(2);
            for jj in 0..grid.nx {
                for ii in 0..grid.nz {
                    if grid.point(ii, jj).distance(truth[f]) > 1.0 {
                        den += (s.frame(f)[grid.index(ii, jj)] as f64).powi(2);
                        n += 1;
                    }
                }
            }
        }
        10.0 * ((num / s.nt as f64) / (den / n as f64)).log10()
    };
    let before = ratio(&s);
    svd_clutter_filter(&mut s, 2, nt).unwrap();
    let after = ratio(&s);
    assert!(after - before >= 20.0, "improvement {:.1} dB ({before:.1} -> {after:.1})", after - before);
}

#[test]
fn localization_error_over_subpixel_offset_grid() {
    let (worst, pitch) = common::localization_worst_error();
    assert!(worst < pitch / 10.0, "worst error {:.2} µm", worst * 1e3);
}

#[test]
fn parallel_bubbles_never_swap_over_100_seeds() {
    for seed in 0..100 {
        let (wrong, tracks) = common::two_bubble_swaps(seed);
        assert_eq!(wrong, 0, "seed {seed}: {wrong} swapped points");
        assert_eq!(tracks, 2, "seed {seed}");
    }
}

#[test]
fn das_peak_lands_on_scatterer() {
    let worst = common::das_worst_offset_px();
    assert!(worst <= 1.0, "worst peak offset {worst:.2} px");
}

#[test]
fn wiener_gains_3_db_at_10_db_input_snr() {
    let grid = Grid::spanning(10.0, 14.0, -1.0, 1.0, 50.0).unwrap();
    let nt = 80;
    let clean_r = Renderer::new(grid, PsfModel::FAST_AWSALM, 0).unwrap();
    let mut clean = FrameStack::zeros(grid, (0..nt).map(|k| k as f64 * 1e-3).collect(), StackMeta::default());
    for f in 0..nt {
        let ps = [
            Point::new(10.5 + 0.03 * f as f64, -0.5),
            Point::new(13.5 - 0.02 * f as f64, 0.4),
        ];
        clean.frame_mut(f).copy_from_slice(&clean_r.render(&scatter(&ps), f, 0.0, 1.0).data);
    }
    let p_signal = frob(&clean.data).powi(2) / clean.data.len() as f64;
    let sigma = (p_signal / 10.0).sqrt();
    let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
    let err = |s: &FrameStack| s.data.iter().zip(&clean.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
    let mut gains = Vec::new();
    for seed in 0..8u64 {
        let mut rng = stream_rng(seed, Stream::Misc, 11);
        let mut noisy = clean.clone();
        for v in noisy.data.iter_mut() {
            *v += rng.sample(normal) as f32;
        }
        let snr_in = 10.0 * (frob(&clean.data).powi(2) / err(&noisy)).log10();
        wiener_axial_temporal(&mut noisy, 5, 5, None).unwrap();
        let snr_out = 10.0 * (frob(&clean.data).powi(2) / err(&noisy)).log10();
        assert!((snr_in - 10.0).abs() < 0.5, "input SNR {snr_in:.2} dB");
        gains.push(snr_out - snr_in);
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    assert!(mean >= 3.0, "mean SNR gain {mean:.2} dB ({gains:?})");
}

fn ev(frame: usize, t: f64, z: f64, x: f64) -> LocalizationEvent {
    LocalizationEvent {
        position: Point::new(z, x),
        frame,
        t,
        score: 1.0,
        amplitude: 1.0,
    }
}

#[test]
fn single_bubble_at_16_mm_s() {
    let fr = 1000.0;
    let times: Vec<f64> = (0..30).map(|f| f as f64 / fr).collect();
    let events: Vec<_> = (0..30).map(|f| vec![ev(f, times[f], 14.0, -1.0 + 16.0 * times[f])]).collect();
    let res = track_events(&events, &times, &TrackParams::default()).unwrap();
    assert_eq!(res.tracks.len(), 1);
    assert!((res.tracks[0].speed() - 16.0).abs() < 0.5);
}

#[test]
fn two_isolated_events_make_no_track() {
    let times: Vec<f64> = (0..20).map(|f| f as f64 * 1e-3).collect();
    let mut events = vec![Vec::new(); 20];
    events[10].push(ev(10, times[10], 14.0, 0.0));
    events[11].push(ev(11, times[11], 14.0, 0.016));
    let p = TrackParams {
        min_track_length: 3,
        ..TrackParams::default()
    };
    assert!(track_events(&events, &times, &p).unwrap().tracks.is_empty());
}

#[test]
fn track_spans_an_activation_gap() {
    // 10 frames at 1 kHz, a 20 ms activation pause, 10 more frames
    let times: Vec<f64> = (0..20).map(|f| f as f64 * 1e-3 + if f >= 10 { 0.02 } else { 0.0 }).collect();
    let v = 4.0;
    let events: Vec<_> = (0..20).map(|f| vec![ev(f, times[f], 14.0, v * times[f])]).collect();
    let res = track_events(&events, &times, &TrackParams::default()).unwrap();
    assert_eq!(res.tracks.len(), 1);
    let tr = &res.tracks[0];
    assert_eq!(tr.len(), 20);
    assert!((tr.speed() / v - 1.0).abs() < 0.05, "speed {}", tr.speed());
    let last = tr.points.last().unwrap().velocity.x;
    assert!((last / v - 1.0).abs() < 0.05, "filtered velocity {last}");
}
