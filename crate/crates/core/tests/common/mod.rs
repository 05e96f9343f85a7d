//! Measurements shared by the oracle tests and the acceptance report.

#![allow(dead_code)]

use awsalm::acoustics::channel::{das_beamform, synthesize_channel_data, ArrayGeometry};
use awsalm::acoustics::grid::{FrameStack, Grid, StackMeta};
use awsalm::acoustics::psf::PsfModel;
use awsalm::acoustics::render::{render_frame, Renderer, Scatterer};
use awsalm::acoustics::sequence::{TransmitEvent, TransmitKind};
use awsalm::pipeline::{localize, svd_clutter_filter, track_events, LocalizationEvent, LocalizeParams, Localizer, TrackParams};
use awsalm::rng::{stream_rng, Stream};
use awsalm::Point;
use rand::Rng;

pub fn frob(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
}

pub fn scatter(ps: &[Point]) -> Vec<Scatterer> {
    ps.iter()
        .map(|&position| Scatterer {
            position,
            amplitude: 1.0,
        })
        .collect()
}

/// Relative Frobenius residual after removing the first component of a
/// stack that repeats one cluttered frame.
pub fn svd_static_residual() -> f64 {
    let grid = Grid::spanning(10.0, 14.0, -3.0, 3.0, 50.0).unwrap();
    let r = Renderer::new(grid, PsfModel::FAST_AWSALM, 3).unwrap().with_clutter(0.5);
    let frame = r.render(&[], 0, 0.0, 1.0);
    let nt = 40;
    let mut s = FrameStack::zeros(grid, (0..nt).map(|k| k as f64 * 2e-4).collect(), StackMeta::default());
    for f in 0..nt {
        s.frame_mut(f).copy_from_slice(&frame.data);
    }
    let before = frob(&s.data);
    svd_clutter_filter(&mut s, 2, nt).unwrap();
    frob(&s.data) / before
}

/// Worst localization error (mm) of noiseless blobs over a 10×10 grid of
/// sub-pixel offsets, and the pixel pitch (mm).
pub fn localization_worst_error() -> (f64, f64) {
    let grid = Grid::spanning(10.0, 14.0, -2.0, 2.0, 50.0).unwrap();
    let mut worst: f64 = 0.0;
    for a in 0..10 {
        for b in 0..10 {
            let p = grid.point_f(40.0 + a as f64 / 10.0, 40.0 + b as f64 / 10.0);
            let frame = render_frame(&scatter(&[p]), PsfModel::AWSALM, grid, 0.0, 0).unwrap();
            let ev = localize(&frame.data, grid, PsfModel::AWSALM, 0.5).unwrap();
            let err = match ev.as_slice() {
                [one] => one.position.distance(p),
                _ => f64::INFINITY,
            };
            worst = worst.max(err);
        }
    }
    (worst, grid.pitch_mm())
}

/// Two bubbles on parallel, non-crossing paths. Returns the number of
/// track points assigned to the wrong bubble and the number of tracks.
pub fn two_bubble_swaps(seed: u64) -> (usize, usize) {
    let grid = Grid::spanning(9.0, 15.0, -3.0, 3.0, 50.0).unwrap();
    let psf = PsfModel::FAST_AWSALM;
    let renderer = Renderer::new(grid, psf, seed).unwrap().with_noise(0.02);
    let mut rng = stream_rng(seed, Stream::Misc, 7);
    let z1 = rng.random_range(10.0..11.5);
    let z2 = z1 + rng.random_range(1.0..2.0);
    let speed = rng.random_range(10.0..40.0);
    let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let slope = rng.random_range(-0.2..0.2);
    let fr = 1000.0;
    let nt = 40;
    let start = -dir * 0.8;
    let path = |z0: f64, f: usize| {
        let s = start + dir * speed * f as f64 / fr;
        Point::new(z0 + slope * s, s)
    };
    let times: Vec<f64> = (0..nt).map(|f| f as f64 / fr).collect();
    let loc = Localizer::new(grid, psf, LocalizeParams::default()).unwrap();
    let events: Vec<Vec<LocalizationEvent>> = (0..nt)
        .map(|f| {
            let img = renderer.render(&scatter(&[path(z1, f), path(z2, f)]), f, times[f], 1.0);
            loc.localize(&img.data, f, times[f])
        })
        .collect();
    let res = track_events(&events, &times, &TrackParams::default()).unwrap();
    let mut wrong = 0;
    for tr in &res.tracks {
        let owner = |p: &awsalm::pipeline::TrackPoint| {
            (p.position.distance(path(z1, p.frame)) > p.position.distance(path(z2, p.frame))) as usize
        };
        let first = owner(&tr.points[0]);
        wrong += tr.points.iter().filter(|p| owner(p) != first).count();
    }
    (wrong, res.tracks.len())
}

/// Largest distance in pixels (per axis) between the DAS envelope peak and
/// a point scatterer, over 25 positions.
pub fn das_worst_offset_px() -> f64 {
    let geom = ArrayGeometry::default();
    let event = TransmitEvent {
        kind: TransmitKind::PlaneWave { angle_deg: 0.0 },
        surface_mi: 0.1,
        center_frequency_mhz: 4.0,
        timestamp: 0.0,
        frame: Some(0),
    };
    let mut worst: f64 = 0.0;
    for (a, z) in [8.0, 11.0, 14.0, 17.0, 20.0].into_iter().enumerate() {
        for (b, x) in [-6.0, -3.0, 0.0, 3.0, 6.0].into_iter().enumerate() {
            let p = Point::new(z + 0.013 * a as f64, x + 0.021 * b as f64);
            let grid = Grid::spanning(p.z - 1.0, p.z + 1.0, p.x - 1.0, p.x + 1.0, 50.0).unwrap();
            let data = synthesize_channel_data(&[(p, 1.0)], &event, &geom).unwrap();
            let img = das_beamform(&data, &event, &geom, &grid);
            let (i, j, _) = img.argmax();
            let (ti, tj) = grid.pixel_f(p);
            worst = worst.max((i as f64 - ti).abs()).max((j as f64 - tj).abs());
        }
    }
    worst
}
