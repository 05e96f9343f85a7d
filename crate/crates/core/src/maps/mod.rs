//! Super-resolved maps and the metrics computed on them.
//!
//! Events are binned on a fine grid (default 12.5 µm). Each cell keeps the
//! event count, the summed track speed and the summed unit heading, so
//! partial maps from disjoint track sets merge by plain addition.

mod dose;
mod export;
mod profile;

pub use dose::{normalize_dose_response, roi_intensity_curve, DoseKey, RoiMask};
pub use export::{write_csv_matrix, write_pgm, write_profile_csv};
pub use profile::{profile_band_fwhm, profile_fwhm, resolution_gain, resolution_gain_psf, ProfileMeasurement};

use crate::acoustics::grid::{FrameStack, Grid, Image};
use crate::geometry::Point;
use crate::pipeline::Track;
use crate::{par, Error, Result};

pub const DEFAULT_SR_PITCH_UM: f64 = 12.5;

/// Cells with fewer events than this have no direction.
pub const MIN_DIRECTION_COUNT: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SrMaps {
    pub grid: Grid,
    pub count: Vec<u32>,
    pub speed_sum: Vec<f64>,
    pub cos_sum: Vec<f64>,
    pub sin_sum: Vec<f64>,
}

impl SrMaps {
    pub fn new(grid: Grid) -> Self {
        let n = grid.len();
        SrMaps {
            grid,
            count: vec![0; n],
            speed_sum: vec![0.0; n],
            cos_sum: vec![0.0; n],
            sin_sum: vec![0.0; n],
        }
    }

    /// SR grid over `[z0, z1] × [x0, x1]` mm; the pitch must be at most half
    /// the source pixel pitch.
    pub fn spanning(z0: f64, z1: f64, x0: f64, x1: f64, pitch_um: f64, source_pitch_um: f64) -> Result<Self> {
        if pitch_um > source_pitch_um / 2.0 {
            return Err(Error::param(
                "maps.pitch_um",
                format!("{pitch_um} µm is coarser than half the {source_pitch_um} µm source pitch"),
            ));
        }
        Ok(SrMaps::new(Grid::spanning(z0, z1, x0, x1, pitch_um)?))
    }

    fn cell(&self, p: Point) -> Option<usize> {
        if !self.grid.contains(p) {
            return None;
        }
        let (i, j) = self.grid.pixel_f(p);
        let (i, j) = (i.round().max(0.0) as usize, j.round().max(0.0) as usize);
        Some(self.grid.index(i.min(self.grid.nz - 1), j.min(self.grid.nx - 1)))
    }

    /// Adds one event. `heading` is `atan2(vz, vx)` in radians.
    pub fn add_event(&mut self, p: Point, speed: f64, heading: f64) -> bool {
        match self.cell(p) {
            Some(k) => {
                self.count[k] += 1;
                self.speed_sum[k] += speed;
                self.cos_sum[k] += heading.cos();
                self.sin_sum[k] += heading.sin();
                true
            }
            None => false,
        }
    }

    /// Cell-wise sum with a map on the same grid.
    pub fn merge(&mut self, o: &SrMaps) {
        assert_eq!(self.grid, o.grid, "maps must share a grid");
        for k in 0..self.count.len() {
            self.count[k] += o.count[k];
            self.speed_sum[k] += o.speed_sum[k];
            self.cos_sum[k] += o.cos_sum[k];
            self.sin_sum[k] += o.sin_sum[k];
        }
    }

    pub fn total_count(&self) -> u64 {
        self.count.iter().map(|&c| c as u64).sum()
    }

    pub fn occupied(&self) -> usize {
        self.count.iter().filter(|&&c| c > 0).count()
    }

    /// Square-rooted event count.
    pub fn density(&self) -> Image {
        self.image(|k| (self.count[k] as f64).sqrt())
    }

    /// Mean track speed per cell (mm/s), 0 where empty.
    pub fn velocity(&self) -> Image {
        self.image(|k| match self.count[k] {
            0 => 0.0,
            c => self.speed_sum[k] / c as f64,
        })
    }

    /// Circular mean heading per cell (rad); NaN below two events.
    pub fn direction(&self) -> Image {
        self.image(|k| {
            if self.count[k] < MIN_DIRECTION_COUNT {
                f64::NAN
            } else {
                self.sin_sum[k].atan2(self.cos_sum[k])
            }
        })
    }

    fn image(&self, f: impl Fn(usize) -> f64) -> Image {
        Image {
            nz: self.grid.nz,
            nx: self.grid.nx,
            data: (0..self.grid.len()).map(|k| f(k) as f32).collect(),
        }
    }
}

/// Tracks per parallel partial map. Fixed so the merge order, and hence the
/// floating-point sums, do not depend on the thread count.
const TRACKS_PER_PART: usize = 256;

/// Accumulates track events onto `grid`. Events outside the extent are skipped.
pub fn accumulate_maps(tracks: &[Track], grid: Grid) -> SrMaps {
    let parts = par::map_chunks(tracks, TRACKS_PER_PART, |_, chunk| {
        let mut m = SrMaps::new(grid);
        for t in chunk {
            let speed = t.speed();
            for p in &t.points {
                m.add_event(p.position, speed, p.velocity.z.atan2(p.velocity.x));
            }
        }
        m
    });
    let mut out = SrMaps::new(grid);
    for p in &parts {
        out.merge(p);
    }
    out
}

/// Density-only accumulation of raw localizations.
pub fn accumulate_points(points: impl IntoIterator<Item = Point>, grid: Grid) -> SrMaps {
    let mut m = SrMaps::new(grid);
    for p in points {
        m.add_event(p, 0.0, 0.0);
    }
    m
}

/// Keeps the track points with `t0 <= t < t1` and drops trimmed tracks
/// shorter than `min_len`.
pub fn time_gate(tracks: &[Track], t0: f64, t1: f64, min_len: usize) -> Result<Vec<Track>> {
    if !(t1 > t0) {
        return Err(Error::param("maps.gate", format!("need t0 < t1, got [{t0}, {t1})")));
    }
    Ok(tracks
        .iter()
        .filter_map(|t| {
            let points: Vec<_> = t.points.iter().copied().filter(|p| p.t >= t0 && p.t < t1).collect();
            (!points.is_empty() && points.len() >= min_len).then_some(Track { id: t.id, points })
        })
        .collect())
}

/// Per-frame maximum over the depth band `[z0, z1]` mm. The result has one
/// row per lateral pixel (`nz` = lateral) and one column per frame.
pub fn spatiotemporal_projection(stack: &FrameStack, z0: f64, z1: f64) -> Result<Image> {
    let g = stack.grid;
    let (a, _) = g.pixel_f(Point::new(z0, 0.0));
    let (b, _) = g.pixel_f(Point::new(z1, 0.0));
    let (i0, i1) = (a.ceil().max(0.0) as usize, b.floor().min(g.nz as f64 - 1.0));
    if !(z1 >= z0) || i1 < 0.0 || i0 > i1 as usize {
        return Err(Error::param("maps.band", format!("band [{z0}, {z1}] mm outside the stack")));
    }
    let i1 = i1 as usize;
    let cols = par::map_range(stack.nt, |f| {
        let frame = stack.frame(f);
        (0..g.nx)
            .map(|j| frame[j * g.nz + i0..=j * g.nz + i1].iter().copied().fold(f32::NEG_INFINITY, f32::max))
            .collect::<Vec<f32>>()
    });
    Ok(Image {
        nz: g.nx,
        nx: stack.nt,
        data: cols.concat(),
    })
}
