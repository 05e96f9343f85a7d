//! Line profiles through a map: peak widths and separations.

use crate::acoustics::grid::{Grid, Image};
use crate::acoustics::psf::PsfModel;
use crate::geometry::Point;
use crate::{Error, Result};

/// Samples per map pixel along the profile line.
const OVERSAMPLE: f64 = 4.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileMeasurement {
    pub line: (Point, Point),
    pub distance_um: Vec<f64>,
    pub intensity: Vec<f64>,
    /// Centres of the resolved peaks (µm along the line).
    pub peaks_um: Vec<f64>,
    pub fwhm_um: Vec<f64>,
    /// Distances between adjacent resolved peaks.
    pub separations_um: Vec<f64>,
}

impl ProfileMeasurement {
    pub fn resolved(&self) -> usize {
        self.peaks_um.len()
    }
}

/// Bilinear profile from `a` to `b` (mm) over `map` on `grid`. Peaks below
/// `min_peak_height` × the profile maximum are ignored; two neighbouring
/// peaks count as resolved only if the profile dips below half of the lower
/// one between them, otherwise the lower one is dropped.
pub fn profile_fwhm(map: &Image, grid: &Grid, a: Point, b: Point, min_peak_height: f64) -> Result<ProfileMeasurement> {
    profile_band_fwhm(map, grid, a, b, 0.0, min_peak_height)
}

/// Like [`profile_fwhm`], but averages parallel lines spaced one map pitch
/// apart within `half_width` mm on either side of `a`–`b`. Useful on sparse
/// count maps.
pub fn profile_band_fwhm(
    map: &Image,
    grid: &Grid,
    a: Point,
    b: Point,
    half_width: f64,
    min_peak_height: f64,
) -> Result<ProfileMeasurement> {
    if map.nz != grid.nz || map.nx != grid.nx {
        return Err(Error::param("maps.profile", "map does not match its grid"));
    }
    if !(half_width >= 0.0) {
        return Err(Error::param("maps.profile_half_width", "must be >= 0"));
    }
    let length = a.distance(b);
    let normal = if length > 0.0 { ((b - a) * (1.0 / length)).perp() } else { Point::new(0.0, 0.0) };
    let lines = (half_width / grid.pitch_mm()).floor() as i64;
    for o in [-lines, lines] {
        let d = normal * (o as f64 * grid.pitch_mm());
        if !(grid.contains(a + d) && grid.contains(b + d)) {
            return Err(Error::param("maps.profile", "line endpoints outside the map"));
        }
    }
    let n = ((length / grid.pitch_mm() * OVERSAMPLE).ceil() as usize).max(1) + 1;
    let step = length / (n - 1) as f64;
    let mut out = ProfileMeasurement {
        line: (a, b),
        ..Default::default()
    };
    let m = (2 * lines + 1) as f64;
    for k in 0..n {
        let s = k as f64 / (n - 1) as f64;
        let c = a + (b - a) * s;
        let mut v = 0.0;
        for o in -lines..=lines {
            let (fi, fj) = grid.pixel_f(c + normal * (o as f64 * grid.pitch_mm()));
            v += map.bilinear(fi, fj);
        }
        out.distance_um.push(k as f64 * step * 1e3);
        out.intensity.push(v / m);
    }
    let y = &out.intensity;
    let top = y.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Ok(out);
    }
    // plateau-aware local maxima: first index of each flat top
    let mut peaks: Vec<usize> = Vec::new();
    let mut k = 0;
    while k < n {
        let mut e = k;
        while e + 1 < n && y[e + 1] == y[k] {
            e += 1;
        }
        let left = k == 0 || y[k - 1] < y[k];
        let right = e + 1 == n || y[e + 1] < y[k];
        if left && right && y[k] >= min_peak_height * top {
            peaks.push((k + e) / 2);
        }
        k = e + 1;
    }
    // merge until every adjacent pair is separated by a deep enough dip
    loop {
        let mut merged = false;
        for w in 0..peaks.len().saturating_sub(1) {
            let (p, q) = (peaks[w], peaks[w + 1]);
            let dip = y[p..=q].iter().copied().fold(f64::INFINITY, f64::min);
            if dip >= 0.5 * y[p].min(y[q]) {
                peaks.remove(if y[p] >= y[q] { w + 1 } else { w });
                merged = true;
                break;
            }
        }
        if !merged {
            break;
        }
    }
    for (w, &p) in peaks.iter().enumerate() {
        let half = 0.5 * y[p];
        let lo = if w == 0 { 0 } else { argmin(y, peaks[w - 1], p) };
        let hi = if w + 1 == peaks.len() { n - 1 } else { argmin(y, p, peaks[w + 1]) };
        let x = &out.distance_um;
        let mut l = p;
        while l > lo && y[l] > half {
            l -= 1;
        }
        let xl = if y[l] <= half { lerp(x[l], y[l], x[l + 1], y[l + 1], half) } else { x[l] };
        let mut r = p;
        while r < hi && y[r] > half {
            r += 1;
        }
        let xr = if y[r] <= half { lerp(x[r - 1], y[r - 1], x[r], y[r], half) } else { x[r] };
        out.peaks_um.push(refine(x, y, p));
        out.fwhm_um.push(xr - xl);
    }
    out.separations_um = out.peaks_um.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(out)
}

fn argmin(y: &[f64], a: usize, b: usize) -> usize {
    (a..=b).fold(a, |m, k| if y[k] < y[m] { k } else { m })
}

fn lerp(x0: f64, y0: f64, x1: f64, y1: f64, level: f64) -> f64 {
    if y1 == y0 {
        return x0;
    }
    x0 + (level - y0) * (x1 - x0) / (y1 - y0)
}

/// Parabolic refinement of a sampled peak position.
fn refine(x: &[f64], y: &[f64], p: usize) -> f64 {
    if p == 0 || p + 1 >= y.len() {
        return x[p];
    }
    let den = y[p - 1] - 2.0 * y[p] + y[p + 1];
    if den >= 0.0 {
        return x[p];
    }
    let d = (0.5 * (y[p - 1] - y[p + 1]) / den).clamp(-0.5, 0.5);
    x[p] + d * (x[p + 1] - x[p])
}

/// Ratio of a reference PSF width to a measured width.
pub fn resolution_gain(measured_um: f64, psf_fwhm_um: f64) -> Result<f64> {
    if !(measured_um > 0.0) {
        return Err(Error::param("maps.measured_fwhm", "must be > 0"));
    }
    Ok(psf_fwhm_um / measured_um)
}

/// Per-axis gains `(lateral, axial)` against a PSF model.
pub fn resolution_gain_psf(lateral_um: f64, axial_um: f64, psf: &PsfModel) -> Result<(f64, f64)> {
    Ok((
        resolution_gain(lateral_um, psf.fwhm_lateral_um)?,
        resolution_gain(axial_um, psf.fwhm_axial_um)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::psf::FWHM_PER_SIGMA;

    /// Vertical ridges (constant along z) at lateral positions `xs` (mm).
    fn ridges(xs: &[f64], sigma_um: f64) -> (Grid, Image) {
        let g = Grid::spanning(0.0, 0.5, -1.0, 1.0, 12.5).unwrap();
        let s = sigma_um * 1e-3;
        let img = Image::from_fn(g.nz, g.nx, |i, j| {
            let x = g.point(i, j).x;
            xs.iter().map(|&c| (-0.5 * ((x - c) / s).powi(2)).exp()).sum::<f64>() as f32
        });
        (g, img)
    }

    fn across(g: &Grid, img: &Image) -> ProfileMeasurement {
        profile_fwhm(img, g, Point::new(0.25, -0.9), Point::new(0.25, 0.9), 0.2).unwrap()
    }

    #[test]
    fn gaussian_ridge_widths() {
        for sigma in [25.0, 50.0, 100.0] {
            let (g, img) = ridges(&[0.013], sigma);
            let m = across(&g, &img);
            assert_eq!(m.resolved(), 1);
            assert!((m.fwhm_um[0] - FWHM_PER_SIGMA * sigma).abs() < 12.5, "{sigma}: {:?}", m.fwhm_um);
            assert!((m.peaks_um[0] - 913.0).abs() < 12.5);
        }
    }

    #[test]
    fn band_average_of_a_ridge_matches_single_line() {
        let (g, img) = ridges(&[0.1], 50.0);
        let single = across(&g, &img);
        let band = profile_band_fwhm(&img, &g, Point::new(0.25, -0.9), Point::new(0.25, 0.9), 0.1, 0.2).unwrap();
        assert!((band.fwhm_um[0] - single.fwhm_um[0]).abs() < 1e-6);
        assert!(profile_band_fwhm(&img, &g, Point::new(0.25, -0.9), Point::new(0.25, 0.9), 0.3, 0.2).is_err());
    }

    #[test]
    fn ridges_115_um_apart_resolve() {
        let (g, img) = ridges(&[-0.0575, 0.0575], 30.0);
        let m = across(&g, &img);
        assert_eq!(m.resolved(), 2);
        assert!((m.separations_um[0] - 115.0).abs() < 12.5);
    }

    #[test]
    fn close_ridges_merge() {
        let (g, img) = ridges(&[-0.03, 0.03], 50.0);
        assert_eq!(across(&g, &img).resolved(), 1);
    }

    #[test]
    fn empty_map_has_no_peaks() {
        let g = Grid::spanning(0.0, 0.5, -1.0, 1.0, 12.5).unwrap();
        let m = across(&g, &Image::zeros(g.nz, g.nx));
        assert!(m.fwhm_um.is_empty() && m.separations_um.is_empty());
    }

    #[test]
    fn gains() {
        assert!((resolution_gain(111.0, 543.0).unwrap() - 4.89).abs() < 0.01);
        assert_eq!(resolution_gain(543.0, 543.0).unwrap(), 1.0);
        assert!((resolution_gain(130.0, 487.0).unwrap() - 3.75).abs() < 0.01);
        assert!(resolution_gain(0.0, 543.0).is_err());
        let (l, a) = resolution_gain_psf(111.0, 102.0, &PsfModel::AWSALM).unwrap();
        assert!(l > 4.8 && a > 5.1);
    }
}
