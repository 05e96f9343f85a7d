//! Local mechanical-index fields.
//!
//! Nominal MI values are peak derated values by construction: the plane-wave
//! profile equals its nominal MI at the natural focus (14 mm) and a focused
//! beam equals its nominal MI at the focal point.

use super::grid::{Grid, Image};
use super::{wavelength_mm, ATTENUATION_DB_PER_MHZ_CM, CENTER_FREQUENCY_MHZ};
use crate::geometry::Point;
use crate::{Error, Result};

/// Depth of maximum pressure of the unfocused plane wave.
pub const PLANE_WAVE_PEAK_DEPTH_MM: f64 = 14.0;
/// Width (σ) of the Gaussian natural-focus envelope.
pub const PLANE_WAVE_ENVELOPE_MM: f64 = 8.0;
/// Half width of the L11-4v-like aperture; plane waves insonify `|x|` below it.
pub const HALF_APERTURE_MM: f64 = 19.2;
/// Axial σ of a focused beam relative to its lateral σ.
pub const FOCAL_ELONGATION: f64 = 7.0;

/// Applies tissue attenuation (0.5 dB/(MHz·cm)) to a surface MI.
pub fn derate_mi(surface_mi: f64, depth_mm: f64, freq_mhz: f64) -> f64 {
    let depth_cm = depth_mm.max(0.0) / 10.0;
    surface_mi * 10f64.powf(-ATTENUATION_DB_PER_MHZ_CM * freq_mhz * depth_cm / 20.0)
}

/// Surface MI that derates to `nominal` at `depth_mm`.
pub fn surface_mi_for(nominal: f64, depth_mm: f64, freq_mhz: f64) -> f64 {
    nominal / derate_mi(1.0, depth_mm, freq_mhz)
}

/// Attenuation rate of the derating in 1/mm (natural-log units).
fn derating_rate(freq_mhz: f64) -> f64 {
    ATTENUATION_DB_PER_MHZ_CM * freq_mhz / 10.0 * std::f64::consts::LN_10 / 20.0
}

/// Axial MI profile of the imaging plane wave.
///
/// The source envelope is a Gaussian natural focus centred at
/// `14 mm + β·w²` (β the derating rate, w the envelope width); multiplied by
/// the exponential derating the product peaks at exactly 14 mm, where it is
/// normalised to `nominal_mi`.
pub fn plane_wave_mi_profile(nominal_mi: f64, depth_mm: f64) -> f64 {
    plane_wave_mi_profile_at(nominal_mi, depth_mm, CENTER_FREQUENCY_MHZ)
}

pub fn plane_wave_mi_profile_at(nominal_mi: f64, depth_mm: f64, freq_mhz: f64) -> f64 {
    let z = depth_mm.max(0.0);
    let beta = derating_rate(freq_mhz);
    let w = PLANE_WAVE_ENVELOPE_MM;
    let zn = PLANE_WAVE_PEAK_DEPTH_MM + beta * w * w;
    let envelope = |z: f64| (-(z - zn).powi(2) / (2.0 * w * w)).exp();
    let raw = |z: f64| envelope(z) * derate_mi(1.0, z, freq_mhz);
    nominal_mi * raw(z) / raw(PLANE_WAVE_PEAK_DEPTH_MM)
}

/// Focused transmit beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocusedBeam {
    pub focus: Point,
    pub f_number: f64,
    /// MI at the focus (derated).
    pub peak_mi: f64,
    pub freq_mhz: f64,
}

impl FocusedBeam {
    /// Lateral σ (mm); the focal FWHM is `f_number × λ`.
    pub fn sigma_lateral(&self) -> f64 {
        self.f_number * wavelength_mm(self.freq_mhz) / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }

    pub fn sigma_axial(&self) -> f64 {
        FOCAL_ELONGATION * self.sigma_lateral()
    }

    pub fn mi_at(&self, p: Point) -> f64 {
        let sl = self.sigma_lateral();
        let sa = self.sigma_axial();
        let dz = (p.z - self.focus.z) / sa;
        let dx = (p.x - self.focus.x) / sl;
        self.peak_mi * (-0.5 * (dz * dz + dx * dx)).exp()
    }
}

/// Focused MI field over a grid; the peak equals the derated surface MI at
/// the focal depth.
pub fn focused_mi_field(focus: Point, f_number: f64, surface_mi: f64, grid: &Grid) -> Result<Image> {
    if !grid.contains(focus) {
        return Err(Error::Geometry(format!(
            "focus ({:.2}, {:.2}) mm lies outside the grid",
            focus.z, focus.x
        )));
    }
    if !(f_number > 0.0) {
        return Err(Error::param("sequence.f_number", "must be > 0"));
    }
    let beam = FocusedBeam {
        focus,
        f_number,
        peak_mi: derate_mi(surface_mi, focus.z, CENTER_FREQUENCY_MHZ),
        freq_mhz: CENTER_FREQUENCY_MHZ,
    };
    Ok(Image::from_fn(grid.nz, grid.nx, |i, j| beam.mi_at(grid.point(i, j)) as f32))
}

/// MI seen at a point for one transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beam {
    Plane { nominal_mi: f64, freq_mhz: f64 },
    Focused(FocusedBeam),
}

impl Beam {
    pub fn mi_at(&self, p: Point) -> f64 {
        match self {
            Beam::Plane { nominal_mi, freq_mhz } => {
                if p.x.abs() > HALF_APERTURE_MM {
                    0.0
                } else {
                    plane_wave_mi_profile_at(*nominal_mi, p.z, *freq_mhz)
                }
            }
            Beam::Focused(b) => b.mi_at(p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn derating_values() {
        assert_eq!(derate_mi(0.5, 0.0, 4.0), 0.5);
        assert_abs_diff_eq!(derate_mi(0.5, 10.0, 4.0), 0.5 * 10f64.powf(-2.0 / 20.0), epsilon = 1e-12);
        assert_abs_diff_eq!(derate_mi(0.5, 10.0, 4.0), 0.397, epsilon = 5e-4);
        // linear in the surface MI
        assert_abs_diff_eq!(derate_mi(0.8, 7.0, 4.0), 0.8 * derate_mi(1.0, 7.0, 4.0), epsilon = 1e-15);
    }

    #[test]
    fn derating_composes_over_depth() {
        for (d1, d2) in [(3.0, 4.0), (10.0, 12.5), (0.0, 30.0)] {
            let a = derate_mi(0.7, d1 + d2, 4.0);
            let b = derate_mi(derate_mi(0.7, d1, 4.0), d2, 4.0);
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn plane_profile_peaks_at_natural_focus() {
        assert_abs_diff_eq!(plane_wave_mi_profile(0.22, 14.0), 0.22, epsilon = 1e-15);
        let depths: Vec<f64> = (0..=4000).map(|k| k as f64 * 0.01).collect();
        let best = depths
            .iter()
            .copied()
            .max_by(|a, b| plane_wave_mi_profile(0.3, *a).total_cmp(&plane_wave_mi_profile(0.3, *b)))
            .unwrap();
        assert_abs_diff_eq!(best, 14.0, epsilon = 0.005);
        assert!(plane_wave_mi_profile(0.3, 5.0) < plane_wave_mi_profile(0.3, 14.0));
        assert!(plane_wave_mi_profile(0.3, 30.0) < plane_wave_mi_profile(0.3, 14.0));
        // unimodal on a sampled grid
        let vals: Vec<f64> = depths.iter().map(|&z| plane_wave_mi_profile(0.3, z)).collect();
        let peak = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(vals[..=peak].windows(2).all(|w| w[1] >= w[0]));
        assert!(vals[peak..].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn focused_field_peak_and_tail() {
        let grid = Grid::spanning(0.0, 30.0, -15.0, 15.0, 50.0).unwrap();
        let focus = Point::new(20.0, 2.0);
        let img = focused_mi_field(focus, 2.0, 1.5, &grid).unwrap();
        let (i, j, v) = img.argmax();
        let (fi, fj) = grid.pixel_f(focus);
        assert_eq!((i, j), (fi.round() as usize, fj.round() as usize));
        assert_abs_diff_eq!(v as f64, derate_mi(1.5, 20.0, 4.0), epsilon = 1e-6);
        let beam = FocusedBeam {
            focus,
            f_number: 2.0,
            peak_mi: 1.0,
            freq_mhz: 4.0,
        };
        let off = beam.mi_at(Point::new(20.0, 2.0 + 3.0 * beam.sigma_lateral()));
        assert!(off < 0.012, "{off}");
        assert_abs_diff_eq!(beam.sigma_axial() / beam.sigma_lateral(), 7.0, epsilon = 1e-12);
        assert!(focused_mi_field(Point::new(40.0, 0.0), 2.0, 1.5, &grid).is_err());
    }

    #[test]
    fn two_focal_zones_give_two_maxima() {
        let grid = Grid::spanning(5.0, 35.0, -2.0, 2.0, 100.0).unwrap();
        let a = focused_mi_field(Point::new(16.0, 0.0), 1.0, 1.5, &grid).unwrap();
        let b = focused_mi_field(Point::new(23.0, 0.0), 1.0, 1.5, &grid).unwrap();
        let j = grid.nx / 2;
        let profile: Vec<f32> = (0..grid.nz).map(|i| a.get(i, j).max(b.get(i, j))).collect();
        let maxima: Vec<usize> = (1..profile.len() - 1)
            .filter(|&i| profile[i] > profile[i - 1] && profile[i] >= profile[i + 1])
            .collect();
        assert_eq!(maxima.len(), 2);
        let depths: Vec<f64> = maxima.iter().map(|&i| grid.point(i, j).z).collect();
        assert_abs_diff_eq!(depths[0], 16.0, epsilon = 0.11);
        assert_abs_diff_eq!(depths[1], 23.0, epsilon = 0.11);
    }
}
