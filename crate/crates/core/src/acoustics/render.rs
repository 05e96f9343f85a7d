//! Image-domain frame synthesis.
//!
//! A frame is the sum of PSF blobs at the active bubble positions, a static
//! tissue clutter field and white Gaussian noise. Bubble and clutter echoes
//! scale with the transmit `gain`; noise does not. Rigid tissue motion moves
//! clutter and bubbles together by whole pixels.

use rand_distr::{Distribution, StandardNormal};

use super::grid::{Grid, Image};
use super::psf::PsfModel;
use crate::geometry::Point;
use crate::rng::{stream_rng, Stream};
use crate::signal::{convolve_line, gaussian_kernel};
use crate::{Error, Result};

/// Rigid in-plane tissue motion in whole pixels.
#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    /// `round(amp · sin(2π t / period))` on each axis.
    Sinusoid { amp_z_px: f64, amp_x_px: f64, period_s: f64 },
    /// Explicit shift per frame; frames past the end are unshifted.
    Table(Vec<(i32, i32)>),
}

impl Motion {
    pub fn shift(&self, frame: usize, t: f64) -> (i32, i32) {
        match self {
            Motion::Sinusoid {
                amp_z_px,
                amp_x_px,
                period_s,
            } => {
                let s = (2.0 * std::f64::consts::PI * t / period_s).sin();
                ((amp_z_px * s).round() as i32, (amp_x_px * s).round() as i32)
            }
            Motion::Table(v) => v.get(frame).copied().unwrap_or((0, 0)),
        }
    }

    pub fn max_extent(&self) -> usize {
        match self {
            Motion::Sinusoid { amp_z_px, amp_x_px, .. } => amp_z_px.abs().max(amp_x_px.abs()).ceil() as usize,
            Motion::Table(v) => v
                .iter()
                .map(|&(a, b)| a.unsigned_abs().max(b.unsigned_abs()) as usize)
                .max()
                .unwrap_or(0),
        }
    }
}

/// Static speckle-like tissue background: magnitude of a smoothed complex
/// Gaussian field (Rayleigh distributed), scaled to a mean of `mean`.
/// Stored with a margin so rigid shifts never run off the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterField {
    pub margin: usize,
    pub image: Image,
    pub mean: f64,
}

impl ClutterField {
    pub fn generate(grid: &Grid, psf: &PsfModel, mean: f64, margin: usize, seed: u64) -> Self {
        let nz = grid.nz + 2 * margin;
        let nx = grid.nx + 2 * margin;
        let mut rng = stream_rng(seed, Stream::Clutter, 0);
        let p = grid.pitch_mm();
        let kz = gaussian_kernel(psf.sigma_axial_mm() / p);
        let kx = gaussian_kernel(psf.sigma_lateral_mm() / p);
        let mut parts = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut f: Vec<f32> = (0..nz * nx)
                .map(|_| StandardNormal.sample(&mut rng))
                .map(|v: f64| v as f32)
                .collect();
            let mut scratch = Vec::new();
            for j in 0..nx {
                convolve_line(&mut f, j * nz, 1, nz, &kz, &mut scratch);
            }
            for i in 0..nz {
                convolve_line(&mut f, i, nz, nx, &kx, &mut scratch);
            }
            parts.push(f);
        }
        let mut data: Vec<f32> = parts[0]
            .iter()
            .zip(&parts[1])
            .map(|(a, b)| (a * a + b * b).sqrt())
            .collect();
        let m = data.iter().map(|&v| v as f64).sum::<f64>() / data.len().max(1) as f64;
        if m > 0.0 {
            let s = (mean / m) as f32;
            data.iter_mut().for_each(|v| *v *= s);
        }
        ClutterField {
            margin,
            image: Image { nz, nx, data },
            mean,
        }
    }

    /// Clutter value at grid pixel `(i, j)` of a frame shifted by `(dz, dx)`.
    #[inline]
    fn at(&self, i: usize, j: usize, dz: i32, dx: i32) -> f32 {
        let m = self.margin as i64;
        let ii = (i as i64 + m - dz as i64).clamp(0, self.image.nz as i64 - 1) as usize;
        let jj = (j as i64 + m - dx as i64).clamp(0, self.image.nx as i64 - 1) as usize;
        self.image.get(ii, jj)
    }
}

/// Bubble to render: position (mm) and echo amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position: Point,
    pub amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct Renderer {
    pub grid: Grid,
    pub psf: PsfModel,
    /// Standard deviation of additive white noise.
    pub noise_sigma: f64,
    pub clutter: Option<ClutterField>,
    pub motion: Option<Motion>,
    /// Two-way attenuation applied to echoes (dB per cm of depth); 0 disables.
    pub attenuation_db_per_cm: f64,
    pub seed: u64,
}

impl Renderer {
    /// Checks the sampling guard `pitch ≤ FWHM / 4`.
    pub fn new(grid: Grid, psf: PsfModel, seed: u64) -> Result<Self> {
        let finest = psf.fwhm_lateral_um.min(psf.fwhm_axial_um);
        if grid.pitch_um > finest / 4.0 {
            return Err(Error::param(
                "imaging.pitch_um",
                format!(
                    "{} µm undersamples the PSF (FWHM {} µm needs pitch ≤ {} µm)",
                    grid.pitch_um,
                    finest,
                    finest / 4.0
                ),
            ));
        }
        Ok(Renderer {
            grid,
            psf,
            noise_sigma: 0.0,
            clutter: None,
            motion: None,
            attenuation_db_per_cm: 0.0,
            seed,
        })
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    /// Adds a clutter field of the given mean, sized for the current motion.
    pub fn with_clutter(mut self, mean: f64) -> Self {
        let margin = self.motion.as_ref().map_or(0, Motion::max_extent);
        self.clutter = Some(ClutterField::generate(&self.grid, &self.psf, mean, margin, self.seed));
        self
    }

    pub fn with_motion(mut self, motion: Motion) -> Self {
        self.motion = Some(motion);
        if let Some(c) = &self.clutter {
            let mean = c.mean;
            return self.with_clutter(mean);
        }
        self
    }

    pub fn with_attenuation(mut self, db_per_cm: f64) -> Self {
        self.attenuation_db_per_cm = db_per_cm;
        self
    }

    pub fn shift(&self, frame: usize, t: f64) -> (i32, i32) {
        self.motion.as_ref().map_or((0, 0), |m| m.shift(frame, t))
    }

    fn depth_gain(&self, i: usize) -> f32 {
        if self.attenuation_db_per_cm == 0.0 {
            return 1.0;
        }
        let z = self.grid.point(i, 0).z.max(0.0);
        10f64.powf(-self.attenuation_db_per_cm * z / 10.0 / 20.0) as f32
    }

    /// Renders frame `frame` (acquired at `t`) into `out` (`grid.len()` values).
    pub fn render_frame(&self, bubbles: &[Scatterer], frame: usize, t: f64, gain: f64, out: &mut [f32]) {
        let g = self.grid;
        assert_eq!(out.len(), g.len(), "output buffer must match the grid");
        let (dz, dx) = self.shift(frame, t);
        match &self.clutter {
            Some(c) => {
                for j in 0..g.nx {
                    for i in 0..g.nz {
                        out[j * g.nz + i] = c.at(i, j, dz, dx) * gain as f32;
                    }
                }
            }
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
        let p = g.pitch_mm();
        let offset = Point::new(dz as f64 * p, dx as f64 * p);
        self.add_blobs(bubbles, offset, gain, out);
        if self.attenuation_db_per_cm != 0.0 {
            let gains: Vec<f32> = (0..g.nz).map(|i| self.depth_gain(i)).collect();
            for col in out.chunks_mut(g.nz) {
                col.iter_mut().zip(&gains).for_each(|(v, &a)| *v *= a);
            }
        }
        if self.noise_sigma > 0.0 {
            let mut rng = stream_rng(self.seed, Stream::Noise, frame as u64);
            let s = self.noise_sigma;
            for v in out.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v = (*v as f64 + s * n).max(0.0) as f32;
            }
        }
    }

    /// Convenience wrapper returning an [`Image`].
    pub fn render(&self, bubbles: &[Scatterer], frame: usize, t: f64, gain: f64) -> Image {
        let mut img = Image::zeros(self.grid.nz, self.grid.nx);
        self.render_frame(bubbles, frame, t, gain, &mut img.data);
        img
    }

    fn add_blobs(&self, bubbles: &[Scatterer], offset: Point, gain: f64, out: &mut [f32]) {
        let g = self.grid;
        let sz = self.psf.sigma_axial_mm();
        let sx = self.psf.sigma_lateral_mm();
        let mut wz = Vec::new();
        let mut wx = Vec::new();
        for b in bubbles {
            let pos = b.position + offset;
            let (fi, fj) = g.pixel_f(pos);
            let p = g.pitch_mm();
            let (rz, rx) = (4.0 * sz / p, 4.0 * sx / p);
            let i0 = (fi - rz).ceil().max(0.0) as usize;
            let j0 = (fj - rx).ceil().max(0.0) as usize;
            let i1 = ((fi + rz).floor()).min(g.nz as f64 - 1.0);
            let j1 = ((fj + rx).floor()).min(g.nx as f64 - 1.0);
            if i1 < i0 as f64 || j1 < j0 as f64 {
                continue;
            }
            let (i1, j1) = (i1 as usize, j1 as usize);
            wz.clear();
            wz.extend((i0..=i1).map(|i| (-0.5 * ((i as f64 - fi) * p / sz).powi(2)).exp()));
            wx.clear();
            wx.extend((j0..=j1).map(|j| (-0.5 * ((j as f64 - fj) * p / sx).powi(2)).exp()));
            let a = b.amplitude * self.psf.amplitude * gain;
            for (jj, &w2) in wx.iter().enumerate() {
                let col = (j0 + jj) * g.nz;
                for (ii, &w1) in wz.iter().enumerate() {
                    out[col + i0 + ii] += (a * w1 * w2) as f32;
                }
            }
        }
    }
}

/// Renders a frame with a throwaway renderer (no clutter, optional noise).
pub fn render_frame(bubbles: &[Scatterer], psf: PsfModel, grid: Grid, noise_sigma: f64, seed: u64) -> Result<Image> {
    Ok(Renderer::new(grid, psf, seed)?.with_noise(noise_sigma).render(bubbles, 0, 0.0, 1.0))
}
