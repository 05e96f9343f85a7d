//! Sub-pixel localization by normalised cross-correlation with the PSF.
//!
//! The template is the PSF sampled over ±1 FWHM per axis. Because it is a
//! separable Gaussian, `Σ I·T` is two 1D correlations; the zero-mean
//! correction and the local image energy come from summed-area tables.
//! Accepted peaks are local maxima of the score above the correlation
//! threshold whose image amplitude clears a robust noise floor, thinned by
//! greedy non-maximum suppression at one FWHM and refined with a quadratic
//! fit over the 3×3 neighbourhood.

use crate::acoustics::grid::{FrameStack, Grid};
use crate::acoustics::psf::PsfModel;
use crate::geometry::Point;
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationEvent {
    pub position: Point,
    pub frame: usize,
    pub t: f64,
    pub score: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeParams {
    /// Minimum normalised correlation, in (0, 1).
    pub threshold: f64,
    /// Amplitude floor in robust noise deviations above the frame median.
    pub noise_k: f64,
    /// Absolute amplitude floor.
    pub min_amplitude: f64,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        LocalizeParams {
            threshold: 0.6,
            noise_k: 5.0,
            min_amplitude: 0.0,
        }
    }
}

impl LocalizeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::param("pipeline.threshold", "must lie in (0, 1)"));
        }
        if !(self.noise_k >= 0.0 && self.min_amplitude >= 0.0) {
            return Err(Error::param("pipeline.noise_k", "must be >= 0"));
        }
        Ok(())
    }
}

/// Precomputed template for one grid and PSF.
#[derive(Debug, Clone)]
pub struct Localizer {
    pub grid: Grid,
    pub psf: PsfModel,
    pub params: LocalizeParams,
    gz: Vec<f64>,
    gx: Vec<f64>,
    mean_t: f64,
    energy_t: f64,
    /// NMS radii in pixels.
    sep_z: f64,
    sep_x: f64,
}

impl Localizer {
    pub fn new(grid: Grid, psf: PsfModel, params: LocalizeParams) -> Result<Self> {
        params.validate()?;
        let p = grid.pitch_mm();
        let hz = (psf.fwhm_axial_um * 1e-3 / p).ceil().max(1.0) as isize;
        let hx = (psf.fwhm_lateral_um * 1e-3 / p).ceil().max(1.0) as isize;
        let (sz, sx) = (psf.sigma_axial_mm() / p, psf.sigma_lateral_mm() / p);
        let gz: Vec<f64> = (-hz..=hz).map(|u| (-0.5 * (u as f64 / sz).powi(2)).exp()).collect();
        let gx: Vec<f64> = (-hx..=hx).map(|v| (-0.5 * (v as f64 / sx).powi(2)).exp()).collect();
        let m = (gz.len() * gx.len()) as f64;
        let mean_t = gz.iter().sum::<f64>() * gx.iter().sum::<f64>() / m;
        let energy_t = gz.iter().map(|v| v * v).sum::<f64>() * gx.iter().map(|v| v * v).sum::<f64>() - m * mean_t * mean_t;
        Ok(Localizer {
            grid,
            psf,
            params,
            gz,
            gx,
            mean_t,
            energy_t,
            sep_z: psf.fwhm_axial_um * 1e-3 / p,
            sep_x: psf.fwhm_lateral_um * 1e-3 / p,
        })
    }

    /// Normalised cross-correlation score map (zero where the window is flat).
    pub fn score_map(&self, frame: &[f32]) -> Vec<f64> {
        let (nz, nx) = (self.grid.nz, self.grid.nx);
        let hz = (self.gz.len() / 2) as isize;
        let hx = (self.gx.len() / 2) as isize;
        // axial pass
        let mut a = vec![0f64; nz * nx];
        for j in 0..nx {
            let col = &frame[j * nz..(j + 1) * nz];
            for i in 0..nz {
                let mut acc = 0.0;
                for (u, &w) in self.gz.iter().enumerate() {
                    let ii = i as isize + u as isize - hz;
                    if ii >= 0 && (ii as usize) < nz {
                        acc += w * col[ii as usize] as f64;
                    }
                }
                a[j * nz + i] = acc;
            }
        }
        // lateral pass
        let mut corr = vec![0f64; nz * nx];
        for j in 0..nx {
            for (v, &w) in self.gx.iter().enumerate() {
                let jj = j as isize + v as isize - hx;
                if jj < 0 || jj as usize >= nx {
                    continue;
                }
                let src = &a[jj as usize * nz..(jj as usize + 1) * nz];
                let dst = &mut corr[j * nz..(j + 1) * nz];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += w * s);
            }
        }
        // window sums via summed-area tables (zero outside the frame)
        let w = nz + 1;
        let mut s1 = vec![0f64; w * (nx + 1)];
        let mut s2 = vec![0f64; w * (nx + 1)];
        for j in 0..nx {
            let (mut r1, mut r2) = (0.0, 0.0);
            for i in 0..nz {
                let v = frame[j * nz + i] as f64;
                r1 += v;
                r2 += v * v;
                s1[(j + 1) * w + i + 1] = s1[j * w + i + 1] + r1;
                s2[(j + 1) * w + i + 1] = s2[j * w + i + 1] + r2;
            }
        }
        let m = (self.gz.len() * self.gx.len()) as f64;
        for j in 0..nx {
            let j0 = (j as isize - hx).max(0) as usize;
            let j1 = ((j as isize + hx + 1) as usize).min(nx);
            for i in 0..nz {
                let i0 = (i as isize - hz).max(0) as usize;
                let i1 = ((i as isize + hz + 1) as usize).min(nz);
                let sum = |s: &[f64]| s[j1 * w + i1] - s[j0 * w + i1] - s[j1 * w + i0] + s[j0 * w + i0];
                let (a1, a2) = (sum(&s1), sum(&s2));
                let var = a2 - a1 * a1 / m;
                let k = j * nz + i;
                let num = corr[k] - self.mean_t * a1;
                // flat windows (up to rounding) carry no shape information
                corr[k] = if a2 > 0.0 && var > 1e-9 * a2 {
                    (num / (var * self.energy_t).sqrt()).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        corr
    }

    /// Localizes the bubbles of one frame.
    pub fn localize(&self, frame: &[f32], frame_index: usize, t: f64) -> Vec<LocalizationEvent> {
        let (nz, nx) = (self.grid.nz, self.grid.nx);
        if nz < 3 || nx < 3 {
            return Vec::new();
        }
        let floor = self.amplitude_floor(frame);
        let score = self.score_map(frame);
        let s = |i: usize, j: usize| score[j * nz + i];
        let mut cand: Vec<(f64, usize, usize)> = Vec::new();
        for j in 1..nx - 1 {
            for i in 1..nz - 1 {
                let c = s(i, j);
                if c < self.params.threshold || (frame[j * nz + i] as f64) < floor {
                    continue;
                }
                let mut peak = true;
                'n: for dj in 0..3 {
                    for di in 0..3 {
                        if (di, dj) == (1, 1) {
                            continue;
                        }
                        let v = s(i + di - 1, j + dj - 1);
                        // ties go to the first pixel in storage order
                        let earlier = (dj, di) < (1, 1);
                        if v > c || (earlier && v == c) {
                            peak = false;
                            break 'n;
                        }
                    }
                }
                if peak {
                    cand.push((c, i, j));
                }
            }
        }
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
        let mut kept: Vec<(f64, usize, usize)> = Vec::new();
        for c in cand {
            let clear = kept.iter().all(|k| {
                let dz = (k.1 as f64 - c.1 as f64) / self.sep_z;
                let dx = (k.2 as f64 - c.2 as f64) / self.sep_x;
                dz * dz + dx * dx >= 1.0
            });
            if clear {
                kept.push(c);
            }
        }
        kept.into_iter()
            .map(|(c, i, j)| {
                let mut nb = [[0f64; 3]; 3];
                for (dj, row) in nb.iter_mut().enumerate() {
                    for (di, v) in row.iter_mut().enumerate() {
                        *v = s(i + di - 1, j + dj - 1);
                    }
                }
                let (oz, ox) = quadratic_peak(&nb);
                let (fi, fj) = (i as f64 + oz, j as f64 + ox);
                LocalizationEvent {
                    position: self.grid.point_f(fi, fj),
                    frame: frame_index,
                    t,
                    score: c,
                    amplitude: crate::acoustics::grid::bilinear(frame, nz, nx, fi, fj),
                }
            })
            .collect()
    }

    fn amplitude_floor(&self, frame: &[f32]) -> f64 {
        let mut v: Vec<f32> = frame.to_vec();
        let n = v.len();
        let mid = n / 2;
        let med = *v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1 as f64;
        v.iter_mut().for_each(|x| *x = (*x as f64 - med).abs() as f32);
        let mad = *v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1 as f64;
        (med + self.params.noise_k * 1.4826 * mad).max(self.params.min_amplitude)
    }

    /// Localizes every frame of a stack.
    pub fn localize_stack(&self, stack: &FrameStack) -> Vec<Vec<LocalizationEvent>> {
        par::map_range(stack.nt, |f| self.localize(stack.frame(f), f, stack.frame_times[f]))
    }
}

/// Sub-pixel offset `(axial, lateral)` of the maximum of a least-squares
/// quadratic over a 3×3 neighbourhood `nb[lateral][axial]`.
pub fn quadratic_peak(nb: &[[f64; 3]; 3]) -> (f64, f64) {
    let f = |x: i32, y: i32| nb[(y + 1) as usize][(x + 1) as usize];
    let (mut b, mut c, mut d, mut e) = (0.0, 0.0, 0.0, 0.0);
    for k in -1..=1 {
        b += f(1, k) - f(-1, k);
        c += f(k, 1) - f(k, -1);
        d += f(1, k) + f(-1, k) - 2.0 * f(0, k);
        e += f(k, 1) + f(k, -1) - 2.0 * f(k, 0);
    }
    let (b, c, d, e) = (b / 6.0, c / 6.0, d / 6.0, e / 6.0);
    let g = (f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1)) / 4.0;
    let det = 4.0 * d * e - g * g;
    if d < 0.0 && det > 0.0 {
        let x = (-2.0 * e * b + g * c) / det;
        let y = (-2.0 * d * c + g * b) / det;
        if x.abs() <= 1.0 && y.abs() <= 1.0 {
            return (x, y);
        }
    }
    // separable fallback through the centre
    let para = |m: f64, z: f64, p: f64| {
        let den = m - 2.0 * z + p;
        if den < 0.0 {
            (0.5 * (m - p) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    (para(f(-1, 0), f(0, 0), f(1, 0)), para(f(0, -1), f(0, 0), f(0, 1)))
}

/// Localizes one frame with a throwaway [`Localizer`].
pub fn localize(frame: &[f32], grid: Grid, psf: PsfModel, threshold: f64) -> Result<Vec<LocalizationEvent>> {
    let params = LocalizeParams {
        threshold,
        ..LocalizeParams::default()
    };
    Ok(Localizer::new(grid, psf, params)?.localize(frame, 0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::render::{render_frame, Scatterer};

    fn grid() -> Grid {
        Grid::spanning(10.0, 14.0, -2.0, 2.0, 50.0).unwrap()
    }

    fn blob_at(p: Point) -> Vec<f32> {
        let s = [Scatterer {
            position: p,
            amplitude: 1.0,
        }];
        render_frame(&s, PsfModel::AWSALM, grid(), 0.0, 0).unwrap().data
    }

    #[test]
    fn single_blob_subpixel() {
        let g = grid();
        let truth = Point::new(12.0173, -0.3121);
        let ev = localize(&blob_at(truth), g, PsfModel::AWSALM, 0.5).unwrap();
        assert_eq!(ev.len(), 1);
        let err = ev[0].position.distance(truth);
        assert!(err < g.pitch_mm() / 10.0, "{err}");
        assert!(ev[0].score > 0.99);
    }

    #[test]
    fn empty_frame_has_no_events() {
        let g = grid();
        let ev = localize(&vec![0.0; g.len()], g, PsfModel::AWSALM, 0.5).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn close_pair_gives_one_event() {
        let g = grid();
        let mut f = blob_at(Point::new(12.0, -0.0575));
        let other = blob_at(Point::new(12.0, 0.0575));
        f.iter_mut().zip(&other).for_each(|(a, b)| *a += b);
        assert_eq!(localize(&f, g, PsfModel::AWSALM, 0.5).unwrap().len(), 1);
    }

    #[test]
    fn separated_pair_gives_two_events() {
        let g = grid();
        let mut f = blob_at(Point::new(11.0, -1.0));
        let other = blob_at(Point::new(13.0, 1.0));
        f.iter_mut().zip(&other).for_each(|(a, b)| *a += b);
        assert_eq!(localize(&f, g, PsfModel::AWSALM, 0.5).unwrap().len(), 2);
    }

    #[test]
    fn quadratic_peak_of_exact_paraboloid() {
        let (x0, y0) = (0.3, -0.2);
        let mut nb = [[0.0; 3]; 3];
        for (y, row) in nb.iter_mut().enumerate() {
            for (x, v) in row.iter_mut().enumerate() {
                let (dx, dy) = (x as f64 - 1.0 - x0, y as f64 - 1.0 - y0);
                *v = 5.0 - dx * dx - 2.0 * dy * dy + 0.3 * dx * dy;
            }
        }
        let (x, y) = quadratic_peak(&nb);
        assert!((x - x0).abs() < 1e-12 && (y - y0).abs() < 1e-12);
    }

    #[test]
    fn threshold_must_be_open_unit_interval() {
        assert!(localize(&[0.0; 4], grid(), PsfModel::AWSALM, 1.0).is_err());
        assert!(localize(&[0.0; 4], grid(), PsfModel::AWSALM, 0.0).is_err());
    }
}
