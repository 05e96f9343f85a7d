//! PSF estimation from isolated bubbles.
//!
//! Candidates are 3×3 local maxima. A candidate is isolated when no other
//! maximum above 10% of its amplitude lies within two expected FWHMs. The
//! brightest isolated candidates are kept; each is centred with a
//! log-parabola and the axial and lateral profiles through it are fitted
//! jointly with `ln I = a_k - d² / (2 s²)` (one intercept per sample, one
//! shared width per axis).

use crate::acoustics::grid::FrameStack;
use crate::acoustics::psf::{PsfModel, FWHM_PER_SIGMA};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PsfEstimate {
    pub psf: PsfModel,
    /// Number of blobs that entered the fit.
    pub used: usize,
    /// `(frame, axial px, lateral px)` of the selected blobs.
    pub samples: Vec<(usize, usize, usize)>,
}

/// Relative amplitude above which a neighbour breaks isolation.
const NEIGHBOUR_FRACTION: f64 = 0.1;
/// Samples below this fraction of the peak are left out of the fit.
const FIT_FLOOR: f64 = 0.2;

fn local_maxima(frame: &[f32], nz: usize, nx: usize) -> Vec<(f32, usize, usize)> {
    let mut out = Vec::new();
    if nz < 3 || nx < 3 {
        return out;
    }
    for j in 1..nx - 1 {
        for i in 1..nz - 1 {
            let c = frame[j * nz + i];
            if c <= 0.0 {
                continue;
            }
            let mut peak = true;
            for dj in 0..3 {
                for di in 0..3 {
                    if (di, dj) != (1, 1) && frame[(j + dj - 1) * nz + i + di - 1] >= c {
                        peak = false;
                    }
                }
            }
            if peak {
                out.push((c, i, j));
            }
        }
    }
    out
}

/// Estimates the PSF from the `n_samples` brightest isolated blobs.
/// `expected` sets the isolation radius and fit window.
pub fn estimate_psf(stack: &FrameStack, n_samples: usize, expected: &PsfModel) -> Result<PsfEstimate> {
    if n_samples < 1 {
        return Err(Error::param("pipeline.psf_samples", "must be >= 1"));
    }
    let (nz, nx) = (stack.grid.nz, stack.grid.nx);
    let p = stack.grid.pitch_mm();
    let fz = expected.fwhm_axial_um * 1e-3 / p;
    let fx = expected.fwhm_lateral_um * 1e-3 / p;
    let (wz, wx) = ((1.5 * fz).ceil() as usize, (1.5 * fx).ceil() as usize);

    let mut cands: Vec<(f32, usize, usize, usize)> = Vec::new();
    for f in 0..stack.nt {
        let frame = stack.frame(f);
        let maxima = local_maxima(frame, nz, nx);
        for &(a, i, j) in &maxima {
            if i < wz || j < wx || i + wz >= nz || j + wx >= nx {
                continue;
            }
            let isolated = maxima.iter().all(|&(b, i2, j2)| {
                if (i2, j2) == (i, j) || (b as f64) < NEIGHBOUR_FRACTION * a as f64 {
                    return true;
                }
                let dz = (i2 as f64 - i as f64) / (2.0 * fz);
                let dx = (j2 as f64 - j as f64) / (2.0 * fx);
                dz * dz + dx * dx >= 1.0
            });
            if isolated {
                cands.push((a, f, i, j));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.3, a.2).cmp(&(b.1, b.3, b.2))));
    cands.truncate(n_samples);
    if cands.is_empty() {
        return Err(Error::Domain("no isolated blobs found for PSF estimation".into()));
    }
    if cands.len() < n_samples {
        log::warn!("PSF estimation: only {} of {n_samples} isolated blobs found", cands.len());
    }

    // per axis: (d², ln I) points grouped by sample
    let mut axial: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut lateral: Vec<Vec<(f64, f64)>> = Vec::new();
    for &(a, f, i, j) in &cands {
        let frame = stack.frame(f);
        let v = |i: usize, j: usize| frame[j * nz + i] as f64;
        let oz = log_parabola(v(i - 1, j), v(i, j), v(i + 1, j));
        let ox = log_parabola(v(i, j - 1), v(i, j), v(i, j + 1));
        let floor = FIT_FLOOR * a as f64;
        let mut ax = Vec::new();
        for ii in i - wz..=i + wz {
            let y = v(ii, j);
            if y > floor {
                ax.push(((ii as f64 - i as f64 - oz).powi(2), y.ln()));
            }
        }
        let mut la = Vec::new();
        for jj in j - wx..=j + wx {
            let y = v(i, jj);
            if y > floor {
                la.push(((jj as f64 - j as f64 - ox).powi(2), y.ln()));
            }
        }
        axial.push(ax);
        lateral.push(la);
    }
    let sz = pooled_width(&axial).ok_or_else(|| Error::Domain("axial PSF fit is degenerate".into()))?;
    let sx = pooled_width(&lateral).ok_or_else(|| Error::Domain("lateral PSF fit is degenerate".into()))?;
    let um = p * 1e3 * FWHM_PER_SIGMA;
    Ok(PsfEstimate {
        psf: PsfModel::new(sx * um, sz * um)?,
        used: cands.len(),
        samples: cands.iter().map(|c| (c.1, c.2, c.3)).collect(),
    })
}

/// Sub-pixel offset of the vertex of a parabola through `ln` of three samples.
fn log_parabola(m: f64, c: f64, p: f64) -> f64 {
    if m <= 0.0 || c <= 0.0 || p <= 0.0 {
        return 0.0;
    }
    let (lm, lc, lp) = (m.ln(), c.ln(), p.ln());
    let den = lm - 2.0 * lc + lp;
    if den < 0.0 {
        (0.5 * (lm - lp) / den).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Shared σ (pixels) from `y = a_k - x / (2σ²)` with per-group intercepts.
fn pooled_width(groups: &[Vec<(f64, f64)>]) -> Option<f64> {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for g in groups.iter().filter(|g| g.len() >= 2) {
        let n = g.len() as f64;
        let mx = g.iter().map(|p| p.0).sum::<f64>() / n;
        let my = g.iter().map(|p| p.1).sum::<f64>() / n;
        for &(x, y) in g {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
        }
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    (slope < 0.0).then(|| (-1.0 / (2.0 * slope)).sqrt())
}
