//! Rigid, integer-pixel motion compensation by normalised cross-correlation.

use crate::acoustics::grid::FrameStack;
use crate::geometry::Point;
use crate::signal::{good_fft_size, Fft2, C64};
use crate::{par, Error, Result};

/// Correlation peaks below this are reported as unreliable.
pub const LOW_CONFIDENCE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotionReport {
    /// Detected displacement of each frame's content relative to the
    /// reference, in pixels `(axial, lateral)`.
    pub shifts_px: Vec<(i32, i32)>,
    pub shifts_mm: Vec<Point>,
    pub peak_correlation: Vec<f64>,
    /// Frames whose shift is unreliable (flat frame or weak correlation).
    pub flagged: Vec<bool>,
}

/// Zero-mean copy of a frame into a padded complex buffer. Returns the
/// summed-area table of squared values, `(nz + 1) × (nx + 1)`.
fn load(frame: &[f32], nz: usize, nx: usize, pz: usize, buf: &mut [C64]) -> Vec<f64> {
    let mean = frame.iter().map(|&v| v as f64).sum::<f64>() / frame.len().max(1) as f64;
    buf.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
    let w = nz + 1;
    let mut sat = vec![0.0; w * (nx + 1)];
    for j in 0..nx {
        let mut run = 0.0;
        for i in 0..nz {
            let v = frame[j * nz + i] as f64 - mean;
            run += v * v;
            sat[(j + 1) * w + i + 1] = sat[j * w + i + 1] + run;
            buf[j * pz + i] = C64::new(v, 0.0);
        }
    }
    sat
}

/// Energy over `[i0, i1) × [j0, j1)`.
fn energy(sat: &[f64], nz: usize, i0: usize, i1: usize, j0: usize, j1: usize) -> f64 {
    let w = nz + 1;
    sat[j1 * w + i1] - sat[j0 * w + i1] - sat[j1 * w + i0] + sat[j0 * w + i0]
}

/// Overlap `[lo, hi)` of the reference and its partner at lag `d`.
fn span(n: usize, d: i32) -> (usize, usize) {
    let n = n as i32;
    (0.max(-d) as usize, n.min(n - d) as usize)
}

/// Estimates per-frame shifts against `reference` and undoes them in place
/// (edge-replicated). Shifts are searched within `±max_shift` pixels.
pub fn motion_compensate(stack: &mut FrameStack, reference: usize, max_shift: usize) -> Result<MotionReport> {
    if stack.nt == 0 {
        return Err(Error::Domain("motion compensation needs a non-empty stack".into()));
    }
    if reference >= stack.nt {
        return Err(Error::param(
            "pipeline.motion_reference",
            format!("frame {reference} outside 0..{}", stack.nt),
        ));
    }
    let (nz, nx) = (stack.grid.nz, stack.grid.nx);
    let ms = max_shift.min(nz.saturating_sub(1)).min(nx.saturating_sub(1));
    let (pz, px) = (good_fft_size(nz + ms), good_fft_size(nx + ms));
    let fft = Fft2::new(pz, px);
    let mut refbuf = vec![C64::new(0.0, 0.0); pz * px];
    let ref_sat = load(stack.frame(reference), nz, nx, pz, &mut refbuf);
    let ref_norm = energy(&ref_sat, nz, 0, nz, 0, nx);
    fft.forward(&mut refbuf);
    refbuf.iter_mut().for_each(|v| *v = v.conj());

    let stack_ref = &*stack;
    let results: Vec<((i32, i32), f64, bool)> = par::map_range(stack.nt, |f| {
        let mut buf = vec![C64::new(0.0, 0.0); pz * px];
        let sat = load(stack_ref.frame(f), nz, nx, pz, &mut buf);
        if energy(&sat, nz, 0, nz, 0, nx) == 0.0 || ref_norm == 0.0 {
            return ((0, 0), 0.0, true);
        }
        fft.forward(&mut buf);
        buf.iter_mut().zip(&refbuf).for_each(|(a, r)| *a *= r);
        fft.inverse(&mut buf);
        let mut best = ((0i32, 0i32), f64::NEG_INFINITY);
        let ms = ms as i32;
        for dx in -ms..=ms {
            for dz in -ms..=ms {
                let i = dz.rem_euclid(pz as i32) as usize;
                let j = dx.rem_euclid(px as i32) as usize;
                let ((i0, i1), (j0, j1)) = (span(nz, dz), span(nx, dx));
                let (sz, sx) = ((i0 as i32 + dz) as usize, (j0 as i32 + dx) as usize);
                let e = energy(&ref_sat, nz, i0, i1, j0, j1) * energy(&sat, nz, sz, sz + i1 - i0, sx, sx + j1 - j0);
                let c = if e > 0.0 { buf[j * pz + i].re / e.sqrt() } else { 0.0 };
                // strict comparison keeps the first (smallest) shift on ties
                if c > best.1 {
                    best = ((dz, dx), c);
                }
            }
        }
        (best.0, best.1, best.1 < LOW_CONFIDENCE)
    });

    let frame_len = stack.frame_len();
    let shifts: Vec<(i32, i32)> = results.iter().map(|r| r.0).collect();
    par::for_each_chunk_mut(&mut stack.data, frame_len, |f, frame| {
        let (dz, dx) = shifts[f];
        if (dz, dx) == (0, 0) {
            return;
        }
        let src = frame.to_vec();
        for j in 0..nx {
            let sj = (j as i64 + dx as i64).clamp(0, nx as i64 - 1) as usize;
            for i in 0..nz {
                let si = (i as i64 + dz as i64).clamp(0, nz as i64 - 1) as usize;
                frame[j * nz + i] = src[sj * nz + si];
            }
        }
    });
    let p = stack.grid.pitch_mm();
    Ok(MotionReport {
        shifts_mm: shifts
            .iter()
            .map(|&(a, b)| Point::new(a as f64 * p, b as f64 * p))
            .collect(),
        shifts_px: shifts,
        peak_correlation: results.iter().map(|r| r.1).collect(),
        flagged: results.iter().map(|r| r.2).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::grid::{Grid, StackMeta};
    use crate::acoustics::psf::PsfModel;
    use crate::acoustics::render::{Motion, Renderer};
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn stack_with(motion: Motion, nt: usize) -> FrameStack {
        let grid = Grid::spanning(10.0, 14.0, -2.0, 2.0, 50.0).unwrap();
        let r = Renderer::new(grid, PsfModel::AWSALM, 4)
            .unwrap()
            .with_motion(motion)
            .with_clutter(1.0);
        let frames: Vec<_> = (0..nt).map(|f| r.render(&[], f, 0.0, 1.0)).collect();
        FrameStack::from_frames(grid, &frames, (0..nt).map(|k| k as f64).collect(), StackMeta::default()).unwrap()
    }

    #[test]
    fn recovers_injected_shift() {
        let mut s = stack_with(Motion::Table(vec![(0, 0), (0, 0), (2, -1), (0, 0)]), 4);
        let rep = motion_compensate(&mut s, 0, 5).unwrap();
        assert_eq!(rep.shifts_px, vec![(0, 0), (0, 0), (2, -1), (0, 0)]);
        assert!(rep.flagged.iter().all(|&f| !f));
        // interior of the corrected frame matches the reference
        for j in 3..s.grid.nx - 3 {
            for i in 3..s.grid.nz - 3 {
                assert_eq!(s.at(i, j, 2), s.at(i, j, 0));
            }
        }
    }

    #[test]
    fn identical_frames_do_not_move() {
        let mut s = stack_with(Motion::Table(vec![]), 3);
        let before = s.clone();
        let rep = motion_compensate(&mut s, 1, 4).unwrap();
        assert!(rep.shifts_px.iter().all(|&d| d == (0, 0)));
        assert_eq!(s, before);
    }

    #[test]
    fn noise_frames_are_flagged() {
        let grid = Grid::new(64, 64, 50.0, Point::default()).unwrap();
        let mut rng = stream_rng(3, Stream::Misc, 0);
        let mut s = FrameStack::zeros(grid, vec![0.0, 1.0, 2.0], StackMeta::default());
        s.data.iter_mut().for_each(|v| *v = rng.random::<f32>());
        let rep = motion_compensate(&mut s, 0, 3).unwrap();
        assert!(!rep.flagged[0]);
        assert!(rep.flagged[1] && rep.flagged[2]);
    }

    #[test]
    fn zero_frame_is_flagged_with_zero_shift() {
        let mut s = stack_with(Motion::Table(vec![]), 2);
        s.frame_mut(1).iter_mut().for_each(|v| *v = 0.0);
        let rep = motion_compensate(&mut s, 0, 3).unwrap();
        assert_eq!(rep.shifts_px[1], (0, 0));
        assert!(rep.flagged[1]);
    }
}
