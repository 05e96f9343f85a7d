//! Adaptive Wiener filter on axial-temporal planes.
//!
//! Each lateral line gives a plane `(axial, frame)`. Local mean and variance
//! over a box window drive the usual shrinkage
//! `out = μ + max(σ² - ν, 0) / σ² · (x - μ)`, with `ν` the noise power.

use crate::acoustics::grid::FrameStack;
use crate::signal::median;
use crate::{par, Error, Result};

/// Lateral lines processed concurrently before writing back.
const LINES_PER_WAVE: usize = 32;

/// Copies lateral line `j` into `plane` (axial fastest, then frame).
fn gather_plane(stack: &FrameStack, j: usize, plane: &mut Vec<f32>) {
    let nz = stack.grid.nz;
    plane.clear();
    for f in 0..stack.nt {
        plane.extend_from_slice(&stack.frame(f)[j * nz..(j + 1) * nz]);
    }
}

/// Applies `op(j, plane)` to every axial-temporal plane in place.
pub(crate) fn for_each_plane(stack: &mut FrameStack, op: impl Fn(usize, &mut Vec<f32>) + Send + Sync) {
    let (nz, nx) = (stack.grid.nz, stack.grid.nx);
    let lines: Vec<usize> = (0..nx).collect();
    for wave in lines.chunks(LINES_PER_WAVE) {
        let s = &*stack;
        let planes: Vec<Vec<f32>> = par::map_slice(wave, |&j| {
            let mut p = Vec::with_capacity(nz * s.nt);
            gather_plane(s, j, &mut p);
            op(j, &mut p);
            p
        });
        for (&j, p) in wave.iter().zip(planes) {
            for f in 0..stack.nt {
                stack.frame_mut(f)[j * nz..(j + 1) * nz].copy_from_slice(&p[f * nz..(f + 1) * nz]);
            }
        }
    }
}

/// Summed-area table with a zero first row and column; `(n0 + 1) × (n1 + 1)`.
struct Integral {
    n0: usize,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Integral {
    fn new(plane: &[f32], n0: usize, n1: usize) -> Self {
        let w = n0 + 1;
        let mut s1 = vec![0f64; w * (n1 + 1)];
        let mut s2 = vec![0f64; w * (n1 + 1)];
        for b in 0..n1 {
            let (mut r1, mut r2) = (0.0, 0.0);
            for a in 0..n0 {
                let v = plane[b * n0 + a] as f64;
                r1 += v;
                r2 += v * v;
                s1[(b + 1) * w + a + 1] = s1[b * w + a + 1] + r1;
                s2[(b + 1) * w + a + 1] = s2[b * w + a + 1] + r2;
            }
        }
        Integral { n0, s1, s2 }
    }

    /// Sum and sum of squares over `[a0, a1) × [b0, b1)`.
    fn sums(&self, a0: usize, a1: usize, b0: usize, b1: usize) -> (f64, f64) {
        let w = self.n0 + 1;
        let box_sum = |s: &[f64]| s[b1 * w + a1] - s[b0 * w + a1] - s[b1 * w + a0] + s[b0 * w + a0];
        (box_sum(&self.s1), box_sum(&self.s2))
    }
}

/// Local mean and variance with windows clipped at the plane edges.
fn local_stats(plane: &[f32], nz: usize, nt: usize, wz: usize, wt: usize) -> (Vec<f64>, Vec<f64>) {
    let ii = Integral::new(plane, nz, nt);
    let (hz, ht) = (wz / 2, wt / 2);
    let mut mean = vec![0f64; nz * nt];
    let mut var = vec![0f64; nz * nt];
    for f in 0..nt {
        let (b0, b1) = (f.saturating_sub(ht), (f + ht + 1).min(nt));
        for i in 0..nz {
            let (a0, a1) = (i.saturating_sub(hz), (i + hz + 1).min(nz));
            let n = ((a1 - a0) * (b1 - b0)) as f64;
            let (s1, s2) = ii.sums(a0, a1, b0, b1);
            let m = s1 / n;
            mean[f * nz + i] = m;
            var[f * nz + i] = (s2 / n - m * m).max(0.0);
        }
    }
    (mean, var)
}

/// Noise power estimate: median local variance over a fixed subsample of
/// lines and samples.
pub fn estimate_noise(stack: &FrameStack, wz: usize, wt: usize) -> f64 {
    let (nz, nx, nt) = (stack.grid.nz, stack.grid.nx, stack.nt);
    if nz == 0 || nx == 0 || nt == 0 {
        return 0.0;
    }
    let line_step = nx.div_ceil(64).max(1);
    let sample_step = 3;
    let lines: Vec<usize> = (0..nx).step_by(line_step).collect();
    let per_line = par::map_slice(&lines, |&j| {
        let mut p = Vec::new();
        gather_plane(stack, j, &mut p);
        let (_, var) = local_stats(&p, nz, nt, wz, wt);
        let mut out = Vec::new();
        for f in (0..nt).step_by(sample_step) {
            for i in (0..nz).step_by(sample_step) {
                out.push(var[f * nz + i]);
            }
        }
        out
    });
    median(&per_line.concat())
}

/// Wiener filter over `(window_z px, window_t frames)` windows. `noise`
/// `None` estimates the noise power from the data. Returns the noise power used.
pub fn wiener_axial_temporal(
    stack: &mut FrameStack,
    window_z: usize,
    window_t: usize,
    noise: Option<f64>,
) -> Result<f64> {
    if window_z < 3 || window_t < 3 {
        return Err(Error::param("pipeline.wiener_window", "window must be at least 3 × 3"));
    }
    let (nz, nt) = (stack.grid.nz, stack.nt);
    if window_z > nz || window_t > nt {
        return Err(Error::param(
            "pipeline.wiener_window",
            format!("window {window_z} × {window_t} larger than the {nz} × {nt} plane"),
        ));
    }
    let nu = match noise {
        Some(v) if v >= 0.0 => v,
        Some(_) => return Err(Error::param("pipeline.wiener_noise", "must be >= 0 or auto")),
        None => estimate_noise(stack, window_z, window_t),
    };
    for_each_plane(stack, |_, plane| {
        let (mean, var) = local_stats(plane, nz, nt, window_z, window_t);
        for (k, v) in plane.iter_mut().enumerate() {
            let (m, s) = (mean[k], var[k]);
            let g = if s > nu { (s - nu) / s } else { 0.0 };
            *v = (m + g * (*v as f64 - m)) as f32;
        }
    });
    Ok(nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::grid::{Grid, StackMeta};
    use crate::geometry::Point;
    use crate::rng::{stream_rng, Stream};
    use rand_distr::{Distribution, StandardNormal};

    fn stack(nz: usize, nx: usize, nt: usize, f: impl Fn(usize, usize, usize) -> f32) -> FrameStack {
        let grid = Grid::new(nz, nx, 50.0, Point::default()).unwrap();
        let mut s = FrameStack::zeros(grid, (0..nt).map(|k| k as f64).collect(), StackMeta::default());
        for t in 0..nt {
            for j in 0..nx {
                for i in 0..nz {
                    s.frame_mut(t)[j * nz + i] = f(i, j, t);
                }
            }
        }
        s
    }

    fn noisy(s: &mut FrameStack, sigma: f64, seed: u64) {
        let mut rng = stream_rng(seed, Stream::Noise, 0);
        for v in s.data.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += (sigma * n) as f32;
        }
    }

    fn variance(v: &[f32]) -> f64 {
        let m = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        v.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn noiseless_structure_is_preserved() {
        let blob = |i: usize, _j: usize, t: usize| {
            let a = (i as f32 - 20.0) / 5.0;
            let b = (t as f32 - 15.0) / 6.0;
            (-(a * a + b * b) / 2.0).exp()
        };
        let clean = stack(40, 4, 30, blob);
        let mut s = clean.clone();
        wiener_axial_temporal(&mut s, 5, 5, None).unwrap();
        let err: f64 = s.data.iter().zip(&clean.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        let norm: f64 = clean.data.iter().map(|&b| (b as f64).powi(2)).sum();
        assert!((err / norm).sqrt() < 0.05, "{}", (err / norm).sqrt());
    }

    #[test]
    fn white_noise_variance_drops() {
        let mut s = stack(32, 6, 40, |_, _, _| 0.0);
        noisy(&mut s, 1.0, 9);
        let before = variance(&s.data);
        wiener_axial_temporal(&mut s, 5, 5, None).unwrap();
        assert!(variance(&s.data) < before);
    }

    #[test]
    fn window_checks() {
        let mut s = stack(10, 2, 10, |_, _, _| 1.0);
        assert!(wiener_axial_temporal(&mut s, 2, 5, None).is_err());
        assert!(wiener_axial_temporal(&mut s, 11, 5, None).is_err());
        assert!(wiener_axial_temporal(&mut s, 5, 11, None).is_err());
    }
}
