//! Separable 3D Gaussian low-pass filter with edge replication.

use crate::acoustics::grid::FrameStack;
use crate::signal::{convolve_line, gaussian_kernel};
use crate::{par, Error, Result};

/// Pixels per parallel task in the temporal pass.
const PIXEL_CHUNK: usize = 4096;

/// Smooths the stack with Gaussian σ (pixels, pixels, frames). Zero σ skips
/// an axis.
pub fn lowpass_3d(stack: &mut FrameStack, sigma_z: f64, sigma_x: f64, sigma_t: f64) -> Result<()> {
    for (key, s) in [
        ("pipeline.lowpass_sigma_z", sigma_z),
        ("pipeline.lowpass_sigma_x", sigma_x),
        ("pipeline.lowpass_sigma_t", sigma_t),
    ] {
        if !(s >= 0.0) {
            return Err(Error::param(key, "must be >= 0"));
        }
    }
    let (nz, nx) = (stack.grid.nz, stack.grid.nx);
    let n = stack.frame_len();
    if n == 0 || stack.nt == 0 {
        return Ok(());
    }
    let kz = gaussian_kernel(sigma_z);
    let kx = gaussian_kernel(sigma_x);
    if kz.len() > 1 || kx.len() > 1 {
        par::for_each_chunk_mut(&mut stack.data, n, |_, frame| {
            let mut scratch = Vec::new();
            if kz.len() > 1 {
                for j in 0..nx {
                    convolve_line(frame, j * nz, 1, nz, &kz, &mut scratch);
                }
            }
            if kx.len() > 1 {
                for i in 0..nz {
                    convolve_line(frame, i, nz, nx, &kx, &mut scratch);
                }
            }
        });
    }
    let kt = gaussian_kernel(sigma_t);
    if kt.len() > 1 {
        temporal(stack, &kt);
    }
    Ok(())
}

/// Temporal pass: output frame `f` is a weighted sum of the original frames
/// `f - r ..= f + r` (clamped), kept in a ring of copies.
fn temporal(stack: &mut FrameStack, kernel: &[f64]) {
    let nt = stack.nt;
    let r = kernel.len() / 2;
    let window = kernel.len();
    let mut ring: Vec<Vec<f32>> = vec![Vec::new(); window];
    // ring slot of original frame k is k % window
    let load = |ring: &mut Vec<Vec<f32>>, stack: &FrameStack, k: usize| {
        ring[k % window] = stack.frame(k).to_vec();
    };
    for k in 0..=r.min(nt - 1) {
        load(&mut ring, stack, k);
    }
    for f in 0..nt {
        let next = f + r;
        if next < nt && next > r.min(nt - 1) {
            load(&mut ring, stack, next);
        }
        let src: Vec<&[f32]> = (0..window)
            .map(|m| {
                let k = (f as isize + m as isize - r as isize).clamp(0, nt as isize - 1) as usize;
                ring[k % window].as_slice()
            })
            .collect();
        let out = stack.frame_mut(f);
        par::for_each_chunk_mut(out, PIXEL_CHUNK, |c, chunk| {
            let off = c * PIXEL_CHUNK;
            for (p, v) in chunk.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (w, s) in kernel.iter().zip(&src) {
                    acc += w * s[off + p] as f64;
                }
                *v = acc as f32;
            }
        });
    }
}
