//! Spatiotemporal SVD clutter filter.
//!
//! The Casorati matrix `B` (pixels × frames) is never decomposed directly.
//! Its right singular vectors are the eigenvectors of the frame Gram matrix
//! `BᵀB`, which is small (frames × frames) and accumulated blockwise over
//! pixels. Keeping components `low..=high` is then a projection onto the
//! span of the matching eigenvectors, applied block by block in place. When
//! fewer components are discarded than kept, the discarded part is
//! subtracted instead, which is cheaper and exact for full retention.

use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::acoustics::grid::{FrameStack, SequenceKind};
use crate::{par, Error, Result};

/// Pixels per Casorati block. Fixed so results do not depend on threads.
const PIXEL_BLOCK: usize = 2048;
/// Blocks summed sequentially into one partial Gram matrix.
const GRAM_GROUP: usize = 8;
/// Blocks projected concurrently before writing back.
const WAVE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SvdMode {
    /// Per imaging block for AWSALM stacks, whole stack otherwise.
    #[default]
    Auto,
    PerBlock,
    Whole,
}

impl SvdMode {
    pub fn resolve(self, kind: SequenceKind) -> SvdMode {
        match (self, kind) {
            (SvdMode::Auto, SequenceKind::Awsalm) => SvdMode::PerBlock,
            (SvdMode::Auto, SequenceKind::FastAwsalm) => SvdMode::Whole,
            (m, _) => m,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "auto" => Some(SvdMode::Auto),
            "per_block" | "block" => Some(SvdMode::PerBlock),
            "whole" | "all" => Some(SvdMode::Whole),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SvdMode::Auto => "auto",
            SvdMode::PerBlock => "per_block",
            SvdMode::Whole => "whole",
        }
    }
}

/// Result of filtering one frame range.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdBlock {
    pub frames: Range<usize>,
    pub low_cut: usize,
    pub high_cut: usize,
    /// Singular values in descending order.
    pub singular_values: Vec<f64>,
}

/// Rank cutoffs from fractions of the frame count. The low cut is at least 2,
/// so the dominant (static) component is always removed when the block has
/// more than one frame.
pub fn cutoffs(n_frames: usize, low_frac: f64, high_frac: f64) -> (usize, usize) {
    let n = n_frames.max(1);
    let low = ((low_frac * n as f64).round() as usize).max(2).min(n);
    let high = ((high_frac * n as f64).round() as usize).clamp(low, n);
    (low, high)
}

fn gather(stack: &FrameStack, frames: &Range<usize>, p0: usize, p: usize, x: &mut Vec<f64>) {
    let nt = frames.len();
    x.clear();
    x.resize(p * nt, 0.0);
    for (c, f) in frames.clone().enumerate() {
        let src = &stack.frame(f)[p0..p0 + p];
        x[c * p..(c + 1) * p]
            .iter_mut()
            .zip(src)
            .for_each(|(d, &s)| *d = s as f64);
    }
}

fn gram(stack: &FrameStack, frames: &Range<usize>) -> Vec<f64> {
    let nt = frames.len();
    let npx = stack.frame_len();
    let blocks: Vec<usize> = (0..npx).step_by(PIXEL_BLOCK).collect();
    let partials = par::map_chunks(&blocks, GRAM_GROUP, |_, group| {
        let mut g = vec![0f64; nt * nt];
        let mut x = Vec::new();
        for &p0 in group {
            let p = PIXEL_BLOCK.min(npx - p0);
            gather(stack, frames, p0, p, &mut x);
            // G += Xᵀ X
            unsafe {
                matrixmultiply::dgemm(
                    nt,
                    p,
                    nt,
                    1.0,
                    x.as_ptr(),
                    p as isize,
                    1,
                    x.as_ptr(),
                    1,
                    p as isize,
                    1.0,
                    g.as_mut_ptr(),
                    nt as isize,
                    1,
                );
            }
        }
        g
    });
    let mut g = vec![0f64; nt * nt];
    for part in partials {
        g.iter_mut().zip(part).for_each(|(a, b)| *a += b);
    }
    g
}

/// Filters frames `frames` of the stack keeping components `low..=high`
/// (1-based, ordered by decreasing singular value).
pub fn filter_range(stack: &mut FrameStack, frames: Range<usize>, low: usize, high: usize) -> Result<SvdBlock> {
    let nt = frames.len();
    if nt < low {
        return Err(Error::param(
            "pipeline.svd_low_cut",
            format!("block of {nt} frames is shorter than low cut {low}"),
        ));
    }
    if !(1 <= low && low <= high && high <= nt) {
        return Err(Error::param(
            "pipeline.svd_high_cut",
            format!("need 1 <= low ({low}) <= high ({high}) <= frames ({nt})"),
        ));
    }
    let g = gram(stack, &frames);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(nt, nt, &g));
    let mut order: Vec<usize> = (0..nt).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let singular_values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0).sqrt()).collect();

    let kept = high - low + 1;
    let subtract = nt - kept < kept;
    let chosen: Vec<usize> = if subtract {
        (1..low).chain(high + 1..=nt).map(|c| order[c - 1]).collect()
    } else {
        (low..=high).map(|c| order[c - 1]).collect()
    };
    let block = SvdBlock {
        frames: frames.clone(),
        low_cut: low,
        high_cut: high,
        singular_values,
    };
    if subtract && chosen.is_empty() {
        return Ok(block);
    }
    let r = chosen.len();
    // V: nt × r, row-major
    let mut v = vec![0f64; nt * r];
    for (c, &k) in chosen.iter().enumerate() {
        for f in 0..nt {
            v[f * r + c] = eig.eigenvectors[(f, k)];
        }
    }

    let npx = stack.frame_len();
    let starts: Vec<usize> = (0..npx).step_by(PIXEL_BLOCK).collect();
    for wave in starts.chunks(WAVE) {
        let stack_ref = &*stack;
        let outputs: Vec<Vec<f64>> = par::map_slice(wave, |&p0| {
            let p = PIXEL_BLOCK.min(npx - p0);
            let mut x = Vec::new();
            gather(stack_ref, &frames, p0, p, &mut x);
            let mut y = vec![0f64; p * r];
            unsafe {
                // Y = X V
                matrixmultiply::dgemm(
                    p,
                    nt,
                    r,
                    1.0,
                    x.as_ptr(),
                    1,
                    p as isize,
                    v.as_ptr(),
                    r as isize,
                    1,
                    0.0,
                    y.as_mut_ptr(),
                    1,
                    p as isize,
                );
                // X = X - Y Vᵀ, or X = Y Vᵀ
                let (alpha, beta) = if subtract { (-1.0, 1.0) } else { (1.0, 0.0) };
                matrixmultiply::dgemm(
                    p,
                    r,
                    nt,
                    alpha,
                    y.as_ptr(),
                    1,
                    p as isize,
                    v.as_ptr(),
                    1,
                    r as isize,
                    beta,
                    x.as_mut_ptr(),
                    1,
                    p as isize,
                );
            }
            x
        });
        for (&p0, x) in wave.iter().zip(outputs) {
            let p = PIXEL_BLOCK.min(npx - p0);
            for (c, f) in frames.clone().enumerate() {
                let dst = &mut stack.frame_mut(f)[p0..p0 + p];
                dst.iter_mut().zip(&x[c * p..(c + 1) * p]).for_each(|(d, &s)| *d = s as f32);
            }
        }
    }
    Ok(block)
}

/// Filters the whole stack as one Casorati matrix.
pub fn svd_clutter_filter(stack: &mut FrameStack, low_cut: usize, high_cut: usize) -> Result<SvdBlock> {
    let nt = stack.nt;
    filter_range(stack, 0..nt, low_cut, high_cut)
}

/// Filters per imaging block or as a whole with cutoffs given as fractions
/// of each block's frame count. Optionally clamps the result at zero.
pub fn svd_filter(
    stack: &mut FrameStack,
    mode: SvdMode,
    low_frac: f64,
    high_frac: f64,
    rectify: bool,
) -> Result<Vec<SvdBlock>> {
    let ranges = match mode.resolve(stack.meta.sequence) {
        SvdMode::PerBlock => stack.blocks(),
        _ => vec![0..stack.nt],
    };
    let mut out = Vec::with_capacity(ranges.len());
    for r in ranges {
        if r.is_empty() {
            continue;
        }
        let (low, high) = cutoffs(r.len(), low_frac, high_frac);
        out.push(filter_range(stack, r, low, high)?);
    }
    if rectify {
        par::for_each_chunk_mut(&mut stack.data, 1 << 16, |_, c| {
            c.iter_mut().for_each(|v| *v = v.max(0.0));
        });
    }
    Ok(out)
}
