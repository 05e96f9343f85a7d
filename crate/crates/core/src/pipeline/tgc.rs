//! Time-gain compensation from the temporal-mean depth profile.

use crate::acoustics::grid::FrameStack;
use crate::par;

/// Equalises the mean intensity of every depth row to the global mean.
/// Rows with a non-positive mean get `max_gain`. Returns the row gains.
pub fn tgc_correct(stack: &mut FrameStack, max_gain: f64) -> Vec<f64> {
    let (nz, nx) = (stack.grid.nz, stack.grid.nx);
    if stack.nt == 0 || nz == 0 || nx == 0 {
        return vec![1.0; nz];
    }
    let mut rows = vec![0f64; nz];
    for f in 0..stack.nt {
        for col in stack.frame(f).chunks(nz) {
            rows.iter_mut().zip(col).for_each(|(r, &v)| *r += v as f64);
        }
    }
    let per_row = (nx * stack.nt) as f64;
    rows.iter_mut().for_each(|r| *r /= per_row);
    let global = rows.iter().sum::<f64>() / nz as f64;
    let gains: Vec<f64> = rows
        .iter()
        .map(|&m| if m > 0.0 { (global / m).min(max_gain) } else { max_gain })
        .collect();
    let g32: Vec<f32> = gains.iter().map(|&g| g as f32).collect();
    par::for_each_chunk_mut(&mut stack.data, nz, |_, col| {
        col.iter_mut().zip(&g32).for_each(|(v, &g)| *v *= g);
    });
    gains
}
