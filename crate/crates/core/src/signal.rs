//! Small signal-processing kernels shared by the renderer, the channel-data
//! path and the pipeline.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub type C64 = Complex<f64>;

/// Normalised Gaussian kernel truncated at `±ceil(4σ)`. `σ = 0` gives `[1]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![1.0];
    }
    let r = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Convolves a strided 1D line in place with edge replication.
///
/// `scratch` must hold at least `n` values.
pub fn convolve_line(data: &mut [f32], start: usize, stride: usize, n: usize, kernel: &[f64], scratch: &mut Vec<f64>) {
    if kernel.len() <= 1 || n == 0 {
        return;
    }
    let r = (kernel.len() / 2) as isize;
    scratch.clear();
    scratch.extend((0..n).map(|k| data[start + k * stride] as f64));
    for k in 0..n {
        let mut acc = 0.0;
        for (m, &w) in kernel.iter().enumerate() {
            let idx = (k as isize + m as isize - r).clamp(0, n as isize - 1) as usize;
            acc += w * scratch[idx];
        }
        data[start + k * stride] = acc as f32;
    }
}

/// Smallest `m ≥ n` of the form 2^a 3^b 5^c.
pub fn good_fft_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Planned forward/inverse transforms for a 2D array stored column-major
/// (`nz` fastest), as used for images.
pub struct Fft2 {
    pub nz: usize,
    pub nx: usize,
    fz: Arc<dyn Fft<f64>>,
    fx: Arc<dyn Fft<f64>>,
    iz: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(nz: usize, nx: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            nz,
            nx,
            fz: planner.plan_fft_forward(nz),
            fx: planner.plan_fft_forward(nx),
            iz: planner.plan_fft_inverse(nz),
            ix: planner.plan_fft_inverse(nx),
        }
    }

    fn run(&self, data: &mut [C64], az: &Arc<dyn Fft<f64>>, ax: &Arc<dyn Fft<f64>>) {
        let (nz, nx) = (self.nz, self.nx);
        for col in data.chunks_mut(nz) {
            az.process(col);
        }
        let mut line = vec![C64::new(0.0, 0.0); nx];
        for i in 0..nz {
            for j in 0..nx {
                line[j] = data[j * nz + i];
            }
            ax.process(&mut line);
            for j in 0..nx {
                data[j * nz + i] = line[j];
            }
        }
    }

    pub fn forward(&self, data: &mut [C64]) {
        self.run(data, &self.fz, &self.fx);
    }

    /// Inverse transform including the `1/(nz·nx)` normalisation.
    pub fn inverse(&self, data: &mut [C64]) {
        self.run(data, &self.iz, &self.ix);
        let s = 1.0 / (self.nz * self.nx) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Analytic signal of a real sequence (FFT Hilbert transform).
pub fn analytic_signal(x: &[f64], fwd: &dyn Fft<f64>, inv: &dyn Fft<f64>) -> Vec<C64> {
    let n = x.len();
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= h / n as f64;
    }
    inv.process(&mut buf);
    buf
}

/// Median of a slice (copied); `NaN`-free input expected. Empty → 0.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalised() {
        for s in [0.5, 1.0, 2.7] {
            let k = gaussian_kernel(s);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(k.len() % 2, 1);
        }
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }

    #[test]
    fn fft_sizes() {
        assert_eq!(good_fft_size(7), 8);
        assert_eq!(good_fft_size(600), 600);
        assert_eq!(good_fft_size(601), 625);
        assert_eq!(good_fft_size(1), 1);
    }

    #[test]
    fn fft2_round_trip() {
        let (nz, nx) = (6, 10);
        let f = Fft2::new(nz, nx);
        let orig: Vec<C64> = (0..nz * nx).map(|k| C64::new((k as f64).sin(), 0.0)).collect();
        let mut d = orig.clone();
        f.forward(&mut d);
        f.inverse(&mut d);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn analytic_signal_of_cosine_has_flat_envelope() {
        let n = 256;
        let mut planner = FftPlanner::new();
        let (fw, iv) = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
        let x: Vec<f64> = (0..n)
            .map(|k| (2.0 * std::f64::consts::PI * 8.0 * k as f64 / n as f64).cos())
            .collect();
        let a = analytic_signal(&x, fw.as_ref(), iv.as_ref());
        for (v, &r) in a.iter().zip(&x) {
            assert!((v.norm() - 1.0).abs() < 1e-9);
            assert!((v.re - r).abs() < 1e-9);
        }
    }
}
