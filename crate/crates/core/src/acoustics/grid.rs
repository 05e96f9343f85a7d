use crate::geometry::Point;
use crate::{Error, Result};

/// Regular pixel grid in the imaging plane. Pixel `(i, j)` (axial, lateral)
/// is centred at `origin + (i, j) × pitch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nz: usize,
    pub nx: usize,
    pub pitch_um: f64,
    /// Centre of pixel (0, 0) in mm.
    pub origin: Point,
}

impl Grid {
    pub fn new(nz: usize, nx: usize, pitch_um: f64, origin: Point) -> Result<Self> {
        if !(pitch_um > 0.0) {
            return Err(Error::param("imaging.pitch_um", "must be > 0"));
        }
        Ok(Grid {
            nz,
            nx,
            pitch_um,
            origin,
        })
    }

    /// Grid covering `[z0, z1] × [x0, x1]` mm.
    pub fn spanning(z0: f64, z1: f64, x0: f64, x1: f64, pitch_um: f64) -> Result<Self> {
        if !(z1 > z0 && x1 > x0) {
            return Err(Error::param("imaging.extent", "empty extent"));
        }
        let p = pitch_um * 1e-3;
        let nz = ((z1 - z0) / p).round() as usize + 1;
        let nx = ((x1 - x0) / p).round() as usize + 1;
        Grid::new(nz, nx, pitch_um, Point::new(z0, x0))
    }

    pub fn pitch_mm(&self) -> f64 {
        self.pitch_um * 1e-3
    }

    pub fn len(&self) -> usize {
        self.nz * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nz + i
    }

    pub fn point(&self, i: usize, j: usize) -> Point {
        self.point_f(i as f64, j as f64)
    }

    /// Physical position of fractional pixel coordinates.
    pub fn point_f(&self, i: f64, j: f64) -> Point {
        let p = self.pitch_mm();
        Point::new(self.origin.z + i * p, self.origin.x + j * p)
    }

    /// Fractional pixel coordinates of a physical point.
    pub fn pixel_f(&self, p: Point) -> (f64, f64) {
        let s = self.pitch_mm();
        ((p.z - self.origin.z) / s, (p.x - self.origin.x) / s)
    }

    pub fn contains(&self, p: Point) -> bool {
        let (i, j) = self.pixel_f(p);
        i >= -0.5 && j >= -0.5 && i <= self.nz as f64 - 0.5 && j <= self.nx as f64 - 0.5
    }

    pub fn z_max(&self) -> f64 {
        self.origin.z + (self.nz.saturating_sub(1)) as f64 * self.pitch_mm()
    }

    pub fn x_max(&self) -> f64 {
        self.origin.x + (self.nx.saturating_sub(1)) as f64 * self.pitch_mm()
    }
}

/// Single 2D image, axial index fastest (`data[j * nz + i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub nz: usize,
    pub nx: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(nz: usize, nx: usize) -> Self {
        Image {
            nz,
            nx,
            data: vec![0.0; nz * nx],
        }
    }

    pub fn from_fn(nz: usize, nx: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut img = Image::zeros(nz, nx);
        for j in 0..nx {
            for i in 0..nz {
                img.data[j * nz + i] = f(i, j);
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[j * self.nz + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[j * self.nz + i] = v;
    }

    /// Index and value of the largest pixel.
    pub fn argmax(&self) -> (usize, usize, f32) {
        let (k, v) = self
            .data
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
        (k % self.nz, k / self.nz, v)
    }

    /// Bilinear sample at fractional pixel coordinates (edge-clamped).
    pub fn bilinear(&self, fi: f64, fj: f64) -> f64 {
        bilinear(&self.data, self.nz, self.nx, fi, fj)
    }
}

pub(crate) fn bilinear(data: &[f32], nz: usize, nx: usize, fi: f64, fj: f64) -> f64 {
    if nz == 0 || nx == 0 {
        return 0.0;
    }
    let fi = fi.clamp(0.0, (nz - 1) as f64);
    let fj = fj.clamp(0.0, (nx - 1) as f64);
    let i0 = fi.floor() as usize;
    let j0 = fj.floor() as usize;
    let i1 = (i0 + 1).min(nz - 1);
    let j1 = (j0 + 1).min(nx - 1);
    let (a, b) = (fi - i0 as f64, fj - j0 as f64);
    let v = |i: usize, j: usize| data[j * nz + i] as f64;
    (1.0 - a) * (1.0 - b) * v(i0, j0) + a * (1.0 - b) * v(i1, j0) + (1.0 - a) * b * v(i0, j1) + a * b * v(i1, j1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SequenceKind {
    Awsalm,
    #[default]
    FastAwsalm,
}

impl SequenceKind {
    pub fn name(self) -> &'static str {
        match self {
            SequenceKind::Awsalm => "awsalm",
            SequenceKind::FastAwsalm => "fast_awsalm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "awsalm" => Some(SequenceKind::Awsalm),
            "fast_awsalm" | "fast-awsalm" => Some(SequenceKind::FastAwsalm),
            _ => None,
        }
    }
}

/// Acquisition-level metadata carried with a stack.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StackMeta {
    pub sequence: SequenceKind,
    pub frame_rate_hz: f64,
    /// First frame of each imaging block (AWSALM); `[0]` for a single block.
    pub block_starts: Vec<usize>,
}

/// Image sequence: axial × lateral × frame, axial index fastest, then
/// lateral, then frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub grid: Grid,
    pub nt: usize,
    pub data: Vec<f32>,
    pub frame_times: Vec<f64>,
    pub meta: StackMeta,
}

impl FrameStack {
    pub fn zeros(grid: Grid, frame_times: Vec<f64>, meta: StackMeta) -> Self {
        let nt = frame_times.len();
        FrameStack {
            grid,
            nt,
            data: vec![0.0; grid.len() * nt],
            frame_times,
            meta,
        }
    }

    pub fn from_frames(grid: Grid, frames: &[Image], frame_times: Vec<f64>, meta: StackMeta) -> Result<Self> {
        if frames.len() != frame_times.len() {
            return Err(Error::Format(format!(
                "{} frames but {} frame times",
                frames.len(),
                frame_times.len()
            )));
        }
        let mut data = Vec::with_capacity(grid.len() * frames.len());
        for f in frames {
            if f.nz != grid.nz || f.nx != grid.nx {
                return Err(Error::Format("frame size does not match grid".into()));
            }
            data.extend_from_slice(&f.data);
        }
        Ok(FrameStack {
            grid,
            nt: frames.len(),
            data,
            frame_times,
            meta,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.grid.len()
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[f * n..(f + 1) * n]
    }

    pub fn frame_image(&self, f: usize) -> Image {
        Image {
            nz: self.grid.nz,
            nx: self.grid.nx,
            data: self.frame(f).to_vec(),
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, f: usize) -> f32 {
        self.data[f * self.frame_len() + j * self.grid.nz + i]
    }

    /// Frame ranges processed as independent blocks (AWSALM imaging bursts).
    pub fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut starts: Vec<usize> = self.meta.block_starts.iter().copied().filter(|&s| s < self.nt).collect();
        if starts.first() != Some(&0) {
            starts.insert(0, 0);
        }
        starts.dedup();
        let mut out = Vec::with_capacity(starts.len());
        for (k, &s) in starts.iter().enumerate() {
            let e = starts.get(k + 1).copied().unwrap_or(self.nt);
            if e > s {
                out.push(s..e);
            }
        }
        out
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.frame_len() * self.nt || self.frame_times.len() != self.nt {
            return Err(Error::Format("stack dimensions are inconsistent".into()));
        }
        if !(self.grid.pitch_um > 0.0) {
            return Err(Error::Format("pixel pitch must be > 0".into()));
        }
        Ok(())
    }

    /// Sum over frames (a "summed B-mode" image).
    pub fn sum_frames(&self) -> Image {
        let n = self.frame_len();
        let mut acc = vec![0f64; n];
        for f in 0..self.nt {
            for (a, &v) in acc.iter_mut().zip(self.frame(f)) {
                *a += v as f64;
            }
        }
        Image {
            nz: self.grid.nz,
            nx: self.grid.nx,
            data: acc.into_iter().map(|v| v as f32).collect(),
        }
    }
}
