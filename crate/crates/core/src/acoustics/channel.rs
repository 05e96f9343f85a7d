//! Point-scatterer channel data and delay-and-sum beamforming.
//!
//! Linear array at depth 0 along the lateral axis. Each element records the
//! sum over scatterers of a Hann-windowed tone burst centred on the two-way
//! arrival time, scaled by `strength / r` for receive spreading.

use rustfft::FftPlanner;

use super::grid::{Grid, Image};
use super::sequence::{TransmitEvent, TransmitKind};
use super::SPEED_OF_SOUND_MM_US;
use crate::geometry::Point;
use crate::signal::{analytic_signal, C64};
use crate::{par, Error, Result};

/// Largest scatterer set the forward model accepts.
pub const MAX_SCATTERERS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub n_elements: usize,
    pub pitch_mm: f64,
    pub sampling_mhz: f64,
    /// Deepest point the record length must cover.
    pub max_depth_mm: f64,
    /// Receive F-number (aperture grows with depth).
    pub rx_f_number: f64,
    /// Cycles in the transmitted burst.
    pub cycles: f64,
    pub center_frequency_mhz: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        ArrayGeometry {
            n_elements: 128,
            pitch_mm: 0.3,
            sampling_mhz: 40.0,
            max_depth_mm: 40.0,
            rx_f_number: 1.5,
            cycles: 1.0,
            center_frequency_mhz: 4.0,
        }
    }
}

impl ArrayGeometry {
    pub fn element_x(&self, k: usize) -> f64 {
        (k as f64 - (self.n_elements as f64 - 1.0) / 2.0) * self.pitch_mm
    }

    pub fn half_aperture(&self) -> f64 {
        (self.n_elements as f64 - 1.0) / 2.0 * self.pitch_mm
    }

    pub fn pulse_length_us(&self) -> f64 {
        self.cycles / self.center_frequency_mhz
    }

    fn n_samples(&self) -> usize {
        let path = 2.0 * self.max_depth_mm + 2.0 * self.half_aperture();
        ((path / SPEED_OF_SOUND_MM_US + 2.0 * self.pulse_length_us()) * self.sampling_mhz).ceil() as usize
    }

    /// Time of the first sample (µs); negative to catch early steered arrivals.
    pub fn t0_us(&self) -> f64 {
        -self.half_aperture() / SPEED_OF_SOUND_MM_US - self.pulse_length_us()
    }

    fn validate(&self) -> Result<()> {
        if self.n_elements < 1 || self.n_elements > 128 {
            return Err(Error::param("channel.n_elements", "must be in 1..=128"));
        }
        let positive = [
            ("channel.pitch_mm", self.pitch_mm),
            ("channel.sampling_mhz", self.sampling_mhz),
            ("channel.max_depth_mm", self.max_depth_mm),
            ("channel.rx_f_number", self.rx_f_number),
            ("channel.cycles", self.cycles),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return Err(Error::param(key, "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Transmit delay (µs) from the reference time to the point `p`.
///
/// Plane waves pass the array centre at t = 0; focused waves use a virtual
/// source at the focus.
pub fn transmit_delay_us(event: &TransmitEvent, p: Point) -> f64 {
    let c = SPEED_OF_SOUND_MM_US;
    match event.kind {
        TransmitKind::PlaneWave { angle_deg } => {
            let a = angle_deg.to_radians();
            (p.z * a.cos() + p.x * a.sin()) / c
        }
        TransmitKind::Focused { focus, .. } => {
            let d = p.distance(focus);
            let s = if p.z >= focus.z { 1.0 } else { -1.0 };
            (focus.norm() + s * d) / c
        }
    }
}

/// Per-element RF traces, element-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelData {
    pub n_elements: usize,
    pub n_samples: usize,
    pub t0_us: f64,
    pub sampling_mhz: f64,
    pub data: Vec<f64>,
}

impl ChannelData {
    pub fn trace(&self, k: usize) -> &[f64] {
        &self.data[k * self.n_samples..(k + 1) * self.n_samples]
    }
}

/// Two-way arrival time (µs) of an echo from `p` on element `k`.
pub fn arrival_time_us(event: &TransmitEvent, geom: &ArrayGeometry, p: Point, k: usize) -> f64 {
    let e = Point::new(0.0, geom.element_x(k));
    transmit_delay_us(event, p) + p.distance(e) / SPEED_OF_SOUND_MM_US
}

/// Simulates the RF data of one transmission. Scatterers are `(position, strength)`.
pub fn synthesize_channel_data(
    scatterers: &[(Point, f64)],
    event: &TransmitEvent,
    geom: &ArrayGeometry,
) -> Result<ChannelData> {
    geom.validate()?;
    if scatterers.len() > MAX_SCATTERERS {
        return Err(Error::param(
            "channel.scatterers",
            format!("{} scatterers exceed the limit of {MAX_SCATTERERS}", scatterers.len()),
        ));
    }
    let ns = geom.n_samples();
    let fs = geom.sampling_mhz;
    let t0 = geom.t0_us();
    let tp = geom.pulse_length_us();
    let f0 = geom.center_frequency_mhz;
    let traces = par::map_range(geom.n_elements, |k| {
        let mut tr = vec![0.0; ns];
        let e = Point::new(0.0, geom.element_x(k));
        for &(p, a) in scatterers {
            let r = p.distance(e).max(1e-3);
            let arrival = transmit_delay_us(event, p) + r / SPEED_OF_SOUND_MM_US;
            let start = arrival - tp / 2.0;
            let n0 = ((start - t0) * fs).ceil().max(0.0) as usize;
            let n1 = (((start + tp - t0) * fs).floor() as isize).min(ns as isize - 1);
            if n1 < n0 as isize {
                continue;
            }
            for (n, v) in tr.iter_mut().enumerate().take(n1 as usize + 1).skip(n0) {
                let tau = t0 + n as f64 / fs - start;
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * tau / tp).cos();
                // cosine phase so the envelope peak and the carrier crest coincide
                *v += a / r * w * (2.0 * std::f64::consts::PI * f0 * (tau - tp / 2.0)).cos();
            }
        }
        tr
    });
    Ok(ChannelData {
        n_elements: geom.n_elements,
        n_samples: ns,
        t0_us: t0,
        sampling_mhz: fs,
        data: traces.concat(),
    })
}

/// Delay-and-sum beamforming of one transmission; returns the envelope.
pub fn das_beamform(data: &ChannelData, event: &TransmitEvent, geom: &ArrayGeometry, grid: &Grid) -> Image {
    let ns = data.n_samples;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(ns);
    let inv = planner.plan_fft_inverse(ns);
    let analytic: Vec<Vec<C64>> = (0..data.n_elements)
        .map(|k| analytic_signal(data.trace(k), fwd.as_ref(), inv.as_ref()))
        .collect();
    let fs = data.sampling_mhz;
    let columns = par::map_range(grid.nx, |j| {
        let mut col = vec![0f32; grid.nz];
        for (i, out) in col.iter_mut().enumerate() {
            let p = grid.point(i, j);
            let half = (p.z / (2.0 * geom.rx_f_number)).max(geom.pitch_mm);
            let tx = transmit_delay_us(event, p);
            let mut acc = C64::new(0.0, 0.0);
            for (k, a) in analytic.iter().enumerate() {
                let ex = geom.element_x(k);
                if (ex - p.x).abs() > half {
                    continue;
                }
                let r = (p.z * p.z + (p.x - ex).powi(2)).sqrt();
                let fidx = (tx + r / SPEED_OF_SOUND_MM_US - data.t0_us) * fs;
                if fidx < 0.0 || fidx >= (ns - 1) as f64 {
                    continue;
                }
                let n = fidx.floor() as usize;
                let w = fidx - n as f64;
                acc += a[n] * (1.0 - w) + a[n + 1] * w;
            }
            *out = acc.norm() as f32;
        }
        col
    });
    Image {
        nz: grid.nz,
        nx: grid.nx,
        data: columns.concat(),
    }
}

/// Averages beamformed angle frames.
pub fn compound(frames: &[Image]) -> Result<Image> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Domain("nothing to compound".into()))?;
    let mut acc = vec![0f64; first.data.len()];
    for f in frames {
        if f.nz != first.nz || f.nx != first.nx {
            return Err(Error::Domain("compounded frames differ in size".into()));
        }
        acc.iter_mut().zip(&f.data).for_each(|(a, &v)| *a += v as f64);
    }
    let n = frames.len() as f64;
    Ok(Image {
        nz: first.nz,
        nx: first.nx,
        data: acc.into_iter().map(|v| (v / n) as f32).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::CENTER_FREQUENCY_MHZ;

    fn plane(angle_deg: f64) -> TransmitEvent {
        TransmitEvent {
            kind: TransmitKind::PlaneWave { angle_deg },
            surface_mi: 0.1,
            center_frequency_mhz: CENTER_FREQUENCY_MHZ,
            timestamp: 0.0,
            frame: Some(0),
        }
    }

    #[test]
    fn symmetric_elements_see_identical_arrivals() {
        let g = ArrayGeometry::default();
        let ev = plane(0.0);
        let p = Point::new(15.0, 0.0);
        let d = synthesize_channel_data(&[(p, 1.0)], &ev, &g).unwrap();
        let (a, b) = (10, g.n_elements - 1 - 10);
        assert_eq!(arrival_time_us(&ev, &g, p, a), arrival_time_us(&ev, &g, p, b));
        for (x, y) in d.trace(a).iter().zip(d.trace(b)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_incidence_arrival() {
        let g = ArrayGeometry::default();
        let p = Point::new(12.0, 3.0);
        let k = 30;
        let r = p.distance(Point::new(0.0, g.element_x(k)));
        let want = (p.z + r) / SPEED_OF_SOUND_MM_US;
        assert!((arrival_time_us(&plane(0.0), &g, p, k) - want).abs() < 1e-12);
    }

    #[test]
    fn no_scatterers_no_signal() {
        let d = synthesize_channel_data(&[], &plane(5.0), &ArrayGeometry::default()).unwrap();
        assert!(d.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compounding_identical_frames_is_identity() {
        let img = Image::from_fn(4, 3, |i, j| (i * 3 + j) as f32);
        let out = compound(&vec![img.clone(); 5]).unwrap();
        assert_eq!(out, img);
    }
}
