//! Frame-to-frame tracking with a constant-velocity Kalman filter and
//! globally optimal assignment.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};

use super::localize::LocalizationEvent;
use crate::geometry::Point;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackParams {
    /// Largest distance (mm) between a prediction and a detection.
    pub gate_radius_mm: f64,
    /// Frames a track may miss before it is closed.
    pub max_gap: usize,
    /// Tracks with fewer points are discarded.
    pub min_track_length: usize,
    /// Acceleration noise (mm/s²).
    pub sigma_accel: f64,
    /// Localization noise (mm).
    pub sigma_meas: f64,
    /// Prior velocity spread of a new track (mm/s).
    pub sigma_v0: f64,
    /// Frames with more detections than this use greedy assignment.
    pub max_optimal: usize,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams {
            gate_radius_mm: 0.1,
            max_gap: 1,
            min_track_length: 5,
            sigma_accel: 19_600.0,
            sigma_meas: 0.02,
            sigma_v0: 100.0,
            max_optimal: 500,
        }
    }
}

impl TrackParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_radius_mm > 0.0) {
            return Err(Error::param("tracking.gate_radius_mm", "must be > 0"));
        }
        if self.min_track_length < 2 {
            return Err(Error::param("tracking.min_track_length", "must be >= 2"));
        }
        if !(self.sigma_accel >= 0.0 && self.sigma_meas > 0.0 && self.sigma_v0 > 0.0) {
            return Err(Error::param("tracking.sigma", "noise levels must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: usize,
    /// Index of the detection within its frame.
    pub event: usize,
    pub t: f64,
    /// Measured position.
    pub position: Point,
    /// Filtered velocity (mm/s).
    pub velocity: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: usize,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Magnitude of the least-squares velocity of position against time
    /// (mm/s). Zero for tracks shorter than two points or zero duration.
    pub fn speed(&self) -> f64 {
        if self.duration() <= 0.0 {
            return 0.0;
        }
        let n = self.len() as f64;
        let mt = self.points.iter().map(|p| p.t).sum::<f64>() / n;
        let mz = self.points.iter().map(|p| p.position.z).sum::<f64>() / n;
        let mx = self.points.iter().map(|p| p.position.x).sum::<f64>() / n;
        let (mut stt, mut stz, mut stx) = (0.0, 0.0, 0.0);
        for p in &self.points {
            let dt = p.t - mt;
            stt += dt * dt;
            stz += dt * (p.position.z - mz);
            stx += dt * (p.position.x - mx);
        }
        (stz / stt).hypot(stx / stt)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackingResult {
    pub tracks: Vec<Track>,
    /// Set when at least one frame fell back to greedy assignment.
    pub greedy_fallback: bool,
}

struct Live {
    id: usize,
    x: Vector4<f64>,
    p: Matrix4<f64>,
    last_frame: usize,
    last_t: f64,
    points: Vec<TrackPoint>,
}

impl Live {
    fn predict(&self, t: f64, q_acc: f64) -> (Vector4<f64>, Matrix4<f64>) {
        let dt = t - self.last_t;
        let mut f = Matrix4::identity();
        f[(0, 2)] = dt;
        f[(1, 3)] = dt;
        let (a, b, c) = (dt.powi(4) / 4.0, dt.powi(3) / 2.0, dt * dt);
        let q = Matrix4::new(
            a, 0.0, b, 0.0, //
            0.0, a, 0.0, b, //
            b, 0.0, c, 0.0, //
            0.0, b, 0.0, c,
        ) * q_acc;
        (f * self.x, f * self.p * f.transpose() + q)
    }
}

const H: Matrix2x4<f64> = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
const FORBIDDEN: f64 = 1e18;

/// Links per-frame detections into tracks. `frame_times[f]` is the
/// acquisition time of frame `f`.
pub fn track_events(events: &[Vec<LocalizationEvent>], frame_times: &[f64], params: &TrackParams) -> Result<TrackingResult> {
    params.validate()?;
    if frame_times.len() < events.len() {
        return Err(Error::param("tracking", "fewer frame times than frames"));
    }
    let r = Matrix2::identity() * params.sigma_meas.powi(2);
    let q_acc = params.sigma_accel.powi(2);
    let mut p0 = Matrix4::zeros();
    p0[(0, 0)] = params.sigma_meas.powi(2);
    p0[(1, 1)] = params.sigma_meas.powi(2);
    p0[(2, 2)] = params.sigma_v0.powi(2);
    p0[(3, 3)] = params.sigma_v0.powi(2);
    let gate2 = params.gate_radius_mm.powi(2);

    let mut live: Vec<Live> = Vec::new();
    let mut done: Vec<Track> = Vec::new();
    let mut next_id = 0;
    let mut greedy = false;

    for (f, dets) in events.iter().enumerate() {
        let t = frame_times[f];
        let (open, closed): (Vec<Live>, Vec<Live>) =
            live.into_iter().partition(|l| f - l.last_frame <= params.max_gap + 1);
        done.extend(closed.into_iter().map(finish));
        live = open;

        let preds: Vec<_> = live.iter().map(|l| l.predict(t, q_acc)).collect();
        let mut cost = vec![FORBIDDEN; live.len() * dets.len()];
        for (a, (x, p)) in preds.iter().enumerate() {
            let s = H * p * H.transpose() + r;
            let s_inv = s.try_inverse().unwrap_or_else(Matrix2::identity);
            for (b, d) in dets.iter().enumerate() {
                let y = Vector2::new(d.position.z - x[0], d.position.x - x[1]);
                if y.norm_squared() <= gate2 {
                    cost[a * dets.len() + b] = (y.transpose() * s_inv * y)[0];
                }
            }
        }
        let assign = if dets.len() > params.max_optimal {
            greedy = true;
            greedy_assign(&cost, live.len(), dets.len())
        } else {
            hungarian(&bounded(&cost, live.len().min(dets.len())), live.len(), dets.len())
        };

        let mut used = vec![false; dets.len()];
        for (a, b) in assign {
            if cost[a * dets.len() + b] >= FORBIDDEN {
                continue;
            }
            used[b] = true;
            let (x, p) = preds[a];
            let s = H * p * H.transpose() + r;
            let k = p * H.transpose() * s.try_inverse().unwrap_or_else(Matrix2::identity);
            let z = Vector2::new(dets[b].position.z, dets[b].position.x);
            let l = &mut live[a];
            l.x = x + k * (z - H * x);
            l.p = (Matrix4::identity() - k * H) * p;
            l.last_frame = f;
            l.last_t = t;
            l.points.push(TrackPoint {
                frame: f,
                event: b,
                t,
                position: dets[b].position,
                velocity: Point::new(l.x[2], l.x[3]),
            });
        }
        for (b, d) in dets.iter().enumerate().filter(|&(b, _)| !used[b]) {
            live.push(Live {
                id: next_id,
                x: Vector4::new(d.position.z, d.position.x, 0.0, 0.0),
                p: p0,
                last_frame: f,
                last_t: t,
                points: vec![TrackPoint {
                    frame: f,
                    event: b,
                    t,
                    position: d.position,
                    velocity: Point::default(),
                }],
            });
            next_id += 1;
        }
    }
    done.extend(live.into_iter().map(finish));
    done.retain(|tr| tr.len() >= params.min_track_length);
    done.sort_by_key(|tr| tr.id);
    Ok(TrackingResult {
        tracks: done,
        greedy_fallback: greedy,
    })
}

/// Replaces gated-out entries with a penalty just large enough that the
/// optimum first maximizes the number of feasible pairs.
fn bounded(cost: &[f64], k: usize) -> Vec<f64> {
    let worst = cost.iter().copied().filter(|&c| c < FORBIDDEN).fold(0.0, f64::max);
    let big = 1.0 + 2.0 * worst * k as f64;
    cost.iter().map(|&c| if c < FORBIDDEN { c } else { big }).collect()
}

fn finish(l: Live) -> Track {
    let mut points = l.points;
    if points.len() >= 2 {
        points[0].velocity = points[1].velocity;
    }
    Track { id: l.id, points }
}

/// Minimum-cost assignment on an `n × m` cost matrix (row-major). Returns
/// `(row, col)` pairs, one per row or column, whichever is fewer.
pub fn hungarian(cost: &[f64], n: usize, m: usize) -> Vec<(usize, usize)> {
    if n == 0 || m == 0 {
        return Vec::new();
    }
    if n > m {
        let mut t = vec![0.0; n * m];
        for a in 0..n {
            for b in 0..m {
                t[b * n + a] = cost[a * m + b];
            }
        }
        return hungarian(&t, m, n).into_iter().map(|(b, a)| (a, b)).collect();
    }
    // potentials, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1) * m + j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    out.sort_unstable();
    out
}

/// Cheapest-first assignment.
pub fn greedy_assign(cost: &[f64], n: usize, m: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|a| (0..m).map(move |b| (a, b)))
        .filter(|&(a, b)| cost[a * m + b] < FORBIDDEN)
        .map(|(a, b)| (cost[a * m + b], a, b))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let (mut ra, mut rb) = (vec![false; n], vec![false; m]);
    let mut out = Vec::new();
    for (_, a, b) in pairs {
        if !ra[a] && !rb[b] {
            ra[a] = true;
            rb[b] = true;
            out.push((a, b));
        }
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(frame: usize, z: f64, x: f64) -> LocalizationEvent {
        LocalizationEvent {
            position: Point::new(z, x),
            frame,
            t: frame as f64 * 1e-3,
            score: 1.0,
            amplitude: 1.0,
        }
    }

    fn times(n: usize) -> Vec<f64> {
        (0..n).map(|k| k as f64 * 1e-3).collect()
    }

    fn brute(cost: &[f64], n: usize, m: usize) -> f64 {
        // n <= m; try every injection of rows into columns
        fn rec(a: usize, n: usize, m: usize, cost: &[f64], used: &mut Vec<bool>) -> f64 {
            if a == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for b in 0..m {
                if !used[b] {
                    used[b] = true;
                    best = best.min(cost[a * m + b] + rec(a + 1, n, m, cost, used));
                    used[b] = false;
                }
            }
            best
        }
        rec(0, n, m, cost, &mut vec![false; m])
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut s = 7u64;
        for n in 1..=4 {
            for m in n..=5 {
                let cost: Vec<f64> = (0..n * m)
                    .map(|_| {
                        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        (s >> 40) as f64 / 1e3
                    })
                    .collect();
                let a = hungarian(&cost, n, m);
                assert_eq!(a.len(), n);
                let total: f64 = a.iter().map(|&(i, j)| cost[i * m + j]).sum();
                assert!((total - brute(&cost, n, m)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hungarian_beats_greedy() {
        // greedy takes the 1.0 and is forced into 10.0
        let cost = [1.0, 2.0, 2.0, 10.0];
        let h: f64 = hungarian(&cost, 2, 2).iter().map(|&(a, b)| cost[a * 2 + b]).sum();
        let g: f64 = greedy_assign(&cost, 2, 2).iter().map(|&(a, b)| cost[a * 2 + b]).sum();
        assert_eq!(h, 4.0);
        assert_eq!(g, 11.0);
    }

    #[test]
    fn tall_matrix() {
        let cost = [5.0, 1.0, 2.0];
        assert_eq!(hungarian(&cost, 3, 1), vec![(1, 0)]);
    }

    #[test]
    fn straight_line_velocity() {
        // 20 mm/s lateral at 1 kHz: 20 µm per frame
        let events: Vec<_> = (0..10).map(|f| vec![ev(f, 12.0, f as f64 * 0.02)]).collect();
        let res = track_events(&events, &times(10), &TrackParams::default()).unwrap();
        assert_eq!(res.tracks.len(), 1);
        let tr = &res.tracks[0];
        assert_eq!(tr.len(), 10);
        assert!((tr.speed() - 20.0).abs() < 1e-9);
        let last = tr.points.last().unwrap().velocity;
        assert!((last.x - 20.0).abs() < 1.0 && last.z.abs() < 1.0, "{last:?}");
        assert_eq!(tr.points[0].velocity, tr.points[1].velocity);
    }

    #[test]
    fn crossing_pair_keeps_identity() {
        // two bubbles moving towards each other along x, offset in z
        let events: Vec<_> = (0..12)
            .map(|f| {
                let d = f as f64 * 0.03;
                vec![ev(f, 12.0, -0.2 + d), ev(f, 12.06, 0.2 - d)]
            })
            .collect();
        let res = track_events(&events, &times(12), &TrackParams::default()).unwrap();
        assert_eq!(res.tracks.len(), 2);
        for tr in &res.tracks {
            assert_eq!(tr.len(), 12);
            let dz: f64 = tr.points.iter().map(|p| (p.position.z - tr.points[0].position.z).abs()).sum();
            assert_eq!(dz, 0.0);
        }
    }

    #[test]
    fn gap_bridging() {
        let mut events: Vec<_> = (0..8).map(|f| vec![ev(f, 12.0, f as f64 * 0.01)]).collect();
        events[4].clear();
        let mut p = TrackParams::default();
        let res = track_events(&events, &times(8), &p).unwrap();
        assert_eq!(res.tracks.len(), 1);
        assert_eq!(res.tracks[0].len(), 7);
        p.max_gap = 0;
        p.min_track_length = 3;
        let res = track_events(&events, &times(8), &p).unwrap();
        assert_eq!(res.tracks.len(), 2);
    }

    #[test]
    fn gate_and_min_length() {
        let events: Vec<_> = (0..6).map(|f| vec![ev(f, 12.0, f as f64 * 0.5)]).collect();
        let res = track_events(&events, &times(6), &TrackParams::default()).unwrap();
        assert!(res.tracks.is_empty());
    }

    #[test]
    fn greedy_fallback_is_flagged() {
        let events: Vec<_> = (0..5).map(|f| vec![ev(f, 12.0, 0.0), ev(f, 13.0, 0.0)]).collect();
        let p = TrackParams {
            max_optimal: 1,
            ..TrackParams::default()
        };
        let res = track_events(&events, &times(5), &p).unwrap();
        assert!(res.greedy_fallback);
        assert_eq!(res.tracks.len(), 2);
    }
}
