//! Vessel phantoms, flow fields and the advected droplet population.
//!
//! Vessels are straight capsules in the imaging plane with plug flow by
//! default. Each segment carries its volumetric flow; a phantom is a directed
//! forest of segments where every child starts at its parent's end point.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::geometry::{distance_to_segment, Point};
use crate::kinetics::Gas;
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Deepest supported branching tree.
pub const MAX_TREE_LEVELS: usize = 10;

/// Converts a volumetric flow (µl/min) through a tube of inner diameter `d_um`
/// into the mean axial velocity in mm/s.
pub fn flow_rate_to_mean_velocity(q_ul_min: f64, d_um: f64) -> Result<f64> {
    if !(d_um > 0.0) {
        return Err(Error::Domain(format!("inner diameter must be positive, got {d_um} µm")));
    }
    if !(q_ul_min >= 0.0) {
        return Err(Error::Domain(format!("volumetric flow must be non-negative, got {q_ul_min} µl/min")));
    }
    // 1 µl = 1 mm³
    let q_mm3_s = q_ul_min / 60.0;
    let r_mm = d_um * 1e-3 / 2.0;
    Ok(q_mm3_s / (PI * r_mm * r_mm))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselSegment {
    /// Upstream end (mm).
    pub start: Point,
    /// Downstream end (mm).
    pub end: Point,
    pub inner_diameter_um: f64,
    pub flow_ul_min: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

impl VesselSegment {
    pub fn new(start: Point, end: Point, inner_diameter_um: f64, flow_ul_min: f64) -> Self {
        VesselSegment {
            start,
            end,
            inner_diameter_um,
            flow_ul_min,
            parent: None,
            children: Vec::new(),
        }
    }

    pub fn length(&self) -> f64 {
        self.start.distance(self.end)
    }

    /// Unit vector along the flow direction.
    pub fn direction(&self) -> Point {
        let d = self.end - self.start;
        d * (1.0 / d.norm())
    }

    pub fn radius_mm(&self) -> f64 {
        self.inner_diameter_um * 1e-3 / 2.0
    }

    pub fn mean_velocity(&self) -> f64 {
        // Validated phantoms always have a positive diameter.
        flow_rate_to_mean_velocity(self.flow_ul_min, self.inner_diameter_um).unwrap_or(0.0)
    }

    /// Point at arc position `s` along the axis and in-plane transverse offset.
    pub fn point_at(&self, s: f64, offset: f64) -> Point {
        let u = self.direction();
        self.start + u * s + u.perp() * offset
    }

    /// Capsule containment test.
    pub fn contains(&self, p: Point) -> bool {
        distance_to_segment(p, self.start, self.end).0 <= self.radius_mm() * (1.0 + 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub name: String,
    pub segments: Vec<VesselSegment>,
}

impl Phantom {
    /// Builds a phantom from segments whose `parent` links are set; children
    /// lists are derived here. Fails on any invariant violation.
    pub fn new(name: impl Into<String>, mut segments: Vec<VesselSegment>) -> Result<Self> {
        for s in &mut segments {
            s.children.clear();
        }
        for i in 0..segments.len() {
            if let Some(p) = segments[i].parent {
                if p >= segments.len() || p == i {
                    return Err(Error::Geometry(format!("segment {i} has invalid parent {p}")));
                }
                segments[p].children.push(i);
            }
        }
        let phantom = Phantom {
            name: name.into(),
            segments,
        };
        phantom.validate()?;
        Ok(phantom)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.segments.len();
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.inner_diameter_um > 0.0) {
                return Err(Error::Geometry(format!("segment {i}: inner diameter must be > 0")));
            }
            if !(s.start.distance(s.end) > 0.0) {
                return Err(Error::Geometry(format!("segment {i}: endpoints coincide")));
            }
            if !(s.flow_ul_min >= 0.0) {
                return Err(Error::Geometry(format!("segment {i}: negative flow")));
            }
            if let Some(p) = s.parent {
                if self.segments[p].end.distance(s.start) > 1e-9 {
                    return Err(Error::Geometry(format!(
                        "segment {i} does not start at the end of its parent {p}"
                    )));
                }
            }
            // Walking up the parents must reach an inlet.
            let mut cur = i;
            let mut steps = 0;
            while let Some(p) = self.segments[cur].parent {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(Error::Geometry(format!("segment {i} is part of a cycle")));
                }
            }
            if !s.children.is_empty() {
                let child_flow: f64 = s.children.iter().map(|&c| self.segments[c].flow_ul_min).sum();
                if child_flow != s.flow_ul_min {
                    return Err(Error::Geometry(format!(
                        "segment {i}: child flows sum to {child_flow} µl/min, parent carries {}",
                        s.flow_ul_min
                    )));
                }
            }
        }
        Ok(())
    }

    /// Segments without a parent.
    pub fn inlets(&self) -> Vec<usize> {
        (0..self.segments.len())
            .filter(|&i| self.segments[i].parent.is_none())
            .collect()
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(VesselSegment::length).sum()
    }

    /// Whether `p` lies in the lumen of any segment.
    pub fn contains(&self, p: Point) -> bool {
        self.segments.iter().any(|s| s.contains(p))
    }

    /// Index of the segment whose axis is closest to `p`.
    pub fn nearest_segment(&self, p: Point) -> Option<usize> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| (i, distance_to_segment(p, s.start, s.end).0))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    /// `root` and every segment downstream of it.
    pub fn subtree(&self, root: usize) -> Vec<usize> {
        let mut out = vec![root];
        let mut k = 0;
        while k < out.len() {
            out.extend(self.segments[out[k]].children.iter().copied());
            k += 1;
        }
        out
    }
}

/// Crossed-tube flow phantom parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossedTubes {
    pub diameter_um: f64,
    pub crossing_depth_mm: f64,
    pub crossing_angle_deg: f64,
    pub flow_ul_min: f64,
    /// Tube length on each side of the crossing point.
    pub half_length_mm: f64,
}

impl Default for CrossedTubes {
    fn default() -> Self {
        CrossedTubes {
            diameter_um: 200.0,
            crossing_depth_mm: 15.0,
            crossing_angle_deg: 30.0,
            flow_ul_min: 30.0,
            half_length_mm: 12.0,
        }
    }
}

impl CrossedTubes {
    /// Two straight tubes crossing at `(crossing_depth, 0)`. Both inlets sit on
    /// the deep side, so flow moves towards the transducer.
    pub fn build(&self) -> Result<Phantom> {
        let a = self.crossing_angle_deg;
        if !(a > 0.0 && a < 180.0) {
            return Err(Error::Geometry(format!("crossing angle must lie in (0°, 180°), got {a}°")));
        }
        if !(self.diameter_um > 0.0) {
            return Err(Error::Geometry("tube diameter must be positive".into()));
        }
        if !(self.crossing_depth_mm > 0.0 && self.crossing_depth_mm <= 60.0) {
            return Err(Error::Geometry(format!(
                "crossing depth {} mm outside the imaging range (0, 60] mm",
                self.crossing_depth_mm
            )));
        }
        let half = (a / 2.0).to_radians();
        let c = Point::new(self.crossing_depth_mm, 0.0);
        let h = self.half_length_mm;
        let u1 = Point::new(-half.sin(), half.cos());
        let u2 = Point::new(-half.sin(), -half.cos());
        if c.z - half.sin() * h < 0.0 {
            return Err(Error::Geometry("tubes would extend above the transducer surface".into()));
        }
        let seg = |u: Point| VesselSegment::new(c - u * h, c + u * h, self.diameter_um, self.flow_ul_min);
        Phantom::new("crossed-tube", vec![seg(u1), seg(u2)])
    }
}

pub fn build_crossed_tube_phantom(
    diameter_um: f64,
    crossing_depth_mm: f64,
    crossing_angle_deg: f64,
) -> Result<Phantom> {
    CrossedTubes {
        diameter_um,
        crossing_depth_mm,
        crossing_angle_deg,
        ..CrossedTubes::default()
    }
    .build()
}

/// Symmetric binary tree growing away from the transducer.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingTree {
    pub levels: usize,
    pub root_diameter_um: f64,
    /// Child diameter as a fraction of its parent's.
    pub split_ratio: f64,
    pub root_flow_ul_min: f64,
    pub root_start: Point,
    pub root_length_mm: f64,
    /// Child length as a fraction of its parent's.
    pub length_ratio: f64,
    /// Angle between a child and its parent's axis.
    pub branch_angle_deg: f64,
}

impl Default for BranchingTree {
    fn default() -> Self {
        BranchingTree {
            levels: 3,
            root_diameter_um: 400.0,
            split_ratio: 0.7,
            root_flow_ul_min: 60.0,
            root_start: Point::new(4.0, 0.0),
            root_length_mm: 6.0,
            length_ratio: 0.8,
            branch_angle_deg: 30.0,
        }
    }
}

impl BranchingTree {
    pub fn build(&self) -> Result<Phantom> {
        if self.levels < 1 {
            return Err(Error::Geometry("a tree needs at least one level".into()));
        }
        if self.levels > MAX_TREE_LEVELS {
            return Err(Error::Geometry(format!(
                "{} levels requested; at most {MAX_TREE_LEVELS} are supported",
                self.levels
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio <= 1.0) {
            return Err(Error::Geometry(format!("split ratio {} outside (0, 1]", self.split_ratio)));
        }
        let angle = self.branch_angle_deg.to_radians();
        let mut segments = vec![VesselSegment::new(
            self.root_start,
            self.root_start + Point::new(self.root_length_mm, 0.0),
            self.root_diameter_um,
            self.root_flow_ul_min,
        )];
        // (segment index, level, heading angle from +z)
        let mut frontier = vec![(0usize, 1usize, 0.0f64)];
        let mut k = 0;
        while k < frontier.len() {
            let (parent, level, heading) = frontier[k];
            k += 1;
            if level == self.levels {
                continue;
            }
            let p = segments[parent].clone();
            let length = p.length() * self.length_ratio;
            // Equal split; halving is exact so flows conserve bit-for-bit.
            let flow = p.flow_ul_min * 0.5;
            for side in [-1.0, 1.0] {
                let h = heading + side * angle;
                let end = p.end + Point::new(h.cos(), h.sin()) * length;
                let mut child = VesselSegment::new(p.end, end, p.inner_diameter_um * self.split_ratio, flow);
                child.parent = Some(parent);
                segments.push(child);
                frontier.push((segments.len() - 1, level + 1, h));
            }
        }
        Phantom::new(format!("tree-{}", self.levels), segments)
    }
}

pub fn build_branching_tree_phantom(levels: usize, root_diameter_um: f64, split_ratio: f64) -> Result<Phantom> {
    BranchingTree {
        levels,
        root_diameter_um,
        split_ratio,
        ..BranchingTree::default()
    }
    .build()
}

/// Single straight vessel, flow from `start` to `end`.
pub fn build_straight_vessel(start: Point, end: Point, diameter_um: f64, flow_ul_min: f64) -> Result<Phantom> {
    Phantom::new("straight", vec![VesselSegment::new(start, end, diameter_um, flow_ul_min)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropletState {
    Dormant,
    Active,
    Destroyed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Droplet {
    pub id: u64,
    pub segment: usize,
    /// Arc position along the segment axis (mm from its start).
    pub s: f64,
    /// In-plane transverse offset from the axis (mm).
    pub offset: f64,
    /// Out-of-plane offset (mm); only used by the parabolic flow profile.
    pub elevation: f64,
    pub gas: Gas,
    pub state: DropletState,
    pub activation_frame: Option<u32>,
}

impl Droplet {
    pub fn position(&self, phantom: &Phantom) -> Point {
        phantom.segments[self.segment].point_at(self.s, self.offset)
    }

    /// Squared radial position relative to the lumen radius, in [0, 1].
    fn radial_fraction2(&self, phantom: &Phantom) -> f64 {
        let r = phantom.segments[self.segment].radius_mm();
        (self.offset * self.offset + self.elevation * self.elevation) / (r * r)
    }
}

/// Droplets currently inside the phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub droplets: Vec<Droplet>,
    pub next_id: u64,
    /// Droplets per mm of vessel length, used for inflow.
    pub concentration: f64,
    pub gas: Gas,
}

impl Population {
    pub fn count(&self, state: DropletState) -> usize {
        self.droplets.iter().filter(|d| d.state == state).count()
    }

    fn spawn<R: Rng + ?Sized>(&mut self, phantom: &Phantom, segment: usize, s: f64, rng: &mut R) {
        let r = phantom.segments[segment].radius_mm();
        let (offset, elevation) = sample_disk(r, rng);
        self.droplets.push(Droplet {
            id: self.next_id,
            segment,
            s,
            offset,
            elevation,
            gas: self.gas,
            state: DropletState::Dormant,
            activation_frame: None,
        });
        self.next_id += 1;
    }
}

/// Uniform point in a disk of radius `r`; the first coordinate is the
/// in-plane offset, i.e. a uniformly filled cylinder projected onto the plane.
fn sample_disk<R: Rng + ?Sized>(r: f64, rng: &mut R) -> (f64, f64) {
    loop {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        if a * a + b * b <= 1.0 {
            return (a * r, b * r);
        }
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(p) => p.sample(rng) as usize,
        Err(_) => 0,
    }
}

/// Seeds dormant droplets uniformly along every lumen.
pub fn seed_droplets(phantom: &Phantom, concentration: f64, gas: Gas, rng_seed: u64) -> Result<Population> {
    if phantom.segments.is_empty() {
        return Err(Error::Geometry("cannot seed droplets into an empty phantom".into()));
    }
    if !(concentration > 0.0) {
        return Err(Error::param("concentration", "must be > 0 droplets/mm"));
    }
    let mut rng = stream_rng(rng_seed, Stream::Seeding, 0);
    let mut pop = Population {
        droplets: Vec::new(),
        next_id: 0,
        concentration,
        gas,
    };
    for (i, seg) in phantom.segments.iter().enumerate() {
        let len = seg.length();
        let n = poisson(concentration * len, &mut rng);
        for _ in 0..n {
            let s = rng.random_range(0.0..len);
            pop.spawn(phantom, i, s, &mut rng);
        }
    }
    Ok(pop)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulsatility {
    /// Relative modulation depth in [0, 1].
    pub amplitude: f64,
    pub period_s: f64,
    pub phase_rad: f64,
}

impl Pulsatility {
    pub const STEADY: Pulsatility = Pulsatility {
        amplitude: 0.0,
        period_s: 1.0,
        phase_rad: 0.0,
    };

    /// ∫ (1 + a·sin(2πt/T + φ)) dt over [t, t + dt].
    pub fn integrated_scale(&self, t: f64, dt: f64) -> f64 {
        if self.amplitude == 0.0 {
            return dt;
        }
        let w = 2.0 * PI / self.period_s;
        let c0 = (w * t + self.phase_rad).cos();
        let c1 = (w * (t + dt) + self.phase_rad).cos();
        dt + self.amplitude * (c0 - c1) / w
    }

    pub fn scale(&self, t: f64) -> f64 {
        1.0 + self.amplitude * (2.0 * PI * t / self.period_s + self.phase_rad).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowProfile {
    Plug,
    Parabolic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    /// Mean velocity per segment (mm/s).
    pub mean_velocity: Vec<f64>,
    pub pulsatility: Pulsatility,
    pub profile: FlowProfile,
}

impl FlowField {
    /// Steady plug flow with each segment's velocity derived from its flow.
    pub fn from_phantom(phantom: &Phantom) -> Self {
        FlowField {
            mean_velocity: phantom.segments.iter().map(VesselSegment::mean_velocity).collect(),
            pulsatility: Pulsatility::STEADY,
            profile: FlowProfile::Plug,
        }
    }

    pub fn with_pulsatility(mut self, p: Pulsatility) -> Self {
        self.pulsatility = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean_velocity.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::param("flow.mean_velocity", "must be >= 0"));
        }
        let a = self.pulsatility.amplitude;
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::param("flow.pulsatility", format!("amplitude {a} outside [0, 1]")));
        }
        if !(self.pulsatility.period_s > 0.0) {
            return Err(Error::param("flow.period_s", "must be > 0"));
        }
        Ok(())
    }

    /// Instantaneous mean velocity of a segment at time `t`.
    pub fn velocity(&self, segment: usize, t: f64) -> f64 {
        self.mean_velocity[segment] * self.pulsatility.scale(t)
    }
}

/// Advances the population by `dt` seconds starting at time `t`.
///
/// Droplets move along their segment axis, hop into a child segment at a
/// junction (chosen with probability proportional to the child's flow) and
/// leave at outlets. Destroyed droplets are dropped. Fresh dormant droplets
/// enter every inlet at `concentration × displacement`.
pub fn advect_step<R: Rng + ?Sized>(
    pop: &mut Population,
    phantom: &Phantom,
    flow: &FlowField,
    dt: f64,
    t: f64,
    rng: &mut R,
) {
    pop.droplets.retain(|d| d.state != DropletState::Destroyed);
    if !(dt > 0.0) {
        return;
    }
    let travel = flow.pulsatility.integrated_scale(t, dt);
    let mut out = Vec::with_capacity(pop.droplets.len());
    for mut d in pop.droplets.drain(..) {
        let profile = match flow.profile {
            FlowProfile::Plug => 1.0,
            FlowProfile::Parabolic => 2.0 * (1.0 - d.radial_fraction2(phantom)).max(0.0),
        };
        // Remaining displacement measured in units of "travel", so the
        // velocity of each segment applies to the part spent inside it.
        let mut remaining = travel;
        let mut alive = true;
        loop {
            let seg = &phantom.segments[d.segment];
            let v = flow.mean_velocity[d.segment] * profile;
            let len = seg.length();
            let step = v * remaining;
            if d.s + step <= len {
                d.s += step;
                break;
            }
            if seg.children.is_empty() {
                alive = false;
                break;
            }
            remaining -= (len - d.s) / v;
            let child = pick_child(phantom, d.segment, rng);
            let ratio = phantom.segments[child].radius_mm() / seg.radius_mm();
            d.offset *= ratio;
            d.elevation *= ratio;
            d.segment = child;
            d.s = 0.0;
        }
        if alive {
            out.push(d);
        }
    }
    pop.droplets = out;

    for inlet in phantom.inlets() {
        let disp = (flow.mean_velocity[inlet] * travel).min(phantom.segments[inlet].length());
        let n = poisson(pop.concentration * disp, rng);
        for _ in 0..n {
            let s = rng.random_range(0.0..disp.max(f64::MIN_POSITIVE));
            pop.spawn(phantom, inlet, s, rng);
        }
    }
}

fn pick_child<R: Rng + ?Sized>(phantom: &Phantom, segment: usize, rng: &mut R) -> usize {
    let seg = &phantom.segments[segment];
    let total: f64 = seg.children.iter().map(|&c| phantom.segments[c].flow_ul_min).sum();
    if total <= 0.0 {
        return seg.children[0];
    }
    let mut u = rng.random::<f64>() * total;
    for &c in &seg.children {
        u -= phantom.segments[c].flow_ul_min;
        if u < 0.0 {
            return c;
        }
    }
    *seg.children.last().expect("junction has children")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flow_conversion() {
        assert_abs_diff_eq!(flow_rate_to_mean_velocity(30.0, 200.0).unwrap(), 15.9, epsilon = 0.1);
        assert_eq!(flow_rate_to_mean_velocity(0.0, 200.0).unwrap(), 0.0);
        assert_abs_diff_eq!(flow_rate_to_mean_velocity(60.0, 200.0).unwrap(), 31.8, epsilon = 0.05);
        assert!(flow_rate_to_mean_velocity(30.0, 0.0).is_err());
        assert!(flow_rate_to_mean_velocity(30.0, -5.0).is_err());
    }

    #[test]
    fn crossed_tubes_cross_at_requested_depth() {
        let ph = build_crossed_tube_phantom(200.0, 15.0, 30.0).unwrap();
        assert_eq!(ph.segments.len(), 2);
        let c = Point::new(15.0, 0.0);
        for s in &ph.segments {
            let (d, _) = distance_to_segment(c, s.start, s.end);
            assert!(d < 1e-12);
            // inlet deeper than outlet
            assert!(s.start.z > s.end.z);
        }
        assert!(ph.segments[0].contains(c) && ph.segments[1].contains(c));
    }

    #[test]
    fn perpendicular_crossing_is_mirror_symmetric() {
        let ph = build_crossed_tube_phantom(200.0, 15.0, 90.0).unwrap();
        let (a, b) = (&ph.segments[0], &ph.segments[1]);
        assert_abs_diff_eq!(a.start.z, b.start.z, epsilon = 1e-12);
        assert_abs_diff_eq!(a.start.x, -b.start.x, epsilon = 1e-12);
        assert_abs_diff_eq!(a.direction().dot(b.direction()), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_crossing_angle_is_rejected() {
        assert!(build_crossed_tube_phantom(200.0, 15.0, 0.0).is_err());
        assert!(build_crossed_tube_phantom(0.0, 15.0, 30.0).is_err());
    }

    #[test]
    fn tree_sizes_and_conservation() {
        let one = build_branching_tree_phantom(1, 400.0, 0.7).unwrap();
        assert_eq!(one.segments.len(), 1);
        let t = build_branching_tree_phantom(3, 400.0, 0.7).unwrap();
        assert_eq!(t.segments.len(), 7);
        let leaves: Vec<_> = t.segments.iter().filter(|s| s.children.is_empty()).collect();
        assert_eq!(leaves.len(), 4);
        for l in &leaves {
            assert_abs_diff_eq!(l.inner_diameter_um, 196.0, epsilon = 1e-9);
        }
        let leaf_flow: f64 = leaves.iter().map(|s| s.flow_ul_min).sum();
        assert_eq!(leaf_flow, t.segments[0].flow_ul_min);
        assert!(build_branching_tree_phantom(11, 400.0, 0.7).is_err());
        assert!(build_branching_tree_phantom(0, 400.0, 0.7).is_err());
    }

    #[test]
    fn unbalanced_junction_is_rejected() {
        let a = VesselSegment::new(Point::new(0.0, 0.0), Point::new(1.0, 0.0), 100.0, 10.0);
        let mut b = VesselSegment::new(Point::new(1.0, 0.0), Point::new(2.0, 0.0), 100.0, 4.0);
        b.parent = Some(0);
        assert!(Phantom::new("bad", vec![a, b]).is_err());
    }

    #[test]
    fn seeding_is_deterministic_and_inside() {
        let ph = build_crossed_tube_phantom(200.0, 15.0, 30.0).unwrap();
        let a = seed_droplets(&ph, 50.0, Gas::C3F8, 1).unwrap();
        let b = seed_droplets(&ph, 50.0, Gas::C3F8, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.droplets.iter().all(|d| d.state == DropletState::Dormant));
        assert!(a.droplets.iter().all(|d| ph.segments[d.segment].contains(d.position(&ph))));
        let empty = Phantom {
            name: "empty".into(),
            segments: vec![],
        };
        assert!(seed_droplets(&empty, 50.0, Gas::C3F8, 1).is_err());
    }

    #[test]
    fn seeding_count_matches_poisson_mean() {
        // 2 tubes of 20 mm = 40 mm total.
        let ph = CrossedTubes {
            half_length_mm: 10.0,
            ..CrossedTubes::default()
        }
        .build()
        .unwrap();
        assert_abs_diff_eq!(ph.total_length(), 40.0, epsilon = 1e-9);
        let n = seed_droplets(&ph, 50.0, Gas::C3F8, 3).unwrap().droplets.len() as f64;
        // mean 2000, sd ≈ 44.7; 4σ bound
        assert!((n - 2000.0).abs() < 4.0 * 2000f64.sqrt(), "{n}");
    }

    #[test]
    fn advection_moves_droplets_by_velocity_times_dt() {
        let ph = build_straight_vessel(Point::new(10.0, -5.0), Point::new(10.0, 5.0), 200.0, 30.0).unwrap();
        let mut flow = FlowField::from_phantom(&ph);
        flow.mean_velocity[0] = 16.0;
        let mut pop = seed_droplets(&ph, 20.0, Gas::C3F8, 2).unwrap();
        let before: Vec<(u64, f64)> = pop.droplets.iter().map(|d| (d.id, d.s)).collect();
        let mut rng = stream_rng(2, Stream::Advection, 0);
        advect_step(&mut pop, &ph, &flow, 1e-3, 0.0, &mut rng);
        for (id, s0) in before {
            if let Some(d) = pop.droplets.iter().find(|d| d.id == id) {
                assert_abs_diff_eq!(d.s - s0, 0.016, epsilon = 1e-12);
            } else {
                assert!(s0 + 0.016 > 10.0);
            }
        }
    }

    #[test]
    fn vanishing_step_changes_nothing() {
        let ph = build_crossed_tube_phantom(200.0, 15.0, 30.0).unwrap();
        let flow = FlowField::from_phantom(&ph);
        let mut pop = seed_droplets(&ph, 10.0, Gas::Mix, 4).unwrap();
        let before = pop.clone();
        let mut rng = stream_rng(4, Stream::Advection, 0);
        advect_step(&mut pop, &ph, &flow, 0.0, 0.3, &mut rng);
        assert_eq!(pop, before);
    }

    #[test]
    fn pulsatile_period_averages_to_mean() {
        let p = Pulsatility {
            amplitude: 0.5,
            period_s: 0.5,
            phase_rad: 0.3,
        };
        let n = 500;
        let dt = p.period_s / n as f64;
        let total: f64 = (0..n).map(|k| p.integrated_scale(k as f64 * dt, dt)).sum();
        assert_abs_diff_eq!(total * 16.0, 16.0 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn droplets_follow_tree_and_stay_in_lumens() {
        let ph = build_branching_tree_phantom(3, 400.0, 0.7).unwrap();
        let flow = FlowField::from_phantom(&ph);
        let mut pop = seed_droplets(&ph, 10.0, Gas::C4F10, 9).unwrap();
        let seeded = pop.next_id;
        let mut rng = stream_rng(9, Stream::Advection, 0);
        for k in 0..2000 {
            advect_step(&mut pop, &ph, &flow, 1e-3, k as f64 * 1e-3, &mut rng);
        }
        assert!(!pop.droplets.is_empty());
        for d in &pop.droplets {
            assert!(ph.segments[d.segment].contains(d.position(&ph)));
        }
        // Leaves received droplets that entered through the root.
        assert!(pop.droplets.iter().any(|d| ph.segments[d.segment].children.is_empty() && d.id >= seeded));
    }
}
