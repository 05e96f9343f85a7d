//! Plane geometry in the imaging plane. `z` is depth (axial, mm, positive away
//! from the transducer) and `x` is lateral position (mm).

use std::ops::{Add, Mul, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub z: f64,
    pub x: f64,
}

impl Point {
    pub const fn new(z: f64, x: f64) -> Self {
        Point { z, x }
    }

    pub fn norm(self) -> f64 {
        self.z.hypot(self.x)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.z * o.z + self.x * o.x
    }

    pub fn distance(self, o: Point) -> f64 {
        (self - o).norm()
    }

    /// The vector rotated by +90°.
    pub fn perp(self) -> Point {
        Point::new(-self.x, self.z)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.z + o.z, self.x + o.x)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.z - o.z, self.x - o.x)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.z * s, self.x * s)
    }
}

/// Distance from `p` to the segment `a`-`b`, and the clamped parameter along it.
pub fn distance_to_segment(p: Point, a: Point, b: Point) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.distance(a + ab * t), t)
}

/// Closed polygon in the imaging plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Polygon { vertices }
    }

    /// Axis-aligned rectangle spanning two corners.
    pub fn rect(a: Point, b: Point) -> Self {
        Polygon::new(vec![
            Point::new(a.z, a.x),
            Point::new(a.z, b.x),
            Point::new(b.z, b.x),
            Point::new(b.z, a.x),
        ])
    }

    /// Shoelace area (absolute).
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            s += p.z * q.x - q.z * p.x;
        }
        0.5 * s.abs()
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, p: Point) -> bool {
        let v = &self.vertices;
        let n = v.len();
        let mut inside = false;
        let mut j = n.wrapping_sub(1);
        for i in 0..n {
            let (a, b) = (v[i], v[j]);
            if (a.x > p.x) != (b.x > p.x) {
                let z_cross = a.z + (p.x - a.x) / (b.x - a.x) * (b.z - a.z);
                if p.z < z_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance() {
        let (d, t) = distance_to_segment(Point::new(1.0, 0.5), Point::new(0.0, 0.0), Point::new(0.0, 2.0));
        assert!((d - 1.0).abs() < 1e-12);
        assert!((t - 0.25).abs() < 1e-12);
        let (d, t) = distance_to_segment(Point::new(0.0, 3.0), Point::new(0.0, 0.0), Point::new(0.0, 2.0));
        assert!((d - 1.0).abs() < 1e-12 && t == 1.0);
    }

    #[test]
    fn polygon_membership() {
        let sq = Polygon::rect(Point::new(0.0, 0.0), Point::new(2.0, 2.0));
        assert!((sq.area() - 4.0).abs() < 1e-12);
        assert!(sq.contains(Point::new(1.0, 1.0)));
        assert!(!sq.contains(Point::new(3.0, 1.0)));
        let tri = Polygon::new(vec![Point::new(0.0, 0.0), Point::new(0.0, 4.0), Point::new(4.0, 0.0)]);
        assert!(tri.contains(Point::new(1.0, 1.0)));
        assert!(!tri.contains(Point::new(3.0, 3.0)));
    }
}
