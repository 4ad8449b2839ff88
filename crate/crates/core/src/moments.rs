//! Area and first moments of closed boundaries via Green's theorem.
//!
//! Orientation convention: a contour is normalized so that
//! `m00 = 1/2 * sum(u[i+1] v[i] - u[i] v[i+1])` is positive. With image axes
//! (u right, v down) that is the order that runs down the left side first.

use nalgebra::{Point2, Vector2};

use crate::{Error, Result};

const COMPENSATED_SUM_THRESHOLD: usize = 10_000;

/// Ordered closed boundary; the last point connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    points: Vec<Point2<f64>>,
}

impl Contour {
    pub fn new(points: Vec<Point2<f64>>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::TooFewPoints(points.len()));
        }
        Ok(Self { points })
    }

    pub fn from_pixels(pixels: &[(i64, i64)]) -> Result<Self> {
        Self::new(
            pixels
                .iter()
                .map(|&(x, y)| Point2::new(x as f64, y as f64))
                .collect(),
        )
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Returns the contour in the positive-`m00` orientation.
    pub fn oriented(mut self) -> Result<Self> {
        let (m00, _, _) = raw_sums(&self.points);
        if m00.abs() < 2e-9 {
            return Err(Error::DegeneratePolygon(m00 * 0.5));
        }
        if m00 < 0.0 {
            self.points.reverse();
        }
        Ok(self)
    }

    /// True when consecutive points (including last to first) are 8-neighbors.
    pub fn is_8_connected(&self) -> bool {
        let n = self.points.len();
        (0..n).all(|i| {
            let d = self.points[(i + 1) % n] - self.points[i];
            d.x.abs() <= 1.0 && d.y.abs() <= 1.0 && (d.x != 0.0 || d.y != 0.0)
        })
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Point2<f64>, Point2<f64>) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (lo, hi)
    }

    pub fn map(&self, f: impl Fn(&Point2<f64>) -> Point2<f64>) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
        }
    }
}

/// Area and first moments of a polygon, normalized to `m00 > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolygonMoments {
    pub m00: f64,
    pub m10: f64,
    pub m01: f64,
}

/// Raw shoelace sums (twice the area, six times the first moments), signed.
///
/// Terms are formed relative to the first vertex so large absolute
/// coordinates don't cancel catastrophically.
fn raw_sums(points: &[Point2<f64>]) -> (f64, f64, f64) {
    let (c00, c10, c01) = raw_sums_about(points, points[0]);
    let o = points[0];
    (c00, c10 + 3.0 * o.x * c00, c01 + 3.0 * o.y * c00)
}

fn raw_sums_about(points: &[Point2<f64>], o: Point2<f64>) -> (f64, f64, f64) {
    let n = points.len();
    let term = |i: usize| {
        let (a, b) = (points[i] - o, points[(i + 1) % n] - o);
        let cross = b.x * a.y - a.x * b.y;
        (cross, cross * (b.x + a.x), cross * (b.y + a.y))
    };
    if n > COMPENSATED_SUM_THRESHOLD {
        let mut acc = [KahanSum::default(); 3];
        for i in 0..n {
            let (c, x, y) = term(i);
            acc[0].add(c);
            acc[1].add(x);
            acc[2].add(y);
        }
        (acc[0].value(), acc[1].value(), acc[2].value())
    } else {
        (0..n).map(term).fold((0.0, 0.0, 0.0), |s, t| {
            (s.0 + t.0, s.1 + t.1, s.2 + t.2)
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

pub fn polygon_moments(c: &Contour) -> Result<PolygonMoments> {
    let (c00, c10, c01) = raw_sums(&c.points);
    let m00 = 0.5 * c00;
    if m00.abs() < 1e-9 {
        return Err(Error::DegeneratePolygon(m00));
    }
    let sign = m00.signum();
    Ok(PolygonMoments {
        m00: sign * m00,
        m10: sign * c10 / 6.0,
        m01: sign * c01 / 6.0,
    })
}

pub fn polygon_centroid(m: &PolygonMoments) -> Result<Point2<f64>> {
    if m.m00.abs() < 1e-9 {
        return Err(Error::DegeneratePolygon(m.m00));
    }
    Ok(Point2::new(m.m10 / m.m00, m.m01 / m.m00))
}

/// Moments of a smooth closed curve sampled at `M` uniformly spaced
/// parameter values, given positions and parameter derivatives.
///
/// Uses the same boundary integrals as [`polygon_moments`] but evaluates
/// them with the periodic trapezoidal rule on the exact tangent, which
/// converges exponentially in `M` for analytic curves (the chord polygon
/// only converges as `1/M^2`).
pub fn curve_moments(points: &[Point2<f64>], tangents: &[Vector2<f64>]) -> Result<PolygonMoments> {
    if points.len() != tangents.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: tangents.len(),
        });
    }
    if points.len() < 3 {
        return Err(Error::TooFewPoints(points.len()));
    }
    let mut acc = CurveMoments::default();
    for (p, t) in points.iter().zip(tangents) {
        acc.add(*p, *t);
    }
    acc.finish(points.len())
}

/// Streaming form of [`curve_moments`].
#[derive(Debug, Clone, Copy, Default)]
pub struct CurveMoments {
    a: f64,
    mx: f64,
    my: f64,
}

impl CurveMoments {
    pub fn add(&mut self, p: Point2<f64>, t: Vector2<f64>) {
        // same sign convention as the polygon sums: v du - u dv
        let cross = p.y * t.x - p.x * t.y;
        self.a += cross;
        self.mx += p.x * cross;
        self.my += p.y * cross;
    }

    /// Moments after `samples` equally spaced samples over one period.
    pub fn finish(&self, samples: usize) -> Result<PolygonMoments> {
        let step = std::f64::consts::TAU / samples as f64;
        let m00 = 0.5 * self.a * step;
        if m00.abs() < 1e-12 {
            return Err(Error::DegeneratePolygon(m00));
        }
        let sign = m00.signum();
        Ok(PolygonMoments {
            m00: sign * m00,
            m10: sign * self.mx * step / 3.0,
            m01: sign * self.my * step / 3.0,
        })
    }
}
