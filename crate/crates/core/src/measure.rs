//! Discrete W-valued measures: an absolutely continuous density on a grid plus
//! singular pieces carried by codimension-one polytopes.

use serde::{Deserialize, Serialize};

use crate::ballcalc::Ball;
use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::poly::PolynomialField;

/// Gauss-Legendre rule on [-1, 1].
pub(crate) const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// A codimension-one flat piece: a segment in the plane or a planar convex
/// polygon in space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Polytope {
    Segment { a: Vec<f64>, b: Vec<f64> },
    Polygon { vertices: Vec<Vec<f64>> },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn axpy(a: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    a.iter().zip(d).map(|(x, y)| x + t * y).collect()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Parameter interval of `a + t (b - a)`, `t in [0, 1]`, inside the closed ball.
fn segment_ball_interval(a: &[f64], b: &[f64], ball: &Ball) -> Option<(f64, f64)> {
    let d = sub(b, a);
    let f = sub(a, &ball.center);
    let qa = dot(&d, &d);
    let qb = 2.0 * dot(&f, &d);
    let qc = dot(&f, &f) - ball.radius * ball.radius;
    if qa == 0.0 {
        return if qc <= 0.0 { Some((0.0, 0.0)) } else { None };
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t0 = ((-qb - s) / (2.0 * qa)).max(0.0);
    let t1 = ((-qb + s) / (2.0 * qa)).min(1.0);
    (t0 <= t1).then_some((t0, t1))
}

/// Orthonormal in-plane frame `(origin, e1, e2, unit normal)` of a planar polygon.
fn polygon_frame(vertices: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    if vertices.len() < 3 || vertices.iter().any(|v| v.len() != 3) {
        return Err(Error::Input("polygons need at least 3 vertices in R^3".into()));
    }
    let o = vertices[0].clone();
    let e1 = sub(&vertices[1], &o);
    let mut nrm = [0.0; 3];
    for v in &vertices[2..] {
        let c = cross3(&e1, &sub(v, &o));
        if norm(&c) > norm(&nrm) {
            nrm = c;
        }
    }
    let (l1, ln) = (norm(&e1), norm(&nrm));
    if l1 == 0.0 || ln == 0.0 {
        return Err(Error::Degenerate("polygon has no area".into()));
    }
    let e1: Vec<f64> = e1.iter().map(|x| x / l1).collect();
    let nu: Vec<f64> = nrm.iter().map(|x| x / ln).collect();
    let e2 = cross3(&nu, &e1).to_vec();
    Ok((o, e1, e2, nu))
}

fn to_plane(p: &[f64], frame: &(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)) -> [f64; 2] {
    let d = sub(p, &frame.0);
    [dot(&d, &frame.1), dot(&d, &frame.2)]
}

fn from_plane(q: [f64; 2], frame: &(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)) -> Vec<f64> {
    (0..3).map(|k| frame.0[k] + q[0] * frame.1[k] + q[1] * frame.2[k]).collect()
}

fn polygon_area_2d(p: &[[f64; 2]]) -> f64 {
    let m = p.len();
    (0..m).map(|i| p[i][0] * p[(i + 1) % m][1] - p[(i + 1) % m][0] * p[i][1]).sum::<f64>() / 2.0
}

/// Signed area of (triangle with vertices 0, `a`, `b`) intersected with the
/// disc of radius `r` centred at 0.
fn triangle_disc_area(a: [f64; 2], b: [f64; 2], r: f64) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let qa = d[0] * d[0] + d[1] * d[1];
    let qb = 2.0 * (a[0] * d[0] + a[1] * d[1]);
    let qc = a[0] * a[0] + a[1] * a[1] - r * r;
    let mut cuts = vec![0.0];
    let disc = qb * qb - 4.0 * qa * qc;
    if qa > 0.0 && disc > 0.0 {
        let s = disc.sqrt();
        for t in [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)] {
            if t > 0.0 && t < 1.0 {
                cuts.push(t);
            }
        }
    }
    cuts.push(1.0);
    let at = |t: f64| [a[0] + t * d[0], a[1] + t * d[1]];
    cuts.windows(2)
        .map(|w| {
            let (p, q) = (at(w[0]), at(w[1]));
            let m = at(0.5 * (w[0] + w[1]));
            let cross = p[0] * q[1] - p[1] * q[0];
            if m[0] * m[0] + m[1] * m[1] <= r * r {
                cross / 2.0
            } else {
                let ang = cross.atan2(p[0] * q[0] + p[1] * q[1]);
                r * r * ang / 2.0
            }
        })
        .sum()
}

fn segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let d = sub(b, a);
    let len2 = dot(&d, &d);
    let t = if len2 > 0.0 { (dot(&sub(x, a), &d) / len2).clamp(0.0, 1.0) } else { 0.0 };
    norm(&sub(x, &axpy(a, t, &d)))
}

impl Polytope {
    /// Euclidean distance from `x` to the piece.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Segment { a, b } => Ok(segment_distance(x, a, b)),
            Self::Polygon { vertices } => {
                let frame = polygon_frame(vertices)?;
                let q = to_plane(x, &frame);
                let height = dot(&sub(x, &frame.0), &frame.3).abs();
                let pts: Vec<[f64; 2]> = vertices.iter().map(|v| to_plane(v, &frame)).collect();
                let orient = polygon_area_2d(&pts).signum();
                let m = pts.len();
                let inside = (0..m).all(|i| {
                    let (p, r) = (pts[i], pts[(i + 1) % m]);
                    orient * ((r[0] - p[0]) * (q[1] - p[1]) - (r[1] - p[1]) * (q[0] - p[0])) >= 0.0
                });
                if inside {
                    return Ok(height);
                }
                Ok((0..m)
                    .map(|i| segment_distance(x, &vertices[i], &vertices[(i + 1) % m]))
                    .fold(f64::INFINITY, f64::min))
            }
        }
    }

    pub fn measure(&self) -> Result<f64> {
        match self {
            Polytope::Segment { a, b } => Ok(norm(&sub(b, a))),
            Polytope::Polygon { vertices } => {
                let frame = polygon_frame(vertices)?;
                let p: Vec<[f64; 2]> = vertices.iter().map(|v| to_plane(v, &frame)).collect();
                Ok(polygon_area_2d(&p).abs())
            }
        }
    }

    /// Measure of the piece inside the closed ball, and whether the piece only
    /// touches the ball's boundary sphere.
    pub fn measure_in_ball(&self, ball: &Ball) -> Result<(f64, bool)> {
        match self {
            Polytope::Segment { a, b } => match segment_ball_interval(a, b, ball) {
                None => Ok((0.0, false)),
                Some((t0, t1)) => {
                    let len = (t1 - t0) * norm(&sub(b, a));
                    Ok((len, len <= 1e-6 * ball.radius))
                }
            },
            Polytope::Polygon { vertices } => {
                let frame = polygon_frame(vertices)?;
                let dist = dot(&sub(&ball.center, &frame.0), &frame.3);
                let rho2 = ball.radius * ball.radius - dist * dist;
                if rho2 < 0.0 {
                    return Ok((0.0, false));
                }
                let c = to_plane(&ball.center, &frame);
                let mut p: Vec<[f64; 2]> =
                    vertices.iter().map(|v| { let q = to_plane(v, &frame); [q[0] - c[0], q[1] - c[1]] }).collect();
                if polygon_area_2d(&p) < 0.0 {
                    p.reverse();
                }
                let rho = rho2.sqrt();
                let m = p.len();
                let area: f64 = (0..m).map(|i| triangle_disc_area(p[i], p[(i + 1) % m], rho)).sum();
                let area = area.max(0.0);
                let touching = area <= 1e-12 * ball.radius * ball.radius
                    && (rho <= 1e-9 * ball.radius || p.iter().any(|q| (q[0] * q[0] + q[1] * q[1]).sqrt() <= rho * (1.0 + 1e-12)));
                Ok((area, touching))
            }
        }
    }

    /// Quadrature nodes and weights on the piece restricted to the closed ball
    /// (the whole piece when `ball` is `None`).
    pub fn quadrature(&self, ball: Option<&Ball>, resolution: usize) -> Result<Vec<(Vec<f64>, f64)>> {
        match self {
            Polytope::Segment { a, b } => {
                let (t0, t1) = match ball {
                    Some(ball) => match segment_ball_interval(a, b, ball) {
                        Some(iv) => iv,
                        None => return Ok(Vec::new()),
                    },
                    None => (0.0, 1.0),
                };
                let d = sub(b, a);
                let len = norm(&d);
                let panels = resolution.max(1);
                let h = (t1 - t0) / panels as f64;
                let mut out = Vec::with_capacity(panels * GAUSS5.len());
                for k in 0..panels {
                    let mid = t0 + (k as f64 + 0.5) * h;
                    for (x, w) in GAUSS5 {
                        out.push((axpy(a, mid + 0.5 * h * x, &d), 0.5 * h * w * len));
                    }
                }
                Ok(out)
            }
            Polytope::Polygon { vertices } => {
                let frame = polygon_frame(vertices)?;
                let p: Vec<[f64; 2]> = vertices.iter().map(|v| to_plane(v, &frame)).collect();
                let orient = polygon_area_2d(&p).signum();
                let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                for q in &p {
                    for k in 0..2 {
                        lo[k] = lo[k].min(q[k]);
                        hi[k] = hi[k].max(q[k]);
                    }
                }
                let m = p.len();
                let inside_polygon = |q: [f64; 2]| {
                    (0..m).all(|i| {
                        let (a, b) = (p[i], p[(i + 1) % m]);
                        orient * ((b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])) >= 0.0
                    })
                };
                let res = resolution.max(1);
                let h = [(hi[0] - lo[0]) / res as f64, (hi[1] - lo[1]) / res as f64];
                let mut pts = Vec::new();
                for i in 0..res {
                    for j in 0..res {
                        let q = [lo[0] + (i as f64 + 0.5) * h[0], lo[1] + (j as f64 + 0.5) * h[1]];
                        if !inside_polygon(q) {
                            continue;
                        }
                        let y = from_plane(q, &frame);
                        if ball.is_none_or(|b| b.contains(&y)) {
                            pts.push(y);
                        }
                    }
                }
                if pts.is_empty() {
                    return Ok(Vec::new());
                }
                // weights rescaled so the node count reproduces the exact area
                let area = match ball {
                    Some(b) => self.measure_in_ball(b)?.0,
                    None => self.measure()?,
                };
                let w = area / pts.len() as f64;
                Ok(pts.into_iter().map(|y| (y, w)).collect())
            }
        }
    }
}

/// A singular piece `density * H^{n-1}` restricted to a polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularPiece {
    pub geometry: Polytope,
    /// Unit normal, oriented from the piece's "minus" side to its "plus" side.
    pub normal: Vec<f64>,
    /// W-valued surface density as a polynomial in the ambient coordinates.
    pub density: PolynomialField,
}

impl SingularPiece {
    fn density_is_constant(&self) -> bool {
        self.density.degree().is_none_or(|d| d == 0)
    }

    /// `int_{piece in B} |density| dH^{n-1}` and the boundary-touch flag.
    pub fn variation_in_ball(&self, ball: &Ball) -> Result<(f64, bool)> {
        let (m, touching) = self.geometry.measure_in_ball(ball)?;
        if m == 0.0 {
            return Ok((0.0, touching));
        }
        if self.density_is_constant() {
            let d = self.density.eval(&ball.center);
            return Ok((m * norm(&d), touching));
        }
        let total = self
            .geometry
            .quadrature(Some(ball), 256)?
            .iter()
            .map(|(y, w)| w * norm(&self.density.eval(y)))
            .sum();
        Ok((total, touching))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variation {
    pub absolutely_continuous: f64,
    pub singular: f64,
    /// Some singular piece meets the ball only on its boundary sphere.
    pub touches_boundary: bool,
}

impl Variation {
    pub fn total(&self) -> f64 {
        self.absolutely_continuous + self.singular
    }
}

/// `Au` split into its absolutely continuous density (sampled on a grid) and
/// singular pieces on interfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureField {
    pub ac_density: GridField,
    pub singular: Vec<SingularPiece>,
}

impl MeasureField {
    /// Singular part of the total variation in the closed ball.
    pub fn singular_variation(&self, ball: &Ball) -> Result<(f64, bool)> {
        let mut total = 0.0;
        let mut touching = false;
        for piece in &self.singular {
            let (v, t) = piece.variation_in_ball(ball)?;
            total += v;
            touching |= t;
        }
        Ok((total, touching))
    }

    /// `|Au|(closed ball)`: grid quadrature of the density plus surface integrals.
    pub fn total_variation(&self, ball: &Ball) -> Result<Variation> {
        let grid = self.ac_density.grid();
        let cells = grid.cells_in_ball(&ball.center, ball.radius);
        let ac: f64 = cells.iter().map(|&c| norm(self.ac_density.value(c))).sum::<f64>() * grid.cell_volume();
        let (singular, touches_boundary) = self.singular_variation(ball)?;
        Ok(Variation { absolutely_continuous: ac, singular, touches_boundary })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances_to_pieces() {
        let seg = Polytope::Segment { a: vec![0.0, 0.0], b: vec![2.0, 0.0] };
        assert_eq!(seg.distance(&[1.0, 0.5]).unwrap(), 0.5);
        assert_eq!(seg.distance(&[3.0, 0.0]).unwrap(), 1.0);
        let sq = Polytope::Polygon {
            vertices: vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]],
        };
        assert!((sq.distance(&[0.5, 0.5, -0.3]).unwrap() - 0.3).abs() < 1e-15);
        assert!((sq.distance(&[2.0, 0.5, 0.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chord_lengths() {
        let seg = Polytope::Segment { a: vec![0.0, -5.0], b: vec![0.0, 5.0] };
        let ball = Ball::new(vec![0.3, 1.0], 0.5).unwrap();
        let (len, touching) = seg.measure_in_ball(&ball).unwrap();
        assert!((len - 2.0 * (0.25f64 - 0.09).sqrt()).abs() < 1e-12);
        assert!(!touching);
        let tangent = Ball::new(vec![0.5, 0.0], 0.5).unwrap();
        let (len, touching) = seg.measure_in_ball(&tangent).unwrap();
        assert!(len < 1e-7 && touching);
        let far = Ball::new(vec![2.0, 0.0], 0.5).unwrap();
        assert_eq!(seg.measure_in_ball(&far).unwrap(), (0.0, false));
    }

    #[test]
    fn polygon_disc_areas() {
        let square = Polytope::Polygon {
            vertices: vec![vec![-2.0, -2.0, 0.0], vec![2.0, -2.0, 0.0], vec![2.0, 2.0, 0.0], vec![-2.0, 2.0, 0.0]],
        };
        assert!((square.measure().unwrap() - 16.0).abs() < 1e-12);
        // plane at distance 0.6 from the center of a unit ball: disc of radius 0.8
        let ball = Ball::new(vec![0.0, 0.0, 0.6], 1.0).unwrap();
        let (a, _) = square.measure_in_ball(&ball).unwrap();
        assert!((a - std::f64::consts::PI * 0.64).abs() < 1e-12);
        // half-plane cut: disc centred on an edge
        let half = Polytope::Polygon {
            vertices: vec![vec![0.0, -2.0, 0.0], vec![2.0, -2.0, 0.0], vec![2.0, 2.0, 0.0], vec![0.0, 2.0, 0.0]],
        };
        let (a, _) = half.measure_in_ball(&Ball::unit(3)).unwrap();
        assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        // small square fully inside
        let small = Polytope::Polygon {
            vertices: vec![vec![0.1, 0.1, 0.0], vec![0.3, 0.1, 0.0], vec![0.3, 0.3, 0.0], vec![0.1, 0.3, 0.0]],
        };
        assert!((small.measure_in_ball(&Ball::unit(3)).unwrap().0 - 0.04).abs() < 1e-14);
    }

    #[test]
    fn segment_quadrature_integrates_polynomials() {
        let seg = Polytope::Segment { a: vec![0.0, 0.0], b: vec![3.0, 4.0] };
        let q = seg.quadrature(None, 4).unwrap();
        let total: f64 = q.iter().map(|(y, w)| w * y[0] * y[0]).sum();
        // int_0^5 (3 s / 5)^2 ds = 9/25 * 125/3 = 15
        assert!((total - 15.0).abs() < 1e-12);
    }
}
