//! Deterministic test fields with known structure: band-limited periodic
//! fields, piecewise null-space fields with jump interfaces, polynomials, and
//! mollifications of these.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ballcalc::{unit_ball_volume, Ball, BallQuadrature};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, GridField};
use crate::measure::{MeasureField, Polytope, SingularPiece};
use crate::operator::Operator;
use crate::poly::{apply_to_polynomial, MultiIndex, PolynomialField};
use crate::rng::SeedStream;

/// Tolerance for region membership tests.
const REGION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub component: usize,
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

pub fn polynomial_from_terms(n: usize, dim: usize, terms: &[TermSpec]) -> Result<PolynomialField> {
    let mut p = PolynomialField::zero(n, dim);
    for t in terms {
        if t.component >= dim || t.exponents.len() != n {
            return Err(Error::Input(format!(
                "term {:?} does not fit a polynomial R^{n} -> R^{dim}",
                t
            )));
        }
        p.add_term(t.component, MultiIndex(t.exponents.clone()), t.coeff);
    }
    Ok(p)
}

pub fn terms_of(p: &PolynomialField) -> Vec<TermSpec> {
    p.terms().map(|(c, a, v)| TermSpec { component: c, exponents: a.0.clone(), coeff: v }).collect()
}

/// `{x : normal . x <= offset}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.offset
    }

    fn normalized(&self) -> (Vec<f64>, f64) {
        let len = self.normal.iter().map(|x| x * x).sum::<f64>().sqrt();
        (self.normal.iter().map(|x| x / len).collect(), self.offset / len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceSpec {
    /// Convex region as an intersection of half-spaces (within the domain box).
    pub region: Vec<HalfSpace>,
    /// Null-space element carried by the region.
    pub terms: Vec<TermSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    /// Random trigonometric polynomial, periodic on the domain box, with
    /// wavevectors `0 < |k| <= band` (in cycles per box) and coefficients
    /// uniform in `[-amplitude, amplitude] / |k|`.
    BandLimited { seed: u64, band: f64, amplitude: f64 },
    /// Null-space elements glued along hyperplane interfaces.
    PiecewiseKernel { pieces: Vec<PieceSpec> },
    Polynomial { terms: Vec<TermSpec> },
    /// Convolution of the inner field with the standard bump of radius `eps`.
    Mollified { inner: Box<FieldSpec>, eps: f64 },
}

/// A field specification together with its domain and sampling resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub spec: FieldSpec,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: usize,
    #[serde(default)]
    pub periodic: bool,
}

impl FieldConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(vec![self.resolution; self.lower.len()], self.lower.clone(), self.upper.clone(), self.periodic)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Mode {
    k: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

/// `u_c(x) = sum_k a_kc cos(2 pi k.(x - lower)/L) + b_kc sin(...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLimitedField {
    n: usize,
    dim: usize,
    lower: Vec<f64>,
    extent: Vec<f64>,
    modes: Vec<Mode>,
}

impl BandLimitedField {
    pub fn new(n: usize, dim: usize, lower: &[f64], upper: &[f64], seed: u64, band: f64, amplitude: f64) -> Self {
        let mut rng = SeedStream::new(seed).rng("band-limited");
        let kmax = band.floor() as i64;
        let mut modes = Vec::new();
        let mut k = vec![-kmax; n];
        if kmax >= 1 {
            loop {
                let first_nonzero = k.iter().find(|&&x| x != 0).copied();
                let norm = k.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
                if first_nonzero.is_some_and(|f| f > 0) && norm <= band + 1e-12 {
                    let scale = amplitude / norm;
                    let cos = (0..dim).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
                    let sin = (0..dim).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
                    modes.push(Mode { k: k.iter().map(|&x| x as f64).collect(), cos, sin });
                }
                let mut i = n;
                loop {
                    if i == 0 {
                        break;
                    }
                    i -= 1;
                    if k[i] < kmax {
                        k[i] += 1;
                        break;
                    }
                    k[i] = -kmax;
                    if i == 0 {
                        i = usize::MAX;
                        break;
                    }
                }
                if i == usize::MAX {
                    break;
                }
            }
        }
        Self {
            n,
            dim,
            lower: lower.to_vec(),
            extent: lower.iter().zip(upper).map(|(a, b)| b - a).collect(),
            modes,
        }
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    fn phase_rate(&self, mode: &Mode, j: usize) -> f64 {
        std::f64::consts::TAU * mode.k[j] / self.extent[j]
    }

    fn phase(&self, mode: &Mode, x: &[f64]) -> f64 {
        (0..self.n).map(|j| self.phase_rate(mode, j) * (x[j] - self.lower[j])).sum()
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.n);
        for mode in &self.modes {
            let (s, c) = self.phase(mode, x).sin_cos();
            for j in 0..self.n {
                let w = self.phase_rate(mode, j);
                for comp in 0..self.dim {
                    m[(comp, j)] += w * (-mode.cos[comp] * s + mode.sin[comp] * c);
                }
            }
        }
        m
    }

    /// Number of trigonometric coefficients; see [`Self::coefficient`].
    pub fn coefficient_count(&self) -> usize {
        self.modes.len() * self.dim * 2
    }

    /// Coefficient `index`, ordered by mode, then cosines before sines by component.
    pub fn coefficient(&self, index: usize) -> f64 {
        let per_mode = 2 * self.dim;
        let mode = &self.modes[index / per_mode];
        let r = index % per_mode;
        if r < self.dim {
            mode.cos[r]
        } else {
            mode.sin[r - self.dim]
        }
    }

    pub fn set_coefficient(&mut self, index: usize, value: f64) {
        let per_mode = 2 * self.dim;
        let dim = self.dim;
        let mode = &mut self.modes[index / per_mode];
        let r = index % per_mode;
        if r < dim {
            mode.cos[r] = value;
        } else {
            mode.sin[r - dim] = value;
        }
    }
}

impl Field for BandLimitedField {
    fn n(&self) -> usize {
        self.n
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for mode in &self.modes {
            let (s, c) = self.phase(mode, x).sin_cos();
            for comp in 0..self.dim {
                out[comp] += mode.cos[comp] * c + mode.sin[comp] * s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub region: Vec<HalfSpace>,
    pub kernel: PolynomialField,
}

impl Piece {
    fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.region.iter().all(|h| h.value(x) <= tol)
    }

    fn violation(&self, x: &[f64]) -> f64 {
        self.region.iter().map(|h| h.value(x).max(0.0)).sum()
    }
}

/// Null-space elements glued along hyperplanes; the first piece containing a
/// point decides its value.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseField {
    pub pieces: Vec<Piece>,
}

impl PiecewiseField {
    pub fn region(&self, x: &[f64]) -> usize {
        self.pieces
            .iter()
            .position(|p| p.contains(x, REGION_TOL))
            .unwrap_or_else(|| {
                (0..self.pieces.len())
                    .min_by(|&a, &b| self.pieces[a].violation(x).total_cmp(&self.pieces[b].violation(x)))
                    .unwrap_or(0)
            })
    }

    /// Two null-space elements separated by the hyperplane `normal . x = offset`;
    /// `minus` lives where `normal . x <= offset`.
    pub fn split(normal: &[f64], offset: f64, minus: PolynomialField, plus: PolynomialField) -> Self {
        let neg: Vec<f64> = normal.iter().map(|x| -x).collect();
        Self {
            pieces: vec![
                Piece { region: vec![HalfSpace { normal: normal.to_vec(), offset }], kernel: minus },
                Piece { region: vec![HalfSpace { normal: neg, offset: -offset }], kernel: plus },
            ],
        }
    }

    /// Jump interfaces clipped to the box, with surface densities
    /// `sum_k nu_k A_k (u_plus - u_minus)`.
    pub fn interfaces(&self, op: &Operator, lower: &[f64], upper: &[f64]) -> Result<Vec<SingularPiece>> {
        let n = lower.len();
        if !(n == 2 || n == 3) {
            return Err(Error::Input("jump interfaces are supported for n = 2 and n = 3".into()));
        }
        let mut out = Vec::new();
        for i in 0..self.pieces.len() {
            for j in i + 1..self.pieces.len() {
                for (hi, h_i) in self.pieces[i].region.iter().enumerate() {
                    for (hj, h_j) in self.pieces[j].region.iter().enumerate() {
                        let (a, b) = h_i.normalized();
                        let (c, d) = h_j.normalized();
                        let opposite = a.iter().zip(&c).all(|(x, y)| (x + y).abs() < 1e-12) && (b + d).abs() < 1e-12;
                        if !opposite {
                            continue;
                        }
                        let mut constraints: Vec<HalfSpace> = Vec::new();
                        for k in 0..n {
                            let mut e = vec![0.0; n];
                            e[k] = 1.0;
                            constraints.push(HalfSpace { normal: e.clone(), offset: upper[k] });
                            e[k] = -1.0;
                            constraints.push(HalfSpace { normal: e, offset: -lower[k] });
                        }
                        constraints.extend(self.pieces[i].region.iter().enumerate().filter(|(k, _)| *k != hi).map(|(_, h)| h.clone()));
                        constraints.extend(self.pieces[j].region.iter().enumerate().filter(|(k, _)| *k != hj).map(|(_, h)| h.clone()));
                        let scale = lower.iter().zip(upper).map(|(l, u)| l.abs().max(u.abs())).fold(1.0, f64::max) * 4.0;
                        let geometry = match clip_hyperplane(&a, b, &constraints, scale) {
                            Some(g) => g,
                            None => continue,
                        };
                        if geometry.measure()? <= 1e-14 {
                            continue;
                        }
                        let jump = self.pieces[j].kernel.sub(&self.pieces[i].kernel);
                        let density = map_values(&op.real_symbol(&a)?, &jump);
                        out.push(SingularPiece { geometry, normal: a.clone(), density });
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Field for PiecewiseField {
    fn n(&self) -> usize {
        self.pieces[0].kernel.n()
    }
    fn dim(&self) -> usize {
        self.pieces[0].kernel.dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.pieces[self.region(x)].kernel.eval_into(x, out)
    }
}

/// `y -> matrix * p(y)`.
fn map_values(matrix: &DMatrix<f64>, p: &PolynomialField) -> PolynomialField {
    let mut out = PolynomialField::zero(p.n(), matrix.nrows());
    for (c, alpha, v) in p.terms() {
        for w in 0..matrix.nrows() {
            let m = matrix[(w, c)];
            if m != 0.0 {
                out.add_term(w, alpha.clone(), m * v);
            }
        }
    }
    out
}

/// The hyperplane `normal . x = offset` (unit normal) intersected with the
/// half-spaces, as a segment (n = 2) or polygon (n = 3).
fn clip_hyperplane(normal: &[f64], offset: f64, constraints: &[HalfSpace], scale: f64) -> Option<Polytope> {
    let n = normal.len();
    let p0: Vec<f64> = normal.iter().map(|x| x * offset).collect();
    let at = |t: &[f64], dirs: &[Vec<f64>]| -> Vec<f64> {
        (0..n).map(|k| p0[k] + dirs.iter().zip(t).map(|(d, s)| d[k] * s).sum::<f64>()).collect()
    };
    if n == 2 {
        let d = vec![-normal[1], normal[0]];
        let (mut t0, mut t1) = (-scale, scale);
        for h in constraints {
            // h.normal . (p0 + t d) <= h.offset
            let slope: f64 = h.normal.iter().zip(&d).map(|(a, b)| a * b).sum();
            let base = h.value(&p0);
            if slope.abs() < 1e-15 {
                if base > REGION_TOL {
                    return None;
                }
                continue;
            }
            let t = -base / slope;
            if slope > 0.0 {
                t1 = t1.min(t);
            } else {
                t0 = t0.max(t);
            }
        }
        if t1 <= t0 {
            return None;
        }
        let dirs = [d];
        return Some(Polytope::Segment { a: at(&[t0], &dirs), b: at(&[t1], &dirs) });
    }
    // in-plane orthonormal frame
    let pick = (0..3).min_by(|&a, &b| normal[a].abs().total_cmp(&normal[b].abs())).unwrap();
    let mut e = [0.0; 3];
    e[pick] = 1.0;
    let proj: f64 = e.iter().zip(normal).map(|(a, b)| a * b).sum();
    let mut e1: Vec<f64> = e.iter().zip(normal).map(|(a, b)| a - proj * b).collect();
    let l = e1.iter().map(|x| x * x).sum::<f64>().sqrt();
    e1.iter_mut().for_each(|x| *x /= l);
    let e2 = vec![
        normal[1] * e1[2] - normal[2] * e1[1],
        normal[2] * e1[0] - normal[0] * e1[2],
        normal[0] * e1[1] - normal[1] * e1[0],
    ];
    let dirs = [e1, e2];
    let mut poly: Vec<Vec<f64>> =
        [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]].iter().map(|t| at(&[t[0] * scale, t[1] * scale], &dirs)).collect();
    for h in constraints {
        let mut next = Vec::new();
        for k in 0..poly.len() {
            let (p, q) = (&poly[k], &poly[(k + 1) % poly.len()]);
            let (vp, vq) = (h.value(p), h.value(q));
            if vp <= 0.0 {
                next.push(p.clone());
            }
            if (vp < 0.0 && vq > 0.0) || (vp > 0.0 && vq < 0.0) {
                let t = vp / (vp - vq);
                next.push(p.iter().zip(q).map(|(a, b)| a + t * (b - a)).collect());
            }
        }
        poly = next;
        if poly.len() < 3 {
            return None;
        }
    }
    Some(Polytope::Polygon { vertices: poly })
}

/// Normalization of the standard bump `exp(-1 / (1 - |z|^2))` on the unit ball of `R^n`.
pub fn bump_normalization(n: usize) -> f64 {
    let steps = 20_000;
    let h = 1.0 / steps as f64;
    let radial: f64 = (0..steps)
        .map(|i| {
            let r = (i as f64 + 0.5) * h;
            (-1.0 / (1.0 - r * r)).exp() * r.powi(n as i32 - 1)
        })
        .sum::<f64>()
        * h;
    1.0 / (n as f64 * unit_ball_volume(n) * radial)
}

fn bump(z2: f64) -> f64 {
    if z2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - z2)).exp()
    }
}

/// Mollification evaluated pointwise by quadrature of the inner field.
#[derive(Debug, Clone)]
pub struct MollifiedField {
    inner: Box<AnalyticField>,
    eps: f64,
    /// Offsets `z` in the ball of radius `eps`, bump weights (summing to 1), and
    /// the gradient weights `grad eta_eps(z) dz`.
    nodes: Vec<(Vec<f64>, f64, Vec<f64>)>,
}

impl MollifiedField {
    pub fn new(inner: AnalyticField, eps: f64, cells: usize) -> Self {
        let n = inner.n();
        let quad = BallQuadrature::aligned(&Ball::unit(n), cells);
        let c = bump_normalization(n) / eps.powi(n as i32);
        let mut nodes = Vec::with_capacity(quad.len());
        let mut total = 0.0;
        for z in &quad.points {
            let z2: f64 = z.iter().map(|x| x * x).sum();
            let b = bump(z2);
            total += b;
            let vol = quad.weight * eps.powi(n as i32);
            let dfac = if z2 < 1.0 { -2.0 / (1.0 - z2).powi(2) } else { 0.0 };
            let grad: Vec<f64> = z.iter().map(|x| c * b * dfac * x / eps * vol).collect();
            nodes.push((z.iter().map(|x| x * eps).collect(), b, grad));
        }
        nodes.iter_mut().for_each(|node| node.1 /= total);
        Self { inner: Box::new(inner), eps, nodes }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let (n, dim) = (self.inner.n(), self.inner.dim());
        let mut m = DMatrix::zeros(dim, n);
        let mut y = vec![0.0; n];
        let mut v = vec![0.0; dim];
        for (z, _, grad) in &self.nodes {
            for k in 0..n {
                y[k] = x[k] - z[k];
            }
            self.inner.eval_into(&y, &mut v);
            // d_j (u * eta)(x) = int u(x - z) d_j eta(z) dz
            for c in 0..dim {
                for j in 0..n {
                    m[(c, j)] += v[c] * grad[j];
                }
            }
        }
        m
    }
}

/// Pointwise-evaluable realization of a [`FieldSpec`].
#[derive(Debug, Clone)]
pub enum AnalyticField {
    BandLimited(BandLimitedField),
    Piecewise(PiecewiseField),
    Polynomial(PolynomialField),
    Mollified(MollifiedField),
}

impl AnalyticField {
    pub fn from_spec(spec: &FieldSpec, op: &Operator, lower: &[f64], upper: &[f64]) -> Result<Self> {
        let n = op.n();
        if lower.len() != n || upper.len() != n {
            return Err(Error::Dimension("domain box dimension differs from the operator's".into()));
        }
        match spec {
            FieldSpec::BandLimited { seed, band, amplitude } => {
                if !(*band >= 1.0) {
                    return Err(Error::Input(format!("band must be at least 1, got {band}")));
                }
                Ok(Self::BandLimited(BandLimitedField::new(n, op.dim_v(), lower, upper, *seed, *band, *amplitude)))
            }
            FieldSpec::Polynomial { terms } => Ok(Self::Polynomial(polynomial_from_terms(n, op.dim_v(), terms)?)),
            FieldSpec::PiecewiseKernel { pieces } => {
                if pieces.is_empty() {
                    return Err(Error::Input("piecewise field needs at least one piece".into()));
                }
                let mut out = Vec::with_capacity(pieces.len());
                for (i, p) in pieces.iter().enumerate() {
                    let kernel = polynomial_from_terms(n, op.dim_v(), &p.terms)?;
                    let residual = apply_to_polynomial(op, &kernel)?.coeff_max_norm();
                    if residual > 1e-10 * kernel.coeff_norm().max(1.0) {
                        return Err(Error::Input(format!(
                            "piece {i} is not in the null-space of {} (residual {residual:.3e})",
                            op.name()
                        )));
                    }
                    if p.region.iter().any(|h| h.normal.len() != n || h.normal.iter().all(|x| *x == 0.0)) {
                        return Err(Error::Input(format!("piece {i} has a malformed half-space")));
                    }
                    out.push(Piece { region: p.region.clone(), kernel });
                }
                Ok(Self::Piecewise(PiecewiseField { pieces: out }))
            }
            FieldSpec::Mollified { inner, eps } => {
                if !(*eps > 0.0) {
                    return Err(Error::Input("mollification radius must be positive".into()));
                }
                let inner = Self::from_spec(inner, op, lower, upper)?;
                Ok(Self::Mollified(MollifiedField::new(inner, *eps, 40)))
            }
        }
    }

    /// Index of the smooth region containing `x` (always 0 for smooth fields).
    pub fn region(&self, x: &[f64]) -> usize {
        match self {
            Self::Piecewise(p) => p.region(x),
            _ => 0,
        }
    }

    /// Jacobian of the smooth part at `x` (`dim x n`).
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            Self::BandLimited(b) => b.jacobian(x),
            Self::Polynomial(p) => p.jacobian(x),
            Self::Piecewise(p) => p.pieces[p.region(x)].kernel.jacobian(x),
            Self::Mollified(m) => m.jacobian(x),
        }
    }

    /// Absolutely continuous density of `Au` at `x`.
    pub fn ac_density(&self, op: &Operator, x: &[f64]) -> Vec<f64> {
        op.apply_to_gradient(&self.jacobian(x))
    }

    pub fn singular_pieces(&self, op: &Operator, lower: &[f64], upper: &[f64]) -> Result<Vec<SingularPiece>> {
        match self {
            Self::Piecewise(p) => p.interfaces(op, lower, upper),
            _ => Ok(Vec::new()),
        }
    }
}

impl Field for AnalyticField {
    fn n(&self) -> usize {
        match self {
            Self::BandLimited(b) => b.n(),
            Self::Piecewise(p) => p.n(),
            Self::Polynomial(p) => p.n(),
            Self::Mollified(m) => m.inner.n(),
        }
    }
    fn dim(&self) -> usize {
        match self {
            Self::BandLimited(b) => b.dim(),
            Self::Piecewise(p) => Field::dim(p),
            Self::Polynomial(p) => p.dim(),
            Self::Mollified(m) => m.inner.dim(),
        }
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::BandLimited(b) => b.eval_into(x, out),
            Self::Piecewise(p) => p.eval_into(x, out),
            Self::Polynomial(p) => p.eval_into(x, out),
            Self::Mollified(m) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut y = vec![0.0; x.len()];
                let mut v = vec![0.0; out.len()];
                for (z, w, _) in &m.nodes {
                    for k in 0..x.len() {
                        y[k] = x[k] - z[k];
                    }
                    m.inner.eval_into(&y, &mut v);
                    for (o, vi) in out.iter_mut().zip(&v) {
                        *o += w * vi;
                    }
                }
            }
        }
    }
}

/// A realized field: grid samples, the measure `Au`, and the analytic source.
#[derive(Debug, Clone)]
pub struct Realization {
    pub op: Operator,
    pub u: GridField,
    pub mu: MeasureField,
    pub field: AnalyticField,
}

/// Samples the field and assembles `Au`: the absolutely continuous density from
/// exact derivatives of the smooth parts, the singular part from interface jumps.
pub fn realize(cfg: &FieldConfig, op: &Operator) -> Result<Realization> {
    let grid = cfg.grid()?;
    let field = AnalyticField::from_spec(&cfg.spec, op, &cfg.lower, &cfg.upper)?;
    if let AnalyticField::Piecewise(p) = &field {
        check_partition(p, &grid)?;
    }
    let u = GridField::sample(&grid, &field);
    let ac = GridField::sample_fn(&grid, op.dim_w(), |x, out| out.copy_from_slice(&field.ac_density(op, x)));
    let singular = field.singular_pieces(op, &cfg.lower, &cfg.upper)?;
    Ok(Realization { op: op.clone(), u, mu: MeasureField { ac_density: ac, singular }, field })
}

fn check_partition(p: &PiecewiseField, grid: &Grid) -> Result<()> {
    for flat in 0..grid.len() {
        let x = grid.point(flat);
        let covering = p.pieces.iter().filter(|piece| piece.contains(&x, REGION_TOL)).count();
        let interior = p.pieces.iter().filter(|piece| piece.region.iter().all(|h| h.value(&x) < -1e-9)).count();
        if covering == 0 {
            return Err(Error::Input(format!("pieces do not cover the box at {x:?}")));
        }
        if interior > 1 {
            return Err(Error::Input(format!("pieces overlap at {x:?}")));
        }
    }
    Ok(())
}

/// Discrete standard bump of radius `eps` on a grid, weights summing to 1.
#[derive(Debug, Clone)]
pub struct MollifierStencil {
    grid: Grid,
    offsets: Vec<(Vec<isize>, f64)>,
}

impl MollifierStencil {
    pub fn new(grid: &Grid, eps: f64) -> Result<Self> {
        let h = grid.max_spacing();
        if eps < 2.0 * h {
            return Err(Error::Resolution(format!("eps = {eps} is below two grid cells ({})", 2.0 * h)));
        }
        let n = grid.n();
        let reach: Vec<isize> = (0..n).map(|k| (eps / grid.spacing(k)).ceil() as isize).collect();
        let mut offsets: Vec<(Vec<isize>, f64)> = Vec::new();
        let mut off = reach.iter().map(|r| -r).collect::<Vec<_>>();
        loop {
            let z2: f64 = (0..n).map(|k| (off[k] as f64 * grid.spacing(k) / eps).powi(2)).sum();
            let w = bump(z2);
            if w > 0.0 {
                offsets.push((off.clone(), w));
            }
            let mut k = n;
            let mut done = true;
            while k > 0 {
                k -= 1;
                if off[k] < reach[k] {
                    off[k] += 1;
                    done = false;
                    break;
                }
                off[k] = -reach[k];
            }
            if done {
                break;
            }
        }
        let total: f64 = offsets.iter().map(|s| s.1).sum();
        offsets.iter_mut().for_each(|s| s.1 /= total);
        Ok(Self { grid: grid.clone(), offsets })
    }

    /// Mollified value at cell `idx`. Periodic grids wrap; on boxes the
    /// stencil is truncated at the boundary and renormalized.
    pub fn apply_at(&self, u: &GridField, idx: &[usize], out: &mut [f64]) {
        let n = self.grid.n();
        let shape = self.grid.shape();
        let dim = u.dim();
        out.iter_mut().for_each(|a| *a = 0.0);
        let mut wsum = 0.0;
        let mut target = vec![0usize; n];
        'stencil: for (o, w) in &self.offsets {
            for k in 0..n {
                let t = idx[k] as isize + o[k];
                if self.grid.is_periodic() {
                    target[k] = t.rem_euclid(shape[k] as isize) as usize;
                } else if t < 0 || t >= shape[k] as isize {
                    continue 'stencil;
                } else {
                    target[k] = t as usize;
                }
            }
            let v = u.value_at(&target);
            for c in 0..dim {
                out[c] += w * v[c];
            }
            wsum += w;
        }
        out.iter_mut().for_each(|a| *a /= wsum);
    }
}

/// Discrete convolution with the standard bump of radius `eps`, weights
/// normalized to sum exactly to 1.
pub fn mollify(u: &GridField, eps: f64) -> Result<GridField> {
    let grid = u.grid();
    let stencil = MollifierStencil::new(grid, eps)?;
    let mut out = GridField::zeros(grid.clone(), u.dim());
    for flat in 0..grid.len() {
        let idx = grid.multi_index(flat);
        stencil.apply_at(u, &idx, out.value_mut(flat));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingReport {
    pub tests: usize,
    /// `|int u . A*phi - int phi d(Au)| / int |u| |A*phi|`, per test function.
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
}

/// Checks `int u . (A* phi) dx = int phi . d(Au)` for random bump test
/// functions `phi = w eta((y - c)/rho)` (half of them centred on interfaces),
/// where `A* phi = -sum_j A_j^T d_j phi`.
pub fn distributional_pairing_test(
    realization: &Realization,
    lower: &[f64],
    upper: &[f64],
    tests: usize,
    seed: u64,
) -> Result<PairingReport> {
    let op = &realization.op;
    let field = &realization.field;
    let n = op.n();
    let rho = 0.25 * lower.iter().zip(upper).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
    let mut rng = SeedStream::new(seed).rng("pairing");
    let anchors: Vec<Vec<f64>> = realization
        .mu
        .singular
        .iter()
        .flat_map(|p| p.geometry.quadrature(None, 8).unwrap_or_default().into_iter().map(|(y, _)| y))
        .filter(|y| (0..n).all(|k| y[k] - rho > lower[k] && y[k] + rho < upper[k]))
        .collect();
    let mut errors = Vec::with_capacity(tests);
    for t in 0..tests {
        let center: Vec<f64> = if t % 2 == 0 && !anchors.is_empty() {
            anchors[rng.gen_range(0..anchors.len())].clone()
        } else {
            (0..n).map(|k| rng.gen_range(lower[k] + rho..upper[k] - rho)).collect()
        };
        let w: Vec<f64> = (0..op.dim_w()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi = |y: &[f64]| -> (f64, Vec<f64>) {
            let z: Vec<f64> = y.iter().zip(&center).map(|(a, c)| (a - c) / rho).collect();
            let z2: f64 = z.iter().map(|x| x * x).sum();
            let b = bump(z2);
            let dfac = if z2 < 1.0 { -2.0 / (1.0 - z2).powi(2) } else { 0.0 };
            (b, z.iter().map(|x| b * dfac * x / rho).collect())
        };
        // A* phi = -sum_j A_j^T w d_j psi
        let adjoint = |grad: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; op.dim_v()];
            for j in 0..n {
                let a = op.coeff(j);
                for v in 0..op.dim_v() {
                    out[v] -= grad[j] * (0..op.dim_w()).map(|r| a[(r, v)] * w[r]).sum::<f64>();
                }
            }
            out
        };
        let lo: Vec<f64> = center.iter().map(|c| c - rho).collect();
        let hi: Vec<f64> = center.iter().map(|c| c + rho).collect();
        let base = if n == 2 { 64 } else { 20 };
        let mut uval = vec![0.0; op.dim_v()];
        let integrals = integrate_adaptive(&lo, &hi, base, 5, &|y| field.region(y), &mut |y| {
            let (b, grad) = phi(y);
            if b == 0.0 {
                return [0.0; 3];
            }
            field.eval_into(y, &mut uval);
            let adj = adjoint(&grad);
            let lhs: f64 = uval.iter().zip(&adj).map(|(a, b)| a * b).sum();
            let scale = uval.iter().map(|x| x * x).sum::<f64>().sqrt() * adj.iter().map(|x| x * x).sum::<f64>().sqrt();
            let ac = field.ac_density(op, y);
            let rhs: f64 = b * ac.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            [lhs, rhs, scale]
        });
        let mut rhs = integrals[1];
        for piece in &realization.mu.singular {
            for (y, wt) in piece.geometry.quadrature(None, 256)? {
                let (b, _) = phi(&y);
                if b > 0.0 {
                    let d = piece.density.eval(&y);
                    rhs += wt * b * d.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let scale = integrals[2].max(f64::MIN_POSITIVE);
        errors.push((integrals[0] - rhs).abs() / scale);
    }
    let max = errors.iter().copied().fold(0.0, f64::max);
    Ok(PairingReport { tests, relative_errors: errors, max_relative_error: max })
}

const GAUSS3: [(f64, f64); 3] =
    [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];

/// Integrates a vector integrand over a box: tensor Gauss on cells lying in a
/// single region, recursive bisection (midpoint rule at the finest level) on
/// cells cut by an interface.
fn integrate_adaptive<const K: usize>(
    lo: &[f64],
    hi: &[f64],
    base: usize,
    max_depth: u32,
    region: &dyn Fn(&[f64]) -> usize,
    f: &mut dyn FnMut(&[f64]) -> [f64; K],
) -> [f64; K] {
    let n = lo.len();
    let mut total = [0.0; K];
    let h: Vec<f64> = (0..n).map(|k| (hi[k] - lo[k]) / base as f64).collect();
    for flat in 0..base.pow(n as u32) {
        let mut rem = flat;
        let mut cell_lo = vec![0.0; n];
        for k in (0..n).rev() {
            cell_lo[k] = lo[k] + (rem % base) as f64 * h[k];
            rem /= base;
        }
        integrate_cell(&cell_lo, &h, max_depth, region, f, &mut total);
    }
    total
}

fn integrate_cell<const K: usize>(
    lo: &[f64],
    h: &[f64],
    depth: u32,
    region: &dyn Fn(&[f64]) -> usize,
    f: &mut dyn FnMut(&[f64]) -> [f64; K],
    total: &mut [f64; K],
) {
    let n = lo.len();
    let corners = 1usize << n;
    let center: Vec<f64> = (0..n).map(|k| lo[k] + 0.5 * h[k]).collect();
    let r0 = region(&center);
    let uniform = (0..corners).all(|c| {
        let p: Vec<f64> = (0..n).map(|k| lo[k] + if c >> k & 1 == 1 { h[k] } else { 0.0 }).collect();
        region(&p) == r0
    });
    let vol: f64 = h.iter().product();
    if uniform {
        let mut idx = vec![0usize; n];
        loop {
            let mut y = vec![0.0; n];
            let mut w = vol;
            for k in 0..n {
                let (x, wk) = GAUSS3[idx[k]];
                y[k] = lo[k] + 0.5 * h[k] * (1.0 + x);
                w *= 0.5 * wk;
            }
            let v = f(&y);
            for i in 0..K {
                total[i] += w * v[i];
            }
            let mut k = 0;
            loop {
                if k == n {
                    return;
                }
                idx[k] += 1;
                if idx[k] < 3 {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
    if depth == 0 {
        let v = f(&center);
        for i in 0..K {
            total[i] += vol * v[i];
        }
        return;
    }
    let half: Vec<f64> = h.iter().map(|x| 0.5 * x).collect();
    for c in 0..corners {
        let sub_lo: Vec<f64> = (0..n).map(|k| lo[k] + if c >> k & 1 == 1 { half[k] } else { 0.0 }).collect();
        integrate_cell(&sub_lo, &half, depth - 1, region, f, total);
    }
}

/// Two random null-space elements separated by a random hyperplane through
/// the central part of the box.
pub fn random_kernel_split(op: &Operator, seed: u64, lower: &[f64], upper: &[f64]) -> Result<FieldSpec> {
    let (_, kernel) = crate::nullspace::require_fdn(op, crate::nullspace::DEFAULT_DEGREE_CAP)?;
    let n = op.n();
    let mut rng = SeedStream::new(seed).rng("kernel-split");
    let mut normal: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let len = normal.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
    normal.iter_mut().for_each(|x| *x /= len);
    let point: Vec<f64> = lower.iter().zip(upper).map(|(a, b)| 0.5 * (a + b) + 0.2 * (b - a) * rng.gen_range(-1.0..1.0)).collect();
    let offset: f64 = normal.iter().zip(&point).map(|(a, b)| a * b).sum();
    let mut element = || {
        let w: Vec<f64> = kernel.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        terms_of(&PolynomialField::linear_combination(n, op.dim_v(), &w, &kernel))
    };
    let (minus, plus) = (element(), element());
    Ok(FieldSpec::PiecewiseKernel {
        pieces: vec![
            PieceSpec { region: vec![HalfSpace { normal: normal.clone(), offset }], terms: minus },
            PieceSpec { region: vec![HalfSpace { normal: normal.iter().map(|x| -x).collect(), offset: -offset }], terms: plus },
        ],
    })
}

/// A standard two-piece rigid field for the symmetric gradient in the plane:
/// `minus` on `x1 <= offset`, `plus = minus + jump` beyond, where the jump is a
/// rigid motion `t + s (-x2, x1)`.
pub fn rigid_split_2d(offset: f64, base: [f64; 3], jump: [f64; 3]) -> FieldSpec {
    let rigid = |c: [f64; 3]| {
        vec![
            TermSpec { component: 0, exponents: vec![0, 0], coeff: c[0] },
            TermSpec { component: 1, exponents: vec![0, 0], coeff: c[1] },
            TermSpec { component: 0, exponents: vec![0, 1], coeff: -c[2] },
            TermSpec { component: 1, exponents: vec![1, 0], coeff: c[2] },
        ]
    };
    let plus = [base[0] + jump[0], base[1] + jump[1], base[2] + jump[2]];
    FieldSpec::PiecewiseKernel {
        pieces: vec![
            PieceSpec { region: vec![HalfSpace { normal: vec![1.0, 0.0], offset }], terms: rigid(base) },
            PieceSpec { region: vec![HalfSpace { normal: vec![-1.0, 0.0], offset: -offset }], terms: rigid(plus) },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eps_op() -> Operator {
        Operator::symmetric_gradient(2).unwrap()
    }

    fn cfg(spec: FieldSpec, res: usize) -> FieldConfig {
        FieldConfig { spec, lower: vec![-1.0, -1.0], upper: vec![1.0, 1.0], resolution: res, periodic: false }
    }

    #[test]
    fn two_rigid_motions_jump_density() {
        // jump (0, 1) across x1 = 0 with normal (1, 0)
        let spec = rigid_split_2d(0.0, [0.2, -0.1, 0.3], [0.0, 1.0, 0.0]);
        let r = realize(&cfg(spec, 32), &eps_op()).unwrap();
        assert_eq!(r.mu.singular.len(), 1);
        let piece = &r.mu.singular[0];
        assert_eq!(piece.normal, vec![1.0, 0.0]);
        let d = piece.density.eval(&[0.0, 0.4]);
        assert_eq!(d, vec![0.0, 0.5, 0.5, 0.0]);
        assert!((piece.geometry.measure().unwrap() - 2.0).abs() < 1e-12);
        assert!(r.mu.ac_density.data().iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn kernel_polynomial_has_zero_measure() {
        let spec = FieldSpec::Polynomial {
            terms: vec![
                TermSpec { component: 0, exponents: vec![0, 1], coeff: -1.0 },
                TermSpec { component: 1, exponents: vec![1, 0], coeff: 1.0 },
            ],
        };
        let r = realize(&cfg(spec, 16), &eps_op()).unwrap();
        assert!(r.mu.singular.is_empty());
        assert!(r.mu.ac_density.data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn band_limited_is_deterministic_and_smooth() {
        let spec = FieldSpec::BandLimited { seed: 4, band: 2.0, amplitude: 1.0 };
        let a = realize(&cfg(spec.clone(), 16), &eps_op()).unwrap();
        let b = realize(&cfg(spec, 16), &eps_op()).unwrap();
        assert_eq!(a.u, b.u);
        assert!(a.mu.singular.is_empty());
        // Jacobian against central differences of the analytic field
        let x = [0.31, -0.22];
        let jac = a.field.jacobian(&x);
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (a.field.eval(&xp), a.field.eval(&xm));
            for c in 0..2 {
                assert!((jac[(c, j)] - (fp[c] - fm[c]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn non_kernel_piece_is_rejected() {
        let spec = FieldSpec::PiecewiseKernel {
            pieces: vec![PieceSpec {
                region: vec![],
                terms: vec![TermSpec { component: 0, exponents: vec![1, 0], coeff: 1.0 }],
            }],
        };
        assert!(matches!(realize(&cfg(spec, 8), &eps_op()), Err(Error::Input(_))));
    }

    #[test]
    fn gaps_are_rejected() {
        let spec = FieldSpec::PiecewiseKernel {
            pieces: vec![PieceSpec { region: vec![HalfSpace { normal: vec![1.0, 0.0], offset: 0.0 }], terms: vec![] }],
        };
        assert!(realize(&cfg(spec, 8), &eps_op()).is_err());
    }

    #[test]
    fn mollify_preserves_constants_and_affine_interior() {
        let grid = Grid::cube(2, 40, -1.0, 1.0, false).unwrap();
        let c = GridField::sample_fn(&grid, 1, |_, out| out[0] = 3.25);
        let m = mollify(&c, 0.2).unwrap();
        assert!(m.data().iter().all(|x| (x - 3.25).abs() < 1e-12));
        let a = GridField::sample_fn(&grid, 2, |x, out| {
            out[0] = 1.0 + 2.0 * x[0] - x[1];
            out[1] = 0.5 * x[1];
        });
        let m = mollify(&a, 0.2).unwrap();
        for flat in 0..grid.len() {
            let x = grid.point(flat);
            if x.iter().all(|v| v.abs() < 0.75) {
                for k in 0..2 {
                    assert!((m.value(flat)[k] - a.value(flat)[k]).abs() < 1e-12);
                }
            }
        }
        assert!(matches!(mollify(&a, 0.05), Err(Error::Resolution(_))));
    }

    #[test]
    fn mollify_commutes_with_cell_shifts() {
        let grid = Grid::cube(2, 32, 0.0, 1.0, true).unwrap();
        let f = BandLimitedField::new(2, 1, &[0.0, 0.0], &[1.0, 1.0], 9, 3.0, 1.0);
        let u = GridField::sample(&grid, &f);
        let a = mollify(&u.roll(&[3, -5]), 0.1).unwrap();
        let b = mollify(&u, 0.1).unwrap().roll(&[3, -5]);
        assert_eq!(a, b);
    }

    #[test]
    fn mollified_step_transition_width() {
        // 1-D profile: the transition stays inside |x1| < eps and is antisymmetric about 1/2
        let grid = Grid::new(vec![200, 4], vec![-1.0, 0.0], vec![1.0, 0.04], true).unwrap();
        let u = GridField::sample_fn(&grid, 1, |x, out| out[0] = if x[0] > 0.0 { 1.0 } else { 0.0 });
        let eps = 0.1;
        let m = mollify(&u, eps).unwrap();
        for i in 0..200 {
            let x = grid.coordinate(0, i);
            let v = m.value_at(&[i, 1])[0];
            if x.abs() > 0.5 {
                continue; // periodic wrap creates a second step at the box edge
            }
            if x < -eps {
                assert!(v.abs() < 1e-14);
            } else if x > eps {
                assert!((v - 1.0).abs() < 1e-14);
            } else {
                let mirror = m.value_at(&[199 - i, 1])[0];
                assert!((v + mirror - 1.0).abs() < 1e-12);
                assert!(v > 0.0 && v < 1.0 || x.abs() > 0.9 * eps);
            }
        }
    }

    #[test]
    fn pairing_holds_for_piecewise_rigid_fields() {
        let spec = rigid_split_2d(0.1, [0.2, -0.1, 0.3], [0.5, 1.0, -0.7]);
        let r = realize(&cfg(spec, 32), &eps_op()).unwrap();
        let report = distributional_pairing_test(&r, &[-1.0, -1.0], &[1.0, 1.0], 20, 11).unwrap();
        assert!(report.max_relative_error < 1e-3, "{report:?}");
    }

    #[test]
    fn pairing_holds_for_band_limited_fields() {
        let spec = FieldSpec::BandLimited { seed: 2, band: 2.0, amplitude: 1.0 };
        let r = realize(&cfg(spec, 16), &eps_op()).unwrap();
        let report = distributional_pairing_test(&r, &[-1.0, -1.0], &[1.0, 1.0], 6, 3).unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn random_splits_realize() {
        for seed in 0..5 {
            let spec = random_kernel_split(&eps_op(), seed, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
            let r = realize(&cfg(spec, 16), &eps_op()).unwrap();
            assert_eq!(r.mu.singular.len(), 1);
        }
    }

    #[test]
    fn three_dimensional_split_has_polygon_interface() {
        let op = Operator::symmetric_gradient(3).unwrap();
        let minus = PolynomialField::zero(3, 3);
        let plus = PolynomialField::from_terms(3, 3, &[(2, &[0, 0, 0], 1.0)]).unwrap();
        let pw = PiecewiseField::split(&[0.0, 0.0, 1.0], 0.25, minus, plus);
        let pieces = pw.interfaces(&op, &[-1.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(pieces.len(), 1);
        assert!((pieces[0].geometry.measure().unwrap() - 4.0).abs() < 1e-12);
    }
}
