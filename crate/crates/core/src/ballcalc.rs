//! Exact polynomial integration over balls, orthonormal null-space bases, and
//! L2 projections onto the null-space.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, GridField};
use crate::poly::{monomials_up_to, MultiIndex, PolynomialField};
use crate::rng::SeedStream;

/// Minimum number of cells across a ball diameter for grid quadrature.
pub const MIN_CELLS_PER_DIAMETER: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Input(format!("ball radius must be positive, got {radius}")));
        }
        if center.is_empty() || center.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("ball center must be a finite vector".into()));
        }
        Ok(Self { center, radius })
    }

    pub fn unit(n: usize) -> Self {
        Self { center: vec![0.0; n], radius: 1.0 }
    }

    pub fn n(&self) -> usize {
        self.center.len()
    }

    pub fn volume(&self) -> f64 {
        unit_ball_volume(self.n()) * self.radius.powi(self.n() as i32)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let d2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        d2 <= self.radius * self.radius
    }
}

/// `Gamma(k / 2)` for positive integers `k`.
pub fn gamma_half(k: u32) -> f64 {
    assert!(k > 0, "Gamma has a pole at 0");
    if k.is_multiple_of(2) {
        // Gamma(m) = (m-1)!
        (1..k / 2).fold(1.0, |acc, i| acc * i as f64)
    } else {
        // Gamma(m + 1/2) = sqrt(pi) * prod_{i<m} (i + 1/2)
        (0..k / 2).fold(std::f64::consts::PI.sqrt(), |acc, i| acc * (i as f64 + 0.5))
    }
}

pub fn unit_ball_volume(n: usize) -> f64 {
    std::f64::consts::PI.powf(n as f64 / 2.0) / gamma_half(n as u32 + 2)
}

/// `int_{B_r(x)} (y - x)^alpha dy`: zero when some exponent is odd, otherwise
/// `2 prod_i Gamma((a_i + 1)/2) / ((|a| + n) Gamma((|a| + n)/2)) r^{n + |a|}`.
pub fn ball_monomial_moment(alpha: &MultiIndex, ball: &Ball) -> f64 {
    let n = alpha.n();
    if alpha.0.iter().any(|a| a % 2 == 1) {
        return 0.0;
    }
    let deg = alpha.degree();
    let num: f64 = alpha.0.iter().map(|&a| gamma_half(a + 1)).product();
    let total = deg + n as u32;
    2.0 * num / (total as f64 * gamma_half(total)) * ball.radius.powi(total as i32)
}

/// `int_B p_a q_b dy` for components `a` of `p` and `b` of `q`.
pub fn ball_component_inner(p: &PolynomialField, a: usize, q: &PolynomialField, b: usize, ball: &Ball) -> f64 {
    let prod = p.component_product(a, q, b).translate(&ball.center);
    prod.terms().map(|(_, alpha, v)| v * ball_monomial_moment(alpha, ball)).sum()
}

/// Exact L2 inner product over the ball.
pub fn ball_inner(p: &PolynomialField, q: &PolynomialField, ball: &Ball) -> f64 {
    (0..p.dim()).map(|c| ball_component_inner(p, c, q, c, ball)).sum()
}

pub fn ball_integral(p: &PolynomialField, component: usize, ball: &Ball) -> f64 {
    p.translate(&ball.center).terms().filter(|(c, _, _)| *c == component).map(|(_, a, v)| v * ball_monomial_moment(a, ball)).sum()
}

/// L2(ball)-orthonormal basis of the span of a set of polynomials.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    pub ball: Ball,
    pub elements: Vec<PolynomialField>,
    /// Ratio of largest to smallest Gram eigenvalue of the input basis.
    pub gram_conditioning: f64,
}

/// Orthonormalizes via the symmetric eigendecomposition `G = Q L Q^T` of the
/// Gram matrix: `e_k = sum_i Q_ik b_i / sqrt(L_k)`.
pub fn orthonormalize(basis: &[PolynomialField], ball: &Ball) -> Result<ProjectionBasis> {
    let k = basis.len();
    if k == 0 {
        return Ok(ProjectionBasis { ball: ball.clone(), elements: Vec::new(), gram_conditioning: 1.0 });
    }
    let gram = DMatrix::from_fn(k, k, |i, j| ball_inner(&basis[i], &basis[j], ball));
    let (weights, cond) = inverse_sqrt_factor(gram)?;
    let (n, dim) = (basis[0].n(), basis[0].dim());
    let elements = (0..k)
        .map(|col| {
            let w: Vec<f64> = weights.column(col).iter().copied().collect();
            PolynomialField::linear_combination(n, dim, &w, basis)
        })
        .collect();
    Ok(ProjectionBasis { ball: ball.clone(), elements, gram_conditioning: cond })
}

/// For SPD `g`, returns `Q L^{-1/2}` and the condition number.
fn inverse_sqrt_factor(g: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = SymmetricEigen::new(g);
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(max > 0.0) || min <= 1e-13 * max {
        return Err(Error::Degenerate(format!("Gram matrix numerically singular (eigenvalues in [{min:.3e}, {max:.3e}])")));
    }
    let mut w = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        w.column_mut(j).scale_mut(1.0 / lambda.sqrt());
    }
    Ok((w, max / min))
}

impl ProjectionBasis {
    pub fn orthonormality_residual(&self) -> f64 {
        let k = self.elements.len();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let g = ball_inner(&self.elements[i], &self.elements[j], &self.ball);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Exact projection of a polynomial.
    pub fn project_polynomial(&self, p: &PolynomialField) -> PolynomialField {
        let coeffs: Vec<f64> = self.elements.iter().map(|e| ball_inner(p, e, &self.ball)).collect();
        PolynomialField::linear_combination(p.n(), p.dim(), &coeffs, &self.elements)
    }

    /// `sup_y (sum_j |e_j(y)|^2)^{1/2}` over sample points of the closed ball.
    /// Invariant under orthogonal changes of the basis.
    pub fn sup_bound(&self, samples: &[Vec<f64>]) -> f64 {
        samples
            .iter()
            .map(|y| {
                self.elements.iter().map(|e| e.eval(y).iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `max_j sup_y |e_j(y)|` over sample points.
    pub fn max_element_sup(&self, samples: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for y in samples {
            for e in &self.elements {
                worst = worst.max(e.eval(y).iter().map(|x| x * x).sum::<f64>().sqrt());
            }
        }
        worst
    }
}

/// Midpoint quadrature nodes: cell centers inside a ball, equal weights.
#[derive(Debug, Clone)]
pub struct BallQuadrature {
    pub ball: Ball,
    pub points: Vec<Vec<f64>>,
    /// Grid cell indices of the points when built from a grid.
    pub cells: Vec<usize>,
    pub weight: f64,
}

impl BallQuadrature {
    /// Cell centers of `grid` inside `ball`. Requires the ball inside the box
    /// and at least `min_cells` cells across its diameter on every axis.
    pub fn on_grid(grid: &Grid, ball: &Ball, min_cells: f64) -> Result<Self> {
        if !grid.contains_ball(&ball.center, ball.radius) {
            return Err(Error::Domain(format!("ball {:?}, r = {} leaves the grid box", ball.center, ball.radius)));
        }
        let across = 2.0 * ball.radius / grid.max_spacing();
        if across < min_cells {
            return Err(Error::Resolution(format!(
                "only {across:.1} cells across the ball diameter, need {min_cells}"
            )));
        }
        let cells = grid.cells_in_ball(&ball.center, ball.radius);
        let points = cells.iter().map(|&i| grid.point(i)).collect();
        Ok(Self { ball: ball.clone(), points, cells, weight: grid.cell_volume() })
    }

    /// A grid aligned with the ball: `cells` cells across the diameter of the
    /// bounding cube. Node positions scale exactly with the ball.
    pub fn aligned(ball: &Ball, cells: usize) -> Self {
        let n = ball.n();
        let h = 2.0 / cells as f64;
        let total = cells.pow(n as u32);
        let mut points = Vec::new();
        for flat in 0..total {
            let mut rem = flat;
            let mut z = vec![0.0; n];
            for k in (0..n).rev() {
                z[k] = -1.0 + ((rem % cells) as f64 + 0.5) * h;
                rem /= cells;
            }
            if z.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                points.push(z.iter().zip(&ball.center).map(|(a, c)| c + ball.radius * a).collect());
            }
        }
        let weight = (h * ball.radius).powi(n as i32);
        Self { ball: ball.clone(), points, cells: Vec::new(), weight }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weight * self.points.len() as f64
    }

    /// Values of a field at the nodes, node-major.
    pub fn sample<F: Field + ?Sized>(&self, f: &F) -> Vec<f64> {
        let dim = f.dim();
        let mut out = vec![0.0; self.points.len() * dim];
        for (p, chunk) in self.points.iter().zip(out.chunks_mut(dim)) {
            f.eval_into(p, chunk);
        }
        out
    }

    /// Values of a grid field at the nodes (requires a grid-built quadrature).
    pub fn gather(&self, u: &GridField) -> Vec<f64> {
        self.cells.iter().flat_map(|&c| u.value(c).iter().copied()).collect()
    }

    /// `(mean_B |v|^p)^{1/p}` of node-major values with `dim` components; `p = inf` gives the max.
    pub fn p_mean(&self, values: &[f64], dim: usize, p: f64) -> f64 {
        let norms = values.chunks(dim).map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt());
        if p.is_infinite() {
            return norms.fold(0.0, f64::max);
        }
        let count = values.len() / dim;
        (norms.map(|x| x.powf(p)).sum::<f64>() / count as f64).powf(1.0 / p)
    }
}

/// The L2 projection onto a polynomial span under the midpoint quadrature of
/// a [`BallQuadrature`]. The span's basis is re-orthonormalized against the
/// discrete inner product, so the discrete projection is exactly idempotent
/// and reproduces span elements.
#[derive(Debug, Clone)]
pub struct DiscreteProjection {
    pub basis: ProjectionBasis,
    dim: usize,
    /// Node-major values of the discretely orthonormal basis, one column per element.
    values: DMatrix<f64>,
    /// Coefficients of the discrete basis in terms of `basis.elements`.
    mixing: DMatrix<f64>,
    weight: f64,
}

impl DiscreteProjection {
    pub fn new(basis: &ProjectionBasis, quad: &BallQuadrature) -> Result<Self> {
        let k = basis.elements.len();
        let dim = basis.elements.first().map_or(1, |e| e.dim());
        let rows = quad.len() * dim;
        let mut raw = DMatrix::zeros(rows, k);
        for (j, e) in basis.elements.iter().enumerate() {
            let vals = quad.sample(e);
            raw.column_mut(j).copy_from_slice(&vals);
        }
        if k == 0 {
            return Ok(Self { basis: basis.clone(), dim, values: raw, mixing: DMatrix::zeros(0, 0), weight: quad.weight });
        }
        let gram = raw.transpose() * &raw * quad.weight;
        let (mixing, _) = inverse_sqrt_factor(gram)?;
        let values = &raw * &mixing;
        Ok(Self { basis: basis.clone(), dim, values, mixing, weight: quad.weight })
    }

    /// Projection coefficients against the discrete orthonormal basis.
    fn coefficients(&self, values: &[f64]) -> nalgebra::DVector<f64> {
        let v = nalgebra::DVector::from_column_slice(values);
        self.values.transpose() * v * self.weight
    }

    /// Projected values at the quadrature nodes.
    pub fn project_values(&self, values: &[f64]) -> Vec<f64> {
        if self.values.ncols() == 0 {
            return vec![0.0; values.len()];
        }
        let c = self.coefficients(values);
        (&self.values * c).iter().copied().collect()
    }

    /// The projection as a polynomial.
    pub fn project_to_polynomial(&self, values: &[f64]) -> PolynomialField {
        let ball = &self.basis.ball;
        if self.values.ncols() == 0 {
            return PolynomialField::zero(ball.n(), self.dim);
        }
        let c = self.coefficients(values);
        let w = &self.mixing * c;
        let w: Vec<f64> = w.iter().copied().collect();
        PolynomialField::linear_combination(ball.n(), self.dim, &w, &self.basis.elements)
    }
}

/// `sum_j <v, e_j> e_j` for a grid field, by midpoint quadrature over the
/// cells whose centers lie in the ball.
pub fn l2_project_grid(v: &GridField, pb: &ProjectionBasis) -> Result<PolynomialField> {
    let quad = BallQuadrature::on_grid(v.grid(), &pb.ball, MIN_CELLS_PER_DIAMETER)?;
    let proj = DiscreteProjection::new(pb, &quad)?;
    Ok(proj.project_to_polynomial(&quad.gather(v)))
}

/// Sample points for sup estimates on the closed ball: aligned-grid nodes plus
/// boundary points (both endpoints for `n = 1`).
pub fn sup_sample_points(ball: &Ball, cells: usize) -> Vec<Vec<f64>> {
    let n = ball.n();
    let mut pts = BallQuadrature::aligned(ball, cells).points;
    let dirs: Vec<Vec<f64>> = match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..1440)
            .map(|i| {
                let t = i as f64 * std::f64::consts::TAU / 1440.0;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            // Fibonacci lattice on the first two angular coordinates, remaining axes via Gaussian-free recursion
            let count = 4000;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let t = golden * i as f64;
                    let mut d = vec![0.0; n];
                    d[0] = rho * t.cos();
                    d[1] = rho * t.sin();
                    d[2] = z;
                    d
                })
                .collect()
        }
    };
    for d in dirs {
        pts.push(d.iter().zip(&ball.center).map(|(a, c)| c + ball.radius * a).collect());
    }
    pts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub ball: Ball,
    /// `max over trials of mean|pi v| / mean|v|`.
    pub constant: f64,
    pub ratios: Vec<f64>,
    /// `sup (sum_j |e_j|^2)^{1/2}` over the ball.
    pub basis_sup: f64,
    /// `basis_sup * r^{n/2}`, constant across radii.
    pub basis_sup_scaled: f64,
}

/// Empirical bound on `mean|pi_B v| / mean|v|` over trial fields, using an
/// aligned quadrature with `cells` cells across the diameter.
pub fn projection_stability_constant(
    kernel: &[PolynomialField],
    ball: &Ball,
    trials: &[&dyn Field],
    cells: usize,
) -> Result<StabilityReport> {
    let pb = orthonormalize(kernel, ball)?;
    let quad = BallQuadrature::aligned(ball, cells);
    let proj = DiscreteProjection::new(&pb, &quad)?;
    let mut ratios = Vec::with_capacity(trials.len());
    for f in trials {
        let dim = f.dim();
        let vals = quad.sample(*f);
        let denom = quad.p_mean(&vals, dim, 1.0);
        let num = quad.p_mean(&proj.project_values(&vals), dim, 1.0);
        ratios.push(if denom > 0.0 { num / denom } else { 0.0 });
    }
    let basis_sup = pb.sup_bound(&sup_sample_points(ball, cells));
    Ok(StabilityReport {
        ball: ball.clone(),
        constant: ratios.iter().copied().fold(0.0, f64::max),
        ratios,
        basis_sup,
        basis_sup_scaled: basis_sup * ball.radius.powf(ball.n() as f64 / 2.0),
    })
}

/// `sup_B |P| / mean_B |P|` for a polynomial (all components, Euclidean norm).
pub fn sup_to_mean_ratio(p: &PolynomialField, ball: &Ball, cells: usize) -> f64 {
    let quad = BallQuadrature::aligned(ball, cells);
    let mean = quad.p_mean(&quad.sample(p), p.dim(), 1.0);
    let sup = sup_sample_points(ball, cells)
        .iter()
        .map(|y| p.eval(y).iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    sup / mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEquivalenceReport {
    pub degree: u32,
    pub per_ball: Vec<f64>,
    pub constant: f64,
    /// `max/min - 1` over the per-ball constants.
    pub spread: f64,
}

/// Empirical constant in `sup_B |P| <= c mean_B |P|` over random scalar
/// polynomials of degree at most `l`. Trial coefficients are drawn in the
/// ball's normalized coordinates `z = (y - x)/r` and transported to each ball.
pub fn polynomial_norm_equivalence_constant(
    l: u32,
    n: usize,
    balls: &[Ball],
    trials: usize,
    cells: usize,
    seed: u64,
) -> Result<NormEquivalenceReport> {
    if balls.is_empty() || trials == 0 {
        return Err(Error::Input("need at least one ball and one trial".into()));
    }
    let mons = monomials_up_to(n, l);
    let mut rng = SeedStream::new(seed).rng("norm-equivalence");
    let unit_polys: Vec<PolynomialField> = (0..trials)
        .map(|_| {
            let coeffs: Vec<f64> = mons.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            PolynomialField::from_coefficient_vector(n, 1, &mons, &coeffs)
        })
        .collect();
    let mut per_ball = Vec::with_capacity(balls.len());
    for ball in balls {
        if ball.n() != n {
            return Err(Error::Dimension("ball dimension differs from n".into()));
        }
        let inv: Vec<f64> = ball.center.iter().map(|c| -c / ball.radius).collect();
        let c = unit_polys
            .iter()
            .filter(|p| !p.is_zero())
            .map(|p| sup_to_mean_ratio(&p.pullback(&inv, 1.0 / ball.radius), ball, cells))
            .fold(0.0, f64::max);
        per_ball.push(c);
    }
    let max = per_ball.iter().copied().fold(0.0, f64::max);
    let min = per_ball.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(NormEquivalenceReport { degree: l, per_ball, constant: max, spread: max / min - 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nullspace::kernel_basis_up_to;
    use crate::operator::Operator;
    #[test]
    fn gamma_values() {
        assert!((gamma_half(1) - std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert_eq!(gamma_half(2), 1.0);
        assert_eq!(gamma_half(8), 6.0);
        assert!((gamma_half(5) - 0.75 * std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn moments_in_the_plane() {
        let unit = Ball::unit(2);
        assert!((ball_monomial_moment(&MultiIndex(vec![0, 0]), &unit) - std::f64::consts::PI).abs() < 1e-15);
        let shifted = Ball::new(vec![3.0, -1.0], 2.0).unwrap();
        assert_eq!(ball_monomial_moment(&MultiIndex(vec![1, 0]), &shifted), 0.0);
        // polar oracle: int_0^1 int_0^{2pi} rho^2 cos^2 t rho dt drho = pi/4
        let polar: f64 = {
            let (nr, nt) = (2000, 2000);
            let mut s = 0.0;
            for i in 0..nr {
                let rho = (i as f64 + 0.5) / nr as f64;
                for k in 0..nt {
                    let t = (k as f64 + 0.5) * std::f64::consts::TAU / nt as f64;
                    s += rho.powi(3) * t.cos().powi(2);
                }
            }
            s / nr as f64 * std::f64::consts::TAU / nt as f64
        };
        let m = ball_monomial_moment(&MultiIndex(vec![2, 0]), &unit);
        assert!((m - std::f64::consts::FRAC_PI_4).abs() < 1e-14);
        assert!((m - polar).abs() < 1e-6);
    }

    fn radical_inverse(mut i: u64, base: u64) -> f64 {
        let (mut f, mut r) = (1.0, 0.0);
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    }

    #[test]
    fn moments_against_quasi_monte_carlo() {
        // Halton points pushed to the ball by a measure-preserving polar map,
        // 10^6 samples, relative error <= 1e-3
        const PRIMES: [u64; 3] = [2, 3, 5];
        for n in [2usize, 3] {
            let ball = Ball::unit(n);
            let samples: Vec<Vec<f64>> = (1..=1_000_000u64)
                .map(|i| {
                    let u: Vec<f64> = (0..n).map(|k| radical_inverse(i, PRIMES[k])).collect();
                    let rho = u[0].powf(1.0 / n as f64);
                    let t = std::f64::consts::TAU * u[1];
                    if n == 2 {
                        vec![rho * t.cos(), rho * t.sin()]
                    } else {
                        let z = 2.0 * u[2] - 1.0;
                        let s = (1.0 - z * z).sqrt();
                        vec![rho * s * t.cos(), rho * s * t.sin(), rho * z]
                    }
                })
                .collect();
            for alpha in monomials_up_to(n, 6).into_iter().filter(|a| a.0.iter().all(|e| e % 2 == 0)) {
                let exact = ball_monomial_moment(&alpha, &ball);
                let mc = samples.iter().map(|y| alpha.eval(y)).sum::<f64>() / samples.len() as f64 * ball.volume();
                assert!((mc - exact).abs() <= 1e-3 * exact, "{alpha:?}: {mc} vs {exact}");
            }
        }
    }

    #[test]
    fn constants_normalize_to_inverse_sqrt_area() {
        let one = PolynomialField::from_terms(2, 1, &[(0, &[0, 0], 1.0)]).unwrap();
        let pb = orthonormalize(&[one], &Ball::unit(2)).unwrap();
        assert!((pb.elements[0].coeff(0, &MultiIndex(vec![0, 0])) - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rigid_motions_orthonormalize() {
        let op = Operator::symmetric_gradient(2).unwrap();
        let kernel = kernel_basis_up_to(&op, 1);
        for r in [0.25, 1.0, 4.0] {
            let ball = Ball::new(vec![0.5, -0.2], r).unwrap();
            let pb = orthonormalize(&kernel, &ball).unwrap();
            assert_eq!(pb.elements.len(), 3);
            assert!(pb.orthonormality_residual() < 1e-8);
        }
    }

    #[test]
    fn degenerate_basis_is_rejected() {
        let one = PolynomialField::from_terms(1, 1, &[(0, &[0], 1.0)]).unwrap();
        assert!(matches!(orthonormalize(&[one.clone(), one.scale(2.0)], &Ball::unit(1)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn projection_onto_constants_is_the_mean() {
        // n = 1: mean of x^2 over (-1, 1) is 1/3; n = 2: mean of x1^2 over the disc is 1/4
        for (n, expected) in [(1usize, 1.0 + 1.0 / 3.0), (2, 1.25)] {
            let mut a = vec![0u32; n];
            let zero = a.clone();
            a[0] = 2;
            let v = PolynomialField::from_terms(n, 1, &[(0, &zero, 1.0), (0, &a, 1.0)]).unwrap();
            let one = PolynomialField::from_terms(n, 1, &[(0, &zero, 1.0)]).unwrap();
            let pb = orthonormalize(&[one], &Ball::unit(n)).unwrap();
            let p = pb.project_polynomial(&v);
            assert!((p.coeff(0, &MultiIndex(zero.clone())) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn polynomial_projection_is_idempotent() {
        let op = Operator::symmetric_gradient(2).unwrap();
        let pb = orthonormalize(&kernel_basis_up_to(&op, 1), &Ball::new(vec![0.3, 0.1], 0.7).unwrap()).unwrap();
        let v = PolynomialField::from_terms(2, 2, &[(0, &[2, 1], 1.0), (1, &[0, 1], -2.0), (1, &[3, 0], 0.5)]).unwrap();
        let once = pb.project_polynomial(&v);
        let twice = pb.project_polynomial(&once);
        assert!(once.sub(&twice).coeff_max_norm() < 1e-8);
        for e in &pb.elements {
            assert!(pb.project_polynomial(e).sub(e).coeff_max_norm() < 1e-8);
        }
        // x1 x2 in the first component is orthogonal to constants on a centered ball
        let one = PolynomialField::from_terms(2, 1, &[(0, &[0, 0], 1.0)]).unwrap();
        let pc = orthonormalize(&[one], &Ball::unit(2)).unwrap();
        let xy = PolynomialField::from_terms(2, 1, &[(0, &[1, 1], 1.0)]).unwrap();
        assert!(pc.project_polynomial(&xy).coeff_max_norm() < 1e-15);
    }

    #[test]
    fn grid_projection_reproduces_kernel_and_checks_resolution() {
        let op = Operator::symmetric_gradient(2).unwrap();
        let kernel = kernel_basis_up_to(&op, 1);
        let ball = Ball::new(vec![0.1, -0.05], 0.6).unwrap();
        let pb = orthonormalize(&kernel, &ball).unwrap();
        let grid = Grid::cube(2, 64, -1.0, 1.0, false).unwrap();
        let k = PolynomialField::linear_combination(2, 2, &[1.0, -2.0, 0.5], &kernel);
        let p = l2_project_grid(&GridField::sample(&grid, &k), &pb).unwrap();
        assert!(p.sub(&k).coeff_max_norm() < 1e-8);
        let coarse = Grid::cube(2, 6, -1.0, 1.0, false).unwrap();
        assert!(matches!(
            l2_project_grid(&GridField::sample(&coarse, &k), &pb),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn norm_equivalence_special_cases() {
        let x = PolynomialField::from_terms(1, 1, &[(0, &[1], 1.0)]).unwrap();
        assert!((sup_to_mean_ratio(&x, &Ball::unit(1), 64) - 2.0).abs() < 1e-12);
        let balls = vec![Ball::unit(2), Ball::new(vec![3.0, -7.0], 5.0).unwrap()];
        let r = polynomial_norm_equivalence_constant(0, 2, &balls, 5, 32, 1).unwrap();
        assert!((r.constant - 1.0).abs() < 1e-12);
        let r = polynomial_norm_equivalence_constant(2, 2, &balls, 50, 48, 1).unwrap();
        assert!(r.spread < 0.02, "{r:?}");
    }
}
