//! Lp-differentiability experiments: local affine fits, excess decay rates,
//! the structure identity `d(Au)/dx = A(grad u)`, mollified gradients, and the
//! split of the excess into a variation term and a projected term.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ballcalc::{orthonormalize, Ball, BallQuadrature, DiscreteProjection, MIN_CELLS_PER_DIAMETER};
use crate::error::{Error, Result};
use crate::fieldgen::{AnalyticField, MollifierStencil};
use crate::grid::{Field, GridField};
use crate::inequality::{ball_kernel_basis, critical_exponent, PoincareSetup};
use crate::measure::{MeasureField, Polytope, SingularPiece};
use crate::nullspace::{require_fdn, DEFAULT_DEGREE_CAP};
use crate::operator::Operator;
use crate::rng::SeedStream;

/// Aligned quadrature cells across each ball diameter for analytic fields.
pub const DEFAULT_CELLS: usize = 32;

/// Residual-to-slope ratio above which an affine fit is flagged.
pub const FIT_FLAG_RATIO: f64 = 0.25;

/// `r_k = r0 2^{-k}`, `k = 0..count`.
pub fn dyadic_radii(r0: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| r0 * 0.5f64.powi(k as i32)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxGradient {
    pub point: Vec<f64>,
    /// Fitted value at the point.
    pub value: Vec<f64>,
    /// Rows are components, columns are derivatives.
    pub matrix: Vec<Vec<f64>>,
    pub radius: f64,
    /// `(mean_B |u - fit|^2)^{1/2}`.
    pub residual: f64,
    /// Normal-equation residual of the least-squares problem, relative.
    pub optimality: f64,
    /// Residual exceeds `FIT_FLAG_RATIO * r |M|`: the field is not close to affine here.
    pub flagged: bool,
}

impl ApproxGradient {
    pub fn m(&self) -> DMatrix<f64> {
        let rows = self.matrix.len();
        let cols = self.matrix.first().map_or(0, |r| r.len());
        DMatrix::from_fn(rows, cols, |i, j| self.matrix[i][j])
    }
}

fn fit_affine(points: &[Vec<f64>], values: &[f64], dim: usize, x: &[f64], r: f64) -> Result<ApproxGradient> {
    let n = x.len();
    let rows = points.len();
    if rows < n + 1 {
        return Err(Error::Resolution("too few samples for an affine fit".into()));
    }
    let design = DMatrix::from_fn(rows, n + 1, |i, j| if j == 0 { 1.0 } else { (points[i][j - 1] - x[j - 1]) / r });
    let rhs = DMatrix::from_fn(rows, dim, |i, c| values[i * dim + c]);
    let svd = design.clone().svd(true, true);
    let beta = svd.solve(&rhs, 1e-13).map_err(|e| Error::Degenerate(e.to_string()))?;
    let resid = &design * &beta - &rhs;
    let normal = design.transpose() * &resid;
    let scale = design.norm() * rhs.norm().max(f64::MIN_POSITIVE);
    let optimality = normal.amax() / scale;
    let residual = (resid.norm_squared() / rows as f64).sqrt();
    let m = DMatrix::from_fn(dim, n, |c, j| beta[(j + 1, c)] / r);
    let flagged = residual > FIT_FLAG_RATIO * r * m.norm();
    Ok(ApproxGradient {
        point: x.to_vec(),
        value: (0..dim).map(|c| beta[(0, c)]).collect(),
        matrix: matrix_rows(&m),
        radius: r,
        residual,
        optimality,
        flagged,
    })
}

/// Least-squares affine fit of grid samples over `B_{r_fit}(x)`.
pub fn approx_gradient(u: &GridField, x: &[f64], r_fit: f64) -> Result<ApproxGradient> {
    let ball = Ball::new(x.to_vec(), r_fit)?;
    let quad = BallQuadrature::on_grid(u.grid(), &ball, MIN_CELLS_PER_DIAMETER)?;
    fit_affine(&quad.points, &quad.gather(u), u.dim(), x, r_fit)
}

/// Least-squares affine fit of a pointwise field on an aligned quadrature.
pub fn approx_gradient_field(f: &dyn Field, x: &[f64], r_fit: f64, cells: usize) -> Result<ApproxGradient> {
    let ball = Ball::new(x.to_vec(), r_fit)?;
    let quad = BallQuadrature::aligned(&ball, cells);
    fit_affine(&quad.points, &quad.sample(f), f.dim(), x, r_fit)
}

/// Excess values below this fraction of the field's local size are rounding
/// noise and count as zero in slope fits.
pub const EXCESS_NOISE: f64 = 1e-11;

/// Least-squares slope of `log y` against `log r`. Values below `1e-13` of the
/// largest are clamped to that floor; all-zero data has slope `+inf`.
pub fn fit_slope(radii: &[f64], values: &[f64]) -> f64 {
    fit_slope_with_floor(radii, values, 0.0)
}

/// As [`fit_slope`], treating values at or below `floor` as zero.
pub fn fit_slope_with_floor(radii: &[f64], values: &[f64], floor: f64) -> f64 {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= floor {
        return f64::INFINITY;
    }
    let floor = floor.max(1e-13 * max);
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.max(floor).ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessReport {
    pub point: Vec<f64>,
    pub p: f64,
    pub radii: Vec<f64>,
    pub excess: Vec<f64>,
    pub beta: f64,
    /// `beta > 1`: the excess is `o(r)`.
    pub differentiable: bool,
}

fn check_radii(radii: &[f64], p: f64) -> Result<()> {
    if !(p >= 1.0) {
        return Err(Error::Input(format!("exponent p = {p} must be at least 1")));
    }
    if radii.len() < 4 {
        return Err(Error::Input("slope fits need at least 4 radii".into()));
    }
    if radii.windows(2).any(|w| !(w[1] < w[0])) || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Input("radii must be positive and strictly decreasing".into()));
    }
    Ok(())
}

fn remainder(points: &[Vec<f64>], values: &[f64], x: &[f64], m: &DMatrix<f64>, ux: &[f64]) -> Vec<f64> {
    let dim = ux.len();
    let mut out = values.to_vec();
    for (i, y) in points.iter().enumerate() {
        for c in 0..dim {
            let lin: f64 = (0..x.len()).map(|j| m[(c, j)] * (y[j] - x[j])).sum();
            out[i * dim + c] -= ux[c] + lin;
        }
    }
    out
}

fn report(x: &[f64], p: f64, radii: &[f64], excess: Vec<f64>, m: &DMatrix<f64>, ux: &[f64]) -> ExcessReport {
    let max = excess.iter().copied().fold(0.0, f64::max);
    let scale = norm(ux) + radii[0] * m.norm() + max;
    let beta = fit_slope_with_floor(radii, &excess, EXCESS_NOISE * scale);
    ExcessReport { point: x.to_vec(), p, radii: radii.to_vec(), excess, beta, differentiable: beta > 1.0 }
}

/// `E_p(x, r) = (mean_{B_r(x)} |u(y) - u(x) - M(y - x)|^p)^{1/p}` from grid samples.
pub fn excess(u: &GridField, x: &[f64], m: &DMatrix<f64>, ux: &[f64], p: f64, radii: &[f64]) -> Result<ExcessReport> {
    check_radii(radii, p)?;
    let mut values = Vec::with_capacity(radii.len());
    for &r in radii {
        let quad = BallQuadrature::on_grid(u.grid(), &Ball::new(x.to_vec(), r)?, MIN_CELLS_PER_DIAMETER)?;
        let rem = remainder(&quad.points, &quad.gather(u), x, m, ux);
        values.push(quad.p_mean(&rem, u.dim(), p));
    }
    Ok(report(x, p, radii, values, m, ux))
}

/// As [`excess`] for a pointwise field on ball-aligned quadratures.
pub fn excess_field(
    f: &dyn Field,
    x: &[f64],
    m: &DMatrix<f64>,
    ux: &[f64],
    p: f64,
    radii: &[f64],
    cells: usize,
) -> Result<ExcessReport> {
    check_radii(radii, p)?;
    let mut values = Vec::with_capacity(radii.len());
    for &r in radii {
        let quad = BallQuadrature::aligned(&Ball::new(x.to_vec(), r)?, cells);
        let rem = remainder(&quad.points, &quad.sample(f), x, m, ux);
        values.push(quad.p_mean(&rem, f.dim(), p));
    }
    Ok(report(x, p, radii, values, m, ux))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRate {
    pub index: usize,
    pub gradient: ApproxGradient,
    pub report: ExcessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub operator: String,
    pub p: f64,
    pub rows: Vec<PointRate>,
    pub pass_fraction: f64,
    pub median_beta: f64,
}

/// Per-point excess decay at exponent `p`, with `u(x)` the field value and
/// `M` the affine fit at the smallest radius.
pub fn rate_experiment(
    op: &Operator,
    field: &AnalyticField,
    points: &[Vec<f64>],
    radii: &[f64],
    p: f64,
    cells: usize,
) -> Result<RateTable> {
    require_fdn(op, DEFAULT_DEGREE_CAP)?;
    check_radii(radii, p)?;
    let r_fit = radii[radii.len() - 1];
    let mut rows = Vec::with_capacity(points.len());
    for (index, x) in points.iter().enumerate() {
        let gradient = approx_gradient_field(field, x, r_fit, cells)?;
        let ux = field.eval(x);
        let report = excess_field(field, x, &gradient.m(), &ux, p, radii, cells)?;
        rows.push(PointRate { index, gradient, report });
    }
    let passed = rows.iter().filter(|r| r.report.differentiable).count();
    let mut betas: Vec<f64> = rows.iter().map(|r| r.report.beta).collect();
    betas.sort_by(f64::total_cmp);
    let median_beta = if betas.is_empty() { f64::NAN } else { betas[betas.len() / 2] };
    Ok(RateTable {
        operator: op.name().to_string(),
        p,
        pass_fraction: if rows.is_empty() { 0.0 } else { passed as f64 / rows.len() as f64 },
        rows,
        median_beta,
    })
}

/// [`rate_experiment`] at the critical exponent `n / (n - 1)`.
pub fn critical_rate_experiment(
    op: &Operator,
    field: &AnalyticField,
    points: &[Vec<f64>],
    radii: &[f64],
    cells: usize,
) -> Result<RateTable> {
    rate_experiment(op, field, points, radii, critical_exponent(op.n()), cells)
}

/// Distance from `x` to the nearest singular piece.
pub fn distance_to_pieces(x: &[f64], pieces: &[SingularPiece]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for p in pieces {
        best = best.min(p.geometry.distance(x)?);
    }
    Ok(best)
}

/// Uniform points in the box keeping `margin` from its faces and, when given,
/// at least `exclusion` from every singular piece.
pub fn sample_points(
    lower: &[f64],
    upper: &[f64],
    count: usize,
    seed: u64,
    margin: f64,
    pieces: &[SingularPiece],
    exclusion: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = SeedStream::new(seed).rng("sample-points");
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(Error::Input("could not place sample points away from the interfaces".into()));
        }
        let x: Vec<f64> = lower.iter().zip(upper).map(|(a, b)| rng.gen_range(a + margin..b - margin)).collect();
        if exclusion > 0.0 && distance_to_pieces(&x, pieces)? < exclusion {
            continue;
        }
        out.push(x);
    }
    Ok(out)
}

/// Random points on the singular pieces, away from their edges.
pub fn interface_points(pieces: &[SingularPiece], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeedStream::new(seed).rng("interface-points");
    if pieces.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let piece = &pieces[rng.gen_range(0..pieces.len())];
            match &piece.geometry {
                Polytope::Segment { a, b } => {
                    let t = rng.gen_range(0.25..0.75);
                    a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect()
                }
                Polytope::Polygon { vertices } => {
                    let k = vertices.len();
                    let centroid: Vec<f64> =
                        (0..3).map(|d| vertices.iter().map(|v| v[d]).sum::<f64>() / k as f64).collect();
                    let i = rng.gen_range(0..k);
                    let (s, t) = (rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5));
                    (0..3)
                        .map(|d| {
                            centroid[d]
                                + s * (vertices[i][d] - centroid[d])
                                + t * (vertices[(i + 1) % k][d] - centroid[d])
                        })
                        .collect()
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureRow {
    pub point: Vec<f64>,
    /// `A(M)` from the fitted gradient.
    pub predicted: Vec<f64>,
    /// Absolutely continuous density of `Au` at the point.
    pub density: Vec<f64>,
    /// `|A(M) - density| / max(|density|, |M|)`.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub rows: Vec<StructureRow>,
    pub max_deviation: f64,
}

/// Compares `A(M)` with the density of `mu` at the cell containing each point
/// (points are snapped to cell centers). `M = (4 M_r - M_{2r})/3` combines the
/// grid fits over `B_{r_fit}` and `B_{2 r_fit}`, cancelling the `O(r^2)` bias
/// of a single affine fit; `B_{2 r_fit}` must stay clear of interfaces.
pub fn structure_identity_check(
    op: &Operator,
    u: &GridField,
    mu: &MeasureField,
    points: &[Vec<f64>],
    r_fit: f64,
) -> Result<StructureReport> {
    let grid = u.grid();
    let mut rows = Vec::with_capacity(points.len());
    for x in points {
        let idx = grid.locate(x).ok_or_else(|| Error::Domain(format!("{x:?} is outside the grid")))?;
        let center = grid.point_of(&idx);
        let near = approx_gradient(u, &center, r_fit)?.m();
        let far = approx_gradient(u, &center, 2.0 * r_fit)?.m();
        let m = (near * 4.0 - far) / 3.0;
        let predicted = op.apply_to_gradient(&m);
        let density = mu.ac_density.value_at(&idx).to_vec();
        let diff: Vec<f64> = predicted.iter().zip(&density).map(|(a, b)| a - b).collect();
        let denom = norm(&density).max(m.norm()).max(f64::MIN_POSITIVE);
        rows.push(StructureRow { point: center, predicted, deviation: norm(&diff) / denom, density });
    }
    let max_deviation = rows.iter().map(|r| r.deviation).fold(0.0, f64::max);
    Ok(StructureReport { rows, max_deviation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifierRow {
    pub eps: f64,
    pub gradient: Vec<Vec<f64>>,
    /// `|grad u_eps(x) - M|` (Frobenius).
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifierReport {
    pub point: Vec<f64>,
    pub rows: Vec<MollifierRow>,
    /// Log-log slope of the error against `eps` over rows above the floor;
    /// `None` when fewer than two rows are above it.
    pub slope: Option<f64>,
    /// Errors never increase (beyond the floor) as `eps` decreases.
    pub decreasing: bool,
    /// Errors below this are treated as zero.
    pub floor: f64,
}

/// `grad(u * eta_eps)(x)` by centered differences of the discrete mollification,
/// compared with `M` for each `eps` (given in decreasing order).
pub fn mollified_gradient_convergence(u: &GridField, x: &[f64], m: &DMatrix<f64>, eps_list: &[f64]) -> Result<MollifierReport> {
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Input("eps list must be strictly decreasing".into()));
    }
    let grid = u.grid();
    let n = grid.n();
    let dim = u.dim();
    let idx = grid.locate(x).ok_or_else(|| Error::Domain(format!("{x:?} is outside the grid")))?;
    let floor = 1e-9 * (1.0 + m.norm());
    let mut rows = Vec::with_capacity(eps_list.len());
    let mut plus = vec![0.0; dim];
    let mut minus = vec![0.0; dim];
    for &eps in eps_list {
        let stencil = MollifierStencil::new(grid, eps)?;
        let mut grad = DMatrix::zeros(dim, n);
        for j in 0..n {
            if !grid.is_periodic() && (idx[j] == 0 || idx[j] + 1 >= grid.shape()[j]) {
                return Err(Error::Domain("point too close to the box boundary".into()));
            }
            let mut ip = idx.clone();
            let mut im = idx.clone();
            ip[j] = (idx[j] + 1) % grid.shape()[j];
            im[j] = (idx[j] + grid.shape()[j] - 1) % grid.shape()[j];
            stencil.apply_at(u, &ip, &mut plus);
            stencil.apply_at(u, &im, &mut minus);
            for c in 0..dim {
                grad[(c, j)] = (plus[c] - minus[c]) / (2.0 * grid.spacing(j));
            }
        }
        let error = (&grad - m).norm();
        rows.push(MollifierRow { eps, gradient: matrix_rows(&grad), error });
    }
    let decreasing = rows.windows(2).all(|w| w[1].error <= w[0].error + floor);
    let above: Vec<&MollifierRow> = rows.iter().filter(|r| r.error > floor).collect();
    let slope = (above.len() >= 2).then(|| {
        let eps: Vec<f64> = above.iter().map(|r| r.eps).collect();
        let err: Vec<f64> = above.iter().map(|r| r.error).collect();
        fit_slope(&eps, &err)
    });
    Ok(MollifierReport { point: x.to_vec(), rows, slope, decreasing, floor })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub radius: f64,
    /// `r |Av|(closed B_r) / |B_r|`.
    pub variation_term: f64,
    /// `(mean |pi_r v|^{1*})^{1/1*}`.
    pub projected_term: f64,
    /// `(mean |v|^{1*})^{1/1*}`.
    pub total_excess: f64,
    /// `(mean |v - pi_r v|^{1*})^{1/1*}`.
    pub deviation: f64,
    /// `mean |pi_r v|` and `mean |v|`, for the norm-equivalence and stability links.
    pub projected_mean: f64,
    pub mean: f64,
    /// `total <= deviation + projected` (Minkowski).
    pub triangle_holds: bool,
    /// `total <= C variation + projected`.
    pub bound_holds: bool,
}

/// Splits the excess of `v = u - u(x) - M(. - x)` at each radius. The measure
/// `Av` is `Au - A(M) dx`: its density is the field's density minus `A(M)`
/// and its singular part is that of `u`.
#[allow(clippy::too_many_arguments)]
pub fn excess_decomposition(
    setup: &PoincareSetup,
    field: &AnalyticField,
    singular: &[SingularPiece],
    x: &[f64],
    m: &DMatrix<f64>,
    ux: &[f64],
    radii: &[f64],
    cells: usize,
    constant: f64,
) -> Result<Vec<DecompositionRow>> {
    let op = &setup.op;
    let am = op.apply_to_gradient(m);
    let p = critical_exponent(op.n());
    let dim = op.dim_v();
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let ball = Ball::new(x.to_vec(), r)?;
        let quad = BallQuadrature::aligned(&ball, cells);
        let v = remainder(&quad.points, &quad.sample(field), x, m, ux);
        let pb = orthonormalize(&ball_kernel_basis(&setup.kernel, &ball), &ball)?;
        let proj = DiscreteProjection::new(&pb, &quad)?;
        let pv = proj.project_values(&v);
        let dev: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a - b).collect();
        let ac: f64 = quad
            .points
            .iter()
            .map(|y| {
                let d = field.ac_density(op, y);
                norm(&d.iter().zip(&am).map(|(a, b)| a - b).collect::<Vec<_>>())
            })
            .sum::<f64>()
            * quad.weight;
        let mut sing = 0.0;
        for piece in singular {
            sing += piece.variation_in_ball(&ball)?.0;
        }
        let variation_term = r * (ac + sing) / ball.volume();
        let total_excess = quad.p_mean(&v, dim, p);
        let deviation = quad.p_mean(&dev, dim, p);
        let projected_term = quad.p_mean(&pv, dim, p);
        let slack = 1e-12 * (total_excess + projected_term + deviation);
        rows.push(DecompositionRow {
            radius: r,
            variation_term,
            projected_term,
            total_excess,
            deviation,
            projected_mean: quad.p_mean(&pv, dim, 1.0),
            mean: quad.p_mean(&v, dim, 1.0),
            triangle_holds: total_excess <= deviation + projected_term + slack,
            bound_holds: total_excess <= constant * variation_term + projected_term + slack,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub point: Vec<f64>,
    pub exponents: Vec<f64>,
    /// One excess report per exponent.
    pub reports: Vec<ExcessReport>,
    /// `E_p(x, r)` nondecreasing in `p` at every radius.
    pub excess_monotone: bool,
    /// A pass at some `p` implies a pass at every smaller tested `p`.
    pub verdicts_monotone: bool,
}

pub fn monotonicity_check(
    f: &dyn Field,
    x: &[f64],
    m: &DMatrix<f64>,
    ux: &[f64],
    exponents: &[f64],
    radii: &[f64],
    cells: usize,
) -> Result<MonotonicityReport> {
    if exponents.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("exponents must be strictly increasing".into()));
    }
    let reports: Vec<ExcessReport> =
        exponents.iter().map(|&p| excess_field(f, x, m, ux, p, radii, cells)).collect::<Result<_>>()?;
    let excess_monotone = reports
        .windows(2)
        .all(|w| w[0].excess.iter().zip(&w[1].excess).all(|(a, b)| *a <= b + 1e-12 * b.abs().max(1e-300)));
    let verdicts_monotone = (0..reports.len())
        .all(|j| !reports[j].differentiable || reports[..j].iter().all(|r| r.differentiable));
    Ok(MonotonicityReport { point: x.to_vec(), exponents: exponents.to_vec(), reports, excess_monotone, verdicts_monotone })
}

/// `p`-mean of the remainder at one radius (for spot checks).
pub fn excess_at(f: &dyn Field, x: &[f64], m: &DMatrix<f64>, ux: &[f64], p: f64, r: f64, cells: usize) -> Result<f64> {
    let quad = BallQuadrature::aligned(&Ball::new(x.to_vec(), r)?, cells);
    let rem = remainder(&quad.points, &quad.sample(f), x, m, ux);
    Ok(quad.p_mean(&rem, f.dim(), p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldgen::{realize, rigid_split_2d, FieldConfig, FieldSpec, TermSpec};
    use crate::grid::Grid;
    use crate::poly::PolynomialField;

    fn eps2() -> Operator {
        Operator::symmetric_gradient(2).unwrap()
    }

    #[test]
    fn affine_fields_are_fitted_exactly() {
        let grid = Grid::cube(2, 256, -1.0, 1.0, false).unwrap();
        let u = GridField::sample_fn(&grid, 2, |x, out| {
            out[0] = 1.0 + 2.0 * x[0] - 3.0 * x[1];
            out[1] = -0.5 + 0.25 * x[0] + 4.0 * x[1];
        });
        let x = grid.point(grid.flat_index(&[120, 133]));
        let g = approx_gradient(&u, &x, 0.2).unwrap();
        let expect = [[2.0, -3.0], [0.25, 4.0]];
        for c in 0..2 {
            for j in 0..2 {
                assert!((g.matrix[c][j] - expect[c][j]).abs() < 1e-10);
            }
        }
        assert!(g.residual < 1e-12 && g.optimality < 1e-8 && !g.flagged);
        let e = excess(&u, &x, &g.m(), u.value(grid.flat_index(&[120, 133])), 2.0, &dyadic_radii(0.4, 4)).unwrap();
        assert!(e.excess.iter().all(|v| *v < 1e-12));
        assert!(matches!(approx_gradient(&u, &x, 0.02), Err(Error::Resolution(_))));
    }

    #[test]
    fn quadratic_fit_and_excess_rate() {
        let q = PolynomialField::from_terms(2, 1, &[(0, &[2, 0], 1.0), (0, &[1, 1], -0.5), (0, &[0, 3], 0.3)]).unwrap();
        let x = [0.2, -0.1];
        let exact = q.jacobian(&x);
        let g = approx_gradient_field(&q, &x, 0.05, 32).unwrap();
        assert!((g.m() - &exact).norm() < 1e-3);
        for p in [1.0, 1.5, 2.0] {
            let rep = excess_field(&q, &x, &exact, &q.eval(&x), p, &dyadic_radii(0.25, 6), 32).unwrap();
            assert!((rep.beta - 2.0).abs() < 0.05, "p = {p}: {}", rep.beta);
        }
    }

    #[test]
    fn jump_through_point_is_flagged_and_not_differentiable() {
        let spec = rigid_split_2d(0.0, [0.0; 3], [1.0, 0.0, 0.0]);
        let cfg = FieldConfig { spec, lower: vec![-1.0; 2], upper: vec![1.0; 2], resolution: 8, periodic: false };
        let real = realize(&cfg, &eps2()).unwrap();
        let x = [0.0, 0.1];
        let g = approx_gradient_field(&real.field, &x, 0.1, 32).unwrap();
        assert!(g.flagged);
        let table = rate_experiment(&eps2(), &real.field, &[x.to_vec()], &dyadic_radii(0.25, 6), 1.0, 32).unwrap();
        assert!(table.rows[0].report.beta <= 1.0);
    }

    #[test]
    fn interior_points_of_piecewise_rigid_fields_pass() {
        let spec = rigid_split_2d(0.1, [0.2, 0.0, 0.5], [1.0, -0.5, 0.3]);
        let cfg = FieldConfig { spec, lower: vec![-1.0; 2], upper: vec![1.0; 2], resolution: 64, periodic: false };
        let real = realize(&cfg, &eps2()).unwrap();
        let pts = sample_points(&[-1.0; 2], &[1.0; 2], 10, 3, 0.26, &real.mu.singular, 4.0 * 2.0 / 64.0).unwrap();
        let table = critical_rate_experiment(&eps2(), &real.field, &pts, &dyadic_radii(0.25, 6), 32).unwrap();
        assert_eq!(table.pass_fraction, 1.0);
        assert!(table.rows.iter().all(|r| r.report.beta >= 1.1));
    }

    #[test]
    fn structure_identity_on_band_limited_field() {
        let cfg = FieldConfig {
            spec: FieldSpec::BandLimited { seed: 1, band: 1.0, amplitude: 1.0 },
            lower: vec![-1.0; 2],
            upper: vec![1.0; 2],
            resolution: 128,
            periodic: true,
        };
        let real = realize(&cfg, &eps2()).unwrap();
        let pts = sample_points(&[-1.0; 2], &[1.0; 2], 20, 5, 0.1, &[], 0.0).unwrap();
        let rep = structure_identity_check(&eps2(), &real.u, &real.mu, &pts, 4.0 * 2.0 / 128.0).unwrap();
        assert!(rep.max_deviation < 0.01, "{}", rep.max_deviation);
    }

    #[test]
    fn structure_identity_on_kernel_polynomial() {
        let spec = FieldSpec::Polynomial {
            terms: vec![
                TermSpec { component: 0, exponents: vec![0, 1], coeff: 1.0 },
                TermSpec { component: 1, exponents: vec![1, 0], coeff: -1.0 },
            ],
        };
        let cfg = FieldConfig { spec, lower: vec![-1.0; 2], upper: vec![1.0; 2], resolution: 64, periodic: false };
        let real = realize(&cfg, &eps2()).unwrap();
        let rep = structure_identity_check(&eps2(), &real.u, &real.mu, &[vec![0.1, 0.2]], 0.2).unwrap();
        assert!(rep.rows[0].predicted.iter().all(|v| v.abs() < 1e-12));
        assert!(rep.max_deviation < 1e-10);
    }

    #[test]
    fn mollified_gradients() {
        let grid = Grid::cube(2, 128, -1.0, 1.0, false).unwrap();
        let affine = GridField::sample_fn(&grid, 1, |x, out| out[0] = 0.5 + 2.0 * x[0] - x[1]);
        let x = grid.point(grid.flat_index(&[64, 64]));
        let m = DMatrix::from_row_slice(1, 2, &[2.0, -1.0]);
        let rep = mollified_gradient_convergence(&affine, &x, &m, &[0.3, 0.15, 0.08]).unwrap();
        assert!(rep.rows.iter().all(|r| r.error < 1e-10));
        // cubic: error O(eps^2) for the symmetric kernel
        let cubic = GridField::sample_fn(&grid, 1, |x, out| out[0] = x[0].powi(3) + x[0] * x[1] * x[1]);
        let mx = DMatrix::from_row_slice(1, 2, &[3.0 * x[0] * x[0] + x[1] * x[1], 2.0 * x[0] * x[1]]);
        let rep = mollified_gradient_convergence(&cubic, &x, &mx, &[0.4, 0.2, 0.1, 0.05]).unwrap();
        assert!(rep.decreasing);
        assert!(rep.slope.unwrap() >= 1.0, "{:?}", rep.slope);
        // a jump at distance 0.3: converged once eps < 0.3
        let jump = GridField::sample_fn(&grid, 1, |y, out| out[0] = if y[0] > x[0] + 0.3 { 1.0 } else { 0.0 });
        let zero = DMatrix::zeros(1, 2);
        let rep = mollified_gradient_convergence(&jump, &x, &zero, &[0.5, 0.4, 0.25, 0.1]).unwrap();
        assert!(rep.rows[0].error > 0.1 && rep.rows[1].error > 0.0);
        assert!(rep.rows[2].error == 0.0 && rep.rows[3].error == 0.0);
    }

    #[test]
    fn decomposition_bounds_hold() {
        let op = eps2();
        let setup = PoincareSetup::new(&op).unwrap();
        let spec = rigid_split_2d(0.1, [0.0; 3], [1.0, -0.5, 0.3]);
        let cfg = FieldConfig { spec, lower: vec![-1.0; 2], upper: vec![1.0; 2], resolution: 32, periodic: false };
        let real = realize(&cfg, &op).unwrap();
        let x = [-0.05, 0.2];
        let g = approx_gradient_field(&real.field, &x, 0.02, 32).unwrap();
        let rows = excess_decomposition(
            &setup,
            &real.field,
            &real.mu.singular,
            &x,
            &g.m(),
            &real.field.eval(&x),
            &dyadic_radii(0.25, 6),
            32,
            10.0,
        )
        .unwrap();
        assert!(rows.iter().all(|r| r.triangle_holds && r.bound_holds));
        // below the distance 0.15 to the interface, everything vanishes
        assert!(rows.iter().filter(|r| r.radius < 0.15).all(|r| r.total_excess < 1e-12 && r.variation_term < 1e-12));
        assert!(rows[0].variation_term > 0.0);
    }

    #[test]
    fn excess_is_monotone_in_p() {
        let f = crate::fieldgen::BandLimitedField::new(2, 2, &[-1.0; 2], &[1.0; 2], 8, 2.0, 1.0);
        let x = [0.1, 0.3];
        let m = f.jacobian(&x);
        let rep = monotonicity_check(&f, &x, &m, &f.eval(&x), &[1.0, 1.5, 2.0], &dyadic_radii(0.25, 5), 32).unwrap();
        assert!(rep.excess_monotone && rep.verdicts_monotone);
        assert!(rep.reports.iter().all(|r| r.beta > 1.9));
    }

    #[test]
    fn invalid_inputs() {
        let q = PolynomialField::zero(2, 1);
        let m = DMatrix::zeros(1, 2);
        assert!(excess_field(&q, &[0.0, 0.0], &m, &[0.0], 0.5, &dyadic_radii(1.0, 4), 8).is_err());
        assert!(excess_field(&q, &[0.0, 0.0], &m, &[0.0], 1.0, &dyadic_radii(1.0, 3), 8).is_err());
        assert!(excess_field(&q, &[0.0, 0.0], &m, &[0.0], 1.0, &[1.0, 0.5, 0.5, 0.1], 8).is_err());
        assert_eq!(fit_slope(&[1.0, 0.5], &[0.0, 0.0]), f64::INFINITY);
    }
}
