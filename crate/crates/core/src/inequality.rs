//! Poincaré–Sobolev ratios on balls: smooth form `r mean|Au|`, measure form
//! `r^{1-n} |Au|(closed ball)`, and empirical estimates of the best constant.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ballcalc::{orthonormalize, Ball, BallQuadrature, DiscreteProjection};
use crate::error::{Error, Result};
use crate::fieldgen::{AnalyticField, BandLimitedField, PiecewiseField};
use crate::grid::{Field, Grid, GridField, Rescaled};
use crate::measure::{MeasureField, SingularPiece};
use crate::nullspace::{require_fdn, DEFAULT_DEGREE_CAP};
use crate::operator::Operator;
use crate::poly::{monomials_up_to, PolynomialField};
use crate::rng::SeedStream;

/// Minimum cells across a ball diameter for grid-based ratios.
pub const MIN_CELLS_PER_DIAMETER: f64 = 16.0;

/// Relative size below which both sides count as zero.
const DEGENERATE_TOL: f64 = 1e-9;

/// The critical exponent `1* = n / (n - 1)` (infinite for `n = 1`).
pub fn critical_exponent(n: usize) -> f64 {
    if n <= 1 {
        f64::INFINITY
    } else {
        n as f64 / (n as f64 - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Finite,
    /// Both sides vanish: the field is in the null-space on the ball.
    Degenerate,
    /// The right side vanishes but the left does not.
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// `rhs = r mean_B |Au|`.
    Smooth,
    /// `rhs = r^{1-n} |Au|(closed B)`.
    Measure,
    /// `rhs = r |Au|(closed B) / |B|`, the smooth normalization for measures.
    MeasureMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub field_id: String,
    pub center: Vec<f64>,
    pub radius: f64,
    pub form: Form,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
    pub outcome: Outcome,
    /// A singular piece meets the closed ball only on its boundary.
    pub touches_boundary: bool,
}

impl RatioReport {
    fn new(field_id: &str, ball: &Ball, form: Form, lhs: f64, rhs: f64, scale: f64, touches_boundary: bool) -> Self {
        let tiny = DEGENERATE_TOL * scale.max(f64::MIN_POSITIVE);
        let (outcome, ratio) = if rhs > tiny {
            (Outcome::Finite, Some(lhs / rhs))
        } else if lhs > tiny {
            (Outcome::Unbounded, None)
        } else {
            (Outcome::Degenerate, None)
        };
        Self {
            field_id: field_id.to_string(),
            center: ball.center.clone(),
            radius: ball.radius,
            form,
            lhs,
            rhs,
            ratio,
            outcome,
            touches_boundary,
        }
    }
}

/// Null-space basis re-expressed in the ball's normalized coordinates, which
/// keeps the Gram matrix well conditioned for any center and radius.
pub fn ball_kernel_basis(kernel: &[PolynomialField], ball: &Ball) -> Vec<PolynomialField> {
    let shift: Vec<f64> = ball.center.iter().map(|c| -c / ball.radius).collect();
    kernel.iter().map(|q| q.pullback(&shift, 1.0 / ball.radius)).collect()
}

/// Cached null-space of an FDN operator.
#[derive(Debug, Clone)]
pub struct PoincareSetup {
    pub op: Operator,
    pub degree: usize,
    pub kernel: Vec<PolynomialField>,
}

impl PoincareSetup {
    /// Fails with a precondition error when the operator is not FDN up to the
    /// default degree cap.
    pub fn new(op: &Operator) -> Result<Self> {
        let (degree, kernel) = require_fdn(op, DEFAULT_DEGREE_CAP)?;
        Ok(Self { op: op.clone(), degree, kernel })
    }

    fn projection(&self, ball: &Ball, quad: &BallQuadrature) -> Result<DiscreteProjection> {
        let pb = orthonormalize(&ball_kernel_basis(&self.kernel, ball), ball)?;
        DiscreteProjection::new(&pb, quad)
    }

    /// `(mean_B |v - pi v|^{1*})^{1/1*}` and `mean_B |v|` from node-major values.
    fn deviation(&self, ball: &Ball, quad: &BallQuadrature, values: &[f64]) -> Result<(f64, f64)> {
        let proj = self.projection(ball, quad)?;
        let dim = self.op.dim_v();
        let resid: Vec<f64> = values.iter().zip(proj.project_values(values)).map(|(a, b)| a - b).collect();
        Ok((quad.p_mean(&resid, dim, critical_exponent(ball.n())), quad.p_mean(values, dim, 1.0)))
    }

    /// Smooth form with `Au` supplied (finite differences of `u`, say).
    pub fn ratio_with_derivative(&self, field_id: &str, u: &GridField, au: &GridField, ball: &Ball) -> Result<RatioReport> {
        check_dims(&self.op, u)?;
        let quad = BallQuadrature::on_grid(u.grid(), ball, MIN_CELLS_PER_DIAMETER)?;
        let (lhs, size) = self.deviation(ball, &quad, &quad.gather(u))?;
        let rhs = ball.radius * quad.p_mean(&quad.gather(au), self.op.dim_w(), 1.0);
        Ok(RatioReport::new(field_id, ball, Form::Smooth, lhs, rhs, size, false))
    }

    pub fn ratio(&self, field_id: &str, u: &GridField, ball: &Ball) -> Result<RatioReport> {
        let au = u.apply_operator(&self.op)?;
        self.ratio_with_derivative(field_id, u, &au, ball)
    }

    /// Measure form: the right side is `r^{1-n} |Au|(closed ball)`, with the
    /// absolutely continuous part by grid quadrature and the singular part by
    /// exact surface measure.
    pub fn ratio_measure(&self, field_id: &str, mu: &MeasureField, u: &GridField, ball: &Ball) -> Result<RatioReport> {
        check_dims(&self.op, u)?;
        let quad = BallQuadrature::on_grid(u.grid(), ball, MIN_CELLS_PER_DIAMETER)?;
        let (lhs, size) = self.deviation(ball, &quad, &quad.gather(u))?;
        let var = mu.total_variation(ball)?;
        let n = ball.n() as i32;
        let rhs = ball.radius.powi(1 - n) * var.total();
        let scale = size * ball.radius.powi(n - 1) * ball.radius;
        Ok(RatioReport::new(field_id, ball, Form::Measure, lhs, rhs, size.max(scale), var.touches_boundary))
    }

    /// Ratio for an analytic field on an aligned quadrature, with the right
    /// side `r |Au|(closed B) / |B|` from the exact density and interfaces.
    pub fn ratio_analytic(
        &self,
        field_id: &str,
        field: &AnalyticField,
        singular: &[SingularPiece],
        ball: &Ball,
        cells: usize,
    ) -> Result<RatioReport> {
        let quad = BallQuadrature::aligned(ball, cells);
        let (lhs, size) = self.deviation(ball, &quad, &quad.sample(field))?;
        let ac: f64 = quad.points.iter().map(|y| norm(&field.ac_density(&self.op, y))).sum::<f64>() * quad.weight;
        let mut sing = 0.0;
        let mut touches = false;
        for piece in singular {
            let (v, t) = piece.variation_in_ball(ball)?;
            sing += v;
            touches |= t;
        }
        let rhs = ball.radius * (ac + sing) / ball.volume();
        Ok(RatioReport::new(field_id, ball, Form::MeasureMean, lhs, rhs, size, touches))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_dims(op: &Operator, u: &GridField) -> Result<()> {
    if u.grid().n() != op.n() || u.dim() != op.dim_v() {
        return Err(Error::Dimension(format!(
            "field is R^{} -> R^{}, operator {} expects R^{} -> R^{}",
            u.grid().n(),
            u.dim(),
            op.name(),
            op.n(),
            op.dim_v()
        )));
    }
    Ok(())
}

/// Smooth-form ratios of `y -> f(y / r)` on `B_r(0)` for each radius, each
/// sampled on the cube `[-1.1 r, 1.1 r]^n` with `cells` cells per axis.
pub fn scale_sweep(setup: &PoincareSetup, f: &dyn Field, field_id: &str, radii: &[f64], cells: usize) -> Result<Vec<RatioReport>> {
    let n = setup.op.n();
    radii
        .iter()
        .map(|&r| {
            let grid = Grid::cube(n, cells, -1.1 * r, 1.1 * r, false)?;
            let u = GridField::sample(&grid, &Rescaled { inner: f, center: vec![0.0; n], scale: r });
            setup.ratio(field_id, &u, &Ball::new(vec![0.0; n], r)?)
        })
        .collect()
}

/// Largest relative deviation of finite ratios from their mean.
pub fn ratio_spread(rows: &[RatioReport]) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    if vals.is_empty() {
        return None;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    Some(vals.iter().map(|v| (v / mean - 1.0).abs()).fold(0.0, f64::max))
}

/// Smooth form `(mean|u - pi u|^{1*})^{1/1*} / (r mean|Au|)` with `Au` by
/// centered finite differences.
pub fn poincare_sobolev_ratio(op: &Operator, u: &GridField, ball: &Ball) -> Result<RatioReport> {
    PoincareSetup::new(op)?.ratio("field", u, ball)
}

/// Measure form with right side `r^{1-n} |Au|(closed ball)`.
pub fn poincare_sobolev_ratio_measure(op: &Operator, mu: &MeasureField, u: &GridField, ball: &Ball) -> Result<RatioReport> {
    PoincareSetup::new(op)?.ratio_measure("field", mu, u, ball)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpConstantConfig {
    pub trials: usize,
    pub refine_steps: usize,
    /// Band (cycles across the ball's bounding cube) of smooth trial fields.
    pub band: f64,
    /// Aligned quadrature cells across the ball diameter.
    pub cells: usize,
    pub seed: u64,
}

impl Default for SharpConstantConfig {
    fn default() -> Self {
        Self { trials: 40, refine_steps: 60, band: 2.0, cells: 32, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpConstantReport {
    pub operator: String,
    pub ball: Ball,
    pub constant: f64,
    pub argmax: String,
    /// Best ratio reached by each trial after refinement.
    pub trial_best: Vec<f64>,
}

/// Degree of polynomial trial fields.
const TRIAL_DEGREE: u32 = 3;

/// Parametrized trial field: smooth band-limited, polynomial, or one straight
/// interface between two null-space elements.
#[derive(Debug, Clone)]
enum Trial {
    Band(BandLimitedField),
    Split { params: Vec<f64> },
    /// Coefficients of a cubic in the ball's normalized coordinates.
    Poly { params: Vec<f64> },
}

impl Trial {
    fn params(&self) -> Vec<f64> {
        match self {
            Self::Band(b) => (0..b.coefficient_count()).map(|i| b.coefficient(i)).collect(),
            Self::Split { params } | Self::Poly { params } => params.clone(),
        }
    }

    fn with_params(&self, p: &[f64]) -> Self {
        match self {
            Self::Band(b) => {
                let mut b = b.clone();
                for (i, v) in p.iter().enumerate() {
                    b.set_coefficient(i, *v);
                }
                Self::Band(b)
            }
            Self::Split { .. } => Self::Split { params: p.to_vec() },
            Self::Poly { .. } => Self::Poly { params: p.to_vec() },
        }
    }
}

/// Empirical best constant for the smooth-normalized form
/// `(mean|u - pi u|^{1*})^{1/1*} <= c r |Au|(closed B) / |B|`: the maximum
/// ratio over random trials (band-limited, cubic, and single-interface
/// fields in rotation), each refined by coordinate hill climbing with
/// step decay 0.5 after 10 consecutive rejections. Trials are independent, so
/// the estimate is nondecreasing in the number of trials.
pub fn estimate_sharp_constant(op: &Operator, ball: &Ball, cfg: &SharpConstantConfig) -> Result<SharpConstantReport> {
    if cfg.trials == 0 {
        return Err(Error::Input("empty search: trials = 0".into()));
    }
    let setup = PoincareSetup::new(op)?;
    let stream = SeedStream::new(cfg.seed);
    let n = op.n();
    let lower: Vec<f64> = ball.center.iter().map(|c| c - ball.radius).collect();
    let upper: Vec<f64> = ball.center.iter().map(|c| c + ball.radius).collect();
    let split_supported = n == 2 || n == 3;
    let mut best = f64::NEG_INFINITY;
    let mut argmax = String::new();
    let mut trial_best = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let label = format!("trial-{t}");
        let mut rng = stream.rng(&label);
        let trial = if t % 3 == 2 {
            let count = monomials_up_to(n, TRIAL_DEGREE).len() * op.dim_v();
            Trial::Poly { params: (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect() }
        } else if t % 3 == 1 && split_supported {
            // unit-normal direction (n values), offset in units of r, jump coefficients
            let mut params: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            params.push(rng.gen_range(-0.8..0.8));
            params.extend(setup.kernel.iter().map(|_| rng.gen_range(-1.0..1.0)));
            Trial::Split { params }
        } else {
            Trial::Band(BandLimitedField::new(n, op.dim_v(), &lower, &upper, rng.gen(), cfg.band, 1.0))
        };
        let eval = |tr: &Trial| -> Result<f64> {
            let (field, singular) = realize_trial(&setup, tr, ball, &lower, &upper)?;
            Ok(setup.ratio_analytic(&label, &field, &singular, ball, cfg.cells)?.ratio.unwrap_or(0.0))
        };
        let mut params = trial.params();
        let mut current = eval(&trial)?;
        let mut step = 0.25;
        let mut rejected = 0;
        for s in 0..cfg.refine_steps {
            let i = s % params.len().max(1);
            let mut improved = false;
            for sign in [1.0, -1.0] {
                let mut cand = params.clone();
                cand[i] += sign * step * params[i].abs().max(0.1);
                let value = eval(&trial.with_params(&cand))?;
                if value > current {
                    current = value;
                    params = cand;
                    improved = true;
                    break;
                }
            }
            if improved {
                rejected = 0;
            } else {
                rejected += 1;
                if rejected == 10 {
                    step *= 0.5;
                    rejected = 0;
                }
            }
        }
        trial_best.push(current);
        if current > best {
            best = current;
            argmax = match &trial {
                Trial::Band(_) => format!("band_limited(trial={t}, band={})", cfg.band),
                Trial::Split { .. } => format!("piecewise_kernel(trial={t}, params={:?})", params),
                Trial::Poly { .. } => format!("polynomial(trial={t}, degree={TRIAL_DEGREE})"),
            };
        }
    }
    Ok(SharpConstantReport { operator: op.name().to_string(), ball: ball.clone(), constant: best, argmax, trial_best })
}

fn realize_trial(
    setup: &PoincareSetup,
    trial: &Trial,
    ball: &Ball,
    lower: &[f64],
    upper: &[f64],
) -> Result<(AnalyticField, Vec<SingularPiece>)> {
    match trial {
        Trial::Band(b) => Ok((AnalyticField::BandLimited(b.clone()), Vec::new())),
        Trial::Poly { params } => {
            let n = setup.op.n();
            let mons = monomials_up_to(n, TRIAL_DEGREE);
            let q = PolynomialField::from_coefficient_vector(n, setup.op.dim_v(), &mons, params);
            let shift: Vec<f64> = ball.center.iter().map(|c| -c / ball.radius).collect();
            Ok((AnalyticField::Polynomial(q.pullback(&shift, 1.0 / ball.radius)), Vec::new()))
        }
        Trial::Split { params } => {
            let n = setup.op.n();
            let dir = &params[..n];
            let len = norm(dir);
            if len < 1e-9 {
                return Ok((AnalyticField::Polynomial(PolynomialField::zero(n, setup.op.dim_v())), Vec::new()));
            }
            let normal: Vec<f64> = dir.iter().map(|x| x / len).collect();
            let offset = params[n].clamp(-0.99, 0.99) * ball.radius
                + normal.iter().zip(&ball.center).map(|(a, c)| a * c).sum::<f64>();
            let kernel = ball_kernel_basis(&setup.kernel, ball);
            let jump = PolynomialField::linear_combination(n, setup.op.dim_v(), &params[n + 1..], &kernel);
            let pw = PiecewiseField::split(&normal, offset, PolynomialField::zero(n, setup.op.dim_v()), jump);
            let singular = pw.interfaces(&setup.op, lower, upper)?;
            Ok((AnalyticField::Piecewise(pw), singular))
        }
    }
}

pub const CSV_HEADER: &str = "operator,field_id,center,radius,lhs,rhs,ratio";

/// One CSV row; the center is space-separated inside its column and
/// degenerate or unbounded ratios are written as their outcome name.
pub fn csv_row(operator: &str, r: &RatioReport) -> String {
    let center: Vec<String> = r.center.iter().map(|c| format!("{c:.6}")).collect();
    let ratio = match (r.outcome, r.ratio) {
        (Outcome::Finite, Some(x)) => format!("{x:.12e}"),
        (Outcome::Unbounded, _) => "unbounded".into(),
        _ => "degenerate".into(),
    };
    format!(
        "{operator},{},{},{:.6},{:.12e},{:.12e},{ratio}",
        r.field_id,
        center.join(" "),
        r.radius,
        r.lhs,
        r.rhs
    )
}

pub fn write_csv<W: Write>(mut w: W, operator: &str, rows: &[RatioReport]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", csv_row(operator, r))?;
    }
    Ok(())
}
