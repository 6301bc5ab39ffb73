//! Elliptic reconstruction `u = K * Au` on periodic grids through the Fourier
//! multiplier `m(xi) = -i (A[xi]^T A[xi])^{-1} A[xi]^T`, and sampling of the
//! physical-space kernel.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::ellipticity::{require_elliptic, SphereSearchConfig};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::operator::Operator;

/// Relative size of the zero mode of `g` above which `g` is not in the range.
pub const RANGE_TOLERANCE: f64 = 1e-8;

/// An elliptic operator's left inverse in frequency space.
#[derive(Debug, Clone)]
pub struct Multiplier {
    op: Operator,
}

impl Multiplier {
    /// Checks ellipticity once with the default sphere search.
    pub fn new(op: &Operator) -> Result<Self> {
        require_elliptic(op, &SphereSearchConfig::default())?;
        Ok(Self { op: op.clone() })
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    /// `m(xi)`, a complex `dimV x dimW` matrix.
    pub fn eval(&self, xi: &[f64]) -> Result<DMatrix<Complex64>> {
        if xi.iter().all(|x| *x == 0.0) {
            return Err(Error::Domain("multiplier is undefined at xi = 0".into()));
        }
        let a = self.op.real_symbol(xi)?;
        let gram = a.transpose() * &a;
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::NotElliptic(format!("symbol of {} is not injective at {xi:?}", self.op.name())))?;
        let real = inv * a.transpose();
        Ok(real.map(|x| Complex64::new(0.0, -x)))
    }
}

pub fn multiplier_eval(op: &Operator, xi: &[f64]) -> Result<DMatrix<Complex64>> {
    Multiplier::new(op)?.eval(xi)
}

/// `max |m(xi) (i A[xi]) - Id|`.
pub fn left_inverse_residual(m: &Multiplier, xi: &[f64]) -> Result<f64> {
    let mx = m.eval(xi)?;
    let sym = m.op.real_symbol(xi)?.map(|x| Complex64::new(0.0, x));
    let prod = mx * sym;
    let id = DMatrix::<Complex64>::identity(prod.nrows(), prod.ncols());
    Ok((prod - id).iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// In-place n-dimensional FFT of a row-major complex array (unnormalized in
/// both directions).
pub fn fft_nd(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let mut planner = FftPlanner::new();
    let mut line = Vec::new();
    for axis in 0..shape.len() {
        let len = shape[axis];
        let fft = if inverse { planner.plan_fft_inverse(len) } else { planner.plan_fft_forward(len) };
        let stride: usize = shape[axis + 1..].iter().product();
        let outer = data.len() / (len * stride);
        line.resize(len, Complex64::default());
        for o in 0..outer {
            for s in 0..stride {
                let base = o * len * stride + s;
                for i in 0..len {
                    line[i] = data[base + i * stride];
                }
                fft.process(&mut line);
                for i in 0..len {
                    data[base + i * stride] = line[i];
                }
            }
        }
    }
}

/// Signed integer frequency of FFT index `i` on an axis of length `len`, and
/// whether it is the unpaired Nyquist mode.
fn frequency(i: usize, len: usize) -> (f64, bool) {
    let k = if i <= len / 2 { i as f64 } else { i as f64 - len as f64 };
    (k, len.is_multiple_of(2) && i == len / 2)
}

fn require_periodic(grid: &Grid) -> Result<()> {
    if !grid.is_periodic() {
        return Err(Error::Input("spectral operations need a periodic grid".into()));
    }
    Ok(())
}

/// Per-component spectra of a grid field.
fn spectra(u: &GridField) -> Vec<Vec<Complex64>> {
    let shape = u.grid().shape().to_vec();
    (0..u.dim())
        .map(|c| {
            let mut s: Vec<Complex64> = u.component(c).into_iter().map(|x| Complex64::new(x, 0.0)).collect();
            fft_nd(&mut s, &shape, false);
            s
        })
        .collect()
}

/// Applies a frequency-wise matrix `f(xi)` (`rows x dim`) to a field; zero and
/// Nyquist modes are set to zero. Returns the real part and the largest
/// imaginary residue relative to the largest real value.
fn apply_symbolwise(
    u: &GridField,
    rows: usize,
    f: impl Fn(&[f64]) -> Result<DMatrix<Complex64>>,
) -> Result<(GridField, f64)> {
    let grid = u.grid().clone();
    let shape = grid.shape().to_vec();
    let n = shape.len();
    let hats = spectra(u);
    let mut out: Vec<Vec<Complex64>> = vec![vec![Complex64::default(); grid.len()]; rows];
    let mut xi = vec![0.0; n];
    let mut v = vec![Complex64::default(); u.dim()];
    for flat in 0..grid.len() {
        let idx = grid.multi_index(flat);
        let mut skip = true;
        let mut nyquist = false;
        for k in 0..n {
            let (freq, nyq) = frequency(idx[k], shape[k]);
            xi[k] = std::f64::consts::TAU * freq / grid.extent(k);
            skip &= freq == 0.0;
            nyquist |= nyq;
        }
        if skip || nyquist {
            continue;
        }
        let m = f(&xi)?;
        for c in 0..u.dim() {
            v[c] = hats[c][flat];
        }
        for r in 0..rows {
            out[r][flat] = (0..u.dim()).map(|c| m[(r, c)] * v[c]).sum();
        }
    }
    let scale = 1.0 / grid.len() as f64;
    let mut data = vec![0.0; grid.len() * rows];
    let mut max_re = 0.0f64;
    let mut max_im = 0.0f64;
    for (r, spec) in out.iter_mut().enumerate() {
        fft_nd(spec, &shape, true);
        for (flat, z) in spec.iter().enumerate() {
            data[flat * rows + r] = z.re * scale;
            max_re = max_re.max((z.re * scale).abs());
            max_im = max_im.max((z.im * scale).abs());
        }
    }
    let residue = if max_re > 0.0 { max_im / max_re } else { max_im };
    Ok((GridField::from_data(grid, rows, data)?, residue))
}

/// `Au` by exact differentiation of the trigonometric interpolant (Nyquist
/// modes dropped).
pub fn spectral_apply(op: &Operator, u: &GridField) -> Result<GridField> {
    require_periodic(u.grid())?;
    if u.dim() != op.dim_v() || u.grid().n() != op.n() {
        return Err(Error::Dimension("field does not match the operator's domain".into()));
    }
    Ok(apply_symbolwise(u, op.dim_w(), |xi| Ok(op.real_symbol(xi)?.map(|x| Complex64::new(0.0, x))))?.0)
}

/// Mean-free `u` with `Au = g`, computed as `u_hat(k) = m(2 pi k / L) g_hat(k)`.
/// Errors when the zero mode of `g` is not negligible or the imaginary
/// residue after the inverse transform exceeds `1e-8`.
pub fn fourier_reconstruct(op: &Operator, g: &GridField) -> Result<GridField> {
    let m = Multiplier::new(op)?;
    require_periodic(g.grid())?;
    if g.dim() != op.dim_w() || g.grid().n() != op.n() {
        return Err(Error::Dimension("data does not match the operator's target".into()));
    }
    let mean = g.mean();
    let mean_norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rms = g.l2_norm() / (g.grid().len() as f64).sqrt();
    if mean_norm > RANGE_TOLERANCE * rms.max(f64::MIN_POSITIVE) {
        return Err(Error::NotInRange(format!(
            "zero mode of the data is {mean_norm:.3e} (rms {rms:.3e}); not in the range of {}",
            op.name()
        )));
    }
    let (u, residue) = apply_multiplier(&m, g)?;
    if residue > 1e-8 {
        return Err(Error::NotInRange(format!("imaginary residue {residue:.3e} after inversion")));
    }
    Ok(u)
}

/// The multiplier applied without the range check.
pub fn apply_multiplier(m: &Multiplier, g: &GridField) -> Result<(GridField, f64)> {
    require_periodic(g.grid())?;
    apply_symbolwise(g, m.op.dim_v(), |xi| m.eval(xi))
}

/// Relative L2 distance between `a` and the mean-free part of `b`.
pub fn relative_error_mean_free(a: &GridField, b: &GridField) -> f64 {
    let mean = b.mean();
    let dim = b.dim();
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        let y0 = y - mean[i % dim];
        num += (x - y0).powi(2);
        den += y0 * y0;
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityRow {
    pub direction: Vec<i64>,
    pub lambda: u32,
    /// `|K(lambda x) lambda^{n-1} - K(x)| / |K(x)|` (Frobenius norms).
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub operator: String,
    pub cells: usize,
    pub mollifier_cells: f64,
    pub base_steps: i64,
    pub rows: Vec<HomogeneityRow>,
    pub max_residual: f64,
}

/// Samples `K` on the torus `[-1, 1]^n` with `cells` cells per axis by
/// inverting a point source mollified over 4 cells, then compares
/// `K(lambda x) lambda^{n-1}` with `K(x)` at `x = base_steps * h * direction`
/// from the source (integer directions keep samples on grid nodes).
pub fn kernel_homogeneity_check(
    op: &Operator,
    directions: &[Vec<i64>],
    lambdas: &[u32],
    cells: usize,
    base_steps: i64,
) -> Result<HomogeneityReport> {
    let m = Multiplier::new(op)?;
    let n = op.n();
    let grid = Grid::cube(n, cells, -1.0, 1.0, true)?;
    let h = grid.spacing(0);
    let eps = 4.0 * h;
    let src_idx = vec![cells / 2; n];
    let src = grid.point_of(&src_idx);
    let bump = |x: &[f64]| {
        let r2: f64 = x.iter().zip(&src).map(|(a, b)| ((a - b) / eps).powi(2)).sum();
        if r2 < 1.0 {
            (-1.0 / (1.0 - r2)).exp()
        } else {
            0.0
        }
    };
    let delta = GridField::sample_fn(&grid, 1, |x, out| out[0] = bump(x));
    let mass: f64 = delta.data().iter().sum::<f64>() * grid.cell_volume();
    // columns K e_w
    let mut columns = Vec::with_capacity(op.dim_w());
    for w in 0..op.dim_w() {
        let mut g = GridField::zeros(grid.clone(), op.dim_w());
        for flat in 0..grid.len() {
            g.value_mut(flat)[w] = delta.value(flat)[0] / mass;
        }
        columns.push(apply_multiplier(&m, &g)?.0);
    }
    let kernel_at = |steps: &[i64]| -> Result<DMatrix<f64>> {
        let idx: Vec<usize> = src_idx
            .iter()
            .zip(steps)
            .map(|(&i, &s)| (i as i64 + s).rem_euclid(cells as i64) as usize)
            .collect();
        let mut k = DMatrix::zeros(op.dim_v(), op.dim_w());
        for (w, col) in columns.iter().enumerate() {
            let v = col.value_at(&idx);
            for r in 0..op.dim_v() {
                k[(r, w)] = v[r];
            }
        }
        Ok(k)
    };
    let mut rows = Vec::new();
    for d in directions {
        if d.len() != n || d.iter().all(|x| *x == 0) {
            return Err(Error::Input(format!("direction {d:?} must be a nonzero integer {n}-vector")));
        }
        let base: Vec<i64> = d.iter().map(|x| x * base_steps).collect();
        let k0 = kernel_at(&base)?;
        for &lambda in lambdas {
            let far: Vec<i64> = base.iter().map(|x| x * lambda as i64).collect();
            let k1 = kernel_at(&far)? * (lambda as f64).powi(n as i32 - 1);
            rows.push(HomogeneityRow { direction: d.clone(), lambda, residual: (k1 - &k0).norm() / k0.norm() });
        }
    }
    let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    Ok(HomogeneityReport {
        operator: op.name().to_string(),
        cells,
        mollifier_cells: 4.0,
        base_steps,
        rows,
        max_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldgen::BandLimitedField;
    use crate::rng::SeedStream;
    use rand::Rng;

    #[test]
    fn gradient_multiplier_inverts_i_xi() {
        let m = Multiplier::new(&Operator::gradient(3, 1).unwrap()).unwrap();
        let xi = [0.3, -1.2, 2.0];
        let mx = m.eval(&xi).unwrap();
        let prod: Complex64 = (0..3).map(|j| mx[(0, j)] * Complex64::new(0.0, xi[j])).sum();
        assert!((prod - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        let m2 = m.eval(&[0.6, -2.4, 4.0]).unwrap();
        for (a, b) in m2.iter().zip(mx.iter()) {
            assert!((a * 2.0 - b).norm() < 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn symmetric_gradient_left_inverse_and_errors() {
        let op = Operator::symmetric_gradient(2).unwrap();
        let m = Multiplier::new(&op).unwrap();
        assert!(left_inverse_residual(&m, &[1.0, 0.0]).unwrap() < 1e-10);
        let mut rng = SeedStream::new(1).rng("xi");
        for _ in 0..1000 {
            let xi = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            assert!(left_inverse_residual(&m, &xi).unwrap() < 1e-10);
        }
        assert!(matches!(m.eval(&[0.0, 0.0]), Err(Error::Domain(_))));
        assert!(Multiplier::new(&Operator::divergence(2).unwrap()).unwrap_err().is_precondition());
    }

    #[test]
    fn fft_round_trip() {
        let shape = [4, 6, 5];
        let orig: Vec<Complex64> = (0..120).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut d = orig.clone();
        fft_nd(&mut d, &shape, false);
        fft_nd(&mut d, &shape, true);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a / 120.0 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_recovers_mean_free_part() {
        let op = Operator::symmetric_gradient(2).unwrap();
        let grid = Grid::cube(2, 64, 0.0, 1.0, true).unwrap();
        let f = BandLimitedField::new(2, 2, &[0.0, 0.0], &[1.0, 1.0], 5, 8.0, 1.0);
        let u = GridField::sample_fn(&grid, 2, |x, out| {
            out.copy_from_slice(&crate::grid::Field::eval(&f, x));
            out[0] += 3.0;
        });
        let g = spectral_apply(&op, &u).unwrap();
        let back = fourier_reconstruct(&op, &g).unwrap();
        assert!(relative_error_mean_free(&back, &u) < 1e-8);
        // linearity and the zero field
        let zero = fourier_reconstruct(&op, &g.scale(0.0)).unwrap();
        assert!(zero.data().iter().all(|x| *x == 0.0));
        let twice = fourier_reconstruct(&op, &g.scale(2.0)).unwrap();
        for (a, b) in twice.data().iter().zip(back.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn data_with_mean_is_not_in_range() {
        let op = Operator::gradient(2, 1).unwrap();
        let grid = Grid::cube(2, 16, 0.0, 1.0, true).unwrap();
        let g = GridField::sample_fn(&grid, 2, |_, out| out.copy_from_slice(&[1.0, 0.0]));
        assert!(matches!(fourier_reconstruct(&op, &g), Err(Error::NotInRange(_))));
    }

    #[test]
    fn kernel_homogeneity_small_grid() {
        let op = Operator::gradient(2, 1).unwrap();
        let rep = kernel_homogeneity_check(&op, &[vec![1, 0], vec![1, 1]], &[1, 2], 256, 12).unwrap();
        for row in &rep.rows {
            if row.lambda == 1 {
                assert_eq!(row.residual, 0.0);
            } else {
                assert!(row.residual < 0.05, "{row:?}");
            }
        }
    }
}
