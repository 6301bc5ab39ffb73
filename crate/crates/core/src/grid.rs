//! Uniform grids on boxes (or periodic tori) and vector-valued samples on them.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::operator::Operator;

/// Anything that can be evaluated pointwise as a map `R^n -> R^dim`.
pub trait Field: Sync {
    fn n(&self) -> usize;
    fn dim(&self) -> usize;
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}

impl Field for crate::poly::PolynomialField {
    fn n(&self) -> usize {
        crate::poly::PolynomialField::n(self)
    }
    fn dim(&self) -> usize {
        crate::poly::PolynomialField::dim(self)
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        crate::poly::PolynomialField::eval_into(self, x, out)
    }
}

/// `y -> inner((y - center) / scale)`: a field transported from the unit ball
/// at the origin to the ball of radius `scale` at `center`.
pub struct Rescaled<'a, F: Field + ?Sized> {
    pub inner: &'a F,
    pub center: Vec<f64>,
    pub scale: f64,
}

impl<F: Field + ?Sized> Field for Rescaled<'_, F> {
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let z: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| (a - c) / self.scale).collect();
        self.inner.eval_into(&z, out)
    }
}

/// Cell-centered uniform grid on `[lower, upper]`. Sample `i` along axis `k`
/// sits at `lower_k + (i + 1/2) h_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    shape: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    periodic: bool,
}

impl Grid {
    pub fn new(shape: Vec<usize>, lower: Vec<f64>, upper: Vec<f64>, periodic: bool) -> Result<Self> {
        let n = shape.len();
        if n == 0 || lower.len() != n || upper.len() != n {
            return Err(Error::Dimension("grid shape and box extents must have equal length >= 1".into()));
        }
        if shape.contains(&0) {
            return Err(Error::Input("grid needs at least one cell per axis".into()));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Input("box extents must satisfy lower < upper".into()));
        }
        Ok(Self { shape, lower, upper, periodic })
    }

    /// `cells^n` grid on the cube `[lo, hi]^n`.
    pub fn cube(n: usize, cells: usize, lo: f64, hi: f64, periodic: bool) -> Result<Self> {
        Self::new(vec![cells; n], vec![lo; n], vec![hi; n], periodic)
    }

    pub fn n(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent(axis) / self.shape[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.n()).map(|k| self.spacing(k)).fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.n()).map(|k| self.spacing(k)).fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.n()).map(|k| self.spacing(k)).product()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.n()];
        for k in (0..self.n()).rev() {
            idx[k] = flat % self.shape[k];
            flat /= self.shape[k];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &s)| acc * s + i)
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + (i as f64 + 0.5) * self.spacing(axis)
    }

    pub fn point_of(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().enumerate().map(|(k, &i)| self.coordinate(k, i)).collect()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.point_of(&self.multi_index(flat))
    }

    /// Index of the cell containing `x`, if inside the box.
    pub fn locate(&self, x: &[f64]) -> Option<Vec<usize>> {
        let mut idx = Vec::with_capacity(self.n());
        for k in 0..self.n() {
            let t = (x[k] - self.lower[k]) / self.spacing(k);
            if !(t >= 0.0) || t >= self.shape[k] as f64 {
                return None;
            }
            idx.push(t.floor() as usize);
        }
        Some(idx)
    }

    /// Flat indices of cells whose centers lie in the closed ball, in
    /// increasing order.
    pub fn cells_in_ball(&self, center: &[f64], radius: f64) -> Vec<usize> {
        let n = self.n();
        let mut lo = vec![0usize; n];
        let mut hi = vec![0usize; n];
        for k in 0..n {
            let h = self.spacing(k);
            let a = ((center[k] - radius - self.lower[k]) / h - 0.5).floor().max(0.0);
            let b = ((center[k] + radius - self.lower[k]) / h - 0.5).ceil().min(self.shape[k] as f64 - 1.0);
            if b < a {
                return Vec::new();
            }
            lo[k] = a as usize;
            hi[k] = b as usize;
        }
        let r2 = radius * radius;
        let mut out = Vec::new();
        let mut idx = lo.clone();
        loop {
            let d2: f64 = (0..n).map(|k| (self.coordinate(k, idx[k]) - center[k]).powi(2)).sum();
            if d2 <= r2 {
                out.push(self.flat_index(&idx));
            }
            // odometer increment, last axis fastest
            let mut k = n;
            loop {
                if k == 0 {
                    out.sort_unstable();
                    return out;
                }
                k -= 1;
                if idx[k] < hi[k] {
                    idx[k] += 1;
                    break;
                }
                idx[k] = lo[k];
            }
        }
    }

    /// True if the closed ball lies inside the (closed) box.
    pub fn contains_ball(&self, center: &[f64], radius: f64) -> bool {
        (0..self.n()).all(|k| center[k] - radius >= self.lower[k] - 1e-12 && center[k] + radius <= self.upper[k] + 1e-12)
    }
}

/// Samples of a `R^dim`-valued field at the cells of a grid, row-major over
/// cells with components innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: Grid,
    dim: usize,
    data: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid, dim: usize) -> Self {
        let len = grid.len() * dim;
        Self { grid, dim, data: vec![0.0; len] }
    }

    pub fn from_data(grid: Grid, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() * dim {
            return Err(Error::Dimension(format!("expected {} samples, got {}", grid.len() * dim, data.len())));
        }
        Ok(Self { grid, dim, data })
    }

    /// Samples `f` at every cell center.
    pub fn sample<F: Field + ?Sized>(grid: &Grid, f: &F) -> Self {
        let dim = f.dim();
        let mut data = vec![0.0; grid.len() * dim];
        for (i, chunk) in data.chunks_mut(dim).enumerate() {
            f.eval_into(&grid.point(i), chunk);
        }
        Self { grid: grid.clone(), dim, data }
    }

    pub fn sample_fn(grid: &Grid, dim: usize, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut data = vec![0.0; grid.len() * dim];
        for (i, chunk) in data.chunks_mut(dim).enumerate() {
            f(&grid.point(i), chunk);
        }
        Self { grid: grid.clone(), dim, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn value(&self, flat: usize) -> &[f64] {
        &self.data[flat * self.dim..(flat + 1) * self.dim]
    }

    pub fn value_mut(&mut self, flat: usize) -> &mut [f64] {
        &mut self.data[flat * self.dim..(flat + 1) * self.dim]
    }

    pub fn value_at(&self, idx: &[usize]) -> &[f64] {
        self.value(self.grid.flat_index(idx))
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.dim).copied().collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { grid: self.grid.clone(), dim: self.dim, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        assert_eq!((self.dim, self.data.len()), (other.dim, other.data.len()));
        Self {
            grid: self.grid.clone(),
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(x, y)| x + a * y).collect(),
        }
    }

    /// Mean of each component over the whole grid.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for chunk in self.data.chunks(self.dim) {
            for (a, b) in m.iter_mut().zip(chunk) {
                *a += b;
            }
        }
        let len = self.grid.len() as f64;
        m.iter_mut().for_each(|a| *a /= len);
        m
    }

    pub fn l2_norm(&self) -> f64 {
        (self.data.iter().map(|x| x * x).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// Cyclic shift by whole cells (periodic grids).
    pub fn roll(&self, shift: &[isize]) -> Self {
        let mut out = Self::zeros(self.grid.clone(), self.dim);
        for flat in 0..self.grid.len() {
            let idx = self.grid.multi_index(flat);
            let target: Vec<usize> = idx
                .iter()
                .zip(shift)
                .zip(&self.grid.shape)
                .map(|((&i, &s), &len)| (i as isize + s).rem_euclid(len as isize) as usize)
                .collect();
            let t = self.grid.flat_index(&target);
            out.value_mut(t).copy_from_slice(self.value(flat));
        }
        out
    }

    /// Finite-difference partial derivative along `axis`: centered second order
    /// in the interior, periodic wrap on tori, one-sided second order at box edges.
    pub fn partial(&self, axis: usize) -> Result<Self> {
        let len = self.grid.shape[axis];
        if len < 3 {
            return Err(Error::Resolution(format!("axis {axis} needs at least 3 cells for differences")));
        }
        let h = self.grid.spacing(axis);
        let stride = self.grid.shape[axis + 1..].iter().product::<usize>();
        let mut out = Self::zeros(self.grid.clone(), self.dim);
        for flat in 0..self.grid.len() {
            let i = (flat / stride) % len;
            let at = |j: usize| flat - i * stride + j * stride;
            for c in 0..self.dim {
                let f = |j: usize| self.data[at(j) * self.dim + c];
                let d = if i > 0 && i + 1 < len {
                    (f(i + 1) - f(i - 1)) / (2.0 * h)
                } else if self.grid.periodic {
                    let (p, m) = ((i + 1) % len, (i + len - 1) % len);
                    (f(p) - f(m)) / (2.0 * h)
                } else if i == 0 {
                    (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
                } else {
                    (3.0 * f(i) - 4.0 * f(i - 1) + f(i - 2)) / (2.0 * h)
                };
                out.data[flat * self.dim + c] = d;
            }
        }
        Ok(out)
    }

    /// `Au = sum_j A_j d_j u` by finite differences.
    pub fn apply_operator(&self, op: &Operator) -> Result<Self> {
        if op.n() != self.grid.n() || op.dim_v() != self.dim {
            return Err(Error::Dimension(format!(
                "field is R^{} -> R^{}, operator expects R^{} -> R^{}",
                self.grid.n(),
                self.dim,
                op.n(),
                op.dim_v()
            )));
        }
        let mut out = Self::zeros(self.grid.clone(), op.dim_w());
        for j in 0..op.n() {
            let d = self.partial(j)?;
            let a = op.coeff(j);
            for flat in 0..self.grid.len() {
                let src = d.value(flat);
                let dst = out.value_mut(flat);
                for w in 0..op.dim_w() {
                    dst[w] += (0..op.dim_v()).map(|v| a[(w, v)] * src[v]).sum::<f64>();
                }
            }
        }
        Ok(out)
    }

    /// Binary layout, little-endian: `u64 n`, `n x u64` cells per axis,
    /// `n x f64` lower corner, `n x f64` upper corner, `u64 dimV`, then the
    /// samples as `f64`, row-major over cells with components innermost.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.grid.n() as u64).to_le_bytes())?;
        for &s in &self.grid.shape {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for x in self.grid.lower.iter().chain(&self.grid.upper) {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary layout of [`GridField::write_binary`]; `periodic`
    /// is not stored in the file and must be supplied.
    pub fn read_binary<R: Read>(mut r: R, periodic: bool) -> Result<Self> {
        fn u64_of<R: Read>(r: &mut R) -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|e| Error::Input(format!("truncated grid file: {e}")))?;
            Ok(u64::from_le_bytes(b))
        }
        fn f64_of<R: Read>(r: &mut R) -> Result<f64> {
            Ok(f64::from_bits(u64_of(r)?))
        }
        let n = u64_of(&mut r)? as usize;
        if n == 0 || n > 16 {
            return Err(Error::Input(format!("implausible dimension {n} in grid file")));
        }
        let shape = (0..n).map(|_| u64_of(&mut r).map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
        let lower = (0..n).map(|_| f64_of(&mut r)).collect::<Result<Vec<_>>>()?;
        let upper = (0..n).map(|_| f64_of(&mut r)).collect::<Result<Vec<_>>>()?;
        let dim = u64_of(&mut r)? as usize;
        let grid = Grid::new(shape, lower, upper, periodic)?;
        let count = grid.len().checked_mul(dim).ok_or_else(|| Error::Input("grid too large".into()))?;
        let data = (0..count).map(|_| f64_of(&mut r)).collect::<Result<Vec<_>>>()?;
        Self::from_data(grid, dim, data)
    }

    /// CSV with columns `x1..xn, u1..u_dim`, one row per cell.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header: Vec<String> = (1..=self.grid.n())
            .map(|k| format!("x{k}"))
            .chain((1..=self.dim).map(|c| format!("u{c}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for flat in 0..self.grid.len() {
            let row: Vec<String> =
                self.grid.point(flat).iter().chain(self.value(flat)).map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
