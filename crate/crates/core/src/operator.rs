//! First-order, homogeneous, constant-coefficient operators `Au = sum_j A_j d_j u`
//! and their Fourier symbols.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A differential operator from `V = R^dim_v`-valued to `W = R^dim_w`-valued
/// fields on `R^n`, stored as its `n` coefficient matrices (each `dim_w x dim_v`).
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    name: String,
    n: usize,
    dim_v: usize,
    dim_w: usize,
    coeffs: Vec<DMatrix<f64>>,
}

/// Plain-data description of an operator, as read from an operator file.
/// `a` holds `n` matrices, each given row-major as `dim_w` rows of `dim_v` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub n: usize,
    #[serde(rename = "dimV")]
    pub dim_v: usize,
    #[serde(rename = "dimW")]
    pub dim_w: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
}

/// The built-in operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// Full gradient of `R^N`-valued maps on `R^n`.
    Gradient { n: usize, components: usize },
    /// Symmetric gradient `(Du + Du^T)/2` of `R^n`-valued maps on `R^n`.
    SymmetricGradient { n: usize },
    /// Planar Wirtinger derivative.
    Wirtinger,
    /// Divergence of `R^n`-valued maps on `R^n`.
    Divergence { n: usize },
}

impl Operator {
    pub fn new(name: impl Into<String>, coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = coeffs.len();
        if n == 0 {
            return Err(Error::Input("operator needs at least one coefficient matrix".into()));
        }
        let (dim_w, dim_v) = coeffs[0].shape();
        if dim_v == 0 || dim_w == 0 {
            return Err(Error::Input("dimV and dimW must be at least 1".into()));
        }
        for (j, a) in coeffs.iter().enumerate() {
            if a.shape() != (dim_w, dim_v) {
                return Err(Error::Dimension(format!(
                    "coefficient A_{} has shape {:?}, expected ({dim_w}, {dim_v})",
                    j + 1,
                    a.shape()
                )));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::Input(format!("coefficient A_{} has non-finite entries", j + 1)));
            }
        }
        Ok(Self { name: name.into(), n, dim_v, dim_w, coeffs })
    }

    pub fn from_spec(spec: &OperatorSpec) -> Result<Self> {
        if spec.a.len() != spec.n {
            return Err(Error::Dimension(format!(
                "expected {} coefficient matrices, found {}",
                spec.n,
                spec.a.len()
            )));
        }
        let mut coeffs = Vec::with_capacity(spec.n);
        for (j, rows) in spec.a.iter().enumerate() {
            if rows.len() != spec.dim_w || rows.iter().any(|r| r.len() != spec.dim_v) {
                return Err(Error::Dimension(format!(
                    "A_{} must be {} rows of {} entries",
                    j + 1,
                    spec.dim_w,
                    spec.dim_v
                )));
            }
            coeffs.push(DMatrix::from_fn(spec.dim_w, spec.dim_v, |r, c| rows[r][c]));
        }
        let name = spec.name.clone().unwrap_or_else(|| "custom".to_string());
        Self::new(name, coeffs)
    }

    pub fn to_spec(&self) -> OperatorSpec {
        OperatorSpec {
            name: Some(self.name.clone()),
            n: self.n,
            dim_v: self.dim_v,
            dim_w: self.dim_w,
            a: self
                .coeffs
                .iter()
                .map(|m| (0..self.dim_w).map(|r| m.row(r).iter().copied().collect()).collect())
                .collect(),
        }
    }

    pub fn builtin(b: Builtin) -> Result<Self> {
        match b {
            Builtin::Gradient { n, components } => Self::gradient(n, components),
            Builtin::SymmetricGradient { n } => Self::symmetric_gradient(n),
            Builtin::Wirtinger => Ok(Self::wirtinger()),
            Builtin::Divergence { n } => Self::divergence(n),
        }
    }

    /// `(Du)_{a,j} = d_j u_a`, flattened row-major with index `a * n + j`.
    pub fn gradient(n: usize, components: usize) -> Result<Self> {
        if n == 0 || components == 0 {
            return Err(Error::Input("gradient needs n >= 1 and N >= 1".into()));
        }
        let coeffs = (0..n)
            .map(|j| {
                let mut a = DMatrix::zeros(components * n, components);
                for c in 0..components {
                    a[(c * n + j, c)] = 1.0;
                }
                a
            })
            .collect();
        Self::new(format!("gradient(n={n},N={components})"), coeffs)
    }

    /// Symmetric gradient with values flattened as full `n x n` matrices.
    pub fn symmetric_gradient(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("symmetric gradient needs n >= 1".into()));
        }
        let coeffs = (0..n)
            .map(|j| {
                let mut a = DMatrix::zeros(n * n, n);
                for row in 0..n {
                    for col in 0..n {
                        // (eps u)_{row,col} = (d_col u_row + d_row u_col) / 2
                        if col == j {
                            a[(row * n + col, row)] += 0.5;
                        }
                        if row == j {
                            a[(row * n + col, col)] += 0.5;
                        }
                    }
                }
                a
            })
            .collect();
        Self::new(format!("symmetric_gradient(n={n})"), coeffs)
    }

    /// `du = (d_1 u_1 + d_2 u_2, d_2 u_1 - d_1 u_2) / 2`.
    pub fn wirtinger() -> Self {
        let a1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.5]);
        let a2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        Self::new("wirtinger", vec![a1, a2]).expect("valid builtin")
    }

    pub fn divergence(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("divergence needs n >= 1".into()));
        }
        let coeffs = (0..n)
            .map(|j| {
                let mut a = DMatrix::zeros(1, n);
                a[(0, j)] = 1.0;
                a
            })
            .collect();
        Self::new(format!("divergence(n={n})"), coeffs)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim_v(&self) -> usize {
        self.dim_v
    }

    pub fn dim_w(&self) -> usize {
        self.dim_w
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn coeff(&self, j: usize) -> &DMatrix<f64> {
        &self.coeffs[j]
    }

    /// Fourier symbol `A[xi] = sum_j xi_j A_j` for complex `xi`.
    pub fn symbol(&self, xi: &[Complex64]) -> Result<SymbolMatrix> {
        if xi.len() != self.n {
            return Err(Error::Dimension(format!("xi has length {}, expected {}", xi.len(), self.n)));
        }
        let mut value = DMatrix::<Complex64>::zeros(self.dim_w, self.dim_v);
        for (x, a) in xi.iter().zip(&self.coeffs) {
            for (dst, src) in value.iter_mut().zip(a.iter()) {
                *dst += *x * *src;
            }
        }
        Ok(SymbolMatrix { xi: xi.to_vec(), value })
    }

    /// Symbol at a real frequency, kept real.
    pub fn real_symbol(&self, xi: &[f64]) -> Result<DMatrix<f64>> {
        if xi.len() != self.n {
            return Err(Error::Dimension(format!("xi has length {}, expected {}", xi.len(), self.n)));
        }
        let mut value = DMatrix::<f64>::zeros(self.dim_w, self.dim_v);
        for (x, a) in xi.iter().zip(&self.coeffs) {
            value += a * *x;
        }
        Ok(value)
    }

    /// The linear map `A: V (x) R^n -> W` with `A(M) = sum_j A_j M e_j`,
    /// i.e. the pointwise action of the operator on a gradient matrix
    /// (`M` is `dim_v x n`, column `j` holds the `j`-th partial derivative).
    pub fn apply_to_gradient(&self, m: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_w];
        for (j, a) in self.coeffs.iter().enumerate() {
            let col = a * m.column(j);
            for (o, c) in out.iter_mut().zip(col.iter()) {
                *o += c;
            }
        }
        out
    }

    /// Surface density `sum_j nu_j A_j jump` of a jump across a hyperplane with
    /// unit normal `nu`.
    pub fn jump_density(&self, normal: &[f64], jump: &[f64]) -> Vec<f64> {
        let sym = self.real_symbol(normal).expect("normal has length n");
        (0..self.dim_w)
            .map(|r| (0..self.dim_v).map(|c| sym[(r, c)] * jump[c]).sum())
            .collect()
    }

    /// Same operator with coefficients `A_j P` (a change of basis on `V`).
    pub fn with_v_basis_change(&self, p: &DMatrix<f64>) -> Result<Self> {
        if p.shape() != (self.dim_v, self.dim_v) {
            return Err(Error::Dimension("basis change must be dimV x dimV".into()));
        }
        Self::new(format!("{}*P", self.name), self.coeffs.iter().map(|a| a * p).collect())
    }
}

/// A symbol matrix `A[xi]` together with its frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolMatrix {
    pub xi: Vec<Complex64>,
    pub value: DMatrix<Complex64>,
}

impl SymbolMatrix {
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.value.nrows())
            .map(|r| (0..self.value.ncols()).map(|c| self.value[(r, c)] * v[c]).sum())
            .collect()
    }
}

/// `|A[xi] v|` for complex `xi` and `v`.
pub fn null_residual(op: &Operator, xi: &[Complex64], v: &[Complex64]) -> Result<f64> {
    if v.len() != op.dim_v() {
        return Err(Error::Dimension(format!("v has length {}, expected {}", v.len(), op.dim_v())));
    }
    let s = op.symbol(xi)?;
    Ok(s.apply(v).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn gradient_symbol_is_basis_vector() {
        let op = Operator::gradient(2, 1).unwrap();
        let s = op.symbol(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(s.value.shape(), (2, 1));
        assert_eq!(s.value[(0, 0)], c(1.0, 0.0));
        assert_eq!(s.value[(1, 0)], c(0.0, 0.0));
    }

    #[test]
    fn zero_frequency_gives_zero_symbol() {
        for op in [Operator::symmetric_gradient(3).unwrap(), Operator::wirtinger(), Operator::divergence(2).unwrap()] {
            let s = op.symbol(&vec![c(0.0, 0.0); op.n()]).unwrap();
            assert!(s.value.iter().all(|z| *z == c(0.0, 0.0)));
        }
    }

    #[test]
    fn wirtinger_symbol_matches_hand_assembly() {
        let op = Operator::wirtinger();
        let (x1, x2) = (c(0.3, -1.2), c(2.0, 0.5));
        let s = op.symbol(&[x1, x2]).unwrap().value;
        let expected = [[x1 * 0.5, x2 * 0.5], [x2 * 0.5, -x1 * 0.5]];
        for r in 0..2 {
            for k in 0..2 {
                assert!((s[(r, k)] - expected[r][k]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn symbol_rejects_wrong_length() {
        let op = Operator::wirtinger();
        assert!(matches!(op.symbol(&[c(1.0, 0.0)]), Err(Error::Dimension(_))));
    }

    #[test]
    fn invalid_operators_rejected() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 3);
        assert!(Operator::new("bad", vec![a.clone(), b]).is_err());
        let mut nan = a.clone();
        nan[(0, 0)] = f64::NAN;
        assert!(Operator::new("bad", vec![a, nan]).is_err());
        assert!(Operator::new("bad", vec![]).is_err());
    }

    #[test]
    fn symmetric_gradient_applied_to_matrix_is_symmetric_part() {
        let op = Operator::symmetric_gradient(2).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -4.0, 3.0]);
        let out = op.apply_to_gradient(&m);
        assert_eq!(out, vec![1.0, -1.0, -1.0, 3.0]);
    }

    #[test]
    fn jump_density_for_symmetric_gradient() {
        let op = Operator::symmetric_gradient(2).unwrap();
        let d = op.jump_density(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(d, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn spec_roundtrip() {
        let op = Operator::symmetric_gradient(3).unwrap();
        let back = Operator::from_spec(&op.to_spec()).unwrap();
        assert_eq!(back.coeffs(), op.coeffs());
    }

    proptest! {
        #[test]
        fn symbol_is_linear(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            xi in proptest::collection::vec(-2.0f64..2.0, 4),
            eta in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let op = Operator::symmetric_gradient(2).unwrap();
            let xi = [c(xi[0], xi[1]), c(xi[2], xi[3])];
            let eta = [c(eta[0], eta[1]), c(eta[2], eta[3])];
            let comb: Vec<_> = xi.iter().zip(&eta).map(|(x, e)| *x * a + *e * b).collect();
            let lhs = op.symbol(&comb).unwrap().value;
            let rhs = op.symbol(&xi).unwrap().value * c(a, 0.0) + op.symbol(&eta).unwrap().value * c(b, 0.0);
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).norm() < 1e-13);
            }
        }
    }
}
