//! Degree-by-degree polynomial null-spaces and the finite-dimensional
//! null-space (FDN) verdict.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ellipticity::{complex_ellipticity_margin, SphereSearchConfig};
use crate::error::{Error, Result};
use crate::operator::Operator;
use crate::poly::{apply_to_polynomial, monomials_of_degree, PolynomialField};

/// Singular values below `RANK_TOLERANCE * sigma_max` count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Number of consecutive vanishing degrees required above `l`.
pub const GUARD_BAND: usize = 2;
pub const DEFAULT_DEGREE_CAP: usize = 8;

/// Matrix of the linear map from coefficients of homogeneous degree-`d`
/// `V`-valued polynomials to coefficients of their images (degree `d - 1`,
/// `W`-valued). Columns and rows are component-major over graded-lex monomials.
pub fn coefficient_map(op: &Operator, d: u32) -> DMatrix<f64> {
    let n = op.n();
    let domain = monomials_of_degree(n, d);
    let cols = op.dim_v() * domain.len();
    if d == 0 {
        return DMatrix::zeros(0, cols);
    }
    let codomain = monomials_of_degree(n, d - 1);
    let rows = op.dim_w() * codomain.len();
    let mut m = DMatrix::zeros(rows, cols);
    for c in 0..op.dim_v() {
        for (k, alpha) in domain.iter().enumerate() {
            let p = PolynomialField::monomial(n, op.dim_v(), c, alpha.clone(), 1.0);
            let image = apply_to_polynomial(op, &p).expect("shapes agree");
            let v = image.coefficient_vector(&codomain);
            for (r, x) in v.into_iter().enumerate() {
                m[(r, c * domain.len() + k)] = x;
            }
        }
    }
    m
}

/// Orthonormal basis of the kernel of `m` (columns of the returned matrix),
/// from the right singular vectors of a zero-padded square copy.
pub fn kernel_of(m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(cols, cols);
    }
    let rows = m.nrows().max(cols);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), m.shape()).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let threshold = RANK_TOLERANCE * sigma_max;
    let kernel_rows: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| sigma_max == 0.0 || svd.singular_values[i] <= threshold).collect();
    let mut k = DMatrix::zeros(cols, kernel_rows.len());
    for (out, &i) in kernel_rows.iter().enumerate() {
        let mut v: Vec<f64> = v_t.row(i).iter().copied().collect();
        // deterministic sign: largest-magnitude entry positive
        let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (r, x) in v.into_iter().enumerate() {
            k[(r, out)] = x;
        }
    }
    k
}

/// Basis (unit coefficient norm) of the homogeneous degree-`d` polynomials in
/// the null-space of the operator.
pub fn homogeneous_kernel_basis(op: &Operator, d: u32) -> Vec<PolynomialField> {
    let m = coefficient_map(op, d);
    let k = kernel_of(&m);
    let domain = monomials_of_degree(op.n(), d);
    (0..k.ncols())
        .map(|j| {
            let v: Vec<f64> = k.column(j).iter().copied().collect();
            PolynomialField::from_coefficient_vector(op.n(), op.dim_v(), &domain, &v)
        })
        .collect()
}

/// Null-space basis among polynomials of degree at most `max_degree`. Since
/// the operator is homogeneous, this is the union of the homogeneous bases.
pub fn kernel_basis_up_to(op: &Operator, max_degree: u32) -> Vec<PolynomialField> {
    (0..=max_degree).flat_map(|d| homogeneous_kernel_basis(op, d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FdnVerdict {
    /// Null-space consists of polynomials of degree at most `l`, of dimension `total_dim`.
    Fdn { l: usize, total_dim: usize },
    /// Nonzero kernel found too close to the degree cap to conclude.
    NotFdnUpTo { cap: usize },
}

impl FdnVerdict {
    pub fn is_fdn(&self) -> bool {
        matches!(self, FdnVerdict::Fdn { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub complex_margin: f64,
    pub complex_elliptic: bool,
    /// FDN together with complex ellipticity, or neither.
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullspaceReport {
    pub operator: String,
    pub degree_cap: usize,
    pub dims_per_degree: Vec<usize>,
    pub stabilization_degree: Option<usize>,
    pub verdict: FdnVerdict,
    /// The FDN verdict rests on a guard band of vanishing degrees, not a proof.
    pub heuristic: String,
    pub cross_check: Option<CrossCheck>,
}

/// Kernel dimensions for homogeneous degrees `0..=cap`.
pub fn kernel_dims(op: &Operator, cap: usize) -> Vec<usize> {
    (0..=cap as u32).map(|d| kernel_of(&coefficient_map(op, d)).ncols()).collect()
}

/// Verdict from per-degree dimensions: FDN with `l` the last nonzero degree,
/// provided at least [`GUARD_BAND`] vanishing degrees follow it below the cap.
pub fn verdict_from_dims(dims: &[usize]) -> (Option<usize>, FdnVerdict) {
    let cap = dims.len() - 1;
    let last_nonzero = dims.iter().rposition(|&d| d > 0);
    match last_nonzero {
        Some(l) if cap - l >= GUARD_BAND => {
            (Some(l), FdnVerdict::Fdn { l, total_dim: dims.iter().sum() })
        }
        Some(_) => (None, FdnVerdict::NotFdnUpTo { cap }),
        None => (Some(0), FdnVerdict::Fdn { l: 0, total_dim: 0 }),
    }
}

pub fn fdn_report_unchecked(op: &Operator, cap: usize) -> Result<NullspaceReport> {
    if cap < 2 {
        return Err(Error::Input(format!("degree cap must be at least 2, got {cap}")));
    }
    let dims = kernel_dims(op, cap);
    let (stabilization_degree, verdict) = verdict_from_dims(&dims);
    Ok(NullspaceReport {
        operator: op.name().to_string(),
        degree_cap: cap,
        dims_per_degree: dims,
        stabilization_degree,
        verdict,
        heuristic: format!(
            "FDN declared when at least {GUARD_BAND} consecutive degrees below the cap have trivial kernel"
        ),
        cross_check: None,
    })
}

/// Kernel dimensions up to `cap`, FDN verdict, and the complex-ellipticity cross-check.
pub fn fdn_report(op: &Operator, cap: usize, sphere: &SphereSearchConfig) -> Result<NullspaceReport> {
    let mut report = fdn_report_unchecked(op, cap)?;
    let complex = complex_ellipticity_margin(op, sphere);
    let complex_elliptic = complex.margin > sphere.tolerance;
    report.cross_check = Some(CrossCheck {
        complex_margin: complex.margin,
        complex_elliptic,
        agrees: complex_elliptic == report.verdict.is_fdn(),
    });
    Ok(report)
}

/// Full null-space basis when the operator has FDN up to `cap`.
pub fn require_fdn(op: &Operator, cap: usize) -> Result<(usize, Vec<PolynomialField>)> {
    let report = fdn_report_unchecked(op, cap)?;
    match report.verdict {
        FdnVerdict::Fdn { l, .. } => Ok((l, kernel_basis_up_to(op, l as u32))),
        FdnVerdict::NotFdnUpTo { cap } => Err(Error::NotFdn(format!(
            "{}: polynomial kernel still nonzero near degree {cap} (dims {:?}); no finite-dimensional projection exists",
            op.name(),
            report.dims_per_degree
        ))),
    }
}
