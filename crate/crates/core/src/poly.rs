//! Vector-valued polynomials on `R^n` stored as multi-index coefficient tables.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::operator::Operator;

/// Exponent vector `alpha` of the monomial `x^alpha`. Ordered graded
/// lexicographically: lower total degree first, then `x_1^d` before `x_1^{d-1} x_2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(&a, &xi)| xi.powi(a as i32)).product()
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All multi-indices in `n` variables with total degree exactly `d`, in graded
/// lexicographic order.
pub fn monomials_of_degree(n: usize, d: u32) -> Vec<MultiIndex> {
    fn rec(n: usize, d: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if prefix.len() + 1 == n {
            prefix.push(d);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for a in (0..=d).rev() {
            prefix.push(a);
            rec(n, d - a, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    rec(n, d, &mut Vec::with_capacity(n), &mut out);
    out
}

/// All multi-indices with total degree at most `d`.
pub fn monomials_up_to(n: usize, d: u32) -> Vec<MultiIndex> {
    (0..=d).flat_map(|k| monomials_of_degree(n, k)).collect()
}

/// A polynomial map `R^n -> R^dim`. Coefficients are keyed by
/// `(component, multi-index)`; zero entries are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialField {
    n: usize,
    dim: usize,
    coeffs: BTreeMap<(usize, MultiIndex), f64>,
}

impl PolynomialField {
    pub fn zero(n: usize, dim: usize) -> Self {
        Self { n, dim, coeffs: BTreeMap::new() }
    }

    pub fn monomial(n: usize, dim: usize, component: usize, alpha: MultiIndex, coeff: f64) -> Self {
        let mut p = Self::zero(n, dim);
        p.add_term(component, alpha, coeff);
        p
    }

    /// Builds from `(component, exponents, coefficient)` triples.
    pub fn from_terms(n: usize, dim: usize, terms: &[(usize, &[u32], f64)]) -> Result<Self> {
        let mut p = Self::zero(n, dim);
        for (c, alpha, v) in terms {
            if *c >= dim || alpha.len() != n {
                return Err(Error::Dimension(format!("term ({c}, {alpha:?}) does not fit n={n}, dim={dim}")));
            }
            p.add_term(*c, MultiIndex(alpha.to_vec()), *v);
        }
        Ok(p)
    }

    /// Affine map `x -> value + matrix x` (`matrix` is `dim x n`).
    pub fn affine(value: &[f64], matrix: &DMatrix<f64>) -> Self {
        let (dim, n) = matrix.shape();
        let mut p = Self::zero(n, dim);
        for c in 0..dim {
            p.add_term(c, MultiIndex::zero(n), value[c]);
            for j in 0..n {
                let mut a = vec![0; n];
                a[j] = 1;
                p.add_term(c, MultiIndex(a), matrix[(c, j)]);
            }
        }
        p
    }

    pub fn add_term(&mut self, component: usize, alpha: MultiIndex, coeff: f64) {
        assert!(component < self.dim && alpha.n() == self.n, "term does not fit polynomial shape");
        if coeff == 0.0 {
            return;
        }
        let key = (component, alpha);
        let entry = self.coeffs.entry(key.clone()).or_insert(0.0);
        *entry += coeff;
        if *entry == 0.0 {
            self.coeffs.remove(&key);
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, &MultiIndex, f64)> {
        self.coeffs.iter().map(|((c, a), v)| (*c, a, *v))
    }

    pub fn coeff(&self, component: usize, alpha: &MultiIndex) -> f64 {
        self.coeffs.get(&(component, alpha.clone())).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Largest total degree with a nonzero coefficient; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.coeffs.keys().map(|(_, a)| a.degree()).max()
    }

    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn coeff_max_norm(&self) -> f64 {
        self.coeffs.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for ((c, a), v) in &self.coeffs {
            out[*c] += v * a.eval(x);
        }
    }

    /// Partial derivative with respect to `x_j`.
    pub fn derivative(&self, j: usize) -> Self {
        let mut out = Self::zero(self.n, self.dim);
        for ((c, a), v) in &self.coeffs {
            if a.0[j] > 0 {
                let mut b = a.clone();
                b.0[j] -= 1;
                out.add_term(*c, b, v * a.0[j] as f64);
            }
        }
        out
    }

    /// Jacobian at `x`: `dim x n`, column `j` is the `j`-th partial derivative.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.n);
        for j in 0..self.n {
            let d = self.derivative(j).eval(x);
            for c in 0..self.dim {
                m[(c, j)] = d[c];
            }
        }
        m
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.n, self.dim);
        for ((c, a), v) in &self.coeffs {
            out.add_term(*c, a.clone(), v * s);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.n, self.dim), (other.n, other.dim), "shape mismatch");
        let mut out = self.clone();
        for ((c, a), v) in &other.coeffs {
            out.add_term(*c, a.clone(), *v);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// `sum_k w_k p_k`.
    pub fn linear_combination(n: usize, dim: usize, weights: &[f64], polys: &[PolynomialField]) -> Self {
        let mut out = Self::zero(n, dim);
        for (w, p) in weights.iter().zip(polys) {
            for ((c, a), v) in &p.coeffs {
                out.add_term(*c, a.clone(), w * v);
            }
        }
        out
    }

    /// Composition with an affine change of variables: `q(z) = p(center + scale * z)`.
    pub fn pullback(&self, center: &[f64], scale: f64) -> Self {
        let mut out = Self::zero(self.n, self.dim);
        for ((c, a), v) in &self.coeffs {
            // expand prod_i (center_i + scale z_i)^{a_i} binomially
            let mut partial: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), *v)];
            for (i, &ai) in a.0.iter().enumerate() {
                let mut next = Vec::with_capacity(partial.len() * (ai as usize + 1));
                for (prefix, w) in &partial {
                    for k in 0..=ai {
                        let coeff = binomial(ai, k) * center[i].powi((ai - k) as i32) * scale.powi(k as i32);
                        if coeff == 0.0 {
                            continue;
                        }
                        let mut e = prefix.clone();
                        e.push(k);
                        next.push((e, w * coeff));
                    }
                }
                partial = next;
            }
            for (e, w) in partial {
                out.add_term(*c, MultiIndex(e), w);
            }
        }
        out
    }

    /// `q(z) = p(z + shift)`.
    pub fn translate(&self, shift: &[f64]) -> Self {
        self.pullback(shift, 1.0)
    }

    /// Pointwise product of component `a` of `self` with component `b` of
    /// `other`, as a scalar polynomial.
    pub fn component_product(&self, a: usize, other: &Self, b: usize) -> Self {
        let mut out = Self::zero(self.n, 1);
        for ((ca, ea), va) in self.coeffs.iter().filter(|((c, _), _)| *c == a) {
            let _ = ca;
            for ((_, eb), vb) in other.coeffs.iter().filter(|((c, _), _)| *c == b) {
                let e: Vec<u32> = ea.0.iter().zip(&eb.0).map(|(x, y)| x + y).collect();
                out.add_term(0, MultiIndex(e), va * vb);
            }
        }
        out
    }

    /// Coefficients listed against `basis` in component-major order
    /// (`[c0: basis..., c1: basis..., ...]`).
    pub fn coefficient_vector(&self, basis: &[MultiIndex]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim * basis.len());
        for c in 0..self.dim {
            for a in basis {
                out.push(self.coeff(c, a));
            }
        }
        out
    }

    pub fn from_coefficient_vector(n: usize, dim: usize, basis: &[MultiIndex], v: &[f64]) -> Self {
        let mut p = Self::zero(n, dim);
        for c in 0..dim {
            for (k, a) in basis.iter().enumerate() {
                p.add_term(c, a.clone(), v[c * basis.len() + k]);
            }
        }
        p
    }
}

impl fmt::Display for PolynomialField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for c in 0..self.dim {
            if c > 0 {
                write!(f, ", ")?;
            }
            let mut first = true;
            for ((_, a), v) in self.coeffs.iter().filter(|((cc, _), _)| *cc == c) {
                if !first {
                    write!(f, " + ")?;
                }
                first = false;
                write!(f, "{v}")?;
                for (i, e) in a.0.iter().enumerate() {
                    match e {
                        0 => {}
                        1 => write!(f, "*x{}", i + 1)?,
                        _ => write!(f, "*x{}^{}", i + 1, e)?,
                    }
                }
            }
            if first {
                write!(f, "0")?;
            }
        }
        write!(f, ")")
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `Ap = sum_j A_j d_j p`, computed exactly on the coefficient table.
pub fn apply_to_polynomial(op: &Operator, p: &PolynomialField) -> Result<PolynomialField> {
    if p.n() != op.n() || p.dim() != op.dim_v() {
        return Err(Error::Dimension(format!(
            "polynomial is R^{} -> R^{}, operator expects R^{} -> R^{}",
            p.n(),
            p.dim(),
            op.n(),
            op.dim_v()
        )));
    }
    let mut out = PolynomialField::zero(op.n(), op.dim_w());
    for j in 0..op.n() {
        let a = op.coeff(j);
        for (c, alpha, v) in p.derivative(j).terms() {
            for w in 0..op.dim_w() {
                let entry = a[(w, c)];
                if entry != 0.0 {
                    out.add_term(w, alpha.clone(), entry * v);
                }
            }
        }
    }
    Ok(out)
}
