//! Real and complex ellipticity margins by seeded sphere sampling followed by
//! pattern-search refinement of the smallest singular value of the symbol.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::Operator;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereSearchConfig {
    pub samples: usize,
    pub refine_iterations: usize,
    /// Number of best samples handed to the refinement stage.
    pub refine_starts: usize,
    pub seed: u64,
    /// Margins at or below this value are reported as non-elliptic.
    pub tolerance: f64,
}

impl Default for SphereSearchConfig {
    fn default() -> Self {
        Self { samples: 4000, refine_iterations: 400, refine_starts: 6, seed: 0x5eed, tolerance: 1e-7 }
    }
}

/// Minimum over the real unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMargin {
    pub margin: f64,
    pub argmin_xi: Vec<f64>,
    /// Unit vector in `V` achieving the smallest singular value at `argmin_xi`.
    pub null_vector: Vec<f64>,
    pub sample_count: usize,
    pub refinement_iterations: usize,
}

/// Minimum over the complex unit sphere; complex vectors as `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMargin {
    pub margin: f64,
    pub argmin_xi: Vec<[f64; 2]>,
    pub null_vector: Vec<[f64; 2]>,
    pub sample_count: usize,
    pub refinement_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub operator: String,
    pub real_margin: f64,
    pub complex_margin: f64,
    pub argmin_xi: Vec<f64>,
    pub complex_argmin_xi: Vec<[f64; 2]>,
    pub sample_count: usize,
    pub refinement_iterations: usize,
    pub tolerance: f64,
    pub elliptic: bool,
    pub complex_elliptic: bool,
}

/// Smallest singular value of the real symbol and a unit vector realizing it.
/// When `dim_w < dim_v` the symbol has a kernel and the value is (numerically) zero.
pub fn real_sigma_min(op: &Operator, xi: &[f64]) -> (f64, Vec<f64>) {
    let s = op.real_symbol(xi).expect("xi has length n");
    let gram = s.transpose() * &s;
    let eig = SymmetricEigen::new(gram);
    let k = argmin(eig.eigenvalues.iter().copied());
    let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    let sv = &s * nalgebra::DVector::from_column_slice(&v);
    (sv.norm(), v)
}

/// Smallest singular value of the complex symbol and a unit vector realizing it.
pub fn complex_sigma_min(op: &Operator, xi: &[Complex64]) -> (f64, Vec<Complex64>) {
    let s = op.symbol(xi).expect("xi has length n").value;
    let gram: DMatrix<Complex64> = s.adjoint() * &s;
    let eig = SymmetricEigen::new(gram);
    let k = argmin(eig.eigenvalues.iter().copied());
    let v: Vec<Complex64> = eig.eigenvectors.column(k).iter().copied().collect();
    let sv = &s * nalgebra::DVector::from_column_slice(&v);
    (sv.norm(), v)
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
}

fn normalize(p: &mut [f64]) {
    let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        p.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Minimizes `f` over the unit sphere of `R^dim`: seeded Gaussian-normalized
/// samples plus coordinate axes, then coordinate pattern search from the best
/// few. Returns the best point, its value, and the number of refinement sweeps.
fn sphere_minimize<F>(dim: usize, cfg: &SphereSearchConfig, label: &str, extra: &[Vec<f64>], f: F) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> f64,
{
    let mut rng = SeedStream::new(cfg.seed).rng(label);
    let mut candidates: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cfg.samples + 2 * dim + extra.len());
    for k in 0..dim {
        for sign in [1.0, -1.0] {
            let mut p = vec![0.0; dim];
            p[k] = sign;
            let v = f(&p);
            candidates.push((p, v));
        }
    }
    for p in extra {
        let mut p = p.clone();
        normalize(&mut p);
        let v = f(&p);
        candidates.push((p, v));
    }
    for _ in 0..cfg.samples {
        let mut p: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut p);
        let v = f(&p);
        candidates.push((p, v));
    }
    // stable sort keeps ties in generation order
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut best = candidates[0].clone();
    let mut sweeps_used = 0;
    for (start, start_val) in candidates.into_iter().take(cfg.refine_starts.max(1)) {
        let (p, v, sweeps) = pattern_search(start, start_val, cfg.refine_iterations, &f);
        sweeps_used = sweeps_used.max(sweeps);
        if v < best.1 {
            best = (p, v);
        }
    }
    (best.0, best.1, sweeps_used)
}

fn pattern_search<F>(mut p: Vec<f64>, mut val: f64, max_sweeps: usize, f: &F) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> f64,
{
    let dim = p.len();
    let mut step = 0.25;
    let mut sweeps = 0;
    while sweeps < max_sweeps && step > 1e-15 {
        sweeps += 1;
        let mut best_trial: Option<(Vec<f64>, f64)> = None;
        for k in 0..dim {
            for sign in [1.0, -1.0] {
                let mut q = p.clone();
                q[k] += sign * step;
                normalize(&mut q);
                let v = f(&q);
                if v < best_trial.as_ref().map_or(val, |b| b.1) {
                    best_trial = Some((q, v));
                }
            }
        }
        match best_trial {
            Some((q, v)) => {
                p = q;
                val = v;
            }
            None => step *= 0.5,
        }
    }
    (p, val, sweeps)
}

pub fn ellipticity_margin(op: &Operator, cfg: &SphereSearchConfig) -> RealMargin {
    let n = op.n();
    let (xi, margin, sweeps) = sphere_minimize(n, cfg, "real-sphere", &[], |p| real_sigma_min(op, p).0);
    let (_, v) = real_sigma_min(op, &xi);
    RealMargin { margin, argmin_xi: xi, null_vector: v, sample_count: cfg.samples, refinement_iterations: sweeps }
}

fn split_complex(p: &[f64]) -> Vec<Complex64> {
    let n = p.len() / 2;
    (0..n).map(|j| Complex64::new(p[j], p[n + j])).collect()
}

/// Margin over the complex unit sphere, parameterized as the real sphere in
/// `R^{2n}` (real parts first, then imaginary parts). The search is seeded with
/// the real minimizer, so the result never exceeds the real margin.
pub fn complex_ellipticity_margin(op: &Operator, cfg: &SphereSearchConfig) -> ComplexMargin {
    let n = op.n();
    let real = ellipticity_margin(op, cfg);
    let mut embedded = real.argmin_xi.clone();
    embedded.extend(std::iter::repeat_n(0.0, n));
    let (p, margin, sweeps) =
        sphere_minimize(2 * n, cfg, "complex-sphere", &[embedded], |p| complex_sigma_min(op, &split_complex(p)).0);
    let xi = split_complex(&p);
    let (_, v) = complex_sigma_min(op, &xi);
    ComplexMargin {
        margin,
        argmin_xi: xi.iter().map(|z| [z.re, z.im]).collect(),
        null_vector: v.iter().map(|z| [z.re, z.im]).collect(),
        sample_count: cfg.samples,
        refinement_iterations: sweeps,
    }
}

pub fn ellipticity_report(op: &Operator, cfg: &SphereSearchConfig) -> EllipticityReport {
    let real = ellipticity_margin(op, cfg);
    let complex = complex_ellipticity_margin(op, cfg);
    EllipticityReport {
        operator: op.name().to_string(),
        real_margin: real.margin,
        complex_margin: complex.margin.min(real.margin),
        argmin_xi: real.argmin_xi,
        complex_argmin_xi: complex.argmin_xi,
        sample_count: cfg.samples,
        refinement_iterations: real.refinement_iterations.max(complex.refinement_iterations),
        tolerance: cfg.tolerance,
        elliptic: real.margin > cfg.tolerance,
        complex_elliptic: complex.margin > cfg.tolerance,
    }
}

/// A real direction `xi` and unit `v` with `A[xi] v ~ 0`: every `f(x . xi) v`
/// then lies in the null-space. Returns `None` when the operator is elliptic at
/// the sampled resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullWitness {
    pub xi: Vec<f64>,
    pub v: Vec<f64>,
    pub residual: f64,
}

pub fn directional_null_witness(op: &Operator, cfg: &SphereSearchConfig) -> Option<NullWitness> {
    let real = ellipticity_margin(op, cfg);
    if real.margin >= cfg.tolerance {
        return None;
    }
    let (residual, v) = real_sigma_min(op, &real.argmin_xi);
    Some(NullWitness { xi: real.argmin_xi, v, residual })
}

/// Fails with [`Error::NotElliptic`] unless the real margin exceeds the tolerance.
pub fn require_elliptic(op: &Operator, cfg: &SphereSearchConfig) -> Result<f64> {
    let real = ellipticity_margin(op, cfg);
    if real.margin > cfg.tolerance {
        Ok(real.margin)
    } else {
        Err(Error::NotElliptic(format!(
            "{}: symbol loses injectivity at xi = {:?} (margin {:.3e})",
            op.name(),
            real.argmin_xi,
            real.margin
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SphereSearchConfig {
        SphereSearchConfig { samples: 500, ..Default::default() }
    }

    #[test]
    fn gradient_margin_is_one() {
        for (n, comps) in [(1, 1), (2, 1), (3, 2)] {
            let op = Operator::gradient(n, comps).unwrap();
            let r = ellipticity_margin(&op, &cfg());
            assert!((r.margin - 1.0).abs() < 1e-9, "{}", r.margin);
            let c = complex_ellipticity_margin(&op, &cfg());
            assert!((c.margin - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_gradient_margin_matches_closed_form() {
        // |eps[xi] v|^2 = (|v|^2 |xi|^2 + (v.xi)^2) / 2, minimized at v orthogonal to xi
        let op = Operator::symmetric_gradient(2).unwrap();
        let mut best = f64::INFINITY;
        for i in 0..360 {
            let t = i as f64 * std::f64::consts::PI / 180.0;
            let xi = [t.cos(), t.sin()];
            for k in 0..360 {
                let s = k as f64 * std::f64::consts::PI / 180.0;
                let v = [s.cos(), s.sin()];
                let dot = xi[0] * v[0] + xi[1] * v[1];
                best = best.min(((1.0 + dot * dot) / 2.0).sqrt());
            }
        }
        let r = ellipticity_margin(&op, &cfg());
        assert!((r.margin - best).abs() < 1e-6);
        assert!((r.margin - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        let c = complex_ellipticity_margin(&op, &cfg());
        assert!(c.margin > 0.1);
        assert!(c.margin <= r.margin + 1e-15);
    }

    #[test]
    fn wirtinger_real_and_complex() {
        let op = Operator::wirtinger();
        let r = ellipticity_margin(&op, &cfg());
        assert!((r.margin - 0.5).abs() < 1e-9);
        let c = complex_ellipticity_margin(&op, &cfg());
        assert!(c.margin < 1e-6, "{}", c.margin);
        let xi = split_complex(&c.argmin_xi.iter().map(|z| z[0]).chain(c.argmin_xi.iter().map(|z| z[1])).collect::<Vec<_>>());
        let v: Vec<Complex64> = c.null_vector.iter().map(|z| Complex64::new(z[0], z[1])).collect();
        assert!(crate::operator::null_residual(&op, &xi, &v).unwrap() < 1e-6);
    }

    #[test]
    fn witnesses() {
        let div = Operator::divergence(2).unwrap();
        let w = directional_null_witness(&div, &cfg()).expect("divergence is not elliptic");
        assert!(w.residual <= 10.0 * cfg().tolerance);
        let xi_norm: f64 = w.xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v_norm: f64 = w.v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((xi_norm - 1.0).abs() < 1e-12 && (v_norm - 1.0).abs() < 1e-12);
        assert!(directional_null_witness(&Operator::gradient(2, 1).unwrap(), &cfg()).is_none());
        assert!(directional_null_witness(&Operator::wirtinger(), &cfg()).is_none());
        assert!(require_elliptic(&div, &cfg()).is_err());
    }

    #[test]
    fn margin_independent_of_seed() {
        let op = Operator::symmetric_gradient(3).unwrap();
        let a = ellipticity_margin(&op, &cfg());
        let b = ellipticity_margin(&op, &SphereSearchConfig { seed: 99, ..cfg() });
        assert!((a.margin - b.margin).abs() < 1e-7);
    }

    #[test]
    fn report_is_deterministic_and_ordered() {
        let op = Operator::symmetric_gradient(2).unwrap();
        let a = ellipticity_report(&op, &cfg());
        let b = ellipticity_report(&op, &cfg());
        assert_eq!(a, b);
        assert!(a.complex_margin <= a.real_margin);
        assert!(a.elliptic && a.complex_elliptic);
    }
}
