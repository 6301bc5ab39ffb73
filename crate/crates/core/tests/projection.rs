use fdnlab::ballcalc::{
    orthonormalize, polynomial_norm_equivalence_constant, projection_stability_constant, sup_to_mean_ratio, Ball,
    BallQuadrature, DiscreteProjection,
};
use fdnlab::fieldgen::BandLimitedField;
use fdnlab::grid::{Field, Rescaled};
use fdnlab::nullspace::kernel_basis_up_to;
use fdnlab::poly::PolynomialField;
use fdnlab::{Builtin, Operator};
use proptest::prelude::*;

fn rigid_motions() -> Vec<PolynomialField> {
    kernel_basis_up_to(&Operator::builtin(Builtin::SymmetricGradient { n: 2 }).unwrap(), 1)
}

fn trials(count: u64) -> Vec<BandLimitedField> {
    (0..count).map(|s| BandLimitedField::new(2, 2, &[-1.0, -1.0], &[1.0, 1.0], s, 3.0, 1.0)).collect()
}

#[test]
fn discrete_projection_is_idempotent() {
    let kernel = rigid_motions();
    for r in [0.25, 1.0, 4.0] {
        let ball = Ball::new(vec![0.3, -0.2], r).unwrap();
        let pb = orthonormalize(&kernel, &ball).unwrap();
        let quad = BallQuadrature::aligned(&ball, 48);
        let proj = DiscreteProjection::new(&pb, &quad).unwrap();
        for f in trials(5) {
            let g = Rescaled { inner: &f, center: ball.center.clone(), scale: r };
            let once = proj.project_values(&quad.sample(&g));
            let twice = proj.project_values(&once);
            let scale = once.iter().map(|x| x.abs()).fold(1e-300, f64::max);
            let res = once.iter().zip(&twice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
            assert!(res <= 1e-8, "r = {r}: {res}");
        }
    }
}

#[test]
fn stability_ratio_is_one_on_kernel_elements() {
    let kernel = rigid_motions();
    let ball = Ball::new(vec![1.0, 2.0], 0.5).unwrap();
    let fields: Vec<&dyn Field> = kernel.iter().map(|k| k as &dyn Field).collect();
    let rep = projection_stability_constant(&kernel, &ball, &fields, 32).unwrap();
    for r in rep.ratios {
        assert!((r - 1.0).abs() < 1e-10, "{r}");
    }
}

#[test]
fn stability_constant_and_basis_scaling_are_radius_independent() {
    let kernel = rigid_motions();
    let fields = trials(20);
    let mut constants = Vec::new();
    let mut scaled = Vec::new();
    for r in [0.25, 1.0, 4.0] {
        let ball = Ball::new(vec![0.0, 0.0], r).unwrap();
        let rescaled: Vec<Rescaled<BandLimitedField>> =
            fields.iter().map(|f| Rescaled { inner: f, center: vec![0.0, 0.0], scale: r }).collect();
        let refs: Vec<&dyn Field> = rescaled.iter().map(|f| f as &dyn Field).collect();
        let rep = projection_stability_constant(&kernel, &ball, &refs, 40).unwrap();
        constants.push(rep.constant);
        scaled.push(rep.basis_sup_scaled);
    }
    let spread = |v: &[f64]| v.iter().copied().fold(0.0, f64::max) / v.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    assert!(spread(&constants) <= 0.02, "{constants:?}");
    assert!(spread(&scaled) <= 0.02, "{scaled:?}");
}

#[test]
fn norm_equivalence_constants() {
    let balls = vec![
        Ball::unit(2),
        Ball::new(vec![0.5, 0.5], 0.25).unwrap(),
        Ball::new(vec![-3.0, 2.0], 4.0).unwrap(),
        Ball::new(vec![10.0, 0.0], 0.1).unwrap(),
        Ball::new(vec![0.0, -1.0], 2.0).unwrap(),
    ];
    let l0 = polynomial_norm_equivalence_constant(0, 2, &balls, 10, 32, 3).unwrap();
    assert!((l0.constant - 1.0).abs() < 1e-12);
    let x = PolynomialField::from_terms(1, 1, &[(0, &[1], 1.0)]).unwrap();
    assert!((sup_to_mean_ratio(&x, &Ball::unit(1), 64) - 2.0).abs() <= 1e-6);
    let l1 = polynomial_norm_equivalence_constant(1, 2, &balls, 60, 48, 3).unwrap();
    assert!(l1.spread <= 0.02, "{l1:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_fixes_kernel_combinations(w in prop::collection::vec(-2.0f64..2.0, 3), cx in -5.0f64..5.0, r in 0.1f64..5.0) {
        let kernel = rigid_motions();
        let ball = Ball::new(vec![cx, -cx / 2.0], r).unwrap();
        let pb = orthonormalize(&kernel, &ball).unwrap();
        let k = PolynomialField::linear_combination(2, 2, &w, &kernel);
        let back = pb.project_polynomial(&k);
        prop_assert!(back.sub(&k).coeff_max_norm() <= 1e-8 * (1.0 + k.coeff_max_norm()) * (1.0 + cx.abs()));
    }
}
