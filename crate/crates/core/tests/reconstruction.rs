use fdnlab::fieldgen::BandLimitedField;
use fdnlab::grid::{Grid, GridField};
use fdnlab::reconstruct::{
    fourier_reconstruct, kernel_homogeneity_check, left_inverse_residual, relative_error_mean_free, spectral_apply,
    Multiplier,
};
use fdnlab::rng::SeedStream;
use fdnlab::{Builtin, Error, Operator};
use rand::Rng;

fn elliptic() -> Vec<Operator> {
    vec![
        Operator::builtin(Builtin::Gradient { n: 2, components: 1 }).unwrap(),
        Operator::builtin(Builtin::SymmetricGradient { n: 2 }).unwrap(),
        Operator::builtin(Builtin::Wirtinger).unwrap(),
    ]
}

#[test]
fn band_limited_round_trip_at_256() {
    let grid = Grid::cube(2, 256, 0.0, 1.0, true).unwrap();
    for op in elliptic() {
        let f = BandLimitedField::new(2, op.dim_v(), &[0.0, 0.0], &[1.0, 1.0], 11, 12.0, 1.0);
        let u = GridField::sample(&grid, &f);
        let back = fourier_reconstruct(&op, &spectral_apply(&op, &u).unwrap()).unwrap();
        let err = relative_error_mean_free(&back, &u);
        assert!(err <= 1e-8, "{}: {err}", op.name());
    }
}

#[test]
fn multiplier_is_a_left_inverse() {
    let mut rng = SeedStream::new(5).rng("xi");
    for op in elliptic() {
        let m = Multiplier::new(&op).unwrap();
        for _ in 0..1000 {
            let xi: Vec<f64> = (0..2).map(|_| rng.gen_range(-10.0..10.0)).collect();
            assert!(left_inverse_residual(&m, &xi).unwrap() <= 1e-10);
        }
    }
}

#[test]
fn non_elliptic_operators_are_refused() {
    let div = Operator::builtin(Builtin::Divergence { n: 2 }).unwrap();
    assert!(matches!(Multiplier::new(&div), Err(Error::NotElliptic(_))));
}

#[test]
fn fields_outside_the_range_are_rejected() {
    let op = Operator::builtin(Builtin::Gradient { n: 2, components: 1 }).unwrap();
    let grid = Grid::cube(2, 32, 0.0, 1.0, true).unwrap();
    let g = GridField::sample_fn(&grid, 2, |x, out| {
        out[0] = 1.0 + (2.0 * std::f64::consts::PI * x[1]).sin();
        out[1] = 0.0;
    });
    assert!(matches!(fourier_reconstruct(&op, &g), Err(Error::NotInRange(_))));
}

#[test]
fn physical_kernel_is_homogeneous() {
    for op in elliptic() {
        let rep = kernel_homogeneity_check(&op, &[vec![1, 0], vec![0, 1], vec![1, 1]], &[2], 512, 24).unwrap();
        assert!(rep.max_residual <= 0.05, "{}: {rep:?}", op.name());
    }
}
