use fdnlab::ballcalc::Ball;
use fdnlab::diffexp::{
    approx_gradient_field, critical_rate_experiment, dyadic_radii, excess_decomposition, interface_points,
    monotonicity_check, rate_experiment, sample_points, structure_identity_check, DEFAULT_CELLS,
};
use fdnlab::fieldgen::{realize, rigid_split_2d, FieldConfig, FieldSpec, Realization};
use fdnlab::grid::Field;
use fdnlab::inequality::{estimate_sharp_constant, PoincareSetup, SharpConstantConfig};
use fdnlab::{Builtin, Operator};

fn eps2() -> Operator {
    Operator::builtin(Builtin::SymmetricGradient { n: 2 }).unwrap()
}

fn box_config(spec: FieldSpec, resolution: usize, periodic: bool) -> FieldConfig {
    FieldConfig { spec, lower: vec![-1.0; 2], upper: vec![1.0; 2], resolution, periodic }
}

fn rigid_split(resolution: usize) -> Realization {
    let spec = rigid_split_2d(0.1, [0.2, -0.1, 0.5], [0.3, 0.4, -0.8]);
    realize(&box_config(spec, resolution, false), &eps2()).unwrap()
}

fn cell_centers(real: &Realization, points: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let grid = real.u.grid();
    points.iter().map(|x| grid.point_of(&grid.locate(x).unwrap())).collect()
}

#[test]
fn structure_identity_on_band_limited_and_split_fields() {
    let op = eps2();
    let h = 2.0 / 128.0;
    let smooth = realize(&box_config(FieldSpec::BandLimited { seed: 3, band: 2.0, amplitude: 1.0 }, 128, true), &op).unwrap();
    let pts = sample_points(&[-1.0; 2], &[1.0; 2], 30, 1, 0.2, &[], 0.0).unwrap();
    let rep = structure_identity_check(&op, &smooth.u, &smooth.mu, &pts, 4.0 * h).unwrap();
    assert!(rep.max_deviation <= 0.01, "smooth {}", rep.max_deviation);

    let split = rigid_split(128);
    let pts = sample_points(&[-1.0; 2], &[1.0; 2], 30, 2, 0.2, &split.mu.singular, 10.0 * h).unwrap();
    let rep = structure_identity_check(&op, &split.u, &split.mu, &pts, 4.0 * h).unwrap();
    assert!(rep.max_deviation <= 0.01, "split {}", rep.max_deviation);
}

#[test]
fn critical_rate_on_piecewise_rigid_fields() {
    let op = eps2();
    let real = rigid_split(256);
    let h = 2.0 / 256.0;
    let radii = dyadic_radii(0.25, 6);
    let pts = sample_points(&[-1.0; 2], &[1.0; 2], 50, 9, 0.25, &real.mu.singular, 4.0 * h).unwrap();
    let pts = cell_centers(&real, pts);
    let table = critical_rate_experiment(&op, &real.field, &pts, &radii, DEFAULT_CELLS).unwrap();
    assert_eq!(table.p, 2.0);
    assert_eq!(table.pass_fraction, 1.0);
    assert!(table.rows.iter().all(|r| r.report.beta >= 1.1));

    let probes = interface_points(&real.mu.singular, 20, 4);
    let table = rate_experiment(&op, &real.field, &probes, &radii, 1.0, DEFAULT_CELLS).unwrap();
    for row in &table.rows {
        assert!(row.report.beta <= 1.0, "{:?}", row.report);
        assert!(!row.report.differentiable);
    }
}

#[test]
fn smooth_fields_decay_quadratically() {
    let op = eps2();
    let real = realize(&box_config(FieldSpec::BandLimited { seed: 8, band: 2.0, amplitude: 1.0 }, 256, true), &op).unwrap();
    let pts = sample_points(&[-1.0; 2], &[1.0; 2], 20, 3, 0.25, &[], 0.0).unwrap();
    let table = critical_rate_experiment(&op, &real.field, &pts, &dyadic_radii(0.25, 6), DEFAULT_CELLS).unwrap();
    assert_eq!(table.pass_fraction, 1.0);
    assert!(table.median_beta >= 1.9, "{}", table.median_beta);
}

#[test]
fn excess_decomposition_bound_holds() {
    let op = eps2();
    let setup = PoincareSetup::new(&op).unwrap();
    let c = estimate_sharp_constant(&op, &Ball::unit(2), &SharpConstantConfig { trials: 12, refine_steps: 30, ..Default::default() })
        .unwrap()
        .constant;
    let real = rigid_split(256);
    let radii = dyadic_radii(0.25, 6);
    let mut pts = sample_points(&[-1.0; 2], &[1.0; 2], 10, 5, 0.25, &[], 0.0).unwrap();
    pts.extend(interface_points(&real.mu.singular, 5, 6));
    for x in &pts {
        let g = approx_gradient_field(&real.field, x, radii[5], DEFAULT_CELLS).unwrap();
        let ux = real.field.eval(x);
        let rows =
            excess_decomposition(&setup, &real.field, &real.mu.singular, x, &g.m(), &ux, &radii, DEFAULT_CELLS, c).unwrap();
        for r in rows {
            assert!(r.triangle_holds && r.bound_holds, "{x:?}: {r:?}");
        }
    }
}

#[test]
fn excess_is_monotone_in_the_exponent() {
    let op = eps2();
    let radii = dyadic_radii(0.25, 6);
    for real in [
        rigid_split(256),
        realize(&box_config(FieldSpec::BandLimited { seed: 2, band: 2.0, amplitude: 1.0 }, 256, true), &op).unwrap(),
    ] {
        let mut pts = sample_points(&[-1.0; 2], &[1.0; 2], 10, 7, 0.25, &[], 0.0).unwrap();
        pts.extend(interface_points(&real.mu.singular, 5, 8));
        for x in &pts {
            let g = approx_gradient_field(&real.field, x, radii[5], DEFAULT_CELLS).unwrap();
            let ux = real.field.eval(x);
            let rep = monotonicity_check(&real.field, x, &g.m(), &ux, &[1.0, 1.5, 2.0], &radii, DEFAULT_CELLS).unwrap();
            assert!(rep.excess_monotone && rep.verdicts_monotone, "{x:?}");
        }
    }
}
