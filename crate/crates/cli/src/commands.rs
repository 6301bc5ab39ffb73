//! The four subcommands. Each writes its reports into the output directory
//! and returns a one-paragraph summary for the terminal.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::Rng;
use fdnlab::ballcalc::Ball;
use fdnlab::diffexp::{
    approx_gradient_field, dyadic_radii, excess_decomposition, excess_field, interface_points, sample_points,
    DEFAULT_CELLS,
};
use fdnlab::ellipticity::{ellipticity_report, SphereSearchConfig};
use fdnlab::fieldgen::{random_kernel_split, realize, BandLimitedField, FieldConfig, FieldSpec};
use fdnlab::grid::{Field, Grid, GridField};
use fdnlab::inequality::{
    critical_exponent, csv_row, estimate_sharp_constant, ratio_spread, scale_sweep, PoincareSetup, RatioReport,
    SharpConstantConfig, CSV_HEADER,
};
use fdnlab::nullspace::{fdn_report, FdnVerdict, DEFAULT_DEGREE_CAP};
use fdnlab::poly::PolynomialField;
use fdnlab::reconstruct::{
    fourier_reconstruct, kernel_homogeneity_check, relative_error_mean_free, spectral_apply, Multiplier,
};
use fdnlab::rng::SeedStream;
use fdnlab::{Builtin, Operator, OperatorSpec};

use crate::config::{ConfigError, RunConfig};

pub fn load_operator(cfg: &RunConfig) -> Result<Operator> {
    let n = cfg.n.unwrap_or(2);
    match (&cfg.builtin, &cfg.operator_file) {
        (Some(_), Some(_)) => Err(ConfigError("give either --builtin or --operator-file, not both".into()).into()),
        (None, None) => Err(ConfigError("an operator is required: --builtin NAME or --operator-file PATH".into()).into()),
        (Some(name), None) => {
            let b = match name.as_str() {
                "gradient" => Builtin::Gradient { n, components: cfg.dim_v.unwrap_or(1) },
                "symmetric_gradient" => Builtin::SymmetricGradient { n },
                "wirtinger" => {
                    if n != 2 {
                        return Err(ConfigError("the Wirtinger operator lives on R^2".into()).into());
                    }
                    Builtin::Wirtinger
                }
                "divergence" => Builtin::Divergence { n },
                other => {
                    return Err(ConfigError(format!(
                        "unknown builtin '{other}' (expected gradient, symmetric_gradient, wirtinger, divergence)"
                    ))
                    .into())
                }
            };
            Ok(Operator::builtin(b).map_err(|e| ConfigError(e.to_string()))?)
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read operator file {}: {e}", path.display())))?;
            let spec: OperatorSpec = if path.extension().is_some_and(|e| e == "toml") {
                toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
            } else {
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
            };
            Ok(Operator::from_spec(&spec).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?)
        }
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

/// CSV text with the provenance comment row and the header row.
fn csv(hash: &str, seed: u64, header: &str, rows: &[String]) -> String {
    let mut s = format!("# config_hash={hash} seed={seed}\n{header}\n");
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn fmt_point(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ")
}

fn sphere(cfg: &RunConfig) -> SphereSearchConfig {
    SphereSearchConfig { seed: SeedStream::new(cfg.seed()).child("sphere").seed(), ..Default::default() }
}

pub fn operator_check(cfg: &RunConfig) -> Result<String> {
    let op = load_operator(cfg)?;
    let hash = cfg.hash()?;
    let dir = out_dir(cfg)?;
    let cap = cfg.degree_cap.unwrap_or(DEFAULT_DEGREE_CAP);
    let sphere = sphere(cfg);
    let ell = ellipticity_report(&op, &sphere);
    let null = fdn_report(&op, cap, &sphere).map_err(|e| ConfigError(e.to_string()))?;
    let wrap = |v: serde_json::Value| {
        serde_json::json!({ "config_hash": hash, "seed": cfg.seed(), "report": v })
    };
    write(&dir, "ellipticity.json", &(serde_json::to_string_pretty(&wrap(serde_json::to_value(&ell)?))? + "\n"))?;
    write(&dir, "nullspace.json", &(serde_json::to_string_pretty(&wrap(serde_json::to_value(&null)?))? + "\n"))?;
    let verdict = match null.verdict {
        FdnVerdict::Fdn { l, total_dim } => format!("FDN(l={l}, totalDim={total_dim})"),
        FdnVerdict::NotFdnUpTo { cap } => format!("NotFdnUpTo({cap})"),
    };
    Ok(format!(
        "{}: real margin {:.6e}, complex margin {:.6e}, kernel dims {:?}, {verdict}",
        op.name(),
        ell.real_margin,
        ell.complex_margin,
        null.dims_per_degree
    ))
}

pub fn inequality(cfg: &RunConfig) -> Result<String> {
    let op = load_operator(cfg)?;
    let setup = PoincareSetup::new(&op)
        .map_err(|e| anyhow::Error::new(e).context("the Poincare-Sobolev projection needs a finite-dimensional kernel"))?;
    let hash = cfg.hash()?;
    let dir = out_dir(cfg)?;
    let n = op.n();
    let stream = SeedStream::new(cfg.seed());
    let kind = cfg.kind.as_deref().unwrap_or("band_limited");
    let fields = cfg.fields.unwrap_or(20);
    let cells = cfg.resolution.unwrap_or(128);
    let band = cfg.band.unwrap_or(2.0);
    let mut rows: Vec<RatioReport> = Vec::new();
    let mut summary = Vec::new();
    for i in 0..fields {
        let id = format!("{kind}-{i}");
        let seed = stream.child(&id).seed();
        let reports = match kind {
            "band_limited" => {
                let radii = cfg.radii.clone().unwrap_or_else(|| vec![0.25, 1.0, 4.0]);
                let f = BandLimitedField::new(n, op.dim_v(), &vec![-1.0; n], &vec![1.0; n], seed, band, 1.0);
                scale_sweep(&setup, &f, &id, &radii, cells)?
            }
            "kernel" => {
                let radii = cfg.radii.clone().unwrap_or_else(|| vec![0.25, 1.0, 4.0]);
                let mut rng = SeedStream::new(seed).rng("weights");
                let w: Vec<f64> = setup.kernel.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
                let k = PolynomialField::linear_combination(n, op.dim_v(), &w, &setup.kernel);
                scale_sweep(&setup, &k, &id, &radii, cells)?
            }
            "piecewise" => {
                let radii = cfg.radii.clone().unwrap_or_else(|| vec![0.25, 0.5, 0.9]);
                let (lower, upper) = (vec![-1.0; n], vec![1.0; n]);
                let spec = random_kernel_split(&op, seed, &lower, &upper)?;
                let fc = FieldConfig { spec, lower, upper, resolution: cells, periodic: false };
                let real = realize(&fc, &op)?;
                radii
                    .iter()
                    .map(|&r| setup.ratio_measure(&id, &real.mu, &real.u, &Ball::new(vec![0.0; n], r)?))
                    .collect::<fdnlab::Result<Vec<_>>>()?
            }
            other => {
                return Err(ConfigError(format!("unknown field kind '{other}' (band_limited, kernel, piecewise)")).into())
            }
        };
        let finite: Vec<f64> = reports.iter().filter_map(|r| r.ratio).collect();
        let spread = ratio_spread(&reports);
        summary.push(format!(
            "{id},{},{},{},{}",
            finite.len(),
            finite.iter().copied().reduce(f64::min).unwrap_or(f64::NAN).to_string_e(),
            finite.iter().copied().reduce(f64::max).unwrap_or(f64::NAN).to_string_e(),
            spread.map_or("degenerate".to_string(), |s| s.to_string_e())
        ));
        rows.extend(reports);
    }
    let lines: Vec<String> = rows.iter().map(|r| csv_row(op.name(), r)).collect();
    write(&dir, "inequality.csv", &csv(&hash, cfg.seed(), CSV_HEADER, &lines))?;
    write(
        &dir,
        "inequality_summary.csv",
        &csv(&hash, cfg.seed(), "field_id,finite_rows,min_ratio,max_ratio,spread", &summary),
    )?;
    let degenerate = rows.iter().filter(|r| r.ratio.is_none()).count();
    let max_ratio = rows.iter().filter_map(|r| r.ratio).fold(0.0, f64::max);
    let spreads: Vec<f64> = summary_spreads(&rows, fields);
    Ok(format!(
        "{}: {} rows ({} degenerate), max ratio {:.6}, max scale spread {}",
        op.name(),
        rows.len(),
        degenerate,
        max_ratio,
        spreads.iter().copied().reduce(f64::max).map_or("n/a".into(), |s| format!("{s:.3e}"))
    ))
}

fn summary_spreads(rows: &[RatioReport], fields: usize) -> Vec<f64> {
    if fields == 0 {
        return Vec::new();
    }
    let per = rows.len() / fields;
    rows.chunks(per.max(1)).filter_map(ratio_spread).collect()
}

trait ToStringE {
    fn to_string_e(&self) -> String;
}

impl ToStringE for f64 {
    fn to_string_e(&self) -> String {
        if self.is_finite() {
            format!("{self:.12e}")
        } else {
            "nan".into()
        }
    }
}

fn field_for_variant(op: &Operator, variant: &str, seed: u64, cells: usize) -> Result<(FieldConfig, &'static str)> {
    let n = op.n();
    let (lower, upper) = (vec![-1.0; n], vec![1.0; n]);
    Ok(match variant {
        "smooth" => (
            FieldConfig {
                spec: FieldSpec::BandLimited { seed, band: 2.0, amplitude: 1.0 },
                lower,
                upper,
                resolution: cells,
                periodic: true,
            },
            "smooth",
        ),
        "piecewise" | "interface" => {
            let spec = random_kernel_split(op, seed, &lower, &upper)?;
            (
                FieldConfig { spec, lower, upper, resolution: cells, periodic: false },
                if variant == "piecewise" { "piecewise" } else { "interface" },
            )
        }
        other => return Err(ConfigError(format!("unknown variant '{other}' (smooth, piecewise, interface)")).into()),
    })
}

pub fn diff_rate(cfg: &RunConfig) -> Result<String> {
    let op = load_operator(cfg)?;
    let setup = PoincareSetup::new(&op)
        .map_err(|e| anyhow::Error::new(e).context("rate experiments need a finite-dimensional kernel"))?;
    let hash = cfg.hash()?;
    let dir = out_dir(cfg)?;
    let n = op.n();
    let stream = SeedStream::new(cfg.seed());
    let cells = cfg.resolution.unwrap_or(256);
    let variant = cfg.variant.as_deref().unwrap_or("piecewise");
    let (fc, variant) = field_for_variant(&op, variant, stream.child("field").seed(), cells)?;
    let real = realize(&fc, &op)?;
    let grid = fc.grid()?;
    let h = grid.max_spacing();
    let radii = cfg.radii.clone().unwrap_or_else(|| dyadic_radii(2.0 / 8.0, 6));
    let r0 = radii.iter().copied().fold(0.0, f64::max);
    let count = cfg.points.unwrap_or(50);
    let critical = critical_exponent(n);
    let mut exponents = cfg.exponents.clone().unwrap_or_else(|| vec![1.0, 1.5, critical]);
    exponents.sort_by(f64::total_cmp);
    exponents.dedup();
    let points: Vec<Vec<f64>> = match variant {
        "interface" => interface_points(&real.mu.singular, count, stream.child("points").seed()),
        _ => {
            let exclusion = if variant == "piecewise" { 4.0 * h } else { 0.0 };
            sample_points(&fc.lower, &fc.upper, count, stream.child("points").seed(), r0, &real.mu.singular, exclusion)?
                .into_iter()
                .map(|x| snap(&grid, &x))
                .collect()
        }
    };
    let constant = estimate_sharp_constant(
        &op,
        &Ball::unit(n),
        &SharpConstantConfig {
            trials: cfg.trials.unwrap_or(12),
            refine_steps: cfg.refine_steps.unwrap_or(30),
            seed: stream.child("constant").seed(),
            ..Default::default()
        },
    )?;
    let mut excess_rows = Vec::new();
    let mut summary_rows = Vec::new();
    let mut decomposition_rows = Vec::new();
    let mut critical_pass = 0usize;
    let mut critical_betas = Vec::new();
    let mut bounds_hold = true;
    for (i, x) in points.iter().enumerate() {
        let g = approx_gradient_field(&real.field, x, radii[radii.len() - 1], DEFAULT_CELLS)?;
        let m = g.m();
        let ux = real.field.eval(x);
        let reports = exponents
            .iter()
            .map(|&p| excess_field(&real.field, x, &m, &ux, p, &radii, DEFAULT_CELLS))
            .collect::<fdnlab::Result<Vec<_>>>()?;
        let excess_monotone = reports
            .windows(2)
            .all(|w| w[0].excess.iter().zip(&w[1].excess).all(|(a, b)| *a <= b + 1e-12 * b.abs()));
        let verdicts_monotone =
            (0..reports.len()).all(|j| !reports[j].differentiable || reports[..j].iter().all(|r| r.differentiable));
        for rep in &reports {
            for (r, e) in rep.radii.iter().zip(&rep.excess) {
                excess_rows.push(format!("{variant},{i},{},{},{r:.9e},{e:.12e}", fmt_point(x), rep.p));
            }
            summary_rows.push(format!(
                "{variant},{i},{},{},{},{},{},{},{}",
                fmt_point(x),
                rep.p,
                fmt_beta(rep.beta),
                if rep.differentiable { "pass" } else { "fail" },
                g.flagged,
                excess_monotone,
                verdicts_monotone
            ));
            if rep.p == critical {
                critical_betas.push(rep.beta);
                critical_pass += rep.differentiable as usize;
            }
        }
        let dec = excess_decomposition(&setup, &real.field, &real.mu.singular, x, &m, &ux, &radii, DEFAULT_CELLS, constant.constant)?;
        for d in &dec {
            bounds_hold &= d.bound_holds && d.triangle_holds;
            decomposition_rows.push(format!(
                "{variant},{i},{},{:.9e},{:.12e},{:.12e},{:.12e},{:.12e},{},{}",
                fmt_point(x),
                d.radius,
                d.variation_term,
                d.projected_term,
                d.deviation,
                d.total_excess,
                d.triangle_holds,
                d.bound_holds
            ));
        }
    }
    let seed = cfg.seed();
    write(&dir, "diff_rate.csv", &csv(&hash, seed, "variant,point,x,p,radius,excess", &excess_rows))?;
    write(
        &dir,
        "diff_rate_summary.csv",
        &csv(
            &hash,
            seed,
            "variant,point,x,p,beta,verdict,fit_flagged,excess_monotone_in_p,verdicts_monotone",
            &summary_rows,
        ),
    )?;
    write(
        &dir,
        "diff_rate_decomposition.csv",
        &csv(&hash, seed, "variant,point,x,radius,I_r,II_r,deviation,total_excess,triangle_holds,bound_holds", &decomposition_rows),
    )?;
    critical_betas.sort_by(f64::total_cmp);
    let median = critical_betas.get(critical_betas.len() / 2).copied().unwrap_or(f64::NAN);
    let mut msg = String::new();
    write!(
        msg,
        "{} ({variant}): {} points, pass fraction at p = {critical:.3} is {:.3}, median beta {}, C = {:.6}, decomposition bounds {}",
        op.name(),
        points.len(),
        if points.is_empty() { 0.0 } else { critical_pass as f64 / points.len() as f64 },
        fmt_beta(median),
        constant.constant,
        if bounds_hold { "hold" } else { "VIOLATED" }
    )?;
    Ok(msg)
}

fn fmt_beta(b: f64) -> String {
    if b.is_infinite() {
        "inf".into()
    } else {
        format!("{b:.6}")
    }
}

fn snap(grid: &Grid, x: &[f64]) -> Vec<f64> {
    grid.locate(x).map_or_else(|| x.to_vec(), |idx| grid.point_of(&idx))
}

pub fn reconstruct(cfg: &RunConfig) -> Result<String> {
    let op = load_operator(cfg)?;
    Multiplier::new(&op).map_err(|e| anyhow::Error::new(e).context("reconstruction needs an elliptic operator"))?;
    let hash = cfg.hash()?;
    let dir = out_dir(cfg)?;
    let n = op.n();
    let cells = cfg.resolution.unwrap_or(256);
    let band = cfg.band.unwrap_or(8.0);
    let kind = cfg.kind.as_deref().unwrap_or("band_limited");
    let grid = Grid::cube(n, cells, 0.0, 1.0, true)?;
    let u = match kind {
        "band_limited" => {
            let seed = SeedStream::new(cfg.seed()).child("field").seed();
            let f = BandLimitedField::new(n, op.dim_v(), &vec![0.0; n], &vec![1.0; n], seed, band, 1.0);
            GridField::sample(&grid, &f)
        }
        "zero" => GridField::zeros(grid.clone(), op.dim_v()),
        other => return Err(ConfigError(format!("unknown field kind '{other}' (band_limited, zero)")).into()),
    };
    let g = spectral_apply(&op, &u)?;
    let back = fourier_reconstruct(&op, &g)?;
    let err = relative_error_mean_free(&back, &u);
    let seed = cfg.seed();
    write(
        &dir,
        "reconstruct.csv",
        &csv(
            &hash,
            seed,
            "operator,kind,resolution,band,relative_l2_error",
            &[format!("{},{kind},{cells},{band},{err:.12e}", op.name())],
        ),
    )?;
    let mut msg = format!("{}: round-trip relative L2 error {err:.3e} at {cells}^{n}", op.name());
    if cfg.homogeneity.unwrap_or(false) {
        let mut dirs: Vec<Vec<i64>> = (0..n).map(|k| (0..n).map(|j| (j == k) as i64).collect()).collect();
        dirs.push(vec![1; n]);
        let rep = kernel_homogeneity_check(&op, &dirs, &[1, 2], cells, 12)?;
        let rows: Vec<String> = rep
            .rows
            .iter()
            .map(|r| {
                let d: Vec<String> = r.direction.iter().map(|x| x.to_string()).collect();
                format!("{},{},{},{:.12e}", op.name(), d.join(" "), r.lambda, r.residual)
            })
            .collect();
        write(&dir, "homogeneity.csv", &csv(&hash, seed, "operator,direction,lambda,residual", &rows))?;
        write!(msg, ", kernel homogeneity residual {:.3e}", rep.max_residual)?;
    }
    Ok(msg)
}
