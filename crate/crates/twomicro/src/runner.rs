//! Configuration-driven experiment runner: executes a named suite
//! deterministically, emits a JSON report plus CSV sweep data, and computes
//! pass/fail against the declared defaults table.

use crate::calculus::{
    commutator_order_sweep, convert_order_sweep, moyal_order_sweep, norm_scaling_sweep,
    offdiag_decay_sweep, order_regression, HSweep,
};
use crate::config::{ExperimentConfig, ExperimentName, Params, SweepConfig};
use crate::error::{Error, Result};
use crate::grid::{fourier_forward, l2_norm_grid, make_mode, random_field, Grid};
use crate::integrable::{
    h1_flow, h2_flow, isoenergetic, orbit_closure, resonant_family, rat, wkb_control_family,
    ActionAngleModel, OrbitClosure, Rat, SNPoint,
};
use crate::microlocal::{
    cell_of_point, iterated_regularity_profile, wf2_scan, wf_decay_order, ScanConfig,
    SemiclassicalFamily, WavefrontReport,
};
use crate::quantize::{adjoint, apply, quantize, OperatorForm, QuantizationKind};
use crate::report::{sweep_csv, write_atomic, Defaults, ReportBundle};
use crate::symbols::{
    classical_symbol, make_localizer, plateau_symbol, xi_affine, LocalizerSpec, SymbolOrder,
    TwoMicroSymbol,
};
use num_complex::Complex64;
use serde_json::{json, Value};
use std::path::Path;
use std::time::Instant;

/// The fixed pair of smooth (classical) symbols used by the calculus-order
/// experiments: trig-polynomial x-parts (exactly band-limited) times
/// mollifier bumps in xi covering the momentum window near the zero section.
pub fn standard_pair() -> (TwoMicroSymbol, TwoMicroSymbol) {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let a = classical_symbol(
        2,
        vec![
            (vec![0, 0], c(1.0, 0.0)),
            (vec![1, 0], c(0.5, 0.0)),
            (vec![0, 1], c(0.0, 0.25)),
        ],
        vec![0.1, -0.05],
        0.9,
    );
    let b = classical_symbol(
        2,
        vec![
            (vec![0, 0], c(1.0, 0.0)),
            (vec![0, -1], c(0.3, 0.0)),
            (vec![1, 1], c(0.1, 0.1)),
        ],
        vec![-0.15, 0.1],
        0.8,
    );
    (a, b)
}

/// Localizer for the mapping-property experiment: order (m, m) at the zero
/// section, windows wide enough that the largest-h operator is resolved.
pub fn scaling_localizer(m: f64) -> Result<TwoMicroSymbol> {
    make_localizer(&LocalizerSpec {
        x0: vec![3.0, 3.0],
        ihat0: vec![0.0, 1.0],
        delta: 2.5,
        eps: 0.9,
        xwidth: 1.3,
        anglewidth: 1.2,
        order: SymbolOrder::new(m, m),
        xi0: None,
        classical: false,
        rho_center: 0.0,
    })
}

/// The off-diagonal decay symbol: one circle factor, wide mollifier in xi.
pub fn offdiag_symbol() -> TwoMicroSymbol {
    classical_symbol(
        1,
        vec![
            (vec![0], Complex64::ONE),
            (vec![1], Complex64::new(0.4, 0.0)),
            (vec![-1], Complex64::new(0.4, 0.0)),
        ],
        vec![0.0],
        4.0,
    )
}

fn sweep_from(cfg: Option<&SweepConfig>, first: i32, last: i32, grid: Vec<usize>) -> Result<HSweep> {
    match cfg {
        None => HSweep::with_exponents(first, last, grid),
        Some(sc) => {
            let h: Vec<f64> = (sc.h_exponents[0]..=sc.h_exponents[1])
                .map(|e| 2f64.powi(-e))
                .collect();
            let grids: Vec<Vec<usize>> = if sc.scale_grid {
                let window = sc.xi_window.unwrap_or(1.0);
                h.iter()
                    .map(|&hv| {
                        sc.grid
                            .iter()
                            .map(|&base| {
                                let mut need = (2.0 * window / hv).ceil() as usize;
                                if need % 2 == 1 {
                                    need += 1;
                                }
                                need.max(base)
                            })
                            .collect()
                    })
                    .collect()
            } else {
                vec![sc.grid.clone(); h.len()]
            };
            HSweep::new(h, grids)
        }
    }
}

fn parse_kind(s: &str) -> QuantizationKind {
    match s {
        "right" => QuantizationKind::Right,
        "weyl" => QuantizationKind::Weyl,
        _ => QuantizationKind::Left,
    }
}

fn model_from(params: &Params) -> Result<ActionAngleModel> {
    let mc = params
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("experiment needs params.model".into()))?;
    let mut model = match mc.name.as_str() {
        "flat" => ActionAngleModel::flat(mc.num.clone(), mc.den.clone(), mc.energy)?,
        "linear" => ActionAngleModel::linear(mc.num.clone(), mc.den.clone())?,
        other => return Err(Error::Config(format!("unknown model '{other}'"))),
    };
    model.mu = mc.mu;
    Ok(model)
}

fn family_from(params: &Params) -> Result<SemiclassicalFamily> {
    let fc = params
        .family
        .as_ref()
        .ok_or_else(|| Error::Config("experiment needs params.family".into()))?;
    match fc.name.as_str() {
        "resonant-uk" => {
            let ks: Vec<u64> = if fc.ks.is_empty() { vec![8, 16, 32, 64] } else { fc.ks.clone() };
            resonant_family(&ks)
        }
        "wkb-control" => {
            let exps: Vec<i32> =
                if fc.exponents.is_empty() { vec![5, 6, 7, 8, 9] } else { fc.exponents.clone() };
            let xi_star: Vec<i64> =
                if fc.xi_star.is_empty() { vec![1, 0] } else { fc.xi_star.clone() };
            wkb_control_family(&exps, &xi_star, &wkb_amplitude())
        }
        other => Err(Error::Config(format!("unknown family '{other}'"))),
    }
}

/// Band-limited amplitude for the Lagrangian control family, with sidebands
/// |b| >= 3 inside the default sigma window.
pub fn wkb_amplitude() -> Vec<(Vec<i64>, Complex64)> {
    let c = |re: f64| Complex64::new(re, 0.0);
    vec![
        (vec![0, 0], c(1.0)),
        (vec![0, 1], c(0.4)),
        (vec![0, -1], c(0.4)),
        (vec![0, 3], c(0.25)),
        (vec![0, -3], c(0.25)),
        (vec![0, 4], c(0.15)),
        (vec![0, -4], c(0.15)),
        (vec![3, 0], c(0.2)),
        (vec![-3, 0], c(0.2)),
    ]
}

struct Outcome {
    results: Value,
    failures: Vec<String>,
    sweep_rows: Vec<(String, f64, f64)>,
    wf_report: Option<WavefrontReport>,
}

impl Outcome {
    fn new(results: Value) -> Self {
        Outcome { results, failures: Vec::new(), sweep_rows: Vec::new(), wf_report: None }
    }
}

/// Execute a configured experiment and assemble the report bundle. Output
/// files are written only by [`run_to_dir`].
pub fn run(cfg: &ExperimentConfig) -> Result<ReportBundle> {
    let started = Instant::now();
    let defaults = Defaults::default();
    let params = cfg.params.clone().unwrap_or_default();
    let outcome = match cfg.experiment {
        ExperimentName::QuantizeCheck => quantize_check(cfg, &params, &defaults)?,
        ExperimentName::ConvertOrder => convert_order(cfg, &params, &defaults)?,
        ExperimentName::MoyalOrder => moyal_order(cfg, &params, &defaults)?,
        ExperimentName::CommutatorOrder => commutator_order(cfg, &params, &defaults)?,
        ExperimentName::NormScaling => norm_scaling(cfg, &params, &defaults)?,
        ExperimentName::OffdiagDecay => offdiag_decay(cfg, &params, &defaults)?,
        ExperimentName::WfScan => wf_scan(cfg, &params, &defaults)?,
        ExperimentName::Wf2Scan => wf2_scan_experiment(cfg, &params, &defaults)?,
        ExperimentName::IteratedRegularity => iterated_regularity(cfg, &params, &defaults)?,
        ExperimentName::Isoenergetic => isoenergetic_experiment(cfg, &params, &defaults)?,
        ExperimentName::OrbitClosure => orbit_closure_experiment(cfg, &params, &defaults)?,
        ExperimentName::PropagationConsistency => propagation_consistency(cfg, &params, &defaults)?,
    };
    let mut results = outcome.results;
    if !outcome.sweep_rows.is_empty() {
        results["sweep_rows"] = json!(outcome.sweep_rows.len());
    }
    Ok(ReportBundle {
        schema_version: crate::config::SCHEMA_VERSION,
        experiment: cfg.experiment.as_str().to_string(),
        config: serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?,
        defaults,
        results,
        passed: outcome.failures.is_empty(),
        failures: outcome.failures,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// Run and write report.json, sweep.csv, and (for scans) wf2.csv into the
/// output directory, atomically.
pub fn run_to_dir(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ReportBundle> {
    let started = Instant::now();
    let defaults = Defaults::default();
    let params = cfg.params.clone().unwrap_or_default();
    let outcome = match cfg.experiment {
        ExperimentName::QuantizeCheck => quantize_check(cfg, &params, &defaults)?,
        ExperimentName::ConvertOrder => convert_order(cfg, &params, &defaults)?,
        ExperimentName::MoyalOrder => moyal_order(cfg, &params, &defaults)?,
        ExperimentName::CommutatorOrder => commutator_order(cfg, &params, &defaults)?,
        ExperimentName::NormScaling => norm_scaling(cfg, &params, &defaults)?,
        ExperimentName::OffdiagDecay => offdiag_decay(cfg, &params, &defaults)?,
        ExperimentName::WfScan => wf_scan(cfg, &params, &defaults)?,
        ExperimentName::Wf2Scan => wf2_scan_experiment(cfg, &params, &defaults)?,
        ExperimentName::IteratedRegularity => iterated_regularity(cfg, &params, &defaults)?,
        ExperimentName::Isoenergetic => isoenergetic_experiment(cfg, &params, &defaults)?,
        ExperimentName::OrbitClosure => orbit_closure_experiment(cfg, &params, &defaults)?,
        ExperimentName::PropagationConsistency => propagation_consistency(cfg, &params, &defaults)?,
    };
    let bundle = ReportBundle {
        schema_version: crate::config::SCHEMA_VERSION,
        experiment: cfg.experiment.as_str().to_string(),
        config: serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?,
        defaults,
        results: outcome.results,
        passed: outcome.failures.is_empty(),
        failures: outcome.failures,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let report_json =
        serde_json::to_string_pretty(&bundle).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&out_dir.join("report.json"), &report_json)?;
    if !outcome.sweep_rows.is_empty() {
        write_atomic(&out_dir.join("sweep.csv"), &sweep_csv(&outcome.sweep_rows))?;
    }
    if let Some(report) = &outcome.wf_report {
        write_atomic(&out_dir.join("wf2.csv"), &report.to_csv())?;
    }
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// Experiment implementations
// ---------------------------------------------------------------------------

fn quantize_check(cfg: &ExperimentConfig, params: &Params, d: &Defaults) -> Result<Outcome> {
    let grid = Grid::new(params.grid.clone().unwrap_or_else(|| vec![16, 16]))?;
    let h = params.h.unwrap_or(0.125);
    let mut failures = Vec::new();

    // Opl(1) = Id for a cutoff identically 1 on the momentum window
    let window = h * grid.dims().iter().map(|&n| n as f64).fold(0.0, f64::max);
    let one = plateau_symbol(grid.dim(), vec![0.0; grid.dim()], window, 2.0 * window);
    let id_op = quantize(&one, h, &grid, QuantizationKind::Left, true)?;
    let id_dev = match &id_op.form {
        OperatorForm::Dense(m) => {
            let mut worst = 0.0f64;
            for i in 0..m.p {
                for j in 0..m.p {
                    let expect = if i == j { Complex64::ONE } else { Complex64::ZERO };
                    worst = worst.max((m.get(i, j) - expect).norm());
                }
            }
            worst
        }
        _ => unreachable!(),
    };
    if id_dev > d.machine_tol {
        failures.push(format!("Opl(1) deviates from identity by {id_dev:.3e}"));
    }

    // pure-mode action of a localizer
    let loc = make_localizer(&LocalizerSpec {
        x0: vec![2.0, 3.0],
        ihat0: vec![0.6, 0.8],
        delta: 1.2,
        eps: 0.9,
        xwidth: 1.4,
        anglewidth: 1.0,
        order: SymbolOrder::new(0.0, 0.0),
        xi0: None,
        classical: false,
        rho_center: 0.0,
    })?;
    let op = quantize(&loc, h, &grid, QuantizationKind::Left, true)?;
    let k = [3i64, -2];
    let u = make_mode(&grid, &k, h)?;
    let out = apply(&op, &u)?;
    let mut x = vec![0.0; grid.dim()];
    let xi: Vec<f64> = k.iter().map(|&ka| h * ka as f64).collect();
    let mut mode_dev = 0.0f64;
    for j in 0..grid.len() {
        grid.point(j, &mut x);
        let expect = loc.eval(&x, &xi, h) * u.values[j];
        mode_dev = mode_dev.max((out.values[j] - expect).norm());
    }
    if mode_dev > d.machine_tol {
        failures.push(format!("pure-mode action deviates by {mode_dev:.3e}"));
    }

    // adjoint(Opl(a)) = Opr(conj a) entrywise
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let a = classical_symbol(
        2,
        vec![(vec![0, 0], c(1.0, 0.0)), (vec![1, 0], c(0.3, 0.4)), (vec![0, -2], c(-0.2, 0.1))],
        vec![0.0, 0.0],
        1.5,
    );
    let a_conj = classical_symbol(
        2,
        vec![(vec![0, 0], c(1.0, 0.0)), (vec![-1, 0], c(0.3, -0.4)), (vec![0, 2], c(-0.2, -0.1))],
        vec![0.0, 0.0],
        1.5,
    );
    let left = quantize(&a, h, &grid, QuantizationKind::Left, true)?;
    let adj = adjoint(&left)?;
    let right_conj = quantize(&a_conj, h, &grid, QuantizationKind::Right, true)?;
    let adj_dev = match (&adj.form, &right_conj.form) {
        (OperatorForm::Dense(x), OperatorForm::Dense(y)) => x
            .a
            .iter()
            .zip(y.a.iter())
            .map(|(p, q)| (p - q).norm())
            .fold(0.0f64, f64::max),
        _ => unreachable!(),
    };
    if adj_dev > d.machine_tol {
        failures.push(format!("adjoint identity deviates by {adj_dev:.3e}"));
    }

    // Opw(real a) Hermitian
    let wop = quantize(&loc, h, &grid, QuantizationKind::Weyl, true)?;
    let herm_dev = match &wop.form {
        OperatorForm::Dense(m) => {
            let mut worst = 0.0f64;
            for i in 0..m.p {
                for j in 0..m.p {
                    worst = worst.max((m.get(i, j) - m.get(j, i).conj()).norm());
                }
            }
            worst
        }
        _ => unreachable!(),
    };
    if herm_dev > d.machine_tol {
        failures.push(format!("Weyl of real symbol non-Hermitian by {herm_dev:.3e}"));
    }

    // Parseval on a deterministic random field
    let f = random_field(&grid, h, cfg.seed);
    let coeffs = fourier_forward(&f);
    let nf = l2_norm_grid(&f);
    let nc = coeffs.coeffs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let parseval_dev = (nf - nc).abs() / nf.max(1e-300);
    if parseval_dev > d.machine_tol {
        failures.push(format!("Parseval deviates by {parseval_dev:.3e} relative"));
    }

    let mut out = Outcome::new(json!({
        "identity_deviation": id_dev,
        "pure_mode_deviation": mode_dev,
        "adjoint_deviation": adj_dev,
        "hermitian_deviation": herm_dev,
        "parseval_relative_deviation": parseval_dev,
        "alias_warning": op.alias_warning,
    }));
    out.failures = failures;
    Ok(out)
}

fn convert_order(cfg: &ExperimentConfig, params: &Params, d: &Defaults) -> Result<Outcome> {
    let sweep = sweep_from(cfg.sweep.as_ref(), 3, 9, vec![32, 32])?;
    let (a, _) = standard_pair();
    let orders = params.trunc_orders.clone().unwrap_or_else(|| vec![0, 1, 2]);
    let from = parse_kind(params.kind.as_deref().unwrap_or("left"));
    let to = match from {
        QuantizationKind::Left => QuantizationKind::Right,
        _ => QuantizationKind::Left,
    };
    let mut slopes = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &n in &orders {
        let data = convert_order_sweep(&a, from, to, n, &sweep, cfg.seed)?;
        for &(h, v) in &data {
            rows.push((format!("convert-N{n}"), h, v));
        }
        let r = order_regression(&data)?;
        let want = (n as f64 + 1.0) - d.order_slope_margin;
        if r.slope < want {
            failures.push(format!("convert N={n}: slope {:.3} < {want:.3}", r.slope));
        }
        slopes.push(r);
    }
    for w in slopes.windows(2) {
        let gain = w[1].slope - w[0].slope;
        if gain < 1.0 - d.order_slope_margin {
            failures.push(format!("conversion gain per term {gain:.3} < {:.3}", 1.0 - d.order_slope_margin));
        }
    }
    let mut out = Outcome::new(json!({
        "orders": orders,
        "regressions": slopes,
    }));
    out.failures = failures;
    out.sweep_rows = rows;
    Ok(out)
}

fn moyal_order(cfg: &ExperimentConfig, params: &Params, d: &Defaults) -> Result<Outcome> {
    let sweep = sweep_from(cfg.sweep.as_ref(), 3, 9, vec![32, 32])?;
    let (a, b) = standard_pair();
    let orders = params.trunc_orders.clone().unwrap_or_else(|| vec![0, 1, 2]);
    let mut slopes = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &n in &orders {
        let data = moyal_order_sweep(&a, &b, n, &sweep, cfg.seed)?;
        for &(h, v) in &data {
            rows.push((format!("moyal-N{n}"), h, v));
        }
        let r = order_regression(&data)?;
        let want = (n as f64 + 1.0) - d.order_slope_margin;
        if r.slope < want {
            failures.push(format!("moyal N={n}: slope {:.3} < {want:.3}", r.slope));
        }
        slopes.push(r);
    }
    let mut out = Outcome::new(json!({
        "orders": orders,
        "regressions": slopes,
    }));
    out.failures = failures;
    out.sweep_rows = rows;
    Ok(out)
}

fn commutator_order(cfg: &ExperimentConfig, _params: &Params, d: &Defaults) -> Result<Outcome> {
    let sweep = sweep_from(cfg.sweep.as_ref(), 3, 9, vec![32, 32])?;
    let (a, b) = standard_pair();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let weyl = commutator_order_sweep(&a, &b, QuantizationKind::Weyl, &sweep, cfg.seed)?;
    for &(h, v) in &weyl {
        rows.push(("commutator-weyl".into(), h, v));
    }
    let rw = order_regression(&weyl)?;
    if rw.slope < d.commutator_weyl_min_slope {
        failures.push(format!(
            "weyl commutator slope {:.3} < {:.3}",
            rw.slope, d.commutator_weyl_min_slope
        ));
    }
    let left = commutator_order_sweep(&a, &b, QuantizationKind::Left, &sweep, cfg.seed)?;
    for &(h, v) in &left {
        rows.push(("commutator-left".into(), h, v));
    }
    let rl = order_regression(&left)?;
    if rl.slope < d.commutator_left_min_slope {
        failures.push(format!(
            "left commutator slope {:.3} < {:.3}",
            rl.slope, d.commutator_left_min_slope
        ));
    }
    let mut out = Outcome::new(json!({
        "weyl": rw,
        "left": rl,
    }));
    out.failures = failures;
    out.sweep_rows = rows;
    Ok(out)
}

fn norm_scaling(cfg: &ExperimentConfig, params: &Params, d: &Defaults) -> Result<Outcome> {
    let sweep = sweep_from(cfg.sweep.as_ref(), 3, 9, vec![32, 32])?;
    let ms = params.orders_mm.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0]);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut per_m = Vec::new();
    for &m in &ms {
        let loc = scaling_localizer(m)?;
        let data = norm_scaling_sweep(&loc, QuantizationKind::Weyl, &sweep, cfg.seed)?;
        for &(h, v) in &data {
            rows.push((format!("norm-scaling-m{m}"), h, v));
        }
        let anchor = data[0].1;
        let sup = data.iter().map(|v| v.1).fold(0.0f64, f64::max);
        let ratio = sup / anchor.max(1e-300);
        if ratio > d.norm_scaling_max_ratio {
            failures.push(format!(
                "order ({m},{m}): sup/anchor = {ratio:.3} > {:.3}",
                d.norm_scaling_max_ratio
            ));
        }
        per_m.push(json!({"m": m, "anchor": anchor, "sup": sup, "ratio": ratio}));
    }
    let mut out = Outcome::new(json!({ "per_order": per_m }));
    out.failures = failures;
    out.sweep_rows = rows;
    Ok(out)
}

fn offdiag_decay(cfg: &ExperimentConfig, params: &Params, d: &Defaults) -> Result<Outcome> {
    let separation = params.separation.unwrap_or(0.5);
    let sweep = match cfg.sweep.as_ref() {
        Some(sc) => sweep_from(Some(sc), 3, 8, vec![32])?,
        None => {
            // default: circle grids growing with 1/h to cover the symbol
            let h: Vec<f64> = (0..6).map(|j| 2f64.powi(-3 - j)).collect();
            let grids: Vec<Vec<usize>> = h
                .iter()
                .map(|&hv| {
                    let mut need = (2.0 * 4.4 / hv).ceil() as usize;
                    if need % 2 == 1 {
                        need += 1;
                    }
                    vec![need.max(32)]
                })
                .collect();
            HSweep::new(h, grids)?
        }
    };
    let sym = offdiag_symbol();
    let data = offdiag_decay_sweep(&sym, separation, &sweep)?;
    let rows: Vec<(String, f64, f64)> =
        data.iter().map(|&(h, v)| ("offdiag".to_string(), h, v)).collect();
    let r = order_regression(&data)?;
    let mut failures = Vec::new();
    if r.slope < d.offdiag_min_slope {
        failures.push(format!("off-diagonal decay slope {:.3} < {:.3}", r.slope, d.offdiag_min_slope));
    }
    let mut out = Outcome::new(json!({
        "separation": separation,
        "regression": r,
    }));
    out.failures = failures;
    out.sweep_rows = rows;
    Ok(out)
}

fn wf_scan(cfg: &ExperimentConfig, params: &Params, _d: &Defaults) -> Result<Outcome> {
    let fam = family_from(params)?;
    let loc = params
        .localizer
        .clone()
        .ok_or_else(|| Error::Config("wf-scan needs params.localizer".into()))?;
    let kind = parse_kind(params.kind.as_deref().unwrap_or("left"));
    let r = wf_decay_order(&fam, &loc, kind)?;
    let mut failures = Vec::new();
    if let Some(expect) = params.expected_slope {
        let tol = params.slope_tol.unwrap_or(0.15);
        if r.no_mass {
            if expect.is_finite() {
                failures.push("expected a slope but the data has no mass".into());
            }
        } else if (r.slope - expect).abs() > tol {
            failures.push(format!("slope {:.3} differs from expected {expect} by more than {tol}", r.slope));
        }
    }
    let mut out = Outcome::new(json!({
        "family": fam.label,
        "regression": r,
    }));
    out.failures = failures;
    let _ = cfg;
    Ok(out)
}

fn scan_config_from(params: &Params) -> ScanConfig {
    let sp = params.scan.clone().unwrap_or_default();
    ScanConfig {
        order: SymbolOrder::new(sp.order_m, sp.order_l),
        x_cells_per_axis: sp.x_cells,
        angle_cells: sp.angle_cells,
        width_factor: sp.width_factor,
        delta: sp.delta,
        eps: sp.eps,
    }
}

fn centers_of(fam: &SemiclassicalFamily) -> Result<Vec<Vec<f64>>> {
    fam.centers
        .clone()
        .ok_or_else(|| Error::Resolution("family carries no Lagrangian centers".into()))
}

fn wf2_scan_experiment(cfg: &ExperimentConfig, params: &Params, d: &Defaults) -> Result<Outcome> {
    let fam = family_from(params)?;
    let scan_cfg = scan_config_from(params);
    let centers = centers_of(&fam)?;
    let report = wf2_scan(&fam, &centers, &scan_cfg)?;
    let mut failures = Vec::new();

    // structural checks for the explicit quasimode family at order (0,0)
    let is_uk = fam.label == "resonant-uk";
    if is_uk && scan_cfg.order.m == 0.0 && scan_cfg.order.l == 0.0 {
        for c in &report.cells {
            let ang = c.ihat[1].clamp(-1.0, 1.0).acos();
            if ang > d.uk_angle_exclusion && !c.regression.no_mass {
                failures.push(format!(
                    "cell x={:?} angle={} has mass at angular distance {ang:.3}",
                    c.x_cell, c.angle_cell
                ));
            }
        }
        let (_, mode_angle) = cell_of_point(&scan_cfg, 2, &[0.0, 0.0], &[0.0, 1.0]);
        for c in report.cells.iter().filter(|c| c.angle_cell == mode_angle) {
            if c.regression.no_mass {
                failures.push(format!("mode-direction cell x={:?} lost its mass", c.x_cell));
            } else if c.regression.slope.abs() > d.uk_slope_band {
                failures.push(format!(
                    "mode-direction cell x={:?} slope {:.3} outside the +/-{} band",
                    c.x_cell, c.regression.slope, d.uk_slope_band
                ));
            }
        }
    }
    let report_json =
        serde_json::to_value(&report).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Outcome::new(json!({
        "family": fam.label,
        "order": scan_cfg.order,
        "mass_cells": report.mass_cells().len(),
        "detected_cells": report.detected_cells().len(),
        "report": report_json,
    }));
    out.failures = failures;
    out.wf_report = Some(report);
    let _ = cfg;
    Ok(out)
}

fn iterated_regularity(cfg: &ExperimentConfig, params: &Params, d: &Defaults) -> Result<Outcome> {
    let fam = family_from(params)?;
    let depth = params.depth.unwrap_or(4).min(6);
    let gens: Vec<TwoMicroSymbol> = match &params.generators {
        Some(gs) => gs
            .iter()
            .map(|g| xi_affine(2, g.linear.clone(), g.c0))
            .collect(),
        None => vec![xi_affine(2, vec![0.0, 1.0], 0.0)],
    };
    let profile = iterated_regularity_profile(&fam, &gens, depth)?;
    let mut failures = Vec::new();

    // For the explicit quasimode family with the generator xi_2 the profile
    // is k^m exactly (after the h^{-m} rescale).
    if fam.label == "resonant-uk" && params.generators.is_none() {
        let ks: Vec<f64> = params
            .family
            .as_ref()
            .map(|f| if f.ks.is_empty() { vec![8., 16., 32., 64.] } else { f.ks.iter().map(|&k| k as f64).collect() })
            .unwrap_or_else(|| vec![8., 16., 32., 64.]);
        for dp in &profile.depths[1..] {
            for (i, &(_, v)) in dp.per_member.iter().enumerate() {
                let expect = ks[i].powi(dp.depth as i32);
                if (v - expect).abs() > d.profile_rel_tol * expect {
                    failures.push(format!(
                        "depth {} member {}: profile {v:.6e} differs from k^m = {expect:.6e}",
                        dp.depth, i
                    ));
                }
            }
        }
        if profile.lagrangian_consistent {
            failures.push("u_k family must fail the Lagrangian consistency test".into());
        }
    }
    let mut out = Outcome::new(json!({
        "family": fam.label,
        "depth": depth,
        "profile": profile,
    }));
    out.failures = failures;
    let _ = cfg;
    Ok(out)
}

fn isoenergetic_experiment(cfg: &ExperimentConfig, params: &Params, _d: &Defaults) -> Result<Outcome> {
    let model = model_from(params)?;
    model.validate_at(&vec![0.0; model.n])?;
    let m = isoenergetic(&model, &vec![0.0; model.n]);
    let mut failures = Vec::new();
    if let Some(expect) = &params.expected_det {
        match &m.det_exact {
            Some(got) if got == expect => {}
            Some(got) => failures.push(format!("determinant {got} != expected {expect}")),
            None => failures.push("expected an exact determinant but model is not rational".into()),
        }
    }
    let mut out = Outcome::new(json!({
        "model": model.label,
        "matrix": m,
    }));
    out.failures = failures;
    let _ = cfg;
    Ok(out)
}

fn parse_rat_pairs(num: &[i64], den: &[i64]) -> Result<Vec<Rat>> {
    if num.len() != den.len() || den.iter().any(|&d| d == 0) {
        return Err(Error::Rationality("direction must be given as p/q pairs".into()));
    }
    Ok(num.iter().zip(den.iter()).map(|(&p, &q)| rat(p, q)).collect())
}

fn orbit_closure_experiment(cfg: &ExperimentConfig, params: &Params, _d: &Defaults) -> Result<Outcome> {
    let model = model_from(params)?;
    let rd = model
        .rational
        .as_ref()
        .ok_or_else(|| Error::Rationality("orbit closure needs exact rational model data".into()))?;
    let ihat = parse_rat_pairs(
        params.ihat_num.as_deref().unwrap_or(&[0, 1]),
        params.ihat_den.as_deref().unwrap_or(&[1, 1]),
    )?;
    let closure = orbit_closure(rd, &ihat)?;
    let mut failures = Vec::new();
    if let Some(expect) = &params.expected_closure {
        let got = match &closure {
            OrbitClosure::FullTorus => "full-torus".to_string(),
            OrbitClosure::Subtorus(d) => format!("subtorus:{d}"),
            OrbitClosure::Point => "point".to_string(),
        };
        if &got != expect {
            failures.push(format!("closure {got} != expected {expect}"));
        }
    }
    let mut out = Outcome::new(json!({
        "model": model.label,
        "closure": closure,
    }));
    out.failures = failures;
    let _ = cfg;
    Ok(out)
}

/// Flow invariance of the scanned cell sets: images of active cell centers
/// under the discrete H1/H2 maps must land in active cells.
pub fn flow_invariance(
    report: &WavefrontReport,
    scan_cfg: &ScanConfig,
    omega_bar: &[f64],
    hess_bar: &[Vec<f64>],
    times: usize,
    use_detected: bool,
) -> Vec<String> {
    let mut failures = Vec::new();
    let active: Vec<(Vec<usize>, usize)> = report
        .cells
        .iter()
        .filter(|c| if use_detected { c.detected } else { c.mass_present })
        .map(|c| (c.x_cell.clone(), c.angle_cell))
        .collect();
    let is_active = |cell: &(Vec<usize>, usize)| active.iter().any(|a| a == cell);
    for c in report.cells.iter().filter(|c| if use_detected { c.detected } else { c.mass_present }) {
        let q = SNPoint { theta: c.x_center.clone(), ihat: c.ihat.clone() };
        for s in 1..=times {
            let t = 0.37 * s as f64;
            for flowed in [h1_flow(&q, t, omega_bar), h2_flow(&q, t, hess_bar)] {
                let image = cell_of_point(scan_cfg, q.theta.len(), &flowed.theta, &flowed.ihat);
                if !is_active(&image) {
                    failures.push(format!(
                        "image of cell x={:?} angle={} at t={t:.2} left the active set",
                        c.x_cell, c.angle_cell
                    ));
                }
            }
        }
    }
    failures
}

fn propagation_consistency(cfg: &ExperimentConfig, params: &Params, _d: &Defaults) -> Result<Outcome> {
    let times = params.times.unwrap_or(8);
    // flat model at xi0 = (1, 0): omega = 2 xi0, hessian 2 I
    let omega_bar = vec![2.0, 0.0];
    let hess_bar = vec![vec![2.0, 0.0], vec![0.0, 2.0]];

    let fam = match &params.family {
        Some(_) => family_from(params)?,
        None => resonant_family(&[8, 16, 32, 64])?,
    };
    let centers = centers_of(&fam)?;

    let mut failures = Vec::new();

    // mass-present set of the order-(0,0) scan is flow-invariant
    let cfg0 = ScanConfig::default();
    let report0 = wf2_scan(&fam, &centers, &cfg0)?;
    failures.extend(flow_invariance(&report0, &cfg0, &omega_bar, &hess_bar, times, false));

    // threshold-detected set of the order-(1,0) scan is flow-invariant
    let cfg1 = ScanConfig { order: SymbolOrder::new(1.0, 0.0), ..Default::default() };
    let report1 = wf2_scan(&fam, &centers, &cfg1)?;
    let detected1 = report1.detected_cells().len();
    if detected1 == 0 {
        failures.push("order-(1,0) scan detected nothing; invariance check is vacuous".into());
    }
    failures.extend(flow_invariance(&report1, &cfg1, &omega_bar, &hess_bar, times, true));

    // the Lagrangian control family at order (4, 0) reports no detections
    let wkb = wkb_control_family(&[5, 6, 7, 8, 9], &[1, 0], &wkb_amplitude())?;
    let wkb_centers = centers_of(&wkb)?;
    let cfg4 = ScanConfig { order: SymbolOrder::new(4.0, 0.0), ..Default::default() };
    let report4 = wf2_scan(&wkb, &wkb_centers, &cfg4)?;
    if report4.mass_cells().is_empty() {
        failures.push("control family registered no mass at all".into());
    }
    if !report4.detected_cells().is_empty() {
        failures.push(format!(
            "control family was detected in {} cells at order (4,0)",
            report4.detected_cells().len()
        ));
    }

    let mut out = Outcome::new(json!({
        "family": fam.label,
        "times": times,
        "mass_cells_order00": report0.mass_cells().len(),
        "detected_cells_order10": detected1,
        "wkb_mass_cells_order40": report4.mass_cells().len(),
        "wkb_detected_cells_order40": report4.detected_cells().len(),
    }));
    out.failures = failures;
    let _ = cfg;
    Ok(out)
}
