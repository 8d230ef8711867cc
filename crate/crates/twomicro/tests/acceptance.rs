//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (visible with `cargo test --test acceptance -- --nocapture`). Tolerances
//! come from the defaults table and are asserted here; runtime limits are
//! asserted with the stated budgets.

use num_complex::Complex64;
use std::time::Instant;
use twomicro::calculus::{
    commutator_order_sweep, convert_order_sweep, moyal_order_sweep, norm_scaling_sweep,
    offdiag_decay_sweep, order_regression, HSweep,
};
use twomicro::config::ExperimentConfig;
use twomicro::grid::l2_norm_sparse;
use twomicro::integrable::{
    apply_flat_sparse, isoenergetic, orbit_closure, resonant_family, resonant_quasimode, rat,
    wkb_control_family, ActionAngleModel, OrbitClosure,
};
use twomicro::microlocal::{cell_of_point, iterated_regularity_profile, wf2_scan, ScanConfig};
use twomicro::quantize::QuantizationKind;
use twomicro::runner::{
    flow_invariance, offdiag_symbol, run, scaling_localizer, standard_pair, wkb_amplitude,
};
use twomicro::symbols::{xi_affine, SymbolOrder};

const SEED: u64 = 42;

fn report(criterion: &str, passed: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} -- {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion}: {detail}");
}

/// Criterion 1: exact algebra at machine precision on a 16^2 grid.
#[test]
fn criterion_1_exact_algebra() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::from_json(
        r#"{"schema_version":1,"experiment":"quantize-check",
            "params":{"grid":[16,16],"h":0.125}}"#,
    )
    .unwrap();
    let bundle = run(&cfg).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let detail = format!(
        "identity {:.1e}, mode action {:.1e}, adjoint {:.1e}, hermitian {:.1e}, parseval {:.1e}, {:.2}s",
        bundle.results["identity_deviation"].as_f64().unwrap(),
        bundle.results["pure_mode_deviation"].as_f64().unwrap(),
        bundle.results["adjoint_deviation"].as_f64().unwrap(),
        bundle.results["hermitian_deviation"].as_f64().unwrap(),
        bundle.results["parseval_relative_deviation"].as_f64().unwrap(),
        elapsed
    );
    report("1 (exact algebra)", bundle.passed && elapsed < 5.0, &detail);
}

/// Criterion 2: the explicit quasimode family, exactly.
#[test]
fn criterion_2_explicit_quasimodes() {
    let t0 = Instant::now();
    let mut worst_null = 0.0f64;
    for k in 1..=64u64 {
        let (_, u) = resonant_quasimode(k).unwrap();
        worst_null = worst_null.max(l2_norm_sparse(&apply_flat_sparse(&u, 1.0)));
    }
    let null_ok = worst_null <= 1e-10;

    let fam = resonant_family(&[8, 16, 32, 64]).unwrap();
    let gen = xi_affine(2, vec![0.0, 1.0], 0.0); // xi_2 vanishing at (1,0)... on {xi_2 = 0}
    let profile = iterated_regularity_profile(&fam, &[gen], 4).unwrap();
    let ks = [8.0f64, 16.0, 32.0, 64.0];
    let mut worst_rel = 0.0f64;
    for dp in &profile.depths[1..] {
        for (i, &(_, v)) in dp.per_member.iter().enumerate() {
            let expect = ks[i].powi(dp.depth as i32);
            worst_rel = worst_rel.max((v - expect).abs() / expect);
        }
    }
    let profile_ok = worst_rel <= 1e-8;
    let not_lagrangian = !profile.lagrangian_consistent;
    let elapsed = t0.elapsed().as_secs_f64();
    let detail = format!(
        "max ||P u_k|| = {worst_null:.2e}, profile error {worst_rel:.2e} rel, not-Lagrangian = {not_lagrangian}, {elapsed:.2}s"
    );
    report(
        "2 (explicit quasimodes)",
        null_ok && profile_ok && not_lagrangian && elapsed < 5.0,
        &detail,
    );
}

/// Criterion 3: Moyal composition remainder order.
#[test]
fn criterion_3_moyal_order() {
    let t0 = Instant::now();
    let (a, b) = standard_pair();
    let sweep = HSweep::default_2d(32);
    let mut slopes = Vec::new();
    let mut ok = true;
    for n in 0..3usize {
        let data = moyal_order_sweep(&a, &b, n, &sweep, SEED).unwrap();
        let r = order_regression(&data).unwrap();
        ok &= r.slope >= (n as f64 + 1.0) - 0.3;
        slopes.push(r.slope);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let detail = format!("slopes {slopes:.3?} vs N+1-0.3, {elapsed:.1}s");
    report("3 (moyal order)", ok && elapsed < 180.0, &detail);
}

/// Criterion 4: change-of-quantization order gain per term.
#[test]
fn criterion_4_conversion_order() {
    let t0 = Instant::now();
    let (a, _) = standard_pair();
    let sweep = HSweep::default_2d(32);
    let mut slopes = Vec::new();
    for n in 0..3usize {
        let data = convert_order_sweep(
            &a,
            QuantizationKind::Left,
            QuantizationKind::Right,
            n,
            &sweep,
            SEED,
        )
        .unwrap();
        slopes.push(order_regression(&data).unwrap().slope);
    }
    let mut ok = slopes[0] >= 0.7;
    for w in slopes.windows(2) {
        ok &= w[1] - w[0] >= 0.7;
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let detail = format!("slopes {slopes:.3?}, gains >= 0.7, {elapsed:.1}s");
    report("4 (conversion order)", ok && elapsed < 180.0, &detail);
}

/// Criterion 5: commutator against the Poisson bracket.
#[test]
fn criterion_5_commutator_bracket() {
    let t0 = Instant::now();
    let (a, b) = standard_pair();
    let sweep = HSweep::default_2d(32);
    let weyl = order_regression(
        &commutator_order_sweep(&a, &b, QuantizationKind::Weyl, &sweep, SEED).unwrap(),
    )
    .unwrap()
    .slope;
    let left = order_regression(
        &commutator_order_sweep(&a, &b, QuantizationKind::Left, &sweep, SEED).unwrap(),
    )
    .unwrap()
    .slope;
    let ok = weyl >= 1.7 && left >= 0.7;
    let elapsed = t0.elapsed().as_secs_f64();
    let detail = format!("weyl slope {weyl:.3} (>= 1.7), left slope {left:.3} (>= 0.7), {elapsed:.1}s");
    report("5 (commutator)", ok && elapsed < 120.0, &detail);
}

/// Criterion 6: uniform boundedness surrogate of the mapping property.
#[test]
fn criterion_6_mapping_property() {
    let t0 = Instant::now();
    let sweep = HSweep::default_2d(32);
    let mut ratios = Vec::new();
    let mut ok = true;
    for m in 0..3 {
        let loc = scaling_localizer(m as f64).unwrap();
        let data = norm_scaling_sweep(&loc, QuantizationKind::Weyl, &sweep, SEED).unwrap();
        let anchor = data[0].1;
        let sup = data.iter().map(|v| v.1).fold(0.0f64, f64::max);
        let ratio = sup / anchor;
        ok &= ratio <= 1.5;
        ratios.push(ratio);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let detail = format!("sup/anchor ratios {ratios:.3?} (<= 1.5), {elapsed:.1}s");
    report("6 (mapping property)", ok && elapsed < 120.0, &detail);
}

/// Criterion 7: off-diagonal kernel decay.
#[test]
fn criterion_7_offdiag_decay() {
    let t0 = Instant::now();
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
    let sweep = HSweep::new(h, grids).unwrap();
    let data = offdiag_decay_sweep(&offdiag_symbol(), 0.5, &sweep).unwrap();
    let slope = order_regression(&data).unwrap().slope;
    let elapsed = t0.elapsed().as_secs_f64();
    let detail = format!("fitted exponent {slope:.3} (>= 4) at separation 0.5, {elapsed:.1}s");
    report("7 (off-diagonal decay)", slope >= 4.0 && elapsed < 60.0, &detail);
}

/// Criterion 8: isoenergetic nondegeneracy and orbit closure, exactly.
#[test]
fn criterion_8_isoenergetic() {
    let t0 = Instant::now();
    let flat = ActionAngleModel::flat(vec![1, 0], vec![1, 1], 1.0).unwrap();
    let m_flat = isoenergetic(&flat, &[0.0, 0.0]);
    let flat_ok = m_flat.det_exact.as_deref() == Some("-8") && m_flat.nondegenerate;

    let linear = ActionAngleModel::linear(vec![1, 0], vec![1, 1]).unwrap();
    let m_lin = isoenergetic(&linear, &[0.0, 0.0]);
    let lin_ok = m_lin.det_exact.as_deref() == Some("0") && !m_lin.nondegenerate;

    let closure_flat = orbit_closure(
        flat.rational.as_ref().unwrap(),
        &[rat(0, 1), rat(1, 1)],
    )
    .unwrap();
    let closure_lin = orbit_closure(
        linear.rational.as_ref().unwrap(),
        &[rat(0, 1), rat(1, 1)],
    )
    .unwrap();
    let closure_ok =
        closure_flat == OrbitClosure::FullTorus && closure_lin == OrbitClosure::Subtorus(1);
    let elapsed = t0.elapsed().as_secs_f64();
    let detail = format!(
        "flat det {} ({}), linear det {} ({}), closures {:?}/{:?}, {elapsed:.3}s",
        m_flat.det_exact.as_deref().unwrap_or("?"),
        m_flat.nondegenerate,
        m_lin.det_exact.as_deref().unwrap_or("?"),
        m_lin.nondegenerate,
        closure_flat,
        closure_lin
    );
    report(
        "8 (isoenergetic)",
        flat_ok && lin_ok && closure_ok && elapsed < 1.0,
        &detail,
    );
}

/// Criterion 9: WF^2 estimator structure on the u_k family.
#[test]
fn criterion_9_wf2_structure() {
    let t0 = Instant::now();
    let fam = resonant_family(&[8, 16, 32, 64]).unwrap();
    let centers: Vec<Vec<f64>> = vec![vec![1.0, 0.0]; 4];
    let cfg = ScanConfig::default();
    let rep = wf2_scan(&fam, &centers, &cfg).unwrap();

    let mut far_mass = 0usize;
    for c in &rep.cells {
        let ang = c.ihat[1].clamp(-1.0, 1.0).acos();
        if ang > std::f64::consts::FRAC_PI_4 && !c.regression.no_mass {
            far_mass += 1;
        }
    }
    let (_, mode_angle) = cell_of_point(&cfg, 2, &[0.0, 0.0], &[0.0, 1.0]);
    let mut worst_slope = 0.0f64;
    let mut mode_cells = 0usize;
    for c in rep.cells.iter().filter(|c| c.angle_cell == mode_angle) {
        mode_cells += 1;
        if c.regression.no_mass {
            far_mass += 1000; // mode-direction cells must carry mass
        } else {
            worst_slope = worst_slope.max(c.regression.slope.abs());
        }
    }
    let ok = far_mass == 0 && mode_cells > 0 && worst_slope <= 0.15;
    let elapsed = t0.elapsed().as_secs_f64();
    let detail = format!(
        "mass beyond pi/4: {far_mass}, mode-direction slope bound {worst_slope:.3} (<= 0.15), {elapsed:.2}s"
    );
    report("9 (wf2 structure)", ok && elapsed < 120.0, &detail);
}

/// Criterion 10: propagation consistency of the detected sets plus the
/// Lagrangian control family.
#[test]
fn criterion_10_propagation() {
    let t0 = Instant::now();
    let omega_bar = vec![2.0, 0.0];
    let hess_bar = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
    let fam = resonant_family(&[8, 16, 32, 64]).unwrap();
    let centers: Vec<Vec<f64>> = vec![vec![1.0, 0.0]; 4];

    let cfg0 = ScanConfig::default();
    let rep0 = wf2_scan(&fam, &centers, &cfg0).unwrap();
    let fail0 = flow_invariance(&rep0, &cfg0, &omega_bar, &hess_bar, 8, false);
    let mass0 = rep0.mass_cells().len();

    let cfg1 = ScanConfig { order: SymbolOrder::new(1.0, 0.0), ..Default::default() };
    let rep1 = wf2_scan(&fam, &centers, &cfg1).unwrap();
    let det1 = rep1.detected_cells().len();
    let fail1 = flow_invariance(&rep1, &cfg1, &omega_bar, &hess_bar, 8, true);

    let wkb = wkb_control_family(&[5, 6, 7, 8, 9], &[1, 0], &wkb_amplitude()).unwrap();
    let wkb_centers: Vec<Vec<f64>> = wkb.centers.clone().unwrap();
    let cfg4 = ScanConfig { order: SymbolOrder::new(4.0, 0.0), ..Default::default() };
    let rep4 = wf2_scan(&wkb, &wkb_centers, &cfg4).unwrap();
    let wkb_mass = rep4.mass_cells().len();
    let wkb_detected = rep4.detected_cells().len();

    let ok = fail0.is_empty()
        && fail1.is_empty()
        && mass0 > 0
        && det1 > 0
        && wkb_mass > 0
        && wkb_detected == 0;
    let elapsed = t0.elapsed().as_secs_f64();
    let detail = format!(
        "mass set ({mass0} cells) and detected set ({det1} cells) flow-invariant at 8 times; \
         control family: {wkb_mass} mass cells, {wkb_detected} detected, {elapsed:.2}s"
    );
    report("10 (propagation)", ok && elapsed < 180.0, &detail);
}

/// Criterion 2 corollary cross-check: the quasimode momentum sits exactly on
/// the energy shell, and k = 1 instantiates the closed form h_1 = 1/sqrt(2).
#[test]
fn resonant_family_closed_forms() {
    let (h1, u1) = resonant_quasimode(1).unwrap();
    assert!((h1 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    assert_eq!(u1.modes()[0].0, vec![1, 1]);
    for k in [2u64, 5, 13, 64] {
        let (h, _) = resonant_quasimode(k).unwrap();
        let kf = k as f64;
        let xi = [h * kf * kf, h * kf];
        assert!((xi[0] * xi[0] + xi[1] * xi[1] - 1.0).abs() < 1e-14);
    }
    // scan superposition of two modes on the same shell: still an exact
    // null family, and the detected geometry stays flow-invariant
    let mut members = Vec::new();
    for k in [8u64, 16, 32, 64] {
        let (h, u) = resonant_quasimode(k).unwrap();
        let twin = twomicro::grid::SparseModeFunction::new(
            vec![
                (vec![(k * k) as i64, k as i64], Complex64::new(0.8, 0.0)),
                (vec![(k * k) as i64, -(k as i64)], Complex64::new(0.6, 0.0)),
            ],
            h,
        )
        .unwrap();
        assert!(l2_norm_sparse(&apply_flat_sparse(&twin, 1.0)) < 1e-10);
        let _ = u;
        members.push(twomicro::microlocal::FieldRep::Sparse(twin));
    }
    let fam = twomicro::microlocal::SemiclassicalFamily::new(
        "uk-superposition",
        members,
        Some(vec![vec![1.0, 0.0]; 4]),
    )
    .unwrap();
    let cfg = ScanConfig::default();
    let rep = wf2_scan(&fam, &vec![vec![1.0, 0.0]; 4], &cfg).unwrap();
    let omega_bar = vec![2.0, 0.0];
    let hess_bar = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
    let failures = flow_invariance(&rep, &cfg, &omega_bar, &hess_bar, 8, false);
    assert!(failures.is_empty(), "{failures:?}");
    assert!(!rep.mass_cells().is_empty());
}
