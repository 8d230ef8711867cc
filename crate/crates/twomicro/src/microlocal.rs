//! Estimators for the semiclassical wavefront set and the second wavefront
//! set WF^{k,l}, plus the iterated-regularity (Lagrangian) tester.
//!
//! Scans evaluate localized norms with the principal normalization
//! `h^m ||Op(loc) u||`, so a bounded (Lagrangian-regular) cell fits slope m
//! and a cell is flagged as wavefront when its fitted slope falls below
//! m - 0.25 (or the data diverges). Sparse members use the exact pure-mode
//! action; Gram cross terms beyond the quadrature bandwidth are dropped,
//! which is exact for single-mode members.

use crate::error::{Error, Result};
use crate::grid::{
    analyze_slice, l2_norm_grid, l2_norm_sparse, Grid, GridFunction, SparseModeFunction,
};
use crate::calculus::{order_regression, RegressionResult, NO_MASS_FLOOR};
use crate::quantize::{apply, quantize, QuantizationKind};
use crate::symbols::{make_localizer, LocalizerSpec, SymbolOrder, TwoMicroSymbol};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// A member field: either sampled on a grid or an exact finite mode sum.
#[derive(Debug, Clone)]
pub enum FieldRep {
    Grid(GridFunction),
    Sparse(SparseModeFunction),
}

impl FieldRep {
    pub fn h(&self) -> f64 {
        match self {
            FieldRep::Grid(u) => u.h,
            FieldRep::Sparse(u) => u.h,
        }
    }

    pub fn l2_norm(&self) -> f64 {
        match self {
            FieldRep::Grid(u) => l2_norm_grid(u),
            FieldRep::Sparse(u) => l2_norm_sparse(u),
        }
    }

    pub fn scale(&self, s: f64) -> FieldRep {
        match self {
            FieldRep::Grid(u) => {
                let mut v = u.clone();
                for c in &mut v.values {
                    *c *= s;
                }
                FieldRep::Grid(v)
            }
            FieldRep::Sparse(u) => FieldRep::Sparse(u.scale(Complex64::new(s, 0.0))),
        }
    }
}

/// A finite sequence (h_j, u_{h_j}) representing a family as h -> 0, with an
/// optional Lagrangian center xi0(h) per member.
#[derive(Debug, Clone)]
pub struct SemiclassicalFamily {
    pub label: String,
    pub members: Vec<FieldRep>,
    pub centers: Option<Vec<Vec<f64>>>,
}

impl SemiclassicalFamily {
    pub fn new(label: &str, members: Vec<FieldRep>, centers: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if members.len() < 4 {
            return Err(Error::Data(format!(
                "family needs >= 4 members, got {}",
                members.len()
            )));
        }
        let hs: Vec<f64> = members.iter().map(|m| m.h()).collect();
        if !hs.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Data("member h values must be strictly decreasing".into()));
        }
        if let Some(c) = &centers {
            if c.len() != members.len() {
                return Err(Error::Data("one center per member required".into()));
            }
        }
        Ok(SemiclassicalFamily { label: label.to_string(), members, centers })
    }

    pub fn hs(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.h()).collect()
    }

    /// Multiply every member by h^s (scale-covariance probe).
    pub fn rescaled(&self, s: f64) -> SemiclassicalFamily {
        let members = self
            .members
            .iter()
            .map(|m| m.scale(m.h().powf(s)))
            .collect();
        SemiclassicalFamily {
            label: format!("{} * h^{s}", self.label),
            members,
            centers: self.centers.clone(),
        }
    }
}

/// Exact localized norm of a sparse mode sum under the left action of a
/// one-term (or few-term) symbol: the image is sum_j c_j g_j(x) e^{i k_j x}
/// with per-mode profiles g_j, and the Gram matrix of the profiles is
/// assembled from the quadrature spectrum of the x-factor products.
pub fn sparse_localized_norm(
    sym: &TwoMicroSymbol,
    u: &SparseModeFunction,
    quad: &Grid,
) -> Result<f64> {
    let terms = sym
        .terms()
        .ok_or_else(|| Error::Mismatch("sparse action needs a term-structured symbol".into()))?;
    let h = u.h;
    let modes = u.modes();
    let nm = modes.len();
    if nm == 0 {
        return Ok(0.0);
    }
    // per-mode, per-term fiber values
    let mut xi_vals = vec![Complex64::ZERO; nm * terms.len()];
    for (j, (k, _)) in modes.iter().enumerate() {
        let xi: Vec<f64> = k.iter().map(|&ka| h * ka as f64).collect();
        for (t, term) in terms.iter().enumerate() {
            xi_vals[j * terms.len() + t] = term.coeff * term.xi.eval(&xi, h);
        }
    }
    // profiles on the quadrature grid
    let q = quad.len();
    let samples: Vec<Vec<Complex64>> = terms.iter().map(|t| t.x.sample(quad)).collect();
    let mut profiles = vec![Complex64::ZERO; nm * q];
    for j in 0..nm {
        for (t, s) in samples.iter().enumerate() {
            let v = xi_vals[j * terms.len() + t];
            if v == Complex64::ZERO {
                continue;
            }
            for (slot, &sv) in profiles[j * q..(j + 1) * q].iter_mut().zip(s.iter()) {
                *slot += v * sv;
            }
        }
    }
    // Gram: <g_j e^{ik_j x}, g_j' e^{ik_j' x}> = (g_j conj g_j')-hat(k_j' - k_j)
    let n = quad.dim();
    let mut total = 0.0f64;
    for j in 0..nm {
        for jp in 0..nm {
            let cj = modes[j].1;
            let cjp = modes[jp].1;
            if cj == Complex64::ZERO || cjp == Complex64::ZERO {
                continue;
            }
            let dk: Vec<i64> = (0..n).map(|a| modes[jp].0[a] - modes[j].0[a]).collect();
            if !quad.mode_representable(&dk) {
                // cross term beyond the quadrature bandwidth: treated as 0
                continue;
            }
            let prod: Vec<Complex64> = (0..q)
                .map(|x| profiles[j * q + x] * profiles[jp * q + x].conj())
                .collect();
            let hat = analyze_slice(quad, &prod);
            let idx = quad.flat_of_freq_wrapped(&dk);
            let g = cj * cjp.conj() * hat[idx];
            total += g.re;
        }
    }
    Ok(total.max(0.0).sqrt())
}

fn default_quad(dim: usize) -> Grid {
    match dim {
        1 => Grid::new(vec![256]).expect("grid"),
        _ => Grid::new(vec![64; dim]).expect("grid"),
    }
}

/// Localized norm of a sparse member against one scan localizer, using the
/// shared squared-bump spectrum: the image is sum_j c_j v_j chi_cell(x)
/// e^{i k_j x} with scalar fiber values v_j, so
/// ||.||^2 = sum_{j,j'} c_j conj(c_j') v_j conj(v_j')
///           e^{-i dk . x_cell} (chi_0^2)-hat(dk).
fn scan_cell_norm(
    spec: &LocalizerSpec,
    u: &SparseModeFunction,
    quad: &Grid,
    chi_sq_hat: &[Complex64],
) -> f64 {
    let h = u.h;
    let modes = u.modes();
    let xi0 = spec.xi_center();
    let norm_ihat = {
        let n = spec.ihat0.iter().map(|v| v * v).sum::<f64>().sqrt();
        spec.ihat0.iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    let loc = crate::symbols::XiLocalizer {
        xi0,
        ihat0: norm_ihat,
        delta: spec.delta,
        eps: spec.eps,
        anglewidth: spec.anglewidth,
        m: spec.order.m,
        l: spec.order.l,
    };
    use crate::symbols::XiFactor;
    let vals: Vec<Complex64> = modes
        .iter()
        .map(|(k, c)| {
            let xi: Vec<f64> = k.iter().map(|&ka| h * ka as f64).collect();
            c * loc.eval(&xi, h)
        })
        .collect();
    let n = quad.dim();
    let mut total = 0.0f64;
    for (j, (kj, _)) in modes.iter().enumerate() {
        if vals[j] == Complex64::ZERO {
            continue;
        }
        for (jp, (kjp, _)) in modes.iter().enumerate() {
            if vals[jp] == Complex64::ZERO {
                continue;
            }
            let dk: Vec<i64> = (0..n).map(|a| kjp[a] - kj[a]).collect();
            if !quad.mode_representable(&dk) {
                // cross term beyond the quadrature bandwidth: treated as 0
                continue;
            }
            let idx = quad.flat_of_freq_wrapped(&dk);
            let phase: f64 = dk
                .iter()
                .zip(spec.x0.iter())
                .map(|(&m, &xc)| m as f64 * xc)
                .sum();
            let shift = Complex64::new(phase.cos(), -phase.sin());
            total += (vals[j] * vals[jp].conj() * shift * chi_sq_hat[idx]).re;
        }
    }
    total.max(0.0).sqrt()
}

/// Localized-norm decay order of a family against one localizer.
pub fn wf_decay_order(
    fam: &SemiclassicalFamily,
    loc: &LocalizerSpec,
    kind: QuantizationKind,
) -> Result<RegressionResult> {
    let sym = make_localizer(loc)?;
    let quad = default_quad(loc.dim());
    let mut data = Vec::with_capacity(fam.members.len());
    for member in &fam.members {
        let v = match member {
            FieldRep::Sparse(u) => {
                if !matches!(kind, QuantizationKind::Left) {
                    return Err(Error::Mismatch(
                        "sparse members use the exact left action".into(),
                    ));
                }
                sparse_localized_norm(&sym, u, &quad)?
            }
            FieldRep::Grid(u) => {
                let op = quantize(&sym, u.h, &u.grid, kind, false)?;
                l2_norm_grid(&apply(&op, u)?)
            }
        };
        data.push((member.h(), v));
    }
    order_regression(&data)
}

/// Scan geometry and report for the second-wavefront estimator.
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub x_cell: Vec<usize>,
    pub angle_cell: usize,
    pub x_center: Vec<f64>,
    pub ihat: Vec<f64>,
    pub regression: RegressionResult,
    pub mass_present: bool,
    pub detected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct WavefrontReport {
    pub order: SymbolOrder,
    pub x_cells_per_axis: usize,
    pub angle_cells: usize,
    pub xwidth: f64,
    pub anglewidth: f64,
    pub delta: f64,
    pub eps: f64,
    /// distance of each member's center to the momentum lattice h Z^n
    pub center_residuals: Vec<f64>,
    pub cells: Vec<CellReport>,
}

impl WavefrontReport {
    pub fn detected_cells(&self) -> Vec<&CellReport> {
        self.cells.iter().filter(|c| c.detected).collect()
    }

    pub fn mass_cells(&self) -> Vec<&CellReport> {
        self.cells.iter().filter(|c| c.mass_present).collect()
    }

    pub fn cell_at(&self, x_cell: &[usize], angle_cell: usize) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.x_cell == x_cell && c.angle_cell == angle_cell)
    }

    /// CSV heat map (x-cell indices, angle-cell, slope, flags).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x_cell,angle_cell,slope,no_mass,detected\n");
        for c in &self.cells {
            let xi: Vec<String> = c.x_cell.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                xi.join(";"),
                c.angle_cell,
                c.regression.slope,
                c.regression.no_mass,
                c.detected
            ));
        }
        s
    }
}

pub struct ScanConfig {
    pub order: SymbolOrder,
    pub x_cells_per_axis: usize,
    pub angle_cells: usize,
    /// localizer width = width_factor * cell width (overlapping cover)
    pub width_factor: f64,
    pub delta: f64,
    pub eps: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            order: SymbolOrder::new(0.0, 0.0),
            x_cells_per_axis: 8,
            angle_cells: 16,
            width_factor: 1.5,
            delta: 0.5,
            eps: 0.5,
        }
    }
}

fn sphere_directions(dim: usize, cells: usize) -> Result<Vec<Vec<f64>>> {
    match dim {
        1 => Ok(vec![vec![1.0], vec![-1.0]]),
        2 => Ok((0..cells)
            .map(|j| {
                let th = 2.0 * PI * (j as f64 + 0.5) / cells as f64;
                vec![th.cos(), th.sin()]
            })
            .collect()),
        _ => Err(Error::Resolution(format!(
            "angular scans support n in {{1, 2}}, got n = {dim}"
        ))),
    }
}

/// Second-wavefront scan over SN(L) = (x-cells) x (direction cells).
pub fn wf2_scan(
    fam: &SemiclassicalFamily,
    centers: &[Vec<f64>],
    cfg: &ScanConfig,
) -> Result<WavefrontReport> {
    let dim = match &fam.members[0] {
        FieldRep::Sparse(u) => u.dim(),
        FieldRep::Grid(u) => u.grid.dim(),
    };
    if centers.len() != fam.members.len() {
        return Err(Error::Resolution("one center per member required".into()));
    }
    let x_cell_width = 2.0 * PI / cfg.x_cells_per_axis as f64;
    let angle_cell_width = 2.0 * PI / cfg.angle_cells as f64;
    let xwidth = cfg.width_factor * x_cell_width;
    let anglewidth = cfg.width_factor * angle_cell_width;
    if cfg.width_factor < 1.0 {
        return Err(Error::Resolution(
            "localizer widths must cover the cells (width_factor >= 1)".into(),
        ));
    }
    if xwidth >= PI {
        return Err(Error::Resolution(
            "x cells too coarse: localizer width reaches the chart boundary".into(),
        ));
    }

    // lattice snapping bookkeeping: distance of centers to h Z^n
    let center_residuals: Vec<f64> = fam
        .members
        .iter()
        .zip(centers.iter())
        .map(|(m, c)| {
            let h = m.h();
            c.iter()
                .map(|&x| {
                    let r = x / h - (x / h).round();
                    (r * h) * (r * h)
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();

    let dirs = sphere_directions(dim, cfg.angle_cells)?;
    let n_angle = dirs.len();
    let mut x_cells: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..dim {
        let mut next = Vec::new();
        for base in &x_cells {
            for i in 0..cfg.x_cells_per_axis {
                let mut b = base.clone();
                b.push(i);
                next.push(b);
            }
        }
        x_cells = next;
    }

    let quad = default_quad(dim);
    let hs = fam.hs();

    // Shared spectrum of the squared x-bump: the cell bumps are translates
    // of one profile, so per-cell Gram entries of sparse members need only
    // translation phases against this table.
    let chi_sq_hat: Vec<Complex64> = {
        let bump = crate::symbols::XBumpBox { x0: vec![0.0; dim], widths: vec![xwidth; dim] };
        use crate::symbols::XFactor;
        let samples = bump.sample(&quad);
        let sq: Vec<Complex64> = samples.iter().map(|v| v * v.conj()).collect();
        analyze_slice(&quad, &sq)
    };

    let cells: Vec<CellReport> = x_cells
        .par_iter()
        .flat_map(|xc| {
            let x_center: Vec<f64> = xc
                .iter()
                .map(|&i| x_cell_width * (i as f64 + 0.5))
                .collect();
            (0..n_angle)
                .map(|ai| {
                    let ihat = dirs[ai].clone();
                    let mut data = Vec::with_capacity(fam.members.len());
                    for (mi, member) in fam.members.iter().enumerate() {
                        let h = hs[mi];
                        let spec = LocalizerSpec {
                            x0: x_center.clone(),
                            ihat0: ihat.clone(),
                            delta: cfg.delta,
                            eps: cfg.eps,
                            xwidth,
                            anglewidth,
                            order: cfg.order,
                            xi0: Some(centers[mi].clone()),
                            classical: false,
                            rho_center: 0.0,
                        };
                        let raw = match member {
                            FieldRep::Sparse(u) => {
                                scan_cell_norm(&spec, u, &quad, &chi_sq_hat)
                            }
                            FieldRep::Grid(u) => {
                                let sym = make_localizer(&spec).expect("scan localizer");
                                let op = quantize(&sym, h, &u.grid, QuantizationKind::Left, false)
                                    .expect("scan quantize");
                                l2_norm_grid(&apply(&op, u).expect("scan apply"))
                            }
                        };
                        data.push((h, h.powf(cfg.order.m) * raw));
                    }
                    let regression = order_regression(&data).expect("scan regression");
                    let mass_present = !regression.no_mass;
                    let diverging = data
                        .iter()
                        .all(|&(_, v)| v > NO_MASS_FLOOR)
                        && regression.slope < -0.25;
                    let detected = mass_present
                        && (regression.slope < cfg.order.m - 0.25 || diverging);
                    CellReport {
                        x_cell: xc.clone(),
                        angle_cell: ai,
                        x_center: x_center.clone(),
                        ihat,
                        regression,
                        mass_present,
                        detected,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    Ok(WavefrontReport {
        order: cfg.order,
        x_cells_per_axis: cfg.x_cells_per_axis,
        angle_cells: n_angle,
        xwidth,
        anglewidth,
        delta: cfg.delta,
        eps: cfg.eps,
        center_residuals,
        cells,
    })
}

/// Map a continuous point of SN(L) to its containing scan cell.
pub fn cell_of_point(
    cfg: &ScanConfig,
    dim: usize,
    theta: &[f64],
    ihat: &[f64],
) -> (Vec<usize>, usize) {
    let x_cell_width = 2.0 * PI / cfg.x_cells_per_axis as f64;
    let wrap = |v: f64| {
        let mut r = v % (2.0 * PI);
        if r < 0.0 {
            r += 2.0 * PI;
        }
        r
    };
    let x_cell: Vec<usize> = theta
        .iter()
        .map(|&t| ((wrap(t) / x_cell_width) as usize).min(cfg.x_cells_per_axis - 1))
        .collect();
    let angle_cell = match dim {
        1 => {
            if ihat[0] >= 0.0 {
                0
            } else {
                1
            }
        }
        _ => {
            let ang = wrap(ihat[1].atan2(ihat[0]));
            ((ang / (2.0 * PI / cfg.angle_cells as f64)) as usize).min(cfg.angle_cells - 1)
        }
    };
    (x_cell, angle_cell)
}

/// Profile of h^{-j} ||A_1 ... A_j u|| over all generator words per depth.
#[derive(Debug, Clone, Serialize)]
pub struct DepthProfile {
    pub depth: usize,
    /// max over words of sup over members
    pub sup: f64,
    /// per member: max over words of h^{-j} ||word u||
    pub per_member: Vec<(f64, f64)>,
    pub regression: RegressionResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityProfile {
    pub depths: Vec<DepthProfile>,
    /// false when any depth diverges as h -> 0 (fitted slope < -0.25)
    pub lagrangian_consistent: bool,
}

/// Iterated-regularity tester: every generator symbol must vanish on the
/// Lagrangian {xi = xi0(h)}; words up to the given depth are applied by the
/// exact sparse action (or the lazy grid action).
pub fn iterated_regularity_profile(
    fam: &SemiclassicalFamily,
    generators: &[TwoMicroSymbol],
    depth: usize,
) -> Result<RegularityProfile> {
    let centers = fam
        .centers
        .as_ref()
        .ok_or_else(|| Error::Data("iterated regularity needs member centers".into()))?;
    // vanishing check at the centers
    for g in generators {
        let mut worst: f64 = 0.0;
        for (member, c) in fam.members.iter().zip(centers.iter()) {
            let h = member.h();
            for t in 0..4 {
                let x: Vec<f64> = (0..g.dim).map(|a| 0.7 * (t + a) as f64).collect();
                worst = worst.max(g.eval(&x, c, h).norm());
            }
        }
        if worst > 1e-12 {
            return Err(Error::Generator(worst));
        }
    }
    if generators.is_empty() {
        return Err(Error::Data("need at least one generator".into()));
    }
    let nwords: usize = (1..=depth).map(|j| generators.len().pow(j as u32)).sum();
    if nwords > 100_000 {
        return Err(Error::Data(format!("too many generator words: {nwords}")));
    }

    let mut depths = Vec::with_capacity(depth + 1);
    // depth 0: plain norms
    let d0: Vec<(f64, f64)> = fam.members.iter().map(|m| (m.h(), m.l2_norm())).collect();
    depths.push(DepthProfile {
        depth: 0,
        sup: d0.iter().map(|v| v.1).fold(0.0, f64::max),
        regression: order_regression(&d0)?,
        per_member: d0,
    });

    // states[w] per member; words extended one generator at a time
    let mut states: Vec<Vec<FieldRep>> =
        vec![fam.members.clone()];
    for j in 1..=depth {
        let mut next: Vec<Vec<FieldRep>> = Vec::new();
        for state in &states {
            for g in generators {
                let extended: Result<Vec<FieldRep>> = state
                    .iter()
                    .map(|m| apply_generator(g, m))
                    .collect();
                next.push(extended?);
            }
        }
        // per member: max over words of h^{-j} ||word u||
        let mut per_member: Vec<(f64, f64)> = fam
            .members
            .iter()
            .map(|m| (m.h(), 0.0f64))
            .collect();
        for word in &next {
            for (mi, field) in word.iter().enumerate() {
                let h = per_member[mi].0;
                let v = h.powi(-(j as i32)) * field.l2_norm();
                if v > per_member[mi].1 {
                    per_member[mi].1 = v;
                }
            }
        }
        depths.push(DepthProfile {
            depth: j,
            sup: per_member.iter().map(|v| v.1).fold(0.0, f64::max),
            regression: order_regression(&per_member)?,
            per_member,
        });
        states = next;
    }
    let lagrangian_consistent = depths
        .iter()
        .all(|d| d.regression.no_mass || d.regression.slope >= -0.25);
    Ok(RegularityProfile { depths, lagrangian_consistent })
}

fn apply_generator(g: &TwoMicroSymbol, m: &FieldRep) -> Result<FieldRep> {
    match m {
        FieldRep::Sparse(u) => Ok(FieldRep::Sparse(crate::quantize::apply_to_sparse(
            g,
            QuantizationKind::Left,
            u,
        )?)),
        FieldRep::Grid(u) => {
            let op = quantize(g, u.h, &u.grid, QuantizationKind::Left, false)?;
            Ok(FieldRep::Grid(apply(&op, u)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SparseModeFunction;
    use crate::symbols::xi_affine;

    fn mode_family(k0: &[i64], hs: &[f64]) -> SemiclassicalFamily {
        let members: Vec<FieldRep> = hs
            .iter()
            .map(|&h| {
                FieldRep::Sparse(SparseModeFunction::single(k0.to_vec(), h).unwrap())
            })
            .collect();
        SemiclassicalFamily::new("mode", members, None).unwrap()
    }

    fn hs() -> Vec<f64> {
        (0..5).map(|j| 2f64.powi(-3 - j)).collect()
    }

    #[test]
    fn disjoint_support_gives_exact_no_mass() {
        // fixed mode k0: momenta h k0 -> 0; classical localizer supported
        // away from 0 and from every h_j k0
        let fam = mode_family(&[3, 1], &hs());
        let loc = LocalizerSpec {
            x0: vec![1.0, 1.0],
            ihat0: vec![1.0, 0.0],
            delta: 0.2,
            eps: 0.5,
            xwidth: 1.0,
            anglewidth: 0.8,
            order: SymbolOrder::new(0.0, 0.0),
            xi0: None,
            classical: true,
            rho_center: 2.0,
        };
        let r = wf_decay_order(&fam, &loc, QuantizationKind::Left).unwrap();
        assert!(r.no_mass);
    }

    #[test]
    fn explicit_scaling_gives_slope_s() {
        // u_j = h^s * mode 0, classical localizer elliptic at xi = 0
        let s = 1.5;
        let fam = mode_family(&[0, 0], &hs()).rescaled(s);
        let loc = LocalizerSpec {
            x0: vec![1.0, 1.0],
            ihat0: vec![1.0, 0.0],
            delta: 0.4,
            eps: 0.5,
            xwidth: 1.2,
            anglewidth: 0.8,
            order: SymbolOrder::new(0.0, 0.0),
            xi0: None,
            classical: true,
            rho_center: 0.0,
        };
        let r = wf_decay_order(&fam, &loc, QuantizationKind::Left).unwrap();
        assert!((r.slope - s).abs() < 1e-6, "slope {}", r.slope);
    }

    #[test]
    fn moving_mode_at_fixed_point_has_slope_zero() {
        // u_j = mode(round(1/h_j) e_1): momenta -> (1, 0)
        let members: Vec<FieldRep> = hs()
            .iter()
            .map(|&h| {
                let k = (1.0 / h).round() as i64;
                FieldRep::Sparse(SparseModeFunction::single(vec![k, 0], h).unwrap())
            })
            .collect();
        let fam = SemiclassicalFamily::new("moving", members, None).unwrap();
        let loc = LocalizerSpec {
            x0: vec![1.0, 1.0],
            ihat0: vec![1.0, 0.0],
            delta: 0.4,
            eps: 0.5,
            xwidth: 1.2,
            anglewidth: 0.8,
            order: SymbolOrder::new(0.0, 0.0),
            xi0: None,
            classical: true,
            rho_center: 1.0, // center (1, 0)
        };
        let r = wf_decay_order(&fam, &loc, QuantizationKind::Left).unwrap();
        assert!(!r.no_mass);
        assert!(r.slope.abs() < 0.05, "slope {}", r.slope);
    }

    #[test]
    fn scale_covariance_shifts_slopes() {
        let members: Vec<FieldRep> = hs()
            .iter()
            .map(|&h| {
                let k = (1.0 / h).round() as i64;
                FieldRep::Sparse(SparseModeFunction::single(vec![k, 0], h).unwrap())
            })
            .collect();
        let fam = SemiclassicalFamily::new("moving", members, None).unwrap();
        let centers: Vec<Vec<f64>> = fam
            .members
            .iter()
            .map(|m| {
                let h = m.h();
                vec![h * (1.0f64 / h).round(), 0.0]
            })
            .collect();
        let cfg = ScanConfig {
            x_cells_per_axis: 4,
            angle_cells: 8,
            ..Default::default()
        };
        let r0 = wf2_scan(&fam, &centers, &cfg).unwrap();
        let r1 = wf2_scan(&fam.rescaled(2.0), &centers, &cfg).unwrap();
        for (a, b) in r0.cells.iter().zip(r1.cells.iter()) {
            assert_eq!(a.regression.no_mass, b.regression.no_mass);
            if !a.regression.no_mass {
                assert!(
                    (b.regression.slope - a.regression.slope - 2.0).abs() < 1e-9,
                    "slopes {} vs {}",
                    a.regression.slope,
                    b.regression.slope
                );
            }
        }
    }

    #[test]
    fn circle_scan_uses_sign_directions() {
        // n = 1: S^0 = {+1, -1}; a right-moving mode family registers on
        // the +1 side only
        let members: Vec<FieldRep> = hs()
            .iter()
            .map(|&h| {
                let k = (1.0 / h).round() as i64;
                FieldRep::Sparse(SparseModeFunction::single(vec![k], h).unwrap())
            })
            .collect();
        let fam = SemiclassicalFamily::new("circle", members, None).unwrap();
        let centers = vec![vec![0.0]; fam.members.len()];
        let cfg = ScanConfig {
            x_cells_per_axis: 4,
            angle_cells: 2,
            delta: 1.5,
            ..Default::default()
        };
        let rep = wf2_scan(&fam, &centers, &cfg).unwrap();
        assert_eq!(rep.angle_cells, 2);
        for c in &rep.cells {
            if c.angle_cell == 0 {
                assert!(c.mass_present, "plus-direction cell {:?}", c.x_cell);
            } else {
                assert!(c.regression.no_mass, "minus-direction cell {:?}", c.x_cell);
            }
        }
    }

    #[test]
    fn zero_field_family_scans_to_all_no_mass() {
        let members: Vec<FieldRep> = hs()
            .iter()
            .map(|&h| {
                FieldRep::Sparse(
                    SparseModeFunction::new(vec![(vec![2, 0], Complex64::ZERO)], h).unwrap(),
                )
            })
            .collect();
        let fam = SemiclassicalFamily::new("zeros", members, None).unwrap();
        let centers = vec![vec![0.0, 0.0]; fam.members.len()];
        let cfg = ScanConfig { x_cells_per_axis: 4, angle_cells: 8, ..Default::default() };
        let rep = wf2_scan(&fam, &centers, &cfg).unwrap();
        for c in &rep.cells {
            assert!(c.regression.no_mass);
            assert!(!c.detected);
        }
    }

    #[test]
    fn generator_vanishing_is_enforced() {
        let fam_members: Vec<FieldRep> = hs()
            .iter()
            .map(|&h| FieldRep::Sparse(SparseModeFunction::single(vec![2, 0], h).unwrap()))
            .collect();
        let centers = vec![vec![0.0, 0.0]; fam_members.len()];
        let fam = SemiclassicalFamily::new("f", fam_members, Some(centers)).unwrap();
        // xi_2 vanishes at xi0 = 0; xi_2 - 1 does not
        let good = xi_affine(2, vec![0.0, 1.0], 0.0);
        let bad = xi_affine(2, vec![0.0, 1.0], -1.0);
        assert!(iterated_regularity_profile(&fam, &[good], 2).is_ok());
        match iterated_regularity_profile(&fam, &[bad], 2) {
            Err(Error::Generator(_)) => {}
            other => panic!("expected GeneratorError, got {other:?}"),
        }
    }

    #[test]
    fn annihilating_generator_gives_zero_beyond_depth_zero() {
        // u = mode exactly on L: generator xi_2 - xi0_2 annihilates it
        let members: Vec<FieldRep> = hs()
            .iter()
            .map(|&h| FieldRep::Sparse(SparseModeFunction::single(vec![5, 0], h).unwrap()))
            .collect();
        let centers: Vec<Vec<f64>> = hs().iter().map(|&h| vec![5.0 * h, 0.0]).collect();
        let fam = SemiclassicalFamily::new("onL", members, Some(centers)).unwrap();
        let gen = xi_affine(2, vec![0.0, 1.0], 0.0); // xi_2, and xi0_2 = 0
        let profile = iterated_regularity_profile(&fam, &[gen], 3).unwrap();
        assert!((profile.depths[0].sup - 1.0).abs() < 1e-12);
        for d in &profile.depths[1..] {
            assert!(d.sup < 1e-14, "depth {} sup {}", d.depth, d.sup);
        }
        assert!(profile.lagrangian_consistent);
    }

    #[test]
    fn wkb_family_profile_is_bounded() {
        // u_j = chi(x_2) e^{i x_1 / h_j}, generators {xi_1 - 1, xi_2}:
        // profile bounded by max_m ||chi^{(m)}||
        let chi_modes: Vec<(i64, Complex64)> = vec![
            (0, Complex64::new(1.0, 0.0)),
            (1, Complex64::new(0.25, 0.0)),
            (-1, Complex64::new(0.25, 0.0)),
        ];
        let members: Vec<FieldRep> = hs()
            .iter()
            .map(|&h| {
                let k1 = (1.0 / h).round() as i64;
                let modes: Vec<(Vec<i64>, Complex64)> = chi_modes
                    .iter()
                    .map(|&(b, c)| (vec![k1, b], c))
                    .collect();
                FieldRep::Sparse(SparseModeFunction::new(modes, h).unwrap())
            })
            .collect();
        let centers: Vec<Vec<f64>> = hs().iter().map(|_| vec![1.0, 0.0]).collect();
        let fam = SemiclassicalFamily::new("wkb", members, Some(centers)).unwrap();
        let g1 = xi_affine(2, vec![1.0, 0.0], -1.0); // xi_1 - 1
        let g2 = xi_affine(2, vec![0.0, 1.0], 0.0); // xi_2
        let profile = iterated_regularity_profile(&fam, &[g1, g2], 4).unwrap();
        assert!(profile.lagrangian_consistent);
        // (h D_2)^m pulls out chi^{(m)}: sup over depths stays <= a fixed bound
        for d in &profile.depths {
            assert!(d.sup <= 2.0, "depth {} sup {}", d.depth, d.sup);
        }
    }

    #[test]
    fn away_from_front_face_reduces_to_semiclassical_detector() {
        // pure-mode family with momenta -> (1, 0); a blowup localizer whose
        // support stays at rho >= rho0 > 0 must reproduce the slope of the
        // corresponding ordinary cutoff at (1, 0) to 0.05
        let members: Vec<FieldRep> = hs()
            .iter()
            .map(|&h| {
                let k = (1.0 / h).round() as i64;
                FieldRep::Sparse(SparseModeFunction::single(vec![k, 0], h).unwrap())
            })
            .collect();
        let fam = SemiclassicalFamily::new("moving", members, None).unwrap();
        let two_micro = LocalizerSpec {
            x0: vec![1.0, 1.0],
            ihat0: vec![1.0, 0.0],
            delta: 1.6,
            eps: 0.5,
            xwidth: 1.2,
            anglewidth: 0.8,
            order: SymbolOrder::new(0.0, 0.0),
            xi0: None,
            classical: false,
            rho_center: 0.0,
        };
        let classical = LocalizerSpec {
            classical: true,
            rho_center: 1.0,
            delta: 0.6,
            ..two_micro.clone()
        };
        let r2m = wf_decay_order(&fam, &two_micro, QuantizationKind::Left).unwrap();
        let rcl = wf_decay_order(&fam, &classical, QuantizationKind::Left).unwrap();
        assert!(!r2m.no_mass && !rcl.no_mass);
        assert!(
            (r2m.slope - rcl.slope).abs() < 0.05,
            "two-micro slope {} vs classical slope {}",
            r2m.slope,
            rcl.slope
        );
    }

    #[test]
    fn bounded_profile_families_have_no_negative_scan_slopes() {
        // consistency of the two detectors: a family with a bounded depth-J
        // profile shows no wf2 cell slope below -0.1 at order (J, 0)
        let chi_modes: Vec<(i64, Complex64)> = vec![
            (0, Complex64::new(1.0, 0.0)),
            (3, Complex64::new(0.3, 0.0)),
            (-3, Complex64::new(0.3, 0.0)),
        ];
        let members: Vec<FieldRep> = [5i32, 6, 7, 8, 9]
            .iter()
            .map(|&e| {
                let h = 2f64.powi(-e);
                let k1 = 2i64.pow(e as u32);
                let modes: Vec<(Vec<i64>, Complex64)> =
                    chi_modes.iter().map(|&(b, c)| (vec![k1, b], c)).collect();
                FieldRep::Sparse(SparseModeFunction::new(modes, h).unwrap())
            })
            .collect();
        let centers: Vec<Vec<f64>> = members.iter().map(|_| vec![1.0, 0.0]).collect();
        let fam = SemiclassicalFamily::new("wkb", members, Some(centers.clone())).unwrap();
        let g1 = xi_affine(2, vec![1.0, 0.0], -1.0);
        let g2 = xi_affine(2, vec![0.0, 1.0], 0.0);
        let j = 3usize;
        let profile = iterated_regularity_profile(&fam, &[g1, g2], j).unwrap();
        assert!(profile.lagrangian_consistent);
        let cfg = ScanConfig {
            order: SymbolOrder::new(j as f64, 0.0),
            x_cells_per_axis: 4,
            angle_cells: 8,
            ..Default::default()
        };
        let rep = wf2_scan(&fam, &centers, &cfg).unwrap();
        for c in rep.mass_cells() {
            assert!(
                c.regression.slope >= -0.1,
                "cell {:?}/{} slope {}",
                c.x_cell,
                c.angle_cell,
                c.regression.slope
            );
        }
    }

    #[test]
    fn scan_fast_gram_matches_general_path() {
        use crate::symbols::make_localizer;
        let u = SparseModeFunction::new(
            vec![
                (vec![9, 3], Complex64::new(0.8, 0.1)),
                (vec![9, -3], Complex64::new(0.3, -0.4)),
                (vec![12, 0], Complex64::new(0.1, 0.0)),
            ],
            0.05,
        )
        .unwrap();
        let spec = LocalizerSpec {
            x0: vec![2.75, 1.18],
            ihat0: vec![0.45, 0.89],
            delta: 0.8,
            eps: 0.6,
            xwidth: 1.1,
            anglewidth: 0.9,
            order: SymbolOrder::new(1.0, 0.0),
            xi0: Some(vec![0.3, 0.0]),
            classical: false,
            rho_center: 0.0,
        };
        let quad = default_quad(2);
        let sym = make_localizer(&spec).unwrap();
        let general = sparse_localized_norm(&sym, &u, &quad).unwrap();
        let chi_sq_hat: Vec<Complex64> = {
            use crate::symbols::{XBumpBox, XFactor};
            let bump = XBumpBox { x0: vec![0.0, 0.0], widths: vec![spec.xwidth; 2] };
            let samples = bump.sample(&quad);
            let sq: Vec<Complex64> = samples.iter().map(|v| v * v.conj()).collect();
            analyze_slice(&quad, &sq)
        };
        // off-lattice centers differ by the bump's quadrature tail only
        let fast = scan_cell_norm(&spec, &u, &quad, &chi_sq_hat);
        assert!(
            (fast - general).abs() <= 1e-6 * general.max(1e-10),
            "{fast} vs {general}"
        );
    }

    #[test]
    fn reports_are_deterministic() {
        let members: Vec<FieldRep> = hs()
            .iter()
            .map(|&h| {
                let k = (1.0 / h).round() as i64;
                FieldRep::Sparse(SparseModeFunction::single(vec![k, 0], h).unwrap())
            })
            .collect();
        let fam = SemiclassicalFamily::new("m", members, None).unwrap();
        let centers: Vec<Vec<f64>> = fam
            .members
            .iter()
            .map(|m| vec![m.h() * (1.0f64 / m.h()).round(), 0.0])
            .collect();
        let cfg = ScanConfig { x_cells_per_axis: 4, angle_cells: 4, ..Default::default() };
        let a = wf2_scan(&fam, &centers, &cfg).unwrap();
        let b = wf2_scan(&fam, &centers, &cfg).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }
}
