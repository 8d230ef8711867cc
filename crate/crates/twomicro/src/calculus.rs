//! Symbol-calculus experiments: change of quantization, composition
//! remainders, commutators against Poisson brackets, principal-symbol
//! restriction, and the shared h-sweep order-regression utility.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::quantize::{
    dense_norm, inner_window_norm, quantize, DenseMatrix, OperatorForm, OperatorRep,
    QuantizationKind,
};
use crate::symbols::{x_deriv, xi_deriv, SymbolOrder, Term, TwoMicroSymbol, XiHPow};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A strictly decreasing sequence of semiclassical parameters with per-h grid
/// resolutions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HSweep {
    pub h: Vec<f64>,
    pub grids: Vec<Vec<usize>>,
}

impl HSweep {
    pub fn new(h: Vec<f64>, grids: Vec<Vec<usize>>) -> Result<Self> {
        if h.len() < 4 {
            return Err(Error::Data(format!("sweep needs >= 4 h values, got {}", h.len())));
        }
        if !h.windows(2).all(|w| w[0] > w[1]) || h.iter().any(|&v| v <= 0.0) {
            return Err(Error::Data("h values must be positive and strictly decreasing".into()));
        }
        if grids.len() != h.len() {
            return Err(Error::Data("one grid per h value required".into()));
        }
        Ok(HSweep { h, grids })
    }

    /// Default sweep h = 2^-3 .. 2^-9 on fixed square grids.
    pub fn default_2d(points: usize) -> Self {
        let h: Vec<f64> = (0..7).map(|j| 2f64.powi(-3 - j)).collect();
        let grids = vec![vec![points, points]; h.len()];
        HSweep { h, grids }
    }

    pub fn with_exponents(first: i32, last: i32, dims: Vec<usize>) -> Result<Self> {
        let h: Vec<f64> = (first..=last).map(|j| 2f64.powi(-j)).collect();
        let n = h.len();
        HSweep::new(h, vec![dims; n])
    }
}

/// Least-squares fit of log(value) against log(h).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub per_step: Vec<f64>,
    pub residual: f64,
    pub no_mass: bool,
}

pub const NO_MASS_FLOOR: f64 = 1e-13;

/// Fit the decay order of (h, value) data. Values below the floor across the
/// board flag `no_mass`; isolated zeros are dropped from the fit.
pub fn order_regression(data: &[(f64, f64)]) -> Result<RegressionResult> {
    if data.len() < 4 {
        return Err(Error::Data(format!("regression needs >= 4 points, got {}", data.len())));
    }
    if !data.windows(2).all(|w| w[0].0 > w[1].0) {
        return Err(Error::Data("h values must be strictly decreasing".into()));
    }
    if data.iter().all(|&(_, v)| v < NO_MASS_FLOOR) {
        return Ok(RegressionResult {
            slope: 0.0,
            intercept: 0.0,
            per_step: vec![0.0; data.len() - 1],
            residual: 0.0,
            no_mass: true,
        });
    }
    let pts: Vec<(f64, f64)> = data
        .iter()
        .filter(|&&(_, v)| v > 1e-300)
        .map(|&(h, v)| (h.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Ok(RegressionResult {
            slope: 0.0,
            intercept: 0.0,
            per_step: vec![0.0; data.len() - 1],
            residual: 0.0,
            no_mass: false,
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual: f64 = pts
        .iter()
        .map(|p| {
            let e = p.1 - (slope * p.0 + intercept);
            e * e
        })
        .sum::<f64>()
        .sqrt();
    let per_step: Vec<f64> = data
        .windows(2)
        .map(|w| {
            let (h0, v0) = w[0];
            let (h1, v1) = w[1];
            if v0 > 1e-300 && v1 > 1e-300 {
                (v1.ln() - v0.ln()) / (h1.ln() - h0.ln())
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(RegressionResult { slope, intercept, per_step, residual, no_mass: false })
}

/// Exponent of the exact discrete conversion relation between quantization
/// conventions (left = 0, weyl = 1/2, right = 1).
fn kind_time(kind: QuantizationKind) -> f64 {
    match kind {
        QuantizationKind::Left => 0.0,
        QuantizationKind::Weyl => 0.5,
        QuantizationKind::Right => 1.0,
    }
}

/// Truncated change-of-quantization expansion: Op_from(a) = Op_to(b) + O(h^{N+1})
/// with b = sum_{|alpha| <= N} (c h)^{|alpha|} / alpha! d_xi^alpha d_x^alpha a,
/// c = -i (t_from - t_to). Each added term drops the remainder one order in
/// the first index.
pub fn convert_quantization(
    a: &TwoMicroSymbol,
    from: QuantizationKind,
    to: QuantizationKind,
    n_terms: usize,
) -> Result<TwoMicroSymbol> {
    let needed = 2 * n_terms;
    if needed > a.avail_depth {
        return Err(Error::Depth { requested: needed, available: a.avail_depth });
    }
    let dt = kind_time(from) - kind_time(to);
    let c = Complex64::new(0.0, -dt);
    let n = a.dim;
    let terms_in = a
        .terms()
        .ok_or_else(|| Error::Mismatch("conversion needs a term-structured symbol".into()))?;
    let mut terms = Vec::new();
    let idxs = crate::jet::jet_space(n, n_terms).indices.clone();
    for alpha in &idxs {
        let total: usize = alpha.iter().map(|&v| v as usize).sum();
        let mut fact = 1.0;
        for &v in alpha.iter() {
            for i in 1..=(v as usize) {
                fact *= i as f64;
            }
        }
        let mut coeff = Complex64::ONE / fact;
        for _ in 0..total {
            coeff *= c;
        }
        if coeff == Complex64::ZERO && total > 0 {
            continue;
        }
        for t in terms_in {
            terms.push(Term {
                coeff: coeff * t.coeff,
                x: x_deriv(&t.x, alpha),
                xi: Arc::new(XiHPow {
                    inner: xi_deriv(&t.xi, alpha),
                    power: total as i32,
                }),
            });
        }
    }
    let mut out = TwoMicroSymbol::from_terms(n, a.order, terms);
    out.avail_depth = a.avail_depth.saturating_sub(2 * n_terms);
    Ok(out)
}

/// AB - BA of two dense operators on the same grid and h.
pub fn commutator(a: &OperatorRep, b: &OperatorRep) -> Result<OperatorRep> {
    if a.grid != b.grid {
        return Err(Error::Mismatch("commutator needs matching grids".into()));
    }
    if (a.h - b.h).abs() > 1e-15 * a.h {
        return Err(Error::Mismatch("commutator needs matching h".into()));
    }
    let (ma, mb) = match (&a.form, &b.form) {
        (OperatorForm::Dense(x), OperatorForm::Dense(y)) => (x, y),
        _ => return Err(Error::Cap { dim: a.grid.len(), cap: 0 }),
    };
    let m = ma.matmul(mb).sub(&mb.matmul(ma));
    Ok(OperatorRep {
        kind: a.kind,
        symbol: a.symbol.clone(),
        h: a.h,
        grid: a.grid.clone(),
        order: SymbolOrder::new(a.order.m + b.order.m - 1.0, a.order.l + b.order.l),
        form: OperatorForm::Dense(m),
        alias_warning: a.alias_warning || b.alias_warning,
    })
}

/// Principal symbol at a side-face point (x, rho, ihat) relative to the
/// blowup center xi0: the limit of h^m a as sigma -> 0. Exact when the
/// symbol's factors expose a closed-form limit, Richardson extrapolation in
/// sigma otherwise.
pub fn principal_symbol_at(
    a: &TwoMicroSymbol,
    x: &[f64],
    rho: f64,
    ihat: &[f64],
    xi0: &[f64],
) -> Result<Complex64> {
    let xi: Vec<f64> = xi0.iter().zip(ihat.iter()).map(|(c, i)| c + rho * i).collect();
    if let Some(terms) = a.terms() {
        let mut acc = Complex64::ZERO;
        let mut all_exact = true;
        for t in terms {
            match t.xi.h_limit(&xi, a.order.m) {
                Some(v) => acc += t.coeff * t.x.eval(x) * v,
                None => {
                    all_exact = false;
                    break;
                }
            }
        }
        if all_exact {
            return Ok(acc);
        }
    }
    // Richardson in sigma with ratio 2; leading error is O(sigma^2).
    let sigmas = [1e-3, 5e-4, 2.5e-4];
    let f = |sigma: f64| -> Complex64 {
        let h = sigma * rho;
        a.eval(x, &xi, h) * Complex64::new(h.powf(a.order.m), 0.0)
    };
    let v: Vec<Complex64> = sigmas.iter().map(|&s| f(s)).collect();
    let r1 = (v[1] * 4.0 - v[0]) / 3.0;
    let r2 = (v[2] * 4.0 - v[1]) / 3.0;
    let diff = (r2 - r1).norm();
    if diff > 1e-4 {
        return Err(Error::Extrapolation(diff));
    }
    Ok(r2)
}

// ---------------------------------------------------------------------------
// Sweep experiments.
//
// Compositions on a capped grid are polluted in the outermost momentum band
// (intermediate frequencies fall off the grid), so composition remainders
// are measured through the inner window |k_a| <= N_a/4. Single-operator
// comparisons (conversion) need no window: their remainders cancel entrywise.
// ---------------------------------------------------------------------------

pub const WINDOW_DIV: usize = 4;

fn dense_of(op: &OperatorRep) -> &DenseMatrix {
    match &op.form {
        OperatorForm::Dense(m) => m,
        OperatorForm::Lazy => unreachable!("sweep experiments build dense forms"),
    }
}

/// || Opw(a) Opw(b) - Opw(moyal_N(a,b)) || over the sweep, inner-windowed.
pub fn moyal_order_sweep(
    a: &TwoMicroSymbol,
    b: &TwoMicroSymbol,
    n_trunc: usize,
    sweep: &HSweep,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let c = crate::symbols::moyal_expand(a, b, n_trunc, false)?;
    let mut data = Vec::with_capacity(sweep.h.len());
    for (idx, &h) in sweep.h.iter().enumerate() {
        let grid = Grid::new(sweep.grids[idx].clone())?;
        let oa = quantize(a, h, &grid, QuantizationKind::Weyl, true)?;
        let ob = quantize(b, h, &grid, QuantizationKind::Weyl, true)?;
        let oc = quantize(&c, h, &grid, QuantizationKind::Weyl, true)?;
        let prod = dense_of(&oa).matmul(dense_of(&ob));
        let diff = prod.sub(dense_of(&oc));
        let rem = OperatorRep {
            kind: QuantizationKind::Weyl,
            symbol: oa.symbol.clone(),
            h,
            grid: grid.clone(),
            order: oa.order,
            form: OperatorForm::Dense(diff),
            alias_warning: false,
        };
        let norm = inner_window_norm(&rem, WINDOW_DIV, seed)?;
        data.push((h, norm));
    }
    Ok(data)
}

/// || Op_from(a) - Op_to(convert(a, N)) || over the sweep, inner-windowed:
/// rows at the grid edge alias k' to k' - N, which evaluates row-based
/// slices at the wrong momentum.
pub fn convert_order_sweep(
    a: &TwoMicroSymbol,
    from: QuantizationKind,
    to: QuantizationKind,
    n_terms: usize,
    sweep: &HSweep,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let b = convert_quantization(a, from, to, n_terms)?;
    let mut data = Vec::with_capacity(sweep.h.len());
    for (idx, &h) in sweep.h.iter().enumerate() {
        let grid = Grid::new(sweep.grids[idx].clone())?;
        let oa = quantize(a, h, &grid, from, true)?;
        let ob = quantize(&b, h, &grid, to, true)?;
        let diff = dense_of(&oa).sub(dense_of(&ob));
        let rem = OperatorRep {
            kind: to,
            symbol: oa.symbol.clone(),
            h,
            grid: grid.clone(),
            order: oa.order,
            form: OperatorForm::Dense(diff),
            alias_warning: false,
        };
        let norm = inner_window_norm(&rem, WINDOW_DIV, seed)?;
        data.push((h, norm));
    }
    Ok(data)
}

/// || (i/h)[Op a, Op b] - Op({a,b}) || over the sweep, inner-windowed.
pub fn commutator_order_sweep(
    a: &TwoMicroSymbol,
    b: &TwoMicroSymbol,
    kind: QuantizationKind,
    sweep: &HSweep,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let pb = crate::symbols::poisson_bracket(a, b)?;
    let mut data = Vec::with_capacity(sweep.h.len());
    for (idx, &h) in sweep.h.iter().enumerate() {
        let grid = Grid::new(sweep.grids[idx].clone())?;
        let oa = quantize(a, h, &grid, kind, true)?;
        let ob = quantize(b, h, &grid, kind, true)?;
        let opb = quantize(&pb, h, &grid, kind, true)?;
        let comm = commutator(&oa, &ob)?;
        let scaled = dense_of(&comm).scale(Complex64::new(0.0, 1.0 / h));
        let diff = scaled.sub(dense_of(&opb));
        let rem = OperatorRep {
            kind,
            symbol: oa.symbol.clone(),
            h,
            grid: grid.clone(),
            order: oa.order,
            form: OperatorForm::Dense(diff),
            alias_warning: false,
        };
        let norm = inner_window_norm(&rem, WINDOW_DIV, seed)?;
        data.push((h, norm));
    }
    Ok(data)
}

/// h^m ||Op(a)|| over the sweep for an order-(m, m) symbol; the mapping
/// property makes this uniformly bounded.
pub fn norm_scaling_sweep(
    a: &TwoMicroSymbol,
    kind: QuantizationKind,
    sweep: &HSweep,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let mut data = Vec::with_capacity(sweep.h.len());
    for (idx, &h) in sweep.h.iter().enumerate() {
        let grid = Grid::new(sweep.grids[idx].clone())?;
        let op = quantize(a, h, &grid, kind, true)?;
        let norm = crate::quantize::operator_norm(&op, seed)?;
        data.push((h, h.powf(a.order.m) * norm));
    }
    Ok(data)
}

/// Off-diagonal kernel maximum over the sweep at fixed separation.
pub fn offdiag_decay_sweep(
    a: &TwoMicroSymbol,
    separation: f64,
    sweep: &HSweep,
) -> Result<Vec<(f64, f64)>> {
    let mut data = Vec::with_capacity(sweep.h.len());
    for (idx, &h) in sweep.h.iter().enumerate() {
        let grid = Grid::new(sweep.grids[idx].clone())?;
        let op = quantize(a, h, &grid, QuantizationKind::Left, true)?;
        let max = crate::quantize::kernel_offdiag_max(&op, separation)?;
        data.push((h, max));
    }
    Ok(data)
}

/// Operator norm over the sweep of the quantized difference of two symbols
/// sharing a principal part (exactness of the symbol sequence).
pub fn symbol_difference_sweep(
    a: &TwoMicroSymbol,
    b: &TwoMicroSymbol,
    kind: QuantizationKind,
    sweep: &HSweep,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let mut data = Vec::with_capacity(sweep.h.len());
    for (idx, &h) in sweep.h.iter().enumerate() {
        let grid = Grid::new(sweep.grids[idx].clone())?;
        let oa = quantize(a, h, &grid, kind, true)?;
        let ob = quantize(b, h, &grid, kind, true)?;
        let diff = dense_of(&oa).sub(dense_of(&ob));
        data.push((h, dense_norm(&diff, seed)?));
    }
    Ok(data)
}
