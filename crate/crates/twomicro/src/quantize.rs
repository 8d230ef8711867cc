//! Exact discrete left/right/Weyl quantization on the torus.
//!
//! Quantization is defined spectrally: the matrix element between plane waves
//! is `A[k', k] = a_hat_x(k' - k; xi*)` where `a_hat_x` is the x-Fourier
//! coefficient of the symbol slice and `xi* = hk` (left), `hk'` (right), or
//! `h(k + k')/2` (Weyl, momentum midpoint). On band-limited data this
//! reproduces the quantization integrals exactly, so the h -> 0 studies carry
//! no quadrature ambiguity.

use crate::error::{Error, Result};
use crate::grid::{
    analyze_slice, fourier_forward, synthesize_slice, Grid, GridFunction, SparseModeFunction,
};
use crate::symbols::{SymbolOrder, TwoMicroSymbol};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hard cap on the total Fourier dimension of dense forms.
pub const DENSE_CAP: usize = 4096;

/// Relative spectral tail mass above which a dense build flags x-aliasing.
pub const ALIAS_TAIL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizationKind {
    Left,
    Right,
    Weyl,
}

/// Row-major dense matrix over the grid's Fourier basis; `a[row * p + col]`
/// with row = k' (output frequency) and col = k (input frequency), both in
/// wrapped flat order.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    pub p: usize,
    pub a: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn zeros(p: usize) -> Self {
        DenseMatrix { p, a: vec![Complex64::ZERO; p * p] }
    }

    pub fn identity(p: usize) -> Self {
        let mut m = DenseMatrix::zeros(p);
        for i in 0..p {
            m.a[i * p + i] = Complex64::ONE;
        }
        m
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.a[row * self.p + col]
    }

    pub fn conj_transpose(&self) -> DenseMatrix {
        let p = self.p;
        let mut out = DenseMatrix::zeros(p);
        for i in 0..p {
            for j in 0..p {
                out.a[i * p + j] = self.a[j * p + i].conj();
            }
        }
        out
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        let a = self.a.iter().zip(other.a.iter()).map(|(x, y)| x - y).collect();
        DenseMatrix { p: self.p, a }
    }

    pub fn scale(&self, s: Complex64) -> DenseMatrix {
        DenseMatrix { p: self.p, a: self.a.iter().map(|x| x * s).collect() }
    }

    pub fn matvec(&self, v: &[Complex64], out: &mut [Complex64]) {
        let p = self.p;
        out.par_chunks_mut(1).enumerate().for_each(|(i, slot)| {
            let row = &self.a[i * p..(i + 1) * p];
            let mut acc = Complex64::ZERO;
            for (r, x) in row.iter().zip(v.iter()) {
                acc += r * x;
            }
            slot[0] = acc;
        });
    }

    pub fn matvec_adj(&self, v: &[Complex64], out: &mut [Complex64]) {
        // out = A^H v, columnwise accumulation
        let p = self.p;
        for slot in out.iter_mut() {
            *slot = Complex64::ZERO;
        }
        for i in 0..p {
            let vi = v[i];
            if vi == Complex64::ZERO {
                continue;
            }
            let row = &self.a[i * p..(i + 1) * p];
            for (j, r) in row.iter().enumerate() {
                out[j] += r.conj() * vi;
            }
        }
    }

    /// C = self * other; row-blocked and parallel over rows.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        let p = self.p;
        assert_eq!(p, other.p);
        let mut out = DenseMatrix::zeros(p);
        out.a.par_chunks_mut(p).enumerate().for_each(|(i, crow)| {
            let arow = &self.a[i * p..(i + 1) * p];
            for (k, &aik) in arow.iter().enumerate() {
                if aik == Complex64::ZERO {
                    continue;
                }
                let brow = &other.a[k * p..(k + 1) * p];
                for (c, &b) in crow.iter_mut().zip(brow.iter()) {
                    *c += aik * b;
                }
            }
        });
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// CSV export: k' and k as semicolon-joined signed components.
    pub fn to_csv(&self, grid: &Grid) -> String {
        let n = grid.dim();
        let mut kp = vec![0i64; n];
        let mut k = vec![0i64; n];
        let mut s = String::from("kp,k,re,im\n");
        for i in 0..self.p {
            grid.freq(i, &mut kp);
            for j in 0..self.p {
                grid.freq(j, &mut k);
                let v = self.get(i, j);
                if v == Complex64::ZERO {
                    continue;
                }
                let kp_s: Vec<String> = kp.iter().map(|x| x.to_string()).collect();
                let k_s: Vec<String> = k.iter().map(|x| x.to_string()).collect();
                s.push_str(&format!("{},{},{},{}\n", kp_s.join(";"), k_s.join(";"), v.re, v.im));
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub enum OperatorForm {
    Dense(DenseMatrix),
    Lazy,
}

/// Records whether the stored symbol is the operator's own or the conjugate
/// (after `adjoint`, which swaps left and right quantization).
#[derive(Debug, Clone)]
pub enum SymbolRef {
    Direct(TwoMicroSymbol),
    ConjOf(TwoMicroSymbol),
}

/// A quantized operator: a dense Fourier-basis matrix or a matrix-free
/// applier, tagged with quantization kind and bi-order.
#[derive(Debug, Clone)]
pub struct OperatorRep {
    pub kind: QuantizationKind,
    pub symbol: SymbolRef,
    pub h: f64,
    pub grid: Grid,
    pub order: SymbolOrder,
    pub form: OperatorForm,
    pub alias_warning: bool,
}

fn own_symbol(s: &SymbolRef) -> Result<&TwoMicroSymbol> {
    match s {
        SymbolRef::Direct(sym) => Ok(sym),
        SymbolRef::ConjOf(_) => Err(Error::Mismatch(
            "operation needs a directly quantized symbol, not an adjoint".into(),
        )),
    }
}

/// Per-term x-Fourier coefficient table on the grid, plus the aliasing flag.
fn x_coeff_table(
    x: &dyn crate::symbols::XFactor,
    grid: &Grid,
) -> (Vec<Complex64>, bool) {
    if let Some(modes) = x.fourier_modes() {
        let mut table = vec![Complex64::ZERO; grid.len()];
        let mut warn = false;
        for (k, c) in modes {
            if grid.flat_of_freq(&k).is_none() {
                warn = true;
            }
            let idx = grid.flat_of_freq_wrapped(&k);
            table[idx] += c;
        }
        (table, warn)
    } else {
        let samples = x.sample(grid);
        let table = analyze_slice(grid, &samples);
        // tail mass at near-Nyquist frequencies on any axis
        let total: f64 = table.iter().map(|v| v.norm_sqr()).sum();
        let mut tail = 0.0;
        let n = grid.dim();
        let mut k = vec![0i64; n];
        for (j, v) in table.iter().enumerate() {
            grid.freq(j, &mut k);
            let near_nyquist = k
                .iter()
                .zip(grid.dims().iter())
                .any(|(&ka, &na)| ka.unsigned_abs() as usize >= na / 2 - 1);
            if near_nyquist {
                tail += v.norm_sqr();
            }
        }
        (table, total > 0.0 && tail / total > ALIAS_TAIL_TOL)
    }
}

/// Quantize a symbol on a grid. `dense = true` builds the full matrix
/// (subject to the cap); otherwise the operator stays matrix-free.
pub fn quantize(
    a: &TwoMicroSymbol,
    h: f64,
    grid: &Grid,
    kind: QuantizationKind,
    dense: bool,
) -> Result<OperatorRep> {
    quantize_capped(a, h, grid, kind, dense, DENSE_CAP)
}

pub fn quantize_capped(
    a: &TwoMicroSymbol,
    h: f64,
    grid: &Grid,
    kind: QuantizationKind,
    dense: bool,
    cap: usize,
) -> Result<OperatorRep> {
    if a.dim != grid.dim() {
        return Err(Error::Mismatch("symbol and grid dimensions differ".into()));
    }
    let p = grid.len();
    if dense && p > cap {
        return Err(Error::Cap { dim: p, cap });
    }
    let mut alias_warning = false;
    let form = if dense {
        let m = build_dense(a, h, grid, kind, &mut alias_warning)?;
        OperatorForm::Dense(m)
    } else {
        if let Some(terms) = a.terms() {
            for t in terms {
                let (_, warn) = x_coeff_table(t.x.as_ref(), grid);
                alias_warning |= warn;
            }
        }
        OperatorForm::Lazy
    };
    Ok(OperatorRep {
        kind,
        symbol: SymbolRef::Direct(a.clone()),
        h,
        grid: grid.clone(),
        order: a.order,
        form,
        alias_warning,
    })
}

fn freq_table(grid: &Grid) -> Vec<Vec<i64>> {
    let n = grid.dim();
    (0..grid.len())
        .map(|j| {
            let mut k = vec![0i64; n];
            grid.freq(j, &mut k);
            k
        })
        .collect()
}

fn build_dense(
    a: &TwoMicroSymbol,
    h: f64,
    grid: &Grid,
    kind: QuantizationKind,
    alias_warning: &mut bool,
) -> Result<DenseMatrix> {
    let p = grid.len();
    let n = grid.dim();
    let freqs = freq_table(grid);
    let mut out = DenseMatrix::zeros(p);

    // Strides of the (2N_a - 1)-sized midpoint table for the Weyl case;
    // sums k_a + k'_a range over [-N_a, N_a - 2].
    let sum_dims: Vec<usize> = grid.dims().iter().map(|&d| 2 * d - 1).collect();
    let sum_index = |ka: &[i64], kb: &[i64]| -> usize {
        let mut idx = 0usize;
        for a0 in 0..n {
            let s = ka[a0] + kb[a0] + grid.dims()[a0] as i64;
            idx = idx * sum_dims[a0] + s as usize;
        }
        idx
    };

    if let Some(terms) = a.terms() {
        for t in terms {
            let (xhat, warn) = x_coeff_table(t.x.as_ref(), grid);
            *alias_warning |= warn;
            let xi_col: Vec<Complex64> = match kind {
                QuantizationKind::Left | QuantizationKind::Right => (0..p)
                    .into_par_iter()
                    .map(|j| {
                        let xi: Vec<f64> = freqs[j].iter().map(|&k| h * k as f64).collect();
                        t.xi.eval(&xi, h)
                    })
                    .collect(),
                QuantizationKind::Weyl => {
                    let total: usize = sum_dims.iter().product();
                    (0..total)
                        .into_par_iter()
                        .map(|mut idx| {
                            let mut s = vec![0i64; n];
                            for a0 in (0..n).rev() {
                                let d = sum_dims[a0];
                                s[a0] = (idx % d) as i64 - grid.dims()[a0] as i64;
                                idx /= d;
                            }
                            let xi: Vec<f64> =
                                s.iter().map(|&v| 0.5 * h * v as f64).collect();
                            t.xi.eval(&xi, h)
                        })
                        .collect()
                }
            };
            let coeff = t.coeff;
            out.a.par_chunks_mut(p).enumerate().for_each(|(i, row)| {
                let ki = &freqs[i];
                let mut diff = vec![0i64; n];
                for (j, slot) in row.iter_mut().enumerate() {
                    let kj = &freqs[j];
                    for a0 in 0..n {
                        diff[a0] = ki[a0] - kj[a0];
                    }
                    let d = grid.flat_of_freq_wrapped(&diff);
                    let xv = xhat[d];
                    if xv == Complex64::ZERO {
                        continue;
                    }
                    let s = match kind {
                        QuantizationKind::Left => xi_col[j],
                        QuantizationKind::Right => xi_col[i],
                        QuantizationKind::Weyl => xi_col[sum_index(ki, kj)],
                    };
                    *slot += coeff * xv * s;
                }
            });
        }
        return Ok(out);
    }

    // Opaque path: one x-slice DFT per needed xi*.
    let slice_for = |xi: &[f64]| -> Vec<Complex64> {
        let mut x = vec![0.0; n];
        let samples: Vec<Complex64> = (0..p)
            .map(|j| {
                grid.point(j, &mut x);
                a.eval(&x, xi, h)
            })
            .collect();
        analyze_slice(grid, &samples)
    };
    match kind {
        QuantizationKind::Left | QuantizationKind::Right => {
            let slices: Vec<Vec<Complex64>> = (0..p)
                .into_par_iter()
                .map(|j| {
                    let xi: Vec<f64> = freqs[j].iter().map(|&k| h * k as f64).collect();
                    slice_for(&xi)
                })
                .collect();
            out.a.par_chunks_mut(p).enumerate().for_each(|(i, row)| {
                let ki = &freqs[i];
                let mut diff = vec![0i64; n];
                for (j, slot) in row.iter_mut().enumerate() {
                    let kj = &freqs[j];
                    for a0 in 0..n {
                        diff[a0] = ki[a0] - kj[a0];
                    }
                    let d = grid.flat_of_freq_wrapped(&diff);
                    let sl = match kind {
                        QuantizationKind::Left => &slices[j],
                        _ => &slices[i],
                    };
                    *slot = sl[d];
                }
            });
        }
        QuantizationKind::Weyl => {
            let total: usize = sum_dims.iter().product();
            let slices: Vec<Vec<Complex64>> = (0..total)
                .into_par_iter()
                .map(|mut idx| {
                    let mut s = vec![0i64; n];
                    for a0 in (0..n).rev() {
                        let d = sum_dims[a0];
                        s[a0] = (idx % d) as i64 - grid.dims()[a0] as i64;
                        idx /= d;
                    }
                    let xi: Vec<f64> = s.iter().map(|&v| 0.5 * h * v as f64).collect();
                    slice_for(&xi)
                })
                .collect();
            out.a.par_chunks_mut(p).enumerate().for_each(|(i, row)| {
                let ki = &freqs[i];
                let mut diff = vec![0i64; n];
                for (j, slot) in row.iter_mut().enumerate() {
                    let kj = &freqs[j];
                    for a0 in 0..n {
                        diff[a0] = ki[a0] - kj[a0];
                    }
                    let d = grid.flat_of_freq_wrapped(&diff);
                    *slot = slices[sum_index(ki, kj)][d];
                }
            });
        }
    }
    Ok(out)
}

/// Apply an operator to a grid field. Dense and lazy paths agree to
/// rounding; the lazy left/right paths run through the DFT.
pub fn apply(op: &OperatorRep, u: &GridFunction) -> Result<GridFunction> {
    if u.grid != op.grid {
        return Err(Error::Mismatch("operator and field grids differ".into()));
    }
    if (u.h - op.h).abs() > 1e-15 * op.h {
        return Err(Error::Mismatch(format!(
            "operator h = {} but field h = {}",
            op.h, u.h
        )));
    }
    let p = op.grid.len();
    let uhat = fourier_forward(u);
    let out_hat: Vec<Complex64> = match &op.form {
        OperatorForm::Dense(m) => {
            let mut out = vec![Complex64::ZERO; p];
            m.matvec(&uhat.coeffs, &mut out);
            out
        }
        OperatorForm::Lazy => {
            let sym = own_symbol(&op.symbol)?;
            lazy_apply_hat(sym, op.h, &op.grid, op.kind, &uhat.coeffs)?
        }
    };
    let values = synthesize_slice(&op.grid, &out_hat);
    GridFunction::new(op.grid.clone(), values, op.h)
}

fn lazy_apply_hat(
    sym: &TwoMicroSymbol,
    h: f64,
    grid: &Grid,
    kind: QuantizationKind,
    uhat: &[Complex64],
) -> Result<Vec<Complex64>> {
    let p = grid.len();
    let n = grid.dim();
    let freqs = freq_table(grid);
    let mut acc = vec![Complex64::ZERO; p];
    match sym.terms() {
        Some(terms) => {
            for t in terms {
                let (xhat, _) = x_coeff_table(t.x.as_ref(), grid);
                match kind {
                    QuantizationKind::Left => {
                        // multiply by Xi(hk) in k, then convolve with xhat
                        let weighted: Vec<Complex64> = (0..p)
                            .map(|j| {
                                let xi: Vec<f64> =
                                    freqs[j].iter().map(|&k| h * k as f64).collect();
                                uhat[j] * t.xi.eval(&xi, h)
                            })
                            .collect();
                        convolve_into(grid, &xhat, &weighted, t.coeff, &mut acc);
                    }
                    QuantizationKind::Right => {
                        let mut conv = vec![Complex64::ZERO; p];
                        convolve_into(grid, &xhat, uhat, Complex64::ONE, &mut conv);
                        for (j, slot) in acc.iter_mut().enumerate() {
                            let xi: Vec<f64> =
                                freqs[j].iter().map(|&k| h * k as f64).collect();
                            *slot += t.coeff * conv[j] * t.xi.eval(&xi, h);
                        }
                    }
                    QuantizationKind::Weyl => {
                        let mut diff = vec![0i64; n];
                        let mut xi = vec![0.0; n];
                        for i in 0..p {
                            let mut v = Complex64::ZERO;
                            for (j, &uj) in uhat.iter().enumerate() {
                                if uj == Complex64::ZERO {
                                    continue;
                                }
                                for a0 in 0..n {
                                    diff[a0] = freqs[i][a0] - freqs[j][a0];
                                    xi[a0] =
                                        0.5 * h * (freqs[i][a0] + freqs[j][a0]) as f64;
                                }
                                let d = grid.flat_of_freq_wrapped(&diff);
                                if xhat[d] == Complex64::ZERO {
                                    continue;
                                }
                                v += xhat[d] * t.xi.eval(&xi, h) * uj;
                            }
                            acc[i] += t.coeff * v;
                        }
                    }
                }
            }
        }
        None => {
            // opaque: row sums against per-column slices (left) or per-row (right/weyl)
            let mut x = vec![0.0; n];
            match kind {
                QuantizationKind::Left => {
                    // (Au)(x) = sum_k uhat[k] a(x, hk) e^{ikx}; accumulate in x space
                    let mut vals = vec![Complex64::ZERO; p];
                    for (j, &uj) in uhat.iter().enumerate() {
                        if uj == Complex64::ZERO {
                            continue;
                        }
                        let xi: Vec<f64> = freqs[j].iter().map(|&k| h * k as f64).collect();
                        let mut unit = vec![Complex64::ZERO; p];
                        unit[j] = uj;
                        let mode = synthesize_slice(grid, &unit);
                        for (i, slot) in vals.iter_mut().enumerate() {
                            grid.point(i, &mut x);
                            *slot += sym.eval(&x, &xi, h) * mode[i];
                        }
                    }
                    return Ok(analyze_slice(grid, &vals));
                }
                _ => {
                    return Err(Error::Mismatch(
                        "lazy right/weyl application needs a term-structured symbol".into(),
                    ))
                }
            }
        }
    }
    Ok(acc)
}

fn convolve_into(
    grid: &Grid,
    xhat: &[Complex64],
    src: &[Complex64],
    coeff: Complex64,
    acc: &mut [Complex64],
) {
    let n = grid.dim();
    let freqs = freq_table(grid);
    let mut diff = vec![0i64; n];
    for (i, slot) in acc.iter_mut().enumerate() {
        let mut v = Complex64::ZERO;
        for (j, &s) in src.iter().enumerate() {
            if s == Complex64::ZERO {
                continue;
            }
            for a0 in 0..n {
                diff[a0] = freqs[i][a0] - freqs[j][a0];
            }
            let d = grid.flat_of_freq_wrapped(&diff);
            if xhat[d] != Complex64::ZERO {
                v += xhat[d] * s;
            }
        }
        *slot += coeff * v;
    }
}

/// Exact left/right action on a sparse mode sum, staying sparse. Requires a
/// term-structured symbol whose x-factors are trigonometric.
pub fn apply_to_sparse(
    sym: &TwoMicroSymbol,
    kind: QuantizationKind,
    u: &SparseModeFunction,
) -> Result<SparseModeFunction> {
    let terms = sym
        .terms()
        .ok_or_else(|| Error::Mismatch("sparse action needs a term-structured symbol".into()))?;
    if matches!(kind, QuantizationKind::Weyl) {
        return Err(Error::Mismatch(
            "sparse action is exact for left/right quantization only".into(),
        ));
    }
    let h = u.h;
    let mut out: Vec<(Vec<i64>, Complex64)> = Vec::new();
    for t in terms {
        let modes = t.x.fourier_modes().ok_or_else(|| {
            Error::Mismatch("sparse action needs trigonometric x-factors".into())
        })?;
        for (k, c) in u.modes() {
            for (b, xc) in &modes {
                let kout: Vec<i64> = k.iter().zip(b.iter()).map(|(a, b)| a + b).collect();
                let xi_arg: Vec<f64> = match kind {
                    QuantizationKind::Left => k.iter().map(|&ka| h * ka as f64).collect(),
                    _ => kout.iter().map(|&ka| h * ka as f64).collect(),
                };
                let v = t.coeff * xc * c * t.xi.eval(&xi_arg, h);
                if v != Complex64::ZERO {
                    out.push((kout, v));
                }
            }
        }
    }
    SparseModeFunction::new(out, h)
}

/// Apply an operator to a sparse mode sum. Left/right quantizations of
/// trigonometric-in-x symbols act exactly mode by mode; anything else goes
/// through densification onto the operator's grid.
pub fn apply_sparse(op: &OperatorRep, u: &SparseModeFunction) -> Result<GridFunction> {
    if (u.h - op.h).abs() > 1e-15 * op.h {
        return Err(Error::Mismatch(format!(
            "operator h = {} but field h = {}",
            op.h, u.h
        )));
    }
    if let SymbolRef::Direct(sym) = &op.symbol {
        if !matches!(op.kind, QuantizationKind::Weyl) {
            if let Ok(out) = apply_to_sparse(sym, op.kind, u) {
                return out.densify(&op.grid);
            }
        }
    }
    apply(op, &u.densify(&op.grid)?)
}

/// Conjugate-transpose; metadata records the kind swap (left <-> right with
/// the conjugated symbol).
pub fn adjoint(op: &OperatorRep) -> Result<OperatorRep> {
    let m = match &op.form {
        OperatorForm::Dense(m) => m.conj_transpose(),
        OperatorForm::Lazy => {
            return Err(Error::Cap { dim: op.grid.len(), cap: 0 });
        }
    };
    let kind = match op.kind {
        QuantizationKind::Left => QuantizationKind::Right,
        QuantizationKind::Right => QuantizationKind::Left,
        QuantizationKind::Weyl => QuantizationKind::Weyl,
    };
    let symbol = match &op.symbol {
        SymbolRef::Direct(s) => SymbolRef::ConjOf(s.clone()),
        SymbolRef::ConjOf(s) => SymbolRef::Direct(s.clone()),
    };
    Ok(OperatorRep {
        kind,
        symbol,
        h: op.h,
        grid: op.grid.clone(),
        order: op.order,
        form: OperatorForm::Dense(m),
        alias_warning: op.alias_warning,
    })
}

/// Largest singular value by power iteration on A*A. Deterministic start
/// vector from the seed; relative tolerance 1e-8, iteration cap 10^4.
pub fn operator_norm(op: &OperatorRep, seed: u64) -> Result<f64> {
    match &op.form {
        OperatorForm::Dense(m) => dense_norm(m, seed),
        OperatorForm::Lazy => Err(Error::Cap { dim: op.grid.len(), cap: 0 }),
    }
}

pub fn dense_norm(m: &DenseMatrix, seed: u64) -> Result<f64> {
    let p = m.p;
    let mut state = seed.wrapping_add(0x9E3779B97F4A7C15);
    let mut next = move || {
        state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    };
    let mut v: Vec<Complex64> = (0..p)
        .map(|_| {
            let a = (next() >> 11) as f64 / (1u64 << 53) as f64;
            let b = (next() >> 11) as f64 / (1u64 << 53) as f64;
            Complex64::new(2.0 * a - 1.0, 2.0 * b - 1.0)
        })
        .collect();
    let norm = |x: &[Complex64]| x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let nv = norm(&v);
    if nv == 0.0 {
        return Ok(0.0);
    }
    for x in &mut v {
        *x /= nv;
    }
    let mut w = vec![Complex64::ZERO; p];
    let mut z = vec![Complex64::ZERO; p];
    let mut sigma_prev = -1.0;
    let cap = 10_000;
    for _ in 0..cap {
        m.matvec(&v, &mut w);
        let sigma = norm(&w);
        if sigma < 1e-300 {
            return Ok(0.0);
        }
        m.matvec_adj(&w, &mut z);
        let nz = norm(&z);
        if nz < 1e-300 {
            return Ok(sigma);
        }
        for (a, b) in v.iter_mut().zip(z.iter()) {
            *a = b / nz;
        }
        if sigma_prev > 0.0 && (sigma - sigma_prev).abs() <= 1e-8 * sigma {
            return Ok(sigma);
        }
        sigma_prev = sigma;
    }
    Err(Error::Convergence(cap))
}

/// Sampled symbol table recovered from a dense left quantization:
/// a(x_j, hk) = sum_{k'} A[k', k] e^{i(k' - k) . x_j}.
pub struct SymbolTable {
    pub grid: Grid,
    /// xi value of each column (momentum slice).
    pub xi: Vec<Vec<f64>>,
    /// `values[col][x-index]`
    pub values: Vec<Vec<Complex64>>,
}

pub fn recover_symbol(op: &OperatorRep) -> Result<SymbolTable> {
    let m = match &op.form {
        OperatorForm::Dense(m) => m,
        OperatorForm::Lazy => return Err(Error::Cap { dim: op.grid.len(), cap: 0 }),
    };
    if !matches!(op.kind, QuantizationKind::Left) {
        return Err(Error::Mismatch("symbol recovery is defined for left quantization".into()));
    }
    let grid = &op.grid;
    let p = grid.len();
    let n = grid.dim();
    let freqs = freq_table(grid);
    let mut xi = Vec::with_capacity(p);
    let mut values = Vec::with_capacity(p);
    let mut diff = vec![0i64; n];
    for col in 0..p {
        xi.push(freqs[col].iter().map(|&k| op.h * k as f64).collect::<Vec<f64>>());
        // shift column so entry m = k' - k lands at wrapped index m
        let mut coeffs = vec![Complex64::ZERO; p];
        for row in 0..p {
            for a0 in 0..n {
                diff[a0] = freqs[row][a0] - freqs[col][a0];
            }
            let d = grid.flat_of_freq_wrapped(&diff);
            coeffs[d] = m.get(row, col);
        }
        values.push(synthesize_slice(grid, &coeffs));
    }
    Ok(SymbolTable { grid: grid.clone(), xi, values })
}

/// Position-space kernel kappa(x_i, y_j) of a dense operator, from the double
/// inverse DFT; (Au)(x) = (1/P) sum_j kappa(x, x_j) u(x_j).
pub fn position_kernel(op: &OperatorRep) -> Result<Vec<Complex64>> {
    let m = match &op.form {
        OperatorForm::Dense(m) => m,
        OperatorForm::Lazy => return Err(Error::Cap { dim: op.grid.len(), cap: 0 }),
    };
    let grid = &op.grid;
    let p = grid.len();
    // M1[x, k] = sum_{k'} A[k', k] e^{+i k'.x}: synthesize each column.
    let mut m1 = vec![Complex64::ZERO; p * p];
    let cols: Vec<Vec<Complex64>> = (0..p)
        .into_par_iter()
        .map(|col| {
            let column: Vec<Complex64> = (0..p).map(|row| m.get(row, col)).collect();
            synthesize_slice(grid, &column)
        })
        .collect();
    for (col, data) in cols.iter().enumerate() {
        for (x, &v) in data.iter().enumerate() {
            m1[x * p + col] = v;
        }
    }
    // kappa[x, y] = sum_k M1[x, k] e^{-i k.y}: conjugate synthesis over rows.
    let kernel: Vec<Vec<Complex64>> = (0..p)
        .into_par_iter()
        .map(|x| {
            let row: Vec<Complex64> = m1[x * p..(x + 1) * p].iter().map(|v| v.conj()).collect();
            let synth = synthesize_slice(grid, &row);
            synth.into_iter().map(|v| v.conj()).collect()
        })
        .collect();
    let mut out = vec![Complex64::ZERO; p * p];
    for (x, row) in kernel.iter().enumerate() {
        out[x * p..(x + 1) * p].copy_from_slice(row);
    }
    Ok(out)
}

/// Torus distance between two grid points (Euclidean over per-axis wrapped
/// differences).
pub fn torus_distance(grid: &Grid, i: usize, j: usize) -> f64 {
    let n = grid.dim();
    let mut xi = vec![0.0; n];
    let mut xj = vec![0.0; n];
    grid.point(i, &mut xi);
    grid.point(j, &mut xj);
    let two_pi = 2.0 * std::f64::consts::PI;
    xi.iter()
        .zip(xj.iter())
        .map(|(&a, &b)| {
            let d = (a - b).abs() % two_pi;
            let d = d.min(two_pi - d);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Max |kappa(x, y)| over grid pairs with torus distance > separation.
///
/// Left quantizations of term-structured symbols factor the kernel as
/// `sum_t X_t(x) K_t(x - y)` with one synthesis per term, avoiding the
/// O(P^3) double transform; other forms go through `position_kernel`.
pub fn kernel_offdiag_max(op: &OperatorRep, separation: f64) -> Result<f64> {
    if let (QuantizationKind::Left, SymbolRef::Direct(sym)) = (op.kind, &op.symbol) {
        if let Some(terms) = sym.terms() {
            return offdiag_max_from_terms(terms, op.h, &op.grid, separation);
        }
    }
    let kernel = position_kernel(op)?;
    let p = op.grid.len();
    let dists = pair_distances(&op.grid);
    let mut worst: f64 = 0.0;
    for i in 0..p {
        for j in 0..p {
            if dists[i * p + j] > separation {
                worst = worst.max(kernel[i * p + j].norm());
            }
        }
    }
    Ok(worst)
}

fn pair_distances(grid: &Grid) -> Vec<f64> {
    let p = grid.len();
    let n = grid.dim();
    let mut pts = vec![0.0; p * n];
    for j in 0..p {
        let mut x = vec![0.0; n];
        grid.point(j, &mut x);
        pts[j * n..(j + 1) * n].copy_from_slice(&x);
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            let mut acc = 0.0;
            for a in 0..n {
                let d = (pts[i * n + a] - pts[j * n + a]).abs() % two_pi;
                let d = d.min(two_pi - d);
                acc += d * d;
            }
            out[i * p + j] = acc.sqrt();
        }
    }
    out
}

fn offdiag_max_from_terms(
    terms: &[crate::symbols::Term],
    h: f64,
    grid: &Grid,
    separation: f64,
) -> Result<f64> {
    let p = grid.len();
    let n = grid.dim();
    let freqs = freq_table(grid);
    // K_t on the difference lattice: sum_k Xi_t(hk) e^{ik.z}
    let convs: Vec<Vec<Complex64>> = terms
        .iter()
        .map(|t| {
            let slice: Vec<Complex64> = (0..p)
                .map(|j| {
                    let xi: Vec<f64> = freqs[j].iter().map(|&k| h * k as f64).collect();
                    t.xi.eval(&xi, h)
                })
                .collect();
            synthesize_slice(grid, &slice)
        })
        .collect();
    let xs: Vec<Vec<Complex64>> = terms.iter().map(|t| t.x.sample(grid)).collect();
    // z = x - y on the grid is itself a lattice point: index arithmetic per axis
    let dims = grid.dims().to_vec();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut worst: f64 = 0.0;
    let mut xi_idx = vec![0usize; n];
    let mut yi_idx = vec![0usize; n];
    for i in 0..p {
        let mut rem = i;
        for a in (0..n).rev() {
            xi_idx[a] = rem % dims[a];
            rem /= dims[a];
        }
        for j in 0..p {
            let mut rem = j;
            for a in (0..n).rev() {
                yi_idx[a] = rem % dims[a];
                rem /= dims[a];
            }
            // torus distance and difference index
            let mut dist2 = 0.0;
            let mut zflat = 0usize;
            for a in 0..n {
                let dz = (xi_idx[a] + dims[a] - yi_idx[a]) % dims[a];
                zflat = zflat * dims[a] + dz;
                let d = two_pi * dz as f64 / dims[a] as f64;
                let d = d.min(two_pi - d);
                dist2 += d * d;
            }
            if dist2.sqrt() <= separation {
                continue;
            }
            let mut v = Complex64::ZERO;
            for (t, term) in terms.iter().enumerate() {
                v += term.coeff * xs[t][i] * convs[t][zflat];
            }
            worst = worst.max(v.norm());
        }
    }
    Ok(worst)
}

/// Compress a dense operator onto the inner momentum window
/// |k_a| <= N_a / window_div and return its norm. The outermost band of a
/// capped grid truncates compositions, so composition remainders are
/// measured through this window.
pub fn inner_window_norm(op: &OperatorRep, window_div: usize, seed: u64) -> Result<f64> {
    let m = match &op.form {
        OperatorForm::Dense(m) => m,
        OperatorForm::Lazy => return Err(Error::Cap { dim: op.grid.len(), cap: 0 }),
    };
    let grid = &op.grid;
    let p = grid.len();
    let freqs = freq_table(grid);
    let keep: Vec<usize> = (0..p)
        .filter(|&j| {
            freqs[j]
                .iter()
                .zip(grid.dims().iter())
                .all(|(&k, &na)| k.unsigned_abs() as usize <= na / window_div)
        })
        .collect();
    let q = keep.len();
    let mut sub = DenseMatrix::zeros(q);
    for (bi, &i) in keep.iter().enumerate() {
        for (bj, &j) in keep.iter().enumerate() {
            sub.a[bi * q + bj] = m.get(i, j);
        }
    }
    dense_norm(&sub, seed)
}
