//! Periodic grids on the torus (R/2piZ)^n, discrete fields, the unitary DFT,
//! and an exact sparse-mode representation for high-frequency families.
//!
//! The torus carries the normalized measure dx/(2pi)^n, so the pure modes
//! e^{ik.x} form an orthonormal family and band-limited quadrature is exact.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

/// A tensor-product grid with `dims[a]` points on axis `a`, nodes at
/// `x = 2pi j / N_a`. Every axis count must be even and at least 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    dims: Vec<usize>,
}

impl Grid {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Spec("grid needs at least one axis".into()));
        }
        for &n in &dims {
            if n < 2 || n % 2 != 0 {
                return Err(Error::Spec(format!("axis size {n} must be even and >= 2")));
            }
        }
        Ok(Grid { dims })
    }

    pub fn square(n_axes: usize, points: usize) -> Result<Self> {
        Grid::new(vec![points; n_axes])
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Point coordinates of the flat (row-major) index `j`.
    pub fn point(&self, mut j: usize, out: &mut [f64]) {
        for a in (0..self.dims.len()).rev() {
            let n = self.dims[a];
            out[a] = 2.0 * PI * ((j % n) as f64) / (n as f64);
            j /= n;
        }
    }

    /// Signed frequency of the flat index along each axis, in [-N/2, N/2).
    pub fn freq(&self, mut j: usize, out: &mut [i64]) {
        for a in (0..self.dims.len()).rev() {
            let n = self.dims[a] as i64;
            let i = (j % self.dims[a]) as i64;
            out[a] = if i < n / 2 { i } else { i - n };
            j /= self.dims[a];
        }
    }

    /// Flat index of a signed frequency vector; None if not representable.
    pub fn flat_of_freq(&self, k: &[i64]) -> Option<usize> {
        let mut j = 0usize;
        for (a, &ka) in k.iter().enumerate() {
            let n = self.dims[a] as i64;
            if ka < -n / 2 || ka >= n / 2 {
                return None;
            }
            let wrapped = ((ka % n) + n) % n;
            j = j * self.dims[a] + wrapped as usize;
        }
        Some(j)
    }

    /// Flat index of a frequency vector wrapped modulo the grid (aliasing
    /// allowed). Used for difference indices k' - k, which are periodic.
    pub fn flat_of_freq_wrapped(&self, k: &[i64]) -> usize {
        let mut j = 0usize;
        for (a, &ka) in k.iter().enumerate() {
            let n = self.dims[a] as i64;
            let wrapped = ((ka % n) + n) % n;
            j = j * self.dims[a] + wrapped as usize;
        }
        j
    }

    /// Strict aliasing-free criterion for modes: |k_a| < N_a/2 on every
    /// axis. The Nyquist bin -N_a/2 exists as a DFT index but is excluded
    /// from mode constructors.
    pub fn mode_representable(&self, k: &[i64]) -> bool {
        k.len() == self.dim()
            && k.iter()
                .zip(self.dims.iter())
                .all(|(&ka, &na)| (ka.unsigned_abs() as usize) < na / 2)
    }
}

/// A complex field sampled on a grid, tagged with its semiclassical parameter.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<Complex64>,
    pub h: f64,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<Complex64>, h: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Mismatch(format!(
                "field length {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::Spec(format!("h = {h} must lie in (0, 1]")));
        }
        Ok(GridFunction { grid, values, h })
    }

    pub fn zero(grid: Grid, h: f64) -> Result<Self> {
        let n = grid.len();
        GridFunction::new(grid, vec![Complex64::ZERO; n], h)
    }
}

/// Fourier coefficients over k in prod [-N_a/2, N_a/2), unitary convention:
/// forward transform carries 1/(N_1...N_n) so Parseval reads
/// sum |coeffs|^2 = (1/P) sum |values|^2.
#[derive(Debug, Clone)]
pub struct FourierCoefficients {
    pub grid: Grid,
    pub coeffs: Vec<Complex64>,
    pub h: f64,
}

/// A finite sum of exact Fourier modes `sum c_j e^{i k_j . x}`. Large
/// frequencies (the explicit quasimode families need k up to k^2) stay exact
/// without any grid.
#[derive(Debug, Clone)]
pub struct SparseModeFunction {
    modes: Vec<(Vec<i64>, Complex64)>,
    pub h: f64,
}

impl SparseModeFunction {
    /// Duplicated mode vectors are merged by summing coefficients, so the
    /// stored list is always pairwise distinct.
    pub fn new(modes: Vec<(Vec<i64>, Complex64)>, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Spec(format!("h = {h} must be positive")));
        }
        let mut map: HashMap<Vec<i64>, Complex64> = HashMap::new();
        let mut orderkeys: Vec<Vec<i64>> = Vec::new();
        for (k, c) in modes {
            if let Some(slot) = map.get_mut(&k) {
                *slot += c;
            } else {
                orderkeys.push(k.clone());
                map.insert(k, c);
            }
        }
        let merged = orderkeys
            .into_iter()
            .map(|k| {
                let c = map[&k];
                (k, c)
            })
            .collect();
        Ok(SparseModeFunction { modes: merged, h })
    }

    pub fn single(k: Vec<i64>, h: f64) -> Result<Self> {
        SparseModeFunction::new(vec![(k, Complex64::ONE)], h)
    }

    pub fn modes(&self) -> &[(Vec<i64>, Complex64)] {
        &self.modes
    }

    pub fn dim(&self) -> usize {
        self.modes.first().map(|(k, _)| k.len()).unwrap_or(0)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let modes = self.modes.iter().map(|(k, c)| (k.clone(), c * s)).collect();
        SparseModeFunction { modes, h: self.h }
    }

    /// Shift every mode index by `-k0` (exact modulation e^{-i k0.x}).
    pub fn modulate(&self, k0: &[i64]) -> Self {
        let modes = self
            .modes
            .iter()
            .map(|(k, c)| {
                let shifted = k.iter().zip(k0.iter()).map(|(a, b)| a - b).collect();
                (shifted, *c)
            })
            .collect();
        SparseModeFunction { modes, h: self.h }
    }

    /// Sample onto a grid. Errors if any mode aliases.
    pub fn densify(&self, grid: &Grid) -> Result<GridFunction> {
        for (k, _) in &self.modes {
            if !grid.mode_representable(k) {
                return Err(Error::Alias { mode: k.clone(), dims: grid.dims().to_vec() });
            }
        }
        let n = grid.dim();
        let mut values = vec![Complex64::ZERO; grid.len()];
        let mut x = vec![0.0; n];
        for (j, v) in values.iter_mut().enumerate() {
            grid.point(j, &mut x);
            let mut acc = Complex64::ZERO;
            for (k, c) in &self.modes {
                let phase: f64 = k.iter().zip(x.iter()).map(|(&ka, &xa)| ka as f64 * xa).sum();
                acc += c * Complex64::new(phase.cos(), phase.sin());
            }
            *v = acc;
        }
        GridFunction::new(grid.clone(), values, self.h)
    }
}

/// Pure mode e^{ik.x} as a grid field; unit L2 norm under the normalized
/// measure. Rejects the Nyquist frequency (|k_a| >= N_a/2).
pub fn make_mode(grid: &Grid, k: &[i64], h: f64) -> Result<GridFunction> {
    if !grid.mode_representable(k) {
        return Err(Error::Alias { mode: k.to_vec(), dims: grid.dims().to_vec() });
    }
    let n = grid.dim();
    let mut values = vec![Complex64::ZERO; grid.len()];
    let mut x = vec![0.0; n];
    for (j, v) in values.iter_mut().enumerate() {
        grid.point(j, &mut x);
        let phase: f64 = k.iter().zip(x.iter()).map(|(&ka, &xa)| ka as f64 * xa).sum();
        *v = Complex64::new(phase.cos(), phase.sin());
    }
    GridFunction::new(grid.clone(), values, h)
}

// ---------------------------------------------------------------------------
// DFT engine.
//
// Hand-rolled O(N^2)-per-line transforms with a reflectively symmetric
// twiddle table: table[N - i] is the exact complex conjugate of table[i].
// This makes DFT(conj u)(m) == conj(DFT(u)(-m)) bit-exact, which in turn
// makes the adjoint and Hermiticity identities of the quantization exact at
// the matrix level. Grid axes stay <= a few thousand points, so the
// quadratic cost is irrelevant next to the dense operator algebra.
// ---------------------------------------------------------------------------

static TWIDDLES: OnceLock<Mutex<HashMap<usize, Arc<Vec<Complex64>>>>> = OnceLock::new();

fn twiddle_table(n: usize) -> Arc<Vec<Complex64>> {
    let cache = TWIDDLES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(n)
        .or_insert_with(|| {
            let mut t = vec![Complex64::ZERO; n];
            for (i, slot) in t.iter_mut().enumerate().take(n / 2 + 1) {
                let theta = -2.0 * PI * (i as f64) / (n as f64);
                *slot = Complex64::new(theta.cos(), theta.sin());
            }
            t[0] = Complex64::ONE;
            if n % 2 == 0 {
                t[n / 2] = Complex64::new(-1.0, 0.0);
            }
            if n % 4 == 0 {
                t[n / 4] = Complex64::new(0.0, -1.0);
            }
            for i in (n / 2 + 1)..n {
                t[i] = t[n - i].conj();
            }
            Arc::new(t)
        })
        .clone()
}

/// One line: `out[m] = sum_j line[j] * e^{-2pi i jm/N}` (sign < 0) or the
/// synthesis sign e^{+2pi i jm/N} (sign > 0). No normalization.
fn dft_line(line: &[Complex64], out: &mut [Complex64], sign: i32) {
    let n = line.len();
    let table = twiddle_table(n);
    for (m, slot) in out.iter_mut().enumerate() {
        let mut acc = Complex64::ZERO;
        let mut idx = 0usize;
        for &v in line {
            let w = if sign < 0 { table[idx] } else { table[idx].conj() };
            acc += v * w;
            idx += m;
            if idx >= n {
                idx -= n;
            }
        }
        *slot = acc;
    }
}

/// Multi-dimensional DFT over the grid, applied axis by axis. `sign < 0` is
/// analysis, `sign > 0` synthesis; normalization is the caller's business.
fn dft_nd(grid: &Grid, data: &mut [Complex64], sign: i32) {
    let dims = grid.dims();
    let total = grid.len();
    let ndim = dims.len();
    let mut stride = 1usize;
    for a in (0..ndim).rev() {
        let n = dims[a];
        let mut line = vec![Complex64::ZERO; n];
        let mut out = vec![Complex64::ZERO; n];
        let block = stride * n;
        let nblocks = total / block;
        for b in 0..nblocks {
            for off in 0..stride {
                let base = b * block + off;
                for (i, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + i * stride];
                }
                dft_line(&line, &mut out, sign);
                for (i, &v) in out.iter().enumerate() {
                    data[base + i * stride] = v;
                }
            }
        }
        stride *= n;
    }
}

pub fn fourier_forward(u: &GridFunction) -> FourierCoefficients {
    let mut coeffs = u.values.clone();
    dft_nd(&u.grid, &mut coeffs, -1);
    let scale = 1.0 / (u.grid.len() as f64);
    for c in &mut coeffs {
        *c *= scale;
    }
    FourierCoefficients { grid: u.grid.clone(), coeffs, h: u.h }
}

pub fn fourier_inverse(c: &FourierCoefficients) -> GridFunction {
    let mut values = c.coeffs.clone();
    dft_nd(&c.grid, &mut values, 1);
    GridFunction { grid: c.grid.clone(), values, h: c.h }
}

/// Analysis of a raw slice on a grid (used for symbol slices); includes the
/// 1/P normalization so the output are honest Fourier coefficients.
pub fn analyze_slice(grid: &Grid, data: &[Complex64]) -> Vec<Complex64> {
    let mut coeffs = data.to_vec();
    dft_nd(grid, &mut coeffs, -1);
    let scale = 1.0 / (grid.len() as f64);
    for c in &mut coeffs {
        *c *= scale;
    }
    coeffs
}

/// Synthesis without normalization: `values[j] = sum_k coeffs[k] e^{+ik.x_j}`.
pub fn synthesize_slice(grid: &Grid, coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut values = coeffs.to_vec();
    dft_nd(grid, &mut values, 1);
    values
}

// ---------------------------------------------------------------------------
// Norms and inner products.
// ---------------------------------------------------------------------------

pub fn l2_norm_grid(u: &GridFunction) -> f64 {
    let p = u.grid.len() as f64;
    (u.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / p).sqrt()
}

pub fn l2_norm_sparse(u: &SparseModeFunction) -> f64 {
    u.modes.iter().map(|(_, c)| c.norm_sqr()).sum::<f64>().sqrt()
}

/// <u, v> = integral of u * conj(v) under the normalized measure.
pub fn inner_product(u: &GridFunction, v: &GridFunction) -> Result<Complex64> {
    if u.grid != v.grid {
        return Err(Error::Mismatch("inner product needs matching grids".into()));
    }
    let p = u.grid.len() as f64;
    Ok(u.values
        .iter()
        .zip(v.values.iter())
        .map(|(a, b)| a * b.conj())
        .sum::<Complex64>()
        / p)
}

/// Deterministic pseudo-random field (SplitMix64 driven), for Parseval and
/// dense/lazy agreement checks.
pub fn random_field(grid: &Grid, h: f64, seed: u64) -> GridFunction {
    let mut state = seed.wrapping_add(0x9E3779B97F4A7C15);
    let mut next = move || {
        state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    };
    let values = (0..grid.len())
        .map(|_| {
            let a = (next() >> 11) as f64 / (1u64 << 53) as f64;
            let b = (next() >> 11) as f64 / (1u64 << 53) as f64;
            Complex64::new(2.0 * a - 1.0, 2.0 * b - 1.0)
        })
        .collect();
    GridFunction { grid: grid.clone(), values, h }
}

/// CSV dump (flat index, re, im); a debugging aid, not a stability contract.
pub fn dump_field_csv(u: &GridFunction) -> String {
    let mut s = String::from("index,re,im\n");
    for (j, v) in u.values.iter().enumerate() {
        s.push_str(&format!("{j},{},{}\n", v.re, v.im));
    }
    s
}
