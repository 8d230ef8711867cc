//! Truncated multivariate Taylor arithmetic.
//!
//! A [`Jet`] stores the Taylor coefficients `c_alpha = d^alpha f / alpha!` of a
//! function at a point, for all multi-indices `|alpha| <= order`. Symbol
//! constructors evaluate their defining formulas in jet arithmetic, which
//! gives every library symbol exact mixed partials to the depth the Moyal and
//! quantization-conversion expansions require, with no finite differencing.

use num_complex::Complex64;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Enumeration of multi-indices |alpha| <= order in `nvars` variables,
/// with a precomputed sparse multiplication table.
#[derive(Debug)]
pub struct JetSpace {
    pub nvars: usize,
    pub order: usize,
    pub indices: Vec<Vec<u8>>,
    rank: HashMap<Vec<u8>, usize>,
    /// (i, j, k) triples with `indices[i] + indices[j] = indices[k]`.
    prod: Vec<(u32, u32, u32)>,
}

fn enumerate(nvars: usize, order: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut cur = vec![0u8; nvars];
    fn rec(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, pos: usize, left: usize) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[pos] = v as u8;
            rec(out, cur, pos + 1, left - v);
        }
        cur[pos] = 0;
    }
    for total in 0..=order {
        // fixed total degree, lexicographic within
        let mut tmp = Vec::new();
        rec(&mut tmp, &mut cur, 0, total);
        for idx in tmp {
            if idx.iter().map(|&v| v as usize).sum::<usize>() == total {
                out.push(idx);
            }
        }
    }
    out
}

impl JetSpace {
    fn new(nvars: usize, order: usize) -> Self {
        let indices = enumerate(nvars, order);
        let mut rank = HashMap::new();
        for (i, idx) in indices.iter().enumerate() {
            rank.insert(idx.clone(), i);
        }
        let mut prod = Vec::new();
        for (i, a) in indices.iter().enumerate() {
            for (j, b) in indices.iter().enumerate() {
                let total: usize = a.iter().chain(b.iter()).map(|&v| v as usize).sum();
                if total > order {
                    continue;
                }
                let sum: Vec<u8> = a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect();
                let k = rank[&sum];
                prod.push((i as u32, j as u32, k as u32));
            }
        }
        JetSpace { nvars, order, indices, rank, prod }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn rank_of(&self, alpha: &[u8]) -> Option<usize> {
        self.rank.get(alpha).copied()
    }
}

static SPACES: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetSpace>>>> = OnceLock::new();

pub fn jet_space(nvars: usize, order: usize) -> Arc<JetSpace> {
    let cache = SPACES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry((nvars, order))
        .or_insert_with(|| Arc::new(JetSpace::new(nvars, order)))
        .clone()
}

/// Truncated Taylor expansion of a complex-valued function of real variables.
#[derive(Debug, Clone)]
pub struct Jet {
    pub space: Arc<JetSpace>,
    pub coeffs: Vec<Complex64>,
}

impl Jet {
    pub fn constant(space: Arc<JetSpace>, value: Complex64) -> Self {
        let mut coeffs = vec![Complex64::ZERO; space.len()];
        coeffs[0] = value;
        Jet { space, coeffs }
    }

    pub fn zero(space: Arc<JetSpace>) -> Self {
        let coeffs = vec![Complex64::ZERO; space.len()];
        Jet { space, coeffs }
    }

    /// The coordinate function `x_var` seeded at `value`.
    pub fn variable(space: Arc<JetSpace>, var: usize, value: f64) -> Self {
        let mut j = Jet::zero(space);
        j.coeffs[0] = Complex64::new(value, 0.0);
        if j.space.order >= 1 {
            let mut alpha = vec![0u8; j.space.nvars];
            alpha[var] = 1;
            let r = j.space.rank_of(&alpha).expect("first-order index");
            j.coeffs[r] = Complex64::ONE;
        }
        j
    }

    pub fn value(&self) -> Complex64 {
        self.coeffs[0]
    }

    pub fn add(&self, other: &Jet) -> Jet {
        debug_assert_eq!(self.space.len(), other.space.len());
        let coeffs = self
            .coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| a + b)
            .collect();
        Jet { space: self.space.clone(), coeffs }
    }

    pub fn sub(&self, other: &Jet) -> Jet {
        let coeffs = self
            .coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| a - b)
            .collect();
        Jet { space: self.space.clone(), coeffs }
    }

    pub fn scale(&self, s: Complex64) -> Jet {
        let coeffs = self.coeffs.iter().map(|c| c * s).collect();
        Jet { space: self.space.clone(), coeffs }
    }

    pub fn mul(&self, other: &Jet) -> Jet {
        debug_assert_eq!(self.space.len(), other.space.len());
        let mut coeffs = vec![Complex64::ZERO; self.space.len()];
        for &(i, j, k) in &self.space.prod {
            let a = self.coeffs[i as usize];
            if a == Complex64::ZERO {
                continue;
            }
            let b = other.coeffs[j as usize];
            if b == Complex64::ZERO {
                continue;
            }
            coeffs[k as usize] += a * b;
        }
        Jet { space: self.space.clone(), coeffs }
    }

    /// The partial derivative `d^alpha f` at the expansion point.
    pub fn partial(&self, alpha: &[u8]) -> Complex64 {
        match self.space.rank_of(alpha) {
            Some(r) => self.coeffs[r] * factorial_multi(alpha),
            None => Complex64::ZERO,
        }
    }

    /// Reinterpret the jet of `f` as the jet of `d^sigma f`, truncated to
    /// order `order - |sigma|`.
    pub fn shift(&self, sigma: &[u8]) -> Jet {
        let drop: usize = sigma.iter().map(|&v| v as usize).sum();
        assert!(drop <= self.space.order, "shift beyond jet order");
        let new_space = jet_space(self.space.nvars, self.space.order - drop);
        let mut coeffs = vec![Complex64::ZERO; new_space.len()];
        for (bi, beta) in new_space.indices.iter().enumerate() {
            let gamma: Vec<u8> = beta.iter().zip(sigma.iter()).map(|(&b, &s)| b + s).collect();
            if let Some(gr) = self.space.rank_of(&gamma) {
                // c_beta(d^sigma f) = c_gamma(f) * gamma! / beta!
                let ratio = factorial_multi(&gamma) / factorial_multi(beta);
                coeffs[bi] = self.coeffs[gr] * ratio;
            }
        }
        Jet { space: new_space, coeffs }
    }

    /// Compose a univariate function `g` (given its derivative values at
    /// `self.value()`) with this jet: `g(f)`.
    pub fn compose(&self, g_derivs: &[Complex64]) -> Jet {
        let d = self.space.order;
        assert!(g_derivs.len() > d, "need g derivatives to the jet order");
        let mut tilde = self.clone();
        tilde.coeffs[0] = Complex64::ZERO;
        // Horner over the truncated series sum_k g^(k)/k! * tilde^k.
        let mut fact = 1.0;
        for k in 1..=d {
            fact *= k as f64;
        }
        let mut res = Jet::constant(self.space.clone(), g_derivs[d] / fact);
        for k in (0..d).rev() {
            let mut f = 1.0;
            for i in 1..=k {
                f *= i as f64;
            }
            res = res.mul(&tilde);
            res.coeffs[0] += g_derivs[k] / f;
        }
        res
    }
}

fn factorial_multi(alpha: &[u8]) -> f64 {
    let mut f = 1.0;
    for &a in alpha {
        for i in 1..=(a as usize) {
            f *= i as f64;
        }
    }
    f
}

// ---------------------------------------------------------------------------
// Univariate derivative tables used by the symbol library.
// ---------------------------------------------------------------------------

pub fn exp_derivs(u0: Complex64, order: usize) -> Vec<Complex64> {
    vec![u0.exp(); order + 1]
}

pub fn recip_derivs(u0: Complex64, order: usize) -> Vec<Complex64> {
    // d^k (1/u) = (-1)^k k! / u^{k+1}
    let mut out = Vec::with_capacity(order + 1);
    let mut cur = 1.0 / u0;
    let mut sign = 1.0;
    let mut fact = 1.0;
    for k in 0..=order {
        out.push(cur * sign * fact);
        cur /= u0;
        sign = -sign;
        fact *= (k + 1) as f64;
    }
    out
}

/// Derivatives of `u^p` for real exponent `p` at `u0 > 0`.
pub fn pow_derivs(u0: f64, p: f64, order: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(order + 1);
    let mut coef = 1.0;
    for k in 0..=order {
        out.push(Complex64::new(coef * u0.powf(p - k as f64), 0.0));
        coef *= p - k as f64;
    }
    out
}

/// Derivatives of `arccos(s)^2` at `s0 <= 1`, stable through the plateau
/// `s0 -> 1` where the naive chain rule degenerates.
pub fn arccos_sq_derivs(s0: f64, order: usize) -> Vec<f64> {
    if s0 > 0.5 {
        // Series branch: A(u) = arccos(1-u)^2 = sum a_j u^j with
        // a1 = 2, a_{j+1} = j^2 a_j / ((2j+1)(j+1)), from the ODE
        // (2u - u^2) A'' + (1-u) A' = 2.
        let u0 = (1.0 - s0).max(0.0);
        let nterms = 80;
        let mut a = vec![0.0f64; nterms + 1];
        a[1] = 2.0;
        for j in 1..nterms {
            a[j + 1] = (j * j) as f64 * a[j] / (((2 * j + 1) * (j + 1)) as f64);
        }
        // A^{(k)}(u0) = sum_j a_j * j!/(j-k)! * u0^{j-k}
        let mut out = vec![0.0f64; order + 1];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in (k.max(1))..=nterms {
                let mut fall = 1.0;
                for i in 0..k {
                    fall *= (j - i) as f64;
                }
                acc += a[j] * fall * u0.powi((j - k) as i32);
            }
            *slot = acc;
        }
        // d/ds = -d/du, so odd derivatives flip sign.
        for (k, slot) in out.iter_mut().enumerate() {
            if k % 2 == 1 {
                *slot = -*slot;
            }
        }
        out
    } else {
        // Direct branch with the recursion
        // (1-s^2) g^{(k+2)} = (2k+1) s g^{(k+1)} + k^2 g^{(k)}.
        let theta = s0.acos();
        let w = 1.0 - s0 * s0;
        let mut out = vec![0.0f64; order.max(1) + 1];
        out[0] = theta * theta;
        out[1] = -2.0 * theta / w.sqrt();
        for k in 0..order.saturating_sub(1) {
            let g2 = ((2 * k + 1) as f64 * s0 * out[k + 1] + (k * k) as f64 * out[k]) / w;
            out[k + 2] = g2;
        }
        out.truncate(order + 1);
        out
    }
}

/// The standard mollifier `exp(1 - 1/(1 - v))` for `v < 1`, zero otherwise,
/// as a function of `v = t^2`. Value 1 at v = 0; identically zero (with all
/// derivatives) outside the support.
pub fn bump_even_jet(v: &Jet) -> Jet {
    let v0 = v.value().re;
    if v0 >= 1.0 - 1e-12 {
        return Jet::zero(v.space.clone());
    }
    let one = Jet::constant(v.space.clone(), Complex64::ONE);
    let w = one.sub(v);
    let r = w.compose(&recip_derivs(w.value(), v.space.order));
    let t = one.sub(&r);
    t.compose(&exp_derivs(t.value(), v.space.order))
}

pub fn bump_even(v: f64) -> f64 {
    if v >= 1.0 - 1e-12 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - v)).exp()
    }
}

/// Smooth transition: 1 for s <= 0, 0 for s >= 1, strictly between otherwise.
pub fn transition_jet(s: &Jet) -> Jet {
    let s0 = s.value().re;
    if s0 <= 1e-14 {
        return Jet::constant(s.space.clone(), Complex64::ONE);
    }
    if s0 >= 1.0 - 1e-14 {
        return Jet::zero(s.space.clone());
    }
    let one = Jet::constant(s.space.clone(), Complex64::ONE);
    let g = |u: &Jet| -> Jet {
        let r = u.compose(&recip_derivs(u.value(), u.space.order));
        let neg = r.scale(Complex64::new(-1.0, 0.0));
        neg.compose(&exp_derivs(neg.value(), u.space.order))
    };
    let g1 = g(&one.sub(s));
    let g0 = g(s);
    let denom = g0.add(&g1);
    let inv = denom.compose(&recip_derivs(denom.value(), s.space.order));
    g1.mul(&inv)
}

pub fn transition(s: f64) -> f64 {
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let g = |u: f64| (-1.0 / u).exp();
        g(1.0 - s) / (g(s) + g(1.0 - s))
    }
}
