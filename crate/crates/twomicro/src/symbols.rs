//! Bi-graded symbols on the blown-up total-symbol space
//! `[T*T^n x [0,1); o x 0]`, blowup coordinates, localizers at points of the
//! spherical normal bundle, and the Moyal / Poisson symbol algebra.
//!
//! A symbol is stored as a finite sum of separable terms
//! `coeff * X(x) * Xi(xi, h)`. The factors evaluate in jet arithmetic
//! ([`crate::jet`]), so every library symbol carries exact mixed partials to
//! the depth the expansions need. Opaque (closure-only) symbols are also
//! supported; they can opt in to a central finite-difference fallback.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::jet::{
    arccos_sq_derivs, bump_even_jet, jet_space, pow_derivs, recip_derivs, transition_jet, Jet,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Maximum derivative depth the analytic factor library supports.
pub const ANALYTIC_DEPTH: usize = 8;

/// Bi-order (m, l): m counts powers of rho_sf^{-1} ~ |xi - xi0|/h, l powers
/// of rho_ff^{-1} ~ |xi - xi0|^{-1}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolOrder {
    pub m: f64,
    pub l: f64,
}

impl SymbolOrder {
    pub fn new(m: f64, l: f64) -> Self {
        SymbolOrder { m, l }
    }
}

/// Blowup coordinates of a covector relative to a center xi0.
#[derive(Debug, Clone)]
pub struct BlowupCoords {
    /// |xi - xi0|, the front-face defining function near the corner.
    pub rho: f64,
    /// (xi - xi0)/rho; undefined (zeros) when degenerate.
    pub ihat: Vec<f64>,
    /// h/rho, the side-face defining function.
    pub sigma: f64,
    /// (xi - xi0)/h, the interior front-face coordinate.
    pub xi_interior: Vec<f64>,
    /// Set when rho underflows; ihat and sigma are then meaningless.
    pub degenerate: bool,
}

pub fn blowup_coords(xi: &[f64], h: f64, xi0: &[f64]) -> BlowupCoords {
    let diff: Vec<f64> = xi.iter().zip(xi0.iter()).map(|(a, b)| a - b).collect();
    let rho = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let xi_interior = diff.iter().map(|d| d / h).collect();
    if rho < 1e-300 {
        return BlowupCoords {
            rho: 0.0,
            ihat: vec![0.0; xi.len()],
            sigma: 0.0,
            xi_interior,
            degenerate: true,
        };
    }
    BlowupCoords {
        rho,
        ihat: diff.iter().map(|d| d / rho).collect(),
        sigma: h / rho,
        xi_interior,
        degenerate: false,
    }
}

// ---------------------------------------------------------------------------
// x-factors
// ---------------------------------------------------------------------------

pub trait XFactor: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// Jet in the n base variables at the point x.
    fn jet(&self, x: &[f64], depth: usize) -> Jet;
    fn eval(&self, x: &[f64]) -> Complex64 {
        self.jet(x, 0).value()
    }
    /// Exact Fourier modes when the factor is a trigonometric polynomial.
    fn fourier_modes(&self) -> Option<Vec<(Vec<i64>, Complex64)>> {
        None
    }
    /// Samples on a grid; exact for trig polynomials, quadrature otherwise.
    fn sample(&self, grid: &Grid) -> Vec<Complex64> {
        let n = grid.dim();
        let mut x = vec![0.0; n];
        (0..grid.len())
            .map(|j| {
                grid.point(j, &mut x);
                self.eval(&x)
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct XOne {
    pub dim: usize,
}

impl XFactor for XOne {
    fn dim(&self) -> usize {
        self.dim
    }
    fn jet(&self, _x: &[f64], depth: usize) -> Jet {
        Jet::constant(jet_space(self.dim, depth), Complex64::ONE)
    }
    fn fourier_modes(&self) -> Option<Vec<(Vec<i64>, Complex64)>> {
        Some(vec![(vec![0; self.dim], Complex64::ONE)])
    }
}

/// Finite Fourier sum `sum c_t e^{i k_t . x}`; exactly band-limited.
#[derive(Debug, Clone)]
pub struct XTrigPoly {
    pub dim: usize,
    pub terms: Vec<(Vec<i64>, Complex64)>,
}

impl XFactor for XTrigPoly {
    fn dim(&self) -> usize {
        self.dim
    }
    fn jet(&self, x: &[f64], depth: usize) -> Jet {
        let space = jet_space(self.dim, depth);
        let mut coeffs = vec![Complex64::ZERO; space.len()];
        for (k, c) in &self.terms {
            let phase: f64 = k.iter().zip(x.iter()).map(|(&ka, &xa)| ka as f64 * xa).sum();
            let base = c * Complex64::new(phase.cos(), phase.sin());
            for (r, alpha) in space.indices.iter().enumerate() {
                // c_alpha = (ik)^alpha / alpha! * base
                let mut f = base;
                for (a, &pow) in alpha.iter().enumerate() {
                    for p in 1..=(pow as usize) {
                        f *= Complex64::new(0.0, k[a] as f64) / (p as f64);
                    }
                }
                coeffs[r] += f;
            }
        }
        Jet { space, coeffs }
    }
    fn fourier_modes(&self) -> Option<Vec<(Vec<i64>, Complex64)>> {
        Some(self.terms.clone())
    }
}

/// Wrap a displacement to the principal band [-pi, pi).
fn wrap_pm_pi(d: f64) -> f64 {
    let mut r = d % (2.0 * PI);
    if r < -PI {
        r += 2.0 * PI;
    }
    if r >= PI {
        r -= 2.0 * PI;
    }
    r
}

/// Product of per-axis mollifier bumps `psi((x_a - x0_a)/width)`; supported
/// in the periodic box of half-width `width` around x0, identically zero
/// outside it.
#[derive(Debug, Clone)]
pub struct XBumpBox {
    pub x0: Vec<f64>,
    pub widths: Vec<f64>,
}

impl XFactor for XBumpBox {
    fn dim(&self) -> usize {
        self.x0.len()
    }
    fn jet(&self, x: &[f64], depth: usize) -> Jet {
        let space = jet_space(self.dim(), depth);
        let mut acc = Jet::constant(space.clone(), Complex64::ONE);
        for a in 0..self.x0.len() {
            let d0 = wrap_pm_pi(x[a] - self.x0[a]);
            let mut t = Jet::variable(space.clone(), a, 0.0);
            t.coeffs[0] = Complex64::new(d0, 0.0);
            let t = t.scale(Complex64::new(1.0 / self.widths[a], 0.0));
            let v = t.mul(&t);
            acc = acc.mul(&bump_even_jet(&v));
            if acc.value() == Complex64::ZERO && acc.coeffs.iter().all(|c| *c == Complex64::ZERO)
            {
                return acc;
            }
        }
        acc
    }
}

/// Derivative wrapper d^alpha X. Trig polynomials are simplified in place.
#[derive(Debug)]
pub struct XDeriv {
    pub inner: Arc<dyn XFactor>,
    pub alpha: Vec<u8>,
}

impl XFactor for XDeriv {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn jet(&self, x: &[f64], depth: usize) -> Jet {
        let extra: usize = self.alpha.iter().map(|&v| v as usize).sum();
        self.inner.jet(x, depth + extra).shift(&self.alpha)
    }
}

pub fn x_deriv(inner: &Arc<dyn XFactor>, alpha: &[u8]) -> Arc<dyn XFactor> {
    if alpha.iter().all(|&v| v == 0) {
        return inner.clone();
    }
    if let Some(modes) = inner.fourier_modes() {
        // (d^alpha) sum c e^{ikx} = sum c (ik)^alpha e^{ikx}: still a trig poly.
        let terms = modes
            .into_iter()
            .map(|(k, c)| {
                let mut f = c;
                for (a, &pow) in alpha.iter().enumerate() {
                    for _ in 0..pow {
                        f *= Complex64::new(0.0, k[a] as f64);
                    }
                }
                (k, f)
            })
            .collect();
        return Arc::new(XTrigPoly { dim: inner.dim(), terms });
    }
    Arc::new(XDeriv { inner: inner.clone(), alpha: alpha.to_vec() })
}

#[derive(Debug)]
pub struct XProd {
    pub factors: Vec<Arc<dyn XFactor>>,
}

impl XFactor for XProd {
    fn dim(&self) -> usize {
        self.factors[0].dim()
    }
    fn jet(&self, x: &[f64], depth: usize) -> Jet {
        let mut acc = self.factors[0].jet(x, depth);
        for f in &self.factors[1..] {
            acc = acc.mul(&f.jet(x, depth));
        }
        acc
    }
    fn fourier_modes(&self) -> Option<Vec<(Vec<i64>, Complex64)>> {
        // Convolve exact mode lists when every factor is trigonometric.
        let mut acc: Option<Vec<(Vec<i64>, Complex64)>> = None;
        for f in &self.factors {
            let m = f.fourier_modes()?;
            acc = Some(match acc {
                None => m,
                Some(prev) => {
                    let mut out: Vec<(Vec<i64>, Complex64)> = Vec::new();
                    for (ka, ca) in &prev {
                        for (kb, cb) in &m {
                            let k: Vec<i64> =
                                ka.iter().zip(kb.iter()).map(|(a, b)| a + b).collect();
                            if let Some(slot) = out.iter_mut().find(|(kk, _)| *kk == k) {
                                slot.1 += ca * cb;
                            } else {
                                out.push((k, ca * cb));
                            }
                        }
                    }
                    out
                }
            });
        }
        acc
    }
}

pub fn x_prod(factors: Vec<Arc<dyn XFactor>>) -> Arc<dyn XFactor> {
    Arc::new(XProd { factors })
}

// ---------------------------------------------------------------------------
// xi-factors
// ---------------------------------------------------------------------------

pub trait XiFactor: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// Jet in the n fiber variables at (xi, h); h is a parameter.
    fn jet(&self, xi: &[f64], h: f64, depth: usize) -> Jet;
    fn eval(&self, xi: &[f64], h: f64) -> Complex64 {
        self.jet(xi, h, 0).value()
    }
    /// lim_{h -> 0+} h^m * Xi(xi, h) at fixed xi, when available in closed
    /// form. Drives the exact side-face restriction.
    fn h_limit(&self, _xi: &[f64], _m: f64) -> Option<Complex64> {
        None
    }
    /// True when the factor does not depend on h at all.
    fn h_free(&self) -> bool {
        false
    }
}

#[derive(Debug)]
pub struct XiOne {
    pub dim: usize,
}

impl XiFactor for XiOne {
    fn dim(&self) -> usize {
        self.dim
    }
    fn jet(&self, _xi: &[f64], _h: f64, depth: usize) -> Jet {
        Jet::constant(jet_space(self.dim, depth), Complex64::ONE)
    }
    fn h_limit(&self, _xi: &[f64], m: f64) -> Option<Complex64> {
        h_free_limit(Complex64::ONE, m)
    }
    fn h_free(&self) -> bool {
        true
    }
}

fn h_free_limit(value: Complex64, m: f64) -> Option<Complex64> {
    if m > 0.0 {
        Some(Complex64::ZERO)
    } else if m == 0.0 {
        Some(value)
    } else {
        None
    }
}

/// Smooth compactly supported bump `psi(|xi - c|/w)` (the standard mollifier
/// in the squared radial variable).
#[derive(Debug, Clone)]
pub struct XiClassicalBump {
    pub center: Vec<f64>,
    pub width: f64,
}

impl XiFactor for XiClassicalBump {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn jet(&self, xi: &[f64], _h: f64, depth: usize) -> Jet {
        let space = jet_space(self.dim(), depth);
        let mut q = Jet::zero(space.clone());
        for a in 0..self.center.len() {
            let mut d = Jet::variable(space.clone(), a, 0.0);
            d.coeffs[0] = Complex64::new(xi[a] - self.center[a], 0.0);
            q = q.add(&d.mul(&d));
        }
        let v = q.scale(Complex64::new(1.0 / (self.width * self.width), 0.0));
        bump_even_jet(&v)
    }
    fn h_limit(&self, xi: &[f64], m: f64) -> Option<Complex64> {
        h_free_limit(self.eval(xi, 1.0), m)
    }
    fn h_free(&self) -> bool {
        true
    }
}

/// Cutoff identically 1 on the ball |xi - c| <= r0 and 0 outside r1.
#[derive(Debug, Clone)]
pub struct XiPlateau {
    pub center: Vec<f64>,
    pub r0: f64,
    pub r1: f64,
}

impl XiFactor for XiPlateau {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn jet(&self, xi: &[f64], _h: f64, depth: usize) -> Jet {
        let space = jet_space(self.dim(), depth);
        let mut q = Jet::zero(space.clone());
        for a in 0..self.center.len() {
            let mut d = Jet::variable(space.clone(), a, 0.0);
            d.coeffs[0] = Complex64::new(xi[a] - self.center[a], 0.0);
            q = q.add(&d.mul(&d));
        }
        let denom = self.r1 * self.r1 - self.r0 * self.r0;
        let mut s = q.scale(Complex64::new(1.0 / denom, 0.0));
        s.coeffs[0] -= Complex64::new(self.r0 * self.r0 / denom, 0.0);
        transition_jet(&s)
    }
    fn h_limit(&self, xi: &[f64], m: f64) -> Option<Complex64> {
        h_free_limit(self.eval(xi, 1.0), m)
    }
    fn h_free(&self) -> bool {
        true
    }
}

/// Polynomial in xi: sum of monomials `c * prod xi_a^{e_a}`.
#[derive(Debug, Clone)]
pub struct XiPoly {
    pub dim: usize,
    pub monomials: Vec<(Vec<u8>, Complex64)>,
}

impl XiFactor for XiPoly {
    fn dim(&self) -> usize {
        self.dim
    }
    fn jet(&self, xi: &[f64], _h: f64, depth: usize) -> Jet {
        let space = jet_space(self.dim, depth);
        let mut acc = Jet::zero(space.clone());
        for (exps, c) in &self.monomials {
            let mut term = Jet::constant(space.clone(), *c);
            for (a, &e) in exps.iter().enumerate() {
                let v = Jet::variable(space.clone(), a, xi[a]);
                for _ in 0..e {
                    term = term.mul(&v);
                }
            }
            acc = acc.add(&term);
        }
        acc
    }
    fn h_limit(&self, xi: &[f64], m: f64) -> Option<Complex64> {
        h_free_limit(self.eval(xi, 1.0), m)
    }
    fn h_free(&self) -> bool {
        true
    }
}

/// The two-microlocal localizer fiber factor:
/// `(rho/h)^m rho^{-l} phi(angle(ihat, ihat0)/aw) psi(rho/delta) psi(sigma/eps)`
/// in blowup coordinates about `xi0`.
#[derive(Debug, Clone)]
pub struct XiLocalizer {
    pub xi0: Vec<f64>,
    pub ihat0: Vec<f64>,
    pub delta: f64,
    pub eps: f64,
    pub anglewidth: f64,
    pub m: f64,
    pub l: f64,
}

impl XiFactor for XiLocalizer {
    fn dim(&self) -> usize {
        self.xi0.len()
    }
    fn jet(&self, xi: &[f64], h: f64, depth: usize) -> Jet {
        let space = jet_space(self.dim(), depth);
        let n = self.dim();
        // rho^2 and quick support rejections on values first
        let diff0: Vec<f64> = xi.iter().zip(self.xi0.iter()).map(|(a, b)| a - b).collect();
        let rho0 = diff0.iter().map(|d| d * d).sum::<f64>().sqrt();
        if rho0 <= 0.0 {
            return Jet::zero(space);
        }
        let sigma0 = h / rho0;
        if rho0 >= self.delta || sigma0 >= self.eps {
            return Jet::zero(space);
        }
        if n > 1 {
            let s0: f64 =
                diff0.iter().zip(self.ihat0.iter()).map(|(d, i)| d * i).sum::<f64>() / rho0;
            let ang = s0.clamp(-1.0, 1.0).acos();
            if ang >= self.anglewidth {
                return Jet::zero(space);
            }
        }

        let mut q = Jet::zero(space.clone());
        let mut diff = Vec::with_capacity(n);
        for (a, &d0) in diff0.iter().enumerate() {
            let mut d = Jet::variable(space.clone(), a, 0.0);
            d.coeffs[0] = Complex64::new(d0, 0.0);
            q = q.add(&d.mul(&d));
            diff.push(d);
        }
        let rho = q.compose(&pow_derivs(q.value().re, 0.5, depth));

        // prefactor (rho/h)^m rho^{-l} = h^{-m} rho^{m-l}
        let pre = if self.m == 0.0 && self.l == 0.0 {
            Jet::constant(space.clone(), Complex64::ONE)
        } else {
            let p = self.m - self.l;
            let powed = if p == 0.0 {
                Jet::constant(space.clone(), Complex64::ONE)
            } else {
                q.compose(&pow_derivs(q.value().re, 0.5 * p, depth))
            };
            powed.scale(Complex64::new(h.powf(-self.m), 0.0))
        };

        // angle factor: bump_even(arccos^2(s)/aw^2), exact support angle < aw
        let angle = if n > 1 {
            let inv_rho = rho.compose(&recip_derivs(rho.value(), depth));
            let mut dot = Jet::zero(space.clone());
            for (d, &i0) in diff.iter().zip(self.ihat0.iter()) {
                dot = dot.add(&d.scale(Complex64::new(i0, 0.0)));
            }
            let s = dot.mul(&inv_rho);
            let asq_derivs: Vec<Complex64> =
                arccos_sq_derivs(s.value().re.clamp(-1.0, 1.0), depth)
                    .into_iter()
                    .map(|v| Complex64::new(v, 0.0))
                    .collect();
            let asq = s.compose(&asq_derivs);
            let v = asq.scale(Complex64::new(1.0 / (self.anglewidth * self.anglewidth), 0.0));
            bump_even_jet(&v)
        } else {
            // n = 1: S^0 directions; the sign gate replaces the angle bump.
            let aligned = diff0[0] * self.ihat0[0] > 0.0;
            if aligned {
                Jet::constant(space.clone(), Complex64::ONE)
            } else {
                return Jet::zero(space);
            }
        };

        // rho window psi(rho/delta)
        let vr = q.scale(Complex64::new(1.0 / (self.delta * self.delta), 0.0));
        let rho_bump = bump_even_jet(&vr);

        // sigma window psi(sigma/eps), sigma = h/rho
        let inv_rho = rho.compose(&recip_derivs(rho.value(), depth));
        let sigma = inv_rho.scale(Complex64::new(h, 0.0));
        let vs = sigma.mul(&sigma).scale(Complex64::new(1.0 / (self.eps * self.eps), 0.0));
        let sigma_bump = bump_even_jet(&vs);

        pre.mul(&angle).mul(&rho_bump).mul(&sigma_bump)
    }

    fn h_limit(&self, xi: &[f64], m: f64) -> Option<Complex64> {
        if (m - self.m).abs() > 1e-12 {
            return None;
        }
        // h^m * a -> rho^{m-l} * angle * psi(rho/delta); the sigma bump -> 1.
        let diff: Vec<f64> = xi.iter().zip(self.xi0.iter()).map(|(a, b)| a - b).collect();
        let rho = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        if rho <= 0.0 || rho >= self.delta {
            return Some(Complex64::ZERO);
        }
        let mut v = rho.powf(self.m - self.l);
        if self.dim() > 1 {
            let s = diff.iter().zip(self.ihat0.iter()).map(|(d, i)| d * i).sum::<f64>() / rho;
            let asq = s.clamp(-1.0, 1.0).acos().powi(2);
            v *= crate::jet::bump_even(asq / (self.anglewidth * self.anglewidth));
        } else if diff[0] * self.ihat0[0] <= 0.0 {
            return Some(Complex64::ZERO);
        }
        v *= crate::jet::bump_even(rho * rho / (self.delta * self.delta));
        Some(Complex64::new(v, 0.0))
    }
}

/// h^p * inner(xi, h); carries the explicit h powers of expansion terms.
#[derive(Debug)]
pub struct XiHPow {
    pub inner: Arc<dyn XiFactor>,
    pub power: i32,
}

impl XiFactor for XiHPow {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn jet(&self, xi: &[f64], h: f64, depth: usize) -> Jet {
        self.inner.jet(xi, h, depth).scale(Complex64::new(h.powi(self.power), 0.0))
    }
    fn h_limit(&self, xi: &[f64], m: f64) -> Option<Complex64> {
        self.inner.h_limit(xi, m + self.power as f64)
    }
}

/// a0(xi) + h * a1(xi): a declared h-expansion to first order.
#[derive(Debug)]
pub struct XiHExpansion {
    pub a0: Arc<dyn XiFactor>,
    pub a1: Arc<dyn XiFactor>,
}

impl XiFactor for XiHExpansion {
    fn dim(&self) -> usize {
        self.a0.dim()
    }
    fn jet(&self, xi: &[f64], h: f64, depth: usize) -> Jet {
        let j0 = self.a0.jet(xi, h, depth);
        let j1 = self.a1.jet(xi, h, depth).scale(Complex64::new(h, 0.0));
        j0.add(&j1)
    }
    fn h_limit(&self, xi: &[f64], m: f64) -> Option<Complex64> {
        if m == 0.0 {
            self.a0.h_limit(xi, 0.0)
        } else {
            None
        }
    }
}

#[derive(Debug)]
pub struct XiDeriv {
    pub inner: Arc<dyn XiFactor>,
    pub beta: Vec<u8>,
}

impl XiFactor for XiDeriv {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn jet(&self, xi: &[f64], h: f64, depth: usize) -> Jet {
        let extra: usize = self.beta.iter().map(|&v| v as usize).sum();
        self.inner.jet(xi, h, depth + extra).shift(&self.beta)
    }
}

pub fn xi_deriv(inner: &Arc<dyn XiFactor>, beta: &[u8]) -> Arc<dyn XiFactor> {
    if beta.iter().all(|&v| v == 0) {
        inner.clone()
    } else {
        Arc::new(XiDeriv { inner: inner.clone(), beta: beta.to_vec() })
    }
}

#[derive(Debug)]
pub struct XiProd {
    pub factors: Vec<Arc<dyn XiFactor>>,
}

impl XiFactor for XiProd {
    fn dim(&self) -> usize {
        self.factors[0].dim()
    }
    fn jet(&self, xi: &[f64], h: f64, depth: usize) -> Jet {
        let mut acc = self.factors[0].jet(xi, h, depth);
        for f in &self.factors[1..] {
            acc = acc.mul(&f.jet(xi, h, depth));
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// TwoMicroSymbol
// ---------------------------------------------------------------------------

/// One separable term `coeff * X(x) * Xi(xi, h)`.
#[derive(Debug, Clone)]
pub struct Term {
    pub coeff: Complex64,
    pub x: Arc<dyn XFactor>,
    pub xi: Arc<dyn XiFactor>,
}

type OpaqueEval = dyn Fn(&[f64], &[f64], f64) -> Complex64 + Send + Sync;

#[derive(Clone)]
pub enum SymbolBody {
    Terms(Vec<Term>),
    Opaque { f: Arc<OpaqueEval>, fd_step: Option<f64> },
}

impl fmt::Debug for SymbolBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolBody::Terms(t) => write!(f, "Terms({})", t.len()),
            SymbolBody::Opaque { fd_step, .. } => write!(f, "Opaque(fd={fd_step:?})"),
        }
    }
}

/// Support descriptor: a box in x and a region in the fiber, used as
/// metadata for reports and tests. Exact vanishing outside the support is a
/// property of the bump factors themselves.
#[derive(Debug, Clone, Default)]
pub struct SupportSpec {
    pub x_center: Option<Vec<f64>>,
    pub x_widths: Option<Vec<f64>>,
    pub xi_center: Option<Vec<f64>>,
    pub rho_max: Option<f64>,
    pub sigma_max: Option<f64>,
    pub anglewidth: Option<f64>,
}

/// An evaluator a(x, xi, h) with declared bi-order, derivative depth, and
/// support descriptor. Immutable and cheaply cloneable.
#[derive(Debug, Clone)]
pub struct TwoMicroSymbol {
    pub dim: usize,
    pub order: SymbolOrder,
    pub body: SymbolBody,
    pub support: SupportSpec,
    /// Largest derivative depth jets can be requested at.
    pub avail_depth: usize,
    /// Declared h-expansion (a0, a1) when the constructor provides one.
    h_parts: Option<(Arc<TwoMicroSymbol>, Arc<TwoMicroSymbol>)>,
}

impl TwoMicroSymbol {
    pub fn from_terms(dim: usize, order: SymbolOrder, terms: Vec<Term>) -> Self {
        TwoMicroSymbol {
            dim,
            order,
            body: SymbolBody::Terms(terms),
            support: SupportSpec::default(),
            avail_depth: ANALYTIC_DEPTH,
            h_parts: None,
        }
    }

    pub fn constant(dim: usize, value: Complex64) -> Self {
        TwoMicroSymbol::from_terms(
            dim,
            SymbolOrder::new(0.0, 0.0),
            vec![Term {
                coeff: value,
                x: Arc::new(XOne { dim }),
                xi: Arc::new(XiOne { dim }),
            }],
        )
    }

    /// Closure-only symbol. Without `fd_step` it has no derivatives at all;
    /// with it, a central finite-difference fallback to depth 2.
    pub fn opaque(
        dim: usize,
        order: SymbolOrder,
        f: Arc<OpaqueEval>,
        fd_step: Option<f64>,
    ) -> Self {
        TwoMicroSymbol {
            dim,
            order,
            avail_depth: if fd_step.is_some() { 2 } else { 0 },
            body: SymbolBody::Opaque { f, fd_step },
            support: SupportSpec::default(),
            h_parts: None,
        }
    }

    pub fn with_support(mut self, support: SupportSpec) -> Self {
        self.support = support;
        self
    }

    /// Declare a = a0 + h a1 (+O(h^2)); enables `subprincipal_of`.
    pub fn with_h_expansion(a0: TwoMicroSymbol, a1: TwoMicroSymbol) -> Self {
        let dim = a0.dim;
        let order = a0.order;
        let mut terms = match &a0.body {
            SymbolBody::Terms(t) => t.clone(),
            _ => panic!("h-expansions need term-structured parts"),
        };
        if let SymbolBody::Terms(t1) = &a1.body {
            for t in t1 {
                terms.push(Term {
                    coeff: t.coeff,
                    x: t.x.clone(),
                    xi: Arc::new(XiHPow { inner: t.xi.clone(), power: 1 }),
                });
            }
        } else {
            panic!("h-expansions need term-structured parts");
        }
        let mut s = TwoMicroSymbol::from_terms(dim, order, terms);
        s.h_parts = Some((Arc::new(a0), Arc::new(a1)));
        s
    }

    pub fn terms(&self) -> Option<&[Term]> {
        match &self.body {
            SymbolBody::Terms(t) => Some(t),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64], xi: &[f64], h: f64) -> Complex64 {
        match &self.body {
            SymbolBody::Terms(terms) => terms
                .iter()
                .map(|t| t.coeff * t.x.eval(x) * t.xi.eval(xi, h))
                .sum(),
            SymbolBody::Opaque { f, .. } => f(x, xi, h),
        }
    }

    /// Full jet in the 2n variables (x_1..x_n, xi_1..xi_n).
    pub fn jet_full(&self, x: &[f64], xi: &[f64], h: f64, depth: usize) -> Result<Jet> {
        if depth > self.avail_depth {
            return Err(Error::Depth { requested: depth, available: self.avail_depth });
        }
        let n = self.dim;
        let space = jet_space(2 * n, depth);
        match &self.body {
            SymbolBody::Terms(terms) => {
                let mut coeffs = vec![Complex64::ZERO; space.len()];
                for t in terms {
                    let jx = t.x.jet(x, depth);
                    let jxi = t.xi.jet(xi, h, depth);
                    for (r, idx) in space.indices.iter().enumerate() {
                        let (ax, axi) = idx.split_at(n);
                        let rx = jx.space.rank_of(ax);
                        let rxi = jxi.space.rank_of(axi);
                        if let (Some(rx), Some(rxi)) = (rx, rxi) {
                            coeffs[r] += t.coeff * jx.coeffs[rx] * jxi.coeffs[rxi];
                        }
                    }
                }
                Ok(Jet { space, coeffs })
            }
            SymbolBody::Opaque { f, fd_step } => {
                let step = fd_step.ok_or(Error::Depth { requested: depth, available: 0 })?;
                let mut coeffs = vec![Complex64::ZERO; space.len()];
                for (r, idx) in space.indices.iter().enumerate() {
                    let total: usize = idx.iter().map(|&v| v as usize).sum();
                    if total > 2 {
                        continue;
                    }
                    let d = fd_partial(f, x, xi, h, idx, step);
                    let mut fact = 1.0;
                    for &v in idx.iter() {
                        for i in 1..=(v as usize) {
                            fact *= i as f64;
                        }
                    }
                    coeffs[r] = d / fact;
                }
                Ok(Jet { space, coeffs })
            }
        }
    }

    /// Mixed partial d_x^alpha d_xi^beta a at a point.
    pub fn partial(
        &self,
        x: &[f64],
        xi: &[f64],
        h: f64,
        alpha: &[u8],
        beta: &[u8],
    ) -> Result<Complex64> {
        let depth = alpha.iter().chain(beta.iter()).map(|&v| v as usize).sum();
        let jet = self.jet_full(x, xi, h, depth)?;
        let idx: Vec<u8> = alpha.iter().chain(beta.iter()).copied().collect();
        Ok(jet.partial(&idx))
    }

    pub fn scale(&self, s: Complex64) -> TwoMicroSymbol {
        let mut out = self.clone();
        match &mut out.body {
            SymbolBody::Terms(terms) => {
                for t in terms {
                    t.coeff *= s;
                }
            }
            SymbolBody::Opaque { f, fd_step } => {
                let f0 = f.clone();
                out.body = SymbolBody::Opaque {
                    f: Arc::new(move |x: &[f64], xi: &[f64], h: f64| s * f0(x, xi, h)),
                    fd_step: *fd_step,
                };
            }
        }
        out
    }

    pub fn add(&self, other: &TwoMicroSymbol) -> TwoMicroSymbol {
        match (&self.body, &other.body) {
            (SymbolBody::Terms(a), SymbolBody::Terms(b)) => {
                let mut terms = a.clone();
                terms.extend(b.iter().cloned());
                let order =
                    SymbolOrder::new(self.order.m.max(other.order.m), self.order.l.max(other.order.l));
                TwoMicroSymbol::from_terms(self.dim, order, terms)
            }
            _ => {
                let a = self.clone();
                let b = other.clone();
                let order =
                    SymbolOrder::new(self.order.m.max(other.order.m), self.order.l.max(other.order.l));
                TwoMicroSymbol::opaque(
                    self.dim,
                    order,
                    Arc::new(move |x: &[f64], xi: &[f64], h: f64| a.eval(x, xi, h) + b.eval(x, xi, h)),
                    None,
                )
            }
        }
    }

    pub fn is_h_free(&self) -> bool {
        match &self.body {
            SymbolBody::Terms(terms) => terms.iter().all(|t| t.xi.h_free()),
            _ => false,
        }
    }
}

fn fd_partial(
    f: &Arc<OpaqueEval>,
    x: &[f64],
    xi: &[f64],
    h: f64,
    idx: &[u8],
    step: f64,
) -> Complex64 {
    let n = x.len();
    let eval = |dx: &[f64]| {
        let xs: Vec<f64> = x.iter().enumerate().map(|(i, &v)| v + dx[i]).collect();
        let xis: Vec<f64> = xi.iter().enumerate().map(|(i, &v)| v + dx[n + i]).collect();
        f(&xs, &xis, h)
    };
    let vars: Vec<usize> = idx
        .iter()
        .enumerate()
        .flat_map(|(i, &v)| std::iter::repeat(i).take(v as usize))
        .collect();
    match vars.len() {
        0 => eval(&vec![0.0; 2 * n]),
        1 => {
            let mut dp = vec![0.0; 2 * n];
            dp[vars[0]] = step;
            let mut dm = vec![0.0; 2 * n];
            dm[vars[0]] = -step;
            (eval(&dp) - eval(&dm)) / (2.0 * step)
        }
        2 => {
            if vars[0] == vars[1] {
                let mut dp = vec![0.0; 2 * n];
                dp[vars[0]] = step;
                let mut dm = vec![0.0; 2 * n];
                dm[vars[0]] = -step;
                (eval(&dp) - 2.0 * eval(&vec![0.0; 2 * n]) + eval(&dm)) / (step * step)
            } else {
                let mut d = vec![0.0; 2 * n];
                let mut acc = Complex64::ZERO;
                for (s0, s1) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    d[vars[0]] = s0 * step;
                    d[vars[1]] = s1 * step;
                    acc += s0 * s1 * eval(&d);
                }
                acc / (4.0 * step * step)
            }
        }
        _ => unreachable!("fd fallback is limited to depth 2"),
    }
}

// ---------------------------------------------------------------------------
// Localizers
// ---------------------------------------------------------------------------

/// Parameters of a standard localizer at a point of SN(L). Serializable from
/// the CLI config; the optional fields select the classical (ordinary
/// semiclassical cutoff) variant and the blowup center.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizerSpec {
    pub x0: Vec<f64>,
    pub ihat0: Vec<f64>,
    pub delta: f64,
    pub eps: f64,
    pub xwidth: f64,
    pub anglewidth: f64,
    pub order: SymbolOrder,
    #[serde(default)]
    pub xi0: Option<Vec<f64>>,
    /// Ordinary cutoff in (x, xi) instead of a blowup localizer.
    #[serde(default)]
    pub classical: bool,
    /// Radial offset of the classical cutoff center along ihat0.
    #[serde(default)]
    pub rho_center: f64,
}

impl LocalizerSpec {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn xi_center(&self) -> Vec<f64> {
        self.xi0.clone().unwrap_or_else(|| vec![0.0; self.dim()])
    }
}

/// Build the localizer symbol
/// `(rho/h)^m rho^{-l} chi((x-x0)/xw) phi(angle/aw) psi(rho/delta) psi(sigma/eps)`.
pub fn make_localizer(spec: &LocalizerSpec) -> Result<TwoMicroSymbol> {
    let n = spec.dim();
    if spec.ihat0.len() != n {
        return Err(Error::Spec("ihat0 dimension mismatch".into()));
    }
    for (name, v) in [
        ("delta", spec.delta),
        ("eps", spec.eps),
        ("xwidth", spec.xwidth),
        ("anglewidth", spec.anglewidth),
    ] {
        if !(v > 0.0) {
            return Err(Error::Spec(format!("{name} must be positive, got {v}")));
        }
    }
    if spec.xwidth >= PI {
        return Err(Error::Spec("xwidth must stay below pi (one chart)".into()));
    }
    let norm = spec.ihat0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-14 {
        return Err(Error::Spec("ihat0 must be a nonzero direction".into()));
    }
    let ihat0: Vec<f64> = spec.ihat0.iter().map(|v| v / norm).collect();
    let xi0 = spec.xi_center();

    let x: Arc<dyn XFactor> = Arc::new(XBumpBox {
        x0: spec.x0.clone(),
        widths: vec![spec.xwidth; n],
    });
    let xi: Arc<dyn XiFactor> = if spec.classical {
        let center: Vec<f64> = xi0
            .iter()
            .zip(ihat0.iter())
            .map(|(c, i)| c + spec.rho_center * i)
            .collect();
        Arc::new(XiClassicalBump { center, width: spec.delta })
    } else {
        Arc::new(XiLocalizer {
            xi0: xi0.clone(),
            ihat0: ihat0.clone(),
            delta: spec.delta,
            eps: spec.eps,
            anglewidth: spec.anglewidth,
            m: spec.order.m,
            l: spec.order.l,
        })
    };
    let support = SupportSpec {
        x_center: Some(spec.x0.clone()),
        x_widths: Some(vec![spec.xwidth; n]),
        xi_center: Some(xi0),
        rho_max: Some(spec.delta),
        sigma_max: if spec.classical { None } else { Some(spec.eps) },
        anglewidth: if spec.classical { None } else { Some(spec.anglewidth) },
    };
    Ok(TwoMicroSymbol::from_terms(
        n,
        spec.order,
        vec![Term { coeff: Complex64::ONE, x, xi }],
    )
    .with_support(support))
}

/// Classical symbol (trig polynomial in x) x (mollifier bump in xi); the
/// workhorse of the calculus-order experiments.
pub fn classical_symbol(
    dim: usize,
    trig: Vec<(Vec<i64>, Complex64)>,
    xi_center: Vec<f64>,
    xi_width: f64,
) -> TwoMicroSymbol {
    let x: Arc<dyn XFactor> = Arc::new(XTrigPoly { dim, terms: trig });
    let xi: Arc<dyn XiFactor> = Arc::new(XiClassicalBump { center: xi_center.clone(), width: xi_width });
    TwoMicroSymbol::from_terms(
        dim,
        SymbolOrder::new(0.0, 0.0),
        vec![Term { coeff: Complex64::ONE, x, xi }],
    )
    .with_support(SupportSpec {
        xi_center: Some(xi_center),
        rho_max: Some(xi_width),
        ..Default::default()
    })
}

/// Cutoff identically 1 on |xi - c| <= r0, supported in |xi - c| < r1.
pub fn plateau_symbol(dim: usize, center: Vec<f64>, r0: f64, r1: f64) -> TwoMicroSymbol {
    let x: Arc<dyn XFactor> = Arc::new(XOne { dim });
    let xi: Arc<dyn XiFactor> = Arc::new(XiPlateau { center, r0, r1 });
    TwoMicroSymbol::from_terms(
        dim,
        SymbolOrder::new(0.0, 0.0),
        vec![Term { coeff: Complex64::ONE, x, xi }],
    )
}

/// Affine fiber symbol `sum c_a xi_a + c0` (generators of the vanishing
/// module, multipliers).
pub fn xi_affine(dim: usize, linear: Vec<f64>, c0: f64) -> TwoMicroSymbol {
    let mut monomials = vec![(vec![0u8; dim], Complex64::new(c0, 0.0))];
    for (a, &c) in linear.iter().enumerate() {
        let mut e = vec![0u8; dim];
        e[a] = 1;
        monomials.push((e, Complex64::new(c, 0.0)));
    }
    let x: Arc<dyn XFactor> = Arc::new(XOne { dim });
    let xi: Arc<dyn XiFactor> = Arc::new(XiPoly { dim, monomials });
    TwoMicroSymbol::from_terms(
        dim,
        SymbolOrder::new(0.0, -1.0),
        vec![Term { coeff: Complex64::ONE, x, xi }],
    )
}

/// |xi|^2 - e, the flat Schroedinger multiplier symbol.
pub fn xi_radial_quadratic(dim: usize, e: f64) -> TwoMicroSymbol {
    let mut monomials = vec![(vec![0u8; dim], Complex64::new(-e, 0.0))];
    for a in 0..dim {
        let mut exps = vec![0u8; dim];
        exps[a] = 2;
        monomials.push((exps, Complex64::ONE));
    }
    let x: Arc<dyn XFactor> = Arc::new(XOne { dim });
    let xi: Arc<dyn XiFactor> = Arc::new(XiPoly { dim, monomials });
    TwoMicroSymbol::from_terms(
        dim,
        SymbolOrder::new(0.0, -2.0),
        vec![Term { coeff: Complex64::ONE, x, xi }],
    )
}

// ---------------------------------------------------------------------------
// Symbol algebra
// ---------------------------------------------------------------------------

fn multi_indices_upto(n: usize, max_total: usize) -> Vec<Vec<u8>> {
    jet_space(n, max_total).indices.clone()
}

fn factorial_of(alpha: &[u8]) -> f64 {
    let mut f = 1.0;
    for &a in alpha {
        for i in 1..=(a as usize) {
            f *= i as f64;
        }
    }
    f
}

fn check_depth(s: &TwoMicroSymbol, needed: usize, fallback: bool) -> Result<()> {
    let avail = s.avail_depth;
    if needed > avail && !(fallback && needed <= 2) {
        return Err(Error::Depth { requested: needed, available: avail });
    }
    Ok(())
}

/// Pointwise Poisson bracket
/// `{a, b} = sum_j (d_xi_j a d_x_j b - d_x_j a d_xi_j b)`,
/// of order (m+m'-1, l+l').
pub fn poisson_bracket(a: &TwoMicroSymbol, b: &TwoMicroSymbol) -> Result<TwoMicroSymbol> {
    check_depth(a, 1, false)?;
    check_depth(b, 1, false)?;
    let n = a.dim;
    let order = SymbolOrder::new(a.order.m + b.order.m - 1.0, a.order.l + b.order.l);
    match (a.terms(), b.terms()) {
        (Some(ta), Some(tb)) => {
            let mut terms = Vec::new();
            for t1 in ta {
                for t2 in tb {
                    for j in 0..n {
                        let mut e = vec![0u8; n];
                        e[j] = 1;
                        // + d_xi a * d_x b
                        terms.push(Term {
                            coeff: t1.coeff * t2.coeff,
                            x: x_prod(vec![t1.x.clone(), x_deriv(&t2.x, &e)]),
                            xi: Arc::new(XiProd {
                                factors: vec![xi_deriv(&t1.xi, &e), t2.xi.clone()],
                            }),
                        });
                        // - d_x a * d_xi b
                        terms.push(Term {
                            coeff: -t1.coeff * t2.coeff,
                            x: x_prod(vec![x_deriv(&t1.x, &e), t2.x.clone()]),
                            xi: Arc::new(XiProd {
                                factors: vec![t1.xi.clone(), xi_deriv(&t2.xi, &e)],
                            }),
                        });
                    }
                }
            }
            let mut out = TwoMicroSymbol::from_terms(n, order, terms);
            out.avail_depth = a.avail_depth.min(b.avail_depth).saturating_sub(1);
            Ok(out)
        }
        _ => {
            let (ac, bc) = (a.clone(), b.clone());
            let mut out = TwoMicroSymbol::opaque(
                n,
                order,
                Arc::new(move |x: &[f64], xi: &[f64], h: f64| {
                    let ja = ac.jet_full(x, xi, h, 1).expect("depth checked");
                    let jb = bc.jet_full(x, xi, h, 1).expect("depth checked");
                    let mut acc = Complex64::ZERO;
                    for j in 0..n {
                        let mut ex = vec![0u8; 2 * n];
                        ex[j] = 1;
                        let mut exi = vec![0u8; 2 * n];
                        exi[n + j] = 1;
                        acc += ja.partial(&exi) * jb.partial(&ex)
                            - ja.partial(&ex) * jb.partial(&exi);
                    }
                    acc
                }),
                None,
            );
            out.avail_depth = 0;
            Ok(out)
        }
    }
}

/// Truncated Weyl-composition (Moyal) expansion: all terms
/// `(ih/2)^{|alpha|} (-ih/2)^{|beta|} / (alpha! beta!)
///  (d_x^alpha d_xi^beta a)(d_xi^alpha d_x^beta b)`
/// with |alpha + beta| <= N.
pub fn moyal_expand(
    a: &TwoMicroSymbol,
    b: &TwoMicroSymbol,
    n_trunc: usize,
    fallback: bool,
) -> Result<TwoMicroSymbol> {
    check_depth(a, n_trunc, fallback)?;
    check_depth(b, n_trunc, fallback)?;
    let n = a.dim;
    let order = SymbolOrder::new(a.order.m + b.order.m, a.order.l + b.order.l);
    let half_i = Complex64::new(0.0, 0.5);
    match (a.terms(), b.terms()) {
        (Some(ta), Some(tb)) => {
            let mut terms = Vec::new();
            let idxs = multi_indices_upto(n, n_trunc);
            for alpha in &idxs {
                for beta in &idxs {
                    let tot: usize =
                        alpha.iter().chain(beta.iter()).map(|&v| v as usize).sum();
                    if tot > n_trunc {
                        continue;
                    }
                    let na: usize = alpha.iter().map(|&v| v as usize).sum();
                    let nb: usize = beta.iter().map(|&v| v as usize).sum();
                    let mut coeff = Complex64::ONE / (factorial_of(alpha) * factorial_of(beta));
                    for _ in 0..na {
                        coeff *= half_i;
                    }
                    for _ in 0..nb {
                        coeff *= -half_i;
                    }
                    for t1 in ta {
                        for t2 in tb {
                            terms.push(Term {
                                coeff: coeff * t1.coeff * t2.coeff,
                                x: x_prod(vec![x_deriv(&t1.x, alpha), x_deriv(&t2.x, beta)]),
                                xi: Arc::new(XiHPow {
                                    inner: Arc::new(XiProd {
                                        factors: vec![
                                            xi_deriv(&t1.xi, beta),
                                            xi_deriv(&t2.xi, alpha),
                                        ],
                                    }),
                                    power: tot as i32,
                                }),
                            });
                        }
                    }
                }
            }
            let mut out = TwoMicroSymbol::from_terms(n, order, terms);
            out.avail_depth = a.avail_depth.min(b.avail_depth).saturating_sub(n_trunc);
            Ok(out)
        }
        _ => {
            let (ac, bc) = (a.clone(), b.clone());
            let idxs = multi_indices_upto(n, n_trunc);
            let mut out = TwoMicroSymbol::opaque(
                n,
                order,
                Arc::new(move |x: &[f64], xi: &[f64], h: f64| {
                    let ja = ac.jet_full(x, xi, h, n_trunc).expect("depth checked");
                    let jb = bc.jet_full(x, xi, h, n_trunc).expect("depth checked");
                    let mut acc = Complex64::ZERO;
                    for alpha in &idxs {
                        for beta in &idxs {
                            let tot: usize =
                                alpha.iter().chain(beta.iter()).map(|&v| v as usize).sum();
                            if tot > n_trunc {
                                continue;
                            }
                            let na: usize = alpha.iter().map(|&v| v as usize).sum();
                            let nb: usize = beta.iter().map(|&v| v as usize).sum();
                            let mut coeff =
                                Complex64::new(h.powi(tot as i32), 0.0)
                                    / (factorial_of(alpha) * factorial_of(beta));
                            for _ in 0..na {
                                coeff *= half_i;
                            }
                            for _ in 0..nb {
                                coeff *= -half_i;
                            }
                            let ia: Vec<u8> =
                                alpha.iter().chain(beta.iter()).copied().collect();
                            let ib: Vec<u8> =
                                beta.iter().chain(alpha.iter()).copied().collect();
                            acc += coeff * ja.partial(&ia) * jb.partial(&ib);
                        }
                    }
                    acc
                }),
                None,
            );
            out.avail_depth = 0;
            Ok(out)
        }
    }
}

/// The subprincipal part a1 of a declared expansion a = a0 + h a1 + O(h^2);
/// h-free symbols have a1 = 0 by construction.
pub fn subprincipal_of(a: &TwoMicroSymbol) -> Result<TwoMicroSymbol> {
    if let Some((_, a1)) = &a.h_parts {
        return Ok(a1.as_ref().clone());
    }
    if a.is_h_free() {
        return Ok(TwoMicroSymbol::constant(a.dim, Complex64::ZERO));
    }
    Err(Error::Expansion)
}

/// Sample |a| * (h/rho)^m * rho^l over the support, the boundedness surrogate
/// for membership in S^{m,l}.
pub fn order_scaled_sample(
    a: &TwoMicroSymbol,
    xi0: &[f64],
    x: &[f64],
    xi: &[f64],
    h: f64,
) -> f64 {
    let bc = blowup_coords(xi, h, xi0);
    if bc.degenerate {
        return 0.0;
    }
    let v = a.eval(x, xi, h).norm();
    v * (h / bc.rho).powf(a.order.m) * bc.rho.powf(a.order.l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_spec() -> LocalizerSpec {
        LocalizerSpec {
            x0: vec![1.0, 2.0],
            ihat0: vec![0.0, 1.0],
            delta: 0.5,
            eps: 0.5,
            xwidth: 1.0,
            anglewidth: 0.7,
            order: SymbolOrder::new(0.0, 0.0),
            xi0: None,
            classical: false,
            rho_center: 0.0,
        }
    }

    #[test]
    fn blowup_coords_direct() {
        let bc = blowup_coords(&[0.1, 0.0], 0.01, &[0.0, 0.0]);
        assert!((bc.rho - 0.1).abs() < 1e-15);
        assert!((bc.ihat[0] - 1.0).abs() < 1e-15);
        assert!((bc.sigma - 0.1).abs() < 1e-15);
        assert!((bc.xi_interior[0] - 10.0).abs() < 1e-12);
        assert!(!bc.degenerate);
    }

    #[test]
    fn blowup_degenerate_at_center() {
        let bc = blowup_coords(&[0.0, 0.0], 0.01, &[0.0, 0.0]);
        assert!(bc.degenerate);
        assert_eq!(bc.rho, 0.0);
    }

    #[test]
    fn blowup_diagonal_ray() {
        for h in [0.5, 0.1, 0.003] {
            let bc = blowup_coords(&[0.0, h], h, &[0.0, 0.0]);
            assert!((bc.sigma - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn localizer_plateau_value() {
        let spec = unit_spec();
        let a = make_localizer(&spec).unwrap();
        let rho = spec.delta * 1e-6;
        let h = spec.eps * 1e-6 * rho;
        let xi = [0.0, rho];
        let v = a.eval(&spec.x0, &xi, h);
        assert!((v.re - 1.0).abs() < 1e-6, "plateau value {v}");
        assert!(v.im.abs() < 1e-15);
    }

    #[test]
    fn localizer_vanishes_beyond_anglewidth() {
        let spec = unit_spec();
        let a = make_localizer(&spec).unwrap();
        // direction at exactly anglewidth from ihat0
        let ang = spec.anglewidth;
        let xi = [0.1 * ang.sin(), 0.1 * ang.cos()];
        let v = a.eval(&spec.x0, &xi, 0.01);
        assert_eq!(v, Complex64::ZERO);
        // and further
        let xi2 = [0.1, 0.0];
        assert_eq!(a.eval(&spec.x0, &xi2, 0.01), Complex64::ZERO);
    }

    #[test]
    fn localizer_vanishes_outside_x_box() {
        let spec = unit_spec();
        let a = make_localizer(&spec).unwrap();
        let x = [1.0 + spec.xwidth, 2.0];
        assert_eq!(a.eval(&x, &[0.0, 0.1], 0.01), Complex64::ZERO);
    }

    #[test]
    fn order_prefactor_identity_at_rho_eq_h() {
        let mut spec0 = unit_spec();
        spec0.order = SymbolOrder::new(0.0, 0.0);
        let mut spec1 = unit_spec();
        spec1.order = SymbolOrder::new(1.0, 0.0);
        let a0 = make_localizer(&spec0).unwrap();
        let a1 = make_localizer(&spec1).unwrap();
        let h = 0.05;
        let xi = [0.0, h]; // rho = h, prefactor (rho/h)^1 = 1
        let v0 = a0.eval(&spec0.x0, &xi, h);
        let v1 = a1.eval(&spec1.x0, &xi, h);
        assert!((v0 - v1).norm() < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_widths() {
        let mut spec = unit_spec();
        spec.xwidth = -1.0;
        match make_localizer(&spec) {
            Err(Error::Spec(_)) => {}
            other => panic!("expected SpecError, got {other:?}"),
        }
    }

    #[test]
    fn poisson_of_fiber_only_symbols_vanishes() {
        let a = xi_affine(2, vec![1.0, 0.0], 0.0);
        let b = xi_radial_quadratic(2, 1.0);
        let pb = poisson_bracket(&a, &b).unwrap();
        let v = pb.eval(&[0.3, 0.4], &[0.5, -0.2], 0.1);
        assert!(v.norm() < 1e-14);
    }

    #[test]
    fn poisson_direct_differentiation() {
        // a = xi_1 * plateau, b = sin x_1 * plateau; at an interior plateau
        // point {a, b} = cos x_1.
        let plateau: Arc<dyn XiFactor> =
            Arc::new(XiPlateau { center: vec![0.0, 0.0], r0: 1.0, r1: 2.0 });
        let a = TwoMicroSymbol::from_terms(
            2,
            SymbolOrder::new(0.0, -1.0),
            vec![Term {
                coeff: Complex64::ONE,
                x: Arc::new(XOne { dim: 2 }),
                xi: Arc::new(XiProd {
                    factors: vec![
                        Arc::new(XiPoly {
                            dim: 2,
                            monomials: vec![(vec![1, 0], Complex64::ONE)],
                        }),
                        plateau.clone(),
                    ],
                }),
            }],
        );
        let i = Complex64::new(0.0, 0.5);
        let b = TwoMicroSymbol::from_terms(
            2,
            SymbolOrder::new(0.0, 0.0),
            vec![
                Term {
                    coeff: -i, // sin x1 = (e^{ix1} - e^{-ix1}) / 2i
                    x: Arc::new(XTrigPoly { dim: 2, terms: vec![(vec![1, 0], Complex64::ONE)] }),
                    xi: plateau.clone(),
                },
                Term {
                    coeff: i,
                    x: Arc::new(XTrigPoly { dim: 2, terms: vec![(vec![-1, 0], Complex64::ONE)] }),
                    xi: plateau.clone(),
                },
            ],
        );
        let pb = poisson_bracket(&a, &b).unwrap();
        let x = [0.7, 0.2];
        let v = pb.eval(&x, &[0.2, 0.1], 0.05);
        assert!((v - Complex64::new(x[0].cos(), 0.0)).norm() < 1e-12, "{v}");
        // antisymmetry
        let pb2 = poisson_bracket(&b, &a).unwrap();
        let w = pb2.eval(&x, &[0.2, 0.1], 0.05);
        assert!((v + w).norm() < 1e-12);
    }

    #[test]
    fn moyal_depth_zero_is_pointwise_product() {
        let a = classical_symbol(
            2,
            vec![(vec![0, 0], Complex64::ONE), (vec![1, 0], Complex64::new(0.5, 0.0))],
            vec![0.1, 0.0],
            0.8,
        );
        let b = classical_symbol(
            2,
            vec![(vec![0, 1], Complex64::new(0.0, 0.3))],
            vec![-0.1, 0.2],
            0.9,
        );
        let m0 = moyal_expand(&a, &b, 0, false).unwrap();
        let (x, xi, h) = ([0.4, 1.1], [0.05, -0.02], 0.125);
        let lhs = m0.eval(&x, &xi, h);
        let rhs = a.eval(&x, &xi, h) * b.eval(&x, &xi, h);
        assert!((lhs - rhs).norm() < 1e-12 * rhs.norm().max(1.0));
    }

    #[test]
    fn moyal_first_order_term_is_half_i_h_bracket() {
        let a = classical_symbol(
            2,
            vec![(vec![1, 0], Complex64::ONE), (vec![0, 0], Complex64::new(2.0, 0.0))],
            vec![0.0, 0.1],
            0.7,
        );
        let b = classical_symbol(
            2,
            vec![(vec![0, -1], Complex64::new(0.4, 0.2))],
            vec![0.1, -0.1],
            0.8,
        );
        let m1 = moyal_expand(&a, &b, 1, false).unwrap();
        let m0 = moyal_expand(&a, &b, 0, false).unwrap();
        let pb = poisson_bracket(&a, &b).unwrap();
        let (x, xi, h) = ([0.3, 0.9], [0.02, 0.03], 0.0625);
        // first-order part = (h/2i) {a,b}
        let first = m1.eval(&x, &xi, h) - m0.eval(&x, &xi, h);
        let expect = Complex64::new(0.0, -0.5 * h) * pb.eval(&x, &xi, h);
        assert!((first - expect).norm() < 1e-12, "{first} vs {expect}");
    }

    #[test]
    fn subprincipal_cases() {
        // h-independent symbol -> 0
        let p = xi_radial_quadratic(2, 1.0);
        let s = subprincipal_of(&p).unwrap();
        assert_eq!(s.eval(&[0.0, 0.0], &[0.4, 0.1], 0.05), Complex64::ZERO);
        // declared expansion p + h*mu -> mu
        let mu = TwoMicroSymbol::constant(2, Complex64::new(0.7, 0.0));
        let full = TwoMicroSymbol::with_h_expansion(p.clone(), mu);
        let s1 = subprincipal_of(&full).unwrap();
        assert!((s1.eval(&[0.1, 0.2], &[0.3, 0.0], 0.01).re - 0.7).abs() < 1e-15);
        // localizer has genuine h-dependence and no declared expansion
        let loc = make_localizer(&unit_spec()).unwrap();
        assert!(matches!(subprincipal_of(&loc), Err(Error::Expansion)));
    }

    #[test]
    fn depth_error_without_fallback() {
        let f: Arc<OpaqueEval> =
            Arc::new(|_x: &[f64], xi: &[f64], _h: f64| Complex64::new(xi[0], 0.0));
        let a = TwoMicroSymbol::opaque(2, SymbolOrder::new(0.0, 0.0), f.clone(), None);
        let b = TwoMicroSymbol::constant(2, Complex64::ONE);
        assert!(matches!(poisson_bracket(&a, &b), Err(Error::Depth { .. })));
        // with the fd fallback enabled the bracket evaluates
        let a_fd = TwoMicroSymbol::opaque(2, SymbolOrder::new(0.0, 0.0), f, Some(1e-5));
        let pb = poisson_bracket(&a_fd, &b).unwrap();
        assert!(pb.eval(&[0.0, 0.0], &[0.3, 0.1], 0.1).norm() < 1e-9);
    }

    #[test]
    fn order_bookkeeping_bounded_over_sweep() {
        let spec = unit_spec();
        for (m, l) in [(0.0, 0.0), (1.0, 0.0), (2.0, -1.0)] {
            let mut s = spec.clone();
            s.order = SymbolOrder::new(m, l);
            let a = make_localizer(&s).unwrap();
            let mut state = 0x9E3779B97F4A7C15u64;
            let mut rng = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let mut worst: f64 = 0.0;
            for j in 0..8 {
                let h = 2f64.powi(-3 - j);
                for _ in 0..125 {
                    // sample inside the support window
                    let rho = (h / s.eps) + rng() * (s.delta - h / s.eps).max(0.0);
                    let ang = (rng() - 0.5) * s.anglewidth;
                    let xi = [rho * ang.sin(), rho * ang.cos()];
                    let x = [
                        s.x0[0] + (rng() - 0.5) * s.xwidth,
                        s.x0[1] + (rng() - 0.5) * s.xwidth,
                    ];
                    let v = order_scaled_sample(&a, &[0.0, 0.0], &x, &xi, h);
                    worst = worst.max(v);
                }
            }
            assert!(worst <= 1.0 + 1e-9, "order ({m},{l}) bound violated: {worst}");
        }
    }
}
