//! Action-angle models, frequencies and Hessians, the isoenergetic
//! nondegeneracy matrix, the H1/H2 flows on SN(L), orbit-closure
//! classification over Q, the flat Schroedinger multiplier, and the explicit
//! quasimode families.
//!
//! On the flat torus the action-angle chart is the identity: theta = x and
//! I = xi - xi0, so the frequency data of the flat model is omega = 2 xi0,
//! omega_ij = 2 delta_ij with no generating-function machinery.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, SparseModeFunction};
use crate::microlocal::{FieldRep, SemiclassicalFamily};
use crate::quantize::{quantize, OperatorRep, QuantizationKind};
use crate::symbols::{xi_radial_quadratic, TwoMicroSymbol};
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

pub type Rat = BigRational;

pub fn rat(p: i64, q: i64) -> Rat {
    BigRational::new(p.into(), q.into())
}

type RealFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type HessFn = Arc<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>;

/// Exact rational frequency data at a designated action point.
#[derive(Debug, Clone)]
pub struct RationalData {
    pub omega: Vec<Rat>,
    pub hess: Vec<Vec<Rat>>,
}

/// An integrable Hamiltonian in action variables: p(I), its gradient
/// omega(I) and Hessian omega_ij(I), with optional exact rational data.
#[derive(Clone)]
pub struct ActionAngleModel {
    pub n: usize,
    pub label: String,
    p: RealFn,
    grad: GradFn,
    hess: HessFn,
    pub rational: Option<RationalData>,
    /// declared constant subprincipal term mu (the h-coefficient)
    pub mu: f64,
}

impl std::fmt::Debug for ActionAngleModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ActionAngleModel({})", self.label)
    }
}

impl ActionAngleModel {
    /// Flat model p = |xi|^2 - e around the torus {xi = xi0}; in action
    /// variables p(I) = |I + xi0|^2 - e.
    pub fn flat(xi0_num: Vec<i64>, xi0_den: Vec<i64>, e: f64) -> Result<Self> {
        let n = xi0_num.len();
        if xi0_den.len() != n || xi0_den.iter().any(|&d| d == 0) {
            return Err(Error::Spec("xi0 must be given as p/q pairs".into()));
        }
        let xi0: Vec<f64> = xi0_num
            .iter()
            .zip(xi0_den.iter())
            .map(|(&p, &q)| p as f64 / q as f64)
            .collect();
        let xi0c = xi0.clone();
        let p = Arc::new(move |i: &[f64]| {
            i.iter()
                .zip(xi0c.iter())
                .map(|(a, b)| (a + b) * (a + b))
                .sum::<f64>()
                - e
        });
        let xi0g = xi0.clone();
        let grad = Arc::new(move |i: &[f64]| {
            i.iter().zip(xi0g.iter()).map(|(a, b)| 2.0 * (a + b)).collect()
        });
        let nn = n;
        let hess = Arc::new(move |_i: &[f64]| {
            (0..nn)
                .map(|r| (0..nn).map(|c| if r == c { 2.0 } else { 0.0 }).collect())
                .collect()
        });
        let omega: Vec<Rat> = xi0_num
            .iter()
            .zip(xi0_den.iter())
            .map(|(&p, &q)| rat(2 * p, q))
            .collect();
        let hess_rat: Vec<Vec<Rat>> = (0..n)
            .map(|r| (0..n).map(|c| if r == c { rat(2, 1) } else { rat(0, 1) }).collect())
            .collect();
        Ok(ActionAngleModel {
            n,
            label: "flat".into(),
            p,
            grad,
            hess,
            rational: Some(RationalData { omega, hess: hess_rat }),
            mu: 0.0,
        })
    }

    /// Linear model p = omega . I (vanishing Hessian).
    pub fn linear(omega_num: Vec<i64>, omega_den: Vec<i64>) -> Result<Self> {
        let n = omega_num.len();
        if omega_den.len() != n || omega_den.iter().any(|&d| d == 0) {
            return Err(Error::Spec("omega must be given as p/q pairs".into()));
        }
        let omega: Vec<f64> = omega_num
            .iter()
            .zip(omega_den.iter())
            .map(|(&p, &q)| p as f64 / q as f64)
            .collect();
        let oc = omega.clone();
        let p = Arc::new(move |i: &[f64]| i.iter().zip(oc.iter()).map(|(a, b)| a * b).sum());
        let og = omega.clone();
        let grad = Arc::new(move |_i: &[f64]| og.clone());
        let nn = n;
        let hess = Arc::new(move |_i: &[f64]| vec![vec![0.0; nn]; nn]);
        let omega_rat: Vec<Rat> = omega_num
            .iter()
            .zip(omega_den.iter())
            .map(|(&p, &q)| rat(p, q))
            .collect();
        let hess_rat = vec![vec![rat(0, 1); n]; n];
        Ok(ActionAngleModel {
            n,
            label: "linear".into(),
            p,
            grad,
            hess,
            rational: Some(RationalData { omega: omega_rat, hess: hess_rat }),
            mu: 0.0,
        })
    }

    /// The model with p replaced by factor * p (frequencies and Hessian
    /// scale linearly; the bordered determinant is degree-(n+1) homogeneous).
    pub fn scaled(&self, num: i64, den: i64) -> Result<Self> {
        if den == 0 {
            return Err(Error::Spec("scale denominator must be nonzero".into()));
        }
        let factor = num as f64 / den as f64;
        let p0 = self.p.clone();
        let g0 = self.grad.clone();
        let h0 = self.hess.clone();
        let rational = self.rational.as_ref().map(|rd| RationalData {
            omega: rd.omega.iter().map(|v| v * rat(num, den)).collect(),
            hess: rd
                .hess
                .iter()
                .map(|row| row.iter().map(|v| v * rat(num, den)).collect())
                .collect(),
        });
        Ok(ActionAngleModel {
            n: self.n,
            label: format!("{} * {num}/{den}", self.label),
            p: Arc::new(move |i: &[f64]| factor * p0(i)),
            grad: Arc::new(move |i: &[f64]| g0(i).into_iter().map(|v| factor * v).collect()),
            hess: Arc::new(move |i: &[f64]| {
                h0(i)
                    .into_iter()
                    .map(|row| row.into_iter().map(|v| factor * v).collect())
                    .collect()
            }),
            rational,
            mu: self.mu,
        })
    }

    pub fn p(&self, i: &[f64]) -> f64 {
        (self.p)(i)
    }

    pub fn omega(&self, i: &[f64]) -> Vec<f64> {
        (self.grad)(i)
    }

    pub fn omega_ij(&self, i: &[f64]) -> Vec<Vec<f64>> {
        (self.hess)(i)
    }

    /// Consistency of grad with p by central differences, and symmetry of
    /// the Hessian (constructor sanity checks).
    pub fn validate_at(&self, i0: &[f64]) -> Result<()> {
        let g = self.omega(i0);
        let step = 1e-6;
        for a in 0..self.n {
            let mut ip = i0.to_vec();
            ip[a] += step;
            let mut im = i0.to_vec();
            im[a] -= step;
            let fd = (self.p(&ip) - self.p(&im)) / (2.0 * step);
            if (fd - g[a]).abs() > 1e-6 * (1.0 + g[a].abs()) {
                return Err(Error::Spec(format!(
                    "gradient inconsistent with p on axis {a}: {fd} vs {}",
                    g[a]
                )));
            }
        }
        let h = self.omega_ij(i0);
        for r in 0..self.n {
            for c in 0..self.n {
                if (h[r][c] - h[c][r]).abs() > 1e-12 {
                    return Err(Error::Spec("hessian not symmetric".into()));
                }
            }
        }
        Ok(())
    }
}

/// The bordered frequency matrix Omega = [[omega_ij, omega_i], [omega_j, 0]].
#[derive(Debug, Clone, Serialize)]
pub struct IsoenergeticMatrix {
    pub n: usize,
    /// row-major (n+1) x (n+1)
    pub entries: Vec<f64>,
    pub det: f64,
    pub nondegenerate: bool,
    /// exact determinant as a rational string when rational data exists
    pub det_exact: Option<String>,
}

fn rat_det(m: &[Vec<Rat>]) -> Rat {
    let n = m.len();
    if n == 1 {
        return m[0][0].clone();
    }
    let mut acc = Rat::zero();
    for c in 0..n {
        let minor: Vec<Vec<Rat>> = (1..n)
            .map(|r| {
                (0..n)
                    .filter(|&cc| cc != c)
                    .map(|cc| m[r][cc].clone())
                    .collect()
            })
            .collect();
        let term = m[0][c].clone() * rat_det(&minor);
        if c % 2 == 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    acc
}

fn float_det(m: &mut [Vec<f64>]) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for c in 0..n {
        let (pivot_row, pivot) = (c..n)
            .map(|r| (r, m[r][c]))
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        if pivot.abs() < 1e-300 {
            return 0.0;
        }
        if pivot_row != c {
            m.swap(pivot_row, c);
            det = -det;
        }
        det *= m[c][c];
        for r in (c + 1)..n {
            let f = m[r][c] / m[c][c];
            for cc in c..n {
                m[r][cc] -= f * m[c][cc];
            }
        }
    }
    det
}

pub const ISOENERGETIC_TOL: f64 = 1e-10;

/// Assemble and test the isoenergetic nondegeneracy matrix at an action
/// point; exact cofactor determinant in rational mode, LU otherwise.
pub fn isoenergetic(model: &ActionAngleModel, i0: &[f64]) -> IsoenergeticMatrix {
    let n = model.n;
    let omega = model.omega(i0);
    let hess = model.omega_ij(i0);
    let dim = n + 1;
    let mut entries = vec![0.0; dim * dim];
    for r in 0..n {
        for c in 0..n {
            entries[r * dim + c] = hess[r][c];
        }
        entries[r * dim + n] = omega[r];
        entries[n * dim + r] = omega[r];
    }
    let (det, det_exact, nondegenerate) = match &model.rational {
        Some(rd) => {
            let mut m: Vec<Vec<Rat>> = (0..dim)
                .map(|r| {
                    (0..dim)
                        .map(|c| {
                            if r < n && c < n {
                                rd.hess[r][c].clone()
                            } else if r < n && c == n {
                                rd.omega[r].clone()
                            } else if r == n && c < n {
                                rd.omega[c].clone()
                            } else {
                                Rat::zero()
                            }
                        })
                        .collect()
                })
                .collect();
            let d = rat_det(&mut m);
            let df = d.to_f64().unwrap_or(f64::NAN);
            (df, Some(d.to_string()), !d.is_zero())
        }
        None => {
            let mut m: Vec<Vec<f64>> = (0..dim)
                .map(|r| (0..dim).map(|c| entries[r * dim + c]).collect())
                .collect();
            let d = float_det(&mut m);
            (d, None, d.abs() > ISOENERGETIC_TOL)
        }
    };
    IsoenergeticMatrix { n, entries, det, nondegenerate, det_exact }
}

/// A point of SN(L) = L x S^{n-1} in angle coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SNPoint {
    pub theta: Vec<f64>,
    pub ihat: Vec<f64>,
}

impl SNPoint {
    pub fn new(theta: Vec<f64>, ihat: Vec<f64>) -> Result<Self> {
        let norm = ihat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Spec(format!("ihat must be a unit vector, |ihat| = {norm}")));
        }
        Ok(SNPoint { theta, ihat })
    }
}

fn wrap_theta(theta: &mut [f64]) {
    for t in theta.iter_mut() {
        *t = t.rem_euclid(2.0 * PI);
    }
}

/// The boundary Hamilton flow H1 = sum omega_j d_theta_j: a torus
/// translation at speed omega; the direction is frozen.
pub fn h1_flow(q: &SNPoint, t: f64, omega_bar: &[f64]) -> SNPoint {
    let mut theta: Vec<f64> = q
        .theta
        .iter()
        .zip(omega_bar.iter())
        .map(|(&th, &w)| th + t * w)
        .collect();
    wrap_theta(&mut theta);
    SNPoint { theta, ihat: q.ihat.clone() }
}

/// The second-order jet flow H2 = sum omega_ij Ihat_i d_theta_j.
pub fn h2_flow(q: &SNPoint, t: f64, hess_bar: &[Vec<f64>]) -> SNPoint {
    let n = q.theta.len();
    let mut theta = q.theta.clone();
    for (j, th) in theta.iter_mut().enumerate() {
        let speed: f64 = (0..n).map(|i| hess_bar[i][j] * q.ihat[i]).sum();
        *th += t * speed;
    }
    wrap_theta(&mut theta);
    SNPoint { theta, ihat: q.ihat.clone() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "dim")]
pub enum OrbitClosure {
    FullTorus,
    Subtorus(usize),
    Point,
}

/// Rank over Q of a set of rational direction vectors.
fn rational_rank(rows: &mut Vec<Vec<Rat>>) -> usize {
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut rank = 0;
    let mut col = 0;
    while rank < rows.len() && col < ncols {
        if let Some(pivot) = (rank..rows.len()).find(|&r| !rows[r][col].is_zero()) {
            rows.swap(rank, pivot);
            let inv = rows[rank][col].clone();
            for r in (rank + 1)..rows.len() {
                if rows[r][col].is_zero() {
                    continue;
                }
                let f = rows[r][col].clone() / inv.clone();
                for c in col..ncols {
                    let sub = f.clone() * rows[rank][c].clone();
                    rows[r][c] -= sub;
                }
            }
            rank += 1;
        }
        col += 1;
    }
    rank
}

/// Closure of the joint (H1, H2) orbit through a rational direction: the
/// rational subtorus spanned by {omega, Omega_hess . Ihat}. Exact rational
/// linear algebra decides the dimension; floats are rejected upstream.
pub fn orbit_closure(rd: &RationalData, ihat: &[Rat]) -> Result<OrbitClosure> {
    let n = rd.omega.len();
    if ihat.len() != n {
        return Err(Error::Rationality("direction dimension mismatch".into()));
    }
    let d2: Vec<Rat> = (0..n)
        .map(|j| {
            (0..n)
                .map(|i| rd.hess[i][j].clone() * ihat[i].clone())
                .fold(Rat::zero(), |a, b| a + b)
        })
        .collect();
    let mut rows = vec![rd.omega.clone(), d2];
    rows.retain(|r| r.iter().any(|v| !v.is_zero()));
    if rows.is_empty() {
        return Ok(OrbitClosure::Point);
    }
    let mut work = rows.clone();
    let rank = rational_rank(&mut work);
    if rank == n {
        Ok(OrbitClosure::FullTorus)
    } else {
        Ok(OrbitClosure::Subtorus(rank))
    }
}

/// Continued-fraction rationalization with bounded denominator; the explicit
/// heuristic escape hatch for float frequency data.
pub fn rationalize(x: f64, max_den: i64) -> Result<Rat> {
    let mut p0: i64 = 1;
    let mut q0: i64 = 0;
    let mut p1 = x.floor() as i64;
    let mut q1: i64 = 1;
    let mut frac = x - x.floor();
    for _ in 0..64 {
        let approx = p1 as f64 / q1 as f64;
        if (approx - x).abs() < 1e-12 * (1.0 + x.abs()) {
            return Ok(rat(p1, q1));
        }
        if frac.abs() < 1e-15 {
            break;
        }
        let r = 1.0 / frac;
        let a = r.floor() as i64;
        let p2 = a * p1 + p0;
        let q2 = a * q1 + q0;
        if q2 > max_den {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        frac = r - r.floor();
    }
    if (p1 as f64 / q1 as f64 - x).abs() < 1e-12 * (1.0 + x.abs()) {
        Ok(rat(p1, q1))
    } else {
        Err(Error::Rationality(format!(
            "{x} has no rational approximation with denominator <= {max_den}"
        )))
    }
}

// ---------------------------------------------------------------------------
// The flat Schroedinger multiplier and the explicit quasimode families.
// ---------------------------------------------------------------------------

/// P = h^2 Delta - e as a diagonal Fourier multiplier (exact).
pub fn flat_hamiltonian(grid: &Grid, h: f64, e: f64) -> Result<OperatorRep> {
    let sym = xi_radial_quadratic(grid.dim(), e);
    quantize(&sym, h, grid, QuantizationKind::Left, true)
}

/// Symbol of the flat model with its declared (constant) h-expansion;
/// subprincipal term mu defaults to zero.
pub fn flat_symbol_with_mu(n: usize, e: f64, mu: f64) -> TwoMicroSymbol {
    let p = xi_radial_quadratic(n, e);
    if mu == 0.0 {
        p
    } else {
        TwoMicroSymbol::with_h_expansion(p, TwoMicroSymbol::constant(n, Complex64::new(mu, 0.0)))
    }
}

/// Eigenvalue action of P = h^2 Delta - e on a sparse mode sum (exact).
pub fn apply_flat_sparse(u: &SparseModeFunction, e: f64) -> SparseModeFunction {
    let h = u.h;
    let modes = u
        .modes()
        .iter()
        .map(|(k, c)| {
            let k2: f64 = k.iter().map(|&ka| (ka * ka) as f64).sum();
            (k.clone(), c * Complex64::new(h * h * k2 - e, 0.0))
        })
        .collect();
    SparseModeFunction::new(modes, h).expect("valid sparse")
}

/// The explicit quasimode u_k = e^{i(k^2 x_1 + k x_2)} at
/// h_k = k^{-1}(1+k^2)^{-1/2}; then h_k^2 (k^4 + k^2) = 1 and P_{h_k} u_k = 0.
pub fn resonant_quasimode(k: u64) -> Result<(f64, SparseModeFunction)> {
    if k == 0 {
        return Err(Error::Spec("quasimode index k must be >= 1".into()));
    }
    let kf = k as f64;
    let h = 1.0 / (kf * (1.0 + kf * kf).sqrt());
    let u = SparseModeFunction::single(vec![(k * k) as i64, k as i64], h)?;
    Ok((h, u))
}

/// The family {u_k} with centers xi0 = (1, 0).
pub fn resonant_family(ks: &[u64]) -> Result<SemiclassicalFamily> {
    let mut members = Vec::with_capacity(ks.len());
    let mut centers = Vec::with_capacity(ks.len());
    for &k in ks {
        let (_, u) = resonant_quasimode(k)?;
        members.push(FieldRep::Sparse(u));
        centers.push(vec![1.0, 0.0]);
    }
    SemiclassicalFamily::new("resonant-uk", members, Some(centers))
}

/// WKB state chi(x) e^{i k0 . x} with an exactly band-limited amplitude given
/// by its Fourier modes.
pub fn wkb_state(
    grid: &Grid,
    h: f64,
    k0: &[i64],
    amplitude: &[(Vec<i64>, Complex64)],
) -> Result<GridFunction> {
    let sparse = wkb_sparse(h, k0, amplitude)?;
    sparse.densify(grid)
}

pub fn wkb_sparse(
    h: f64,
    k0: &[i64],
    amplitude: &[(Vec<i64>, Complex64)],
) -> Result<SparseModeFunction> {
    let modes: Vec<(Vec<i64>, Complex64)> = amplitude
        .iter()
        .map(|(b, c)| {
            let k: Vec<i64> = k0.iter().zip(b.iter()).map(|(a, b)| a + b).collect();
            (k, *c)
        })
        .collect();
    SparseModeFunction::new(modes, h)
}

/// Lagrangian control family chi(x) e^{i m_j . x} with m_j = round(xi*/h_j)
/// exactly on the momentum lattice; centers xi0(h_j) = h_j m_j.
pub fn wkb_control_family(
    exponents: &[i32],
    xi_star: &[i64],
    amplitude: &[(Vec<i64>, Complex64)],
) -> Result<SemiclassicalFamily> {
    let mut members = Vec::new();
    let mut centers = Vec::new();
    for &j in exponents {
        let h = 2f64.powi(-j);
        let scale = 2i64.pow(j as u32);
        let m: Vec<i64> = xi_star.iter().map(|&x| x * scale).collect();
        members.push(FieldRep::Sparse(wkb_sparse(h, &m, amplitude)?));
        centers.push(m.iter().map(|&k| h * k as f64).collect());
    }
    SemiclassicalFamily::new("wkb-control", members, Some(centers))
}

/// The elementary exact FIO u -> e^{-i k0 . x} u: every mode shifts by -k0.
pub fn modulate_to_zero_section(u: &FieldRep, k0: &[i64]) -> Result<FieldRep> {
    match u {
        FieldRep::Sparse(s) => Ok(FieldRep::Sparse(s.modulate(k0))),
        FieldRep::Grid(g) => {
            let n = g.grid.dim();
            let mut out = g.clone();
            let mut x = vec![0.0; n];
            for (j, v) in out.values.iter_mut().enumerate() {
                g.grid.point(j, &mut x);
                let phase: f64 = k0.iter().zip(x.iter()).map(|(&k, &xa)| k as f64 * xa).sum();
                *v *= Complex64::new(phase.cos(), -phase.sin());
            }
            Ok(FieldRep::Grid(out))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::l2_norm_sparse;

    #[test]
    fn flat_isoenergetic_det_is_minus_eight() {
        let model = ActionAngleModel::flat(vec![1, 0], vec![1, 1], 1.0).unwrap();
        model.validate_at(&[0.0, 0.0]).unwrap();
        let m = isoenergetic(&model, &[0.0, 0.0]);
        assert_eq!(m.det_exact.as_deref(), Some("-8"));
        assert!(m.nondegenerate);
        assert!((m.det + 8.0).abs() < 1e-12);
    }

    #[test]
    fn linear_model_is_degenerate() {
        let model = ActionAngleModel::linear(vec![1, 0], vec![1, 1]).unwrap();
        let m = isoenergetic(&model, &[0.0, 0.0]);
        assert_eq!(m.det_exact.as_deref(), Some("0"));
        assert!(!m.nondegenerate);
    }

    #[test]
    fn det_scaling_is_cubic_in_two_dims() {
        // p -> 2p doubles omega and hess; det is degree-3 homogeneous (n=2),
        // so it multiplies by 2^{n+1} = 8 and nondegeneracy is preserved
        let flat = ActionAngleModel::flat(vec![1, 0], vec![1, 1], 1.0).unwrap();
        let m1 = isoenergetic(&flat, &[0.0, 0.0]);
        let m2 = isoenergetic(&flat.scaled(2, 1).unwrap(), &[0.0, 0.0]);
        assert_eq!(m1.det_exact.as_deref(), Some("-8"));
        assert_eq!(m2.det_exact.as_deref(), Some("-64"));
        assert!(m2.nondegenerate);
        // general center: det = -8 |xi0|^2 exactly
        let m3 = isoenergetic(
            &ActionAngleModel::flat(vec![2, 0], vec![1, 1], 1.0).unwrap(),
            &[0.0, 0.0],
        );
        assert!((m3.det + 32.0).abs() < 1e-12);
    }

    #[test]
    fn flows_are_commuting_translations() {
        let q = SNPoint::new(vec![0.3, 5.9], vec![0.0, 1.0]).unwrap();
        let omega = vec![2.0, 0.0];
        let hess = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
        let t = 0.7;
        // t = 0 identity
        let id = h1_flow(&q, 0.0, &omega);
        assert_eq!(id.theta, q.theta);
        // group law
        let a = h1_flow(&h1_flow(&q, 0.3, &omega), 0.4, &omega);
        let b = h1_flow(&q, 0.7, &omega);
        for (x, y) in a.theta.iter().zip(b.theta.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        // commutation
        let ab = h2_flow(&h1_flow(&q, t, &omega), t, &hess);
        let ba = h1_flow(&h2_flow(&q, t, &hess), t, &omega);
        for (x, y) in ab.theta.iter().zip(ba.theta.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        // flat model at xi0: h2 moves theta by 2 t Ihat
        let moved = h2_flow(&q, t, &hess);
        assert!((moved.theta[1] - (q.theta[1] + 2.0 * t)).rem_euclid(2.0 * PI) < 1e-12);
    }

    #[test]
    fn orbit_closure_classification() {
        let flat = ActionAngleModel::flat(vec![1, 0], vec![1, 1], 1.0).unwrap();
        let rd = flat.rational.as_ref().unwrap();
        let full = orbit_closure(rd, &[rat(0, 1), rat(1, 1)]).unwrap();
        assert_eq!(full, OrbitClosure::FullTorus);

        let linear = ActionAngleModel::linear(vec![1, 0], vec![1, 1]).unwrap();
        let rdl = linear.rational.as_ref().unwrap();
        let sub = orbit_closure(rdl, &[rat(0, 1), rat(1, 1)]).unwrap();
        assert_eq!(sub, OrbitClosure::Subtorus(1));

        let diag = ActionAngleModel::linear(vec![1, 1], vec![1, 1]).unwrap();
        let rdd = diag.rational.as_ref().unwrap();
        assert_eq!(orbit_closure(rdd, &[rat(1, 1), rat(0, 1)]).unwrap(), OrbitClosure::Subtorus(1));
    }

    #[test]
    fn rationalize_accepts_rationals_and_rejects_irrationals() {
        assert_eq!(rationalize(0.5, 10_000).unwrap(), rat(1, 2));
        assert_eq!(rationalize(2.0, 10_000).unwrap(), rat(2, 1));
        match rationalize(std::f64::consts::SQRT_2, 10_000) {
            Err(Error::Rationality(_)) => {}
            other => panic!("expected RationalityError, got {other:?}"),
        }
    }

    #[test]
    fn resonant_quasimode_is_exact_null_mode() {
        for k in [1u64, 2, 7, 32, 64] {
            let (h, u) = resonant_quasimode(k).unwrap();
            if k == 1 {
                assert!((h - 1.0 / 2f64.sqrt()).abs() < 1e-15);
            }
            // momentum lies exactly on the energy shell |xi| = 1
            let kf = k as f64;
            let xi = [h * kf * kf, h * kf];
            let r2 = xi[0] * xi[0] + xi[1] * xi[1];
            assert!((r2 - 1.0).abs() < 1e-14);
            let pu = apply_flat_sparse(&u, 1.0);
            assert!(l2_norm_sparse(&pu) < 1e-10, "k = {k}: {}", l2_norm_sparse(&pu));
        }
    }

    #[test]
    fn flat_multiplier_acts_diagonally() {
        let g = Grid::new(vec![8, 8]).unwrap();
        let h = 0.25;
        let op = flat_hamiltonian(&g, h, 0.0).unwrap();
        let u = crate::grid::make_mode(&g, &[2, -1], h).unwrap();
        let out = crate::quantize::apply(&op, &u).unwrap();
        let eig = h * h * 5.0;
        for (a, b) in out.values.iter().zip(u.values.iter()) {
            assert!((a - b * Complex64::new(eig, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn modulation_shifts_blowup_data_to_the_corner() {
        // modulate(u_k, (k^2, 0)) -> mode (0, k): at xi0 = 0 the blowup data
        // is rho = h_k k, Ihat = (0, 1), sigma = 1/k
        let k = 12u64;
        let (h, u) = resonant_quasimode(k).unwrap();
        let shifted = modulate_to_zero_section(&FieldRep::Sparse(u), &[(k * k) as i64, 0])
            .unwrap();
        let s = match shifted {
            FieldRep::Sparse(s) => s,
            _ => unreachable!(),
        };
        assert_eq!(s.modes()[0].0, vec![0, k as i64]);
        let bc = crate::symbols::blowup_coords(&[0.0, h * k as f64], h, &[0.0, 0.0]);
        let kf = k as f64;
        assert!((bc.rho - 1.0 / (1.0 + kf * kf).sqrt()).abs() < 1e-12);
        assert!((bc.ihat[1] - 1.0).abs() < 1e-14);
        assert!((bc.sigma - 1.0 / kf).abs() < 1e-12);
    }

    #[test]
    fn double_modulation_composes() {
        let u = SparseModeFunction::single(vec![5, -3], 0.1).unwrap();
        let a = modulate_to_zero_section(&FieldRep::Sparse(u.clone()), &[2, 1]).unwrap();
        let b = modulate_to_zero_section(&a, &[3, -4]).unwrap();
        let direct = modulate_to_zero_section(&FieldRep::Sparse(u), &[5, -3]).unwrap();
        if let (FieldRep::Sparse(x), FieldRep::Sparse(y)) = (b, direct) {
            assert_eq!(x.modes()[0].0, y.modes()[0].0);
            assert_eq!(x.modes()[0].0, vec![0, 0]);
        }
    }

    #[test]
    fn subprincipal_hypothesis_of_flat_model() {
        let sym = flat_symbol_with_mu(2, 1.0, 0.0);
        let sub = crate::symbols::subprincipal_of(&sym).unwrap();
        assert_eq!(sub.eval(&[0.1, 0.2], &[0.5, 0.0], 0.1), Complex64::ZERO);
        let sym_mu = flat_symbol_with_mu(2, 1.0, 0.7);
        let sub_mu = crate::symbols::subprincipal_of(&sym_mu).unwrap();
        let v = sub_mu.eval(&[0.1, 0.2], &[0.5, 0.0], 0.1);
        assert!((v.re - 0.7).abs() < 1e-15 && v.im.abs() < 1e-15);
    }

    #[test]
    fn wkb_state_matches_sparse_twin() {
        let g = Grid::new(vec![32, 32]).unwrap();
        let h = 0.125;
        let amp = vec![
            (vec![0, 0], Complex64::new(1.0, 0.0)),
            (vec![0, 1], Complex64::new(0.3, 0.0)),
            (vec![0, -1], Complex64::new(0.3, 0.0)),
        ];
        let k0 = [8i64, 0];
        let u = wkb_state(&g, h, &k0, &amp).unwrap();
        let s = wkb_sparse(h, &k0, &amp).unwrap();
        assert!((crate::grid::l2_norm_grid(&u) - l2_norm_sparse(&s)).abs() < 1e-12);
        // alias rejection: mode beyond the grid band
        assert!(wkb_state(&g, h, &[20, 0], &amp).is_err());
    }
}
