//! Model-based validation: Lyapunov and Riccati solvers, LQR costs, system
//! norms, the compression error bounds, and the small-gain stability test.
//!
//! Everything here reads the true `(A, B)`; the learning code never does.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::lti_sim::LtiSystem;
use crate::policy::LqrWeights;
use crate::precondition::ProjectionMatrix;
#[allow(unused_imports)]
use num_traits::Float;

type CMatrix = DMatrix<Complex64>;

fn complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Complex Schur form `A = U T Uᴴ`.
struct Schur {
    u: CMatrix,
    t: CMatrix,
}

impl Schur {
    fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Ok(Self {
                u: CMatrix::zeros(0, 0),
                t: CMatrix::zeros(0, 0),
            });
        }
        let s = nalgebra::linalg::Schur::try_new(complex(a), 1e-15, 100 * n)
            .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
        let (u, t) = s.unpack();
        Ok(Self { u, t })
    }

    fn abscissa(&self) -> f64 {
        (0..self.t.nrows())
            .map(|i| self.t[(i, i)].re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn require_hurwitz(&self) -> Result<()> {
        let max_real = self.abscissa();
        if self.t.nrows() > 0 && !(max_real < 0.0) {
            return Err(Error::NotHurwitz { max_real });
        }
        Ok(())
    }
}

/// Solves `AᵀW + WA + M = 0` for Hurwitz `A` (complex Bartels–Stewart).
pub fn lyapunov_solve(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || m.shape() != (n, n) {
        return dim_err("Lyapunov operands must be square and of equal size");
    }
    let schur = Schur::new(a)?;
    schur.require_hurwitz()?;
    let (u, t) = (&schur.u, &schur.t);
    // Tᴴ Y + Y T + M̃ = 0 with Y = Uᴴ W U, M̃ = Uᴴ M U
    let mt = u.adjoint() * complex(m) * u;
    let mut y = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = -mt[(i, j)];
            for k in 0..i {
                acc -= t[(k, i)].conj() * y[(k, j)];
            }
            for k in 0..j {
                acc -= y[(i, k)] * t[(k, j)];
            }
            y[(i, j)] = acc / (t[(i, i)].conj() + t[(j, j)]);
        }
    }
    let w = (u * y * u.adjoint()).map(|z| z.re);
    Ok(linalg::symmetrize(&w))
}

/// Stabilizing solution of the algebraic Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub w: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub iterations: usize,
}

fn r_inverse(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    r.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::InvalidArgument("R is not positive definite".into()))
}

/// Model-based Kleinman iteration from a stabilizing `F_0`.
pub fn kleinman_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    f0: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    let (n, m) = (a.nrows(), b.ncols());
    if b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) || f0.shape() != (m, n) {
        return dim_err("Riccati operands have inconsistent shapes");
    }
    let rinv_bt = r_inverse(r)? * b.transpose();
    let mut f = f0.clone();
    for k in 0..max_iter {
        let acl = a - b * &f;
        let w = lyapunov_solve(&acl, &(q + f.transpose() * r * &f))?;
        let f_next = &rinv_bt * &w;
        let delta = (&f_next - &f).norm();
        f = f_next;
        if delta <= tol {
            return Ok(RiccatiSolution {
                w,
                f,
                iterations: k + 1,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
    })
}

/// Optimal LQR gain for a plant, deflating the semi-stable mode when the
/// plant has one (`W` and `F` are returned in the original coordinates).
pub fn optimal_gain(sys: &LtiSystem, weights: &LqrWeights) -> Result<RiccatiSolution> {
    let (n, m) = (sys.n(), sys.m());
    match sys.semistable_eigvec() {
        None => kleinman_riccati(
            sys.a(),
            sys.b(),
            weights.q(),
            weights.r(),
            &DMatrix::zeros(m, n),
            1e-12,
            100,
        ),
        Some(v) => {
            weights.check_kernel(v)?;
            let vb = linalg::orthonormal_complement(v)?;
            let ad = &vb * sys.a() * vb.transpose();
            let bd = &vb * sys.b();
            let qd = linalg::symmetrize(&(&vb * weights.q() * vb.transpose()));
            let sol = kleinman_riccati(
                &ad,
                &bd,
                &qd,
                weights.r(),
                &DMatrix::zeros(m, n - 1),
                1e-12,
                100,
            )?;
            Ok(RiccatiSolution {
                w: vb.transpose() * &sol.w * &vb,
                f: &sol.f * &vb,
                iterations: sol.iterations,
            })
        }
    }
}

/// `x0ᵀ W x0` with `W` the closed-loop cost matrix of `u = −Fx`.
///
/// Returns `+∞` when the closed loop is not stable. On a semi-stable plant
/// with `Fv = 0` the cost is evaluated in the deflated coordinates, where
/// the uncontrolled kernel direction contributes nothing.
pub fn lqr_cost(
    sys: &LtiSystem,
    f: &DMatrix<f64>,
    weights: &LqrWeights,
    x0: &DVector<f64>,
) -> Result<f64> {
    let (n, m) = (sys.n(), sys.m());
    if f.shape() != (m, n) || x0.len() != n || weights.q().nrows() != n {
        return dim_err("cost operands have inconsistent shapes");
    }
    let acl = sys.a() - sys.b() * f;
    let qf = weights.q() + f.transpose() * weights.r() * f;
    let (acl, qf, x0) = match sys.semistable_eigvec() {
        Some(v) if (&acl * v).norm() <= 1e-10 * acl.norm().max(1.0) * v.norm() => {
            let vb = linalg::orthonormal_complement(v)?;
            (
                &vb * &acl * vb.transpose(),
                &vb * &qf * vb.transpose(),
                &vb * x0,
            )
        }
        _ => (acl, qf, x0.clone()),
    };
    match lyapunov_solve(&acl, &qf) {
        Ok(w) => Ok(x0.dot(&(&w * &x0))),
        Err(Error::NotHurwitz { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Realization `(A, B, C, D)` of a transfer matrix `C(sI − A)⁻¹B + D`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || c.ncols() != n {
            return dim_err("state-space matrices have inconsistent shapes");
        }
        let d = d.unwrap_or_else(|| DMatrix::zeros(c.nrows(), b.ncols()));
        if d.shape() != (c.nrows(), b.ncols()) {
            return dim_err("D has the wrong shape");
        }
        Ok(Self { a, b, c, d })
    }
}

/// `‖C(sI − A)⁻¹B‖_H2` via the controllability gramian.
pub fn h2_norm(ss: &StateSpace) -> Result<f64> {
    if ss.d.iter().any(|&x| x != 0.0) {
        return Err(Error::InvalidArgument(
            "H2 norm needs a strictly proper system".into(),
        ));
    }
    let gram = lyapunov_solve(&ss.a.transpose(), &(&ss.b * ss.b.transpose()))?;
    let tr = (&ss.c * gram * ss.c.transpose()).trace();
    Ok(tr.max(0.0).sqrt())
}

/// Frequency response evaluator using one Schur factorization.
struct Response {
    t: CMatrix,
    bt: CMatrix,
    ct: CMatrix,
    d: CMatrix,
}

impl Response {
    fn new(ss: &StateSpace, schur: &Schur) -> Self {
        Self {
            t: schur.t.clone(),
            bt: schur.u.adjoint() * complex(&ss.b),
            ct: complex(&ss.c) * &schur.u,
            d: complex(&ss.d),
        }
    }

    fn eval(&self, w: f64) -> CMatrix {
        let n = self.t.nrows();
        let s = Complex64::new(0.0, w);
        let mut y = self.bt.clone();
        for col in 0..y.ncols() {
            for i in (0..n).rev() {
                let mut acc = y[(i, col)];
                for k in i + 1..n {
                    acc += self.t[(i, k)] * y[(k, col)];
                }
                y[(i, col)] = acc / (s - self.t[(i, i)]);
            }
        }
        &self.ct * y + &self.d
    }

    fn sigma_max(&self, w: f64) -> f64 {
        sigma_max(&self.eval(w))
    }
}

fn sigma_max(g: &CMatrix) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    let gram = if g.nrows() >= g.ncols() {
        g.adjoint() * g
    } else {
        g * g.adjoint()
    };
    gram.symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
        .max(0.0)
        .sqrt()
}

/// `‖C(sI − A)⁻¹B + D‖_H∞` to relative tolerance `tol`.
///
/// A frequency sweep seeds a lower bound; imaginary-axis eigenvalues of the
/// Hamiltonian at a slightly larger level locate the frequency bands where
/// the gain exceeds it, and evaluating their midpoints raises the bound
/// until the level test passes.
pub fn hinf_norm(ss: &StateSpace, tol: f64) -> Result<f64> {
    let n = ss.a.nrows();
    let d_gain = sigma_max(&complex(&ss.d));
    if n == 0 || ss.b.ncols() == 0 || ss.c.nrows() == 0 {
        return Ok(d_gain);
    }
    let schur = Schur::new(&ss.a)?;
    schur.require_hurwitz()?;
    let resp = Response::new(ss, &schur);

    let mags: Vec<f64> = (0..n).map(|i| schur.t[(i, i)].norm()).collect();
    let lo = mags
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .max(1e-12)
        * 1e-3;
    let hi = mags.iter().copied().fold(0.0f64, f64::max).max(1e-12) * 1e3;
    let mut freqs: Vec<f64> = (0..400)
        .map(|k| lo * libm::pow(hi / lo, k as f64 / 399.0))
        .collect();
    freqs.push(0.0);
    freqs.extend((0..n).map(|i| schur.t[(i, i)].im.abs()));
    let mut lb = freqs
        .iter()
        .map(|&w| resp.sigma_max(w))
        .fold(d_gain, f64::max);
    if lb == 0.0 {
        return Ok(0.0);
    }

    let m = ss.b.ncols();
    let p = ss.c.nrows();
    for _ in 0..100 {
        let gamma = (1.0 + 2.0 * tol) * lb;
        let rmat = DMatrix::identity(m, m) * (gamma * gamma) - ss.d.transpose() * &ss.d;
        let rinv = r_inverse(&rmat)?;
        let at = &ss.a + &ss.b * &rinv * ss.d.transpose() * &ss.c;
        let top_right = &ss.b * &rinv * ss.b.transpose();
        let bottom_left = -(ss.c.transpose()
            * (DMatrix::identity(p, p) + &ss.d * &rinv * ss.d.transpose())
            * &ss.c);
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&at);
        h.view_mut((0, n), (n, n)).copy_from(&top_right);
        h.view_mut((n, 0), (n, n)).copy_from(&bottom_left);
        h.view_mut((n, n), (n, n)).copy_from(&(-at.transpose()));
        let scale = h.norm().max(1.0);
        let mut cands: Vec<f64> = linalg::eigenvalues(&h)?
            .iter()
            .filter(|z| z.re.abs() <= 1e-7 * scale && z.im >= 0.0)
            .map(|z| z.im)
            .collect();
        if cands.is_empty() {
            return Ok(lb);
        }
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut probes = cands.clone();
        probes.extend(cands.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        let best = probes.iter().map(|&w| resp.sigma_max(w)).fold(lb, f64::max);
        if best <= lb * (1.0 + tol) {
            return Ok(lb);
        }
        lb = best;
    }
    Ok(lb)
}

/// `(A, B, P)` in working coordinates plus the complement basis `V̄` when
/// deflated.
type Deflated = (
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
    Option<DMatrix<f64>>,
);

fn deflated(sys: &LtiSystem, p: &ProjectionMatrix) -> Result<Deflated> {
    if p.n() != sys.n() {
        return dim_err(format!(
            "projection has {} columns, plant has {} states",
            p.n(),
            sys.n()
        ));
    }
    match p.deflated_factors() {
        Some(f) => {
            let (vb, pc) = f?;
            Ok((&vb * sys.a() * vb.transpose(), &vb * sys.b(), pc, Some(vb)))
        }
        None => Ok((sys.a().clone(), sys.b().clone(), p.matrix().clone(), None)),
    }
}

/// `ε = ‖(I − PᵀP)(sI − A)⁻¹B‖_H∞ + ‖(I − PᵀP)(sI − A)⁻¹x0‖_H2`, in the
/// deflated coordinates when `P` was built by deflation.
pub fn epsilon_bound(sys: &LtiSystem, x0: &DVector<f64>, p: &ProjectionMatrix) -> Result<f64> {
    if x0.len() != sys.n() {
        return dim_err("x0 length");
    }
    let (a, b, pc, vb) = deflated(sys, p)?;
    let x0 = match &vb {
        Some(vb) => vb * x0,
        None => x0.clone(),
    };
    let k = a.nrows();
    let c = DMatrix::identity(k, k) - pc.transpose() * &pc;
    let hinf = hinf_norm(&StateSpace::new(a.clone(), b, c.clone(), None)?, 1e-6)?;
    let x0m = DMatrix::from_column_slice(k, 1, x0.as_slice());
    let h2 = h2_norm(&StateSpace::new(a, x0m, c, None)?)?;
    Ok(hinf + h2)
}

/// Outcome of the small-gain test for a reduced-order gain `F̂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallGainCertificate {
    /// Left side: the compression error `ε`.
    pub lhs: f64,
    /// Right side: `1 / ‖Σ̂_cl Ξ‖_H∞`.
    pub rhs: f64,
    pub margin: f64,
    pub certified: bool,
    /// Largest real part of `A − BF̂P` (deflated mode excluded).
    pub closed_loop_abscissa: f64,
}

impl SmallGainCertificate {
    pub fn closed_loop_stable(&self) -> bool {
        self.closed_loop_abscissa < 0.0
    }
}

/// Sufficient stability test for `u = −F̂Px`.
///
/// `Σ̂_cl(s) = −F̂(sI − Â_F)⁻¹PBF̂ − F̂` with `Â_F = PAPᵀ − PBF̂` is cascaded
/// with `Ξ(s) = (sI − PAPᵀ)⁻¹PA`; the gain is certified when
/// `ε < 1/‖Σ̂_cl Ξ‖_H∞`. The closed loop is also checked by eigensolve.
pub fn small_gain_certificate(
    sys: &LtiSystem,
    p: &ProjectionMatrix,
    f_hat: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<SmallGainCertificate> {
    let (a, b, pc, _) = deflated(sys, p)?;
    let (k, m) = (pc.nrows(), b.ncols());
    if f_hat.shape() != (m, k) {
        return dim_err(format!("reduced gain must be {m}x{k}"));
    }
    let a_hat = &pc * &a * pc.transpose();
    let max_real = linalg::spectral_abscissa(&a_hat)?;
    if !(max_real < 0.0) {
        return Err(Error::NotHurwitz { max_real });
    }
    let pb = &pc * &b;
    let a_f = &a_hat - &pb * f_hat;
    let closed_loop_abscissa = linalg::spectral_abscissa(&(&a - &b * f_hat * &pc))?;
    let lhs = epsilon_bound(sys, x0, p)?;

    let rhs = if f_hat.iter().all(|&x| x == 0.0) {
        f64::INFINITY
    } else if !(linalg::spectral_abscissa(&a_f)? < 0.0) {
        0.0
    } else {
        let mut ac = DMatrix::zeros(2 * k, 2 * k);
        ac.view_mut((0, 0), (k, k)).copy_from(&a_hat);
        ac.view_mut((k, 0), (k, k)).copy_from(&(&pb * f_hat));
        ac.view_mut((k, k), (k, k)).copy_from(&a_f);
        let pa = &pc * &a;
        let mut bc = DMatrix::zeros(2 * k, pa.ncols());
        bc.view_mut((0, 0), (k, pa.ncols())).copy_from(&pa);
        let mut cc = DMatrix::zeros(m, 2 * k);
        cc.view_mut((0, 0), (m, k)).copy_from(&(-f_hat));
        cc.view_mut((0, k), (m, k)).copy_from(&(-f_hat));
        let gain = hinf_norm(&StateSpace::new(ac, bc, cc, None)?, 1e-6)?;
        if gain > 0.0 {
            1.0 / gain
        } else {
            f64::INFINITY
        }
    };
    Ok(SmallGainCertificate {
        lhs,
        rhs,
        margin: rhs - lhs,
        certified: lhs < rhs,
        closed_loop_abscissa,
    })
}

/// Symmetric factor `S` with `SᵀS = M` for a symmetric PSD `M`.
fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = linalg::symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Performance-degradation constant `γ` in `J^½ ≤ Ĵ^½ + γε`.
///
/// `γ = ‖𝒢‖_H∞ (1 + 2‖F̂(sI − Â_F)⁻¹Px0‖_H2)`, where `𝒢` maps a
/// perturbation `d` of the unresolved state to `y = [Q^½x; R^½u]` through
/// the reduced closed loop, the error state `ê` and the plant copy `x̂`.
/// Returns `+∞` when that interconnection is not Hurwitz.
pub fn degradation_gamma(
    sys: &LtiSystem,
    weights: &LqrWeights,
    p: &ProjectionMatrix,
    f_hat: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<f64> {
    if x0.len() != sys.n() {
        return dim_err("x0 length");
    }
    let (a, b, pc, vb) = deflated(sys, p)?;
    let (k, m, r) = (pc.nrows(), b.ncols(), a.nrows());
    if f_hat.shape() != (m, k) {
        return dim_err(format!("reduced gain must be {m}x{k}"));
    }
    let (q, x0) = match &vb {
        Some(vb) => (vb * weights.q() * vb.transpose(), vb * x0),
        None => (weights.q().clone(), x0.clone()),
    };
    let qh = psd_factor(&q);
    let rh = psd_factor(weights.r());
    let a_hat = &pc * &a * pc.transpose();
    let pb = &pc * &b;
    let pa = &pc * &a;
    let a_f = &a_hat - &pb * f_hat;
    let bf = &b * f_hat;
    let resid = DMatrix::identity(r, r) - pc.transpose() * &pc;

    let s = 2 * k + r;
    let mut ag = DMatrix::zeros(s, s);
    ag.view_mut((0, 0), (k, k)).copy_from(&a_f);
    ag.view_mut((0, k), (k, k)).copy_from(&(-(&pb * f_hat)));
    ag.view_mut((k, k), (k, k)).copy_from(&a_hat);
    ag.view_mut((k, 2 * k), (k, r)).copy_from(&(&pa * &resid));
    ag.view_mut((2 * k, 0), (r, k)).copy_from(&(-&bf));
    ag.view_mut((2 * k, k), (r, k)).copy_from(&(-&bf));
    ag.view_mut((2 * k, 2 * k), (r, r)).copy_from(&a);
    if !(linalg::spectral_abscissa(&ag)? < 0.0) {
        return Ok(f64::INFINITY);
    }
    let mut bg = DMatrix::zeros(s, r);
    bg.view_mut((k, 0), (k, r)).copy_from(&pa);
    let mut cg = DMatrix::zeros(r + m, s);
    let qp = &qh * pc.transpose();
    cg.view_mut((0, 0), (r, k)).copy_from(&qp);
    cg.view_mut((0, k), (r, k)).copy_from(&qp);
    cg.view_mut((0, 2 * k), (r, r)).copy_from(&(&qh * &resid));
    let rf = -(&rh * f_hat);
    cg.view_mut((r, 0), (m, k)).copy_from(&rf);
    cg.view_mut((r, k), (m, k)).copy_from(&rf);
    let mut dg = DMatrix::zeros(r + m, r);
    dg.view_mut((0, 0), (r, r)).copy_from(&qh);
    let g = hinf_norm(&StateSpace::new(ag, bg, cg, Some(dg))?, 1e-6)?;

    let xi0 = DMatrix::from_column_slice(k, 1, (&pc * &x0).as_slice());
    let tail = h2_norm(&StateSpace::new(a_f, xi0, f_hat.clone(), None)?)?;
    Ok(g * (1.0 + 2.0 * tail))
}

/// Eigenvalues sorted by real part, largest first.
pub fn spectrum(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let mut ev = linalg::eigenvalues(a)?;
    ev.sort_by(|x, y| {
        y.re.partial_cmp(&x.re)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(
                y.im.partial_cmp(&x.im)
                    .unwrap_or(core::cmp::Ordering::Equal),
            )
    });
    Ok(ev)
}

/// Validation summary for one learned controller.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub j: f64,
    pub j_opt: f64,
    /// Ideal cost of the reduced closed loop from `Px0`.
    pub j_hat: f64,
    pub epsilon: f64,
    pub epsilon_hat: Option<f64>,
    pub small_gain_margin: f64,
    pub certified: bool,
    /// Conservative diagnostic from [`degradation_gamma`].
    pub gamma: f64,
    pub closed_loop_spectrum: Vec<Complex64>,
    pub open_loop_spectrum: Vec<Complex64>,
}

/// Reduced ideal cost `(Px0)ᵀ Ŵ (Px0)` of `F̂` on `(PAPᵀ, PB)` with `Q̂`.
pub fn reduced_cost(
    sys: &LtiSystem,
    p: &ProjectionMatrix,
    f_hat: &DMatrix<f64>,
    weights: &LqrWeights,
    x0: &DVector<f64>,
) -> Result<f64> {
    let pm = p.matrix();
    let a_f = pm * sys.a() * pm.transpose() - pm * sys.b() * f_hat;
    let reduced = weights.project(p)?;
    let qf = reduced.q() + f_hat.transpose() * reduced.r() * f_hat;
    let xi = pm * x0;
    match lyapunov_solve(&a_f, &qf) {
        Ok(w) => Ok(xi.dot(&(&w * &xi))),
        Err(Error::NotHurwitz { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Assembles a [`CostReport`] for the reduced gain `F̂` (lifted as `F̂P`).
///
/// `snapshots`, when given, is the data matrix used to fit `P` and yields
/// `ε̂`.
pub fn cost_report(
    sys: &LtiSystem,
    weights: &LqrWeights,
    p: &ProjectionMatrix,
    f_hat: &DMatrix<f64>,
    x0: &DVector<f64>,
    optimal: &RiccatiSolution,
    snapshots: Option<&DMatrix<f64>>,
) -> Result<CostReport> {
    let lifted = f_hat * p.matrix();
    let j = lqr_cost(sys, &lifted, weights, x0)?;
    let j_opt = x0.dot(&(&optimal.w * x0));
    let j_hat = reduced_cost(sys, p, f_hat, weights, x0)?;
    let cert = small_gain_certificate(sys, p, f_hat, x0)?;
    let epsilon_hat = snapshots
        .map(|x| crate::precondition::epsilon_hat_from_snapshots(x, p))
        .transpose()?;
    Ok(CostReport {
        j,
        j_opt,
        j_hat,
        epsilon: cert.lhs,
        epsilon_hat,
        small_gain_margin: cert.margin,
        certified: cert.certified,
        gamma: if cert.closed_loop_stable() {
            degradation_gamma(sys, weights, p, f_hat, x0)?
        } else {
            f64::INFINITY
        },
        closed_loop_spectrum: spectrum(&(sys.a() - sys.b() * &lifted))?,
        open_loop_spectrum: spectrum(sys.a())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stable(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = linalg::spectral_abscissa(&a).unwrap() + 0.5;
        a - DMatrix::identity(n, n) * shift
    }

    fn scalar_ss(a: f64) -> StateSpace {
        StateSpace::new(
            DMatrix::from_element(1, 1, -a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            None,
        )
        .unwrap()
    }

    #[test]
    fn lyapunov_scalar_and_zero() {
        let w = lyapunov_solve(
            &DMatrix::from_element(1, 1, -1.0),
            &DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        assert_relative_eq!(w[(0, 0)], 1.0, epsilon = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = stable(4, &mut rng);
        assert!(lyapunov_solve(&a, &DMatrix::zeros(4, 4)).unwrap().norm() == 0.0);
    }

    #[test]
    fn lyapunov_residual_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [2, 5, 17] {
            let a = stable(n, &mut rng);
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let m = &g * g.transpose();
            let w = lyapunov_solve(&a, &m).unwrap();
            let res = a.transpose() * &w + &w * &a + &m;
            assert!(res.norm() <= 1e-9 * m.norm(), "n = {n}");
        }
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, 0.0, -1.0]);
        assert!(matches!(
            lyapunov_solve(&a, &DMatrix::identity(2, 2)),
            Err(Error::NotHurwitz { .. })
        ));
    }

    #[test]
    fn scalar_riccati() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sol =
            kleinman_riccati(&(-&one), &one, &one, &one, &DMatrix::zeros(1, 1), 1e-12, 50).unwrap();
        assert_relative_eq!(sol.f[(0, 0)], 2f64.sqrt() - 1.0, epsilon = 1e-12);
        let zero = kleinman_riccati(
            &(-&one),
            &one,
            &DMatrix::zeros(1, 1),
            &one,
            &DMatrix::zeros(1, 1),
            1e-12,
            50,
        )
        .unwrap();
        assert_eq!(zero.f[(0, 0)], 0.0);
    }

    #[test]
    fn riccati_residual_and_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 5;
        let a = stable(n, &mut rng);
        let b = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let q = DMatrix::identity(n, n);
        let r = DMatrix::identity(2, 2);
        let sol = kleinman_riccati(&a, &b, &q, &r, &DMatrix::zeros(2, n), 1e-12, 50).unwrap();
        let w = &sol.w;
        let are = a.transpose() * w + w * &a - w * &b * b.transpose() * w + &q;
        assert!(are.norm() <= 1e-7 * q.norm());

        let sys = LtiSystem::new(a, b, None).unwrap();
        let weights = LqrWeights::new(q, r).unwrap();
        let x0 = DVector::from_fn(n, |i, _| 1.0 - 0.3 * i as f64);
        let j_opt = lqr_cost(&sys, &sol.f, &weights, &x0).unwrap();
        assert_relative_eq!(j_opt, x0.dot(&(w * &x0)), max_relative = 1e-10);
        for _ in 0..10 {
            let pert = DMatrix::from_fn(2, n, |_, _| rng.random_range(-0.1..0.1));
            let j = lqr_cost(&sys, &(&sol.f + pert), &weights, &x0).unwrap();
            assert!(j >= j_opt - 1e-8 * j_opt.max(1.0));
        }
    }

    #[test]
    fn scalar_cost() {
        let sys = LtiSystem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            None,
        )
        .unwrap();
        let w = LqrWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let j = lqr_cost(
            &sys,
            &DMatrix::zeros(1, 1),
            &w,
            &DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(j, 0.5, epsilon = 1e-14);
        let unstable = lqr_cost(
            &sys,
            &DMatrix::from_element(1, 1, -3.0),
            &w,
            &DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert_eq!(unstable, f64::INFINITY);
    }

    #[test]
    fn first_order_norms() {
        assert_relative_eq!(
            h2_norm(&scalar_ss(1.0)).unwrap(),
            0.5f64.sqrt(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            hinf_norm(&scalar_ss(2.0), 1e-8).unwrap(),
            0.5,
            max_relative = 1e-7
        );
        let zero_c = StateSpace::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            None,
        )
        .unwrap();
        assert_eq!(h2_norm(&zero_c).unwrap(), 0.0);
    }

    #[test]
    fn resonant_peak() {
        let (w0, zeta) = (3.0, 0.1);
        let ss = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w0 * w0, -2.0 * zeta * w0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[w0 * w0, 0.0]),
            None,
        )
        .unwrap();
        let peak = 1.0 / (2.0 * zeta * (1.0 - zeta * zeta).sqrt());
        assert_relative_eq!(hinf_norm(&ss, 1e-8).unwrap(), peak, max_relative = 1e-6);
    }

    #[test]
    fn static_gain() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let ss = StateSpace::new(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 2),
            DMatrix::zeros(2, 0),
            Some(d.clone()),
        )
        .unwrap();
        let expected = d.svd(false, false).singular_values.max();
        assert_relative_eq!(
            hinf_norm(&ss, 1e-8).unwrap(),
            expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn hinf_with_feedthrough() {
        // G(s) = 1/(s+1) + 1: peak at DC equals 2
        let ss = StateSpace::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            Some(DMatrix::from_element(1, 1, 1.0)),
        )
        .unwrap();
        assert_relative_eq!(hinf_norm(&ss, 1e-8).unwrap(), 2.0, max_relative = 1e-7);
    }

    #[test]
    fn epsilon_on_decoupled_plant() {
        let sys = LtiSystem::new(
            DMatrix::from_diagonal(&DVector::from_row_slice(&[-1.0, -2.0])),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            None,
        )
        .unwrap();
        let p = ProjectionMatrix::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), None, Vec::new())
            .unwrap();
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let eps = epsilon_bound(&sys, &x0, &p).unwrap();
        assert_relative_eq!(eps, 1.0 + 0.5f64.sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn zero_gain_is_always_certified() {
        let sys = LtiSystem::new(
            DMatrix::from_diagonal(&DVector::from_row_slice(&[-1.0, -2.0])),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            None,
        )
        .unwrap();
        let p = ProjectionMatrix::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), None, Vec::new())
            .unwrap();
        let cert = small_gain_certificate(
            &sys,
            &p,
            &DMatrix::zeros(1, 1),
            &DVector::from_row_slice(&[1.0, 1.0]),
        )
        .unwrap();
        assert!(cert.certified);
        assert_eq!(cert.rhs, f64::INFINITY);
        assert!(cert.closed_loop_stable());
    }

    #[test]
    fn spectrum_order() {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[-1.0, 0.0]));
        let s = spectrum(&a).unwrap();
        assert_eq!(s[0].re, 0.0);
        assert_eq!(s[1].re, -1.0);
    }
}
