//! Off-policy policy iteration from trajectory data.
//!
//! For a candidate gain `F_k`, the data of one exploratory run satisfy
//!
//! ```text
//! φ_j · svec(W_k) − 2 ∫ (u + F_k z)ᵀ R F_{k+1} z dt = −∫ zᵀ (Q + F_kᵀ R F_k) z dt
//! ```
//!
//! on every sample interval `j`. Stacking the intervals gives a linear
//! least-squares problem in `(W_k, F_{k+1})`, one Kleinman step without the
//! model.

use alloc::format;
use alloc::vec::Vec;

use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, svec_index, svec_len};
use crate::lti_sim::SnapshotRecord;
use crate::precondition::{build_data_matrices, DataMatrices, ProjectionMatrix};
use crate::Clock;
#[allow(unused_imports)]
use num_traits::Float;

/// Quadratic cost weights `∫ xᵀQx + uᵀRu dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LqrWeights {
    /// Checks symmetry, `Q ⪰ 0` and `R ≻ 0`.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() || !r.is_square() {
            return dim_err("weights must be square");
        }
        if linalg::asymmetry(&q) > 1e-12 || linalg::asymmetry(&r) > 1e-12 {
            return Err(Error::InvalidArgument("weights must be symmetric".into()));
        }
        let qmin = q.clone().symmetric_eigenvalues().min();
        if q.nrows() > 0 && qmin < -1e-10 * q.norm().max(1e-300) {
            return Err(Error::InvalidArgument(
                "Q is not positive semi-definite".into(),
            ));
        }
        if r.nrows() == 0 || r.clone().symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::InvalidArgument("R is not positive definite".into()));
        }
        Ok(Self { q, r })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Reduced weights with `Q̂ = P Q Pᵀ`.
    pub fn project(&self, p: &ProjectionMatrix) -> Result<Self> {
        if p.n() != self.q.nrows() {
            return dim_err("projection does not match Q");
        }
        let q = linalg::symmetrize(&(p.matrix() * &self.q * p.matrix().transpose()));
        Ok(Self {
            q,
            r: self.r.clone(),
        })
    }

    /// Verifies `Qv = 0`, needed when the plant has a semi-stable mode `v`.
    pub fn check_kernel(&self, v: &DVector<f64>) -> Result<()> {
        if (&self.q * v).norm() > 1e-10 * self.q.norm().max(1.0) * v.norm() {
            return Err(Error::InvalidArgument(
                "Q v is not zero for the semi-stable vector".into(),
            ));
        }
        Ok(())
    }
}

/// When to reject a least-squares solution for a large residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualCheck {
    /// `1e-6·‖z‖` for uncompressed data, no check for compressed data.
    Auto,
    Off,
    Relative(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySettings {
    /// Stop once `‖F_{k+1} − F_k‖_F ≤ kappa`.
    pub kappa: f64,
    pub max_iter: usize,
    /// Abort when `‖F_k‖_F` exceeds this bound.
    pub divergence_bound: f64,
    /// Proceed with the minimum-norm solution when the rank condition fails.
    pub force_minnorm: bool,
    pub residual_check: ResidualCheck,
    /// Relative pivot threshold of the least-squares solver.
    pub lstsq_rtol: f64,
}

impl Default for PolicySettings {
    fn default() -> Self {
        Self {
            kappa: 0.01,
            max_iter: 50,
            divergence_bound: 1e6,
            force_minnorm: false,
            residual_check: ResidualCheck::Auto,
            lstsq_rtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankReport {
    pub rank: usize,
    pub required: usize,
    pub satisfied: bool,
}

/// Numerical rank of `[ρ σ]` (tolerance `1e-8·σ_max`) against the
/// `d(d+1)/2 + m·d` unknowns of one policy step.
pub fn rank_check(data: &DataMatrices) -> Result<RankReport> {
    let (d, m) = (data.d, data.m);
    let required = svec_len(d) + m * d;
    let rows = data.rows();
    let cols = data.rho.ncols() + data.sigma.ncols();
    let stacked = Mat::<f64>::from_fn(rows, cols, |i, j| {
        if j < data.rho.ncols() {
            data.rho[(i, j)]
        } else {
            data.sigma[(i, j - data.rho.ncols())]
        }
    });
    let sv = linalg::singular_values_faer(stacked.as_ref())?;
    let rank = linalg::numerical_rank(&sv, 1e-8);
    Ok(RankReport {
        rank,
        required,
        satisfied: rows >= required && rank >= required,
    })
}

/// Output of one least-squares policy step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub w: DMatrix<f64>,
    pub f_next: DMatrix<f64>,
    /// `‖Θx − z‖ / ‖z‖`.
    pub relative_residual: f64,
    pub solver_rank: usize,
}

fn solve_step(
    data: &DataMatrices,
    f_k: &DMatrix<f64>,
    weights: &LqrWeights,
    rtol: f64,
) -> Result<StepResult> {
    let (d, m) = (data.d, data.m);
    if f_k.shape() != (m, d) {
        return dim_err(format!(
            "gain is {}x{}, expected {m}x{d}",
            f_k.nrows(),
            f_k.ncols()
        ));
    }
    if weights.q.shape() != (d, d) || weights.r.shape() != (m, m) {
        return dim_err("weights do not match the data dimension");
    }
    let r = &weights.r;
    let s = svec_len(d);
    let rows = data.rows();
    let cols = s + d * m;

    let qk = linalg::symmetrize(&(&weights.q + f_k.transpose() * r * f_k));
    let mut qw = DVector::zeros(s);
    for i in 0..d {
        for j in i..d {
            qw[svec_index(i, j, d)] = if i == j { qk[(i, i)] } else { 2.0 * qk[(i, j)] };
        }
    }
    let z = -(&data.sigma * &qw);

    let mut theta = Mat::<f64>::zeros(rows, cols);
    for i in 0..d {
        for j in i..d {
            let k = svec_index(i, j, d);
            let scale = if i == j { 1.0 } else { 2.0 };
            for row in 0..rows {
                theta[(row, k)] = scale * data.phi[(row, k)];
            }
        }
    }
    let fkt = f_k.transpose();
    for row in 0..rows {
        // G_j R with G_j = ∫ z uᵀ + (∫ z zᵀ) F_kᵀ
        let g = (data.rho_matrix(row) + data.sigma_matrix(row) * &fkt) * r;
        for q in 0..d {
            for p in 0..m {
                theta[(row, s + q * m + p)] = -2.0 * g[(q, p)];
            }
        }
    }

    let sol = linalg::min_norm_lstsq(theta.as_ref(), z.as_slice(), rtol)?;
    let x = faer::Mat::<f64>::from_fn(cols, 1, |i, _| sol.x[i]);
    let fitted = &theta * &x;
    let resid: f64 = (0..rows)
        .map(|i| (fitted[(i, 0)] - z[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    let znorm = z.norm();
    let relative_residual = if znorm > 0.0 { resid / znorm } else { resid };

    let w = linalg::sym_from_svec(&sol.x[..s], d);
    let f_next = DMatrix::from_fn(m, d, |p, q| sol.x[s + q * m + p]);
    Ok(StepResult {
        w,
        f_next,
        relative_residual,
        solver_rank: sol.rank,
    })
}

/// One data-driven Kleinman step: solves for `W_k` and `F_{k+1}`.
///
/// Fails when the rank condition is violated or the relative residual
/// exceeds `1e-6`.
pub fn policy_improvement_step(
    data: &DataMatrices,
    f_k: &DMatrix<f64>,
    weights: &LqrWeights,
) -> Result<StepResult> {
    let rank = rank_check(data)?;
    if !rank.satisfied {
        return Err(Error::RankDeficient {
            rank: rank.rank,
            required: rank.required,
        });
    }
    let step = solve_step(data, f_k, weights, PolicySettings::default().lstsq_rtol)?;
    if step.relative_residual > 1e-6 {
        return Err(Error::InconsistentData {
            relative: step.relative_residual,
            tolerance: 1e-6,
        });
    }
    Ok(step)
}

/// Iterates of a policy-iteration run.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyResult {
    /// `F_0, …, F_K` in the learning coordinates (`m x d`).
    pub gains: Vec<DMatrix<f64>>,
    /// `W_0, …, W_{K−1}`.
    pub values: Vec<DMatrix<f64>>,
    /// `‖F_{k+1} − F_k‖_F` per iteration.
    pub residuals: Vec<f64>,
    /// Relative least-squares residual per iteration.
    pub lstsq_residuals: Vec<f64>,
    pub iter_count: usize,
    pub timings_ms: Vec<f64>,
    /// Time spent building the (compressed) regressors.
    pub preconditioning_ms: f64,
    pub converged: bool,
    /// Final gain in the original `n` coordinates (`F̂_K P`).
    pub lifted_gain: DMatrix<f64>,
    pub rank: RankReport,
    pub d: usize,
}

impl PolicyResult {
    pub fn final_gain(&self) -> &DMatrix<f64> {
        self.gains.last().expect("at least F_0 is stored")
    }

    /// Total learning time: preconditioning plus every iteration.
    pub fn learn_time_ms(&self) -> f64 {
        self.preconditioning_ms + self.timings_ms.iter().sum::<f64>()
    }
}

fn iterate(
    data: &DataMatrices,
    weights: &LqrWeights,
    settings: &PolicySettings,
    residual_tol: Option<f64>,
    clock: &dyn Clock,
) -> Result<PolicyResult> {
    let (d, m) = (data.d, data.m);
    if !(settings.kappa > 0.0) || settings.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "kappa must be positive and max_iter nonzero".into(),
        ));
    }
    let rank = rank_check(data)?;
    if !rank.satisfied {
        if settings.force_minnorm {
            log::warn!(
                "rank {} below the required {}; continuing with minimum-norm solutions",
                rank.rank,
                rank.required
            );
        } else {
            return Err(Error::RankDeficient {
                rank: rank.rank,
                required: rank.required,
            });
        }
    }

    let mut gains = alloc::vec![DMatrix::zeros(m, d)];
    let mut values = Vec::new();
    let mut residuals = Vec::new();
    let mut lstsq_residuals = Vec::new();
    let mut timings_ms = Vec::new();
    let mut converged = false;
    for k in 0..settings.max_iter {
        let t0 = clock.now_ms();
        let step = solve_step(data, &gains[k], weights, settings.lstsq_rtol)?;
        timings_ms.push(clock.now_ms() - t0);
        if let Some(tol) = residual_tol {
            if step.relative_residual > tol {
                return Err(Error::InconsistentData {
                    relative: step.relative_residual,
                    tolerance: tol,
                });
            }
        }
        let norm = step.f_next.norm();
        if !norm.is_finite() || norm > settings.divergence_bound {
            return Err(Error::Diverged {
                iteration: k + 1,
                norm,
            });
        }
        let delta = (&step.f_next - &gains[k]).norm();
        log::debug!("iteration {}: |dF| = {delta:.3e}", k + 1);
        residuals.push(delta);
        lstsq_residuals.push(step.relative_residual);
        values.push(step.w);
        gains.push(step.f_next);
        if delta <= settings.kappa {
            converged = true;
            break;
        }
    }
    let iter_count = residuals.len();
    let lifted_gain = gains[iter_count].clone();
    Ok(PolicyResult {
        gains,
        values,
        residuals,
        lstsq_residuals,
        iter_count,
        timings_ms,
        preconditioning_ms: 0.0,
        converged,
        lifted_gain,
        rank,
        d,
    })
}

/// Data-driven policy iteration from `F_0 = 0` on uncompressed data.
///
/// Returns `converged = false` if `max_iter` is reached first.
pub fn run_off_policy(
    data: &DataMatrices,
    weights: &LqrWeights,
    settings: &PolicySettings,
    clock: &dyn Clock,
) -> Result<PolicyResult> {
    let tol = match settings.residual_check {
        ResidualCheck::Auto => Some(1e-6),
        ResidualCheck::Off => None,
        ResidualCheck::Relative(t) => Some(t),
    };
    iterate(data, weights, settings, tol, clock)
}

/// Policy iteration on data compressed by `P`, with the final gain lifted
/// back as `F̂ P`.
///
/// `weights` are the full-order weights; `Q̂ = PQPᵀ` is formed here. When
/// `P` carries a deflation vector, `Qv = 0` is checked first.
pub fn run_preconditioned(
    record: &SnapshotRecord,
    p: &ProjectionMatrix,
    weights: &LqrWeights,
    settings: &PolicySettings,
    clock: &dyn Clock,
) -> Result<PolicyResult> {
    if let Some(v) = p.deflation_vec() {
        weights.check_kernel(v)?;
    }
    let reduced = weights.project(p)?;
    let t0 = clock.now_ms();
    let data = build_data_matrices(record, Some(p))?;
    let build_ms = clock.now_ms() - t0;
    let tol = match settings.residual_check {
        ResidualCheck::Auto | ResidualCheck::Off => None,
        ResidualCheck::Relative(t) => Some(t),
    };
    let mut result = iterate(&data, &reduced, settings, tol, clock)?;
    result.preconditioning_ms = build_ms;
    result.lifted_gain = result.final_gain() * p.matrix();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::NullClock;

    /// Exact regressors for a scalar plant under zero input from x0 = 1 over
    /// unit intervals, plus a constant-input interval for excitation.
    fn scalar_data(a: f64, b: f64) -> DataMatrices {
        // interval 1: free decay, x = e^{a t}
        let e = libm::exp(a);
        let phi1 = e * e - 1.0;
        let sig1 = (e * e - 1.0) / (2.0 * a);
        // interval 2: x(0) = 1, u ≡ 1: x = (1 + b/a) e^{a t} − b/a
        let c = 1.0 + b / a;
        let k = -b / a;
        let x1 = c * e + k;
        let phi2 = x1 * x1 - 1.0;
        let sig2 = c * c * (e * e - 1.0) / (2.0 * a) + 2.0 * c * k * (e - 1.0) / a + k * k;
        let rho2 = c * (e - 1.0) / a + k;
        DataMatrices {
            d: 1,
            m: 1,
            phi: DMatrix::from_row_slice(2, 1, &[phi1, phi2]),
            rho: DMatrix::from_row_slice(2, 1, &[0.0, rho2]),
            sigma: DMatrix::from_row_slice(2, 1, &[sig1, sig2]),
            sample_times: alloc::vec![0.0, 1.0, 2.0],
        }
    }

    fn unit_weights() -> LqrWeights {
        LqrWeights::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn rank_requirements() {
        let data = scalar_data(-1.0, 1.0);
        let rc = rank_check(&data).unwrap();
        assert_eq!(rc.required, 2);
        assert!(rc.satisfied);
        let one_row = DataMatrices {
            phi: data.phi.rows(0, 1).into_owned(),
            rho: data.rho.rows(0, 1).into_owned(),
            sigma: data.sigma.rows(0, 1).into_owned(),
            ..data
        };
        assert!(!rank_check(&one_row).unwrap().satisfied);
        assert_eq!(svec_len(11) + 2 * 11, 88);
    }

    #[test]
    fn scalar_first_step() {
        let data = scalar_data(-1.0, 1.0);
        let step = policy_improvement_step(&data, &DMatrix::zeros(1, 1), &unit_weights()).unwrap();
        assert!((step.w[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((step.f_next[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scalar_converges_to_riccati_gain() {
        let data = scalar_data(-1.0, 1.0);
        let settings = PolicySettings {
            kappa: 1e-8,
            ..PolicySettings::default()
        };
        let res = run_off_policy(&data, &unit_weights(), &settings, &NullClock).unwrap();
        assert!(res.converged);
        assert!(res.iter_count <= 8);
        assert!((res.lifted_gain[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-10);
        assert_eq!(res.residuals.len(), res.iter_count);
        assert_eq!(res.gains.len(), res.iter_count + 1);
    }

    #[test]
    fn zero_state_weight_gives_zero_gain() {
        let data = scalar_data(-2.0, 0.5);
        let w = LqrWeights::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let res = run_off_policy(&data, &w, &PolicySettings::default(), &NullClock).unwrap();
        assert!(res.converged);
        assert!(res.lifted_gain.norm() < 1e-12);
    }

    #[test]
    fn rank_failure_is_reported_unless_forced() {
        let data = scalar_data(-1.0, 1.0);
        let short = DataMatrices {
            phi: data.phi.rows(0, 1).into_owned(),
            rho: data.rho.rows(0, 1).into_owned(),
            sigma: data.sigma.rows(0, 1).into_owned(),
            ..data
        };
        let err = run_off_policy(
            &short,
            &unit_weights(),
            &PolicySettings::default(),
            &NullClock,
        );
        assert!(matches!(err, Err(Error::RankDeficient { required: 2, .. })));
        let forced = PolicySettings {
            force_minnorm: true,
            ..PolicySettings::default()
        };
        assert!(run_off_policy(&short, &unit_weights(), &forced, &NullClock).is_ok());
    }

    #[test]
    fn weight_validation() {
        assert!(LqrWeights::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0)
        )
        .is_err());
        assert!(LqrWeights::new(DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1)).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(LqrWeights::new(asym, DMatrix::identity(1, 1)).is_err());
    }
}
