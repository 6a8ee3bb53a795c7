//! Projection fitting and regressor assembly.
//!
//! A projection `P` (rows orthonormal) compresses the state to `ξ = Px`.
//! It is fitted either from the snapshot matrix `X` (dominant left-singular
//! vectors) or from empirical controllability gramians. In the semi-stable
//! case the known kernel direction `v` is first deflated away.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, svec_index, svec_len};
use crate::lti_sim::SnapshotRecord;
use crate::quadrature;
#[allow(unused_imports)]
use num_traits::Float;

/// Row-orthonormal compression `P` (`n̂ x n`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    p: DMatrix<f64>,
    deflation_vec: Option<DVector<f64>>,
    singular_values: Vec<f64>,
}

impl ProjectionMatrix {
    /// Checks `PPᵀ = I` (to 1e-10) and, when given, `Pv = 0`.
    pub fn new(
        p: DMatrix<f64>,
        deflation_vec: Option<DVector<f64>>,
        singular_values: Vec<f64>,
    ) -> Result<Self> {
        let (k, n) = p.shape();
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!(
                "projection of shape {k}x{n}"
            )));
        }
        let gram_err = (&p * p.transpose() - DMatrix::identity(k, k)).norm();
        if gram_err > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "projection rows are not orthonormal (error {gram_err:.2e})"
            )));
        }
        if let Some(v) = &deflation_vec {
            if v.len() != n {
                return dim_err("deflation vector length");
            }
            if (&p * v).norm() > 1e-10 * v.norm() {
                return Err(Error::InvalidArgument(
                    "projection does not annihilate v".into(),
                ));
            }
        }
        Ok(Self {
            p,
            deflation_vec,
            singular_values,
        })
    }

    /// Identity projection on `n` states.
    pub fn identity(n: usize) -> Self {
        Self {
            p: DMatrix::identity(n, n),
            deflation_vec: None,
            singular_values: Vec::new(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn n_hat(&self) -> usize {
        self.p.nrows()
    }

    pub fn n(&self) -> usize {
        self.p.ncols()
    }

    pub fn deflation_vec(&self) -> Option<&DVector<f64>> {
        self.deflation_vec.as_ref()
    }

    /// Singular values (or gramian eigenvalues) of the fitted data.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// `(V̄, P_c)` with `P = P_c V̄`, when built by deflation.
    pub fn deflated_factors(&self) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        self.deflation_vec.as_ref().map(|v| {
            let vbar = linalg::orthonormal_complement(v)?;
            let pc = &self.p * vbar.transpose();
            Ok((vbar, pc))
        })
    }
}

/// Symmetric positive semi-definite gramian estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gramian {
    pub phi: DMatrix<f64>,
    pub horizon: f64,
}

/// Horizontally stacks the coarse snapshots of several runs.
pub fn pooled_snapshots(records: &[&SnapshotRecord]) -> Result<DMatrix<f64>> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("no records".into()))?;
    let n = first.n();
    if records.iter().any(|r| r.n() != n) {
        return dim_err("records have different state dimensions");
    }
    let blocks: Vec<DMatrix<f64>> = records.iter().map(|r| r.coarse_states()).collect();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut x = DMatrix::zeros(n, cols);
    let mut c = 0;
    for b in &blocks {
        x.columns_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    Ok(x)
}

fn warn_rank(n_hat: usize, sv: &[f64]) {
    let rank = linalg::numerical_rank(sv, 1e-8);
    if n_hat > rank {
        log::warn!("n_hat = {n_hat} exceeds the numerical rank {rank} of the data");
    }
}

/// `P` from the top `n̂` left-singular vectors of a snapshot matrix.
pub fn fit_projection_from_snapshots(x: &DMatrix<f64>, n_hat: usize) -> Result<ProjectionMatrix> {
    let n = x.nrows();
    if n_hat == 0 || n_hat > n {
        return Err(Error::InvalidArgument(format!(
            "n_hat = {n_hat} outside 1..={n}"
        )));
    }
    if x.ncols() < n_hat {
        return Err(Error::InvalidArgument(format!(
            "{} snapshots cannot define {n_hat} directions",
            x.ncols()
        )));
    }
    let (u, sv) = linalg::left_singular_basis(x)?;
    warn_rank(n_hat, &sv);
    let p = u.columns(0, n_hat).transpose();
    Ok(ProjectionMatrix {
        p,
        deflation_vec: None,
        singular_values: sv,
    })
}

/// `P` whose rows are the transposed top-`n̂` left-singular vectors of the
/// coarse snapshot matrix of `record`.
pub fn fit_projection(record: &SnapshotRecord, n_hat: usize) -> Result<ProjectionMatrix> {
    fit_projection_from_snapshots(&record.coarse_states(), n_hat)
}

/// Mean-subtracted empirical controllability gramian
/// `Σ_i ∫ (x_i − x̄_i)(x_i − x̄_i)ᵀ dτ` over each record's full horizon.
pub fn empirical_gramian(responses: &[&SnapshotRecord]) -> Result<Gramian> {
    let first = responses
        .first()
        .ok_or_else(|| Error::InvalidArgument("no responses".into()))?;
    let grid = first.grid();
    if responses.iter().any(|r| r.grid() != grid) {
        return Err(Error::InvalidArgument(
            "responses do not share a time grid".into(),
        ));
    }
    let n = first.n();
    let times = grid.fine_times();
    let mut weights = alloc::vec![0.0; times.len()];
    let coarse = grid.coarse_indices();
    for w in coarse.windows(2) {
        for node in quadrature::interval_rule(times, w[0], w[1], &[]) {
            weights[node.index] += node.weight;
        }
    }
    let horizon = grid.horizon();
    let sqrt_w = DVector::from_iterator(times.len(), weights.iter().map(|w| w.max(0.0).sqrt()));
    let mut phi = DMatrix::zeros(n, n);
    for r in responses {
        // negative correction weights are rare; handle them exactly
        let mut scaled = r.states().clone();
        for (mut col, &s) in scaled.column_iter_mut().zip(sqrt_w.iter()) {
            col *= s;
        }
        phi += &scaled * scaled.transpose();
        for (k, &w) in weights.iter().enumerate() {
            if w < 0.0 {
                let x = r.states().column(k);
                phi += x * x.transpose() * w;
            }
        }
        let mean = r.states() * DVector::from_column_slice(&weights);
        phi -= &mean * mean.transpose() / horizon;
    }
    Ok(Gramian {
        phi: linalg::symmetrize(&phi),
        horizon,
    })
}

/// `P` from the top-`n̂` eigenvectors of `Φ_u (+ Φ_x)`.
pub fn projection_from_gramian(
    phi_u: &Gramian,
    phi_x: Option<&Gramian>,
    n_hat: usize,
) -> Result<ProjectionMatrix> {
    let n = phi_u.phi.nrows();
    let mut phi = phi_u.phi.clone();
    if let Some(px) = phi_x {
        if px.phi.shape() != phi.shape() {
            return dim_err("gramians differ in dimension");
        }
        phi += &px.phi;
    }
    if n_hat == 0 || n_hat > n {
        return Err(Error::InvalidArgument(format!(
            "n_hat = {n_hat} outside 1..={n}"
        )));
    }
    let eig = linalg::symmetrize(&phi).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut basis = DMatrix::from_fn(n, n_hat, |r, c| eig.eigenvectors[(r, order[c])]);
    linalg::normalize_column_signs(&mut basis);
    warn_rank(n_hat, &values);
    Ok(ProjectionMatrix {
        p: basis.transpose(),
        deflation_vec: None,
        singular_values: values,
    })
}

/// Semi-stable fit on a snapshot matrix: `P = P_c V̄` with `P_c` fitted to
/// the deflated snapshots `V̄X`.
pub fn deflate_from_snapshots(
    x: &DMatrix<f64>,
    v: &DVector<f64>,
    n_hat: usize,
) -> Result<ProjectionMatrix> {
    let n = x.nrows();
    if v.len() != n {
        return dim_err("deflation vector length");
    }
    if n_hat >= n {
        return Err(Error::InvalidArgument(format!(
            "n_hat = {n_hat} must be below n = {n}"
        )));
    }
    let vbar = linalg::orthonormal_complement(v)?;
    let pc = fit_projection_from_snapshots(&(&vbar * x), n_hat)?;
    let p = pc.p * vbar;
    Ok(ProjectionMatrix {
        p,
        deflation_vec: Some(v.clone()),
        singular_values: pc.singular_values,
    })
}

/// Semi-stable fit removing the known kernel direction `v` first.
pub fn deflate_semistable(
    record: &SnapshotRecord,
    v: &DVector<f64>,
    n_hat: usize,
) -> Result<ProjectionMatrix> {
    deflate_from_snapshots(&record.coarse_states(), v, n_hat)
}

/// Energy of the snapshots outside `im Pᵀ`, measured in the deflated
/// coordinates when `P` was built by deflation.
pub fn epsilon_hat_from_snapshots(x: &DMatrix<f64>, p: &ProjectionMatrix) -> Result<f64> {
    if x.nrows() != p.n() {
        return dim_err("snapshot rows differ from projection columns");
    }
    let (xs, ps) = match p.deflated_factors() {
        Some(f) => {
            let (vbar, pc) = f?;
            (&vbar * x, pc)
        }
        None => (x.clone(), p.p.clone()),
    };
    let resid = &xs - ps.transpose() * (&ps * &xs);
    Ok(resid.norm())
}

pub fn epsilon_hat(record: &SnapshotRecord, p: &ProjectionMatrix) -> Result<f64> {
    epsilon_hat_from_snapshots(&record.coarse_states(), p)
}

/// Stacked regressors for the least-squares policy update.
///
/// Symmetric Kronecker quantities are stored half-vectorized: column
/// `svec_index(i, j, d)` of `phi` and `sigma` holds the `(i, j)` entry of
/// `z zᵀ` (differenced or integrated). `rho` keeps the full Kronecker layout
/// `∫ z ⊗ u`, column `q·m + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub d: usize,
    pub m: usize,
    pub phi: DMatrix<f64>,
    pub rho: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub sample_times: Vec<f64>,
}

impl DataMatrices {
    /// Number of sample intervals `N`.
    pub fn rows(&self) -> usize {
        self.phi.nrows()
    }

    fn expand(&self, half: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.d;
        DMatrix::from_fn(half.nrows(), d * d, |r, c| {
            let (i, j) = (c / d, c % d);
            half[(r, svec_index(i.min(j), i.max(j), d))]
        })
    }

    /// `phi` in full `z ⊗ z` layout (`N x d²`).
    pub fn phi_kron(&self) -> DMatrix<f64> {
        self.expand(&self.phi)
    }

    /// `sigma` in full `∫ z ⊗ z` layout (`N x d²`).
    pub fn sigma_kron(&self) -> DMatrix<f64> {
        self.expand(&self.sigma)
    }

    /// Row `j` of `sigma` as the symmetric `d x d` matrix `∫ z zᵀ`.
    pub fn sigma_matrix(&self, j: usize) -> DMatrix<f64> {
        let row: Vec<f64> = self.sigma.row(j).iter().copied().collect();
        linalg::sym_from_svec(&row, self.d)
    }

    /// Row `j` of `rho` as the `d x m` matrix `∫ z uᵀ`.
    pub fn rho_matrix(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.m, |q, b| self.rho[(j, q * self.m + b)])
    }
}

/// Builds `φ`, `ρ`, `σ` from one record, compressing with `P` first when
/// given (`z = Px`), otherwise using `z = x`.
pub fn build_data_matrices(
    record: &SnapshotRecord,
    p: Option<&ProjectionMatrix>,
) -> Result<DataMatrices> {
    let z = match p {
        Some(p) => {
            if p.n() != record.n() {
                return dim_err(format!(
                    "projection has {} columns, record has {} states",
                    p.n(),
                    record.n()
                ));
            }
            p.matrix() * record.states()
        }
        None => record.states().clone(),
    };
    let d = z.nrows();
    let m = record.m();
    let grid = record.grid();
    let times = grid.fine_times();
    let coarse = grid.coarse_indices();
    let rows = grid.intervals();
    let s = svec_len(d);
    let jumps: Vec<usize> = record.input_jumps().iter().map(|(i, _)| *i).collect();

    let mut phi = DMatrix::zeros(rows, s);
    let mut rho = DMatrix::zeros(rows, d * m);
    let mut sigma = DMatrix::zeros(rows, s);
    let mut acc_s = alloc::vec![0.0; s];
    let mut acc_r = alloc::vec![0.0; d * m];

    for j in 0..rows {
        let (a, b) = (coarse[j], coarse[j + 1]);
        if b <= a {
            return Err(Error::InvalidArgument(
                "coarse interval without fine points".into(),
            ));
        }
        let (za, zb) = (z.column(a), z.column(b));
        let mut k = 0;
        for i in 0..d {
            for l in i..d {
                phi[(j, k)] = zb[i] * zb[l] - za[i] * za[l];
                k += 1;
            }
        }
        acc_s.iter_mut().for_each(|v| *v = 0.0);
        acc_r.iter_mut().for_each(|v| *v = 0.0);
        for node in quadrature::interval_rule(times, a, b, &jumps) {
            let zc = z.column(node.index);
            let w = node.weight;
            let mut k = 0;
            for i in 0..d {
                let wi = w * zc[i];
                for l in i..d {
                    acc_s[k] += wi * zc[l];
                    k += 1;
                }
            }
            let u = record.input_at(node.index, node.left);
            if u.iter().any(|&x| x != 0.0) {
                for q in 0..d {
                    let wq = w * zc[q];
                    for bb in 0..m {
                        acc_r[q * m + bb] += wq * u[bb];
                    }
                }
            }
        }
        for (k, v) in acc_s.iter().enumerate() {
            sigma[(j, k)] = *v;
        }
        for (k, v) in acc_r.iter().enumerate() {
            rho[(j, k)] = *v;
        }
    }
    Ok(DataMatrices {
        d,
        m,
        phi,
        rho,
        sigma,
        sample_times: grid.coarse_times(),
    })
}
