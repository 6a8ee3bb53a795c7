//! Dense linear-algebra helpers shared by the other modules.
//!
//! Public matrices are `nalgebra` types. The large least-squares problems of
//! the policy step and the big decompositions go through `faer`, which has
//! blocked (cache-friendly) kernels.

use alloc::vec;
use alloc::vec::Vec;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::householder;
use faer::{Conj, Mat, MatRef, Par};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Number of free entries of a symmetric `d x d` matrix.
pub const fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of entry `(i, j)`, `i <= j`, in the row-major upper-triangular
/// half-vectorization.
#[inline]
pub const fn svec_index(i: usize, j: usize, d: usize) -> usize {
    i * (2 * d + 1 - i) / 2 + (j - i)
}

/// Half-vectorize a symmetric matrix (upper triangle, row-major).
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(svec_len(d));
    for i in 0..d {
        for j in i..d {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn sym_from_svec(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Column-major vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Relative asymmetry `‖M − Mᵀ‖ / max(1, ‖M‖)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm() / m.norm().max(1.0)
}

pub(crate) fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Flip each column so that its first entry of non-negligible magnitude is
/// positive.
pub fn normalize_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let scale = col.amax();
        if scale == 0.0 {
            continue;
        }
        let lead = col.iter().copied().find(|x| x.abs() > 1e-12 * scale);
        if matches!(lead, Some(x) if x < 0.0) {
            col.neg_mut();
        }
    }
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(
            "eigenvalues of a non-square matrix".into(),
        ));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let ev = to_faer(a)
        .eigenvalues()
        .map_err(|_| Error::Numerical("eigenvalue iteration did not converge".into()))?;
    Ok(ev.into_iter().map(|z| Complex64::new(z.re, z.im)).collect())
}

/// Largest real part over the spectrum (−∞ for an empty matrix).
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> Result<bool> {
    Ok(spectral_abscissa(a)? < 0.0)
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    singular_values_faer(to_faer(a).as_ref())
}

pub(crate) fn singular_values_faer(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(Vec::new());
    }
    // Strongly rectangular inputs are first reduced to their square triangular
    // factor; the orthogonal factor does not change the singular values.
    let square = if m > 2 * n {
        Some(a.qr().thin_R().to_owned())
    } else if n > 2 * m {
        Some(a.transpose().qr().thin_R().to_owned())
    } else {
        None
    };
    let target = square.as_ref().map(|r| r.as_ref()).unwrap_or(a);
    let mut sv = target
        .singular_values()
        .map_err(|_| Error::Numerical("SVD did not converge".into()))?;
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap_or(core::cmp::Ordering::Equal));
    Ok(sv)
}

/// Numerical rank: count of singular values above `rtol · σ_max`.
pub fn numerical_rank(sv: &[f64], rtol: f64) -> usize {
    match sv.first() {
        Some(&smax) if smax > 0.0 => sv.iter().filter(|&&s| s > rtol * smax).count(),
        _ => 0,
    }
}

/// Thin SVD of `x` returning `(U, σ)` with singular values sorted in
/// descending order and the sign convention of [`normalize_column_signs`].
pub fn left_singular_basis(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (n, cols) = x.shape();
    if n == 0 || cols == 0 {
        return Err(Error::Dimension("empty snapshot matrix".into()));
    }
    let fx = to_faer(x);
    let svd = fx
        .thin_svd()
        .map_err(|_| Error::Numerical("SVD did not converge".into()))?;
    let k = n.min(cols);
    let s = svd.S().column_vector();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        s[b].partial_cmp(&s[a])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let u_raw = svd.U();
    let mut u = DMatrix::zeros(n, k);
    let mut sigma = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        sigma.push(s[src]);
        for i in 0..n {
            u[(i, dst)] = u_raw[(i, src)];
        }
    }
    normalize_column_signs(&mut u);
    Ok((u, sigma))
}

/// Rows form an orthonormal basis of the orthogonal complement of `v`:
/// an `(n−1) x n` matrix `V̄` with `V̄ v = 0` and `V̄ V̄ᵀ = I`.
///
/// Built from the Householder QR of `[v | I]`; the first column of `Q` is
/// parallel to `v`, the remaining ones span its complement.
pub fn orthonormal_complement(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = v.len();
    let norm = v.norm();
    if n == 0 || !(norm > 0.0) {
        return Err(Error::InvalidArgument("complement of a zero vector".into()));
    }
    let mut aug = DMatrix::zeros(n, n + 1);
    aug.set_column(0, &(v / norm));
    for i in 0..n {
        aug[(i, i + 1)] = 1.0;
    }
    let q = aug.qr().q();
    let mut basis = q.columns(1, n - 1).into_owned();
    normalize_column_signs(&mut basis);
    Ok(basis.transpose())
}

/// Orthonormal basis of the column space of `a` (numerical rank with the
/// given relative tolerance), via SVD.
pub fn range_basis(a: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    let (u, s) = left_singular_basis(a)?;
    let r = numerical_rank(&s, rtol);
    Ok(u.columns(0, r).into_owned())
}

/// Principal angles (radians, ascending) between the column spaces of two
/// matrices with orthonormal columns.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(
            "principal angles: row counts differ".into(),
        ));
    }
    let m = a.transpose() * b;
    let mut sv = singular_values(&m)?;
    sv.truncate(a.ncols().min(b.ncols()));
    Ok(sv.iter().map(|&c| libm::acos(c.clamp(-1.0, 1.0))).collect())
}

/// Result of [`min_norm_lstsq`].
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    /// Numerical rank detected during the factorization.
    pub rank: usize,
}

/// Minimum-norm least-squares solution of `a x ≈ b`.
///
/// Tall (or square) systems use a column-pivoted QR followed by a complete
/// orthogonal decomposition of the retained rows of `R`. Wide systems are
/// first reduced through an unpivoted QR of `aᵀ` (`a = Rᵀ Qᵀ`), which maps the
/// problem onto the square factor without changing solution norms.
pub fn min_norm_lstsq(a: MatRef<'_, f64>, b: &[f64], rtol: f64) -> Result<LstsqSolution> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::Dimension("least squares: rhs length".into()));
    }
    if n == 0 {
        return Ok(LstsqSolution {
            x: Vec::new(),
            rank: 0,
        });
    }
    if m >= n {
        return solve_tall(a, b, rtol);
    }
    let qr = a.transpose().qr();
    let rt = qr.thin_R().transpose().to_owned();
    let inner = solve_tall(rt.as_ref(), b, rtol)?;
    let mut x = Mat::<f64>::zeros(n, 1);
    for (i, yi) in inner.x.iter().enumerate() {
        x[(i, 0)] = *yi;
    }
    apply_q(qr.Q_basis(), qr.Q_coeff(), x.as_mut(), false);
    Ok(LstsqSolution {
        x: (0..n).map(|i| x[(i, 0)]).collect(),
        rank: inner.rank,
    })
}

fn apply_q(
    basis: MatRef<'_, f64>,
    coeff: MatRef<'_, f64>,
    rhs: faer::MatMut<'_, f64>,
    transpose: bool,
) {
    let nrows = basis.nrows();
    let block = coeff.nrows();
    let ncols = rhs.ncols();
    if transpose {
        let req =
            householder::apply_block_householder_sequence_transpose_on_the_left_in_place_scratch::<
                f64,
            >(nrows, block, ncols);
        let mut buf = MemBuffer::new(req);
        householder::apply_block_householder_sequence_transpose_on_the_left_in_place_with_conj(
            basis,
            coeff,
            Conj::No,
            rhs,
            Par::Seq,
            MemStack::new(&mut buf),
        );
    } else {
        let req = householder::apply_block_householder_sequence_on_the_left_in_place_scratch::<f64>(
            nrows, block, ncols,
        );
        let mut buf = MemBuffer::new(req);
        householder::apply_block_householder_sequence_on_the_left_in_place_with_conj(
            basis,
            coeff,
            Conj::No,
            rhs,
            Par::Seq,
            MemStack::new(&mut buf),
        );
    }
}

fn solve_tall(a: MatRef<'_, f64>, b: &[f64], rtol: f64) -> Result<LstsqSolution> {
    let (m, n) = a.shape();
    if a.col_iter().any(|c| c.iter().any(|v| !v.is_finite())) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite least-squares data".into()));
    }
    let qr = a.col_piv_qr();
    let r = qr.thin_R();
    let r00 = r[(0, 0)].abs();
    let rank = if r00 == 0.0 {
        0
    } else {
        (0..n).take_while(|&i| r[(i, i)].abs() > rtol * r00).count()
    };
    let (perm, _) = qr.P().arrays();
    let mut c = Mat::<f64>::from_fn(m, 1, |i, _| b[i]);
    apply_q(qr.Q_basis(), qr.Q_coeff(), c.as_mut(), true);

    let mut y = vec![0.0; n];
    if rank == n {
        back_substitute(r, &mut y, |i| c[(i, 0)]);
    } else if rank > 0 {
        // Complete orthogonal decomposition: [R11 R12]ᵀ = Z S, so the retained
        // rows read Sᵀ Zᵀ y = c and the minimum-norm y lies in range(Z).
        let t = r.get(..rank, ..).transpose().to_owned();
        let tq = t.qr();
        let s = tq.thin_R();
        let mut w = Mat::<f64>::zeros(n, 1);
        for i in 0..rank {
            let mut acc = c[(i, 0)];
            for k in 0..i {
                acc -= s[(k, i)] * w[(k, 0)];
            }
            w[(i, 0)] = acc / s[(i, i)];
        }
        apply_q(tq.Q_basis(), tq.Q_coeff(), w.as_mut(), false);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = w[(i, 0)];
        }
    }
    let mut x = vec![0.0; n];
    for (j, &p) in perm.iter().enumerate() {
        x[p] = y[j];
    }
    Ok(LstsqSolution { x, rank })
}

fn back_substitute(r: MatRef<'_, f64>, y: &mut [f64], rhs: impl Fn(usize) -> f64) {
    let n = y.len();
    for i in (0..n).rev() {
        let mut acc = rhs(i);
        for k in i + 1..n {
            acc -= r[(i, k)] * y[k];
        }
        y[i] = acc / r[(i, i)];
    }
}
