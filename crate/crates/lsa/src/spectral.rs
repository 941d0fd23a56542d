//! Eigen-analysis of the drift matrix.
//!
//! Everything downstream (step-size thresholds, mixing rates, covariance
//! solves) consumes the output of [`analyze`]: the spectrum of the drift
//! matrix, a regime classification, and a similarity `A = U D U^{-1}` chosen
//! so that in the Hurwitz regime the Hermitian part `D + D^H` is bounded
//! below by the spectral gap.
//!
//! For a diagonalizable matrix `U` is the (phase-fixed, unit-column)
//! eigenvector matrix and `D` is diagonal, so `D + D^H >= 2 min_i Re(l_i)`.
//! For a defective matrix each Jordan block `l I + J` is rescaled by
//! `Q = diag(1, Re(l/2), Re(l/2)^2, ...)`, turning the block into
//! `l I + Re(l/2) J` whose Hermitian part is `Re(l)/2` times the symmetric
//! tridiagonal Toeplitz matrix with diagonal 4 and off-diagonal 1; its
//! eigenvalues `4 + 2 cos(j pi / (k+1)) >= 2` give `D + D^H >= min Re(l_i)`.
//!
//! The decomposition itself runs through a real Schur form (backward stable
//! for non-symmetric matrices), complex triangularization of the 2x2 blocks,
//! and back-substitution for eigenvectors.

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, C64};
use nalgebra::DMatrix;

/// Default numerical tolerance for rank and diagonalizability decisions.
pub const DEFAULT_TOL: f64 = 1e-8;

/// A matrix counts as having a zero-real-part eigenvalue when
/// `|Re l| <= CRITICAL_REL_TOL * rho(A)`.
pub const CRITICAL_REL_TOL: f64 = 1e-9;

/// Stability regime of the drift matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// All eigenvalues have strictly positive real part.
    Hurwitz,
    /// All real parts nonnegative, at least one (numerically) zero.
    Critical,
    /// Some eigenvalue has negative real part.
    Unstable,
}

/// Result of [`analyze`]: spectrum, regime, and the similarity pair.
#[derive(Debug, Clone)]
pub struct SpectralInfo {
    /// Eigenvalues in Schur order (deterministic for fixed input bits).
    pub eigenvalues: Vec<C64>,
    /// Similarity matrix with `A = U D U^{-1}`.
    pub similarity_u: CMatrix,
    /// Diagonal (or rescaled-Jordan block-bidiagonal) factor.
    pub diagonal_d: CMatrix,
    /// `min_i Re(l_i)`, unclamped.
    pub spectral_gap: f64,
    /// `max_i |l_i|`.
    pub spectral_radius: f64,
    /// `kappa(U) = ||U|| * ||U^{-1}||` in operator norms.
    pub condition_number: f64,
    pub regime: Regime,
    pub diagonalizable: bool,
    /// Set when the matrix is critical and defective at the same time; the
    /// averaged iterates of such systems can fail to converge at all.
    pub defective_critical: bool,
}

impl SpectralInfo {
    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `min_i |l_i|`, used by the deviation-term formulas.
    pub fn min_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| l.norm())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Eigen-analysis entry point. `tol` controls rank decisions and the
/// diagonalizability threshold (a matrix is treated as diagonalizable iff
/// the eigenvector matrix has condition number below `1/tol`).
pub fn analyze(a: &DMatrix<f64>, tol: f64) -> Result<SpectralInfo> {
    let d = a.nrows();
    if d == 0 || a.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d.max(1),
            got: a.ncols(),
        });
    }
    if !crate::linalg::is_finite_mat(a) {
        return Err(Error::NonFinite("drift matrix"));
    }

    let (z, tc) = complex_schur(a)?;
    let schur_eigenvalues: Vec<C64> = (0..d).map(|i| tc[(i, i)]).collect();
    let schur_radius = schur_eigenvalues
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max);

    // Eigenvectors by back-substitution on the triangular factor. The
    // eigenvector route is accepted only when the basis is well conditioned
    // AND actually reconstructs the matrix; a borderline-defective matrix
    // (e.g. a perturbed Jordan block, where kappa(V) sits near 1/tol and the
    // eigenvalues carry an eps^{1/k} error) fails one of the two and falls
    // through to the chain construction.
    let v = triangular_eigenvectors(&tc, &z);
    let kappa_v = cond2_complex(&v);
    let mut choice: Option<(CMatrix, CMatrix, bool)> = None;
    if kappa_v.is_finite() && kappa_v < 1.0 / tol {
        let mut dmat = CMatrix::zeros(d, d);
        for i in 0..d {
            dmat[(i, i)] = schur_eigenvalues[i];
        }
        if similarity_residual(a, &v, &dmat) <= 1e-10 {
            choice = Some((v, dmat, true));
        }
    }
    if choice.is_none() {
        choice = jordan_similarity(a, &schur_eigenvalues, schur_radius, tol)
            .map(|(u, dm, all_simple)| (u, dm, all_simple));
    }
    let (similarity_u, diagonal_d, diagonalizable) =
        choice.unwrap_or_else(|| (z.clone(), tc.clone(), false));

    // Report the diagonal of D as the spectrum. For a defective matrix this
    // is the cluster-refined value: the spurious eps^{1/k} splitting of a
    // perturbed Jordan block is symmetric around the true eigenvalue, so the
    // cluster mean is accurate to working precision while the raw Schur
    // values are not.
    let eigenvalues: Vec<C64> = (0..d).map(|i| diagonal_d[(i, i)]).collect();
    let spectral_radius = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let spectral_gap = eigenvalues.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);

    let condition_number = cond2_complex(&similarity_u);

    let zero_tol = CRITICAL_REL_TOL * spectral_radius.max(f64::MIN_POSITIVE);
    let clamped_min = if spectral_gap.abs() <= zero_tol {
        0.0
    } else {
        spectral_gap
    };
    let regime = if clamped_min > 0.0 {
        Regime::Hurwitz
    } else if clamped_min == 0.0 {
        Regime::Critical
    } else {
        Regime::Unstable
    };

    Ok(SpectralInfo {
        eigenvalues,
        similarity_u,
        diagonal_d,
        spectral_gap,
        spectral_radius,
        condition_number,
        regime,
        diagonalizable,
        defective_critical: regime == Regime::Critical && !diagonalizable,
    })
}

/// Step-size upper bound for the Hurwitz non-asymptotic analysis:
/// `l* / (rho^2 + kappa^2 sigma_A^2 log^{2a+1}(T/delta))`.
pub fn hurwitz_step_bound(
    info: &SpectralInfo,
    sigma_a: f64,
    alpha: f64,
    t: usize,
    delta: f64,
) -> Result<f64> {
    if info.regime != Regime::Hurwitz {
        return Err(Error::NotHurwitz(info.regime));
    }
    assert!(t >= 1 && delta > 0.0 && delta < 1.0, "need T >= 1 and delta in (0,1)");
    let log_term = (t as f64 / delta).ln().powf(2.0 * alpha + 1.0);
    let denom = info.spectral_radius.powi(2)
        + info.condition_number.powi(2) * sigma_a * sigma_a * log_term;
    Ok(info.spectral_gap / denom)
}

/// Critical-case step-size rule `1 / ((rho + 3 kappa v_A) sqrt(T))`.
/// Requires a diagonalizable matrix with nonnegative real parts.
pub fn critical_step_size(info: &SpectralInfo, v_a: f64, t: usize) -> Result<f64> {
    if !info.diagonalizable {
        return Err(Error::Defective {
            kappa: info.condition_number,
        });
    }
    if info.regime == Regime::Unstable {
        return Err(Error::UnstableRegime {
            gap: info.spectral_gap,
        });
    }
    assert!(t >= 1, "need T >= 1");
    Ok(1.0 / ((info.spectral_radius + 3.0 * info.condition_number * v_a) * (t as f64).sqrt()))
}

/// The symmetric tridiagonal Toeplitz matrix with diagonal 4 and
/// off-diagonal 1 that appears as the Hermitian part of a rescaled Jordan
/// block (up to the factor `Re(l)/2`).
pub fn toeplitz_tridiag(k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        m[(i, i)] = 4.0;
        if i + 1 < k {
            m[(i, i + 1)] = 1.0;
            m[(i + 1, i)] = 1.0;
        }
    }
    m
}

/// Closed-form eigenvalues of [`toeplitz_tridiag`]:
/// `4 + 2 cos(j pi / (k+1))` for `j = 1..=k`.
pub fn toeplitz_eigenvalue(k: usize, j: usize) -> f64 {
    assert!(j >= 1 && j <= k);
    4.0 + 2.0 * (j as f64 * std::f64::consts::PI / (k as f64 + 1.0)).cos()
}

// ---------------------------------------------------------------------------
// Complex Schur form
// ---------------------------------------------------------------------------

/// Complex Schur decomposition `A = Z T Z^H` with `Z` unitary and `T` upper
/// triangular, obtained from the real Schur form by triangularizing each
/// 2x2 block with an exact unitary similarity.
fn complex_schur(a: &DMatrix<f64>) -> Result<(CMatrix, CMatrix)> {
    let d = a.nrows();
    if d == 1 {
        let z = CMatrix::identity(1, 1);
        let t = CMatrix::from_element(1, 1, C64::new(a[(0, 0)], 0.0));
        return Ok((z, t));
    }

    let schur = a
        .clone()
        .try_schur(f64::EPSILON, 0)
        .ok_or(Error::SchurFailed)?;
    let (q, t) = schur.unpack();

    let mut zc = q.map(|x| C64::new(x, 0.0));
    let mut tc = t.map(|x| C64::new(x, 0.0));
    let scale = tc.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1.0);
    let block_tol = f64::EPSILON * scale;

    let mut i = 0usize;
    while i < d {
        if i + 1 >= d || tc[(i + 1, i)].norm() <= block_tol {
            if i + 1 < d {
                tc[(i + 1, i)] = C64::new(0.0, 0.0);
            }
            i += 1;
            continue;
        }
        let p = tc[(i, i)];
        let q01 = tc[(i, i + 1)];
        let r10 = tc[(i + 1, i)];
        let s = tc[(i + 1, i + 1)];
        let mid = (p + s) * 0.5;
        let disc = (p - s) * (p - s) * 0.25 + q01 * r10;
        let sq = disc.sqrt();
        let (l1, l2) = (mid + sq, mid - sq);

        // Eigenvector of the block for l1; at least one candidate is nonzero.
        let cand_a = (q01, l1 - p);
        let cand_b = (l1 - s, r10);
        let na = cand_a.0.norm_sqr() + cand_a.1.norm_sqr();
        let nb = cand_b.0.norm_sqr() + cand_b.1.norm_sqr();
        let (v0, v1) = if na >= nb { cand_a } else { cand_b };
        let nrm = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
        let (v0, v1) = (v0 / nrm, v1 / nrm);

        // Unitary G = [v, v_perp] with v_perp = (-conj(v1), conj(v0)).
        let g = nalgebra::Matrix2::new(v0, -v1.conj(), v1, v0.conj());
        let gh = g.adjoint();

        // Two-sided update restricted to the affected rows/columns.
        for r in 0..d {
            let x0 = tc[(r, i)];
            let x1 = tc[(r, i + 1)];
            tc[(r, i)] = x0 * g[(0, 0)] + x1 * g[(1, 0)];
            tc[(r, i + 1)] = x0 * g[(0, 1)] + x1 * g[(1, 1)];
        }
        for c in 0..d {
            let x0 = tc[(i, c)];
            let x1 = tc[(i + 1, c)];
            tc[(i, c)] = gh[(0, 0)] * x0 + gh[(0, 1)] * x1;
            tc[(i + 1, c)] = gh[(1, 0)] * x0 + gh[(1, 1)] * x1;
        }
        for r in 0..d {
            let x0 = zc[(r, i)];
            let x1 = zc[(r, i + 1)];
            zc[(r, i)] = x0 * g[(0, 0)] + x1 * g[(1, 0)];
            zc[(r, i + 1)] = x0 * g[(0, 1)] + x1 * g[(1, 1)];
        }

        tc[(i + 1, i)] = C64::new(0.0, 0.0);
        tc[(i, i)] = l1;
        tc[(i + 1, i + 1)] = l2;
        i += 2;
    }

    // Clean any sub-triangular round-off.
    for r in 0..d {
        for c in 0..r {
            tc[(r, c)] = C64::new(0.0, 0.0);
        }
    }
    Ok((zc, tc))
}

/// Eigenvectors of `A = Z T Z^H` by back-substitution on the triangular `T`,
/// normalized to unit length with the largest-magnitude entry made real
/// positive (fixes the phase, so output is deterministic).
fn triangular_eigenvectors(tc: &CMatrix, z: &CMatrix) -> CMatrix {
    let d = tc.nrows();
    let tnorm = tc.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1.0);
    let smlnum = f64::EPSILON * tnorm;
    let mut v = CMatrix::zeros(d, d);

    for k in 0..d {
        let lam = tc[(k, k)];
        let mut x = vec![C64::new(0.0, 0.0); d];
        x[k] = C64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for m in (j + 1)..=k {
                acc += tc[(j, m)] * x[m];
            }
            let mut den = tc[(j, j)] - lam;
            if den.norm() < smlnum {
                den = C64::new(smlnum, 0.0);
            }
            x[j] = -acc / den;
            let mag = x[j].norm();
            if mag > 1e120 {
                for e in x.iter_mut() {
                    *e /= mag;
                }
            }
        }
        let mut col = z * CVector::from_row_slice(&x);
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= C64::new(nrm, 0.0);
        }
        // Phase fix.
        let (mut imax, mut best) = (0usize, 0.0f64);
        for (i, e) in col.iter().enumerate() {
            if e.norm() > best {
                best = e.norm();
                imax = i;
            }
        }
        if best > 0.0 {
            let phase = col[imax] / C64::new(best, 0.0);
            col /= phase;
        }
        v.set_column(k, &col);
    }
    v
}

fn cond2_complex(m: &CMatrix) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Relative Frobenius error of `A - U D U^{-1}`.
fn similarity_residual(a: &DMatrix<f64>, u: &CMatrix, dm: &CMatrix) -> f64 {
    let d = a.nrows();
    let ac = a.map(|x| C64::new(x, 0.0));
    let u_inv = match u.clone().lu().solve(&CMatrix::identity(d, d)) {
        Some(inv) => inv,
        None => return f64::INFINITY,
    };
    ((ac - u * dm * u_inv).norm()) / a.norm().max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// Jordan similarity for defective matrices
// ---------------------------------------------------------------------------

/// Builds `U, D` for a defective matrix: Jordan chains are recovered from the
/// rank staircase of `(A - l I)^k`, then each block is rescaled so that
/// `D_block = l I + Re(l/2) J` (no rescale when `Re(l)` is numerically
/// zero, where the scaling would be singular).
///
/// Returns `None` when chain extraction degenerates; the caller then falls
/// back to the unitary Schur pair. The boolean is true when every chain has
/// length 1, i.e. the matrix turned out diagonalizable after refinement.
fn jordan_similarity(
    a: &DMatrix<f64>,
    eigenvalues: &[C64],
    spectral_radius: f64,
    tol: f64,
) -> Option<(CMatrix, CMatrix, bool)> {
    let d = a.nrows();
    let ac = a.map(|x| C64::new(x, 0.0));
    let scale = spectral_radius.max(1.0);

    // Cluster numerically-split copies of a defective eigenvalue. A size-k
    // Jordan block perturbed at machine precision splits its eigenvalue by
    // roughly eps^{1/k}, so the radius must sit well above that for the
    // block sizes we care about (k <= 4).
    let cluster_tol = 1e-4 * scale;
    let mut clusters: Vec<(C64, usize)> = Vec::new();
    let mut assigned = vec![false; d];
    for i in 0..d {
        if assigned[i] {
            continue;
        }
        let mut members = vec![i];
        assigned[i] = true;
        for j in (i + 1)..d {
            if !assigned[j] && (eigenvalues[j] - eigenvalues[i]).norm() <= cluster_tol {
                members.push(j);
                assigned[j] = true;
            }
        }
        let mean = members.iter().map(|&j| eigenvalues[j]).sum::<C64>() / members.len() as f64;
        clusters.push((mean, members.len()));
    }

    let zero_tol = CRITICAL_REL_TOL * scale;
    let mut u_cols: Vec<CVector> = Vec::new();
    let mut d_blocks: Vec<(C64, usize, C64)> = Vec::new(); // (lambda, size, superdiag)

    for &(lam, mult) in &clusters {
        let m = &ac - CMatrix::identity(d, d) * lam;
        // Null-space staircase of M^k.
        let mut kernels: Vec<CMatrix> = Vec::new(); // orthonormal bases
        let mut power = CMatrix::identity(d, d);
        let mut dims = vec![0usize];
        for _k in 1..=mult {
            power = &power * &m;
            let ker = null_space(&power, tol);
            dims.push(ker.ncols());
            kernels.push(ker);
            if *dims.last().unwrap() >= mult {
                break;
            }
        }
        let kmax = kernels.len();
        if dims[kmax] != mult {
            return None; // staircase inconsistent with clustering
        }

        // Chain tops at level k span a complement of
        // ker(M^{k-1}) + M * (level-(k+1) chain space) inside ker(M^k).
        let mut chains: Vec<Vec<CVector>> = Vec::new(); // each chain top-first
        for k in (1..=kmax).rev() {
            let ker_k = &kernels[k - 1];
            let mut span_cols: Vec<CVector> = Vec::new();
            if k >= 2 {
                for c in 0..kernels[k - 2].ncols() {
                    span_cols.push(kernels[k - 2].column(c).into_owned());
                }
            }
            for chain in &chains {
                // chain was started at some level k' > k; its vector at level
                // k is chain[k' - k] (top-first ordering).
                if chain.len() > k {
                    span_cols.push(chain[chain.len() - k].clone());
                }
            }
            let n_existing = chains.iter().filter(|c| c.len() >= k).count();
            let needed = (dims[k] - dims[k - 1]).saturating_sub(n_existing);
            if needed == 0 {
                continue;
            }
            let proj = orthonormalize(&span_cols, tol);
            let mut picked = 0usize;
            for c in 0..ker_k.ncols() {
                if picked == needed {
                    break;
                }
                let mut cand = ker_k.column(c).into_owned();
                // Project out the existing span and already-picked tops.
                for b in proj.iter().chain(
                    chains
                        .iter()
                        .rev()
                        .take(picked)
                        .map(|ch| &ch[ch.len() - k]),
                ) {
                    let coef = b.dotc(&cand);
                    cand -= b * coef;
                }
                if cand.norm() > tol {
                    let cand = cand.clone() / C64::new(cand.norm(), 0.0);
                    // Build the chain top-first: [v, Mv, M^2 v, ...].
                    let mut chain = vec![cand.clone()];
                    let mut cur = cand;
                    for _ in 1..k {
                        cur = &m * &cur;
                        chain.push(cur.clone());
                    }
                    chains.push(chain);
                    picked += 1;
                }
            }
            if picked != needed {
                return None;
            }
        }

        // Emit the blocks: columns eigenvector-first, optional rescale.
        for chain in &chains {
            let k = chain.len();
            let rescale = lam.re.abs() > zero_tol;
            let ratio = C64::new(lam.re * 0.5, 0.0);
            let mut factor = C64::new(1.0, 0.0);
            // chain is top-first; the eigenvector is the last element.
            for (j, v) in chain.iter().rev().enumerate() {
                let col = if rescale && j > 0 {
                    factor *= ratio;
                    v * factor
                } else {
                    v.clone()
                };
                u_cols.push(col);
            }
            let superdiag = if rescale { ratio } else { C64::new(1.0, 0.0) };
            d_blocks.push((lam, k, superdiag));
        }
    }

    if u_cols.len() != d {
        return None;
    }
    let mut u = CMatrix::zeros(d, d);
    for (j, col) in u_cols.iter().enumerate() {
        u.set_column(j, col);
    }
    // Reject a numerically singular chain basis.
    let sv = u.clone().svd(false, false).singular_values;
    if sv.min() <= tol * sv.max() {
        return None;
    }

    let mut dm = CMatrix::zeros(d, d);
    let mut pos = 0usize;
    for &(lam, k, sup) in &d_blocks {
        for j in 0..k {
            dm[(pos + j, pos + j)] = lam;
            if j + 1 < k {
                dm[(pos + j, pos + j + 1)] = sup;
            }
        }
        pos += k;
    }
    let all_simple = d_blocks.iter().all(|&(_, k, _)| k == 1);
    Some((u, dm, all_simple))
}

/// Orthonormal basis of the null space of `m` (columns), rank decided at
/// `tol` relative to the largest singular value.
fn null_space(m: &CMatrix, tol: f64) -> CMatrix {
    let d = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^H");
    let sv = &svd.singular_values;
    let smax = sv.max().max(f64::MIN_POSITIVE);
    let rank = sv.iter().filter(|&&s| s > tol * smax).count();
    let nullity = d - rank;
    let mut basis = CMatrix::zeros(d, nullity);
    // nalgebra sorts singular values descending; the trailing rows of V^H
    // span the null space.
    for (out_c, row) in (rank..d).enumerate() {
        for i in 0..d {
            basis[(i, out_c)] = vt[(row, i)].conj();
        }
    }
    basis
}

/// Gram-Schmidt orthonormalization dropping near-dependent vectors.
fn orthonormalize(cols: &[CVector], tol: f64) -> Vec<CVector> {
    let mut basis: Vec<CVector> = Vec::new();
    for c in cols {
        let mut v = c.clone();
        for b in &basis {
            let coef = b.dotc(&v);
            v -= b * coef;
        }
        let n = v.norm();
        if n > tol {
            basis.push(v / C64::new(n, 0.0));
        }
    }
    basis
}
