//! Small dense linear-algebra utilities used across the crate: Kronecker
//! products and column-major vectorization, compensated summation, a
//! min-cost assignment solver for eigenvalue multiset matching, and a
//! 1-norm reciprocal-condition estimator.

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Kronecker product `A (x) B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-major flattening, so that `vec(A X B^T) = (B (x) A) vec(X)`.
pub fn vec_mat(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_mat`] for a square `d x d` matrix.
pub fn unvec(v: &DVector<f64>, d: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), d * d, "unvec: length {} != {}^2", v.len(), d);
    DMatrix::from_column_slice(d, d, v.as_slice())
}

pub fn is_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn is_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Largest singular value (operator 2-norm).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// Kahan-compensated accumulator for a vector sum.
///
/// Keeps the running-average error at round-off scale over 10^6-step sums,
/// which the telescope-identity diagnostics rely on.
#[derive(Debug, Clone)]
pub struct KahanVec {
    sum: DVector<f64>,
    comp: DVector<f64>,
}

impl KahanVec {
    pub fn zeros(d: usize) -> Self {
        Self {
            sum: DVector::zeros(d),
            comp: DVector::zeros(d),
        }
    }

    pub fn add(&mut self, x: &DVector<f64>) {
        for i in 0..self.sum.len() {
            let y = x[i] - self.comp[i];
            let t = self.sum[i] + y;
            self.comp[i] = (t - self.sum[i]) - y;
            self.sum[i] = t;
        }
    }

    pub fn value(&self) -> DVector<f64> {
        self.sum.clone()
    }
}

/// Scalar Kahan accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian
/// algorithm, O(n^3) shortest augmenting path form).
///
/// Returns `assignment[row] = col`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "hungarian: cost matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    // Potentials and matching, 1-indexed internally per the classic scheme.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[col] = row matched to col; col 0 is virtual
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Optimal-matching distance between two complex multisets: the maximum
/// pairwise distance under the cost-minimizing assignment.
pub fn matched_eigenvalue_distance(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let cost = DMatrix::from_fn(n, n, |i, j| (a[i] - b[j]).norm());
    let asg = hungarian(&cost);
    (0..n)
        .map(|i| (a[i] - b[asg[i]]).norm())
        .fold(0.0, f64::max)
}

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// log(Phi(z)) without cancellation for z << 0.
pub fn log_normal_cdf(z: f64) -> f64 {
    let phi = normal_cdf(z);
    if phi > 1e-290 {
        phi.ln()
    } else {
        // Asymptotic expansion of the Mills ratio for the far tail.
        -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - (-z).ln()
    }
}

/// Reciprocal 2-norm condition number sigma_min / sigma_max.
///
/// Exact via SVD. The covariance operator this guards is d^2 x d^2 with
/// d <= 50 as the supported envelope, so a dense SVD is affordable.
pub fn rcond_2norm(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smax <= 0.0 {
        0.0
    } else {
        smin / smax
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kron_vec_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, -1.0]);
        // vec(A X B^T) = (B kron A) vec(X)
        let lhs = vec_mat(&(&a * &x * b.transpose()));
        let rhs = kron(&b, &a) * vec_mat(&x);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn kahan_beats_naive_on_long_sums() {
        let mut k = Kahan::default();
        let x = 0.1f64;
        for _ in 0..1_000_000 {
            k.add(x);
        }
        assert_relative_eq!(k.value(), 100_000.0, epsilon = 1e-9);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        use itertools_free::permutations;
        let cases = [
            DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            DMatrix::from_row_slice(4, 4, &[
                0.1, 7.0, 3.0, 2.0, //
                4.0, 0.2, 9.0, 6.0, //
                5.0, 8.0, 0.3, 1.0, //
                6.0, 2.0, 4.0, 0.4,
            ]),
        ];
        for cost in cases {
            let n = cost.nrows();
            let asg = hungarian(&cost);
            let got: f64 = (0..n).map(|i| cost[(i, asg[i])]).sum();
            let best = permutations(n)
                .into_iter()
                .map(|p| (0..n).map(|i| cost[(i, p[i])]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!(got, best, epsilon = 1e-12);
        }
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-12);
        assert_relative_eq!(normal_cdf(-3.0), 0.0013498980316300933, epsilon = 1e-12);
    }

    // tiny permutation generator for the brute-force oracle
    mod itertools_free {
        pub fn permutations(n: usize) -> Vec<Vec<usize>> {
            let mut out = Vec::new();
            let mut cur: Vec<usize> = (0..n).collect();
            heap(&mut cur, n, &mut out);
            out
        }
        fn heap(arr: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
            if k == 1 {
                out.push(arr.clone());
                return;
            }
            for i in 0..k {
                heap(arr, k - 1, out);
                if k % 2 == 0 {
                    arr.swap(i, k - 1);
                } else {
                    arr.swap(0, k - 1);
                }
            }
        }
    }
}
