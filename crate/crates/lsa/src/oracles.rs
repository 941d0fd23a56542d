//! Stochastic observation models: i.i.d. unbiased draws `(A_t, b_t)` of the
//! pair `(A, b)`, one implementation per application plus synthetic and
//! adversarial instances.
//!
//! Every built-in oracle draws its matrix noise and vector noise from
//! disjoint randomness, so `Xi_t = A_t - A` and `xi_t = b_t - b` are
//! independent. This is the strongest reading of the "uncorrelated noise"
//! requirement that the covariance formulas rely on.

use crate::error::{Error, Result};
use crate::linalg::{is_finite_mat, is_finite_vec, kron, unvec, vec_mat};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// The deterministic problem: the pair `(A, b)` and its solution.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    a_bar: DMatrix<f64>,
    b_bar: DVector<f64>,
    theta_star: Option<DVector<f64>>,
}

impl ProblemSpec {
    /// Builds the problem and solves for `theta* = A^{-1} b` when the drift
    /// matrix is invertible; otherwise `theta_star()` is `None`.
    pub fn new(a_bar: DMatrix<f64>, b_bar: DVector<f64>) -> Result<Self> {
        let d = a_bar.nrows();
        if a_bar.ncols() != d || b_bar.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: b_bar.len(),
            });
        }
        if !is_finite_mat(&a_bar) || !is_finite_vec(&b_bar) {
            return Err(Error::NonFinite("problem spec"));
        }
        let theta_star = a_bar.clone().lu().solve(&b_bar).and_then(|theta| {
            let residual = (&a_bar * &theta - &b_bar).norm();
            if residual <= 1e-10 * (1.0 + b_bar.norm()) && is_finite_vec(&theta) {
                Some(theta)
            } else {
                None
            }
        });
        Ok(Self {
            a_bar,
            b_bar,
            theta_star,
        })
    }

    pub fn dimension(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn a_bar(&self) -> &DMatrix<f64> {
        &self.a_bar
    }

    pub fn b_bar(&self) -> &DVector<f64> {
        &self.b_bar
    }

    pub fn theta_star(&self) -> Option<&DVector<f64>> {
        self.theta_star.as_ref()
    }

    pub fn require_theta_star(&self) -> Result<&DVector<f64>> {
        self.theta_star.as_ref().ok_or(Error::SingularDrift)
    }
}

/// One observation.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    pub a_t: DMatrix<f64>,
    pub b_t: DVector<f64>,
}

impl OracleSample {
    pub fn zeros(d: usize) -> Self {
        Self {
            a_t: DMatrix::zeros(d, d),
            b_t: DVector::zeros(d),
        }
    }
}

/// Where second-moment descriptors came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSource {
    Analytic,
    MonteCarlo { n_samples: usize },
}

/// Second-moment and tail descriptors of the observation noise.
///
/// `xi_second_moment` stores the flattened 4-tensor `E[Xi (x) Xi]` as a
/// `d^2 x d^2` matrix acting on column-major flattened matrices, so that
/// `E[Xi M Xi^T] = unvec(xi_second_moment * vec(M))`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub cov_xi: DMatrix<f64>,
    pub xi_second_moment: DMatrix<f64>,
    pub v_a2: f64,
    pub v_b2: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub source: NoiseSource,
}

impl NoiseModel {
    pub fn zero(d: usize) -> Self {
        Self {
            cov_xi: DMatrix::zeros(d, d),
            xi_second_moment: DMatrix::zeros(d * d, d * d),
            v_a2: 0.0,
            v_b2: 0.0,
            sigma_a: 0.0,
            sigma_b: 0.0,
            alpha: 0.0,
            beta: 0.0,
            source: NoiseSource::Analytic,
        }
    }

    pub fn dimension(&self) -> usize {
        self.cov_xi.nrows()
    }

    /// The quadratic form `M -> E[Xi M Xi^T]`.
    pub fn xi_quadratic(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.dimension();
        unvec(&(&self.xi_second_moment * vec_mat(m)), d)
    }

    pub fn has_a_noise(&self) -> bool {
        self.xi_second_moment.iter().any(|x| *x != 0.0)
    }
}

/// Certificate that the oracle satisfies the almost-sure bounds needed by
/// the coordinate-wise analysis: `|b_t|_inf <= 1` and `I - A_t` is a
/// `(1 - lambda_bar)`-contraction in the sup norm.
#[derive(Debug, Clone, Copy)]
pub struct LinftyCertificate {
    pub lambda_bar: f64,
}

/// An immutable description of the observation distribution. Sampling takes
/// an explicit RNG owned by the caller, so distinct threads can sample
/// concurrently with distinct streams.
pub trait Oracle: Send + Sync {
    fn dimension(&self) -> usize;

    fn problem(&self) -> &ProblemSpec;

    /// Draws one observation into `out`.
    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut OracleSample);

    fn sample(&self, rng: &mut ChaCha8Rng) -> OracleSample {
        let mut out = OracleSample::zeros(self.dimension());
        self.sample_into(rng, &mut out);
        out
    }

    /// Closed-form noise descriptors, when the oracle has them.
    fn noise_model(&self) -> Option<NoiseModel> {
        None
    }

    fn linfty_certificate(&self) -> Option<LinftyCertificate> {
        None
    }
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn problem(&self) -> &ProblemSpec {
        (**self).problem()
    }
    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut OracleSample) {
        (**self).sample_into(rng, out)
    }
    fn noise_model(&self) -> Option<NoiseModel> {
        (**self).noise_model()
    }
    fn linfty_certificate(&self) -> Option<LinftyCertificate> {
        (**self).linfty_certificate()
    }
}

// ---------------------------------------------------------------------------
// Deterministic oracle
// ---------------------------------------------------------------------------

/// Zero-noise oracle: every draw returns `(A, b)` exactly.
#[derive(Debug, Clone)]
pub struct DeterministicOracle {
    problem: ProblemSpec,
}

impl DeterministicOracle {
    pub fn new(problem: ProblemSpec) -> Self {
        Self { problem }
    }
}

impl Oracle for DeterministicOracle {
    fn dimension(&self) -> usize {
        self.problem.dimension()
    }

    fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    fn sample_into(&self, _rng: &mut ChaCha8Rng, out: &mut OracleSample) {
        out.a_t.copy_from(self.problem.a_bar());
        out.b_t.copy_from(self.problem.b_bar());
    }

    fn noise_model(&self) -> Option<NoiseModel> {
        Some(NoiseModel::zero(self.dimension()))
    }
}

// ---------------------------------------------------------------------------
// Additive Gaussian oracle
// ---------------------------------------------------------------------------

/// Synthetic oracle: `A_t = A + Xi`, `b_t = b + xi` with i.i.d. Gaussian
/// entries, `Xi_ij ~ N(0, a_std^2)` and `xi_i ~ N(0, b_std^2)`, drawn
/// independently of each other.
#[derive(Debug, Clone)]
pub struct AdditiveGaussianOracle {
    problem: ProblemSpec,
    a_std: f64,
    b_std: f64,
}

impl AdditiveGaussianOracle {
    pub fn new(problem: ProblemSpec, a_std: f64, b_std: f64) -> Self {
        assert!(a_std >= 0.0 && b_std >= 0.0);
        Self {
            problem,
            a_std,
            b_std,
        }
    }
}

impl Oracle for AdditiveGaussianOracle {
    fn dimension(&self) -> usize {
        self.problem.dimension()
    }

    fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut OracleSample) {
        let d = self.dimension();
        for j in 0..d {
            for i in 0..d {
                let g: f64 = rng.sample(StandardNormal);
                out.a_t[(i, j)] = self.problem.a_bar()[(i, j)] + self.a_std * g;
            }
        }
        for i in 0..d {
            let g: f64 = rng.sample(StandardNormal);
            out.b_t[i] = self.problem.b_bar()[i] + self.b_std * g;
        }
    }

    fn noise_model(&self) -> Option<NoiseModel> {
        let d = self.dimension();
        let s2 = self.a_std * self.a_std;
        // E[Xi_ij Xi_kl] = s^2 d_ik d_jl, so E[Xi M Xi^T] = s^2 tr(M) I.
        let mut k = DMatrix::zeros(d * d, d * d);
        for j in 0..d {
            let in_idx = j * d + j; // vec index of basis E_jj
            for i in 0..d {
                k[(i * d + i, in_idx)] = s2;
            }
        }
        Some(NoiseModel {
            cov_xi: DMatrix::identity(d, d) * (self.b_std * self.b_std),
            xi_second_moment: k,
            v_a2: s2 * d as f64,
            v_b2: self.b_std * self.b_std,
            // |Xi u| is a_std times a chi_d variable and
            // (E chi_d^p)^{1/p} <= sqrt(d + p) <= sqrt(p (d+2)/2) for p >= 2.
            sigma_a: self.a_std * ((d as f64 + 2.0) / 2.0).sqrt(),
            alpha: 0.5,
            sigma_b: self.b_std,
            beta: 0.5,
            source: NoiseSource::Analytic,
        })
    }
}

// ---------------------------------------------------------------------------
// Gaussian linear regression oracle
// ---------------------------------------------------------------------------

/// Streaming least squares with isotropic Gaussian features:
/// `A_t = X X^T` with `X ~ N(0, I_d)` and `b_t = X' Y'` with
/// `Y' = <X', theta*> + eps`, `eps ~ N(0, noise_std^2)`, where `X'` is an
/// independent feature draw (keeping the matrix and vector noise
/// independent). The drift is `A = I_d` and `b = theta*`.
#[derive(Debug, Clone)]
pub struct GaussianRegressionOracle {
    problem: ProblemSpec,
    noise_std: f64,
}

impl GaussianRegressionOracle {
    pub fn new(theta_star: DVector<f64>, noise_std: f64) -> Result<Self> {
        let d = theta_star.len();
        let problem = ProblemSpec::new(DMatrix::identity(d, d), theta_star)?;
        Ok(Self { problem, noise_std })
    }
}

impl Oracle for GaussianRegressionOracle {
    fn dimension(&self) -> usize {
        self.problem.dimension()
    }

    fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut OracleSample) {
        let d = self.dimension();
        let theta = self.problem.b_bar(); // b = theta* for this model
        let x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        for j in 0..d {
            for i in 0..d {
                out.a_t[(i, j)] = x[i] * x[j];
            }
        }
        let xp = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps: f64 = rng.sample::<f64, _>(StandardNormal);
        let y = xp.dot(theta) + self.noise_std * eps;
        for i in 0..d {
            out.b_t[i] = xp[i] * y;
        }
    }

    fn noise_model(&self) -> Option<NoiseModel> {
        let d = self.dimension();
        let theta = self.problem.b_bar();
        let t2 = theta.norm_squared();
        let s2 = self.noise_std * self.noise_std;
        // For Xi = X X^T - I with standard Gaussian X:
        // E[Xi M Xi^T] = tr(M) I + M^T  (Wick expansion of the 4th moments).
        let dd = d * d;
        let mut k = DMatrix::zeros(dd, dd);
        for j in 0..d {
            for l in 0..d {
                let in_idx = l * d + j; // basis E_{j,l}
                if j == l {
                    for i in 0..d {
                        k[(i * d + i, in_idx)] += 1.0;
                    }
                }
                // transpose contribution: output entry (l, j)
                let out_idx = j * d + l;
                k[(out_idx, in_idx)] += 1.0;
            }
        }
        let cov_xi = DMatrix::identity(d, d) * (t2 + s2) + theta * theta.transpose();
        let v_b2 = 2.0 * t2 + s2; // top eigenvalue of cov_xi
        Some(NoiseModel {
            cov_xi,
            xi_second_moment: k,
            v_a2: d as f64 + 1.0,
            v_b2,
            // Quadratic functions of Gaussians have sub-exponential tails.
            sigma_a: 2.0 * (d as f64 + 2.0).sqrt(),
            alpha: 1.0,
            sigma_b: 2.0 * ((d as f64).sqrt() * theta.norm() + self.noise_std),
            beta: 1.0,
            source: NoiseSource::Analytic,
        })
    }
}

// ---------------------------------------------------------------------------
// Markov reward processes and TD oracles
// ---------------------------------------------------------------------------

/// A finite Markov reward process: row-stochastic transitions, rewards in
/// `[-1, 1]`, and a discount factor in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct MrpSpec {
    pub transition_p: DMatrix<f64>,
    pub reward_r: DVector<f64>,
    pub discount_gamma: f64,
}

impl MrpSpec {
    pub fn new(
        transition_p: DMatrix<f64>,
        reward_r: DVector<f64>,
        discount_gamma: f64,
    ) -> Result<Self> {
        let n = transition_p.nrows();
        if transition_p.ncols() != n || reward_r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: reward_r.len(),
            });
        }
        for i in 0..n {
            let row_sum: f64 = transition_p.row(i).iter().sum();
            if (row_sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!(
                    "transition row {i} sums to {row_sum}, expected 1"
                )));
            }
            for j in 0..n {
                let p = transition_p[(i, j)];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidConfig(format!(
                        "transition entry ({i},{j}) = {p} outside [0,1]"
                    )));
                }
            }
        }
        if reward_r.iter().any(|r| r.abs() > 1.0) {
            return Err(Error::InvalidConfig("rewards must lie in [-1, 1]".into()));
        }
        if !(0.0..=1.0).contains(&discount_gamma) {
            return Err(Error::InvalidConfig("discount must lie in [0, 1]".into()));
        }
        Ok(Self {
            transition_p,
            reward_r,
            discount_gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transition_p.nrows()
    }

    /// Unique stationary distribution, computed as the left eigenvector of
    /// the transition matrix for eigenvalue 1.
    pub fn stationary_distribution(&self) -> Result<DVector<f64>> {
        stationary_distribution(&self.transition_p)
    }
}

/// Left eigenvector of a row-stochastic matrix for eigenvalue 1, normalized
/// to a probability vector. Errors when the eigenvalue is not simple.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let info = crate::spectral::analyze(&p.transpose(), crate::spectral::DEFAULT_TOL)?;
    let close: Vec<usize> = info
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, l)| (*l - crate::linalg::C64::new(1.0, 0.0)).norm() <= 1e-8)
        .map(|(i, _)| i)
        .collect();
    if close.len() != 1 {
        return Err(Error::NonErgodic {
            multiplicity: close.len(),
        });
    }
    let col = info.similarity_u.column(close[0]);
    let mut mu = DVector::from_fn(p.nrows(), |i, _| col[i].re);
    let total: f64 = mu.iter().sum();
    if total.abs() < 1e-12 {
        return Err(Error::NonErgodic { multiplicity: 0 });
    }
    mu /= total;
    for m in mu.iter_mut() {
        if *m < 0.0 && *m > -1e-10 {
            *m = 0.0;
        }
    }
    if mu.iter().any(|m| *m < 0.0) {
        return Err(Error::NonErgodic { multiplicity: 1 });
    }
    Ok(mu)
}

fn sample_categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Generative-model TD(0) for exact (tabular) policy evaluation.
///
/// Each draw is `A_t = I - gamma Z_t` where row `i` of `Z_t` is a one-hot
/// vector at a next state `J ~ P_{i,.}`, and `b_t = R_t` with
/// `R_{t,i} = r_i + Uniform(-(1-|r_i|), 1-|r_i|)`, so `R_t` stays in
/// `[-1, 1]` almost surely. Transition and reward draws are independent.
#[derive(Debug, Clone)]
pub struct ExactTdOracle {
    mrp: MrpSpec,
    problem: ProblemSpec,
}

impl ExactTdOracle {
    pub fn new(mrp: MrpSpec) -> Result<Self> {
        let n = mrp.n_states();
        let a_bar = DMatrix::identity(n, n) - &mrp.transition_p * mrp.discount_gamma;
        let problem = ProblemSpec::new(a_bar, mrp.reward_r.clone())?;
        Ok(Self { mrp, problem })
    }

    pub fn mrp(&self) -> &MrpSpec {
        &self.mrp
    }
}

impl Oracle for ExactTdOracle {
    fn dimension(&self) -> usize {
        self.problem.dimension()
    }

    fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut OracleSample) {
        let n = self.dimension();
        let gamma = self.mrp.discount_gamma;
        out.a_t.fill(0.0);
        for i in 0..n {
            let row: Vec<f64> = self.mrp.transition_p.row(i).iter().copied().collect();
            let j = sample_categorical(rng, &row);
            out.a_t[(i, j)] = -gamma;
            out.a_t[(i, i)] += 1.0;
        }
        for i in 0..n {
            let w = 1.0 - self.mrp.reward_r[i].abs();
            let u: f64 = rng.random_range(-1.0..1.0);
            out.b_t[i] = self.mrp.reward_r[i] + w * u;
        }
    }

    fn noise_model(&self) -> Option<NoiseModel> {
        let n = self.dimension();
        let gamma = self.mrp.discount_gamma;
        let p = &self.mrp.transition_p;

        // Reward noise: independent uniforms of half-width 1 - |r_i|.
        let mut cov_xi = DMatrix::zeros(n, n);
        for i in 0..n {
            let w = 1.0 - self.mrp.reward_r[i].abs();
            cov_xi[(i, i)] = w * w / 3.0;
        }

        // Transition noise: Xi = -gamma (Z - P) with independent one-hot
        // rows, so E[Xi_ij Xi_kl] = gamma^2 d_ik (d_jl P_ij - P_ij P_il).
        let dd = n * n;
        let mut k = DMatrix::zeros(dd, dd);
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let cov = if j == l {
                        p[(i, j)] * (1.0 - p[(i, j)])
                    } else {
                        -p[(i, j)] * p[(i, l)]
                    };
                    // output entry (i, i), input basis entry (j, l)
                    k[(i * n + i, l * n + j)] += gamma * gamma * cov;
                }
            }
        }

        // v_A^2 = lambda_max of sum_i cov(row i of Z), v_b^2 = max variance.
        let mut row_cov_sum = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let cov = if j == l {
                        p[(i, j)] * (1.0 - p[(i, j)])
                    } else {
                        -p[(i, j)] * p[(i, l)]
                    };
                    row_cov_sum[(j, l)] += gamma * gamma * cov;
                }
            }
        }
        let v_a2 = row_cov_sum
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max);
        let v_b2 = cov_xi.diagonal().iter().copied().fold(0.0, f64::max);

        // Bounded noise: p-th moments are bounded uniformly in p, so the
        // tail condition holds with zero exponents and essential-sup scales.
        let sigma_a = 2.0 * gamma * (n as f64).sqrt();
        let sigma_b = cov_xi
            .diagonal()
            .iter()
            .map(|v| 3.0 * v)
            .sum::<f64>()
            .sqrt();
        Some(NoiseModel {
            cov_xi,
            xi_second_moment: k,
            v_a2,
            v_b2,
            sigma_a,
            alpha: 0.0,
            sigma_b,
            beta: 0.0,
            source: NoiseSource::Analytic,
        })
    }

    fn linfty_certificate(&self) -> Option<LinftyCertificate> {
        // |(I - A_t) v|_inf = gamma |Z_t v|_inf <= gamma |v|_inf a.s.
        Some(LinftyCertificate {
            lambda_bar: 1.0 - self.mrp.discount_gamma,
        })
    }
}

/// TD(0) with linear function approximation under the generative model:
/// features `phi: states -> R^d` given as the rows of a `D x d` matrix.
///
/// States are sampled exactly from the stationary distribution (computed by
/// the eigenvector method), the next state from the transition row, and the
/// reward as for [`ExactTdOracle`]. The matrix draw uses a state pair
/// `(X, X+)` and the vector draw an independent `(X', R')`.
#[derive(Debug, Clone)]
pub struct TdLinearFaOracle {
    mrp: MrpSpec,
    features: DMatrix<f64>,
    mu: DVector<f64>,
    problem: ProblemSpec,
}

impl TdLinearFaOracle {
    pub fn new(mrp: MrpSpec, features: DMatrix<f64>) -> Result<Self> {
        let n = mrp.n_states();
        if features.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: features.nrows(),
            });
        }
        let mu = mrp.stationary_distribution()?;
        let d_mu = DMatrix::from_diagonal(&mu);
        let gram = features.transpose() * &d_mu * &features;
        let min_eig = gram
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig <= 1e-10 {
            return Err(Error::InvalidConfig(format!(
                "features are rank-deficient under the stationary distribution (min eigenvalue {min_eig:.3e})"
            )));
        }
        let a_bar = &gram
            - features.transpose() * &d_mu * &mrp.transition_p * &features * mrp.discount_gamma;
        let b_bar = features.transpose() * &d_mu * &mrp.reward_r;
        let problem = ProblemSpec::new(a_bar, b_bar)?;
        Ok(Self {
            mrp,
            features,
            mu,
            problem,
        })
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    /// `M = E_mu[phi phi^T]`, the weight matrix of the value-function norm.
    pub fn feature_gram(&self) -> DMatrix<f64> {
        self.features.transpose() * DMatrix::from_diagonal(&self.mu) * &self.features
    }
}

impl Oracle for TdLinearFaOracle {
    fn dimension(&self) -> usize {
        self.problem.dimension()
    }

    fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut OracleSample) {
        let d = self.dimension();
        let gamma = self.mrp.discount_gamma;
        let mu: Vec<f64> = self.mu.iter().copied().collect();

        let x = sample_categorical(rng, &mu);
        let row: Vec<f64> = self.mrp.transition_p.row(x).iter().copied().collect();
        let xp = sample_categorical(rng, &row);
        let phi_x = self.features.row(x);
        let phi_xp = self.features.row(xp);
        for i in 0..d {
            for j in 0..d {
                out.a_t[(i, j)] = phi_x[i] * (phi_x[j] - gamma * phi_xp[j]);
            }
        }

        let xr = sample_categorical(rng, &mu);
        let w = 1.0 - self.mrp.reward_r[xr].abs();
        let u: f64 = rng.random_range(-1.0..1.0);
        let reward = self.mrp.reward_r[xr] + w * u;
        let phi_r = self.features.row(xr);
        for i in 0..d {
            out.b_t[i] = reward * phi_r[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Minimax games
// ---------------------------------------------------------------------------

/// Builds the drift system of a convex-concave matrix game
/// `min_x max_y (1/2)[x y 1]^T P_full [x y 1]` and wraps it in an additive
/// Gaussian oracle with entrywise noise `noise_std`.
///
/// `payoff` is the `(n+m) x (n+m)` block `[[P_xx, P_xy], [P_xy^T, P_yy]]`.
/// Requires `P_xx >= 0` and `P_yy <= 0` (within tolerance); the zero-blocks
/// case produces a skew-symmetric drift, which is the critical regime.
pub fn minimax_oracle(
    payoff: &DMatrix<f64>,
    n: usize,
    c_x: &DVector<f64>,
    c_y: &DVector<f64>,
    noise_std: f64,
) -> Result<AdditiveGaussianOracle> {
    let total = payoff.nrows();
    if payoff.ncols() != total || n > total {
        return Err(Error::DimensionMismatch {
            expected: total,
            got: payoff.ncols(),
        });
    }
    let m = total - n;
    if c_x.len() != n || c_y.len() != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: c_x.len(),
        });
    }
    let p_xx = payoff.view((0, 0), (n, n)).into_owned();
    let p_xy = payoff.view((0, n), (n, m)).into_owned();
    let p_yy = payoff.view((n, n), (m, m)).into_owned();

    let tol = 1e-10;
    if n > 0 {
        let sym_xx = (&p_xx + p_xx.transpose()) * 0.5;
        let min_xx = sym_xx
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_xx < -tol {
            return Err(Error::NotConvexConcave(format!(
                "P_xx has eigenvalue {min_xx:.3e} < 0"
            )));
        }
    }
    if m > 0 {
        let sym_yy = (&p_yy + p_yy.transpose()) * 0.5;
        let max_yy = sym_yy
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if max_yy > tol {
            return Err(Error::NotConvexConcave(format!(
                "P_yy has eigenvalue {max_yy:.3e} > 0"
            )));
        }
    }

    let d = n + m;
    let mut a_bar = DMatrix::zeros(d, d);
    a_bar.view_mut((0, 0), (n, n)).copy_from(&p_xx);
    a_bar.view_mut((0, n), (n, m)).copy_from(&p_xy);
    a_bar
        .view_mut((n, 0), (m, n))
        .copy_from(&(-p_xy.transpose()));
    a_bar.view_mut((n, n), (m, m)).copy_from(&(-p_yy));
    let mut b_bar = DVector::zeros(d);
    for i in 0..n {
        b_bar[i] = -c_x[i];
    }
    for i in 0..m {
        b_bar[n + i] = c_y[i];
    }
    let problem = ProblemSpec::new(a_bar, b_bar)?;
    Ok(AdditiveGaussianOracle::new(problem, noise_std, noise_std))
}

// ---------------------------------------------------------------------------
// Momentum lifting
// ---------------------------------------------------------------------------

/// Heavy-ball lifting of a base oracle to dimension `2d`:
///
/// ```text
/// A~_t = [ 0      I          ]      b~_t = [  0   ]
///        [ -A_t   aI + e A_t ]             [ -b_t ]
/// ```
///
/// The lifted fixed point is `[theta*, 0]`, and the lifted noise constants
/// scale as `(sqrt(1 + eta^2) sigma_A, sigma_b)`.
pub struct MomentumLiftedOracle<O: Oracle> {
    base: O,
    alpha: f64,
    eta: f64,
    problem: ProblemSpec,
}

impl<O: Oracle> MomentumLiftedOracle<O> {
    pub fn new(base: O, alpha: f64, eta: f64) -> Result<Self> {
        assert!(alpha > 0.0 && eta > 0.0, "need alpha > 0 and eta > 0");
        let d = base.dimension();
        let lifted_a = lift_matrix(base.problem().a_bar(), alpha, eta);
        let mut lifted_b = DVector::zeros(2 * d);
        for i in 0..d {
            lifted_b[d + i] = -base.problem().b_bar()[i];
        }
        let problem = ProblemSpec::new(lifted_a, lifted_b)?;
        Ok(Self {
            base,
            alpha,
            eta,
            problem,
        })
    }

    pub fn base(&self) -> &O {
        &self.base
    }
}

/// The lifted drift matrix of the momentum update.
pub fn lift_matrix(a_bar: &DMatrix<f64>, alpha: f64, eta: f64) -> DMatrix<f64> {
    let d = a_bar.nrows();
    let mut lifted = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        lifted[(i, d + i)] = 1.0;
        lifted[(d + i, d + i)] = alpha;
    }
    for i in 0..d {
        for j in 0..d {
            lifted[(d + i, j)] = -a_bar[(i, j)];
            lifted[(d + i, d + j)] += eta * a_bar[(i, j)];
        }
    }
    lifted
}

impl<O: Oracle> Oracle for MomentumLiftedOracle<O> {
    fn dimension(&self) -> usize {
        2 * self.base.dimension()
    }

    fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut OracleSample) {
        let d = self.base.dimension();
        let s = self.base.sample(rng);
        out.a_t.fill(0.0);
        for i in 0..d {
            out.a_t[(i, d + i)] = 1.0;
            out.a_t[(d + i, d + i)] = self.alpha;
        }
        for i in 0..d {
            for j in 0..d {
                out.a_t[(d + i, j)] = -s.a_t[(i, j)];
                out.a_t[(d + i, d + j)] += self.eta * s.a_t[(i, j)];
            }
        }
        out.b_t.fill(0.0);
        for i in 0..d {
            out.b_t[d + i] = -s.b_t[i];
        }
    }

    fn noise_model(&self) -> Option<NoiseModel> {
        let base = self.base.noise_model()?;
        let d = self.base.dimension();
        // Xi~ = B Xi C with B = [0; I] (2d x d) and C = [-I, eta I] (d x 2d),
        // so E[Xi~ (x) Xi~] = (B (x) B) E[Xi (x) Xi] (C (x) C).
        let mut b = DMatrix::zeros(2 * d, d);
        for i in 0..d {
            b[(d + i, i)] = 1.0;
        }
        let mut c = DMatrix::zeros(d, 2 * d);
        for i in 0..d {
            c[(i, i)] = -1.0;
            c[(i, d + i)] = self.eta;
        }
        let k_lift = kron(&b, &b) * &base.xi_second_moment * kron(&c, &c);
        let cov_lift = &b * &base.cov_xi * b.transpose();
        let scale2 = 1.0 + self.eta * self.eta;
        Some(NoiseModel {
            cov_xi: cov_lift,
            xi_second_moment: k_lift,
            v_a2: base.v_a2 * scale2,
            v_b2: base.v_b2,
            sigma_a: base.sigma_a * scale2.sqrt(),
            sigma_b: base.sigma_b,
            alpha: base.alpha,
            beta: base.beta,
            source: base.source,
        })
    }
}

// ---------------------------------------------------------------------------
// Non-diagonalizable critical counterexample
// ---------------------------------------------------------------------------

/// Deterministic oracle over real dimension `2d` embedding the complex
/// matrix `-i I_d - J_d` (a full Jordan block at `-i`) as
/// `[[Re, -Im], [Im, Re]]`. Its eigenvalues all satisfy `|l| = 1` and
/// `Re(l) = 0`, the matrix is not diagonalizable, and the averaged iterates
/// started from the canonical initial point stay at distance at least 1/2
/// from the solution `theta* = 0` forever, for every positive step size.
/// The embedding preserves Euclidean norms, so the lower bound transfers
/// from the complex construction verbatim.
#[derive(Debug, Clone)]
pub struct CounterexampleOracle {
    problem: ProblemSpec,
    half_dim: usize,
}

impl CounterexampleOracle {
    pub fn new(half_dim: usize) -> Result<Self> {
        assert!(half_dim >= 2, "the construction needs d >= 2");
        let d = half_dim;
        // Re(A) = -J_d, Im(A) = -I_d.
        let mut a = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            a[(i, d + i)] = 1.0; // top-right block is -Im = I
            a[(d + i, i)] = -1.0; // bottom-left block is Im = -I
        }
        for i in 0..d - 1 {
            a[(i, i + 1)] = -1.0; // Re = -J in both diagonal blocks
            a[(d + i, d + i + 1)] = -1.0;
        }
        let problem = ProblemSpec::new(a, DVector::zeros(2 * d))?;
        Ok(Self { problem, half_dim })
    }

    /// The embedding of the complex initial vector `[0, ..., 0, 1]`.
    pub fn initial_point(&self) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.half_dim);
        v[self.half_dim - 1] = 1.0;
        v
    }
}

impl Oracle for CounterexampleOracle {
    fn dimension(&self) -> usize {
        2 * self.half_dim
    }

    fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    fn sample_into(&self, _rng: &mut ChaCha8Rng, out: &mut OracleSample) {
        out.a_t.copy_from(self.problem.a_bar());
        out.b_t.copy_from(self.problem.b_bar());
    }

    fn noise_model(&self) -> Option<NoiseModel> {
        Some(NoiseModel::zero(self.dimension()))
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo noise-model estimation
// ---------------------------------------------------------------------------

/// Estimates the noise descriptors by simulation when the oracle has no
/// closed form. Directional second moments are maximized over 100 random
/// unit directions; tail exponents come from a log-log fit of the moment
/// growth at p = 2, 4, 6, 8.
pub fn estimate_noise_model(
    oracle: &dyn Oracle,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> NoiseModel {
    if let Some(m) = oracle.noise_model() {
        return m;
    }
    assert!(n_samples >= 1000, "need at least 1000 samples");
    let d = oracle.dimension();
    let a_bar = oracle.problem().a_bar();
    let b_bar = oracle.problem().b_bar();
    let dd = d * d;

    let mut cov_xi = DMatrix::zeros(d, d);
    let mut raw = DMatrix::zeros(dd, dd); // E[vec(Xi) vec(Xi)^T]
    let mut gram_a = DMatrix::zeros(d, d); // E[Xi^T Xi]
    let mut sample = OracleSample::zeros(d);

    // Moment accumulators for the tail fit, along a fixed probe direction.
    let probe = {
        let mut v = DVector::zeros(d);
        v[0] = 1.0;
        v
    };
    let ps = [2.0, 4.0, 6.0, 8.0];
    let mut a_moments = [0.0f64; 4];
    let mut b_moments = [0.0f64; 4];

    for _ in 0..n_samples {
        oracle.sample_into(rng, &mut sample);
        let xi_a = &sample.a_t - a_bar;
        let xi_b = &sample.b_t - b_bar;
        cov_xi += &xi_b * xi_b.transpose();
        let v = vec_mat(&xi_a);
        raw += &v * v.transpose();
        gram_a += xi_a.transpose() * &xi_a;
        let na = (&xi_a * &probe).norm();
        let nb = xi_b.dot(&probe).abs();
        for (i, p) in ps.iter().enumerate() {
            a_moments[i] += na.powf(*p);
            b_moments[i] += nb.powf(*p);
        }
    }
    let n = n_samples as f64;
    cov_xi /= n;
    cov_xi = (&cov_xi + cov_xi.transpose()) * 0.5;
    raw /= n;
    gram_a /= n;

    // Reindex E[vec(Xi) vec(Xi)^T] into the operator layout: the quadratic
    // form needs E[Xi M Xi^T]_{ik} = sum_{jl} E[Xi_ij Xi_kl] M_jl, i.e. the
    // entry E[Xi_ij Xi_kl] must sit at (k*d + i, l*d + j).
    let mut k_op = DMatrix::zeros(dd, dd);
    for i in 0..d {
        for j in 0..d {
            for kk in 0..d {
                for l in 0..d {
                    let second_moment = raw[(j * d + i, l * d + kk)];
                    k_op[(kk * d + i, l * d + j)] += second_moment;
                }
            }
        }
    }

    let mut dir_rng = rng.clone();
    let mut v_a2: f64 = 0.0;
    let mut v_b2: f64 = 0.0;
    for _ in 0..100 {
        let mut u = DVector::from_fn(d, |_, _| dir_rng.sample::<f64, _>(StandardNormal));
        let nu = u.norm();
        if nu == 0.0 {
            continue;
        }
        u /= nu;
        v_a2 = v_a2.max((u.transpose() * &gram_a * &u)[(0, 0)]);
        v_b2 = v_b2.max((u.transpose() * &cov_xi * &u)[(0, 0)]);
    }

    let fit = |moments: &[f64; 4]| -> (f64, f64) {
        // log m_p = log sigma + alpha log p with m_p = (E|.|^p)^{1/p}.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, p) in ps.iter().enumerate() {
            let mp = (moments[i] / n).powf(1.0 / p);
            if mp > 0.0 {
                xs.push(p.ln());
                ys.push(mp.ln());
            }
        }
        if xs.len() < 2 {
            return (0.0, 0.0);
        }
        let nn = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / nn;
        let my = ys.iter().sum::<f64>() / nn;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs
            .iter()
            .zip(ys.iter())
            .map(|(x, y)| (x - mx) * (y - my))
            .sum();
        let alpha = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
        let sigma = (my - alpha * mx).exp();
        (sigma, alpha)
    };
    let (sigma_a, alpha) = fit(&a_moments);
    let (sigma_b, beta) = fit(&b_moments);

    NoiseModel {
        cov_xi,
        xi_second_moment: k_op,
        v_a2,
        v_b2,
        sigma_a,
        sigma_b,
        alpha,
        beta,
        source: NoiseSource::MonteCarlo { n_samples },
    }
}

/// Deterministic per-replicate seed derivation: a SplitMix64 finalizer over
/// the pair `(base_seed, index)`. Every replicate harness in the crate uses
/// this rule.
pub fn split_seed(base_seed: u64, index: u64) -> u64 {
    let mut z = base_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
