//! Exact covariance objects of the averaged estimator.
//!
//! Three matrices describe the constant-step-size chain and its average:
//!
//! * `Sigma* = cov(xi) + cov(Xi theta*)`, the driving-noise covariance at
//!   the solution;
//! * the stationary covariance `Lambda*_eta` of the iterate chain, the
//!   unique PSD solution of
//!   `A L + L A^T - eta A L A^T - eta E[Xi L Xi^T] = eta Sigma*`,
//!   solved here by flattening to the `d^2 x d^2` system
//!   `(I (x) A + A (x) I - eta A (x) A - eta E[Xi (x) Xi]) vec(L) = eta vec(Sigma*)`;
//! * the asymptotic covariance of `sqrt(T) (avg_T - theta*)`,
//!   `Gamma*(eta) = A^{-1} (Sigma* + E[Xi Lambda*_eta Xi^T]) A^{-T}`,
//!   which is the classical averaged-iterate limit `A^{-1} Sigma* A^{-T}`
//!   plus a PSD correction that scales with the step size.

use crate::error::{Error, Result};
use crate::linalg::{kron, rcond_2norm, unvec, vec_mat};
use crate::oracles::{NoiseModel, Oracle, OracleSample, ProblemSpec};
use crate::spectral::SpectralInfo;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Reciprocal-condition floor below which the flattened operator counts as
/// singular (the step size is at or over the stability threshold).
pub const SINGULAR_RCOND: f64 = 1e-12;

/// All covariance objects for one `(problem, noise, eta)` triple.
#[derive(Debug, Clone)]
pub struct CovarianceBundle {
    /// `Sigma* = cov(xi) + cov(Xi theta*)`.
    pub sigma_star: DMatrix<f64>,
    /// Stationary covariance of the iterate chain.
    pub lambda_eta: DMatrix<f64>,
    /// Asymptotic covariance of the scaled averaged error.
    pub gamma_eta: DMatrix<f64>,
    /// The classical limit `A^{-1} Sigma* A^{-T}` (no step-size correction).
    pub classical: DMatrix<f64>,
    pub eta: f64,
    /// Frobenius plug-back residual of the defining matrix equation.
    pub residual: f64,
    /// Reciprocal condition number of the flattened operator.
    pub rcond: f64,
}

/// `Sigma* = cov(xi) + cov(Xi theta*)`; the second term is the noise
/// quadratic form applied to `theta* theta*^T`.
pub fn sigma_star(problem: &ProblemSpec, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    let theta = problem.require_theta_star()?;
    let outer = theta * theta.transpose();
    let m = &noise.cov_xi + noise.xi_quadratic(&outer);
    Ok((&m + m.transpose()) * 0.5)
}

/// The flattened `d^2 x d^2` operator
/// `I (x) A + A (x) I - eta A (x) A - eta E[Xi (x) Xi]`.
pub fn stationarity_operator(problem: &ProblemSpec, noise: &NoiseModel, eta: f64) -> DMatrix<f64> {
    let d = problem.dimension();
    let a = problem.a_bar();
    let id = DMatrix::<f64>::identity(d, d);
    kron(&id, a) + kron(a, &id) - kron(a, a) * eta - &noise.xi_second_moment * eta
}

/// Solves the stationary-covariance equation for `Lambda*_eta`.
pub fn solve_stationary_cov(
    problem: &ProblemSpec,
    noise: &NoiseModel,
    eta: f64,
) -> Result<DMatrix<f64>> {
    assert!(eta > 0.0, "need eta > 0");
    let d = problem.dimension();
    let op = stationarity_operator(problem, noise, eta);
    let rcond = rcond_2norm(&op);
    if !rcond.is_finite() || rcond < SINGULAR_RCOND {
        return Err(Error::SingularOperator { rcond });
    }
    let rhs = vec_mat(&sigma_star(problem, noise)?) * eta;
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularOperator { rcond })?;
    let lambda = unvec(&sol, d);
    // The exact solution is symmetric; symmetrize away the solve drift,
    // then clamp round-off-negative eigenvalues.
    let lambda = (&lambda + lambda.transpose()) * 0.5;
    psd_repair(&lambda)
}

/// Plug-back residual `|A L + L A^T - eta A L A^T - eta E[Xi L Xi^T] -
/// eta Sigma*|_F` of a candidate stationary covariance.
pub fn stationary_residual(
    problem: &ProblemSpec,
    noise: &NoiseModel,
    eta: f64,
    lambda: &DMatrix<f64>,
) -> Result<f64> {
    let a = problem.a_bar();
    let sig = sigma_star(problem, noise)?;
    let lhs =
        a * lambda + lambda * a.transpose() - (a * lambda * a.transpose()) * eta
            - noise.xi_quadratic(lambda) * eta;
    Ok((lhs - sig * eta).norm())
}

/// `Gamma*(eta) = A^{-1} (Sigma* + E[Xi Lambda*_eta Xi^T]) A^{-T}`.
pub fn gamma_eta(problem: &ProblemSpec, noise: &NoiseModel, eta: f64) -> Result<DMatrix<f64>> {
    let lambda = solve_stationary_cov(problem, noise, eta)?;
    gamma_from_lambda(problem, noise, &lambda)
}

/// Same as [`gamma_eta`] with a pre-solved stationary covariance.
pub fn gamma_from_lambda(
    problem: &ProblemSpec,
    noise: &NoiseModel,
    lambda: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = problem.dimension();
    let inner = sigma_star(problem, noise)? + noise.xi_quadratic(lambda);
    let a_inv = problem
        .a_bar()
        .clone()
        .lu()
        .solve(&DMatrix::identity(d, d))
        .ok_or(Error::SingularDrift)?;
    let g = &a_inv * inner * a_inv.transpose();
    psd_repair(&((&g + g.transpose()) * 0.5))
}

/// The classical averaged-iterate covariance `A^{-1} Sigma* A^{-T}`.
pub fn classical_covariance(problem: &ProblemSpec, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    let d = problem.dimension();
    let a_inv = problem
        .a_bar()
        .clone()
        .lu()
        .solve(&DMatrix::identity(d, d))
        .ok_or(Error::SingularDrift)?;
    let g = &a_inv * sigma_star(problem, noise)? * a_inv.transpose();
    psd_repair(&((&g + g.transpose()) * 0.5))
}

/// Computes every covariance object at once.
pub fn bundle(problem: &ProblemSpec, noise: &NoiseModel, eta: f64) -> Result<CovarianceBundle> {
    let op = stationarity_operator(problem, noise, eta);
    let rcond = rcond_2norm(&op);
    if !rcond.is_finite() || rcond < SINGULAR_RCOND {
        return Err(Error::SingularOperator { rcond });
    }
    let lambda = solve_stationary_cov(problem, noise, eta)?;
    let residual = stationary_residual(problem, noise, eta, &lambda)?;
    Ok(CovarianceBundle {
        sigma_star: sigma_star(problem, noise)?,
        gamma_eta: gamma_from_lambda(problem, noise, &lambda)?,
        classical: classical_covariance(problem, noise)?,
        lambda_eta: lambda,
        eta,
        residual,
        rcond,
    })
}

/// Closed-form ceiling on the stationary second moment:
/// `kappa^2(U) (eta / l*) (v_A^2 |theta*|^2 + v_b^2 d)`.
/// `trace(Lambda*_eta)` must never exceed it.
pub fn stationary_moment_bound(
    problem: &ProblemSpec,
    spectral: &SpectralInfo,
    noise: &NoiseModel,
    eta: f64,
) -> Result<f64> {
    let theta = problem.require_theta_star()?;
    let d = problem.dimension() as f64;
    Ok(spectral.condition_number.powi(2) * (eta / spectral.spectral_gap)
        * (noise.v_a2 * theta.norm_squared() + noise.v_b2 * d))
}

/// Burn-in long enough for the chain to forget its start to within `tol`,
/// from the `exp(-l* eta T / 2)` contraction rate.
pub fn recommended_burn_in(spectral: &SpectralInfo, eta: f64, tol: f64) -> usize {
    assert!(tol > 0.0 && tol < 1.0);
    ((2.0 / (eta * spectral.spectral_gap)) * (1.0 / tol).ln()).ceil() as usize
}

/// Time-average mean and covariance of the chain after burn-in.
#[derive(Debug, Clone)]
pub struct EmpiricalStationary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n_samples: usize,
}

/// Single-long-chain Monte Carlo counterpart of [`solve_stationary_cov`]:
/// runs the recursion for `burn_in + n_samples` steps and returns the
/// time-average mean and covariance of the post-burn-in iterates (Welford
/// accumulation).
pub fn empirical_stationary_cov(
    oracle: &dyn Oracle,
    eta: f64,
    burn_in: usize,
    n_samples: usize,
    seed: u64,
) -> Result<EmpiricalStationary> {
    assert!(n_samples >= 2);
    let problem = oracle.problem();
    let d = problem.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = match problem.theta_star() {
        Some(t) => t.clone(),
        None => DVector::zeros(d),
    };
    let mut sample = OracleSample::zeros(d);
    let guard = 1e12;

    let mut mean = DVector::<f64>::zeros(d);
    let mut m2 = DMatrix::<f64>::zeros(d, d);
    let mut count = 0usize;

    for t in 0..(burn_in + n_samples) {
        if t >= burn_in {
            count += 1;
            let delta = &theta - &mean;
            mean += &delta / count as f64;
            let delta2 = &theta - &mean;
            m2 += delta * delta2.transpose();
        }
        oracle.sample_into(&mut rng, &mut sample);
        theta -= (&sample.a_t * &theta - &sample.b_t) * eta;
        let norm = theta.norm();
        if !norm.is_finite() || norm > guard {
            return Err(Error::Diverged {
                step: t + 1,
                norm,
                guard,
            });
        }
    }
    let cov = (&m2 + m2.transpose()) * (0.5 / (count as f64 - 1.0));
    Ok(EmpiricalStationary {
        mean,
        cov,
        n_samples: count,
    })
}

/// Clamps eigenvalues in `(-tau, 0)` to zero, where `tau` is a round-off
/// allowance scaled to the matrix; anything more negative is an error, not
/// repaired.
fn psd_repair(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.norm().max(1.0);
    let tau = 1e-10 * scale;
    let se = m.clone().symmetric_eigen();
    let min_eig = se.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig <= -tau {
        return Err(Error::NotPositiveSemidefinite { min_eig });
    }
    if min_eig >= 0.0 {
        return Ok(m.clone());
    }
    let mut vals = se.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let rebuilt = &se.eigenvectors * DMatrix::from_diagonal(&vals) * se.eigenvectors.transpose();
    Ok((&rebuilt + rebuilt.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{AdditiveGaussianOracle, GaussianRegressionOracle, NoiseSource};
    use crate::spectral::{analyze, DEFAULT_TOL};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn scalar_problem(a: f64) -> ProblemSpec {
        ProblemSpec::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, 0.0)).unwrap()
    }

    fn b_noise_model(d: usize, var: f64) -> NoiseModel {
        let mut m = NoiseModel::zero(d);
        m.cov_xi = DMatrix::identity(d, d) * var;
        m.v_b2 = var;
        m.sigma_b = var.sqrt();
        m.beta = 0.5;
        m
    }

    #[test]
    fn scalar_closed_form() {
        // a = 1, sigma^2 = 1, eta = 0.1: L = eta/(2a - eta a^2) = 0.1/1.9.
        let problem = scalar_problem(1.0);
        let noise = b_noise_model(1, 1.0);
        let lambda = solve_stationary_cov(&problem, &noise, 0.1).unwrap();
        assert_relative_eq!(lambda[(0, 0)], 0.1 / 1.9, epsilon = 1e-12);
    }

    #[test]
    fn zero_noise_gives_zero_covariance() {
        let problem = scalar_problem(1.0);
        let noise = NoiseModel::zero(1);
        let lambda = solve_stationary_cov(&problem, &noise, 0.1).unwrap();
        assert_eq!(lambda[(0, 0)], 0.0);
    }

    #[test]
    fn identity_2d_decouples() {
        let problem =
            ProblemSpec::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let noise = b_noise_model(2, 1.0);
        let lambda = solve_stationary_cov(&problem, &noise, 0.1).unwrap();
        let expected = 0.1 / 1.9;
        assert_relative_eq!(lambda[(0, 0)], expected, epsilon = 1e-12);
        assert_relative_eq!(lambda[(1, 1)], expected, epsilon = 1e-12);
        assert!(lambda[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn sigma_star_examples() {
        // No A-noise: Sigma* = cov(xi).
        let problem = ProblemSpec::new(
            DMatrix::identity(2, 2),
            DVector::from_row_slice(&[1.0, 2.0]),
        )
        .unwrap();
        let noise = b_noise_model(2, 0.5);
        let s = sigma_star(&problem, &noise).unwrap();
        assert_relative_eq!(s, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-14);

        // theta* = 0: Sigma* = cov(xi) regardless of A-noise.
        let problem0 = ProblemSpec::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let oracle = AdditiveGaussianOracle::new(problem0.clone(), 0.7, 0.5);
        let nm = oracle.noise_model().unwrap();
        let s0 = sigma_star(&problem0, &nm).unwrap();
        assert_relative_eq!(s0, DMatrix::identity(2, 2) * 0.25, epsilon = 1e-14);

        // d = 1, E[Xi^2] = s^2, theta* = c: Sigma* = sigma_xi^2 + s^2 c^2.
        let problem1 = ProblemSpec::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 3.0),
        )
        .unwrap();
        let oracle1 = AdditiveGaussianOracle::new(problem1.clone(), 0.5, 2.0);
        let nm1 = oracle1.noise_model().unwrap();
        let s1 = sigma_star(&problem1, &nm1).unwrap();
        assert_relative_eq!(s1[(0, 0)], 4.0 + 0.25 * 9.0, epsilon = 1e-12);
    }

    #[test]
    fn gamma_equals_classical_without_a_noise() {
        let problem = ProblemSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 2.0]),
            DVector::from_row_slice(&[1.0, 1.0]),
        )
        .unwrap();
        let noise = b_noise_model(2, 1.0);
        for eta in [0.3, 0.1, 0.02] {
            let g = gamma_eta(&problem, &noise, eta).unwrap();
            let c = classical_covariance(&problem, &noise).unwrap();
            assert_relative_eq!(g, c, epsilon = 1e-10);
        }
        // Scalar sanity: A = 1, sigma^2 = 1 gives Gamma* = 1.
        let g1 = gamma_eta(&scalar_problem(1.0), &b_noise_model(1, 1.0), 0.1).unwrap();
        assert_relative_eq!(g1[(0, 0)], 1.0, epsilon = 1e-12);
    }

    /// Random Hurwitz drift: SPD symmetric part plus a skew part, so the
    /// spectral gap is at least the SPD margin.
    fn random_hurwitz(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let spd = &g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
        let k = DMatrix::from_fn(d, d, |i, j| {
            if i < j {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let skew = &k - k.transpose();
        spd + skew
    }

    #[test]
    fn plugback_residual_on_random_instances_with_a_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(911);
        for trial in 0..100 {
            let d = 2 + (trial % 5); // 2..=6
            let a = random_hurwitz(d, &mut rng);
            let b = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let problem = ProblemSpec::new(a, b).unwrap();
            let oracle = AdditiveGaussianOracle::new(problem.clone(), 0.1, 0.5);
            let noise = oracle.noise_model().unwrap();
            let info = analyze(problem.a_bar(), DEFAULT_TOL).unwrap();
            let eta_cap = info.spectral_gap
                / (info.spectral_radius.powi(2)
                    + info.condition_number.powi(2) * noise.v_a2);
            let eta = 0.5 * eta_cap;
            let lambda = solve_stationary_cov(&problem, &noise, eta).unwrap();
            let res = stationary_residual(&problem, &noise, eta, &lambda).unwrap();
            let scale = (sigma_star(&problem, &noise).unwrap() * eta).norm();
            assert!(
                res <= 1e-9 * scale.max(f64::MIN_POSITIVE),
                "trial {trial}: residual {res:.3e} vs scale {scale:.3e}"
            );
            // Trace never exceeds the closed-form stationary moment bound.
            let bound = stationary_moment_bound(&problem, &info, &noise, eta).unwrap();
            assert!(
                lambda.trace() <= bound + 1e-12,
                "trial {trial}: trace {} > bound {}",
                lambda.trace(),
                bound
            );
        }
    }

    #[test]
    fn monotone_in_eta_scalar() {
        let problem = scalar_problem(1.0);
        let noise = b_noise_model(1, 1.0);
        let mut last = 0.0;
        for k in 1..=15 {
            let eta = 0.1 * k as f64; // up to 1.5 < threshold 2/a
            let lambda = solve_stationary_cov(&problem, &noise, eta).unwrap()[(0, 0)];
            assert!(lambda > last, "eta = {eta}");
            assert_relative_eq!(lambda, eta / (2.0 - eta), epsilon = 1e-10);
            last = lambda;
        }
    }

    #[test]
    fn singular_operator_at_threshold() {
        // Scalar threshold is eta = 2/a; the operator 2a - eta a^2 hits 0.
        let problem = scalar_problem(1.0);
        let noise = b_noise_model(1, 1.0);
        assert!(matches!(
            solve_stationary_cov(&problem, &noise, 2.0),
            Err(Error::SingularOperator { .. })
        ));
    }

    #[test]
    fn gamma_step_correction_decays_linearly() {
        // With A-noise, |Gamma(eta) - classical| scales like eta: halving
        // eta halves the gap (Richardson-style check).
        let theta = DVector::from_row_slice(&[1.0, -1.0]);
        let oracle = GaussianRegressionOracle::new(theta, 1.0).unwrap();
        let problem = oracle.problem();
        let noise = oracle.noise_model().unwrap();
        let classical = classical_covariance(problem, &noise).unwrap();
        let gaps: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&eta| {
                let g = gamma_eta(problem, &noise, eta).unwrap();
                (g - &classical).norm() / classical.norm()
            })
            .collect();
        for w in gaps.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (ratio - 2.0).abs() < 0.15,
                "gap ratio {ratio} not within 15% of 2"
            );
        }
        // The correction is PSD: Gamma(eta) >= classical.
        let g = gamma_eta(problem, &noise, 1e-2).unwrap();
        let diff = &g - &classical;
        let min_eig = diff
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-10, "min eig of correction = {min_eig}");
    }

    #[test]
    fn bundle_is_consistent() {
        let problem = ProblemSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.5, 0.2, -0.1, 1.0]),
            DVector::from_row_slice(&[0.5, -0.5]),
        )
        .unwrap();
        let oracle = AdditiveGaussianOracle::new(problem.clone(), 0.2, 1.0);
        let noise = oracle.noise_model().unwrap();
        let b = bundle(&problem, &noise, 0.05).unwrap();
        assert!(b.residual <= 1e-9 * (b.sigma_star.norm() * b.eta));
        assert!(b.rcond > SINGULAR_RCOND);
        for m in [&b.sigma_star, &b.lambda_eta, &b.gamma_eta, &b.classical] {
            assert_relative_eq!(m, &m.transpose(), epsilon = 1e-10);
        }
        assert!(b.source_matches());
    }

    #[test]
    fn empirical_stationary_cov_matches_closed_form() {
        // Scalar benchmark at reduced sample size for the unit test; the
        // acceptance suite runs the 1e6-sample version.
        let problem = scalar_problem(1.0);
        let oracle = AdditiveGaussianOracle::new(problem.clone(), 0.0, 1.0);
        let info = analyze(problem.a_bar(), DEFAULT_TOL).unwrap();
        let eta = 0.1;
        let burn = recommended_burn_in(&info, eta, 1e-8);
        let est = empirical_stationary_cov(&oracle, eta, burn, 200_000, 99).unwrap();
        let closed = 0.1 / 1.9;
        assert!(
            (est.cov[(0, 0)] - closed).abs() / closed < 0.10,
            "empirical {} vs closed form {}",
            est.cov[(0, 0)],
            closed
        );
        // Time-average mean near theta* = 0.
        assert!(est.mean[0].abs() < 0.01);
    }

    impl CovarianceBundle {
        fn source_matches(&self) -> bool {
            // gamma >= classical - tol: the correction term is PSD.
            let diff = &self.gamma_eta - &self.classical;
            diff.symmetric_eigen()
                .eigenvalues
                .iter()
                .all(|&e| e >= -1e-10)
        }
    }

    #[test]
    fn noise_source_is_analytic_for_builtins() {
        let problem = scalar_problem(1.0);
        let oracle = AdditiveGaussianOracle::new(problem, 0.1, 1.0);
        assert_eq!(oracle.noise_model().unwrap().source, NoiseSource::Analytic);
    }
}
