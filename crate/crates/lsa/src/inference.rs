//! Non-asymptotic deviation quantities and confidence sets.
//!
//! The high-probability bound for the averaged iterates has a leading term
//! governed by the asymptotic covariance and a deviation term
//!
//! `Delta(T, d) = V(theta*) ((s_A + s_b)/T^{1/4}
//!                + (1 + sqrt(s_A/l*))/(eta sqrt(T)))
//!                * log^{2 max(a, b) + 2}(T/d)`
//!
//! with
//!
//! `V(theta*) = kappa^2(U)/min_i |l_i|
//!              (|theta* - theta_0| + |theta*|
//!               + sqrt(eta/l*)(s_A |theta*| + s_b sqrt(d)))`.
//!
//! Both are transcribed literally; the universal constants multiplying them
//! are never specified by the theory, so they are caller-supplied (default
//! 1) and `coverage_study` calibrates them empirically.

use crate::covariance::CovarianceBundle;
use crate::error::{Error, Result};
use crate::oracles::{LinftyCertificate, NoiseModel, Oracle, ProblemSpec};
use crate::sim::{run_replicates, RunConfig};
use crate::spectral::{Regime, SpectralInfo};
use nalgebra::{DMatrix, DVector};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Tail parameters of the observation noise.
#[derive(Debug, Clone, Copy)]
pub struct TailParams {
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl TailParams {
    pub fn from_noise(noise: &NoiseModel) -> Self {
        Self {
            sigma_a: noise.sigma_a,
            sigma_b: noise.sigma_b,
            alpha: noise.alpha,
            beta: noise.beta,
        }
    }
}

/// The scale factor `V(theta*)` and deviation term `Delta(T, delta)`.
#[derive(Debug, Clone)]
pub struct DeviationTerms {
    pub v_theta: f64,
    pub delta_term: f64,
    pub horizon: usize,
    pub confidence: f64,
    pub eta: f64,
    pub tail: TailParams,
}

/// Evaluates `V(theta*)` and `Delta(T, delta)` literally.
pub fn deviation_terms(
    problem: &ProblemSpec,
    spectral: &SpectralInfo,
    noise: &NoiseModel,
    theta0: &DVector<f64>,
    eta: f64,
    horizon: usize,
    confidence: f64,
) -> Result<DeviationTerms> {
    if spectral.regime != Regime::Hurwitz {
        return Err(Error::NotHurwitz(spectral.regime));
    }
    assert!(horizon >= 1 && confidence > 0.0 && confidence < 1.0);
    let theta_star = problem.require_theta_star()?;
    let d = problem.dimension() as f64;
    let tail = TailParams::from_noise(noise);
    let kappa2 = spectral.condition_number.powi(2);
    let min_abs = spectral.min_abs_eigenvalue();
    let gap = spectral.spectral_gap;

    let v_theta = kappa2 / min_abs
        * ((theta_star - theta0).norm()
            + theta_star.norm()
            + (eta / gap).sqrt() * (tail.sigma_a * theta_star.norm() + tail.sigma_b * d.sqrt()));

    let t = horizon as f64;
    let log_exp = 2.0 * tail.alpha.max(tail.beta) + 2.0;
    let delta_term = v_theta
        * ((tail.sigma_a + tail.sigma_b) / t.powf(0.25)
            + (1.0 + (tail.sigma_a / gap).sqrt()) / (eta * t.sqrt()))
        * (t / confidence).ln().powf(log_exp);

    Ok(DeviationTerms {
        v_theta,
        delta_term,
        horizon,
        confidence,
        eta,
        tail,
    })
}

/// Confidence set `{theta : |theta - center|_B <= radius}` with
/// `B = Gamma*(eta) log(d/delta) + Delta(T, delta/d) I` and
/// `radius = c sqrt(d/T)`.
#[derive(Debug, Clone)]
pub struct ConfidenceEllipse {
    pub center: DVector<f64>,
    pub shape_b: DMatrix<f64>,
    pub radius: f64,
    pub c_constant: f64,
}

impl ConfidenceEllipse {
    pub fn weighted_norm(&self, theta: &DVector<f64>) -> f64 {
        let diff = theta - &self.center;
        (diff.transpose() * &self.shape_b * &diff)[(0, 0)].max(0.0).sqrt()
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        self.weighted_norm(theta) <= self.radius
    }
}

/// Builds the confidence ellipse around an averaged iterate. `dev_over_d`
/// must be the deviation terms evaluated at confidence `delta / d` (the
/// union bound over coordinates); use [`ellipse_for`] to get both in one
/// call.
pub fn ellipse(
    bundle: &CovarianceBundle,
    dev_over_d: &DeviationTerms,
    theta_bar: &DVector<f64>,
    delta: f64,
    c: f64,
) -> ConfidenceEllipse {
    assert!(c > 0.0, "the scale constant must be positive");
    let d = theta_bar.len() as f64;
    let shape_b = &bundle.gamma_eta * (d / delta).ln()
        + DMatrix::identity(theta_bar.len(), theta_bar.len()) * dev_over_d.delta_term;
    ConfidenceEllipse {
        center: theta_bar.clone(),
        shape_b,
        radius: c * (d / dev_over_d.horizon as f64).sqrt(),
        c_constant: c,
    }
}

/// Convenience wrapper: evaluates the deviation terms at `delta/d` and
/// assembles the ellipse.
#[allow(clippy::too_many_arguments)]
pub fn ellipse_for(
    problem: &ProblemSpec,
    spectral: &SpectralInfo,
    noise: &NoiseModel,
    bundle: &CovarianceBundle,
    theta0: &DVector<f64>,
    theta_bar: &DVector<f64>,
    horizon: usize,
    delta: f64,
    c: f64,
) -> Result<ConfidenceEllipse> {
    let d = problem.dimension() as f64;
    let dev = deviation_terms(problem, spectral, noise, theta0, bundle.eta, horizon, delta / d)?;
    Ok(ellipse(bundle, &dev, theta_bar, delta, c))
}

/// `Q(v; delta) = inf { q : sum_j exp(-q / v_j) <= delta }`, by monotone
/// bisection on `[0, max_j v_j log(d/delta)]`. At the upper end every term
/// is at most `delta/d`, so the bracket always contains the root.
pub fn q_functional(v: &[f64], delta: f64) -> f64 {
    assert!(!v.is_empty(), "need at least one entry");
    assert!(v.iter().all(|&x| x > 0.0), "entries must be positive");
    assert!(delta > 0.0 && delta < 1.0);
    let d = v.len() as f64;
    let vmax = v.iter().copied().fold(0.0, f64::max);
    let mut lo = 0.0f64;
    let mut hi = vmax * (d / delta).ln();
    let sum_at = |q: f64| v.iter().map(|&vj| (-q / vj).exp()).sum::<f64>();
    debug_assert!(sum_at(hi) <= delta * (1.0 + 1e-12));
    let tol = 1e-10 * vmax;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// The additive terms of the coordinate-wise high-probability bound on
/// `sqrt(T) |avg_T - theta*|_inf` for oracles with the almost-sure
/// sup-norm contraction certificate.
#[derive(Debug, Clone)]
pub struct LinftyBoundTerms {
    /// `max_j Gamma*(eta)_jj`.
    pub sigma2_max: f64,
    /// `sqrt(sigma2_max log(d/delta))`.
    pub leading: f64,
    /// `(lb^{-2} eta + lb^{-1}) T^{-1/4} sqrt(log(d/delta))`.
    pub concentration: f64,
    /// `lb^{-5/2} / (eta sqrt(T))`.
    pub ergodic: f64,
    /// `Q(diag Gamma*; delta)`, the union-bound refinement of
    /// `sigma2_max log(d/delta)`.
    pub refined_q: f64,
}

/// Evaluates the three bound terms plus the refined leading term. Errors
/// when the oracle carries no contraction certificate.
pub fn linfty_bound_terms(
    bundle: &CovarianceBundle,
    certificate: Option<LinftyCertificate>,
    eta: f64,
    horizon: usize,
    delta: f64,
) -> Result<LinftyBoundTerms> {
    let cert = certificate.ok_or(Error::ContractNotCertified)?;
    let lb = cert.lambda_bar;
    assert!(lb > 0.0 && horizon >= 1 && delta > 0.0 && delta < 1.0);
    let d = bundle.gamma_eta.nrows() as f64;
    let t = horizon as f64;
    let diag: Vec<f64> = bundle.gamma_eta.diagonal().iter().copied().collect();
    let sigma2_max = diag.iter().copied().fold(0.0, f64::max);
    let log_d = (d / delta).ln();
    // Zero-variance coordinates contribute nothing for any q > 0; dropping
    // them realizes the v -> 0+ limit of the defining sum.
    let positive: Vec<f64> = diag.iter().copied().filter(|&x| x > 0.0).collect();
    let refined_q = if positive.is_empty() {
        0.0
    } else {
        q_functional(&positive, delta)
    };
    Ok(LinftyBoundTerms {
        sigma2_max,
        leading: (sigma2_max * log_d).sqrt(),
        concentration: (eta / (lb * lb) + 1.0 / lb) / t.powf(0.25) * log_d.sqrt(),
        ergodic: lb.powf(-2.5) / (eta * t.sqrt()),
        refined_q,
    })
}

/// One row of an empirical coverage table.
#[derive(Debug, Clone)]
pub struct CoverageRow {
    pub c: f64,
    pub coverage: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

#[derive(Debug, Clone)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
    pub n_replicates: usize,
    pub delta: f64,
    pub horizon: usize,
}

impl CoverageTable {
    /// Smallest grid constant reaching the target coverage, if any.
    pub fn smallest_c_reaching(&self, target: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.coverage >= target)
            .map(|r| r.c)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "c,coverage,wilson_lo,wilson_hi")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:?},{:?},{:?},{:?}",
                r.c, r.coverage, r.wilson_lo, r.wilson_hi
            )?;
        }
        Ok(())
    }
}

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054f64;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Empirical coverage of the confidence ellipse across a grid of scale
/// constants: for each replicate the averaged iterate defines an ellipse,
/// and the table reports the fraction containing `theta*`.
pub fn coverage_study(
    oracle: &dyn Oracle,
    noise: &NoiseModel,
    config: &RunConfig,
    delta: f64,
    c_grid: &[f64],
    n_replicates: usize,
) -> Result<CoverageTable> {
    let problem = oracle.problem();
    let theta_star = problem.require_theta_star()?.clone();
    let d = problem.dimension() as f64;
    let spectral = crate::spectral::analyze(problem.a_bar(), crate::spectral::DEFAULT_TOL)?;
    if spectral.regime != Regime::Hurwitz {
        return Err(Error::NotHurwitz(spectral.regime));
    }
    let bundle = crate::covariance::bundle(problem, noise, config.eta)?;
    let dev = deviation_terms(
        problem,
        &spectral,
        noise,
        &config.theta0,
        config.eta,
        config.horizon,
        delta / d,
    )?;
    let shape_b = &bundle.gamma_eta * (d / delta).ln()
        + DMatrix::identity(problem.dimension(), problem.dimension()) * dev.delta_term;

    let study = run_replicates(oracle, config, n_replicates)?;
    let norms: Vec<f64> = {
        let compute = |avg: &DVector<f64>| -> f64 {
            let diff = &theta_star - avg;
            (diff.transpose() * &shape_b * &diff)[(0, 0)].max(0.0).sqrt()
        };
        #[cfg(feature = "parallel")]
        {
            study.per_replicate_avg.par_iter().map(compute).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            study.per_replicate_avg.iter().map(compute).collect()
        }
    };

    let n = norms.len();
    let sqrt_dt = (d / config.horizon as f64).sqrt();
    let mut rows = Vec::with_capacity(c_grid.len());
    for &c in c_grid {
        let hits = norms.iter().filter(|&&m| m <= c * sqrt_dt).count();
        let (lo, hi) = wilson_interval(hits, n);
        rows.push(CoverageRow {
            c,
            coverage: hits as f64 / n as f64,
            wilson_lo: lo,
            wilson_hi: hi,
        });
    }
    Ok(CoverageTable {
        rows,
        n_replicates: n,
        delta,
        horizon: config.horizon,
    })
}
