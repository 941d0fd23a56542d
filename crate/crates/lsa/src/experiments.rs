//! Packaged Monte Carlo studies that confront the covariance and rate
//! predictions with simulation at desk scale.
//!
//! Every study consumes a serializable config, derives a deterministic
//! digest from it, and emits a [`StudyReport`] whose bytes depend only on
//! the config (seeds included). There are no timestamps anywhere in the
//! outputs.

use crate::covariance;
use crate::error::{Error, Result};
use crate::inference;
use crate::linalg::{log_normal_cdf, matched_eigenvalue_distance, C64};
use crate::oracles::{
    estimate_noise_model, lift_matrix, split_seed, ExactTdOracle, MomentumLiftedOracle, MrpSpec,
    NoiseModel, Oracle, OracleSample, ProblemSpec, TdLinearFaOracle,
};
use crate::sim::{self, RunConfig};
use crate::spectral::{self, Regime, SpectralInfo, DEFAULT_TOL};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// 1% critical value of the Anderson-Darling statistic against a fully
/// specified continuous distribution (Stephens' asymptotic table).
pub const AD_CRITICAL_1PCT: f64 = 3.857;

/// A scalar result with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Metric {
    pub value: f64,
    pub mc_stderr: f64,
}

impl Metric {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            mc_stderr: 0.0,
        }
    }
}

/// Outcome of one study: named metrics, named pass/fail verdicts, and the
/// artifact files written (relative to the study directory).
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub study_id: String,
    pub config_digest: String,
    pub metrics: BTreeMap<String, Metric>,
    pub verdicts: BTreeMap<String, bool>,
    pub artifacts: Vec<String>,
}

impl StudyReport {
    fn new(study_id: &str, digest: String) -> Self {
        Self {
            study_id: study_id.to_string(),
            config_digest: digest,
            metrics: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.values().all(|&v| v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn metrics_csv(&self) -> String {
        let mut out = String::from("name,value,mc_stderr\n");
        for (name, m) in &self.metrics {
            out.push_str(&format!("{name},{:?},{:?}\n", m.value, m.mc_stderr));
        }
        out
    }
}

/// Deterministic study digest: SHA-256 over the study id and the canonical
/// JSON encoding of the config.
pub fn config_digest<T: Serialize>(study_id: &str, config: &T) -> String {
    let body = serde_json::to_string(config).expect("config serializes");
    let mut h = Sha256::new();
    h.update(study_id.as_bytes());
    h.update(b"\x00");
    h.update(body.as_bytes());
    h.finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>()
}

/// Writes `report.json`, `metrics.csv`, and (when given) per-replicate
/// averages to `<out_dir>/<digest-prefix>/`. Returns the study directory.
pub fn write_artifacts(
    report: &mut StudyReport,
    per_replicate: Option<&[DVector<f64>]>,
    out_dir: &Path,
) -> std::io::Result<PathBuf> {
    let dir = out_dir.join(&report.config_digest[..16]);
    std::fs::create_dir_all(&dir)?;
    report.artifacts = vec!["report.json".into(), "metrics.csv".into()];
    if per_replicate.is_some() {
        report.artifacts.push("replicates.csv".into());
    }
    if let Some(rows) = per_replicate {
        let mut f = std::fs::File::create(dir.join("replicates.csv"))?;
        if let Some(first) = rows.first() {
            write!(f, "replicate")?;
            for j in 1..=first.len() {
                write!(f, ",avg_{j}")?;
            }
            writeln!(f)?;
        }
        for (i, row) in rows.iter().enumerate() {
            write!(f, "{i}")?;
            for x in row.iter() {
                write!(f, ",{x:?}")?;
            }
            writeln!(f)?;
        }
    }
    std::fs::write(dir.join("metrics.csv"), report.metrics_csv())?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    Ok(dir)
}

/// Anderson-Darling statistic of a sample against the standard normal
/// (fully specified case).
pub fn anderson_darling(samples: &[f64]) -> f64 {
    let n = samples.len();
    assert!(n >= 2);
    let mut z: Vec<f64> = samples.to_vec();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let w = (2 * i + 1) as f64;
        acc += w * (log_normal_cdf(z[i]) + log_normal_cdf(-z[n - 1 - i]));
    }
    -nf - acc / nf
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    slope(&xs, &ys)
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    sxy / sxx
}

// ---------------------------------------------------------------------------
// CLT covariance matching
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CltStudyConfig {
    pub eta: f64,
    pub horizon: usize,
    pub n_replicates: usize,
    pub seed: u64,
    pub theta0: Vec<f64>,
    /// Unit directions to project on; defaults to the standard basis when
    /// empty.
    pub directions: Vec<Vec<f64>>,
    /// Accepted band for empirical/predicted variance ratios.
    pub ratio_band: (f64, f64),
    pub ad_critical: f64,
    /// Also check that the excess over the classical covariance matches the
    /// step-size correction term within 3 standard errors.
    pub check_correction: bool,
}

/// Compares the cross-replicate variance of the scaled averaged error
/// against the asymptotic covariance prediction, per direction, with an
/// Anderson-Darling normality diagnostic on the studentized samples.
pub fn clt_study(
    oracle: &dyn Oracle,
    noise: &NoiseModel,
    config: &CltStudyConfig,
    out_dir: Option<&Path>,
) -> Result<StudyReport> {
    let digest = config_digest("clt", config);
    let mut report = StudyReport::new("clt", digest);
    let problem = oracle.problem();
    let d = problem.dimension();

    let bundle = covariance::bundle(problem, noise, config.eta)?;
    let run_cfg = RunConfig::new(
        config.eta,
        config.horizon,
        DVector::from_column_slice(&config.theta0),
        config.seed,
    );
    let study = sim::run_replicates(oracle, &run_cfg, config.n_replicates)?;
    report.metrics.insert(
        "diverged_count".into(),
        Metric::exact(study.diverged_count as f64),
    );

    let directions: Vec<DVector<f64>> = if config.directions.is_empty() {
        (0..d)
            .map(|i| {
                let mut e = DVector::zeros(d);
                e[i] = 1.0;
                e
            })
            .collect()
    } else {
        config
            .directions
            .iter()
            .map(|v| DVector::from_column_slice(v).normalize())
            .collect()
    };

    let r = study.n_completed() as f64;
    for (k, v) in directions.iter().enumerate() {
        let xs = study
            .directional_errors(v)
            .ok_or(Error::SingularDrift)?;
        let mean = xs.iter().sum::<f64>() / r;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
        let predicted = (v.transpose() * &bundle.gamma_eta * v)[(0, 0)];

        if predicted <= 0.0 {
            // Degenerate direction: pass iff the empirical variance is zero
            // too (the zero-noise case).
            report
                .metrics
                .insert(format!("variance_dir{k}"), Metric::exact(var));
            report
                .verdicts
                .insert(format!("ratio_dir{k}_in_band"), var == 0.0);
            continue;
        }

        let ratio = var / predicted;
        // Var of a sample variance of near-Gaussians: 2 sigma^4 / (R - 1).
        let ratio_se = (2.0 / (r - 1.0)).sqrt() * ratio;
        report.metrics.insert(
            format!("variance_ratio_dir{k}"),
            Metric {
                value: ratio,
                mc_stderr: ratio_se,
            },
        );
        report.verdicts.insert(
            format!("ratio_dir{k}_in_band"),
            ratio >= config.ratio_band.0 && ratio <= config.ratio_band.1,
        );

        let studentized: Vec<f64> = xs.iter().map(|x| x / predicted.sqrt()).collect();
        let ad = anderson_darling(&studentized);
        report
            .metrics
            .insert(format!("anderson_darling_dir{k}"), Metric::exact(ad));
        report
            .verdicts
            .insert(format!("ad_dir{k}_below_critical"), ad < config.ad_critical);

        if config.check_correction {
            let classical = (v.transpose() * &bundle.classical * v)[(0, 0)];
            let correction = (v.transpose() * (&bundle.gamma_eta - &bundle.classical) * v)
                [(0, 0)];
            let excess = var - classical;
            let var_se = (2.0 / (r - 1.0)).sqrt() * var;
            report.metrics.insert(
                format!("excess_over_classical_dir{k}"),
                Metric {
                    value: excess,
                    mc_stderr: var_se,
                },
            );
            report.metrics.insert(
                format!("predicted_correction_dir{k}"),
                Metric::exact(correction),
            );
            report.verdicts.insert(
                format!("correction_matches_dir{k}"),
                (excess - correction).abs() <= 3.0 * var_se,
            );
        }
    }

    if let Some(dir) = out_dir {
        write_artifacts(&mut report, Some(&study.per_replicate_avg), dir)
            .map_err(|e| Error::InvalidConfig(format!("cannot write artifacts: {e}")))?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Critical-case rates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CriticalRateConfig {
    pub t_grid: Vec<usize>,
    pub n_replicates: usize,
    pub seed: u64,
    pub theta0: Vec<f64>,
    /// Accepted band for the log-log slope of the residual MSE in T.
    pub slope_band: (f64, f64),
}

/// Fully explicit ceiling on `E |A avg_T - b|^2` at the critical-case step
/// size, assembled from the moment bound
/// `E|theta_t - theta*|^2 <= e k^2 (D0 + 3 eta^2 t (v_b^2 d + v_A^2 |theta*|^2))`
/// and the martingale second moment, with every constant written out.
pub fn critical_mse_bound(
    info: &SpectralInfo,
    noise: &NoiseModel,
    dist0_sq: f64,
    theta_star_norm_sq: f64,
    dim: usize,
    horizon: usize,
) -> f64 {
    let e = std::f64::consts::E;
    let t = horizon as f64;
    let kappa2 = info.condition_number.powi(2);
    let rate = info.spectral_radius + 3.0 * info.condition_number * noise.v_a2.sqrt();
    let noise_scale = noise.v_b2 * dim as f64 + noise.v_a2 * theta_star_norm_sq;
    // E|theta_T - theta*|^2 at eta = 1/(rate sqrt(T)): eta^2 T = rate^{-2}.
    let final_moment = e * kappa2 * (dist0_sq + 3.0 * noise_scale / (rate * rate));
    // 1/(eta^2 T^2) = rate^2 / T.
    let telescope_term = 4.0 * rate * rate / t * (dist0_sq + final_moment);
    let martingale_term =
        2.0 / t * (3.0 * noise.v_a2 * e * kappa2 * dist0_sq + (3.0 + e) * noise_scale);
    telescope_term + martingale_term
}

/// Estimates the decay of the residual MSE `E |A avg_T - b|^2` over a
/// horizon grid, each horizon run at its own critical-case step size, and
/// fits the log-log slope.
pub fn critical_rate_study(
    oracle: &dyn Oracle,
    noise: &NoiseModel,
    config: &CriticalRateConfig,
    out_dir: Option<&Path>,
) -> Result<StudyReport> {
    let digest = config_digest("critical_rate", config);
    let mut report = StudyReport::new("critical_rate", digest);
    let problem = oracle.problem();
    let d = problem.dimension();
    let info = spectral::analyze(problem.a_bar(), DEFAULT_TOL)?;
    if !info.diagonalizable {
        return Err(Error::Defective {
            kappa: info.condition_number,
        });
    }
    let theta0 = DVector::from_column_slice(&config.theta0);

    // Reference solution for the bound: theta* when it exists, otherwise the
    // minimum-norm (quotient-space) representative.
    let theta_ref = match problem.theta_star() {
        Some(t) => t.clone(),
        None => problem
            .a_bar()
            .clone()
            .pseudo_inverse(1e-10)
            .map_err(|_| Error::SingularDrift)?
            * problem.b_bar(),
    };
    let dist0_sq = (&theta0 - &theta_ref).norm_squared();

    let mut points = Vec::new();
    let mut last_avgs: Vec<DVector<f64>> = Vec::new();
    for (gi, &t) in config.t_grid.iter().enumerate() {
        let eta = spectral::critical_step_size(&info, noise.v_a2.sqrt(), t)?;
        let mut cfg = RunConfig::new(eta, t, theta0.clone(), split_seed(config.seed, gi as u64));
        cfg.record = sim::RecordMode::AverageOnly;
        let study = sim::run_replicates(oracle, &cfg, config.n_replicates)?;
        if study.diverged_count > 0 {
            report.verdicts.insert(format!("no_divergence_T{t}"), false);
        }
        let residuals: Vec<f64> = study
            .per_replicate_avg
            .iter()
            .map(|avg| (problem.a_bar() * avg - problem.b_bar()).norm_squared())
            .collect();
        let n = residuals.len() as f64;
        let mse = residuals.iter().sum::<f64>() / n;
        let var = residuals.iter().map(|x| (x - mse).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        report.metrics.insert(
            format!("bellman_mse_T{t}"),
            Metric {
                value: mse,
                mc_stderr: se,
            },
        );
        let bound = critical_mse_bound(
            &info,
            noise,
            dist0_sq,
            theta_ref.norm_squared(),
            d,
            t,
        );
        report
            .metrics
            .insert(format!("mse_bound_T{t}"), Metric::exact(bound));
        report
            .verdicts
            .insert(format!("mse_below_bound_T{t}"), mse <= bound);
        points.push((t as f64, mse));
        last_avgs = study.per_replicate_avg;
    }

    if points.iter().all(|(_, y)| *y > 0.0) && points.len() >= 2 {
        let slope = log_log_slope(&points);
        report
            .metrics
            .insert("log_log_slope".into(), Metric::exact(slope));
        report.verdicts.insert(
            "slope_in_band".into(),
            slope >= config.slope_band.0 && slope <= config.slope_band.1,
        );
    } else {
        // Zero-noise runs started at theta*: the MSE is identically zero and
        // there is no rate to fit.
        report.verdicts.insert(
            "slope_in_band".into(),
            points.iter().all(|(_, y)| *y == 0.0),
        );
    }

    if let Some(dir) = out_dir {
        write_artifacts(&mut report, Some(&last_avgs), dir)
            .map_err(|e| Error::InvalidConfig(format!("cannot write artifacts: {e}")))?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Momentum spectrum
// ---------------------------------------------------------------------------

/// Comparison of the numerically computed spectrum of the lifted momentum
/// matrix against its closed form, plus the piecewise minimum-real-part
/// prediction.
#[derive(Debug, Clone)]
pub struct MomentumSpectrumReport {
    pub base_eigenvalues: Vec<f64>,
    pub lifted_eigenvalues: Vec<C64>,
    pub formula_eigenvalues: Vec<C64>,
    /// Max pairwise distance under the cost-minimizing assignment.
    pub matching_distance: f64,
    pub min_re_lifted: f64,
    pub predicted_min_re: f64,
}

/// Closed-form eigenvalue pair of one base eigenvalue under the lifting:
/// the roots of `nu^2 - (alpha + eta l) nu + l = 0`.
pub fn momentum_eigenvalue_pair(lambda: f64, alpha: f64, eta: f64) -> (C64, C64) {
    let s = C64::new(alpha + eta * lambda, 0.0);
    let disc = s * s - C64::new(4.0 * lambda, 0.0);
    let root = disc.sqrt();
    ((s + root) / 2.0, (s - root) / 2.0)
}

/// Piecewise prediction of `min Re(lambda)` of the lifted matrix: the real
/// part of the smaller root at the smallest base eigenvalue. Real branch
/// when `alpha >= 2 sqrt(l*) - eta l*`, complex branch otherwise.
pub fn momentum_min_re_prediction(lambda_min: f64, alpha: f64, eta: f64) -> f64 {
    let s = alpha + eta * lambda_min;
    if alpha >= 2.0 * lambda_min.sqrt() - eta * lambda_min {
        0.5 * (s - (s * s - 4.0 * lambda_min).max(0.0).sqrt())
    } else {
        0.5 * s
    }
}

/// Builds the lifted matrix for a diagonal base spectrum, computes its
/// spectrum numerically, matches it against the closed form, and evaluates
/// the mixing-rate prediction.
pub fn momentum_spectrum(
    base_eigs: &[f64],
    alpha: f64,
    eta: f64,
) -> Result<MomentumSpectrumReport> {
    assert!(!base_eigs.is_empty());
    assert!(
        base_eigs.iter().all(|&l| l > 0.0),
        "base eigenvalues must be positive"
    );
    assert!(alpha > 0.0 && eta >= 0.0);
    for (i, &l) in base_eigs.iter().enumerate() {
        let excluded = 2.0 * l.sqrt() - eta * l;
        if (alpha - excluded).abs() <= 1e-10 {
            return Err(Error::ExcludedAlpha { alpha, index: i });
        }
    }

    let d = base_eigs.len();
    let base = DMatrix::from_diagonal(&DVector::from_column_slice(base_eigs));
    let lifted = lift_matrix(&base, alpha, eta);
    let info = spectral::analyze(&lifted, DEFAULT_TOL)?;

    let mut formula = Vec::with_capacity(2 * d);
    for &l in base_eigs {
        let (p, m) = momentum_eigenvalue_pair(l, alpha, eta);
        formula.push(p);
        formula.push(m);
    }
    let matching_distance = matched_eigenvalue_distance(&info.eigenvalues, &formula);
    let min_re_lifted = info.spectral_gap;
    let lambda_min = base_eigs.iter().copied().fold(f64::INFINITY, f64::min);

    Ok(MomentumSpectrumReport {
        base_eigenvalues: base_eigs.to_vec(),
        lifted_eigenvalues: info.eigenvalues,
        formula_eigenvalues: formula,
        matching_distance,
        min_re_lifted,
        predicted_min_re: momentum_min_re_prediction(lambda_min, alpha, eta),
    })
}

// ---------------------------------------------------------------------------
// Momentum mixing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MomentumMixingConfig {
    pub alpha: f64,
    pub eta: f64,
    pub horizon: usize,
    pub n_replicates: usize,
    pub seed: u64,
    pub theta0: Vec<f64>,
    /// Accepted band for measured/predicted speedup, as multiples of the
    /// prediction.
    pub speedup_band: (f64, f64),
}

/// Fits an exponential decay rate to a mean-squared-error curve after
/// subtracting the stationary offset. Returns the per-step rate.
fn fit_decay_rate(curve: &[(usize, f64, f64)], offset: f64) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let scale = curve.first().map(|c| c.1 - offset).unwrap_or(0.0);
    if scale <= 0.0 {
        return None;
    }
    for &(t, m, se) in curve {
        let excess = m - offset;
        // Keep points clearly above both the Monte Carlo noise floor and
        // round-off relative to the initial transient.
        if excess > (4.0 * se).max(1e-12 * scale) && excess > 1e-3 * scale {
            xs.push(t as f64);
            ys.push(excess.ln());
        }
    }
    if xs.len() < 3 {
        return None;
    }
    Some(-slope(&xs, &ys))
}

/// Measures the mixing speedup of the momentum lifting: exponential decay
/// rates of `E|theta_t - theta*|^2` for the plain and lifted chains with
/// matched step size, compared against the spectral prediction.
pub fn momentum_mixing_study<O: Oracle>(
    base_oracle: &O,
    config: &MomentumMixingConfig,
    out_dir: Option<&Path>,
) -> Result<StudyReport> {
    let digest = config_digest("momentum_mixing", config);
    let mut report = StudyReport::new("momentum_mixing", digest);
    let problem = base_oracle.problem();
    let d = problem.dimension();

    // The analysis assumes a symmetric positive definite base drift.
    let a = problem.a_bar();
    if (a - a.transpose()).norm() > 1e-10 * a.norm() {
        return Err(Error::InvalidConfig(
            "momentum mixing needs a symmetric base drift".into(),
        ));
    }
    let base_info = spectral::analyze(a, DEFAULT_TOL)?;
    if base_info.regime != Regime::Hurwitz {
        return Err(Error::NotHurwitz(base_info.regime));
    }

    let lifted = MomentumLiftedOracle::new(base_oracle, config.alpha, config.eta)?;
    let lifted_info = spectral::analyze(lifted.problem().a_bar(), DEFAULT_TOL)?;
    let predicted_speedup = lifted_info.spectral_gap / base_info.spectral_gap;
    report.metrics.insert(
        "predicted_speedup".into(),
        Metric::exact(predicted_speedup),
    );
    report.metrics.insert(
        "lifted_min_re".into(),
        Metric::exact(lifted_info.spectral_gap),
    );

    // Stationary offsets for the curve fits (zero in the noiseless case).
    let mut noise_rng = ChaCha8Rng::seed_from_u64(split_seed(config.seed, 0xA0));
    let base_noise = estimate_noise_model(base_oracle, 2000, &mut noise_rng);
    let base_offset = if base_noise.v_b2 == 0.0 && !base_noise.has_a_noise() {
        0.0
    } else {
        covariance::solve_stationary_cov(problem, &base_noise, config.eta)?.trace()
    };
    let lifted_noise = estimate_noise_model(&lifted, 2000, &mut noise_rng);
    let lifted_offset = if lifted_noise.v_b2 == 0.0 && !lifted_noise.has_a_noise() {
        0.0
    } else {
        covariance::solve_stationary_cov(lifted.problem(), &lifted_noise, config.eta)?.trace()
    };

    let window = |gap: f64| -> usize {
        ((5.0 / (config.eta * gap)).ceil() as usize).clamp(20, config.horizon)
    };
    let checkpoints = |w: usize| -> Vec<usize> {
        (0..=30).map(|k| k * w / 30).collect()
    };

    let theta0 = DVector::from_column_slice(&config.theta0);
    let base_cfg = RunConfig::new(config.eta, window(base_info.spectral_gap), theta0.clone(), config.seed);
    let base_curve = sim::mean_squared_error_curve(
        base_oracle,
        &base_cfg,
        config.n_replicates,
        &checkpoints(base_cfg.horizon),
        None,
    )?;

    let mut lifted_theta0 = DVector::zeros(2 * d);
    for i in 0..d {
        lifted_theta0[i] = theta0[i];
    }
    let lifted_cfg = RunConfig::new(
        config.eta,
        window(lifted_info.spectral_gap),
        lifted_theta0,
        split_seed(config.seed, 0xB0),
    );
    let lifted_curve = sim::mean_squared_error_curve(
        &lifted,
        &lifted_cfg,
        config.n_replicates,
        &checkpoints(lifted_cfg.horizon),
        None,
    )?;

    let base_rate = fit_decay_rate(&base_curve, base_offset)
        .ok_or_else(|| Error::InvalidConfig("base decay fit failed".into()))?;
    let lifted_rate = fit_decay_rate(&lifted_curve, lifted_offset)
        .ok_or_else(|| Error::InvalidConfig("lifted decay fit failed".into()))?;
    let measured = lifted_rate / base_rate;
    report
        .metrics
        .insert("base_rate".into(), Metric::exact(base_rate));
    report
        .metrics
        .insert("lifted_rate".into(), Metric::exact(lifted_rate));
    report
        .metrics
        .insert("measured_speedup".into(), Metric::exact(measured));
    report.verdicts.insert(
        "speedup_in_band".into(),
        measured >= config.speedup_band.0 * predicted_speedup
            && measured <= config.speedup_band.1 * predicted_speedup,
    );

    if let Some(dir) = out_dir {
        write_artifacts(&mut report, None, dir)
            .map_err(|e| Error::InvalidConfig(format!("cannot write artifacts: {e}")))?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// TD studies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub enum TdMode {
    /// Tabular policy evaluation with a discount factor below one.
    ExactDiscounted,
    /// Linear function approximation with the given `D x d` feature matrix
    /// (row-major rows).
    LinearFa { features: Vec<Vec<f64>> },
    /// Undiscounted (average-reward) evaluation at the critical step size,
    /// with rewards centered and errors measured on the quotient space.
    AverageReward,
}

#[derive(Debug, Clone, Serialize)]
pub struct TdStudyConfig {
    pub mode: TdMode,
    pub horizons: Vec<usize>,
    /// Constant step size per horizon; ignored (recomputed) for
    /// `AverageReward`, which always uses the critical rule.
    pub eta: f64,
    pub n_replicates: usize,
    pub seed: u64,
    pub delta: f64,
}

/// Runs the mode-appropriate TD experiment over a horizon grid.
pub fn td_study(mrp: &MrpSpec, config: &TdStudyConfig, out_dir: Option<&Path>) -> Result<StudyReport> {
    match &config.mode {
        TdMode::ExactDiscounted => td_exact_study(mrp, config, out_dir),
        TdMode::LinearFa { features } => {
            let n = mrp.n_states();
            let dcols = features.first().map(|r| r.len()).unwrap_or(0);
            let mut f = DMatrix::zeros(n, dcols);
            for (i, row) in features.iter().enumerate() {
                for (j, &x) in row.iter().enumerate() {
                    f[(i, j)] = x;
                }
            }
            td_linear_fa_study(mrp, &f, config, out_dir)
        }
        TdMode::AverageReward => td_average_reward_study(mrp, config, out_dir),
    }
}

fn td_exact_study(
    mrp: &MrpSpec,
    config: &TdStudyConfig,
    out_dir: Option<&Path>,
) -> Result<StudyReport> {
    let digest = config_digest("td_exact", config);
    let mut report = StudyReport::new("td_exact", digest);
    if mrp.discount_gamma >= 1.0 {
        return Err(Error::InvalidConfig(
            "exact discounted TD needs gamma < 1".into(),
        ));
    }
    let oracle = ExactTdOracle::new(mrp.clone())?;
    let problem = oracle.problem().clone();
    let d = problem.dimension();
    let theta_star = problem.require_theta_star()?.clone();
    let noise = oracle.noise_model().expect("analytic TD noise");
    let cert = oracle.linfty_certificate().expect("TD certificate");
    let lambda_bar_inv = 1.0 / cert.lambda_bar;

    let mut errors = Vec::new();
    for (gi, &t) in config.horizons.iter().enumerate() {
        // Bespoke replicate loop so the almost-sure certificates can be
        // asserted on every sampled path.
        let mut violations = 0usize;
        let mut linf_sum = 0.0;
        let mut linf_sq = 0.0;
        let n_rep = config.n_replicates;
        let probe = DVector::from_fn(d, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        for rep in 0..n_rep {
            let seed = split_seed(split_seed(config.seed, gi as u64), rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut theta = DVector::zeros(d);
            let mut avg = crate::linalg::KahanVec::zeros(d);
            let mut sample = OracleSample::zeros(d);
            for _ in 0..t {
                avg.add(&theta);
                oracle.sample_into(&mut rng, &mut sample);
                // Assumption certificates, pathwise.
                if sample.b_t.amax() > 1.0 + 1e-12 {
                    violations += 1;
                }
                let contracted = (DMatrix::identity(d, d) - &sample.a_t) * &probe;
                if contracted.amax() > (1.0 - cert.lambda_bar) * probe.amax() + 1e-12 {
                    violations += 1;
                }
                theta -= (&sample.a_t * &theta - &sample.b_t) * config.eta;
                if theta.amax() > lambda_bar_inv + 1e-9 {
                    violations += 1;
                }
            }
            let avg = avg.value() / t as f64;
            let err = (&avg - &theta_star).amax();
            linf_sum += err;
            linf_sq += err * err;
        }
        let mean = linf_sum / n_rep as f64;
        let var = (linf_sq / n_rep as f64 - mean * mean).max(0.0);
        report.metrics.insert(
            format!("linf_error_T{t}"),
            Metric {
                value: mean,
                mc_stderr: (var / n_rep as f64).sqrt(),
            },
        );
        report
            .metrics
            .insert(format!("certificate_violations_T{t}"), Metric::exact(violations as f64));
        report
            .verdicts
            .insert(format!("certificates_hold_T{t}"), violations == 0);

        // Coordinate-wise bound terms at this horizon, for reporting.
        let bundle = covariance::bundle(&problem, &noise, config.eta)?;
        let terms =
            inference::linfty_bound_terms(&bundle, Some(cert), config.eta, t, config.delta)?;
        let scaled = mean * (t as f64).sqrt();
        report.metrics.insert(
            format!("scaled_linf_error_T{t}"),
            Metric::exact(scaled),
        );
        report.metrics.insert(
            format!("linf_leading_term_T{t}"),
            Metric::exact(terms.refined_q.sqrt()),
        );
        errors.push(mean);
    }

    // Error should decrease along the horizon grid (trend check).
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    report.verdicts.insert("linf_error_decreases".into(), monotone);

    if let Some(dir) = out_dir {
        write_artifacts(&mut report, None, dir)
            .map_err(|e| Error::InvalidConfig(format!("cannot write artifacts: {e}")))?;
    }
    Ok(report)
}

fn td_linear_fa_study(
    mrp: &MrpSpec,
    features: &DMatrix<f64>,
    config: &TdStudyConfig,
    out_dir: Option<&Path>,
) -> Result<StudyReport> {
    let digest = config_digest("td_linear_fa", config);
    let mut report = StudyReport::new("td_linear_fa", digest);
    let oracle = TdLinearFaOracle::new(mrp.clone(), features.clone())?;
    let problem = oracle.problem().clone();
    let theta_star = problem.require_theta_star()?.clone();
    let gram = oracle.feature_gram();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(split_seed(config.seed, 0xFA));
    let noise = estimate_noise_model(&oracle, 50_000, &mut noise_rng);
    let bundle = covariance::bundle(&problem, &noise, config.eta)?;
    let predicted = (bundle.gamma_eta.clone() * &gram).trace();
    report.metrics.insert(
        "predicted_scaled_l2mu_sq".into(),
        Metric::exact(predicted),
    );

    for (gi, &t) in config.horizons.iter().enumerate() {
        let cfg = RunConfig::new(
            config.eta,
            t,
            DVector::zeros(problem.dimension()),
            split_seed(config.seed, gi as u64),
        );
        let study = sim::run_replicates(&oracle, &cfg, config.n_replicates)?;
        let sq_errors: Vec<f64> = study
            .per_replicate_avg
            .iter()
            .map(|avg| {
                let diff = avg - &theta_star;
                (diff.transpose() * &gram * &diff)[(0, 0)] * t as f64
            })
            .collect();
        let n = sq_errors.len() as f64;
        let mean = sq_errors.iter().sum::<f64>() / n;
        let var = sq_errors.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        report.metrics.insert(
            format!("scaled_l2mu_sq_T{t}"),
            Metric {
                value: mean,
                mc_stderr: (var / n).sqrt(),
            },
        );
        report.metrics.insert(
            format!("l2mu_ratio_T{t}"),
            Metric::exact(mean / predicted),
        );
    }

    if let Some(dir) = out_dir {
        write_artifacts(&mut report, None, dir)
            .map_err(|e| Error::InvalidConfig(format!("cannot write artifacts: {e}")))?;
    }
    Ok(report)
}

fn td_average_reward_study(
    mrp: &MrpSpec,
    config: &TdStudyConfig,
    out_dir: Option<&Path>,
) -> Result<StudyReport> {
    let digest = config_digest("td_average_reward", config);
    let mut report = StudyReport::new("td_average_reward", digest);

    // Center the rewards against the stationary distribution so the gamma=1
    // system is solvable on the quotient space, rescaling into [-1, 1].
    let mu = mrp.stationary_distribution()?;
    let mean_reward = mu.dot(&mrp.reward_r);
    let mut centered = &mrp.reward_r - DVector::from_element(mrp.n_states(), mean_reward);
    let max_abs = centered.amax().max(1e-12);
    let scale = if max_abs > 1.0 { max_abs } else { 1.0 };
    centered /= scale;
    let centered_mrp = MrpSpec::new(mrp.transition_p.clone(), centered, 1.0)?;
    let oracle = ExactTdOracle::new(centered_mrp)?;
    let problem = oracle.problem().clone();
    let d = problem.dimension();
    let noise = oracle.noise_model().expect("analytic TD noise");

    let info = spectral::analyze(problem.a_bar(), DEFAULT_TOL)?;
    if !info.diagonalizable {
        return Err(Error::Defective {
            kappa: info.condition_number,
        });
    }
    report
        .metrics
        .insert("spectral_gap".into(), Metric::exact(info.spectral_gap));

    // Quotient-space reference: minimum-norm solution, mean subtracted.
    let theta_ref = problem
        .a_bar()
        .clone()
        .pseudo_inverse(1e-10)
        .map_err(|_| Error::SingularDrift)?
        * problem.b_bar();
    let center = |v: &DVector<f64>| -> DVector<f64> {
        let m = v.sum() / v.len() as f64;
        v - DVector::from_element(v.len(), m)
    };
    let theta_ref = center(&theta_ref);

    let mut points = Vec::new();
    for (gi, &t) in config.horizons.iter().enumerate() {
        let eta = spectral::critical_step_size(&info, noise.v_a2.sqrt(), t)?;
        let mut cfg = RunConfig::new(eta, t, DVector::zeros(d), split_seed(config.seed, gi as u64));
        cfg.schedule = sim::StepSchedule::Constant;
        let study = sim::run_replicates(&oracle, &cfg, config.n_replicates)?;
        let residuals: Vec<f64> = study
            .per_replicate_avg
            .iter()
            .map(|avg| (problem.a_bar() * avg - problem.b_bar()).norm_squared())
            .collect();
        let n = residuals.len() as f64;
        let mse = residuals.iter().sum::<f64>() / n;
        let var = residuals.iter().map(|x| (x - mse).powi(2)).sum::<f64>() / (n - 1.0);
        report.metrics.insert(
            format!("bellman_mse_T{t}"),
            Metric {
                value: mse,
                mc_stderr: (var / n).sqrt(),
            },
        );
        // Parameter error on the quotient space.
        let param_mse: f64 = study
            .per_replicate_avg
            .iter()
            .map(|avg| (center(avg) - &theta_ref).norm_squared())
            .sum::<f64>()
            / n;
        report.metrics.insert(
            format!("quotient_param_mse_T{t}"),
            Metric::exact(param_mse),
        );
        let bound = critical_mse_bound(
            &info,
            &noise,
            theta_ref.norm_squared(),
            theta_ref.norm_squared(),
            d,
            t,
        );
        report
            .metrics
            .insert(format!("mse_bound_T{t}"), Metric::exact(bound));
        report
            .verdicts
            .insert(format!("mse_below_bound_T{t}"), mse <= bound);
        points.push((t as f64, mse));
    }
    if points.len() >= 2 && points.iter().all(|(_, y)| *y > 0.0) {
        let slope = log_log_slope(&points);
        report
            .metrics
            .insert("log_log_slope".into(), Metric::exact(slope));
        report
            .verdicts
            .insert("rate_roughly_one_over_t".into(), slope < -0.5);
    }

    if let Some(dir) = out_dir {
        write_artifacts(&mut report, None, dir)
            .map_err(|e| Error::InvalidConfig(format!("cannot write artifacts: {e}")))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::AdditiveGaussianOracle;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn anderson_darling_accepts_normal_rejects_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normals: Vec<f64> = (0..2000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let ad = anderson_darling(&normals);
        assert!(ad < AD_CRITICAL_1PCT, "A^2 = {ad} on genuine normals");
        let uniforms: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ad_u = anderson_darling(&uniforms);
        assert!(ad_u > AD_CRITICAL_1PCT, "A^2 = {ad_u} on uniforms");
    }

    #[test]
    fn momentum_pair_matches_hand_roots() {
        // l = 1, alpha = 3, eta = 0: (3 +- sqrt(5))/2.
        let (p, m) = momentum_eigenvalue_pair(1.0, 3.0, 0.0);
        let sqrt5 = 5.0f64.sqrt();
        assert_relative_eq!(p.re, (3.0 + sqrt5) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(m.re, (3.0 - sqrt5) / 2.0, epsilon = 1e-12);
        assert_eq!(p.im, 0.0);
        // l = 1, alpha = 1, eta = 0: complex pair with Re = 1/2 each.
        let (p, m) = momentum_eigenvalue_pair(1.0, 1.0, 0.0);
        assert_relative_eq!(p.re, 0.5, epsilon = 1e-12);
        assert_relative_eq!(m.re, 0.5, epsilon = 1e-12);
        assert_relative_eq!(p.im, 3.0f64.sqrt() / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn momentum_spectrum_matches_numerics() {
        let report = momentum_spectrum(&[1.0, 0.5, 0.1], 0.8, 0.05).unwrap();
        assert!(
            report.matching_distance < 1e-8,
            "distance = {:e}",
            report.matching_distance
        );
    }

    #[test]
    fn momentum_spectrum_random_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut done = 0;
        while done < 100 {
            let d = rng.random_range(1..5usize);
            let eigs: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..4.0)).collect();
            let alpha = rng.random_range(0.05..4.0);
            let eta = rng.random_range(0.0..0.5);
            match momentum_spectrum(&eigs, alpha, eta) {
                Ok(rep) => {
                    assert!(
                        rep.matching_distance < 1e-8,
                        "eigs {eigs:?} alpha {alpha} eta {eta}: dist {:e}",
                        rep.matching_distance
                    );
                    done += 1;
                }
                Err(Error::ExcludedAlpha { .. }) => continue,
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn momentum_min_re_at_critical_alpha() {
        // l_min = 0.01, alpha = 2 sqrt(l_min) = 0.2, eta -> 0+: the double
        // root sits at sqrt(l_min) = 0.1, a 1/sqrt(l_min) speedup over 0.01.
        let lam = 0.01;
        let alpha = 0.2 + 1e-6; // just off the excluded point, real branch
        let report = momentum_spectrum(&[lam, 1.0], alpha, 1e-9).unwrap();
        assert!(
            (report.predicted_min_re - 0.1).abs() < 2e-3,
            "prediction {}",
            report.predicted_min_re
        );
        assert!(
            (report.min_re_lifted - report.predicted_min_re).abs()
                <= 0.10 * report.predicted_min_re,
            "numeric {} vs predicted {}",
            report.min_re_lifted,
            report.predicted_min_re
        );
    }

    #[test]
    fn excluded_alpha_detected() {
        let err = momentum_spectrum(&[1.0], 2.0, 0.0);
        assert!(matches!(err, Err(Error::ExcludedAlpha { index: 0, .. })));
    }

    #[test]
    fn digest_depends_on_config() {
        #[derive(Serialize)]
        struct C {
            x: f64,
        }
        let d1 = config_digest("s", &C { x: 1.0 });
        let d2 = config_digest("s", &C { x: 2.0 });
        let d3 = config_digest("other", &C { x: 1.0 });
        assert_ne!(d1, d2);
        assert_ne!(d1, d3);
        assert_eq!(d1, config_digest("s", &C { x: 1.0 }));
        assert_eq!(d1.len(), 64);
    }

    #[test]
    fn clt_study_zero_noise_passes_trivially() {
        let problem = ProblemSpec::new(
            DMatrix::identity(2, 2),
            DVector::from_row_slice(&[1.0, -1.0]),
        )
        .unwrap();
        let oracle = crate::oracles::DeterministicOracle::new(problem);
        let noise = oracle.noise_model().unwrap();
        let cfg = CltStudyConfig {
            eta: 0.1,
            horizon: 200,
            n_replicates: 8,
            seed: 3,
            theta0: vec![1.0, -1.0],
            directions: vec![],
            ratio_band: (0.8, 1.2),
            ad_critical: AD_CRITICAL_1PCT,
            check_correction: false,
        };
        let report = clt_study(&oracle, &noise, &cfg, None).unwrap();
        assert!(report.all_pass(), "verdicts: {:?}", report.verdicts);
    }

    #[test]
    fn clt_study_scalar_benchmark_small() {
        // Reduced-size version of the scalar benchmark; the acceptance
        // suite runs the full R = 2000 version.
        let problem = ProblemSpec::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let oracle = AdditiveGaussianOracle::new(problem, 0.0, 1.0);
        let noise = oracle.noise_model().unwrap();
        let cfg = CltStudyConfig {
            eta: 0.02,
            horizon: 4000,
            n_replicates: 400,
            seed: 11,
            theta0: vec![0.0],
            directions: vec![],
            ratio_band: (0.75, 1.25),
            ad_critical: AD_CRITICAL_1PCT,
            check_correction: false,
        };
        let report = clt_study(&oracle, &noise, &cfg, None).unwrap();
        assert!(
            report.all_pass(),
            "metrics: {:?}\nverdicts: {:?}",
            report.metrics,
            report.verdicts
        );
    }

    #[test]
    fn critical_rate_on_rotation_small() {
        // Rotation problem with b-noise at reduced replication; slope must
        // sit near -1.
        let problem = ProblemSpec::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let oracle = AdditiveGaussianOracle::new(problem, 0.0, 1.0);
        let noise = oracle.noise_model().unwrap();
        let cfg = CriticalRateConfig {
            t_grid: vec![500, 2000, 8000],
            n_replicates: 100,
            seed: 7,
            theta0: vec![0.0, 0.0],
            slope_band: (-1.4, -0.6),
        };
        let report = critical_rate_study(&oracle, &noise, &cfg, None).unwrap();
        assert!(
            report.all_pass(),
            "metrics: {:?}\nverdicts: {:?}",
            report.metrics,
            report.verdicts
        );
    }

    #[test]
    fn critical_rate_zero_noise_at_solution() {
        let problem = ProblemSpec::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let oracle = crate::oracles::DeterministicOracle::new(problem);
        let noise = oracle.noise_model().unwrap();
        let cfg = CriticalRateConfig {
            t_grid: vec![100, 400],
            n_replicates: 4,
            seed: 1,
            theta0: vec![0.0, 0.0],
            slope_band: (-1.25, -0.75),
        };
        let report = critical_rate_study(&oracle, &noise, &cfg, None).unwrap();
        assert!(report.all_pass());
        assert_eq!(report.metrics["bellman_mse_T100"].value, 0.0);
    }

    #[test]
    fn mixing_study_zero_noise_matches_spectral_rates() {
        // Deterministic contraction from theta0 != theta*: the fitted decay
        // rate of |theta_t - theta*|^2 equals -2 ln max|1 - eta l| within
        // a few percent.
        let problem = ProblemSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.25]),
            DVector::zeros(2),
        )
        .unwrap();
        let oracle = crate::oracles::DeterministicOracle::new(problem);
        let eta = 0.05;
        let cfg = MomentumMixingConfig {
            alpha: 0.9,
            eta,
            horizon: 4000,
            n_replicates: 1,
            seed: 2,
            theta0: vec![1.0, 1.0],
            speedup_band: (0.3, 3.0),
        };
        let report = momentum_mixing_study(&oracle, &cfg, None).unwrap();
        let base_rate = report.metrics["base_rate"].value;
        // Slowest mode of the plain chain: |1 - eta*0.25|.
        let predicted = -2.0 * (1.0f64 - eta * 0.25).ln();
        assert!(
            (base_rate - predicted).abs() / predicted < 0.05,
            "fit {base_rate} vs predicted {predicted}"
        );
        assert!(report.all_pass(), "{:?}", report.verdicts);
    }

    #[test]
    fn td_exact_study_small() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.25, 0.75]);
        let r = DVector::from_row_slice(&[0.8, -0.6]);
        let mrp = MrpSpec::new(p, r, 0.5).unwrap();
        let cfg = TdStudyConfig {
            mode: TdMode::ExactDiscounted,
            horizons: vec![500, 5000],
            eta: 0.1,
            n_replicates: 30,
            seed: 13,
            delta: 0.1,
        };
        let report = td_study(&mrp, &cfg, None).unwrap();
        assert!(
            report.all_pass(),
            "metrics: {:?}\nverdicts: {:?}",
            report.metrics,
            report.verdicts
        );
        assert_eq!(report.metrics["certificate_violations_T500"].value, 0.0);
    }

    #[test]
    fn td_exact_theta_star_two_state_by_hand() {
        // D = 2, P = [[.5,.5],[.5,.5]], r = (1,-1), gamma = 0.5:
        // theta* = (I - 0.5 P)^{-1} r = (2/3, -4/3) verified by direct solve.
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let r = DVector::from_row_slice(&[1.0, -1.0]);
        let mrp = MrpSpec::new(p, r, 0.5).unwrap();
        let oracle = ExactTdOracle::new(mrp).unwrap();
        let theta = oracle.problem().theta_star().unwrap();
        assert_relative_eq!(theta[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(theta[1], -4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn td_gamma_zero_is_mean_reward_estimation() {
        // gamma = 0: A = I, theta* = r exactly.
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.9, 0.1]);
        let r = DVector::from_row_slice(&[0.5, -0.5]);
        let mrp = MrpSpec::new(p, r.clone(), 0.0).unwrap();
        let oracle = ExactTdOracle::new(mrp).unwrap();
        assert_relative_eq!(oracle.problem().theta_star().unwrap(), &r, epsilon = 1e-12);
    }

    #[test]
    fn td_average_reward_cyclic_chain() {
        // Deterministic cycle: eigenvalues of P are the N-th roots of unity,
        // P is circulant hence diagonalizable; only reward noise remains.
        let n = 4;
        let mut p = DMatrix::zeros(n, n);
        for i in 0..n {
            p[(i, (i + 1) % n)] = 1.0;
        }
        let r = DVector::from_row_slice(&[0.5, -0.25, 0.25, -0.5]);
        let mrp = MrpSpec::new(p, r, 1.0).unwrap();
        let cfg = TdStudyConfig {
            mode: TdMode::AverageReward,
            horizons: vec![400, 1600, 6400],
            eta: 0.0,
            n_replicates: 60,
            seed: 21,
            delta: 0.1,
        };
        let report = td_study(&mrp, &cfg, None).unwrap();
        assert!(
            report.all_pass(),
            "metrics: {:?}\nverdicts: {:?}",
            report.metrics,
            report.verdicts
        );
        // Rate constant reflects min_{i>=2} |1 - l_i(P)|: for the 4-cycle
        // the nearest non-unit eigenvalue of P is at distance |1 - i| = sqrt(2).
        let slope = report.metrics["log_log_slope"].value;
        assert!(slope < -0.6, "slope = {slope}");
    }

    #[test]
    fn td_linear_fa_study_smoke() {
        let p = DMatrix::from_row_slice(3, 3, &[0.6, 0.2, 0.2, 0.2, 0.6, 0.2, 0.2, 0.2, 0.6]);
        let r = DVector::from_row_slice(&[1.0, 0.0, -1.0]);
        let mrp = MrpSpec::new(p, r, 0.9).unwrap();
        let features = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]];
        let cfg = TdStudyConfig {
            mode: TdMode::LinearFa { features },
            horizons: vec![20_000],
            eta: 0.05,
            n_replicates: 60,
            seed: 17,
            delta: 0.1,
        };
        let mrp2 = mrp.clone();
        let report = td_study(&mrp2, &cfg, None).unwrap();
        let ratio = report.metrics["l2mu_ratio_T20000"].value;
        assert!(
            ratio > 0.5 && ratio < 2.0,
            "scaled L2(mu) error ratio {ratio} far from 1"
        );
    }

    #[test]
    fn artifacts_are_deterministic_bytes() {
        let problem = ProblemSpec::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let oracle = AdditiveGaussianOracle::new(problem, 0.0, 1.0);
        let noise = oracle.noise_model().unwrap();
        let cfg = CltStudyConfig {
            eta: 0.05,
            horizon: 500,
            n_replicates: 20,
            seed: 5,
            theta0: vec![0.0],
            directions: vec![],
            ratio_band: (0.0, 10.0),
            ad_critical: AD_CRITICAL_1PCT,
            check_correction: true,
        };
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let r1 = clt_study(&oracle, &noise, &cfg, Some(dir1.path())).unwrap();
        let r2 = clt_study(&oracle, &noise, &cfg, Some(dir2.path())).unwrap();
        assert_eq!(r1.to_json(), r2.to_json());
        let sub = &r1.config_digest[..16];
        for file in ["report.json", "metrics.csv", "replicates.csv"] {
            let b1 = std::fs::read(dir1.path().join(sub).join(file)).unwrap();
            let b2 = std::fs::read(dir2.path().join(sub).join(file)).unwrap();
            assert_eq!(b1, b2, "artifact {file} differs between identical runs");
        }
    }
}
