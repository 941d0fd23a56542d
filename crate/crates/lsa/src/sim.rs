//! The iterate recursion and its averaging.
//!
//! `run` drives `theta_{t+1} = theta_t - eta (A_{t+1} theta_t - b_{t+1})`
//! for `t = 0..T-1` and reports the running average
//! `avg_T = (1/T) sum_{t=0}^{T-1} theta_t` — the average includes `theta_0`
//! and excludes `theta_T`, which matters for the exact telescope identity
//!
//! `A (avg_T - theta*) = (theta_0 - theta_T) / (eta T)
//!                       - (1/T) sum_{t=0}^{T-1} e_{t+1}(theta_t)`
//!
//! with `e_t(theta) = (A_t - A) theta - (b_t - b)`. The identity holds for
//! every noise realization, so its residual is a per-run correctness check;
//! both the average and the noise sum are accumulated with Kahan
//! compensation to keep that residual at round-off scale over 10^6 steps.

use crate::error::{Error, Result};
use crate::linalg::KahanVec;
use crate::oracles::{split_seed, Oracle, OracleSample, ProblemSpec};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// What to keep from a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordMode {
    /// Only the final iterate and the average.
    FinalOnly,
    /// The average and final iterate (alias of `FinalOnly` for clarity at
    /// call sites that only consume the average).
    AverageOnly,
    /// Every iterate `theta_0 ..= theta_T`.
    FullTrajectory,
    /// Every k-th iterate (plus `theta_0` and `theta_T`).
    Thinned(usize),
}

/// Step-size rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// Use `RunConfig::eta` as given.
    Constant,
    /// `eta = 1 / ((rho + 3 kappa v_A) sqrt(T))`, the rule that keeps the
    /// critical-case dynamics from blowing up. Needs a noise model on the
    /// oracle for `v_A`.
    CriticalSqrtT,
    /// `eta = T^{-1/3}`, the horizon-optimal constant step size for the
    /// Hurwitz high-probability bound.
    CubeRootT,
}

/// Configuration of a single run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub eta: f64,
    pub horizon: usize,
    pub theta0: DVector<f64>,
    pub seed: u64,
    pub schedule: StepSchedule,
    pub record: RecordMode,
    /// Iterate-norm guard; exceeding it raises `Diverged` (an unstable step
    /// size, not a bug).
    pub overflow_guard: f64,
}

impl RunConfig {
    pub fn new(eta: f64, horizon: usize, theta0: DVector<f64>, seed: u64) -> Self {
        assert!(eta > 0.0 && horizon >= 1, "need eta > 0 and T >= 1");
        Self {
            eta,
            horizon,
            theta0,
            seed,
            schedule: StepSchedule::Constant,
            record: RecordMode::AverageOnly,
            overflow_guard: 1e12,
        }
    }

    pub fn with_record(mut self, record: RecordMode) -> Self {
        self.record = record;
        self
    }

    pub fn with_schedule(mut self, schedule: StepSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Resolves the effective step size for a schedule.
pub fn resolve_eta(oracle: &dyn Oracle, config: &RunConfig) -> Result<f64> {
    match config.schedule {
        StepSchedule::Constant => Ok(config.eta),
        StepSchedule::CubeRootT => Ok((config.horizon as f64).powf(-1.0 / 3.0)),
        StepSchedule::CriticalSqrtT => {
            let info =
                crate::spectral::analyze(oracle.problem().a_bar(), crate::spectral::DEFAULT_TOL)?;
            let noise = oracle.noise_model().ok_or_else(|| {
                Error::InvalidConfig(
                    "the critical step-size rule needs a noise model; estimate one and pass a constant step".into(),
                )
            })?;
            crate::spectral::critical_step_size(&info, noise.v_a2.sqrt(), config.horizon)
        }
    }
}

/// A completed run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Step size actually used (after schedule resolution).
    pub eta: f64,
    pub theta0: DVector<f64>,
    /// Recorded iterates as `(t, theta_t)` pairs, when requested.
    pub iterates: Option<Vec<(usize, DVector<f64>)>>,
    /// Polyak-Ruppert average of `theta_0 .. theta_{T-1}`.
    pub average: DVector<f64>,
    /// The last iterate `theta_T`.
    pub final_iterate: DVector<f64>,
    /// `sum_{t=0}^{T-1} e_{t+1}(theta_t)`, accumulated for diagnostics.
    pub noise_sum: Option<DVector<f64>>,
    pub t_completed: usize,
}

impl Trajectory {
    /// Writes the recorded iterates as CSV with columns `t,theta_1..theta_d`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.theta0.len();
        write!(w, "t")?;
        for j in 1..=d {
            write!(w, ",theta_{j}")?;
        }
        writeln!(w)?;
        if let Some(iterates) = &self.iterates {
            for (t, theta) in iterates {
                write!(w, "{t}")?;
                for x in theta.iter() {
                    write!(w, ",{x:?}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Runs the recursion with the oracle's own problem as the target.
pub fn run(oracle: &dyn Oracle, config: &RunConfig) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_with_rng(oracle, config, &mut rng)
}

/// Same as [`run`] with a caller-owned RNG (used by the coupling and
/// replicate harnesses).
pub fn run_with_rng(
    oracle: &dyn Oracle,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let problem = oracle.problem();
    let d = problem.dimension();
    if oracle.dimension() != d || config.theta0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: config.theta0.len(),
        });
    }
    let eta = resolve_eta(oracle, config)?;
    let t_max = config.horizon;

    let mut theta = config.theta0.clone();
    let mut avg = KahanVec::zeros(d);
    let mut noise = KahanVec::zeros(d);
    let mut sample = OracleSample::zeros(d);
    let mut iterates: Option<Vec<(usize, DVector<f64>)>> = match config.record {
        RecordMode::FullTrajectory => Some(Vec::with_capacity(t_max + 1)),
        RecordMode::Thinned(_) => Some(Vec::new()),
        _ => None,
    };
    let stride = match config.record {
        RecordMode::Thinned(k) => k.max(1),
        _ => 1,
    };

    for t in 0..t_max {
        if let Some(rec) = iterates.as_mut() {
            if t % stride == 0 {
                rec.push((t, theta.clone()));
            }
        }
        avg.add(&theta);

        oracle.sample_into(rng, &mut sample);
        let drive = &sample.a_t * &theta - &sample.b_t; // A_{t+1} theta_t - b_{t+1}
        let mean_drive = problem.a_bar() * &theta - problem.b_bar();
        noise.add(&(&drive - &mean_drive)); // e_{t+1}(theta_t)

        theta -= &drive * eta;
        let norm = theta.norm();
        if !norm.is_finite() || norm > config.overflow_guard {
            return Err(Error::Diverged {
                step: t + 1,
                norm,
                guard: config.overflow_guard,
            });
        }
    }
    if let Some(rec) = iterates.as_mut() {
        if rec.last().map(|(t, _)| *t) != Some(t_max) {
            rec.push((t_max, theta.clone()));
        }
    }

    Ok(Trajectory {
        eta,
        theta0: config.theta0.clone(),
        iterates,
        average: avg.value() / t_max as f64,
        final_iterate: theta,
        noise_sum: Some(noise.value()),
        t_completed: t_max,
    })
}

/// Synchronously coupled pair of runs: the two chains consume identical
/// oracle draws and differ only in their starting points.
pub fn run_coupled(
    oracle: &dyn Oracle,
    config: &RunConfig,
    theta0_pair: (DVector<f64>, DVector<f64>),
) -> Result<(Trajectory, Trajectory)> {
    let problem = oracle.problem();
    let d = problem.dimension();
    let eta = resolve_eta(oracle, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut chains = [theta0_pair.0.clone(), theta0_pair.1.clone()];
    let mut avgs = [KahanVec::zeros(d), KahanVec::zeros(d)];
    let mut noises = [KahanVec::zeros(d), KahanVec::zeros(d)];
    let mut sample = OracleSample::zeros(d);

    for t in 0..config.horizon {
        oracle.sample_into(&mut rng, &mut sample);
        for c in 0..2 {
            avgs[c].add(&chains[c]);
            let drive = &sample.a_t * &chains[c] - &sample.b_t;
            let mean_drive = problem.a_bar() * &chains[c] - problem.b_bar();
            noises[c].add(&(&drive - &mean_drive));
            chains[c] -= drive * eta;
            let norm = chains[c].norm();
            if !norm.is_finite() || norm > config.overflow_guard {
                return Err(Error::Diverged {
                    step: t + 1,
                    norm,
                    guard: config.overflow_guard,
                });
            }
        }
    }

    let make = |theta0: DVector<f64>, theta: DVector<f64>, avg: &KahanVec, noise: &KahanVec| Trajectory {
        eta,
        theta0,
        iterates: None,
        average: avg.value() / config.horizon as f64,
        final_iterate: theta,
        noise_sum: Some(noise.value()),
        t_completed: config.horizon,
    };
    let [c0, c1] = chains;
    Ok((
        make(theta0_pair.0, c0, &avgs[0], &noises[0]),
        make(theta0_pair.1, c1, &avgs[1], &noises[1]),
    ))
}

/// Cross-replicate statistics of the averaged iterates.
#[derive(Debug, Clone)]
pub struct ReplicateStudy {
    /// Averaged iterate of each completed replicate, ordered by replicate
    /// index (diverged replicates are skipped).
    pub per_replicate_avg: Vec<DVector<f64>>,
    pub diverged_count: usize,
    pub horizon: usize,
    pub eta: f64,
    /// `sqrt(T) (avg - theta*)` per completed replicate, when `theta*` is
    /// known.
    pub scaled_errors: Option<Vec<DVector<f64>>>,
    /// Mean of the scaled errors.
    pub empirical_mean: Option<DVector<f64>>,
    /// Covariance of the scaled errors (about their empirical mean).
    pub empirical_cov: Option<DMatrix<f64>>,
}

impl ReplicateStudy {
    pub fn n_completed(&self) -> usize {
        self.per_replicate_avg.len()
    }

    /// Projections `v^T sqrt(T) (avg - theta*)` of the scaled errors.
    pub fn directional_errors(&self, v: &DVector<f64>) -> Option<Vec<f64>> {
        self.scaled_errors
            .as_ref()
            .map(|errs| errs.iter().map(|e| v.dot(e)).collect())
    }

    /// Studentized directional samples `v^T sqrt(T)(avg - theta*) /
    /// sqrt(v^T cov v)` against a reference covariance.
    pub fn studentized(&self, v: &DVector<f64>, cov: &DMatrix<f64>) -> Option<Vec<f64>> {
        let denom = (v.transpose() * cov * v)[(0, 0)].sqrt();
        if denom <= 0.0 {
            return None;
        }
        self.directional_errors(v)
            .map(|xs| xs.into_iter().map(|x| x / denom).collect())
    }
}

/// Runs independent replicates. Replicate `i` is seeded with
/// `split_seed(config.seed, i)`; results merge in replicate order, so the
/// output is identical whether or not the parallel feature is enabled.
pub fn run_replicates(
    oracle: &dyn Oracle,
    config: &RunConfig,
    n_replicates: usize,
) -> Result<ReplicateStudy> {
    assert!(n_replicates >= 2, "need at least 2 replicates");
    let eta = resolve_eta(oracle, config)?;

    let run_one = |i: usize| -> Result<Trajectory> {
        let mut cfg = config.clone();
        cfg.seed = split_seed(config.seed, i as u64);
        cfg.record = RecordMode::AverageOnly;
        run(oracle, &cfg)
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<Trajectory>> =
        (0..n_replicates).into_par_iter().map(run_one).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Trajectory>> = (0..n_replicates).map(run_one).collect();

    let mut per_replicate_avg = Vec::with_capacity(n_replicates);
    let mut diverged_count = 0usize;
    for r in results {
        match r {
            Ok(traj) => per_replicate_avg.push(traj.average),
            Err(Error::Diverged { .. }) => diverged_count += 1,
            Err(e) => return Err(e),
        }
    }

    let problem = oracle.problem();
    let (scaled_errors, empirical_mean, empirical_cov) = match problem.theta_star() {
        Some(theta_star) if per_replicate_avg.len() >= 2 => {
            let sqrt_t = (config.horizon as f64).sqrt();
            let errs: Vec<DVector<f64>> = per_replicate_avg
                .iter()
                .map(|avg| (avg - theta_star) * sqrt_t)
                .collect();
            let n = errs.len() as f64;
            let d = problem.dimension();
            // Shifted mean: exact when all replicates coincide (zero noise).
            let mut mean = DVector::zeros(d);
            for e in &errs {
                mean += e - &errs[0];
            }
            mean /= n;
            mean += &errs[0];
            let mut cov = DMatrix::zeros(d, d);
            for e in &errs {
                let c = e - &mean;
                cov += &c * c.transpose();
            }
            cov /= n - 1.0;
            (Some(errs), Some(mean), Some(cov))
        }
        _ => (None, None, None),
    };

    Ok(ReplicateStudy {
        per_replicate_avg,
        diverged_count,
        horizon: config.horizon,
        eta,
        scaled_errors,
        empirical_mean,
        empirical_cov,
    })
}

/// Residual of the telescope identity for a recorded trajectory. This is
/// exact algebra, so anything above floating-point accumulation scale
/// indicates an inconsistent trajectory.
pub fn telescope_residual(traj: &Trajectory, problem: &ProblemSpec) -> Result<f64> {
    let noise_sum = traj.noise_sum.as_ref().ok_or(Error::MissingDiagnostics)?;
    let theta_star = problem.require_theta_star()?;
    let t = traj.t_completed as f64;
    let lhs = problem.a_bar() * (&traj.average - theta_star);
    let rhs = (&traj.theta0 - &traj.final_iterate) / (traj.eta * t) - noise_sum / t;
    Ok((lhs - rhs).norm())
}

/// Mean and Monte Carlo standard error of `|theta_t - ref|^2` across
/// replicates at the requested checkpoints (used by the mixing and moment
/// diagnostics). `reference` defaults to `theta*`.
pub fn mean_squared_error_curve(
    oracle: &dyn Oracle,
    config: &RunConfig,
    n_replicates: usize,
    checkpoints: &[usize],
    reference: Option<&DVector<f64>>,
) -> Result<Vec<(usize, f64, f64)>> {
    let problem = oracle.problem();
    let target = match reference {
        Some(r) => r.clone(),
        None => problem.require_theta_star()?.clone(),
    };
    let eta = resolve_eta(oracle, config)?;
    let mut points: Vec<usize> = checkpoints.to_vec();
    points.sort_unstable();
    points.dedup();

    let run_one = |i: usize| -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(config.seed, i as u64));
        let d = problem.dimension();
        let mut theta = config.theta0.clone();
        let mut sample = OracleSample::zeros(d);
        let mut out = Vec::with_capacity(points.len());
        let mut next = 0usize;
        for t in 0..=config.horizon {
            if next < points.len() && points[next] == t {
                out.push((&theta - &target).norm_squared());
                next += 1;
            }
            if t == config.horizon {
                break;
            }
            oracle.sample_into(&mut rng, &mut sample);
            let drive = &sample.a_t * &theta - &sample.b_t;
            theta -= drive * eta;
            let norm = theta.norm();
            if !norm.is_finite() || norm > config.overflow_guard {
                return Err(Error::Diverged {
                    step: t + 1,
                    norm,
                    guard: config.overflow_guard,
                });
            }
        }
        Ok(out)
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<Vec<f64>>> = (0..n_replicates).into_par_iter().map(run_one).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Vec<f64>>> = (0..n_replicates).map(run_one).collect();

    let mut curves = Vec::new();
    for r in results {
        curves.push(r?);
    }
    let n = curves.len() as f64;
    let mut out = Vec::with_capacity(points.len());
    for (k, &t) in points.iter().enumerate() {
        let mean = curves.iter().map(|c| c[k]).sum::<f64>() / n;
        let var = curves.iter().map(|c| (c[k] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        out.push((t, mean, (var / n).sqrt()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{
        AdditiveGaussianOracle, CounterexampleOracle, DeterministicOracle, ProblemSpec,
    };
    use approx::assert_relative_eq;

    fn scalar_problem(a: f64, b: f64) -> ProblemSpec {
        ProblemSpec::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, b)).unwrap()
    }

    #[test]
    fn two_steps_by_hand() {
        // Zero noise, d = 1, A = 1, b = 1, theta0 = 0, eta = 0.5, T = 2:
        // theta_1 = 0.5, theta_2 = 0.75, avg = (0 + 0.5)/2 = 0.25.
        let oracle = DeterministicOracle::new(scalar_problem(1.0, 1.0));
        let cfg = RunConfig::new(0.5, 2, DVector::from_element(1, 0.0), 0);
        let traj = run(&oracle, &cfg).unwrap();
        assert_relative_eq!(traj.final_iterate[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(traj.average[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn fixed_point_is_invariant() {
        let problem = scalar_problem(2.0, 4.0);
        let theta_star = problem.theta_star().unwrap().clone();
        let oracle = DeterministicOracle::new(problem);
        let cfg = RunConfig::new(0.3, 50, theta_star.clone(), 0)
            .with_record(RecordMode::FullTrajectory);
        let traj = run(&oracle, &cfg).unwrap();
        for (_, theta) in traj.iterates.as_ref().unwrap() {
            assert_relative_eq!(theta[0], theta_star[0], epsilon = 1e-14);
        }
        assert_relative_eq!(traj.average[0], theta_star[0], epsilon = 1e-14);
    }

    #[test]
    fn telescope_residual_zero_noise() {
        let oracle = DeterministicOracle::new(scalar_problem(1.0, 1.0));
        let cfg = RunConfig::new(0.5, 100, DVector::from_element(1, 0.0), 0);
        let traj = run(&oracle, &cfg).unwrap();
        let res = telescope_residual(&traj, oracle.problem()).unwrap();
        assert!(res <= 1e-10, "residual = {res}");
    }

    #[test]
    fn telescope_residual_with_noise() {
        // The identity is exact for every realization, noisy or not.
        let problem = ProblemSpec::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 1.5, 0.1, -0.1, 0.0, 2.0]),
            DVector::from_row_slice(&[1.0, -1.0, 0.5]),
        )
        .unwrap();
        let theta_star_norm = problem.theta_star().unwrap().norm();
        let oracle = AdditiveGaussianOracle::new(problem, 0.1, 0.5);
        let cfg = RunConfig::new(0.05, 1000, DVector::zeros(3), 7);
        let traj = run(&oracle, &cfg).unwrap();
        let res = telescope_residual(&traj, oracle.problem()).unwrap();
        assert!(
            res <= 1e-9 * (1.0 + theta_star_norm),
            "residual = {res}"
        );
    }

    #[test]
    fn telescope_requires_diagnostics() {
        let oracle = DeterministicOracle::new(scalar_problem(1.0, 1.0));
        let cfg = RunConfig::new(0.5, 10, DVector::from_element(1, 0.0), 0);
        let mut traj = run(&oracle, &cfg).unwrap();
        traj.noise_sum = None;
        assert!(matches!(
            telescope_residual(&traj, oracle.problem()),
            Err(Error::MissingDiagnostics)
        ));
    }

    #[test]
    fn divergence_guard_fires() {
        // eta far over the stability threshold for A = 1.
        let oracle = DeterministicOracle::new(scalar_problem(1.0, 0.0));
        let cfg = RunConfig::new(3.0, 10_000, DVector::from_element(1, 1.0), 0);
        match run(&oracle, &cfg) {
            Err(Error::Diverged { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn counterexample_average_stays_far() {
        // Deterministic defective-critical system: the averaged iterate
        // never approaches theta* = 0 no matter the step size.
        let oracle = CounterexampleOracle::new(2).unwrap();
        for eta in [0.01, 0.1, 1.0] {
            let mut theta = oracle.initial_point();
            let mut avg_sum = DVector::zeros(4);
            let a = oracle.problem().a_bar().clone();
            for t in 1..=1000usize {
                avg_sum += &theta;
                theta -= (&a * &theta) * eta;
                if t >= 4 {
                    let avg = &avg_sum / t as f64;
                    assert!(
                        avg.norm() >= 0.5,
                        "eta = {eta}, T = {t}: |avg| = {}",
                        avg.norm()
                    );
                }
            }
        }
    }

    #[test]
    fn replicates_deterministic_and_zero_noise_cov() {
        let oracle = DeterministicOracle::new(scalar_problem(1.0, 1.0));
        let cfg = RunConfig::new(0.2, 100, DVector::from_element(1, 0.0), 42);
        let s1 = run_replicates(&oracle, &cfg, 8).unwrap();
        let s2 = run_replicates(&oracle, &cfg, 8).unwrap();
        assert_eq!(s1.per_replicate_avg, s2.per_replicate_avg);
        // Zero noise: cross-replicate covariance is exactly 0.
        let cov = s1.empirical_cov.unwrap();
        assert_eq!(cov[(0, 0)], 0.0);
        assert_eq!(s1.diverged_count, 0);
    }

    #[test]
    fn coupled_chains_contract() {
        // Synchronous coupling on a Hurwitz scalar problem: the gap shrinks
        // deterministically by (1 - eta a) per step when there is no A-noise.
        let problem = scalar_problem(1.0, 0.0);
        let oracle = AdditiveGaussianOracle::new(problem, 0.0, 1.0);
        let cfg = RunConfig::new(0.1, 200, DVector::from_element(1, 0.0), 3);
        let (a, b) = run_coupled(
            &oracle,
            &cfg,
            (DVector::from_element(1, 5.0), DVector::from_element(1, -3.0)),
        )
        .unwrap();
        let gap0: f64 = 8.0;
        let expected = gap0 * 0.9f64.powi(200);
        let got = (a.final_iterate[0] - b.final_iterate[0]).abs();
        assert_relative_eq!(got, expected, max_relative = 1e-9);
    }

    #[test]
    fn thinned_recording() {
        let oracle = DeterministicOracle::new(scalar_problem(1.0, 1.0));
        let cfg = RunConfig::new(0.1, 100, DVector::from_element(1, 0.0), 0)
            .with_record(RecordMode::Thinned(25));
        let traj = run(&oracle, &cfg).unwrap();
        let ts: Vec<usize> = traj.iterates.unwrap().iter().map(|(t, _)| *t).collect();
        assert_eq!(ts, vec![0, 25, 50, 75, 100]);
    }

    #[test]
    fn average_matches_recorded_iterates() {
        let problem = scalar_problem(1.0, 1.0);
        let oracle = AdditiveGaussianOracle::new(problem, 0.05, 0.3);
        let cfg = RunConfig::new(0.1, 500, DVector::from_element(1, 0.0), 9)
            .with_record(RecordMode::FullTrajectory);
        let traj = run(&oracle, &cfg).unwrap();
        let iterates = traj.iterates.as_ref().unwrap();
        // Average over theta_0..theta_{T-1}, excluding theta_T.
        let sum: f64 = iterates
            .iter()
            .filter(|(t, _)| *t < 500)
            .map(|(_, th)| th[0])
            .sum();
        assert_relative_eq!(traj.average[0], sum / 500.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_export_roundtrip_shape() {
        let oracle = DeterministicOracle::new(scalar_problem(1.0, 1.0));
        let cfg = RunConfig::new(0.5, 3, DVector::from_element(1, 0.0), 0)
            .with_record(RecordMode::FullTrajectory);
        let traj = run(&oracle, &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,theta_1");
        assert_eq!(lines.len(), 1 + 4); // header + theta_0..theta_3
    }
}
