//! Monte-Carlo strong-error studies against a coupled fine reference.
//!
//! Each path draws one [`BrownianLattice`] at `m_fine`, solves the scheme once
//! on the fine grid and once per coarse level with coarsened increments, and
//! records the discrete error norms at the coarse times.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::noise::{coarsen_increments, path_seed, BrownianLattice, GENERATOR_VERSION};
use crate::problem::EvolutionProblem;
use crate::space::{GridSpace, StateVector};
use crate::stepper::{run_scheme, SchemeConfig, Trajectory};

/// Errors of one coarse trajectory against the fine one at shared times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub m: usize,
    /// `max_i |u_fine(t_i) - u(t_i)|²_H`
    pub max_h_sq: f64,
    /// `Σ_i |u_fine(t_i) - u(t_i)|²_V · τ`, `i = 0..=m`
    pub sum_v_sq: f64,
    /// `max_i max_x |u_fine(t_i, x) - u(t_i, x)|`
    pub sup_grid: f64,
}

pub fn error_metrics(space: &GridSpace, coarse: &Trajectory, fine: &Trajectory) -> Result<ErrorSample> {
    let m = coarse.m();
    let m_fine = fine.m();
    if m == 0 || !m_fine.is_multiple_of(m) {
        return Err(Error::config(format!("coarse level {m} does not divide fine level {m_fine}")));
    }
    let stride = m_fine / m;
    let mut sample = ErrorSample { m, max_h_sq: 0.0, sum_v_sq: 0.0, sup_grid: 0.0 };
    for (i, u) in coarse.states.iter().enumerate() {
        let reference = &fine.states[i * stride];
        space.check(u)?;
        space.check(reference)?;
        let diff = reference.sub(u);
        sample.max_h_sq = sample.max_h_sq.max(space.h_norm_sq(&diff));
        sample.sum_v_sq += space.v_norm_sq(&diff) * coarse.tau;
        sample.sup_grid = diff.iter().fold(sample.sup_grid, |acc, d| acc.max(d.abs()));
    }
    Ok(sample)
}

/// Least-squares line through `(log₂τ, log₂mean)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub metric: String,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

pub fn fit_rate(taus: &[f64], means: &[f64]) -> Result<RateFit> {
    if taus.len() != means.len() {
        return Err(Error::Dimension { expected: taus.len(), got: means.len() });
    }
    if taus.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 levels, got {}", taus.len())));
    }
    if let Some(bad) = taus.iter().chain(means).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::DegenerateFit(format!("non-positive or non-finite value {bad}")));
    }
    let xs: Vec<f64> = taus.iter().map(|t| t.log2()).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.log2()).collect();
    let k = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / k;
    let y_mean = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all step sizes coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (ssr / (k - 2.0) / sxx).sqrt();
    Ok(RateFit { metric: String::new(), slope, intercept, stderr })
}

/// `exp(t·a·Δ_h) u₀` through the eigenvectors of the periodic Laplacian.
pub fn heat_exact_oracle(space: &GridSpace, diffusion_coeff: f64, u0: &[f64], t: f64) -> StateVector {
    let n = space.n();
    let h = space.h();
    let angle = std::f64::consts::TAU / n as f64;
    let mut out = vec![0.0; n];
    for k in 0..n {
        let lambda = -diffusion_coeff * 4.0 / (h * h) * (std::f64::consts::PI * k as f64 / n as f64).sin().powi(2);
        let decay = (lambda * t).exp();
        if decay == 0.0 {
            continue;
        }
        let (mut c, mut s) = (0.0, 0.0);
        for (j, u) in u0.iter().enumerate() {
            let (sin, cos) = (angle * ((k * j) % n) as f64).sin_cos();
            c += u * cos;
            s += u * sin;
        }
        for (i, o) in out.iter_mut().enumerate() {
            let (sin, cos) = (angle * ((k * i) % n) as f64).sin_cos();
            *o += decay * (c * cos + s * sin);
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    out.into()
}

/// Regularity statistics of a (fine) trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    /// `max_i |u(t_{i+1}) - u(t_i)|²_V / τ^{2ν}`
    pub increment_ratio: f64,
    /// `max_i |u(t_i)|_V`
    pub v_sup: f64,
}

pub fn surrogate_t2_t3_check(space: &GridSpace, fine: &Trajectory, nu: f64) -> SurrogateReport {
    let scale = fine.tau.powf(2.0 * nu);
    let increment_ratio =
        fine.states.windows(2).map(|w| space.v_norm_sq(&w[1].sub(&w[0])) / scale).fold(0.0, f64::max);
    let v_sup = fine.states.iter().map(|u| space.v_norm_sq(u).sqrt()).fold(0.0, f64::max);
    SurrogateReport { increment_ratio, v_sup }
}

/// `max_{0≤i≤m} |u(t_i)|²_H + Σ_{1≤i≤m} |u(t_i)|²_V τ`
pub fn apriori_statistic(space: &GridSpace, traj: &Trajectory) -> f64 {
    let max_h = traj.states.iter().map(|u| space.h_norm_sq(u)).fold(0.0, f64::max);
    let sum_v: f64 = traj.states[1..].iter().map(|u| space.v_norm_sq(u)).sum();
    max_h + sum_v * traj.tau
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_levels")]
    pub levels: Vec<usize>,
    #[serde(default = "default_m_fine")]
    pub m_fine: usize,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_levels() -> Vec<usize> {
    vec![16, 32, 64, 128, 256]
}

fn default_m_fine() -> usize {
    1 << 13
}

fn default_n_paths() -> usize {
    200
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { levels: default_levels(), m_fine: default_m_fine(), n_paths: default_n_paths(), base_seed: 0 }
    }
}

impl StudyConfig {
    /// Checks the level structure and scheme admissibility at every level.
    pub fn validate(&self, p: &EvolutionProblem, cfg: &SchemeConfig) -> Result<()> {
        if self.levels.is_empty() || self.n_paths == 0 {
            return Err(Error::config("study needs at least one level and one path"));
        }
        if !self.m_fine.is_power_of_two() {
            return Err(Error::config(format!("m_fine = {} must be a power of two", self.m_fine)));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("levels must be strictly increasing"));
        }
        for &m in self.levels.iter().chain(std::iter::once(&self.m_fine)) {
            if m == 0 || !self.m_fine.is_multiple_of(m) {
                return Err(Error::config(format!("level {m} does not divide m_fine = {}", self.m_fine)));
            }
            cfg.with_m(m).validate(p)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub m: usize,
    pub tau: f64,
    pub mean_max_h_sq: f64,
    pub stderr_max_h_sq: f64,
    pub mean_sum_v_sq: f64,
    pub stderr_sum_v_sq: f64,
    pub mean_sup_grid: f64,
    pub n_paths_ok: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSummary {
    pub mean_increment_ratio: f64,
    pub max_increment_ratio: f64,
    pub mean_v_sup: f64,
    pub max_v_sup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub problem: String,
    pub m_fine: usize,
    pub n_paths: usize,
    pub excluded: usize,
    pub base_seed: u64,
    pub generator: String,
    pub config_hash: String,
    pub levels: Vec<LevelSummary>,
    pub fits: Vec<RateFit>,
    pub surrogate: Option<SurrogateSummary>,
}

pub const METRICS: [&str; 3] = ["max_H_sq", "sum_V_sq", "sup_grid"];

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

impl ConvergenceReport {
    /// Aggregates per-path samples in path order. `None` marks an excluded path.
    pub fn from_samples(
        problem: &str,
        horizon: f64,
        study: &StudyConfig,
        per_path: &[Option<Vec<ErrorSample>>],
        config_hash: String,
    ) -> Result<Self> {
        let ok: Vec<&Vec<ErrorSample>> = per_path.iter().flatten().collect();
        let mut levels = Vec::with_capacity(study.levels.len());
        for (j, &m) in study.levels.iter().enumerate() {
            let pick = |f: fn(&ErrorSample) -> f64| ok.iter().map(|s| f(&s[j])).collect::<Vec<f64>>();
            let (mean_max_h_sq, stderr_max_h_sq) = mean_stderr(&pick(|s| s.max_h_sq));
            let (mean_sum_v_sq, stderr_sum_v_sq) = mean_stderr(&pick(|s| s.sum_v_sq));
            let (mean_sup_grid, _) = mean_stderr(&pick(|s| s.sup_grid));
            levels.push(LevelSummary {
                m,
                tau: horizon / m as f64,
                mean_max_h_sq,
                stderr_max_h_sq,
                mean_sum_v_sq,
                stderr_sum_v_sq,
                mean_sup_grid,
                n_paths_ok: ok.len(),
            });
        }
        let mut report = Self {
            problem: problem.to_string(),
            m_fine: study.m_fine,
            n_paths: per_path.len(),
            excluded: per_path.len() - ok.len(),
            base_seed: study.base_seed,
            generator: GENERATOR_VERSION.to_string(),
            config_hash,
            levels,
            fits: Vec::new(),
            surrogate: None,
        };
        if report.levels.len() >= 3 {
            let taus: Vec<f64> = report.levels.iter().map(|l| l.tau).collect();
            for metric in METRICS {
                let means: Vec<f64> = report.levels.iter().map(|l| report_metric(l, metric)).collect();
                let mut fit = fit_rate(&taus, &means)?;
                fit.metric = metric.to_string();
                report.fits.push(fit);
            }
        }
        Ok(report)
    }

    pub fn fit(&self, metric: &str) -> Option<&RateFit> {
        self.fits.iter().find(|f| f.metric == metric)
    }

    /// Levels `m` whose mean `max_H_sq` exceeds the next coarser one by more
    /// than two combined standard errors.
    pub fn refinement_violations(&self) -> Vec<usize> {
        self.levels
            .windows(2)
            .filter(|w| {
                let se = (w[0].stderr_max_h_sq.powi(2) + w[1].stderr_max_h_sq.powi(2)).sqrt();
                w[1].mean_max_h_sq > w[0].mean_max_h_sq + 2.0 * if se.is_nan() { 0.0 } else { se }
            })
            .map(|w| w[1].m)
            .collect()
    }

    /// Header comments, one row per level and `fit` footer rows. The
    /// timestamp, if any, sits alone on the last header line.
    pub fn to_csv(&self, timestamp: Option<&str>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# generator={}", self.generator);
        let _ = writeln!(out, "# base_seed={}", self.base_seed);
        let _ = writeln!(out, "# config_hash={}", self.config_hash);
        let _ = writeln!(out, "# problem={} m_fine={} n_paths={} excluded={}", self.problem, self.m_fine, self.n_paths, self.excluded);
        if let Some(ts) = timestamp {
            let _ = writeln!(out, "# timestamp={ts}");
        }
        out.push_str(&self.csv_body());
        out
    }

    /// The CSV without any header comments.
    pub fn csv_body(&self) -> String {
        let mut out = String::from(
            "m,tau,mean_max_H_sq,stderr_max_H_sq,mean_sum_V_sq,stderr_sum_V_sq,mean_sup_grid,n_paths_ok\n",
        );
        for l in &self.levels {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                l.m, l.tau, l.mean_max_h_sq, l.stderr_max_h_sq, l.mean_sum_v_sq, l.stderr_sum_v_sq, l.mean_sup_grid, l.n_paths_ok
            );
        }
        for f in &self.fits {
            let _ = writeln!(out, "fit,{},{:.16e},{:.16e},{:.16e}", f.metric, f.slope, f.stderr, f.intercept);
        }
        out
    }
}

fn report_metric(l: &LevelSummary, metric: &str) -> f64 {
    match metric {
        "max_H_sq" => l.mean_max_h_sq,
        "sum_V_sq" => l.mean_sum_v_sq,
        _ => l.mean_sup_grid,
    }
}

/// Hex SHA-256 of a serializable value's JSON.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `work(path)` for every path, on at most `threads` workers. Results
/// come back in path order.
pub fn run_paths<T: Send>(n_paths: usize, threads: Option<usize>, work: impl Fn(u64) -> T + Send + Sync) -> Result<Vec<T>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        if k == 0 {
            return Err(Error::config("thread count must be at least 1"));
        }
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n_paths as u64).into_par_iter().map(&work).collect()))
}

/// Increments at every level, obtained by repeated halving from the fine
/// lattice and checked against direct coarsening.
fn coupled_increments(lattice: &BrownianLattice, levels: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut chain = lattice.increments().to_vec();
    let mut m = lattice.m_fine();
    let mut by_level = vec![Vec::new(); levels.len()];
    while m >= 1 {
        if let Some(j) = levels.iter().position(|&l| l == m) {
            if chain != lattice.coarsen(m)? {
                return Err(Error::config(format!("coarsening does not telescope at level {m}")));
            }
            by_level[j] = chain.clone();
        }
        if m == 1 {
            break;
        }
        m /= 2;
        chain = coarsen_increments(&chain, m)?;
    }
    Ok(by_level)
}

fn is_path_failure(e: &Error) -> bool {
    matches!(e, Error::StepFailure { .. })
}

fn check_exclusions(excluded: usize, total: usize) -> Result<()> {
    if excluded * 100 > total {
        return Err(Error::StudyFailed { excluded, total });
    }
    Ok(())
}

type PathOutcome = Result<Option<(Vec<ErrorSample>, SurrogateReport)>>;

/// The convergence study. `threads = None` uses all available cores; the
/// result does not depend on the worker count.
pub fn run_study(
    p: &EvolutionProblem,
    study: &StudyConfig,
    cfg: &SchemeConfig,
    threads: Option<usize>,
) -> Result<ConvergenceReport> {
    study.validate(p, cfg)?;
    let hash = config_hash(&(p.name(), p.space().n(), p.horizon(), study, cfg));
    let space = *p.space();
    let nu = p.declared().nu;
    let outcomes: Vec<PathOutcome> = run_paths(study.n_paths, threads, |path| {
        let lattice = BrownianLattice::generate(p.d1(), study.m_fine, p.horizon(), path_seed(study.base_seed, path))?;
        let coupled = coupled_increments(&lattice, &study.levels)?;
        let attempt = || -> Result<(Vec<ErrorSample>, SurrogateReport)> {
            let fine = run_scheme(p, &cfg.with_m(study.m_fine), lattice.increments())?;
            let mut samples = Vec::with_capacity(study.levels.len());
            for (&m, incr) in study.levels.iter().zip(&coupled) {
                let coarse = run_scheme(p, &cfg.with_m(m), incr)?;
                samples.push(error_metrics(&space, &coarse, &fine)?);
            }
            Ok((samples, surrogate_t2_t3_check(&space, &fine, nu)))
        };
        match attempt() {
            Ok(v) => Ok(Some(v)),
            Err(e) if is_path_failure(&e) => Ok(None),
            Err(e) => Err(e),
        }
    })?;
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let excluded = outcomes.iter().filter(|o| o.is_none()).count();
    check_exclusions(excluded, study.n_paths)?;
    let samples: Vec<Option<Vec<ErrorSample>>> = outcomes.iter().map(|o| o.as_ref().map(|(s, _)| s.clone())).collect();
    let mut report = ConvergenceReport::from_samples(p.name(), p.horizon(), study, &samples, hash)?;
    let surrogates: Vec<SurrogateReport> = outcomes.iter().flatten().map(|(_, s)| *s).collect();
    if !surrogates.is_empty() {
        let ratios: Vec<f64> = surrogates.iter().map(|s| s.increment_ratio).collect();
        let sups: Vec<f64> = surrogates.iter().map(|s| s.v_sup).collect();
        report.surrogate = Some(SurrogateSummary {
            mean_increment_ratio: mean_stderr(&ratios).0,
            max_increment_ratio: ratios.iter().cloned().fold(0.0, f64::max),
            mean_v_sup: mean_stderr(&sups).0,
            max_v_sup: sups.iter().cloned().fold(0.0, f64::max),
        });
    }
    Ok(report)
}

/// Mean of [`apriori_statistic`] per level, with coupled noise across levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AprioriLevel {
    pub m: usize,
    pub mean: f64,
    pub stderr: f64,
}

pub fn apriori_study(
    p: &EvolutionProblem,
    levels: &[usize],
    n_paths: usize,
    base_seed: u64,
    cfg: &SchemeConfig,
    threads: Option<usize>,
) -> Result<Vec<AprioriLevel>> {
    let m_fine = *levels.iter().max().ok_or_else(|| Error::config("no levels"))?;
    let study = StudyConfig { levels: levels.to_vec(), m_fine, n_paths, base_seed };
    study.validate(p, cfg)?;
    let space = *p.space();
    let outcomes: Vec<Result<Option<Vec<f64>>>> = run_paths(n_paths, threads, |path| {
        let lattice = BrownianLattice::generate(p.d1(), m_fine, p.horizon(), path_seed(base_seed, path))?;
        let coupled = coupled_increments(&lattice, levels)?;
        let stats = levels
            .iter()
            .zip(&coupled)
            .map(|(&m, incr)| run_scheme(p, &cfg.with_m(m), incr).map(|t| apriori_statistic(&space, &t)))
            .collect::<Result<Vec<f64>>>();
        match stats {
            Ok(s) => Ok(Some(s)),
            Err(e) if is_path_failure(&e) => Ok(None),
            Err(e) => Err(e),
        }
    })?;
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let ok: Vec<&Vec<f64>> = outcomes.iter().flatten().collect();
    check_exclusions(n_paths - ok.len(), n_paths)?;
    Ok(levels
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let (mean, stderr) = mean_stderr(&ok.iter().map(|s| s[j]).collect::<Vec<_>>());
            AprioriLevel { m, mean, stderr }
        })
        .collect())
}
