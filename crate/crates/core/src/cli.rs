//! Command-line front end. A run is described by a strict JSON file:
//!
//! ```json
//! {
//!   "command": "convergence",
//!   "problem": { "gallery": "quasilinear", "n": 64 },
//!   "scheme": { "coeff_mode": "averaged", "first_step_diffusion": "paper" },
//!   "study": { "levels": [16, 32, 64, 128, 256], "m_fine": 8192, "n_paths": 200, "base_seed": 1 },
//!   "windows": { "max_H_sq": [0.8, 1.2] }
//! }
//! ```
//!
//! Exit codes: 0 success, 1 completed with a failed check, 2 configuration or
//! usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{path_seed, BrownianLattice};
use crate::problem::{
    assemble_quasilinear, build_gallery, gallery_spec, probe_parabolicity, run_all_probes, Gallery, GalleryParams,
    ProbeReport,
};
use crate::space::GridSpace;
use crate::stepper::{
    run_scheme, CoeffMode, FirstStepDiffusion, InnerSolverConfig, SchemeConfig, Trajectory,
};
use crate::study::{config_hash, heat_exact_oracle, run_study, ConvergenceReport, StudyConfig, METRICS};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "SPDE_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "implicit-spde", about = "Implicit Euler schemes for stochastic evolution equations")]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config and the environment).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads for Monte-Carlo paths.
    #[arg(long)]
    threads: Option<usize>,
    /// Base seed (overrides `study.base_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// For `solve`: also write the full trajectory.
    #[arg(long)]
    dump_trajectory: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Check,
    Solve,
    Oracle,
    Convergence,
    FirstStepCompare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub gallery: Gallery,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

impl ProblemConfig {
    pub fn params(&self) -> GalleryParams {
        GalleryParams { n: self.n, horizon: self.horizon, a: self.a, b: self.b }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    /// Steps for `solve` and `oracle`; ignored by studies.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub coeff_mode: CoeffMode,
    #[serde(default = "default_quadrature_points")]
    pub quadrature_points: usize,
    #[serde(default)]
    pub inner: InnerSolverConfig,
    #[serde(default)]
    pub first_step_diffusion: FirstStepDiffusion,
}

fn default_m() -> usize {
    64
}

fn default_quadrature_points() -> usize {
    8
}

impl Default for SchemeSection {
    fn default() -> Self {
        Self {
            m: default_m(),
            coeff_mode: CoeffMode::default(),
            quadrature_points: default_quadrature_points(),
            inner: InnerSolverConfig::default(),
            first_step_diffusion: FirstStepDiffusion::default(),
        }
    }
}

impl SchemeSection {
    pub fn scheme(&self) -> SchemeConfig {
        SchemeConfig {
            m: self.m,
            coeff_mode: self.coeff_mode,
            quadrature_points: self.quadrature_points,
            inner: self.inner.clone(),
            first_step_diffusion: self.first_step_diffusion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    1000
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self { trials: default_trials(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub probes: ProbeSection,
    /// Acceptance windows `[lo, hi]` for fitted slopes, keyed by metric name.
    #[serde(default)]
    pub windows: BTreeMap<String, [f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        for (metric, [lo, hi]) in &cfg.windows {
            if !METRICS.contains(&metric.as_str()) {
                return Err(Error::config(format!("unknown window metric {metric:?}; expected one of {METRICS:?}")));
            }
            if !(lo <= hi) {
                return Err(Error::config(format!("window for {metric} has lo > hi")));
            }
        }
        Ok(cfg)
    }

    /// Hash of everything that affects results (the output directory does not).
    pub fn hash(&self) -> String {
        config_hash(&RunConfig { output: None, ..self.clone() })
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::StepFailure { .. } | Error::StudyFailed { .. } | Error::DegenerateFit(_) => EXIT_FAILED,
        _ => EXIT_USAGE,
    }
}

fn run(args: &Args) -> Result<i32> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.study.base_seed = seed;
    }
    let out_dir = args
        .output
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Context { cfg, out_dir, threads: args.threads, dump: args.dump_trajectory };
    if ctx.threads == Some(0) {
        return Err(Error::config("--threads must be at least 1"));
    }
    match ctx.cfg.command {
        Command::Check => ctx.check(),
        Command::Solve => ctx.solve(),
        Command::Oracle => ctx.oracle(),
        Command::Convergence => ctx.convergence(),
        Command::FirstStepCompare => ctx.first_step_compare(),
    }
}

struct Context {
    cfg: RunConfig,
    out_dir: PathBuf,
    threads: Option<usize>,
    dump: bool,
}

/// Writes `contents` to `dir/name` via a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
    Ok(path)
}

fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("unix:{secs}")
}

impl Context {
    fn problem(&self) -> Result<crate::problem::EvolutionProblem> {
        build_gallery(self.cfg.problem.gallery, &self.cfg.problem.params())
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = write_atomic(&self.out_dir, name, contents)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn check(&self) -> Result<i32> {
        let gallery = self.cfg.problem.gallery;
        let params = self.cfg.problem.params();
        let probes = &self.cfg.probes;
        if probes.trials == 0 {
            return Err(Error::config("probes.trials must be at least 1"));
        }
        let mut reports: Vec<ProbeReport> = Vec::new();
        let problem = if gallery == Gallery::AntiMonotone {
            build_gallery(gallery, &params)?
        } else {
            let spec = gallery_spec(gallery, &params)?;
            let space = GridSpace::new(params.n())?;
            let parabolic = probe_parabolicity(&spec, &space);
            let ok = parabolic.passed;
            reports.push(parabolic);
            if !ok {
                return self.finish_check(gallery, reports);
            }
            assemble_quasilinear(&spec, space)?
        };
        reports.extend(run_all_probes(&problem, probes.trials, probes.seed));
        self.finish_check(gallery, reports)
    }

    fn finish_check(&self, gallery: Gallery, reports: Vec<ProbeReport>) -> Result<i32> {
        let mut text = format!("probe report for {gallery}\n");
        for r in &reports {
            println!("{}", r.summary());
            let _ = writeln!(text, "{}", r.summary());
        }
        let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.condition.as_str()).collect();
        if failed.is_empty() {
            text.push_str("all probes passed\n");
        } else {
            let _ = writeln!(text, "failed: {}", failed.join(", "));
            eprintln!("failed conditions: {}", failed.join(", "));
        }
        self.write("probe_report.txt", &text)?;
        self.write("probe_report.json", &serde_json::to_string_pretty(&reports)?)?;
        Ok(if failed.is_empty() { EXIT_OK } else { EXIT_FAILED })
    }

    fn solve(&self) -> Result<i32> {
        let p = self.problem()?;
        let scheme = self.cfg.scheme.scheme();
        scheme.validate(&p)?;
        let lattice = BrownianLattice::generate(p.d1(), scheme.m, p.horizon(), path_seed(self.cfg.study.base_seed, 0))?;
        let traj = run_scheme(&p, &scheme, lattice.increments())?;
        let space = p.space();
        println!(
            "{}: m = {}, |u(T)|_H = {:.6e}, max residual {:.3e}, total inner iterations {}",
            p.name(),
            scheme.m,
            space.h_norm_sq(traj.final_state()).sqrt(),
            traj.residuals.iter().cloned().fold(0.0, f64::max),
            traj.iteration_counts.iter().sum::<usize>()
        );
        if self.dump {
            self.write("trajectory.csv", &trajectory_csv(&traj))?;
        }
        self.write("residuals.csv", &residual_csv(&traj))?;
        Ok(EXIT_OK)
    }

    fn oracle(&self) -> Result<i32> {
        if self.cfg.problem.gallery != Gallery::Heat {
            return Err(Error::config("oracle needs the heat gallery (constant coefficient, no noise, no forcing)"));
        }
        let p = self.problem()?;
        let scheme = self.cfg.scheme.scheme();
        scheme.validate(&p)?;
        let traj = crate::stepper::run_deterministic(&p, &scheme)?;
        let a = self.cfg.problem.a.unwrap_or(1.0);
        let space = p.space();
        let mut csv = String::from("i,t,h_error\n");
        let mut final_err = 0.0;
        for (i, u) in traj.states.iter().enumerate() {
            let t = i as f64 * traj.tau;
            let err = space.h_norm_sq(&heat_exact_oracle(space, a, p.initial(), t).sub(u)).sqrt();
            let _ = writeln!(csv, "{i},{t:.16e},{err:.16e}");
            final_err = err;
        }
        println!("heat oracle: m = {}, H-error at T = {final_err:.6e}", scheme.m);
        self.write("oracle.csv", &csv)?;
        Ok(EXIT_OK)
    }

    fn study(&self, scheme: &SchemeConfig) -> Result<ConvergenceReport> {
        let p = self.problem()?;
        let mut report = run_study(&p, &self.cfg.study, scheme, self.threads)?;
        let mut keyed = self.cfg.clone();
        keyed.scheme.first_step_diffusion = scheme.first_step_diffusion;
        report.config_hash = keyed.hash();
        Ok(report)
    }

    fn convergence(&self) -> Result<i32> {
        let report = self.study(&self.cfg.scheme.scheme())?;
        print!("{}", report.csv_body());
        self.write("convergence.csv", &report.to_csv(Some(&timestamp())))?;
        self.write("convergence.json", &serde_json::to_string_pretty(&report)?)?;
        let mut pass = true;
        for (metric, [lo, hi]) in &self.cfg.windows {
            let fit = report.fit(metric).ok_or_else(|| Error::DegenerateFit(format!("no fit for {metric}")))?;
            let inside = (*lo..=*hi).contains(&fit.slope);
            println!("{} {metric} slope {:.4} in [{lo}, {hi}]", if inside { "PASS" } else { "FAIL" }, fit.slope);
            pass &= inside;
        }
        Ok(if pass { EXIT_OK } else { EXIT_FAILED })
    }

    fn first_step_compare(&self) -> Result<i32> {
        let base = self.cfg.scheme.scheme();
        let paper = self.study(&SchemeConfig { first_step_diffusion: FirstStepDiffusion::Paper, ..base.clone() })?;
        let natural = self.study(&SchemeConfig { first_step_diffusion: FirstStepDiffusion::Natural, ..base })?;
        let ts = timestamp();
        self.write("convergence_paper.csv", &paper.to_csv(Some(&ts)))?;
        self.write("convergence_natural.csv", &natural.to_csv(Some(&ts)))?;
        let comparison = first_step_comparison(&paper, &natural);
        print!("{comparison}");
        self.write("first_step_compare.csv", &comparison)?;
        Ok(EXIT_OK)
    }
}

/// Slope differences and per-level mean differences between the two
/// first-step conventions.
pub fn first_step_comparison(paper: &ConvergenceReport, natural: &ConvergenceReport) -> String {
    let mut out = String::from("kind,key,paper,natural,difference\n");
    for metric in METRICS {
        if let (Some(a), Some(b)) = (paper.fit(metric), natural.fit(metric)) {
            let _ = writeln!(out, "slope,{metric},{:.16e},{:.16e},{:.16e}", a.slope, b.slope, b.slope - a.slope);
        }
    }
    for (a, b) in paper.levels.iter().zip(&natural.levels) {
        let _ = writeln!(
            out,
            "mean_max_H_sq,{},{:.16e},{:.16e},{:.16e}",
            a.m,
            a.mean_max_h_sq,
            b.mean_max_h_sq,
            b.mean_max_h_sq - a.mean_max_h_sq
        );
    }
    out
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.states.first().map_or(0, |s| s.len());
    let mut out = String::from("t");
    for j in 0..n {
        let _ = write!(out, ",u{j}");
    }
    out.push('\n');
    for (i, s) in traj.states.iter().enumerate() {
        let _ = write!(out, "{:.16e}", i as f64 * traj.tau);
        for v in s.iter() {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn residual_csv(traj: &Trajectory) -> String {
    let mut out = String::from("step,residual,iterations\n");
    for (i, (r, k)) in traj.residuals.iter().zip(&traj.iteration_counts).enumerate() {
        let _ = writeln!(out, "{i},{r:.16e},{k}");
    }
    out
}
