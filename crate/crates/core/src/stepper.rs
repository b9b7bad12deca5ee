//! The drift-implicit scheme
//!
//! ```text
//! u(t_{i+1}) = u(t_i) + τ·A^τ_i(u(t_{i+1})) + Σ_k B^τ_{k,i}(u(t_i))·ΔW^k_i
//! ```
//!
//! with `A^τ_i` the time average of `A` over `[t_i, t_{i+1}]` and `B^τ_{k,i}`
//! the average of `B_k` over the previous interval (zero on the first step),
//! or the endpoint evaluations `A(t_{i+1}, ·)`, `B_k(t_i, ·)`. Each step
//! solves the monotone equation `x - τA^τ_i(x) = y`.

use serde::{Deserialize, Serialize};

use crate::banded::{CyclicFactor, CyclicTridiagonal};
use crate::error::{Error, Result};
use crate::problem::EvolutionProblem;
use crate::space::StateVector;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoeffMode {
    /// Interval averages of the coefficients.
    #[default]
    Averaged,
    /// `A(t_{i+1}, ·)` and `B_k(t_i, ·)`.
    Endpoint,
}

/// What the averaged scheme uses for the diffusion on the first step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstStepDiffusion {
    /// `B^τ_{k,0} = 0`, later steps lag one interval behind.
    #[default]
    Paper,
    /// Every step averages `B_k` over its own interval `[t_i, t_{i+1}]`.
    Natural,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMethod {
    /// One banded solve; needs an affine drift.
    Direct,
    #[default]
    Newton,
    /// Fixed-point iteration, preconditioned by the drift's stiff linear part
    /// when there is one. Falls back to Newton when it does not contract.
    Picard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerSolverConfig {
    pub method: InnerMethod,
    /// Residual tolerance relative to `|y|_H`.
    pub rel_tol: f64,
    /// Absolute floor of the residual tolerance.
    pub abs_tol: f64,
    pub max_iter: usize,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self { method: InnerMethod::Newton, rel_tol: 1e-10, abs_tol: 1e-14, max_iter: 50 }
    }
}

impl InnerSolverConfig {
    pub fn with_method(method: InnerMethod) -> Self {
        Self { method, ..Self::default() }
    }

    pub fn tolerance(&self, y_norm: f64) -> f64 {
        (self.rel_tol * y_norm).max(self.abs_tol)
    }

    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::config("inner solver needs positive tolerances and max_iter >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    /// Number of time steps; `τ = T/m`.
    pub m: usize,
    #[serde(default)]
    pub coeff_mode: CoeffMode,
    /// Composite-midpoint nodes for each interval average.
    #[serde(default = "default_quadrature_points")]
    pub quadrature_points: usize,
    #[serde(default)]
    pub inner: InnerSolverConfig,
    #[serde(default)]
    pub first_step_diffusion: FirstStepDiffusion,
}

fn default_quadrature_points() -> usize {
    8
}

impl SchemeConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            coeff_mode: CoeffMode::Averaged,
            quadrature_points: default_quadrature_points(),
            inner: InnerSolverConfig::default(),
            first_step_diffusion: FirstStepDiffusion::Paper,
        }
    }

    pub fn with_m(&self, m: usize) -> Self {
        Self { m, ..self.clone() }
    }

    pub fn tau(&self, p: &EvolutionProblem) -> f64 {
        p.horizon() / self.m as f64
    }

    /// Checks `m ≥ 1`, the quadrature and solver settings, and the step-size
    /// condition `1 - L·τ ≥ ½` for the declared monotonicity constant `L`.
    pub fn validate(&self, p: &EvolutionProblem) -> Result<()> {
        if self.m == 0 || self.quadrature_points == 0 {
            return Err(Error::config("scheme needs m >= 1 and quadrature_points >= 1"));
        }
        self.inner.validate()?;
        let l = p.declared().monotonicity;
        let tau = self.tau(p);
        if 1.0 - l * tau < 0.5 {
            return Err(Error::config(format!(
                "step size tau = {tau} too large for L = {l}: need 1 - L*tau >= 1/2 (m >= {})",
                (2.0 * l * p.horizon()).ceil()
            )));
        }
        Ok(())
    }
}

/// `{u(t_0), ..., u(t_m)}` with per-step inner-solver diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub tau: f64,
    pub states: Vec<StateVector>,
    pub residuals: Vec<f64>,
    pub iteration_counts: Vec<usize>,
}

impl Trajectory {
    pub fn m(&self) -> usize {
        self.states.len() - 1
    }

    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("trajectory holds at least u(t_0)")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: StateVector,
    pub residual: f64,
    pub iterations: usize,
    /// Picard did not contract and Newton finished the step.
    pub fell_back: bool,
}

/// Equal-weight quadrature nodes for one interval average.
#[derive(Clone, Debug, PartialEq)]
struct TimeRule {
    nodes: Vec<f64>,
}

impl TimeRule {
    fn single(t: f64) -> Self {
        Self { nodes: vec![t] }
    }

    fn midpoint(start: f64, len: f64, points: usize) -> Self {
        let h = len / points as f64;
        Self { nodes: (0..points).map(|j| start + (j as f64 + 0.5) * h).collect() }
    }

    fn weight(&self) -> f64 {
        1.0 / self.nodes.len() as f64
    }
}

/// Solution of an inner equation together with its residual.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerSolution {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InnerFailure {
    NotConverged { best: Vec<f64>, residual: f64 },
    Singular { residual: f64 },
    NotContracting { residual: f64 },
}

impl InnerFailure {
    fn residual(&self) -> f64 {
        match self {
            InnerFailure::NotConverged { residual, .. }
            | InnerFailure::Singular { residual }
            | InnerFailure::NotContracting { residual } => *residual,
        }
    }

    fn reason(&self) -> &'static str {
        match self {
            InnerFailure::NotConverged { .. } => "inner solver did not reach tolerance",
            InnerFailure::Singular { .. } => "singular Jacobian",
            InnerFailure::NotContracting { .. } => "fixed-point map does not contract",
        }
    }
}

/// Newton's method for `R(x) = 0`.
///
/// `residual` returns `R(x)`, `jacobian` returns a factorization of `R'(x)`
/// and `norm` measures residuals. Stops as soon as `norm(R(x)) ≤ tol`.
pub fn newton_solve(
    mut residual: impl FnMut(&[f64]) -> Vec<f64>,
    mut jacobian: impl FnMut(&[f64]) -> Result<CyclicFactor>,
    norm: impl Fn(&[f64]) -> f64,
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> std::result::Result<InnerSolution, InnerFailure> {
    let mut x = x0;
    let mut best = (f64::INFINITY, x.clone());
    for iter in 0..=max_iter {
        let r = residual(&x);
        let rn = norm(&r);
        if rn <= tol {
            return Ok(InnerSolution { x, residual: rn, iterations: iter });
        }
        if rn < best.0 {
            best = (rn, x.clone());
        }
        if iter == max_iter || !rn.is_finite() {
            break;
        }
        let Ok(factor) = jacobian(&x) else {
            return Err(InnerFailure::Singular { residual: best.0 });
        };
        let dx = factor.solve(&r);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi -= d;
        }
    }
    Err(InnerFailure::NotConverged { best: best.1, residual: best.0 })
}

/// Fixed-point iteration `x ← Φ(x)`.
///
/// `map` returns `(Φ(x), norm(R(x)))` so that the residual of the current
/// iterate comes for free. Two consecutive residual increases are reported
/// as [`InnerFailure::NotContracting`].
pub fn picard_solve(
    mut map: impl FnMut(&[f64]) -> (Vec<f64>, f64),
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> std::result::Result<InnerSolution, InnerFailure> {
    let mut x = x0;
    let mut best = (f64::INFINITY, x.clone());
    let mut last = f64::INFINITY;
    let mut increases = 0;
    for iter in 0..=max_iter {
        let (next, rn) = map(&x);
        if rn <= tol {
            return Ok(InnerSolution { x, residual: rn, iterations: iter });
        }
        if rn < best.0 {
            best = (rn, x.clone());
        }
        increases = if rn > last { increases + 1 } else { 0 };
        if increases >= 2 || !rn.is_finite() {
            return Err(InnerFailure::NotContracting { residual: best.0 });
        }
        last = rn;
        x = next;
    }
    Err(InnerFailure::NotConverged { best: best.1, residual: best.0 })
}

/// Executes the scheme for one problem and configuration. Holds the
/// per-trajectory cache of the banded factorization of `I - τ·M`.
pub struct Stepper<'p> {
    problem: &'p EvolutionProblem,
    cfg: SchemeConfig,
    tau: f64,
    linear_cache: Option<(CyclicTridiagonal, Vec<f64>, CyclicFactor)>,
}

impl<'p> Stepper<'p> {
    pub fn new(problem: &'p EvolutionProblem, cfg: &SchemeConfig) -> Result<Self> {
        cfg.validate(problem)?;
        Ok(Self { problem, cfg: cfg.clone(), tau: cfg.tau(problem), linear_cache: None })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn t(&self, i: usize) -> f64 {
        i as f64 * self.tau
    }

    fn drift_rule(&self, i: usize) -> TimeRule {
        match self.cfg.coeff_mode {
            CoeffMode::Endpoint => TimeRule::single(self.t(i + 1)),
            CoeffMode::Averaged if !self.problem.drift().is_time_dependent() => TimeRule::single(self.t(i)),
            CoeffMode::Averaged => TimeRule::midpoint(self.t(i), self.tau, self.cfg.quadrature_points),
        }
    }

    /// `None` means the step uses zero diffusion.
    fn diffusion_rule(&self, i: usize, time_dependent: bool) -> Option<TimeRule> {
        let start = match (self.cfg.coeff_mode, self.cfg.first_step_diffusion) {
            (CoeffMode::Endpoint, _) => return Some(TimeRule::single(self.t(i))),
            (CoeffMode::Averaged, FirstStepDiffusion::Paper) if i == 0 => return None,
            (CoeffMode::Averaged, FirstStepDiffusion::Paper) => self.t(i - 1),
            (CoeffMode::Averaged, FirstStepDiffusion::Natural) => self.t(i),
        };
        Some(if time_dependent {
            TimeRule::midpoint(start, self.tau, self.cfg.quadrature_points)
        } else {
            TimeRule::single(start)
        })
    }

    /// `A^τ_i(v)`.
    pub fn averaged_drift(&self, i: usize, v: &[f64]) -> StateVector {
        let rule = self.drift_rule(i);
        let n = self.problem.space().n();
        let drift = self.problem.drift();
        if rule.nodes.len() == 1 {
            let mut out = StateVector::zeros(n);
            drift.apply(rule.nodes[0], v, &mut out);
            return out;
        }
        let mut acc = StateVector::zeros(n);
        let mut buf = vec![0.0; n];
        for &s in &rule.nodes {
            drift.apply(s, v, &mut buf);
            acc.axpy(1.0, &buf);
        }
        acc.scaled(rule.weight())
    }

    /// `B^τ_{k,i}(v)` for every component.
    pub fn averaged_diffusion(&self, i: usize, v: &[f64]) -> Vec<StateVector> {
        let n = self.problem.space().n();
        self.problem
            .diffusion()
            .iter()
            .map(|b| {
                let Some(rule) = self.diffusion_rule(i, b.is_time_dependent()) else {
                    return StateVector::zeros(n);
                };
                let mut buf = vec![0.0; n];
                if rule.nodes.len() == 1 {
                    b.apply(rule.nodes[0], v, &mut buf);
                    return buf.into();
                }
                let mut acc = StateVector::zeros(n);
                for &s in &rule.nodes {
                    b.apply(s, v, &mut buf);
                    acc.axpy(1.0, &buf);
                }
                acc.scaled(rule.weight())
            })
            .collect()
    }

    fn averaged_jacobian(&self, i: usize, v: &[f64]) -> Option<CyclicTridiagonal> {
        let rule = self.drift_rule(i);
        let drift = self.problem.drift();
        average_matrices(&rule, |s| drift.jacobian(s, v))
    }

    fn averaged_stiff_part(&self, i: usize) -> Option<CyclicTridiagonal> {
        let rule = self.drift_rule(i);
        let drift = self.problem.drift();
        average_matrices(&rule, |s| drift.stiff_part(s))
    }

    fn averaged_affine(&self, i: usize) -> Option<(CyclicTridiagonal, Vec<f64>)> {
        let rule = self.drift_rule(i);
        let drift = self.problem.drift();
        let matrix = average_matrices(&rule, |s| drift.affine_part(s).map(|a| a.matrix))?;
        let mut forcing = vec![0.0; self.problem.space().n()];
        for &s in &rule.nodes {
            let f = drift.affine_part(s)?.forcing;
            for (acc, v) in forcing.iter_mut().zip(&f) {
                *acc += v;
            }
        }
        if rule.nodes.len() > 1 {
            forcing.iter_mut().for_each(|v| *v *= rule.weight());
        }
        Some((matrix, forcing))
    }

    /// Factorization of `I - τ·M` for the averaged matrix `M`, cached when
    /// the drift does not depend on time.
    fn linear_factor(&mut self, matrix: CyclicTridiagonal, forcing: Vec<f64>) -> Result<(Vec<f64>, CyclicFactor)> {
        let cacheable = !self.problem.drift().is_time_dependent();
        if cacheable {
            if let Some((m, f, factor)) = &self.linear_cache {
                if *m == matrix {
                    return Ok((f.clone(), factor.clone()));
                }
            }
        }
        let factor = matrix.shifted_identity(self.tau).factorize()?;
        if cacheable {
            self.linear_cache = Some((matrix, forcing.clone(), factor.clone()));
        }
        Ok((forcing, factor))
    }

    /// `x - τ·A^τ_i(x) - y`
    fn residual(&self, i: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        let ax = self.averaged_drift(i, x);
        x.iter().zip(ax.iter()).zip(y).map(|((xi, ai), yi)| xi - self.tau * ai - yi).collect()
    }

    /// Right-hand side `y = prev + Σ_k B^τ_{k,i}(prev)·ΔW^k`.
    pub fn explicit_part(&self, i: usize, prev: &[f64], noise_incr: &[f64]) -> StateVector {
        let mut y: StateVector = prev.to_vec().into();
        for (b, dw) in self.averaged_diffusion(i, prev).iter().zip(noise_incr) {
            if *dw != 0.0 {
                y.axpy(*dw, b);
            }
        }
        y
    }

    /// One step from `u(t_i) = prev` to `u(t_{i+1})`.
    pub fn step(&mut self, i: usize, prev: &[f64], noise_incr: &[f64]) -> Result<StepOutcome> {
        let d1 = self.problem.d1();
        if noise_incr.len() != d1 {
            return Err(Error::Dimension { expected: d1, got: noise_incr.len() });
        }
        let y = self.explicit_part(i, prev, noise_incr);
        self.solve(i, &y)
    }

    /// Solves `x - τ·A^τ_i(x) = y` with the configured inner method.
    pub fn solve(&mut self, i: usize, y: &[f64]) -> Result<StepOutcome> {
        let space = *self.problem.space();
        let tol = self.cfg.inner.tolerance(space.h_norm_sq(y).sqrt());
        let fail = |f: InnerFailure| Error::StepFailure { step: i, residual: f.residual(), reason: f.reason().into() };
        match self.cfg.inner.method {
            InnerMethod::Direct => {
                let Some((matrix, forcing)) = self.averaged_affine(i) else {
                    return Err(Error::config("direct inner solver needs an affine drift"));
                };
                let (forcing, factor) = self.linear_factor(matrix, forcing)?;
                let rhs: Vec<f64> = y.iter().zip(&forcing).map(|(a, f)| a + self.tau * f).collect();
                let x = factor.solve(&rhs);
                let residual = space.h_norm_sq(&self.residual(i, &x, y)).sqrt();
                if !(residual <= tol) {
                    return Err(Error::StepFailure {
                        step: i,
                        residual,
                        reason: "direct solve residual above tolerance".into(),
                    });
                }
                Ok(StepOutcome { state: x.into(), residual, iterations: 1, fell_back: false })
            }
            InnerMethod::Newton => self.newton(i, y, tol).map_err(fail),
            InnerMethod::Picard => match self.picard(i, y, tol) {
                Ok(out) => Ok(out),
                Err(InnerFailure::NotContracting { .. }) => {
                    let mut out = self.newton(i, y, tol).map_err(fail)?;
                    out.fell_back = true;
                    Ok(out)
                }
                Err(f) => Err(fail(f)),
            },
        }
    }

    fn newton(&self, i: usize, y: &[f64], tol: f64) -> std::result::Result<StepOutcome, InnerFailure> {
        let space = *self.problem.space();
        let sol = newton_solve(
            |x| self.residual(i, x, y),
            |x| {
                let jac = self.averaged_jacobian(i, x).ok_or(Error::config("drift has no Jacobian"))?;
                jac.shifted_identity(self.tau).factorize()
            },
            |r| space.h_norm_sq(r).sqrt(),
            y.to_vec(),
            tol,
            self.cfg.inner.max_iter,
        )?;
        Ok(StepOutcome { state: sol.x.into(), residual: sol.residual, iterations: sol.iterations, fell_back: false })
    }

    /// Picard on `Φ(x) = (I - τS)⁻¹(y + τ(A(x) - Sx))` with `S` the stiff part
    /// (or `S = 0`). Refused up front when `τ·‖A' - S‖∞ ≥ 1` at `y`.
    fn picard(&mut self, i: usize, y: &[f64], tol: f64) -> std::result::Result<StepOutcome, InnerFailure> {
        let space = *self.problem.space();
        let n = space.n();
        let stiff = self.averaged_stiff_part(i);
        if let Some(mut jac) = self.averaged_jacobian(i, y) {
            if let Some(s) = &stiff {
                jac.add_scaled(s, -1.0);
            }
            if self.tau * jac.row_sum_norm() >= 1.0 {
                return Err(InnerFailure::NotContracting { residual: f64::INFINITY });
            }
        }
        let stiff = match stiff {
            Some(s) => {
                let (_, factor) = self
                    .linear_factor(s.clone(), vec![0.0; n])
                    .map_err(|_| InnerFailure::Singular { residual: f64::INFINITY })?;
                Some((s, factor))
            }
            None => None,
        };
        let tau = self.tau;
        let sol = picard_solve(
            |x| {
                let ax = self.averaged_drift(i, x);
                let r: Vec<f64> = x.iter().zip(ax.iter()).zip(y).map(|((xi, ai), yi)| xi - tau * ai - yi).collect();
                let rn = space.h_norm_sq(&r).sqrt();
                let mut rhs: Vec<f64> = y.iter().zip(ax.iter()).map(|(yi, ai)| yi + tau * ai).collect();
                let next = match &stiff {
                    Some((s, factor)) => {
                        let sx = s.apply(x);
                        rhs.iter_mut().zip(&sx).for_each(|(v, w)| *v -= tau * w);
                        factor.solve(&rhs)
                    }
                    None => rhs,
                };
                (next, rn)
            },
            y.to_vec(),
            tol,
            self.cfg.inner.max_iter,
        )?;
        Ok(StepOutcome { state: sol.x.into(), residual: sol.residual, iterations: sol.iterations, fell_back: false })
    }
}

fn average_matrices(rule: &TimeRule, mut at: impl FnMut(f64) -> Option<CyclicTridiagonal>) -> Option<CyclicTridiagonal> {
    let mut nodes = rule.nodes.iter();
    let mut acc = at(*nodes.next()?)?;
    if rule.nodes.len() == 1 {
        return Some(acc);
    }
    for &s in nodes {
        acc.add_scaled(&at(s)?, 1.0);
    }
    acc.scale(rule.weight());
    Some(acc)
}

/// `A^τ_{t_i}(v)` under `cfg`.
pub fn averaged_drift(p: &EvolutionProblem, i: usize, cfg: &SchemeConfig, v: &[f64]) -> Result<StateVector> {
    Ok(Stepper::new(p, cfg)?.averaged_drift(i, v))
}

/// `B^τ_{k,t_i}(v)` under `cfg`, one vector per Wiener component.
pub fn averaged_diffusion(p: &EvolutionProblem, i: usize, cfg: &SchemeConfig, v: &[f64]) -> Result<Vec<StateVector>> {
    Ok(Stepper::new(p, cfg)?.averaged_diffusion(i, v))
}

/// A single step of the scheme without any cached factorization.
pub fn implicit_step(
    p: &EvolutionProblem,
    i: usize,
    cfg: &SchemeConfig,
    prev: &[f64],
    noise_incr: &[f64],
) -> Result<StepOutcome> {
    p.space().check(prev)?;
    if !prev.iter().all(|v| v.is_finite()) {
        return Err(Error::config("previous state is not finite"));
    }
    Stepper::new(p, cfg)?.step(i, prev, noise_incr)
}

/// Runs all `m` steps. `increments[k][i]` is `W^k(t_{i+1}) - W^k(t_i)`.
pub fn run_scheme(p: &EvolutionProblem, cfg: &SchemeConfig, increments: &[Vec<f64>]) -> Result<Trajectory> {
    let mut stepper = Stepper::new(p, cfg)?;
    if increments.len() != p.d1() {
        return Err(Error::Dimension { expected: p.d1(), got: increments.len() });
    }
    if let Some(row) = increments.iter().find(|r| r.len() != cfg.m) {
        return Err(Error::Dimension { expected: cfg.m, got: row.len() });
    }
    let mut states = Vec::with_capacity(cfg.m + 1);
    let mut residuals = Vec::with_capacity(cfg.m);
    let mut iteration_counts = Vec::with_capacity(cfg.m);
    states.push(p.initial().clone());
    let mut dw = vec![0.0; p.d1()];
    for i in 0..cfg.m {
        for (k, row) in increments.iter().enumerate() {
            dw[k] = row[i];
        }
        let out = stepper.step(i, &states[i], &dw)?;
        if !out.state.is_finite() {
            return Err(Error::StepFailure { step: i, residual: f64::NAN, reason: "non-finite state".into() });
        }
        states.push(out.state);
        residuals.push(out.residual);
        iteration_counts.push(out.iterations);
    }
    Ok(Trajectory { tau: stepper.tau(), states, residuals, iteration_counts })
}

/// Runs the scheme without noise.
pub fn run_deterministic(p: &EvolutionProblem, cfg: &SchemeConfig) -> Result<Trajectory> {
    run_scheme(p, cfg, &vec![vec![0.0; cfg.m]; p.d1()])
}
