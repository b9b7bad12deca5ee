//! Randomized checks of the structural conditions.
//!
//! Probes are evidence, not proofs: each draws states and times, evaluates
//! the condition's two sides and records the worst violation. A probe passes
//! when every sample satisfies `lhs - rhs ≤ 1e-9 · (Σ |terms|)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::quasilinear::QuasilinearSpec;
use super::EvolutionProblem;
use crate::noise::mix64;
use crate::space::GridSpace;

const REL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Condition tag, e.g. `C1` or `A1`.
    pub condition: String,
    pub description: String,
    pub trials: usize,
    /// Largest `lhs - rhs` seen. Positive values are violations unless within rounding.
    pub max_slack: f64,
    /// Largest `lhs / rhs` for ratio-type conditions.
    pub max_ratio: Option<f64>,
    /// Smallest constant that would have made every sample pass.
    pub fitted: Option<f64>,
    /// `(t, s)` of the worst sample (`s` only for two-time conditions).
    pub worst_time: Option<(f64, Option<f64>)>,
    pub passed: bool,
    pub skipped: bool,
}

impl ProbeReport {
    fn new(condition: &str, description: impl Into<String>) -> Self {
        Self {
            condition: condition.to_string(),
            description: description.into(),
            trials: 0,
            max_slack: f64::NEG_INFINITY,
            max_ratio: None,
            fitted: None,
            worst_time: None,
            passed: true,
            skipped: false,
        }
    }

    fn skipped(condition: &str, reason: &str) -> Self {
        let mut r = Self::new(condition, reason);
        r.skipped = true;
        r.max_slack = 0.0;
        r
    }

    /// Records one sample of `lhs ≤ rhs`, with `scale` the sum of absolute term sizes.
    fn record(&mut self, lhs: f64, rhs: f64, scale: f64, time: (f64, Option<f64>)) {
        self.trials += 1;
        let slack = lhs - rhs;
        if slack > self.max_slack || slack.is_nan() {
            self.max_slack = slack;
            self.worst_time = Some(time);
        }
        if !(slack <= REL_TOL * scale) {
            self.passed = false;
        }
    }

    fn record_ratio(&mut self, ratio: f64) {
        self.max_ratio = Some(self.max_ratio.map_or(ratio, |r| r.max(ratio)));
    }

    fn record_fit(&mut self, value: f64) {
        self.fitted = Some(self.fitted.map_or(value, |r| r.max(value)));
    }

    pub fn summary(&self) -> String {
        let status = if self.skipped {
            "SKIP"
        } else if self.passed {
            "PASS"
        } else {
            "FAIL"
        };
        let mut line = format!("[{status}] {:<10} {} (trials {}, max slack {:.3e}", self.condition, self.description, self.trials, self.max_slack);
        if let Some(r) = self.max_ratio {
            line.push_str(&format!(", max ratio {r:.6e}"));
        }
        if let Some(f) = self.fitted {
            line.push_str(&format!(", fitted {f:.6e}"));
        }
        line.push(')');
        line
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    space: GridSpace,
    horizon: f64,
}

impl Sampler {
    fn new(p: &EvolutionProblem, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), space: *p.space(), horizon: p.horizon() }
    }

    /// Alternates rough draws (i.i.d. normals / √n) with smooth sums of low
    /// sine modes, each with a log-uniform amplitude in [0.1, 10].
    fn state(&mut self) -> Vec<f64> {
        let n = self.space.n();
        let amplitude = 10f64.powf(self.rng.random_range(-1.0..1.0));
        if self.rng.random_bool(0.5) {
            let scale = amplitude / (n as f64).sqrt();
            (0..n).map(|_| scale * self.rng.sample::<f64, _>(StandardNormal)).collect()
        } else {
            let modes: Vec<(f64, f64, f64)> = (1..=3)
                .map(|k| {
                    let c: f64 = self.rng.sample(StandardNormal);
                    (k as f64, amplitude * c, self.rng.random_range(0.0..std::f64::consts::TAU))
                })
                .collect();
            self.space
                .nodes()
                .iter()
                .map(|&x| modes.iter().map(|(k, c, phase)| c * (std::f64::consts::TAU * k * x + phase).sin()).sum())
                .collect()
        }
    }

    fn time(&mut self) -> f64 {
        self.rng.random_range(0.0..=self.horizon)
    }

    /// Half uniform pairs, half close pairs with log-uniform gaps in `[1e-6, 1e-1]·T`.
    fn time_pair(&mut self) -> (f64, f64) {
        let t = self.time();
        let s = if self.rng.random_bool(0.5) {
            self.time()
        } else {
            let gap = self.horizon * 10f64.powf(self.rng.random_range(-6.0..-1.0));
            let s = if self.rng.random_bool(0.5) { t + gap } else { t - gap };
            s.clamp(0.0, self.horizon)
        };
        (t, s)
    }
}

fn diff_sq_sum(space: &GridSpace, a: &[crate::space::StateVector], b: &[crate::space::StateVector]) -> f64 {
    a.iter().zip(b).map(|(x, y)| space.h_norm_sq(&x.sub(y))).sum()
}

fn sq_sum(space: &GridSpace, a: &[crate::space::StateVector]) -> f64 {
    a.iter().map(|x| space.h_norm_sq(x)).sum()
}

/// Strong monotonicity:
/// `2⟨u-v, A(t,u)-A(t,v)⟩ + Σ_k|B_k(t,u)-B_k(t,v)|²_H + λ|u-v|²_V ≤ L|u-v|²_H`.
pub fn probe_strong_monotonicity(p: &EvolutionProblem, trials: usize, rng_seed: u64) -> ProbeReport {
    let d = p.declared();
    let space = p.space();
    let mut report = ProbeReport::new("C1", format!("strong monotonicity, lambda = {}, L = {}", d.lambda, d.monotonicity));
    let mut sampler = Sampler::new(p, rng_seed);
    for _ in 0..trials {
        let t = sampler.time();
        let u = sampler.state();
        let v = sampler.state();
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let da = p.drift_at(t, &u).sub(&p.drift_at(t, &v));
        let pairing = 2.0 * space.inner(&w, &da);
        let noise = diff_sq_sum(space, &p.diffusion_at(t, &u), &p.diffusion_at(t, &v));
        let coercive = d.lambda * space.v_norm_sq(&w);
        let allowed = d.monotonicity * space.h_norm_sq(&w);
        let lhs = pairing + noise + coercive;
        report.record(lhs, allowed, pairing.abs() + noise + coercive + allowed, (t, None));
    }
    report
}

/// `Σ_k|B_k(t,u)-B_k(t,v)|²_H ≤ L₁|u-v|²_V`.
pub fn probe_lipschitz_b(p: &EvolutionProblem, trials: usize, rng_seed: u64) -> ProbeReport {
    let l1 = p.declared().lipschitz_b;
    let space = p.space();
    let mut report = ProbeReport::new("C2", format!("Lipschitz B into H, L1 = {l1}"));
    let mut sampler = Sampler::new(p, rng_seed);
    for _ in 0..trials {
        let t = sampler.time();
        let u = sampler.state();
        let v = sampler.state();
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let lhs = diff_sq_sum(space, &p.diffusion_at(t, &u), &p.diffusion_at(t, &v));
        let wv = space.v_norm_sq(&w);
        report.record(lhs, l1 * wv, lhs + l1 * wv, (t, None));
        if wv > 0.0 {
            report.record_ratio(lhs / wv);
        }
    }
    report.fitted = report.max_ratio;
    report
}

/// `|A(t,u)-A(t,v)|²_{V*} ≤ L₂|u-v|²_V`; skipped for drifts declared non-Lipschitz.
pub fn probe_lipschitz_a(p: &EvolutionProblem, trials: usize, rng_seed: u64) -> ProbeReport {
    let Some(l2) = p.declared().lipschitz_a else {
        return ProbeReport::skipped("C3", "Lipschitz A into V*: not declared");
    };
    let space = p.space();
    let dual = space.dual_norm();
    let mut report = ProbeReport::new("C3", format!("Lipschitz A into V*, L2 = {l2}"));
    let mut sampler = Sampler::new(p, rng_seed);
    for _ in 0..trials {
        let t = sampler.time();
        let u = sampler.state();
        let v = sampler.state();
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let lhs = dual.norm_sq(&p.drift_at(t, &u).sub(&p.drift_at(t, &v)));
        let wv = space.v_norm_sq(&w);
        report.record(lhs, l2 * wv, lhs + l2 * wv, (t, None));
        if wv > 0.0 {
            report.record_ratio(lhs / wv);
        }
    }
    report.fitted = report.max_ratio;
    report
}

/// `Σ_k|B_k(t,v)-B_k(s,v)|²_H ≤ |t-s|^{2ν}(η + C|v|²_V)`.
///
/// `fitted` is the smallest η that passes every sample with the declared `C`.
pub fn probe_time_regularity_b(p: &EvolutionProblem, trials: usize, rng_seed: u64) -> ProbeReport {
    let d = p.declared();
    let space = p.space();
    let mut report = ProbeReport::new(
        "T1",
        format!("time regularity of B, nu = {}, eta = {}, C = {}", d.nu, d.holder_eta, d.holder_c),
    );
    let mut sampler = Sampler::new(p, rng_seed);
    for _ in 0..trials {
        let (t, s) = sampler.time_pair();
        let v = sampler.state();
        let lhs = diff_sq_sum(space, &p.diffusion_at(t, &v), &p.diffusion_at(s, &v));
        let gap = (t - s).abs().powf(2.0 * d.nu);
        let vv = space.v_norm_sq(&v);
        let rhs = gap * (d.holder_eta + d.holder_c * vv);
        report.record(lhs, rhs, lhs + rhs, (t, Some(s)));
        let ratio = if lhs == 0.0 {
            0.0
        } else if rhs > 0.0 {
            lhs / rhs
        } else {
            f64::INFINITY
        };
        report.record_ratio(ratio);
        if gap > 0.0 {
            report.record_fit((lhs / gap - d.holder_c * vv).max(0.0));
        } else if lhs > 0.0 {
            report.record_fit(f64::INFINITY);
        }
    }
    report
}

/// Boundedness at zero and the initial datum:
/// `Σ_k|B_k(t,0)|²_H ≤ K₁`, `|A(t,0)|²_{V*} ≤ K₂`, `|u₀|_V < ∞`.
pub fn probe_zero_bounds(p: &EvolutionProblem, trials: usize, rng_seed: u64) -> ProbeReport {
    let d = p.declared();
    let space = p.space();
    let dual = space.dual_norm();
    let zero = vec![0.0; space.n()];
    let mut report = ProbeReport::new("C4", format!("bounds at zero, K1 = {}, K2 = {}", d.bound_b0, d.bound_a0));
    let mut sampler = Sampler::new(p, rng_seed);
    for j in 0..trials.max(2) {
        let t = match j {
            0 => 0.0,
            1 => p.horizon(),
            _ => sampler.time(),
        };
        let b0 = sq_sum(space, &p.diffusion_at(t, &zero));
        let a0 = dual.norm_sq(&p.drift_at(t, &zero));
        report.record(b0, d.bound_b0, b0 + d.bound_b0, (t, None));
        report.record(a0, d.bound_a0, a0 + d.bound_a0, (t, None));
    }
    let u0 = space.v_norm_sq(p.initial());
    if !u0.is_finite() {
        report.passed = false;
    }
    report
}

/// Linear growth of both operators:
/// `Σ|B_k(t,v)|²_H ≤ 2L₁|v|²_V + 2K₁` and `|A(t,v)|²_{V*} ≤ 2L₂|v|²_V + 2K₂`.
pub fn probe_growth(p: &EvolutionProblem, trials: usize, rng_seed: u64) -> Vec<ProbeReport> {
    let d = p.declared();
    let space = p.space();
    let mut growth_b = ProbeReport::new("growth-B", "|B(t,v)|^2 <= 2 L1 |v|_V^2 + 2 K1");
    let mut growth_a = match d.lipschitz_a {
        Some(_) => ProbeReport::new("growth-A", "|A(t,v)|_V*^2 <= 2 L2 |v|_V^2 + 2 K2"),
        None => ProbeReport::skipped("growth-A", "growth of A: L2 not declared"),
    };
    let dual = space.dual_norm();
    let mut sampler = Sampler::new(p, rng_seed);
    for _ in 0..trials {
        let t = sampler.time();
        let v = sampler.state();
        let vv = space.v_norm_sq(&v);
        let b = sq_sum(space, &p.diffusion_at(t, &v));
        let rhs = 2.0 * d.lipschitz_b * vv + 2.0 * d.bound_b0;
        growth_b.record(b, rhs, b + rhs, (t, None));
        if let Some(l2) = d.lipschitz_a {
            let a = dual.norm_sq(&p.drift_at(t, &v));
            let rhs = 2.0 * l2 * vv + 2.0 * d.bound_a0;
            growth_a.record(a, rhs, a + rhs, (t, None));
        }
    }
    vec![growth_b, growth_a]
}

/// Coercivity: `2⟨v,A(t,v)⟩ + Σ|B_k(t,v)|²_H + (λ/2)|v|²_V ≤ L|v|²_H + K₃`.
///
/// The bound checked is `K₃ = 4K₂/λ + (1 + 4L₁/λ)K₁`, which follows from the
/// declared monotonicity, Lipschitz and zero bounds. `fitted` is the largest
/// observed `lhs - L|v|²_H`.
pub fn probe_coercivity(p: &EvolutionProblem, trials: usize, rng_seed: u64) -> ProbeReport {
    let d = p.declared();
    let space = p.space();
    let k3 = 4.0 * d.bound_a0 / d.lambda + (1.0 + 4.0 * d.lipschitz_b / d.lambda) * d.bound_b0;
    let mut report = ProbeReport::new("coercivity", format!("coercivity with K3 = {k3:.6e}"));
    let mut sampler = Sampler::new(p, rng_seed);
    for _ in 0..trials {
        let t = sampler.time();
        let v = sampler.state();
        let pairing = 2.0 * space.inner(&v, &p.drift_at(t, &v));
        let noise = sq_sum(space, &p.diffusion_at(t, &v));
        let coercive = 0.5 * d.lambda * space.v_norm_sq(&v);
        let allowed = d.monotonicity * space.h_norm_sq(&v);
        let lhs = pairing + noise + coercive;
        report.record(lhs, allowed + k3, pairing.abs() + noise + coercive + allowed + k3, (t, None));
        report.record_fit((lhs - allowed).max(0.0));
    }
    report
}

/// Stochastic parabolicity `a - ½Σ_k b_k² ≥ λ` on grid nodes × sampled times.
/// `max_slack` is `λ - min margin`.
pub fn probe_parabolicity(spec: &QuasilinearSpec, space: &GridSpace) -> ProbeReport {
    let (margin, t, x) = spec.parabolicity_margin(space);
    let mut report = ProbeReport::new(
        "A1",
        format!("stochastic parabolicity, lambda = {}, worst at x = {x}", spec.parabolicity),
    );
    report.trials = space.n() * super::quasilinear::TIME_SAMPLES;
    report.max_slack = spec.parabolicity - margin;
    report.worst_time = Some((t, None));
    report.fitted = Some(margin);
    report.passed = margin >= spec.parabolicity && spec.parabolicity > 0.0;
    report
}

/// Every applicable probe, each on its own sub-seed.
pub fn run_all_probes(p: &EvolutionProblem, trials: usize, rng_seed: u64) -> Vec<ProbeReport> {
    let seed = |k: u64| rng_seed ^ mix64(k);
    let mut out = vec![
        probe_strong_monotonicity(p, trials, seed(1)),
        probe_lipschitz_b(p, trials, seed(2)),
        probe_lipschitz_a(p, trials, seed(3)),
        probe_zero_bounds(p, trials, seed(4)),
    ];
    out.extend(probe_growth(p, trials, seed(5)));
    out.push(probe_coercivity(p, trials, seed(6)));
    out.push(probe_time_regularity_b(p, trials, seed(7)));
    out
}
