//! The operator pair `(A, B₁..B_{d₁})` of the evolution equation, the
//! quasilinear SPDE family assembled on a [`GridSpace`], and randomized probes
//! for the structural conditions the convergence theory relies on.
//!
//! Drift values are `H`-Riesz representatives of `A(t, v) ∈ V*`.

mod gallery;
mod probes;
mod quasilinear;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::banded::CyclicTridiagonal;
use crate::error::{Error, Result};
use crate::space::{GridSpace, StateVector};

pub use gallery::{build_gallery, gallery_spec, Gallery, GalleryParams};
pub use probes::{
    probe_coercivity, probe_growth, probe_lipschitz_a, probe_lipschitz_b, probe_parabolicity,
    probe_strong_monotonicity, probe_time_regularity_b, probe_zero_bounds, run_all_probes, ProbeReport,
};
pub use quasilinear::{
    assemble_quasilinear, Coefficient, GeneralNonlinearity, Nonlinearity, NoiseNonlinearity, NoiseTerm,
    QuasilinearSpec,
};

/// `A(t, ·)` as an operator on grid vectors.
pub trait DriftOperator: Send + Sync {
    fn apply(&self, t: f64, v: &[f64], out: &mut [f64]);

    /// Analytic Jacobian `∂A/∂v (t, v)`, if the operator provides one.
    fn jacobian(&self, t: f64, v: &[f64]) -> Option<CyclicTridiagonal>;

    /// A linear principal part `S(t)` such that `A(t, ·) - S(t)` is mildly
    /// Lipschitz. Used to precondition fixed-point iterations.
    fn stiff_part(&self, _t: f64) -> Option<CyclicTridiagonal> {
        None
    }

    /// `A(t, v) = M(t)v + f(t)` when the drift is affine.
    fn affine_part(&self, _t: f64) -> Option<AffineDrift> {
        None
    }

    fn is_time_dependent(&self) -> bool;
}

/// `B_k(t, ·)` with values in `H`.
pub trait DiffusionOperator: Send + Sync {
    fn apply(&self, t: f64, v: &[f64], out: &mut [f64]);

    fn is_time_dependent(&self) -> bool;
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineDrift {
    pub matrix: CyclicTridiagonal,
    pub forcing: Vec<f64>,
}

/// Constants the problem author claims for the monotonicity, Lipschitz,
/// boundedness and time-regularity conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeclaredConstants {
    /// λ: coercivity weight on `|u - v|²_V`.
    pub lambda: f64,
    /// L: tolerated `|u - v|²_H` growth in the monotonicity condition.
    pub monotonicity: f64,
    /// L₁: Lipschitz constant of `B` from `V` to `H^{d₁}`.
    pub lipschitz_b: f64,
    /// L₂: Lipschitz constant of `A` from `V` to `V*`. `None` flags a non-Lipschitz drift.
    pub lipschitz_a: Option<f64>,
    /// K₁ ≥ `Σ|B_k(t, 0)|²_H`.
    pub bound_b0: f64,
    /// K₂ ≥ `|A(t, 0)|²_{V*}`.
    pub bound_a0: f64,
    /// ν ∈ (0, 1/2]: time-Hölder exponent of `B`.
    pub nu: f64,
    /// η, C in `Σ|B(t,v) - B(s,v)|²_H ≤ |t - s|^{2ν}(η + C|v|²_V)`.
    pub holder_eta: f64,
    pub holder_c: f64,
}

impl DeclaredConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.nu > 0.0 && self.nu <= 0.5) {
            return Err(Error::config(format!("nu must lie in (0, 1/2], got {}", self.nu)));
        }
        let nonneg = [
            ("monotonicity", self.monotonicity),
            ("lipschitz_b", self.lipschitz_b),
            ("bound_b0", self.bound_b0),
            ("bound_a0", self.bound_a0),
            ("holder_eta", self.holder_eta),
            ("holder_c", self.holder_c),
            ("lipschitz_a", self.lipschitz_a.unwrap_or(0.0)),
        ];
        for (name, value) in nonneg {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and non-negative, got {value}")));
            }
        }
        Ok(())
    }
}

/// A fully specified instance of `du = A(t,u)dt + Σ_k B_k(t,u)dW^k` on a grid.
#[derive(Clone)]
pub struct EvolutionProblem {
    name: String,
    space: GridSpace,
    drift: Arc<dyn DriftOperator>,
    diffusion: Vec<Arc<dyn DiffusionOperator>>,
    initial: StateVector,
    horizon: f64,
    declared: DeclaredConstants,
}

impl fmt::Debug for EvolutionProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EvolutionProblem")
            .field("name", &self.name)
            .field("n", &self.space.n())
            .field("d1", &self.diffusion.len())
            .field("horizon", &self.horizon)
            .field("declared", &self.declared)
            .finish()
    }
}

impl EvolutionProblem {
    pub fn new(
        name: impl Into<String>,
        space: GridSpace,
        drift: Arc<dyn DriftOperator>,
        diffusion: Vec<Arc<dyn DiffusionOperator>>,
        initial: StateVector,
        horizon: f64,
        declared: DeclaredConstants,
    ) -> Result<Self> {
        if diffusion.is_empty() {
            return Err(Error::config("need at least one diffusion component (d1 >= 1)"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::config(format!("horizon must be positive, got {horizon}")));
        }
        space.check(&initial)?;
        if !initial.is_finite() || !space.v_norm_sq(&initial).is_finite() {
            return Err(Error::config("initial datum must have finite V-norm"));
        }
        declared.validate()?;
        Ok(Self { name: name.into(), space, drift, diffusion, initial, horizon, declared })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn space(&self) -> &GridSpace {
        &self.space
    }

    pub fn drift(&self) -> &dyn DriftOperator {
        self.drift.as_ref()
    }

    pub fn diffusion(&self) -> &[Arc<dyn DiffusionOperator>] {
        &self.diffusion
    }

    pub fn d1(&self) -> usize {
        self.diffusion.len()
    }

    pub fn initial(&self) -> &StateVector {
        &self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn declared(&self) -> &DeclaredConstants {
        &self.declared
    }

    pub fn with_initial(mut self, initial: StateVector) -> Result<Self> {
        self.space.check(&initial)?;
        self.initial = initial;
        Ok(self)
    }

    pub fn with_declared(mut self, declared: DeclaredConstants) -> Result<Self> {
        declared.validate()?;
        self.declared = declared;
        Ok(self)
    }

    pub fn drift_at(&self, t: f64, v: &[f64]) -> StateVector {
        let mut out = StateVector::zeros(self.space.n());
        self.drift.apply(t, v, &mut out);
        out
    }

    pub fn diffusion_at(&self, t: f64, v: &[f64]) -> Vec<StateVector> {
        self.diffusion
            .iter()
            .map(|b| {
                let mut out = StateVector::zeros(self.space.n());
                b.apply(t, v, &mut out);
                out
            })
            .collect()
    }

    /// The drift's affine descriptor `(M(t), f(t))`, present for affine drifts.
    pub fn drift_linear_part(&self, t: f64) -> Option<AffineDrift> {
        self.drift.affine_part(t)
    }

    pub fn is_time_dependent(&self) -> bool {
        self.drift.is_time_dependent() || self.diffusion.iter().any(|b| b.is_time_dependent())
    }
}

/// Time-independent affine drift `A(v) = Mv + f`.
#[derive(Clone, Debug)]
pub struct LinearDrift {
    pub matrix: CyclicTridiagonal,
    pub forcing: Vec<f64>,
}

impl LinearDrift {
    pub fn new(matrix: CyclicTridiagonal) -> Self {
        let n = matrix.n();
        Self { matrix, forcing: vec![0.0; n] }
    }
}

impl DriftOperator for LinearDrift {
    fn apply(&self, _t: f64, v: &[f64], out: &mut [f64]) {
        self.matrix.apply_into(v, out);
        for (o, f) in out.iter_mut().zip(&self.forcing) {
            *o += f;
        }
    }

    fn jacobian(&self, _t: f64, _v: &[f64]) -> Option<CyclicTridiagonal> {
        Some(self.matrix.clone())
    }

    fn stiff_part(&self, _t: f64) -> Option<CyclicTridiagonal> {
        Some(self.matrix.clone())
    }

    fn affine_part(&self, _t: f64) -> Option<AffineDrift> {
        Some(AffineDrift { matrix: self.matrix.clone(), forcing: self.forcing.clone() })
    }

    fn is_time_dependent(&self) -> bool {
        false
    }
}

type DriftFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
type JacobianFn = dyn Fn(f64, &[f64]) -> CyclicTridiagonal + Send + Sync;

/// Drift given by closures; for custom operators outside the quasilinear family.
#[derive(Clone)]
pub struct FnDrift {
    value: Arc<DriftFn>,
    jacobian: Option<Arc<JacobianFn>>,
    time_dependent: bool,
}

impl FnDrift {
    pub fn new(value: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static, time_dependent: bool) -> Self {
        Self { value: Arc::new(value), jacobian: None, time_dependent }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(f64, &[f64]) -> CyclicTridiagonal + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }
}

impl DriftOperator for FnDrift {
    fn apply(&self, t: f64, v: &[f64], out: &mut [f64]) {
        (self.value)(t, v, out)
    }

    fn jacobian(&self, t: f64, v: &[f64]) -> Option<CyclicTridiagonal> {
        self.jacobian.as_ref().map(|j| j(t, v))
    }

    fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }
}

type DiffusionFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Diffusion component given by a closure.
#[derive(Clone)]
pub struct FnDiffusion {
    value: Arc<DiffusionFn>,
    time_dependent: bool,
}

impl FnDiffusion {
    pub fn new(value: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static, time_dependent: bool) -> Self {
        Self { value: Arc::new(value), time_dependent }
    }

    pub fn zero() -> Self {
        Self::new(|_, _, out| out.iter_mut().for_each(|o| *o = 0.0), false)
    }
}

impl DiffusionOperator for FnDiffusion {
    fn apply(&self, t: f64, v: &[f64], out: &mut [f64]) {
        (self.value)(t, v, out)
    }

    fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }
}
