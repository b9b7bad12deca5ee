//! Quasilinear SPDEs
//!
//! ```text
//! du = (D(a Du) + a0·u + F(t, x, Du, u) + f) dt + Σ_k (b_k·Du + b0_k·u + G_k(t, x, u) + g_k) dW^k
//! ```
//!
//! on the periodic grid. `D` is the forward difference and the divergence
//! term is `-Dᵀ(a ⊙ Dv)`, so the Galerkin pairing `-(a Dv, Dφ)` holds exactly
//! in the discrete `H` inner product.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use super::{AffineDrift, DeclaredConstants, DiffusionOperator, DriftOperator, EvolutionProblem};
use crate::banded::CyclicTridiagonal;
use crate::error::{Error, Result};
use crate::space::GridSpace;

pub type SpaceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Fn3 = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
type Fn4 = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

/// A coefficient `c(t, x)`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Space(SpaceFn),
    SpaceTime(SpaceTimeFn),
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Space(_) => write!(f, "Space(..)"),
            Coefficient::SpaceTime(_) => write!(f, "SpaceTime(..)"),
        }
    }
}

impl Default for Coefficient {
    fn default() -> Self {
        Coefficient::Constant(0.0)
    }
}

impl Coefficient {
    pub fn space(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Space(Arc::new(f))
    }

    pub fn space_time(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::SpaceTime(Arc::new(f))
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Space(f) => f(x),
            Coefficient::SpaceTime(f) => f(t, x),
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, Coefficient::SpaceTime(_))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Coefficient::Constant(c) if *c == 0.0)
    }

    fn sampled(&self, space: &GridSpace) -> Sampled {
        let nodes = space.nodes();
        if self.is_time_dependent() {
            Sampled::Dynamic(self.clone(), nodes)
        } else {
            Sampled::Fixed(nodes.iter().map(|&x| self.eval(0.0, x)).collect())
        }
    }
}

/// Coefficient values at the grid nodes, cached when time-independent.
#[derive(Clone, Debug)]
enum Sampled {
    Fixed(Vec<f64>),
    Dynamic(Coefficient, Vec<f64>),
}

impl Sampled {
    fn at(&self, t: f64) -> Cow<'_, [f64]> {
        match self {
            Sampled::Fixed(v) => Cow::Borrowed(v),
            Sampled::Dynamic(c, nodes) => Cow::Owned(nodes.iter().map(|&x| c.eval(t, x)).collect()),
        }
    }

    fn is_time_dependent(&self) -> bool {
        matches!(self, Sampled::Dynamic(..))
    }
}

/// `F(t, x, p, r)` with analytic partials and declared bounds on them.
#[derive(Clone)]
pub struct GeneralNonlinearity {
    pub value: Fn4,
    pub d_p: Fn4,
    pub d_r: Fn4,
    /// Bound on `|∂F/∂p|`.
    pub bound_p: f64,
    /// Bound on `|∂F/∂r|`.
    pub bound_r: f64,
    pub time_dependent: bool,
}

impl GeneralNonlinearity {
    pub fn new(
        value: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        d_p: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        d_r: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        bound_p: f64,
        bound_r: f64,
    ) -> Self {
        Self {
            value: Arc::new(value),
            d_p: Arc::new(d_p),
            d_r: Arc::new(d_r),
            bound_p,
            bound_r,
            time_dependent: false,
        }
    }
}

#[derive(Clone)]
pub enum Nonlinearity {
    /// `F = p_coeff·p + r_coeff·r`
    Affine { p_coeff: f64, r_coeff: f64 },
    General(GeneralNonlinearity),
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::Affine { p_coeff, r_coeff } => write!(f, "Affine({p_coeff}·p + {r_coeff}·r)"),
            Nonlinearity::General(g) => write!(f, "General(|F_p| <= {}, |F_r| <= {})", g.bound_p, g.bound_r),
        }
    }
}

impl Nonlinearity {
    #[inline]
    fn eval(&self, t: f64, x: f64, p: f64, r: f64) -> f64 {
        match self {
            Nonlinearity::Affine { p_coeff, r_coeff } => p_coeff * p + r_coeff * r,
            Nonlinearity::General(g) => (g.value)(t, x, p, r),
        }
    }

    #[inline]
    fn partials(&self, t: f64, x: f64, p: f64, r: f64) -> (f64, f64) {
        match self {
            Nonlinearity::Affine { p_coeff, r_coeff } => (*p_coeff, *r_coeff),
            Nonlinearity::General(g) => ((g.d_p)(t, x, p, r), (g.d_r)(t, x, p, r)),
        }
    }

    /// `(sup |∂F/∂p|, sup |∂F/∂r|)`
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Nonlinearity::Affine { p_coeff, r_coeff } => (p_coeff.abs(), r_coeff.abs()),
            Nonlinearity::General(g) => (g.bound_p, g.bound_r),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Nonlinearity::Affine { .. })
    }

    fn is_time_dependent(&self) -> bool {
        matches!(self, Nonlinearity::General(g) if g.time_dependent)
    }
}

/// `G_k(t, x, r)` with a declared bound on `|∂G_k/∂r|`.
#[derive(Clone)]
pub struct NoiseNonlinearity {
    pub value: Fn3,
    pub bound_r: f64,
    pub time_dependent: bool,
}

impl NoiseNonlinearity {
    pub fn new(value: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static, bound_r: f64) -> Self {
        Self { value: Arc::new(value), bound_r, time_dependent: false }
    }
}

impl fmt::Debug for NoiseNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NoiseNonlinearity(|G_r| <= {})", self.bound_r)
    }
}

/// One noise component `b·Du + b0·u + G(t, x, u) + g`.
#[derive(Clone, Debug, Default)]
pub struct NoiseTerm {
    pub b: Coefficient,
    pub b0: Coefficient,
    pub nonlinear: Option<NoiseNonlinearity>,
    pub forcing: Coefficient,
}

impl NoiseTerm {
    pub fn additive(g: Coefficient) -> Self {
        Self { forcing: g, ..Self::default() }
    }

    fn is_time_dependent(&self) -> bool {
        self.b.is_time_dependent()
            || self.b0.is_time_dependent()
            || self.forcing.is_time_dependent()
            || self.nonlinear.as_ref().is_some_and(|g| g.time_dependent)
    }
}

/// Coefficients of a quasilinear SPDE on the unit torus.
#[derive(Clone)]
pub struct QuasilinearSpec {
    pub name: String,
    pub a: Coefficient,
    pub a0: Coefficient,
    pub forcing: Coefficient,
    pub nonlinearity: Option<Nonlinearity>,
    pub noise: Vec<NoiseTerm>,
    pub initial: SpaceFn,
    pub horizon: f64,
    /// λ required of `a - ½Σ_k b_k²` at every sampled `(t, x)`.
    pub parabolicity: f64,
    pub declared: DeclaredConstants,
}

impl fmt::Debug for QuasilinearSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuasilinearSpec")
            .field("name", &self.name)
            .field("a", &self.a)
            .field("nonlinearity", &self.nonlinearity)
            .field("noise", &self.noise)
            .field("horizon", &self.horizon)
            .field("parabolicity", &self.parabolicity)
            .finish()
    }
}

/// Number of time samples (including both ends) for checking pointwise assumptions.
pub(crate) const TIME_SAMPLES: usize = 17;

impl QuasilinearSpec {
    /// Smallest `a - ½Σ b_k²` over grid nodes × `TIME_SAMPLES` times, with its location.
    pub fn parabolicity_margin(&self, space: &GridSpace) -> (f64, f64, f64) {
        let mut worst = (f64::INFINITY, 0.0, 0.0);
        for j in 0..TIME_SAMPLES {
            let t = self.horizon * j as f64 / (TIME_SAMPLES - 1) as f64;
            for x in space.nodes() {
                let b_sq: f64 = self.noise.iter().map(|k| k.b.eval(t, x).powi(2)).sum();
                let margin = self.a.eval(t, x) - 0.5 * b_sq;
                if margin < worst.0 || margin.is_nan() {
                    worst = (margin, t, x);
                }
            }
        }
        worst
    }
}

/// Builds the grid operators of a quasilinear spec.
///
/// Fails with [`Error::Parabolicity`] at the first sampled point where
/// `a - ½Σb_k² < λ`.
pub fn assemble_quasilinear(spec: &QuasilinearSpec, space: GridSpace) -> Result<EvolutionProblem> {
    let (margin, t, x) = spec.parabolicity_margin(&space);
    if !(margin >= spec.parabolicity) || !(spec.parabolicity > 0.0) {
        return Err(Error::Parabolicity { t, x, margin, lambda: spec.parabolicity });
    }
    if let Some(nl) = &spec.nonlinearity {
        let (bp, br) = nl.bounds();
        if !(bp.is_finite() && br.is_finite()) {
            return Err(Error::config("nonlinearity bounds must be finite"));
        }
    }
    if spec.noise.iter().any(|k| k.nonlinear.as_ref().is_some_and(|g| !g.bound_r.is_finite())) {
        return Err(Error::config("noise nonlinearity bounds must be finite"));
    }

    let drift = QuasilinearDrift {
        space,
        nodes: space.nodes(),
        a: spec.a.sampled(&space),
        a0: spec.a0.sampled(&space),
        forcing: spec.forcing.sampled(&space),
        nonlinearity: spec.nonlinearity.clone(),
    };
    let diffusion: Vec<Arc<dyn DiffusionOperator>> = spec
        .noise
        .iter()
        .map(|k| {
            Arc::new(QuasilinearNoise {
                space,
                nodes: space.nodes(),
                b: k.b.sampled(&space),
                b0: k.b0.sampled(&space),
                nonlinear: k.nonlinear.clone(),
                forcing: k.forcing.sampled(&space),
                time_dependent: k.is_time_dependent(),
            }) as Arc<dyn DiffusionOperator>
        })
        .collect();
    let initial = space.sample(|x| (spec.initial)(x));
    EvolutionProblem::new(
        spec.name.clone(),
        space,
        Arc::new(drift),
        diffusion,
        initial,
        spec.horizon,
        spec.declared.clone(),
    )
}

struct QuasilinearDrift {
    space: GridSpace,
    nodes: Vec<f64>,
    a: Sampled,
    a0: Sampled,
    forcing: Sampled,
    nonlinearity: Option<Nonlinearity>,
}

impl QuasilinearDrift {
    fn linear_matrix(&self, t: f64) -> CyclicTridiagonal {
        let mut m = self.space.weighted_laplacian_matrix(&self.a.at(t));
        let a0 = self.a0.at(t);
        let (_, diag, _) = m.bands_mut();
        for (d, c) in diag.iter_mut().zip(a0.iter()) {
            *d += c;
        }
        m
    }

    fn add_nonlinear_jacobian(&self, m: &mut CyclicTridiagonal, t: f64, v: &[f64], nl: &Nonlinearity) {
        let n = self.space.n();
        let inv_h = n as f64;
        let (_, diag, upper) = m.bands_mut();
        for i in 0..n {
            let p = (v[(i + 1) % n] - v[i]) * inv_h;
            let (fp, fr) = nl.partials(t, self.nodes[i], p, v[i]);
            diag[i] += fr - fp * inv_h;
            upper[i] += fp * inv_h;
        }
    }
}

impl DriftOperator for QuasilinearDrift {
    fn apply(&self, t: f64, v: &[f64], out: &mut [f64]) {
        let n = self.space.n();
        let inv_h = n as f64;
        let a = self.a.at(t);
        let a0 = self.a0.at(t);
        let f = self.forcing.at(t);
        let grad = |i: usize| (v[(i + 1) % n] - v[i]) * inv_h;
        let mut flux_left = a[n - 1] * grad(n - 1);
        for i in 0..n {
            let p = grad(i);
            let flux = a[i] * p;
            let mut value = (flux - flux_left) * inv_h + a0[i] * v[i] + f[i];
            if let Some(nl) = &self.nonlinearity {
                value += nl.eval(t, self.nodes[i], p, v[i]);
            }
            out[i] = value;
            flux_left = flux;
        }
    }

    fn jacobian(&self, t: f64, v: &[f64]) -> Option<CyclicTridiagonal> {
        let mut m = self.linear_matrix(t);
        if let Some(nl) = &self.nonlinearity {
            self.add_nonlinear_jacobian(&mut m, t, v, nl);
        }
        Some(m)
    }

    fn stiff_part(&self, t: f64) -> Option<CyclicTridiagonal> {
        let mut m = self.linear_matrix(t);
        if let Some(nl @ Nonlinearity::Affine { .. }) = &self.nonlinearity {
            self.add_nonlinear_jacobian(&mut m, t, &vec![0.0; self.space.n()], nl);
        }
        Some(m)
    }

    fn affine_part(&self, t: f64) -> Option<AffineDrift> {
        if self.nonlinearity.as_ref().is_some_and(|nl| !nl.is_affine()) {
            return None;
        }
        Some(AffineDrift { matrix: self.stiff_part(t)?, forcing: self.forcing.at(t).into_owned() })
    }

    fn is_time_dependent(&self) -> bool {
        self.a.is_time_dependent()
            || self.a0.is_time_dependent()
            || self.forcing.is_time_dependent()
            || self.nonlinearity.as_ref().is_some_and(Nonlinearity::is_time_dependent)
    }
}

struct QuasilinearNoise {
    space: GridSpace,
    nodes: Vec<f64>,
    b: Sampled,
    b0: Sampled,
    nonlinear: Option<NoiseNonlinearity>,
    forcing: Sampled,
    time_dependent: bool,
}

impl DiffusionOperator for QuasilinearNoise {
    fn apply(&self, t: f64, v: &[f64], out: &mut [f64]) {
        let n = self.space.n();
        let inv_h = n as f64;
        let b = self.b.at(t);
        let b0 = self.b0.at(t);
        let g = self.forcing.at(t);
        for i in 0..n {
            let p = (v[(i + 1) % n] - v[i]) * inv_h;
            let mut value = b[i] * p + b0[i] * v[i] + g[i];
            if let Some(nl) = &self.nonlinear {
                value += (nl.value)(t, self.nodes[i], v[i]);
            }
            out[i] = value;
        }
    }

    fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }
}
