//! Named example problems, selectable from the CLI.
//!
//! Every entry lives on the unit torus with `d₁ = 1`. Declared constants are
//! derived from the coefficient bounds with Young's inequality, so they stay
//! valid when `a` or `b` are overridden.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::quasilinear::{
    assemble_quasilinear, Coefficient, GeneralNonlinearity, Nonlinearity, NoiseNonlinearity, NoiseTerm,
    QuasilinearSpec,
};
use super::{DeclaredConstants, EvolutionProblem, FnDiffusion, LinearDrift};
use crate::banded::CyclicTridiagonal;
use crate::error::{Error, Result};
use crate::space::GridSpace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gallery {
    /// `a ≡ 1`, no noise: the deterministic heat equation.
    Heat,
    /// Heat equation with additive noise `cos(2πx) dW`.
    HeatAdditive,
    /// `F = sin r + ¼cos p`, gradient noise `b = ½`, `G = ½ sin r`.
    Quasilinear,
    /// Additive noise `|t - ½|^{1/4} cos(2πx) dW`, Hölder-¼ in time.
    HolderTime,
    /// `A(v) = +v`: violates monotonicity on purpose.
    AntiMonotone,
}

impl Gallery {
    pub const ALL: [Gallery; 5] =
        [Gallery::Heat, Gallery::HeatAdditive, Gallery::Quasilinear, Gallery::HolderTime, Gallery::AntiMonotone];

    pub fn name(self) -> &'static str {
        match self {
            Gallery::Heat => "heat",
            Gallery::HeatAdditive => "heat-additive",
            Gallery::Quasilinear => "quasilinear",
            Gallery::HolderTime => "holder-time",
            Gallery::AntiMonotone => "anti-monotone",
        }
    }

    fn default_b(self) -> f64 {
        match self {
            Gallery::Quasilinear => 0.5,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Gallery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gallery {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Gallery::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::config(format!("unknown gallery problem '{s}'")))
    }
}

/// Overrides of the gallery defaults (`n = 64`, `T = 1`, `a = 1`, gallery `b`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalleryParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Constant diffusion coefficient `a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Constant gradient-noise coefficient `b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

impl GalleryParams {
    pub fn n(&self) -> usize {
        self.n.unwrap_or(64)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(1.0)
    }
}

/// Bounds that the declared constants are derived from.
struct Bounds {
    a: f64,
    b: f64,
    f_p: f64,
    f_r: f64,
    g_r: f64,
    k1: f64,
    k2: f64,
    nu: f64,
    eta: f64,
}

const LAMBDA_FLOOR: f64 = 1e-3;

impl Bounds {
    fn lambda(&self) -> f64 {
        (0.5 * (self.a - 0.5 * self.b * self.b)).max(LAMBDA_FLOOR)
    }

    // With w = u - v and λ ≤ (a - b²/2)/2:
    //   2⟨w, ΔF⟩ ≤ λ|Dw|² + (f_p²/λ + 2f_r)|w|²
    //   |b Dw + ΔG|² ≤ (b² + λ)|Dw|² + (1 + b²/λ) g_r²|w|²
    // and the |Dw|² coefficients sum to -2a + b² + 3λ ≤ 0.
    fn declared(&self) -> DeclaredConstants {
        let lambda = self.lambda();
        let grad_penalty = if self.f_p > 0.0 { self.f_p * self.f_p / lambda } else { 0.0 };
        let noise_h = if self.b == 0.0 { 1.0 } else { 1.0 + self.b * self.b / lambda } * self.g_r * self.g_r;
        DeclaredConstants {
            lambda,
            monotonicity: 2.0 * self.f_r + grad_penalty + noise_h + lambda,
            lipschitz_b: self.b * self.b + self.g_r * self.g_r,
            lipschitz_a: Some((self.a + self.f_p).powi(2) + self.f_r * self.f_r),
            bound_b0: self.k1,
            bound_a0: self.k2,
            nu: self.nu,
            holder_eta: self.eta,
            holder_c: 0.0,
        }
    }
}

fn sine_mode(x: f64) -> f64 {
    (TAU * x).sin()
}

/// Coefficients of a quasilinear gallery entry.
pub fn gallery_spec(gallery: Gallery, params: &GalleryParams) -> Result<QuasilinearSpec> {
    let horizon = params.horizon();
    let a = params.a.unwrap_or(1.0);
    let b = params.b.unwrap_or(gallery.default_b());
    let mut bounds = Bounds { a, b, f_p: 0.0, f_r: 0.0, g_r: 0.0, k1: 0.0, k2: 0.0, nu: 0.5, eta: 0.0 };
    let mut noise = NoiseTerm { b: Coefficient::Constant(b), ..NoiseTerm::default() };
    let mut nonlinearity = None;

    match gallery {
        Gallery::Heat => {}
        Gallery::HeatAdditive => {
            noise.forcing = Coefficient::space(|x| (TAU * x).cos());
            bounds.k1 = 0.5;
        }
        Gallery::Quasilinear => {
            nonlinearity = Some(Nonlinearity::General(GeneralNonlinearity::new(
                |_, _, p, r| r.sin() + 0.25 * p.cos(),
                |_, _, p, _| -0.25 * p.sin(),
                |_, _, _, r| r.cos(),
                0.25,
                1.0,
            )));
            noise.nonlinear = Some(NoiseNonlinearity::new(|_, _, r| 0.5 * r.sin(), 0.5));
            bounds.f_p = 0.25;
            bounds.f_r = 1.0;
            bounds.g_r = 0.5;
            bounds.k2 = 0.0625;
        }
        Gallery::HolderTime => {
            noise.forcing = Coefficient::space_time(|t, x| (t - 0.5).abs().powf(0.25) * (TAU * x).cos());
            let far = 0.5f64.max((horizon - 0.5).abs());
            bounds.k1 = 0.5 * far.sqrt();
            bounds.nu = 0.25;
            bounds.eta = 0.5;
        }
        Gallery::AntiMonotone => {
            return Err(Error::config("anti-monotone is not a quasilinear gallery entry"));
        }
    }

    Ok(QuasilinearSpec {
        name: gallery.name().to_string(),
        a: Coefficient::Constant(a),
        a0: Coefficient::Constant(0.0),
        forcing: Coefficient::Constant(0.0),
        nonlinearity,
        noise: vec![noise],
        initial: Arc::new(sine_mode),
        horizon,
        parabolicity: bounds.lambda(),
        declared: bounds.declared(),
    })
}

pub fn build_gallery(gallery: Gallery, params: &GalleryParams) -> Result<EvolutionProblem> {
    let space = GridSpace::new(params.n())?;
    if gallery == Gallery::AntiMonotone {
        let declared = DeclaredConstants {
            lambda: 1.0,
            monotonicity: 0.0,
            lipschitz_b: 0.0,
            lipschitz_a: Some(1.0),
            bound_b0: 0.0,
            bound_a0: 0.0,
            nu: 0.5,
            holder_eta: 0.0,
            holder_c: 0.0,
        };
        return EvolutionProblem::new(
            gallery.name(),
            space,
            Arc::new(LinearDrift::new(CyclicTridiagonal::identity(space.n()))),
            vec![Arc::new(FnDiffusion::zero())],
            space.sample(sine_mode),
            params.horizon(),
            declared,
        );
    }
    assemble_quasilinear(&gallery_spec(gallery, params)?, space)
}
