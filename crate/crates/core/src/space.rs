//! The discrete Gelfand triple `V ↪ H ↪ V*` on the unit torus.
//!
//! `H` carries the weighted inner product `(u, v) = h·Σ uᵢvᵢ`, `V` adds the
//! forward-difference seminorm, and `V*` elements are stored by their
//! `H`-Riesz representative. Its norm is `(w, G⁻¹w)` with `G = I - Δ_h` the
//! Gram operator of `V` relative to `H`.

use std::ops::{Deref, DerefMut};

use crate::banded::{CyclicFactor, CyclicTridiagonal};
use crate::error::{Error, Result};

/// Uniform periodic grid with `n` nodes `xᵢ = i/n` on `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpace {
    n: usize,
}

/// Grid samples of an `H` element.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    values: Vec<f64>,
}

impl StateVector {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self { values: vec![c; n] }
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += a · other`
    pub fn axpy(&mut self, a: f64, other: &[f64]) {
        for (s, o) in self.values.iter_mut().zip(other) {
            *s += a * o;
        }
    }

    pub fn sub(&self, other: &[f64]) -> StateVector {
        self.values.iter().zip(other).map(|(a, b)| a - b).collect()
    }

    pub fn scaled(&self, a: f64) -> StateVector {
        self.values.iter().map(|v| a * v).collect()
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

impl FromIterator<f64> for StateVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self { values: iter.into_iter().collect() }
    }
}

impl Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for StateVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

impl GridSpace {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::config(format!("grid needs at least 2 nodes, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> StateVector {
        (0..self.n).map(|i| f(self.node(i))).collect()
    }

    pub fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: v.len() });
        }
        Ok(())
    }

    /// `(u, v)_H = h·Σ uᵢvᵢ`
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.h() * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn h_norm_sq(&self, v: &[f64]) -> f64 {
        self.inner(v, v)
    }

    /// `|v|²_V = |v|²_H + |Dv|²_H`
    pub fn v_norm_sq(&self, v: &[f64]) -> f64 {
        let n = self.n;
        let inv_h = n as f64;
        let grad: f64 = (0..n)
            .map(|i| {
                let d = (v[(i + 1) % n] - v[i]) * inv_h;
                d * d
            })
            .sum();
        self.h_norm_sq(v) + self.h() * grad
    }

    /// `(Dv)ᵢ = (v_{i+1} - vᵢ)/h` with periodic wrap.
    pub fn forward_diff(&self, v: &[f64]) -> StateVector {
        let mut out = vec![0.0; self.n];
        self.forward_diff_into(v, &mut out);
        out.into()
    }

    pub fn forward_diff_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let inv_h = n as f64;
        for i in 0..n {
            out[i] = (v[(i + 1) % n] - v[i]) * inv_h;
        }
    }

    /// `H`-adjoint of [`forward_diff`](Self::forward_diff): `(Dᵀw)ᵢ = (w_{i-1} - wᵢ)/h`.
    pub fn forward_diff_adjoint(&self, w: &[f64]) -> StateVector {
        let n = self.n;
        let inv_h = n as f64;
        (0..n).map(|i| (w[(i + n - 1) % n] - w[i]) * inv_h).collect()
    }

    /// Divergence-form term `-Dᵀ(coeff ⊙ w)`. Applied to `w = Dv` it is the
    /// weighted Laplacian `D(a Dv)`.
    pub fn div_weighted(&self, w: &[f64], coeff: &[f64]) -> Result<StateVector> {
        self.check(w)?;
        self.check(coeff)?;
        let flux: Vec<f64> = w.iter().zip(coeff).map(|(a, b)| a * b).collect();
        Ok(self.forward_diff_adjoint(&flux).scaled(-1.0))
    }

    /// `D(a Dv)` with `a ≡ 1`: the periodic three-point Laplacian.
    pub fn laplacian(&self, v: &[f64]) -> StateVector {
        let ones = vec![1.0; self.n];
        self.div_weighted(&self.forward_diff(v), &ones).expect("lengths agree")
    }

    /// Matrix of `v ↦ -Dᵀ(a ⊙ Dv)`.
    pub fn weighted_laplacian_matrix(&self, coeff: &[f64]) -> CyclicTridiagonal {
        let n = self.n;
        let inv_h2 = (n * n) as f64;
        let mut op = CyclicTridiagonal::zeros(n);
        let (lower, diag, upper) = op.bands_mut();
        for i in 0..n {
            let a_here = coeff[i];
            let a_left = coeff[(i + n - 1) % n];
            lower[i] = a_left * inv_h2;
            upper[i] = a_here * inv_h2;
            diag[i] = -(a_here + a_left) * inv_h2;
        }
        op
    }

    /// `G = I + DᵀD`, so that `(v, Gv)_H = |v|²_V`.
    pub fn gram(&self) -> CyclicTridiagonal {
        let mut g = CyclicTridiagonal::identity(self.n);
        g.add_scaled(&self.weighted_laplacian_matrix(&vec![1.0; self.n]), -1.0);
        g
    }

    pub fn dual_norm(&self) -> DualNorm {
        let factor = self.gram().factorize().expect("I - Δ is positive definite");
        DualNorm { space: *self, factor }
    }
}

/// Cached factorization of the Gram operator for repeated `V*` norms.
#[derive(Clone, Debug)]
pub struct DualNorm {
    space: GridSpace,
    factor: CyclicFactor,
}

impl DualNorm {
    /// `|w|²_{V*} = (w, G⁻¹w)_H` for the `H`-representative `w`.
    pub fn norm_sq(&self, w: &[f64]) -> f64 {
        let z = self.factor.solve(w);
        self.space.inner(w, &z)
    }
}
