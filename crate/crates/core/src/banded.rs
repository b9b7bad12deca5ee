//! Periodic (cyclic) tridiagonal operators.
//!
//! Every linear operator the scheme needs on the periodic grid couples a node
//! only to its two neighbours, so `I - τ·L` and the Newton Jacobians are
//! cyclic tridiagonal. Solves use the Thomas algorithm on the open chain plus
//! a Sherman–Morrison correction for the two wrap-around corners.

use crate::error::{Error, Result};

/// Row `i` reads `lower[i]·x[i-1] + diag[i]·x[i] + upper[i]·x[i+1]`, indices mod n.
#[derive(Clone, Debug, PartialEq)]
pub struct CyclicTridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl CyclicTridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self { lower: vec![0.0; n], diag: vec![0.0; n], upper: vec![0.0; n] }
    }

    pub fn identity(n: usize) -> Self {
        Self { lower: vec![0.0; n], diag: vec![1.0; n], upper: vec![0.0; n] }
    }

    pub fn from_bands(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        for band in [&lower, &upper] {
            if band.len() != n {
                return Err(Error::Dimension { expected: n, got: band.len() });
            }
        }
        Ok(Self { lower, diag, upper })
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn bands_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.lower, &mut self.diag, &mut self.upper)
    }

    /// `out = self · x`
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        for i in 0..n {
            let left = x[(i + n - 1) % n];
            let right = x[(i + 1) % n];
            out[i] = self.lower[i] * left + self.diag[i] * x[i] + self.upper[i] * right;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.apply_into(x, &mut out);
        out
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &CyclicTridiagonal, scale: f64) {
        for (a, b) in self.lower.iter_mut().zip(&other.lower) {
            *a += scale * b;
        }
        for (a, b) in self.diag.iter_mut().zip(&other.diag) {
            *a += scale * b;
        }
        for (a, b) in self.upper.iter_mut().zip(&other.upper) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.lower.iter_mut().chain(self.diag.iter_mut()).chain(self.upper.iter_mut()) {
            *v *= factor;
        }
    }

    /// `I - tau · self`, the matrix of the implicit step.
    pub fn shifted_identity(&self, tau: f64) -> CyclicTridiagonal {
        let mut out = CyclicTridiagonal::identity(self.n());
        out.add_scaled(self, -tau);
        out
    }

    /// Largest absolute row sum (the induced ∞-norm).
    pub fn row_sum_norm(&self) -> f64 {
        (0..self.n())
            .map(|i| self.lower[i].abs() + self.diag[i].abs() + self.upper[i].abs())
            .fold(0.0, f64::max)
    }

    pub fn factorize(&self) -> Result<CyclicFactor> {
        let n = self.n();
        if n <= 3 {
            return DenseLu::new(self).map(CyclicFactor::Dense);
        }
        let alpha = self.upper[n - 1];
        let beta = self.lower[0];
        let gamma = if self.diag[0] != 0.0 { -self.diag[0] } else { -1.0 };

        let mut diag = self.diag.clone();
        diag[0] -= gamma;
        diag[n - 1] -= alpha * beta / gamma;
        let chain = Thomas::new(&self.lower, &diag, &self.upper)?;

        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = alpha;
        let z = chain.solve(&u);
        let correction = beta * z[n - 1] / gamma;
        let denom = 1.0 + z[0] + correction;
        if !denom.is_finite() || denom.abs() <= 1e-13 * (1.0 + z[0].abs() + correction.abs()) {
            return Err(Error::Singular { row: n - 1 });
        }
        Ok(CyclicFactor::Periodic { chain, z, beta, gamma, denom })
    }
}

/// Factorization of a [`CyclicTridiagonal`], reusable across right-hand sides.
#[derive(Clone, Debug)]
pub enum CyclicFactor {
    Periodic { chain: Thomas, z: Vec<f64>, beta: f64, gamma: f64, denom: f64 },
    Dense(DenseLu),
}

impl CyclicFactor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            CyclicFactor::Periodic { chain, z, beta, gamma, denom } => {
                let n = z.len();
                let mut x = chain.solve(rhs);
                let fact = (x[0] + beta * x[n - 1] / gamma) / denom;
                for (xi, zi) in x.iter_mut().zip(z) {
                    *xi -= fact * zi;
                }
                x
            }
            CyclicFactor::Dense(lu) => lu.solve(rhs),
        }
    }
}

/// Thomas elimination for an open (non-periodic) tridiagonal chain.
#[derive(Clone, Debug)]
pub struct Thomas {
    sub: Vec<f64>,
    pivots: Vec<f64>,
    sup_scaled: Vec<f64>,
}

impl Thomas {
    /// `sub[0]` and `sup[n-1]` are ignored.
    pub fn new(sub: &[f64], diag: &[f64], sup: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut pivots = vec![0.0; n];
        let mut sup_scaled = vec![0.0; n];
        for i in 0..n {
            let p = if i == 0 { diag[0] } else { diag[i] - sub[i] * sup_scaled[i - 1] };
            if p == 0.0 || !p.is_finite() {
                return Err(Error::Singular { row: i });
            }
            pivots[i] = p;
            if i + 1 < n {
                sup_scaled[i] = sup[i] / p;
            }
        }
        Ok(Self { sub: sub.to_vec(), pivots, sup_scaled })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.pivots.len();
        let mut x = vec![0.0; n];
        x[0] = rhs[0] / self.pivots[0];
        for i in 1..n {
            x[i] = (rhs[i] - self.sub[i] * x[i - 1]) / self.pivots[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.sup_scaled[i] * x[i + 1];
        }
        x
    }
}

/// Partial-pivoting LU for the tiny grids where the cyclic bands overlap.
#[derive(Clone, Debug)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    fn new(op: &CyclicTridiagonal) -> Result<Self> {
        let n = op.n();
        let mut lu = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = op.apply(&e);
            for i in 0..n {
                lu[i * n + j] = col[i];
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, max) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
            if max == 0.0 || !max.is_finite() {
                return Err(Error::Singular { row: k });
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            for i in k + 1..n {
                let f = lu[i * n + k] / lu[k * n + k];
                lu[i * n + k] = f;
                for j in k + 1..n {
                    lu[i * n + j] -= f * lu[k * n + j];
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i * n + j] * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_dominant(n: usize, seed: u64) -> CyclicTridiagonal {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let lower: Vec<f64> = (0..n).map(|_| next()).collect();
        let upper: Vec<f64> = (0..n).map(|_| next()).collect();
        let diag: Vec<f64> = (0..n).map(|i| 2.0 + lower[i].abs() + upper[i].abs() + next()).collect();
        CyclicTridiagonal::from_bands(lower, diag, upper).unwrap()
    }

    #[test]
    fn solve_inverts_apply_for_all_small_and_large_sizes() {
        for n in 1..20 {
            let op = random_dominant(n, n as u64);
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.3).collect();
            let rhs = op.apply(&x);
            let sol = op.factorize().unwrap().solve(&rhs);
            for (a, b) in sol.iter().zip(&x) {
                assert!((a - b).abs() < 1e-12, "n = {n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn corners_wrap_around() {
        let op = CyclicTridiagonal::from_bands(vec![1.0; 4], vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert_eq!(op.apply(&[1.0, 2.0, 3.0, 4.0]), vec![4.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn singular_matrix_is_reported() {
        // periodic Laplacian annihilates constants
        let op = CyclicTridiagonal::from_bands(vec![1.0; 8], vec![-2.0; 8], vec![1.0; 8]).unwrap();
        assert!(matches!(op.factorize(), Err(Error::Singular { .. })));
    }
}
