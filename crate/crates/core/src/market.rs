//! Investor preference and market primitives.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Largest accepted 1-norm condition number of Σ.
pub const MAX_CONDITION: f64 = 1e12;

/// Power-utility exponent `p` and the market `(r, μ, Σ, ρ)` for `n` risky assets.
///
/// Excess returns are `Σμ·g(Y)`; `ρ` is the correlation between the asset
/// Brownian motions and the state noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceMarketSpec {
    pub p: f64,
    pub r: f64,
    pub mu: Vec<f64>,
    /// Row-major `n × n` volatility matrix.
    pub sigma: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
}

/// Scalar summaries of the market that enter the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarketScalars {
    pub p: f64,
    pub r: f64,
    /// ‖μ‖²
    pub mm: f64,
    /// ρᵀμ
    pub rm: f64,
    /// ‖ρ‖²
    pub rr: f64,
}

impl PreferenceMarketSpec {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidSpec(
                "at least one risky asset is required".into(),
            ));
        }
        if !(self.p < 0.0) || !self.p.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "p must be negative, got {}",
                self.p
            )));
        }
        if !self.r.is_finite() {
            return Err(Error::InvalidSpec("r must be finite".into()));
        }
        if self.rho.len() != n
            || self.sigma.len() != n
            || self.sigma.iter().any(|row| row.len() != n)
        {
            return Err(Error::InvalidSpec(format!(
                "mu, rho and Sigma must all have dimension {n}"
            )));
        }
        let finite = self
            .mu
            .iter()
            .chain(self.rho.iter())
            .chain(self.sigma.iter().flatten())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidSpec("non-finite market entry".into()));
        }
        let rr: f64 = self.rho.iter().map(|x| x * x).sum();
        if rr > 1.0 + 1e-12 {
            return Err(Error::InvalidSpec(format!(
                "‖rho‖ must be at most 1, got {}",
                rr.sqrt()
            )));
        }
        let s = self.sigma_matrix();
        let inv = s
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::InvalidSpec("Sigma is singular".into()))?;
        let cond = norm1(&s) * norm1(&inv);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::InvalidSpec(format!(
                "Sigma condition number {cond:.3e} exceeds {MAX_CONDITION:e}"
            )));
        }
        Ok(())
    }

    pub fn scalars(&self) -> MarketScalars {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        MarketScalars {
            p: self.p,
            r: self.r,
            mm: dot(&self.mu, &self.mu),
            rm: dot(&self.rho, &self.mu),
            rr: dot(&self.rho, &self.rho),
        }
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.sigma[i][j])
    }

    /// Solves `Σᵀx = v`.
    pub fn solve_sigma_t(&self, v: &[f64]) -> Vec<f64> {
        let st = self.sigma_matrix().transpose();
        let x = st
            .lu()
            .solve(&DVector::from_column_slice(v))
            .expect("Sigma is validated to be invertible");
        x.iter().copied().collect()
    }

    /// Returns `Σ⁻¹`, row-major.
    pub fn sigma_inverse(&self) -> Vec<Vec<f64>> {
        let inv = self
            .sigma_matrix()
            .lu()
            .try_inverse()
            .expect("Sigma is validated to be invertible");
        (0..self.n())
            .map(|i| (0..self.n()).map(|j| inv[(i, j)]).collect())
            .collect()
    }

    /// `(Σᵀ)⁻¹μ`
    pub fn myopic_direction(&self) -> Vec<f64> {
        self.solve_sigma_t(&self.mu)
    }

    /// `(Σᵀ)⁻¹ρ`
    pub fn rho_direction(&self) -> Vec<f64> {
        self.solve_sigma_t(&self.rho)
    }
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
