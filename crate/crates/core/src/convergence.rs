//! Decay of the intertemporal weight and convergence of the dynamic portfolio.

use crate::error::{Error, Result};
use crate::feynman_kac::{estimate_remainder, gaussian_quad_exp, FzForm};
use crate::market::PreferenceMarketSpec;
use crate::model::{DerivedConstants, ModelKind, StateModelSpec};
use crate::portfolio::{dynamic_portfolio_horizons, gap_norm, static_portfolio};
use crate::sde::SimConfig;
use crate::stats::{ols, McEstimate};
use serde::Serialize;

/// Log-linear fit of `|f_z/f|` against time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub t_grid: Vec<f64>,
    /// `f_z/f` at each grid time.
    pub estimates: Vec<McEstimate>,
    pub analytic_rate: f64,
    /// `|slope + λ̂|/λ̂`
    pub rel_error: f64,
}

/// Evenly spaced grid of `n` times from the default burn-in `1/λ̂` to `end`.
pub fn default_grid(c: &DerivedConstants, end: f64, n: usize) -> Vec<f64> {
    let start = 1.0 / c.lambda_hat;
    (0..n)
        .map(|i| start + (end - start) * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// Fits `log|y|` against `t`; every value must be finite and non-zero.
pub fn fit_log_linear(t: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if t.len() < 2 || t.len() != y.len() {
        return Err(Error::DegenerateFit(format!(
            "need at least two points, got {}",
            t.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite() || *v == 0.0) {
        return Err(Error::DegenerateFit(
            "values must be finite and non-zero".into(),
        ));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DegenerateFit(
            "time grid must be strictly increasing".into(),
        ));
    }
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    Ok(ols(t, &ly))
}

fn remainder_ratios(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t_grid: &[f64],
    cfg: &SimConfig,
) -> Result<(Vec<f64>, Vec<McEstimate>)> {
    let r = estimate_remainder(model, c, z, t_grid, cfg, FzForm::preferred(model.kind))?;
    if r.ratio
        .iter()
        .any(|e| !(e.value > 0.0) || !e.value.is_finite())
    {
        return Err(Error::DegenerateFit(
            "intertemporal weight estimate is not positive".into(),
        ));
    }
    Ok((r.times, r.ratio))
}

/// Regresses `log|f_z/f|` on `t` and compares the slope with `−λ̂`.
///
/// The caller picks the grid; [`default_grid`] starts after a burn-in of `1/λ̂`.
pub fn fit_decay_rate(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t_grid: &[f64],
    cfg: &SimConfig,
) -> Result<RateFit> {
    if t_grid.len() < 5 {
        return Err(Error::DegenerateFit(format!(
            "need at least 5 times, got {}",
            t_grid.len()
        )));
    }
    let (times, est) = remainder_ratios(model, c, z, t_grid, cfg)?;
    rate_fit_from(c, &times, est)
}

/// Builds a [`RateFit`] from already computed weights.
pub fn rate_fit_from(
    c: &DerivedConstants,
    times: &[f64],
    estimates: Vec<McEstimate>,
) -> Result<RateFit> {
    let vals: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let (slope, intercept, r_squared) = fit_log_linear(times, &vals)?;
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        t_grid: times.to_vec(),
        estimates,
        analytic_rate: c.lambda_hat,
        rel_error: (slope + c.lambda_hat).abs() / c.lambda_hat,
    })
}

/// Range of the rescaled weight `e^{λ̂t}|f_z/f|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sandwich {
    pub t_grid: Vec<f64>,
    pub rescaled: Vec<f64>,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Checks that `e^{λ̂t}|f_z/f|` stays within a factor `bound` of itself on the grid.
pub fn sandwich_check(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t_grid: &[f64],
    cfg: &SimConfig,
    bound: f64,
) -> Result<Sandwich> {
    if t_grid.len() < 2 {
        return Err(Error::DegenerateFit(
            "sandwich check needs at least two times".into(),
        ));
    }
    let (times, est) = remainder_ratios(model, c, z, t_grid, cfg)?;
    let rescaled: Vec<f64> = times
        .iter()
        .zip(&est)
        .map(|(t, e)| (c.lambda_hat * t).exp() * e.value.abs())
        .collect();
    let ratio_min = rescaled.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio_max = rescaled.iter().copied().fold(0.0, f64::max);
    Ok(Sandwich {
        t_grid: times,
        rescaled,
        ratio_min,
        ratio_max,
        bound,
        passed: ratio_min > 0.0 && ratio_max / ratio_min <= bound,
    })
}

/// `lim e^{λ̂t} f_z(t,z) = E[(2ηX + ξ)e^{ηX² + ξX}]` under the tilted stationary
/// Gaussian law of the filtered OU state.
pub fn fou_ergodic_fz_constant(model: &StateModelSpec, c: &DerivedConstants) -> Result<f64> {
    if model.kind != ModelKind::FilteredOu {
        return Err(Error::DomainError(
            "closed-form ergodic constant exists for the filtered OU model only".into(),
        ));
    }
    let mean = (model.b - c.theta_norm2 * c.xi) / c.lambda_hat;
    let var = c.theta_norm2 / (2.0 * c.lambda_hat);
    let g = gaussian_quad_exp(c.eta, c.xi, mean, var)?;
    Ok(g * (2.0 * c.eta * mean + c.xi) / (1.0 - 2.0 * c.eta * var))
}

/// Gap between the dynamic and static portfolios over horizons.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioConvergence {
    pub horizons: Vec<f64>,
    pub gaps: Vec<f64>,
    /// Gap error from the intertemporal weight error.
    pub gap_se: Vec<f64>,
    pub slope: f64,
    pub r_squared: f64,
    pub analytic_rate: f64,
    pub rel_error: f64,
    pub decreasing: bool,
}

/// `‖π̂_T(0,z) − π̂_∞(z)‖` at each horizon and its log-linear decay rate.
pub fn portfolio_convergence(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    horizons: &[f64],
    cfg: &SimConfig,
) -> Result<PortfolioConvergence> {
    let st = static_portfolio(spec, model, c, z)?;
    let decs = dynamic_portfolio_horizons(
        spec,
        model,
        c,
        z,
        horizons,
        cfg,
        FzForm::preferred(model.kind),
    )?;
    let gaps: Vec<f64> = decs
        .iter()
        .map(|d| gap_norm(&d.total_dynamic, &st))
        .collect();
    // the gap is |weight|·‖δ/(1−p)·hedge‖, so its error scales with the weight's
    let gap_se: Vec<f64> = decs
        .iter()
        .zip(&gaps)
        .map(|(d, g)| g * d.intertemporal_weight.std_error / d.intertemporal_weight.value.abs())
        .collect();
    let times: Vec<f64> = decs.iter().map(|d| d.horizon).collect();
    let (slope, _, r_squared) = fit_log_linear(&times, &gaps)?;
    Ok(PortfolioConvergence {
        decreasing: gaps.windows(2).all(|w| w[1] < w[0]),
        horizons: times,
        gaps,
        gap_se,
        slope,
        r_squared,
        analytic_rate: c.lambda_hat,
        rel_error: (slope + c.lambda_hat).abs() / c.lambda_hat,
    })
}

/// Ratio of standard errors of `f` at `n_paths/4` and `n_paths`; about 2.
pub fn se_scaling(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<f64> {
    let full = crate::feynman_kac::estimate_f(model, c, z, t, cfg)?;
    let quarter_paths = (cfg.n_paths / 8) * 2;
    let quarter = crate::feynman_kac::estimate_f(
        model,
        c,
        z,
        t,
        &SimConfig {
            n_paths: quarter_paths,
            ..cfg.clone()
        },
    )?;
    Ok(quarter.std_error / full.std_error)
}
