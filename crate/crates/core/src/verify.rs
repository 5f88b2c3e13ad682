//! Monte Carlo estimators checked against exact identities and closed forms.
//!
//! Every check passes when the estimate lies within three standard errors of
//! its target.

use crate::dynamics::MeasureTag;
use crate::eigen::{eigenpair, invariant_density, InvariantDensity};
use crate::error::{Error, Result};
use crate::feynman_kac::{
    estimate_f_series, estimate_moment_32, estimate_u_series, gaussian_f_oracle,
};
use crate::model::{DerivedConstants, ModelKind, StateModelSpec};
use crate::sde::{girsanov_weight, simulate, Functional, SimConfig};
use crate::stats::McEstimate;
use serde::Serialize;

/// Standard errors allowed between an estimate and its target.
pub const SE_MULTIPLE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub kind: ModelKind,
    pub t: f64,
    pub z: f64,
    /// Suite-specific parameter (the moment order for the moment suite), NaN otherwise.
    pub extra: f64,
    pub estimate: f64,
    pub target: f64,
    /// Standard error of `estimate − target`.
    pub std_error: f64,
    pub passed: bool,
}

impl Check {
    fn new(
        suite: &'static str,
        kind: ModelKind,
        t: f64,
        z: f64,
        est: McEstimate,
        target: McEstimate,
    ) -> Check {
        let se = est.combined_se(&target);
        let diff = (est.value - target.value).abs();
        Check {
            suite,
            kind,
            t,
            z,
            extra: f64::NAN,
            estimate: est.value,
            target: target.value,
            std_error: se,
            passed: diff <= SE_MULTIPLE * se + 1e-12 * target.value.abs(),
        }
    }

    /// `|estimate − target| / std_error`.
    pub fn z_score(&self) -> f64 {
        (self.estimate - self.target).abs() / self.std_error
    }
}

/// Five starting points spread over the tilted stationary law.
pub fn probe_points(model: &StateModelSpec, c: &DerivedConstants) -> Result<Vec<f64>> {
    Ok(match invariant_density(model, c)? {
        InvariantDensity::InverseGamma { shape, scale, .. } => {
            let m = scale / (shape - 1.0);
            [0.5, 0.75, 1.0, 1.5, 2.0].iter().map(|k| k * m).collect()
        }
        InvariantDensity::Gaussian { mean, var } => {
            let sd = var.sqrt();
            [-2.0, -1.0, 0.0, 1.0, 2.0]
                .iter()
                .map(|k| mean + k * sd)
                .collect()
        }
    })
}

/// `u(t,z)` against `e^{−λt}φ(z)f(t,z)`, with independent seeds for `u` and `f`.
///
/// Point `i` uses seeds `seed + 2i` (for `u`) and `seed + 2i + 1` (for `f`).
pub fn hs_identity(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z_points: &[f64],
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<Check>> {
    let ep = eigenpair(model, c)?;
    let mut out = Vec::new();
    for (i, &z) in z_points.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(2 * i as u64);
        let u = estimate_u_series(
            model,
            c,
            z,
            times,
            &SimConfig {
                seed,
                ..cfg.clone()
            },
        )?;
        let f = estimate_f_series(
            model,
            c,
            z,
            times,
            &SimConfig {
                seed: seed.wrapping_add(1),
                ..cfg.clone()
            },
        )?;
        for (k, &t) in times.iter().enumerate() {
            let hs = f[k].scaled((-c.lambda * t).exp() * ep.phi(z));
            out.push(Check::new("hs_identity", model.kind, t, z, u[k], hs));
        }
    }
    Ok(out)
}

/// Mean of the density process of ℙ̃ with respect to ℙ, which is one.
pub fn girsanov_mean(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<Check>> {
    c.require()?;
    let fs = [Functional::IntZ, Functional::IntZ2];
    let batch = simulate(model, c, MeasureTag::P, z, &cfg.recording(times), &fs)?;
    (0..batch.n_times())
        .map(|k| {
            let w = girsanov_weight(c, &batch, k, MeasureTag::P, MeasureTag::PTilde)?;
            let est = McEstimate::from_samples(&w, batch.antithetic, cfg.seed);
            Ok(Check::new(
                "girsanov_mean",
                model.kind,
                batch.times[k],
                z,
                est,
                McEstimate::exact(1.0, 0, 0),
            ))
        })
        .collect()
}

/// Simulated `E[Y_t^ν]` of the 3/2 process (its own parameters) against the
/// moment formula, for each `ν` in `orders`.
pub fn moment_formula(
    model: &StateModelSpec,
    c: &DerivedConstants,
    y0: f64,
    orders: &[f64],
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<Check>> {
    if model.kind != ModelKind::ThreeHalves {
        return Err(Error::DomainError(format!(
            "the moment formula is for the 3/2 model, not {}",
            model.kind
        )));
    }
    let batch = simulate(model, c, MeasureTag::Raw, y0, &cfg.recording(times), &[])?;
    let mut out = Vec::new();
    for &nu in orders {
        for k in 0..batch.n_times() {
            let t = batch.times[k];
            let v: Vec<f64> = batch.column(k).into_iter().map(|y| y.powf(nu)).collect();
            let est = McEstimate::from_samples(&v, batch.antithetic, cfg.seed);
            let exact = estimate_moment_32(model.b, model.a, model.sigma, y0, nu, t)?;
            let mut check = Check::new(
                "moment_formula",
                model.kind,
                t,
                y0,
                est,
                McEstimate::exact(exact, 0, 0),
            );
            check.extra = nu;
            out.push(check);
        }
    }
    Ok(out)
}

/// Default moment orders `{1/2, κ/2}` with `κ = 2a/σ² + 1`.
pub fn moment_orders(model: &StateModelSpec) -> [f64; 2] {
    [
        0.5,
        0.5 * (2.0 * model.a / (model.sigma * model.sigma) + 1.0),
    ]
}

/// Filtered OU `f` against its Gaussian closed form at every `(z, t)` pair.
///
/// Point `i` uses seed `seed + i`.
pub fn gaussian_oracle(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z_points: &[f64],
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<Check>> {
    if model.kind != ModelKind::FilteredOu {
        return Err(Error::DomainError(format!(
            "the Gaussian closed form is for the filtered OU model, not {}",
            model.kind
        )));
    }
    let mut out = Vec::new();
    for (i, &z) in z_points.iter().enumerate() {
        let est = estimate_f_series(
            model,
            c,
            z,
            times,
            &SimConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..cfg.clone()
            },
        )?;
        for (k, &t) in times.iter().enumerate() {
            let exact = gaussian_f_oracle(model, c, z, t)?;
            out.push(Check::new(
                "gaussian_oracle",
                model.kind,
                t,
                z,
                est[k],
                McEstimate::exact(exact, 0, 0),
            ));
        }
    }
    Ok(out)
}

/// Long-horizon `f(t,z)` against `∫ (1/φ) dπ̃` over the tilted stationary law.
pub fn ergodic_limit(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<Check> {
    let ep = eigenpair(model, c)?;
    let limit = invariant_density(model, c)?.expect(|y| (-ep.log_phi(y)).exp())?;
    let est = estimate_f_series(model, c, z, &[t], cfg)?[0];
    Ok(Check::new(
        "ergodic_limit",
        model.kind,
        t,
        z,
        est,
        McEstimate::exact(limit, 0, 0),
    ))
}
