//! Sensitivities of the static and dynamic portfolios and of the remainder `f`.
//!
//! Static sensitivities are exact (dual numbers through the closed forms).
//! Dynamic ones are central finite differences with common random numbers.
//! `∂f/∂b` and `∂f/∂a` also have a likelihood-ratio estimator that simulates
//! only once. Diffusion-parameter sensitivities are finite differences only.

use crate::dynamics::{Dynamics, MeasureTag};
use crate::eigen::Eigenpair;
use crate::error::{Error, Result};
use crate::feynman_kac::{remainder_samples, FzForm, RemainderSamples};
use crate::market::PreferenceMarketSpec;
use crate::model::{
    constants_generic, derive_constants, Constants, DerivedConstants, ModelKind, Param,
    StateModelSpec,
};
use crate::portfolio::{
    assemble, constants_of, hedge_direction, static_coefficients, static_portfolio,
};
use crate::scalar::{Dual, Scalar};
use crate::sde::{simulate_dynamics, Functional, SimConfig};
use crate::stats::{mean_se, ols, McEstimate};
use serde::Serialize;

/// Perturbed model, its constants and the (possibly shifted) state.
struct Bumped {
    model: StateModelSpec,
    c: DerivedConstants,
    z: f64,
}

fn bump(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    z: f64,
    param: Param,
    h: f64,
) -> Result<Bumped> {
    let (m, z) = match param {
        Param::Z => (*model, z + h),
        p => (model.with_param(p, model.param(p) + h), z),
    };
    let c = derive_constants(spec, &m).map_err(|e| match e {
        Error::InvalidSpec(s) => {
            Error::AssumptionViolated(format!("{param} perturbed by {h}: {s}"))
        }
        e => e,
    })?;
    if !c.assumption_ok {
        return Err(Error::AssumptionViolated(format!(
            "{param} perturbed by {h}: {}",
            c.assumption
        )));
    }
    Ok(Bumped { model: m, c, z })
}

fn value_of(model: &StateModelSpec, z: f64, param: Param) -> f64 {
    match param {
        Param::Z => z,
        p => model.param(p),
    }
}

/// Default finite-difference step: `1e-3·max(1, |z|)` for `z`, `1e-3·|χ|` otherwise.
pub fn default_step(model: &StateModelSpec, z: f64, param: Param) -> f64 {
    let v = value_of(model, z, param);
    match param {
        Param::Z => 1e-3 * v.abs().max(1.0),
        _ if v == 0.0 => 1e-3,
        _ => 1e-3 * v.abs(),
    }
}

fn lift(c: &Constants<f64>) -> Constants<Dual> {
    let d = Dual::cst;
    Constants {
        q: c.q,
        delta: c.delta,
        theta: d(c.theta),
        kappa: d(c.kappa),
        eta: d(c.eta),
        xi: d(c.xi),
        zeta: d(c.zeta),
        lambda: d(c.lambda),
        lambda_hat: d(c.lambda_hat),
        p0: d(c.p0),
        theta_mu: d(c.theta_mu),
        theta_norm2: d(c.theta_norm2),
    }
}

fn tangent(
    m: &crate::market::MarketScalars,
    model: &StateModelSpec,
    param: Param,
) -> Result<Constants<Dual>> {
    let seed = |p: Param, v: f64| {
        if p == param {
            Dual::var(v)
        } else {
            Dual::cst(v)
        }
    };
    constants_generic(
        model.kind,
        m,
        seed(Param::B, model.b),
        seed(Param::A, model.a),
        seed(Param::Sigma, model.sigma),
    )
}

/// `∂π̂_∞/∂χ` from the closed form.
pub fn static_sensitivity(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    param: Param,
) -> Result<Vec<f64>> {
    c.require()?;
    let h = 1e-6 * value_of(model, z, param).abs().max(1.0);
    bump(spec, model, z, param, h)?;
    bump(spec, model, z, param, -h)?;
    let (tc, zd, sd) = match param {
        Param::Z => (lift(&constants_of(c)), Dual::var(z), Dual::cst(model.sigma)),
        Param::Sigma => (
            tangent(&c.market, model, param)?,
            Dual::cst(z),
            Dual::var(model.sigma),
        ),
        _ => (
            tangent(&c.market, model, param)?,
            Dual::cst(z),
            Dual::cst(model.sigma),
        ),
    };
    let (cm, cr) = static_coefficients(model.kind, &tc, sd, spec.p, zd);
    Ok(spec
        .myopic_direction()
        .iter()
        .zip(spec.rho_direction())
        .map(|(m, r)| cm.d * m + cr.d * r)
        .collect())
}

/// Central difference of `π̂_∞` with step `1e-6·max(1, |χ|)`.
pub fn static_sensitivity_fd(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    z: f64,
    param: Param,
) -> Result<Vec<f64>> {
    let h = 1e-6 * value_of(model, z, param).abs().max(1.0);
    let up = bump(spec, model, z, param, h)?;
    let dn = bump(spec, model, z, param, -h)?;
    let a = static_portfolio(spec, &up.model, &up.c, up.z)?;
    let b = static_portfolio(spec, &dn.model, &dn.c, dn.z)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect())
}

/// Finite-difference sensitivity of the dynamic portfolio at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicSensitivity {
    /// Remaining horizon `T − t`.
    pub horizon: f64,
    pub value: Vec<f64>,
    /// Difference quotient of the intertemporal fund alone. Mathematically the
    /// dynamic minus the static sensitivity, without the truncation error of
    /// differencing the static part.
    pub intertemporal: Vec<f64>,
    pub std_error: Vec<f64>,
    pub step: f64,
}

fn check_crn(up: &RemainderSamples, dn: &RemainderSamples) -> Result<()> {
    if up.checksum != dn.checksum {
        return Err(Error::ConfigError(format!(
            "finite-difference runs consumed different draws ({:#x} vs {:#x})",
            up.checksum, dn.checksum
        )));
    }
    Ok(())
}

fn se_of(samples: &[f64], antithetic: bool) -> f64 {
    mean_se(samples, antithetic).1
}

/// `∂π̂_T/∂χ` at the remaining horizons `horizons`, from one pair of runs.
///
/// The `±step` runs share seeds, so their draws are identical; this is checked.
pub fn dynamic_sensitivity_series(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    z: f64,
    horizons: &[f64],
    param: Param,
    step: f64,
    cfg: &SimConfig,
    form: FzForm,
) -> Result<Vec<DynamicSensitivity>> {
    if !(step > 0.0) {
        return Err(Error::ConfigError(format!(
            "step must be positive, got {step}"
        )));
    }
    let up = bump(spec, model, z, param, step)?;
    let dn = bump(spec, model, z, param, -step)?;
    let su = remainder_samples(&up.model, &up.c, up.z, horizons, cfg, form)?;
    let sd = remainder_samples(&dn.model, &dn.c, dn.z, horizons, cfg, form)?;
    check_crn(&su, &sd)?;
    let (ru, rd) = (su.summarize(), sd.summarize());
    let k = crate::model::derive_constants(spec, model)?.delta / (1.0 - spec.p);
    let hu = hedge_direction(spec, &up.model, &up.c, up.z);
    let hd = hedge_direction(spec, &dn.model, &dn.c, dn.z);
    let two_h = 2.0 * step;
    let mut out = Vec::with_capacity(horizons.len());
    for i in 0..horizons.len() {
        let pu = assemble(spec, &up.model, &up.c, up.z, &ru.point(i))?;
        let pd = assemble(spec, &dn.model, &dn.c, dn.z, &rd.point(i))?;
        let quotient = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| (x - y) / two_h).collect()
        };
        let value = quotient(&pu.total_dynamic, &pd.total_dynamic);
        let intertemporal = quotient(&pu.intertemporal, &pd.intertemporal);
        let (fu, gu) = su.ratio_influence(i);
        let (fd, gd) = sd.ratio_influence(i);
        let std_error = (0..hu.len())
            .map(|j| {
                let diff = |a: &[f64], b: &[f64]| -> Vec<f64> {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| k * (hu[j] * x - hd[j] * y) / two_h)
                        .collect()
                };
                let (df, dg) = (diff(&fu, &fd), diff(&gu, &gd));
                if su.independent {
                    se_of(&df, su.antithetic).hypot(se_of(&dg, su.antithetic))
                } else {
                    let s: Vec<f64> = df.iter().zip(&dg).map(|(a, b)| a + b).collect();
                    se_of(&s, su.antithetic)
                }
            })
            .collect();
        out.push(DynamicSensitivity {
            horizon: ru.times[i],
            value,
            intertemporal,
            std_error,
            step,
        });
    }
    Ok(out)
}

/// `∂π̂_T(t,z)/∂χ` by central differences with common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_sensitivity_fd(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t: f64,
    big_t: f64,
    param: Param,
    cfg: &SimConfig,
) -> Result<DynamicSensitivity> {
    c.require()?;
    if !(t >= 0.0 && t <= big_t) {
        return Err(Error::DomainError(format!(
            "need 0 <= t <= T, got t = {t}, T = {big_t}"
        )));
    }
    let step = default_step(model, z, param);
    let form = FzForm::preferred(model.kind);
    Ok(dynamic_sensitivity_series(spec, model, z, &[big_t - t], param, step, cfg, form)?.remove(0))
}

/// Drift, reversion and diffusion of the state under ℙ̃, over a generic scalar.
pub fn tilted_coefficients<S: Scalar>(
    kind: ModelKind,
    c: &Constants<S>,
    b: S,
    sigma: S,
) -> (S, S, S) {
    let s2 = sigma * sigma;
    match kind {
        ModelKind::ThreeHalves => (b, c.theta + s2 * c.eta, sigma),
        ModelKind::InverseBessel => (b - s2 * c.xi, c.theta + s2 * c.eta, sigma),
        ModelKind::FilteredOu => (b - c.theta_norm2 * c.xi, c.lambda_hat, c.theta_norm2.sqrt()),
    }
}

/// `∂f(t,z)/∂χ` for `χ ∈ {b, a}` by the likelihood-ratio method under ℙ̃.
///
/// Per path the sample is `(1/φ)(Z_t)·score + ∂_χ(1/φ)(Z_t)`, where the score
/// is `∫∂_χ(drift)/diffusion dB`. For the filtered OU model `a` also moves the
/// state volatility `‖θ‖`; that part is taken pathwise from the exact Gaussian
/// transition, `∂Z_t/∂‖θ‖ = (Z_t − E[Z_t])/‖θ‖`.
pub fn drift_sensitivity_lr(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t: f64,
    param: Param,
    cfg: &SimConfig,
) -> Result<McEstimate> {
    c.require()?;
    if !matches!(param, Param::B | Param::A) {
        return Err(Error::ConfigError(format!(
            "likelihood-ratio sensitivity is for b and a, not {param}"
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::DomainError(format!(
            "t must be non-negative, got {t}"
        )));
    }
    let tc = tangent(&c.market, model, param)?;
    let bd = if param == Param::B {
        Dual::var(model.b)
    } else {
        Dual::cst(model.b)
    };
    let (level, rev, vol) = tilted_coefficients(model.kind, &tc, bd, Dual::cst(model.sigma));
    let ep = Eigenpair {
        kind: model.kind,
        lambda: c.lambda,
        eta: c.eta,
        xi: c.xi,
    };
    // log φ is linear in (η, ξ)
    let dep = Eigenpair {
        kind: model.kind,
        lambda: 0.0,
        eta: tc.eta.d,
        xi: tc.xi.d,
    };
    let explicit = |x: f64| -dep.log_phi(x) * (-ep.log_phi(x)).exp();
    if t == 0.0 {
        return Ok(McEstimate::exact(explicit(z), cfg.n_paths, cfg.seed));
    }
    let dy = Dynamics {
        kind: model.kind,
        level: level.v,
        reversion: rev.v,
        sigma: vol.v,
    };
    let mut batch = simulate_dynamics(
        &dy,
        z,
        &cfg.recording(&[t]),
        &[Functional::ItoLevel, Functional::ItoReversion],
    )?;
    batch.measure = MeasureTag::PTilde;
    let t = batch.times[0];
    let il = batch.integral_column(Functional::ItoLevel, 0)?;
    let ir = batch.integral_column(Functional::ItoReversion, 0)?;
    let e = (-rev.v * t).exp();
    let mean_t = z * e + level.v / rev.v * (1.0 - e);
    let samples: Vec<f64> = (0..batch.n_paths)
        .map(|p| {
            let zt = batch.state(p, 0);
            let h = (-ep.log_phi(zt)).exp();
            let score = (level.d * il[p] - rev.d * ir[p]) / vol.v;
            let scale = if vol.d != 0.0 {
                -ep.dlog_phi(zt) * h * (zt - mean_t) / vol.v * vol.d
            } else {
                0.0
            };
            h * score + explicit(zt) + scale
        })
        .collect();
    Ok(McEstimate::from_samples(
        &samples,
        batch.antithetic,
        cfg.seed,
    ))
}

/// `∂f(t,z)/∂χ` by central differences of the ℙ̃ estimator with common random numbers.
pub fn f_sensitivity_fd(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    z: f64,
    t: f64,
    param: Param,
    step: f64,
    cfg: &SimConfig,
) -> Result<McEstimate> {
    let up = bump(spec, model, z, param, step)?;
    let dn = bump(spec, model, z, param, -step)?;
    let su = remainder_samples(&up.model, &up.c, up.z, &[t], cfg, FzForm::Tilted)?;
    let sd = remainder_samples(&dn.model, &dn.c, dn.z, &[t], cfg, FzForm::Tilted)?;
    check_crn(&su, &sd)?;
    let d: Vec<f64> = su.f[0]
        .iter()
        .zip(&sd.f[0])
        .map(|(a, b)| (a - b) / (2.0 * step))
        .collect();
    Ok(McEstimate::from_samples(&d, su.antithetic, cfg.seed))
}

/// Envelope `gap ≈ C(1+T)^d e^{−rate·T}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeFit {
    pub c: f64,
    pub degree: f64,
    pub rate: f64,
    /// Root-mean-square residual of `log gap`.
    pub residual: f64,
}

pub const ENVELOPE_DEGREES: [f64; 3] = [0.0, 0.5, 1.0];

fn check_series(series: &[(f64, f64)]) -> Result<()> {
    if series.len() < 5 {
        return Err(Error::DegenerateFit(format!(
            "need at least 5 points, got {}",
            series.len()
        )));
    }
    if series
        .iter()
        .any(|&(t, g)| !(g > 0.0 && g.is_finite() && t.is_finite()))
    {
        return Err(Error::DegenerateFit(
            "gaps must be positive and finite".into(),
        ));
    }
    Ok(())
}

fn rms(r: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = r.collect();
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn best(fits: impl Iterator<Item = EnvelopeFit>) -> EnvelopeFit {
    // a higher degree must beat a lower one by more than rounding
    fits.reduce(|a, b| {
        if b.residual < a.residual - 1e-12 {
            b
        } else {
            a
        }
    })
    .expect("non-empty")
}

/// Fits `C` and the polynomial degree for a given decay rate.
pub fn envelope_fit(series: &[(f64, f64)], rate: f64) -> Result<EnvelopeFit> {
    check_series(series)?;
    Ok(best(ENVELOPE_DEGREES.iter().map(|&d| {
        let y: Vec<f64> = series
            .iter()
            .map(|&(t, g)| g.ln() + rate * t - d * (1.0 + t).ln())
            .collect();
        let lc = y.iter().sum::<f64>() / y.len() as f64;
        EnvelopeFit {
            c: lc.exp(),
            degree: d,
            rate,
            residual: rms(y.iter().map(|v| v - lc)),
        }
    })))
}

/// Fits `C`, the degree and the rate.
pub fn free_rate_fit(series: &[(f64, f64)]) -> Result<EnvelopeFit> {
    check_series(series)?;
    let t: Vec<f64> = series.iter().map(|s| s.0).collect();
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DegenerateFit("horizons must be increasing".into()));
    }
    Ok(best(ENVELOPE_DEGREES.iter().map(|&d| {
        let y: Vec<f64> = series
            .iter()
            .map(|&(t, g)| g.ln() - d * (1.0 + t).ln())
            .collect();
        let (slope, lc, _) = ols(&t, &y);
        let residual = rms(t.iter().zip(&y).map(|(t, y)| y - slope * t - lc));
        EnvelopeFit {
            c: lc.exp(),
            degree: d,
            rate: -slope,
            residual,
        }
    })))
}

/// Decay rate of the dynamic-to-static sensitivity gap predicted by the theorems.
pub fn theory_rate(kind: ModelKind, c: &DerivedConstants, param: Param) -> f64 {
    match (kind, param) {
        (ModelKind::FilteredOu, Param::Z) => 2.0 * c.lambda_hat,
        _ => c.lambda_hat,
    }
}

/// Dynamic and static sensitivities to one parameter over a set of horizons at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub kind: ModelKind,
    pub parameter: Param,
    pub z: f64,
    /// Horizons `T` (evaluated at `t = 0`).
    pub t_grid: Vec<f64>,
    pub dynamic_sens: Vec<Vec<f64>>,
    pub dynamic_se: Vec<Vec<f64>>,
    pub static_sens: Vec<f64>,
    pub gap_norm: Vec<f64>,
    pub gap_se: Vec<f64>,
    pub theory_rate: f64,
    /// Degree and constant at the theory rate.
    pub envelope: EnvelopeFit,
    /// Degree, constant and rate all fitted.
    pub free_fit: EnvelopeFit,
}

impl SensitivityReport {
    /// `|fitted rate − theory rate| / theory rate`.
    pub fn rate_rel_error(&self) -> f64 {
        (self.free_fit.rate - self.theory_rate).abs() / self.theory_rate
    }

    /// Whether each gap is below the previous one up to `k` combined standard errors.
    pub fn decreasing(&self, k: f64) -> bool {
        self.gap_norm
            .windows(2)
            .zip(self.gap_se.windows(2))
            .all(|(g, s)| g[1] <= g[0] + k * s[0].hypot(s[1]))
    }
}

pub fn sensitivity_report(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    z: f64,
    param: Param,
    horizons: &[f64],
    cfg: &SimConfig,
) -> Result<SensitivityReport> {
    let c = derive_constants(spec, model)?;
    let static_sens = static_sensitivity(spec, model, &c, z, param)?;
    let step = default_step(model, z, param);
    let dyn_ = dynamic_sensitivity_series(
        spec,
        model,
        z,
        horizons,
        param,
        step,
        cfg,
        FzForm::preferred(model.kind),
    )?;
    let mut gap_norm = Vec::new();
    let mut gap_se = Vec::new();
    for d in &dyn_ {
        let diff = &d.intertemporal;
        let g = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        let se = if g > 0.0 {
            diff.iter()
                .zip(&d.std_error)
                .map(|(x, s)| (x * s).powi(2))
                .sum::<f64>()
                .sqrt()
                / g
        } else {
            d.std_error.iter().cloned().fold(0.0, f64::max)
        };
        gap_norm.push(g);
        gap_se.push(se);
    }
    let t_grid: Vec<f64> = dyn_.iter().map(|d| d.horizon).collect();
    let series: Vec<(f64, f64)> = t_grid
        .iter()
        .copied()
        .zip(gap_norm.iter().copied())
        .collect();
    let rate = theory_rate(model.kind, &c, param);
    Ok(SensitivityReport {
        kind: model.kind,
        parameter: param,
        z,
        envelope: envelope_fit(&series, rate)?,
        free_fit: free_rate_fit(&series)?,
        t_grid,
        dynamic_sens: dyn_.iter().map(|d| d.value.clone()).collect(),
        dynamic_se: dyn_.into_iter().map(|d| d.std_error).collect(),
        static_sens,
        gap_norm,
        gap_se,
        theory_rate: rate,
    })
}
