//! Monte Carlo estimators of `u`, the remainder `f` and its derivative `f_z`,
//! plus closed forms used as oracles.

use crate::dynamics::{dynamics, MeasureTag};
use crate::eigen::Eigenpair;
use crate::error::{Error, Result};
use crate::model::{DerivedConstants, ModelKind, StateModelSpec};
use crate::quadrature::integrate;
use crate::sde::{simulate, Functional, PathBatch, SimConfig};
use crate::stats::{mean_se, ratio_se, McEstimate};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Which representation of `f_z` to evaluate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FzForm {
    /// Flow-derivative representation under ℙ̃ with its path-dependent discount.
    #[default]
    Tilted,
    /// Second change of measure to ℙ̂, which moves the exponential decay into a
    /// deterministic factor (3/2 and inverse Bessel).
    Hat,
}

impl FzForm {
    /// ℙ̂ where it exists (its integrand has no path-dependent discount), ℙ̃ otherwise.
    pub fn preferred(kind: ModelKind) -> FzForm {
        match kind {
            ModelKind::FilteredOu => FzForm::Tilted,
            _ => FzForm::Hat,
        }
    }
}

/// Seed offset for the independent ℙ̂ run.
const HAT_SEED_OFFSET: u64 = 0x5eed_0f_ba5e;

fn eig(c: &DerivedConstants) -> Eigenpair {
    Eigenpair {
        kind: c.kind,
        lambda: c.lambda,
        eta: c.eta,
        xi: c.xi,
    }
}

fn only_zero(times: &[f64]) -> bool {
    times.iter().all(|&t| t == 0.0)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if times.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::DomainError("times must be non-negative".into()));
    }
    Ok(())
}

/// `u(t,z) = E^ℙ[exp(−∫V(Z_s)ds)]` at each of `times`.
pub fn estimate_u_series(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<McEstimate>> {
    check_times(times)?;
    if only_zero(times) {
        return Ok(times
            .iter()
            .map(|_| McEstimate::exact(1.0, cfg.n_paths, cfg.seed))
            .collect());
    }
    let g = match model.kind {
        ModelKind::ThreeHalves => Functional::IntZ,
        _ => Functional::IntZ2,
    };
    let batch = simulate(model, c, MeasureTag::P, z, &cfg.recording(times), &[g])?;
    let m = &c.market;
    (0..times.len())
        .map(|k| {
            let t = batch.times[k];
            let ints = batch.integral_column(g, k)?;
            let vals: Vec<f64> = ints
                .iter()
                .map(|i| ((m.p * m.r * t - 0.5 * c.q * m.mm * i) / c.delta).exp())
                .collect();
            Ok(McEstimate::from_samples(&vals, batch.antithetic, cfg.seed))
        })
        .collect()
}

pub fn estimate_u(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<McEstimate> {
    Ok(estimate_u_series(model, c, z, &[t], cfg)?[0])
}

/// Per-path `1/φ(Z_t)` at record index `k`.
fn f_samples(c: &DerivedConstants, batch: &PathBatch, k: usize) -> Vec<f64> {
    let ep = eig(c);
    (0..batch.n_paths)
        .map(|p| (-ep.log_phi(batch.state(p, k))).exp())
        .collect()
}

/// Per-path `(1/φ)′(Z_t)·∂Z_t/∂z` at record index `k` (ℙ̃ representation).
fn fz_samples(c: &DerivedConstants, batch: &PathBatch, k: usize) -> Result<Vec<f64>> {
    let ep = eig(c);
    let flow = batch.flow_derivative(k)?;
    Ok((0..batch.n_paths)
        .map(|p| {
            let zt = batch.state(p, k);
            -ep.dlog_phi(zt) * (-ep.log_phi(zt)).exp() * flow[p]
        })
        .collect())
}

fn tilted_functionals(kind: ModelKind) -> Vec<Functional> {
    match kind {
        ModelKind::ThreeHalves => vec![Functional::IntZ],
        ModelKind::InverseBessel => vec![Functional::IntZ2],
        ModelKind::FilteredOu => vec![],
    }
}

/// Simulates ℙ̃ paths recording `times`, with the functionals `f_z` needs.
pub fn tilted_batch(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    times: &[f64],
    cfg: &SimConfig,
) -> Result<PathBatch> {
    c.require()?;
    simulate(
        model,
        c,
        MeasureTag::PTilde,
        z,
        &cfg.recording(times),
        &tilted_functionals(model.kind),
    )
}

/// `f(t,z) = E^ℙ̃[1/φ(Z_t)]` at each of `times`.
pub fn estimate_f_series(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<McEstimate>> {
    check_times(times)?;
    c.require()?;
    if only_zero(times) {
        let v = (-eig(c).log_phi(z)).exp();
        return Ok(times
            .iter()
            .map(|_| McEstimate::exact(v, cfg.n_paths, cfg.seed))
            .collect());
    }
    let batch = simulate(model, c, MeasureTag::PTilde, z, &cfg.recording(times), &[])?;
    Ok((0..times.len())
        .map(|k| McEstimate::from_samples(&f_samples(c, &batch, k), batch.antithetic, cfg.seed))
        .collect())
}

pub fn estimate_f(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<McEstimate> {
    Ok(estimate_f_series(model, c, z, &[t], cfg)?[0])
}

/// Per-path samples of the ℙ̂ representation (prefactor included) at index `k`.
fn fz_hat_samples(
    model: &StateModelSpec,
    c: &DerivedConstants,
    batch: &PathBatch,
    k: usize,
) -> Result<Vec<f64>> {
    let t = batch.times[k];
    let z = batch.z0;
    let (eta, xi, zeta) = (c.eta, c.xi, c.zeta);
    match model.kind {
        ModelKind::ThreeHalves => {
            let pre = eta * (-model.b * t).exp() / (z * z);
            Ok((0..batch.n_paths)
                .map(|p| pre * batch.state(p, k).powf(eta + 1.0))
                .collect())
        }
        ModelKind::InverseBessel => {
            let pre = (-c.lambda_hat * t + zeta / z).exp() / (z * z * z);
            Ok((0..batch.n_paths)
                .map(|p| {
                    let zt = batch.state(p, k);
                    pre * (eta * zt.powf(eta + 2.0) + xi * zt.powf(eta + 1.0))
                        * (-(xi + zeta) / zt).exp()
                })
                .collect())
        }
        ModelKind::FilteredOu => Err(Error::UnsupportedMeasure("P^ for filtered-ou".into())),
    }
}

/// `f_z(t,z)` at each of `times`, in the requested representation.
pub fn estimate_f_z_series(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    times: &[f64],
    cfg: &SimConfig,
    form: FzForm,
) -> Result<Vec<McEstimate>> {
    check_times(times)?;
    c.require()?;
    let ep = eig(c);
    if only_zero(times) {
        let v = -ep.dlog_phi(z) * (-ep.log_phi(z)).exp();
        return Ok(times
            .iter()
            .map(|_| McEstimate::exact(v, cfg.n_paths, cfg.seed))
            .collect());
    }
    match form {
        FzForm::Tilted => {
            let batch = tilted_batch(model, c, z, times, cfg)?;
            (0..times.len())
                .map(|k| {
                    Ok(McEstimate::from_samples(
                        &fz_samples(c, &batch, k)?,
                        batch.antithetic,
                        cfg.seed,
                    ))
                })
                .collect()
        }
        FzForm::Hat => {
            let batch = hat_batch(model, c, z, times, cfg)?;
            (0..times.len())
                .map(|k| {
                    Ok(McEstimate::from_samples(
                        &fz_hat_samples(model, c, &batch, k)?,
                        batch.antithetic,
                        batch.seed,
                    ))
                })
                .collect()
        }
    }
}

fn hat_batch(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    times: &[f64],
    cfg: &SimConfig,
) -> Result<PathBatch> {
    let hat_cfg = SimConfig {
        seed: cfg.seed.wrapping_add(HAT_SEED_OFFSET),
        ..cfg.recording(times)
    };
    simulate(model, c, MeasureTag::PHat, z, &hat_cfg, &[])
}

pub fn estimate_f_z(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t: f64,
    cfg: &SimConfig,
    form: FzForm,
) -> Result<McEstimate> {
    Ok(estimate_f_z_series(model, c, z, &[t], cfg, form)?[0])
}

/// `f`, `f_z` and the intertemporal weight `f_z/f` on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Remainder {
    pub times: Vec<f64>,
    pub f: Vec<McEstimate>,
    pub f_z: Vec<McEstimate>,
    pub ratio: Vec<McEstimate>,
    /// Digest of the random draws consumed, for common-random-number checks.
    pub checksum: u64,
}

impl Remainder {
    pub fn point(&self, k: usize) -> RemainderPoint {
        RemainderPoint {
            horizon: self.times[k],
            f: self.f[k],
            f_z: self.f_z[k],
            ratio: self.ratio[k],
        }
    }
}

/// `f`, `f_z` and `f_z/f` at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemainderPoint {
    pub horizon: f64,
    pub f: McEstimate,
    pub f_z: McEstimate,
    pub ratio: McEstimate,
}

impl RemainderPoint {
    /// Exact values at horizon zero, where `f = 1/φ` and `f_z = (1/φ)′`.
    pub fn at_maturity(c: &DerivedConstants, z: f64) -> RemainderPoint {
        let ep = eig(c);
        let f = (-ep.log_phi(z)).exp();
        let f_z = -ep.dlog_phi(z) * f;
        RemainderPoint {
            horizon: 0.0,
            f: McEstimate::exact(f, 0, 0),
            f_z: McEstimate::exact(f_z, 0, 0),
            ratio: McEstimate::exact(f_z / f, 0, 0),
        }
    }
}

/// Per-path samples of `f` and `f_z`, indexed `[k][path]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RemainderSamples {
    pub times: Vec<f64>,
    pub f: Vec<Vec<f64>>,
    pub f_z: Vec<Vec<f64>>,
    /// `f_z` comes from the independent ℙ̂ run rather than the `f` paths.
    pub independent: bool,
    pub antithetic: bool,
    pub n_paths: usize,
    pub seed: u64,
    /// Digest of the random draws consumed, for common-random-number checks.
    pub checksum: u64,
}

pub fn remainder_samples(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    times: &[f64],
    cfg: &SimConfig,
    form: FzForm,
) -> Result<RemainderSamples> {
    check_times(times)?;
    c.require()?;
    let batch = tilted_batch(model, c, z, times, cfg)?;
    let hat = match form {
        FzForm::Hat => Some(hat_batch(model, c, z, times, cfg)?),
        FzForm::Tilted => None,
    };
    let mut f = Vec::with_capacity(times.len());
    let mut f_z = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        f.push(f_samples(c, &batch, k));
        f_z.push(match &hat {
            None => fz_samples(c, &batch, k)?,
            Some(h) => fz_hat_samples(model, c, h, k)?,
        });
    }
    Ok(RemainderSamples {
        times: batch.times.clone(),
        f,
        f_z,
        independent: hat.is_some(),
        antithetic: batch.antithetic,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        checksum: batch.checksum ^ hat.as_ref().map_or(0, |h| h.checksum.rotate_left(1)),
    })
}

impl RemainderSamples {
    pub fn summarize(&self) -> Remainder {
        let mut out = Remainder {
            times: self.times.clone(),
            f: Vec::new(),
            f_z: Vec::new(),
            ratio: Vec::new(),
            checksum: self.checksum,
        };
        let (n, seed) = (self.n_paths, self.seed);
        for (fs, gs) in self.f.iter().zip(&self.f_z) {
            let f = McEstimate::from_samples(fs, self.antithetic, seed);
            let fz_seed = if self.independent {
                seed.wrapping_add(HAT_SEED_OFFSET)
            } else {
                seed
            };
            let fz = McEstimate::from_samples(gs, self.antithetic, fz_seed);
            let ratio = if self.independent {
                let r = fz.value / f.value;
                let se = r.abs()
                    * ((fz.std_error / fz.value).powi(2) + (f.std_error / f.value).powi(2)).sqrt();
                McEstimate {
                    value: r,
                    std_error: se,
                    n_paths: n,
                    seed,
                }
            } else {
                let (r, se) = ratio_se(gs, fs, self.antithetic);
                McEstimate {
                    value: r,
                    std_error: se,
                    n_paths: n,
                    seed,
                }
            };
            out.f.push(f);
            out.f_z.push(fz);
            out.ratio.push(ratio);
        }
        out
    }

    /// Per-path linearization of `f_z/f` at index `k`, as `(from f paths, from f_z paths)`.
    ///
    /// The ratio error is the error of the mean of these. When `f_z` shares the
    /// `f` paths the two parts are summed path by path by the caller.
    pub fn ratio_influence(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let (mf, _) = mean_se(&self.f[k], self.antithetic);
        let (mg, _) = mean_se(&self.f_z[k], self.antithetic);
        let r = mg / mf;
        (
            self.f[k].iter().map(|x| -r * x / mf).collect(),
            self.f_z[k].iter().map(|x| x / mf).collect(),
        )
    }
}

/// Estimates `f`, `f_z` and `f_z/f` together.
///
/// With the ℙ̃ form all three come from one set of paths and the ratio error
/// accounts for their correlation; with the ℙ̂ form `f_z` comes from an
/// independent run.
pub fn estimate_remainder(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    times: &[f64],
    cfg: &SimConfig,
    form: FzForm,
) -> Result<Remainder> {
    Ok(remainder_samples(model, c, z, times, cfg, form)?.summarize())
}

/// `E[exp(ηX² + ξX)]` for `X ~ N(m, s2)`.
pub fn gaussian_quad_exp(eta: f64, xi: f64, m: f64, s2: f64) -> Result<f64> {
    let d = 1.0 - 2.0 * eta * s2;
    if !(d > 0.0) {
        return Err(Error::DomainError(format!(
            "1 - 2*eta*s^2 = {d} is not positive"
        )));
    }
    Ok(d.powf(-0.5) * ((eta * m * m + xi * m + 0.5 * xi * xi * s2) / d).exp())
}

/// Mean and variance of the tilted OU state at time `t` from `z`.
pub fn tilted_ou_moments(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t: f64,
) -> Result<(f64, f64)> {
    if model.kind != ModelKind::FilteredOu {
        return Err(Error::DomainError(
            "Gaussian oracle applies to the filtered OU model only".into(),
        ));
    }
    let dy = dynamics(model, c, MeasureTag::PTilde)?;
    let e = (-dy.reversion * t).exp();
    let mean = e * z + (1.0 - e) * dy.level / dy.reversion;
    let var = dy.sigma * dy.sigma * (-(-2.0 * dy.reversion * t).exp_m1()) / (2.0 * dy.reversion);
    Ok((mean, var))
}

/// Closed-form `f(t,z)` for the filtered OU model.
pub fn gaussian_f_oracle(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t: f64,
) -> Result<f64> {
    let (m, s2) = tilted_ou_moments(model, c, z, t)?;
    gaussian_quad_exp(c.eta, c.xi, m, s2)
}

/// Closed-form `f_z(t,z)` for the filtered OU model.
pub fn gaussian_f_z_oracle(
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t: f64,
) -> Result<f64> {
    let (m, s2) = tilted_ou_moments(model, c, z, t)?;
    let g = gaussian_quad_exp(c.eta, c.xi, m, s2)?;
    Ok((-c.lambda_hat * t).exp() * g * (2.0 * c.eta * m + c.xi) / (1.0 - 2.0 * c.eta * s2))
}

/// `E[Y_t^ν]` for the 3/2 process `dY = (b − aY)Y dt + σY^{3/2} dB`, `Y_0 = y0`.
///
/// Evaluates `α^ν e^{−β}/Γ(ν) ∫₀¹ e^{βx} x^{κ−ν}(1−x)^{ν−1} dx` split at `x = 1/2`.
/// The upper half uses `x = 1 − u^{1/ν}`, the lower half `x = v^{1/(κ−ν+1)}`,
/// so both endpoint singularities become bounded integrands.
pub fn estimate_moment_32(b: f64, a: f64, sigma: f64, y0: f64, nu: f64, t: f64) -> Result<f64> {
    let s2 = sigma * sigma;
    let kappa = 2.0 * a / s2 + 1.0;
    if !(nu > 0.0 && nu < kappa + 1.0) {
        return Err(Error::ParameterOutOfRange(format!(
            "nu = {nu} must lie in (0, {})",
            kappa + 1.0
        )));
    }
    if !(y0 > 0.0 && t >= 0.0 && b > 0.0) {
        return Err(Error::ParameterOutOfRange(
            "need y0 > 0, t >= 0, b > 0".into(),
        ));
    }
    if t == 0.0 {
        return Ok(y0.powf(nu));
    }
    let alpha = 2.0 * b / (s2 * -(-b * t).exp_m1());
    let beta = alpha * (-b * t).exp() / y0;
    let c = kappa - nu;
    let (inv_nu, inv_c1) = (1.0 / nu, 1.0 / (c + 1.0));
    // e^{−β(1−x)} keeps the integrand bounded by one for large β
    let upper_f = |u: f64| {
        let w = u.powf(inv_nu);
        (-beta * w).exp() * (1.0 - w).powf(c)
    };
    // break where e^{−βw} has decayed so short horizons do not hide the mass
    let brk = (50.0 / beta).min(0.5).powf(nu);
    let upper = integrate(upper_f, 0.0, brk, 0.0, 1e-13)?.value
        + integrate(upper_f, brk, 0.5f64.powf(nu), 0.0, 1e-13)?.value;
    let lower = integrate(
        |v: f64| {
            let x = v.powf(inv_c1);
            (-beta * (1.0 - x)).exp() * (1.0 - x).powf(nu - 1.0)
        },
        0.0,
        0.5f64.powf(c + 1.0),
        0.0,
        1e-13,
    )?;
    let total = upper * inv_nu + lower.value * inv_c1;
    Ok((nu * alpha.ln() - ln_gamma(nu)).exp() * total)
}
