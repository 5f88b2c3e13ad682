//! Static and dynamic optimal portfolios and their fund decomposition.
//!
//! Every model's portfolio has the shape
//!
//! ```text
//! π = myopic(z) + δ/(1−p) · hedge(z) · (φ′/φ(z) + f_z/f)
//! ```
//!
//! with `myopic = m(z)(Σ′)⁻¹μ/(1−p)` and `hedge = σz(Σ′)⁻¹ρ` (3/2, inverse
//! Bessel) or `(Σ′)⁻¹θ` (filtered OU). The `φ′/φ` part is the static hedge and
//! the `f_z/f` part the intertemporal hedge that decays with the horizon.

use crate::error::{Error, Result};
use crate::feynman_kac::{estimate_remainder, FzForm, RemainderPoint};
use crate::market::PreferenceMarketSpec;
use crate::model::{Constants, DerivedConstants, ModelKind, StateModelSpec};
use crate::scalar::Scalar;
use crate::sde::SimConfig;
use crate::stats::McEstimate;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// State dependence of the myopic and hedging demands.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MyopicScaling {
    /// Excess returns as in the model statements.
    #[default]
    Linear,
    /// 3/2 variant with excess return `Σμ√z` and asset volatility `Σ√z`: every
    /// demand picks up a factor `z^{-1/2}`.
    Sqrt,
}

impl MyopicScaling {
    pub fn factor(self, kind: ModelKind, z: f64) -> Result<f64> {
        match (self, kind) {
            (MyopicScaling::Linear, _) => Ok(1.0),
            (MyopicScaling::Sqrt, ModelKind::ThreeHalves) => Ok(z.powf(-0.5)),
            (MyopicScaling::Sqrt, _) => Err(Error::ConfigError(format!(
                "sqrt myopic scaling applies to the 3/2 model only, not {kind}"
            ))),
        }
    }
}

impl fmt::Display for MyopicScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MyopicScaling::Linear => "linear",
            MyopicScaling::Sqrt => "sqrt",
        })
    }
}

impl FromStr for MyopicScaling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(MyopicScaling::Linear),
            "sqrt" => Ok(MyopicScaling::Sqrt),
            _ => Err(Error::ConfigError(format!(
                "unknown myopic scaling `{s}` (linear, sqrt)"
            ))),
        }
    }
}

/// Coefficients `(c_μ, c_ρ)` of the static portfolio `c_μ(Σ′)⁻¹μ + c_ρ(Σ′)⁻¹ρ`.
pub fn static_coefficients<S: Scalar>(
    kind: ModelKind,
    c: &Constants<S>,
    sigma: S,
    p: f64,
    z: S,
) -> (S, S) {
    let w = 1.0 / (1.0 - p);
    let d = c.delta * w;
    match kind {
        ModelKind::ThreeHalves => (S::cst(w), -(c.eta * sigma) * d),
        ModelKind::InverseBessel => (S::cst(w), -((c.eta + c.xi / z) * sigma) * d),
        ModelKind::FilteredOu => {
            let slope = (c.eta * z * 2.0 + c.xi) * d;
            (z * w - slope * c.p0, -(slope * sigma))
        }
    }
}

pub fn constants_of(c: &DerivedConstants) -> Constants<f64> {
    Constants {
        q: c.q,
        delta: c.delta,
        theta: c.theta,
        kappa: c.kappa,
        eta: c.eta,
        xi: c.xi,
        zeta: c.zeta,
        lambda: c.lambda,
        lambda_hat: c.lambda_hat,
        p0: c.p0.unwrap_or(0.0),
        theta_mu: c.theta_mu,
        theta_norm2: c.theta_norm2,
    }
}

fn combine(dm: &[f64], dr: &[f64], cm: f64, cr: f64) -> Vec<f64> {
    dm.iter().zip(dr).map(|(m, r)| cm * m + cr * r).collect()
}

fn check_state(kind: ModelKind, z: f64) -> Result<()> {
    if !z.is_finite() || (kind.positive_state() && !(z > 0.0)) {
        return Err(Error::DomainError(format!(
            "state {z} outside the state space of {kind}"
        )));
    }
    Ok(())
}

/// Static optimal portfolio `π̂_∞(z)`.
pub fn static_portfolio(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
) -> Result<Vec<f64>> {
    c.require()?;
    check_state(model.kind, z)?;
    let (cm, cr) = static_coefficients(model.kind, &constants_of(c), model.sigma, spec.p, z);
    Ok(combine(
        &spec.myopic_direction(),
        &spec.rho_direction(),
        cm,
        cr,
    ))
}

/// Myopic demand `m(z)(Σ′)⁻¹μ/(1−p)`.
pub fn myopic_portfolio(spec: &PreferenceMarketSpec, kind: ModelKind, z: f64) -> Vec<f64> {
    let m = match kind {
        ModelKind::FilteredOu => z,
        _ => 1.0,
    };
    spec.myopic_direction()
        .iter()
        .map(|x| m * x / (1.0 - spec.p))
        .collect()
}

/// Hedging direction: `σz(Σ′)⁻¹ρ`, or `(Σ′)⁻¹θ` for the filtered OU model.
pub fn hedge_direction(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
) -> Vec<f64> {
    let dr = spec.rho_direction();
    match model.kind {
        ModelKind::FilteredOu => combine(
            &spec.myopic_direction(),
            &dr,
            c.p0.unwrap_or(0.0),
            model.sigma,
        ),
        _ => dr.iter().map(|x| model.sigma * z * x).collect(),
    }
}

/// Dynamic portfolio split into its funds at one state and horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioDecomposition {
    pub kind: ModelKind,
    pub z: f64,
    /// Remaining horizon `T − t`.
    pub horizon: f64,
    pub myopic: Vec<f64>,
    /// `δ/(1−p)·hedge·φ′/φ`.
    pub static_hedge: Vec<f64>,
    pub hedge_direction: Vec<f64>,
    /// `f_z/f` at the query point.
    pub intertemporal_weight: McEstimate,
    /// `δ/(1−p)·hedge·f_z/f`.
    pub intertemporal: Vec<f64>,
    pub total_static: Vec<f64>,
    pub total_dynamic: Vec<f64>,
    /// Per-component error of `total_dynamic` propagated from the weight.
    pub total_dynamic_se: Vec<f64>,
    /// `myopic + δ/(1−p)·hedge·u_z/u` with `u_z/u = φ′/φ + f_z/f`.
    pub via_log_u: Vec<f64>,
    pub f: McEstimate,
    pub f_z: McEstimate,
}

impl PortfolioDecomposition {
    /// Multiplies every demand by `factor` (see [`MyopicScaling`]).
    pub fn rescaled(mut self, factor: f64) -> Self {
        for v in [
            &mut self.myopic,
            &mut self.static_hedge,
            &mut self.hedge_direction,
            &mut self.intertemporal,
            &mut self.total_static,
            &mut self.total_dynamic,
            &mut self.via_log_u,
        ] {
            v.iter_mut().for_each(|x| *x *= factor);
        }
        self.total_dynamic_se
            .iter_mut()
            .for_each(|x| *x *= factor.abs());
        self
    }
}

/// Assembles the decomposition from given remainder estimates.
pub fn assemble(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    rem: &RemainderPoint,
) -> Result<PortfolioDecomposition> {
    let ratio = rem.ratio;
    c.require()?;
    check_state(model.kind, z)?;
    let k = c.delta / (1.0 - spec.p);
    let myopic = myopic_portfolio(spec, model.kind, z);
    let hedge = hedge_direction(spec, model, c, z);
    let dlog_phi = crate::eigen::eigenpair(model, c)?.dlog_phi(z);
    let static_hedge: Vec<f64> = hedge.iter().map(|h| k * h * dlog_phi).collect();
    let intertemporal: Vec<f64> = hedge.iter().map(|h| k * h * ratio.value).collect();
    let total_static: Vec<f64> = myopic
        .iter()
        .zip(&static_hedge)
        .map(|(m, s)| m + s)
        .collect();
    let total_dynamic: Vec<f64> = total_static
        .iter()
        .zip(&intertemporal)
        .map(|(s, i)| s + i)
        .collect();
    let log_u = dlog_phi + ratio.value;
    let via_log_u = myopic
        .iter()
        .zip(&hedge)
        .map(|(m, h)| m + k * h * log_u)
        .collect();
    Ok(PortfolioDecomposition {
        kind: model.kind,
        z,
        horizon: rem.horizon,
        total_dynamic_se: hedge
            .iter()
            .map(|h| (k * h).abs() * ratio.std_error)
            .collect(),
        myopic,
        static_hedge,
        hedge_direction: hedge,
        intertemporal_weight: ratio,
        intertemporal,
        total_static,
        total_dynamic,
        via_log_u,
        f: rem.f,
        f_z: rem.f_z,
    })
}

/// Dynamic portfolio `π̂_T(t, z)` with the remainder estimated by Monte Carlo.
pub fn dynamic_portfolio(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    t: f64,
    big_t: f64,
    cfg: &SimConfig,
) -> Result<PortfolioDecomposition> {
    if !(t >= 0.0 && t < big_t) {
        return Err(Error::DomainError(format!(
            "need 0 <= t < T, got t = {t}, T = {big_t}"
        )));
    }
    Ok(dynamic_portfolio_horizons(spec, model, c, z, &[big_t - t], cfg, FzForm::Tilted)?.remove(0))
}

/// Dynamic portfolios at several remaining horizons from one set of paths.
pub fn dynamic_portfolio_horizons(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
    horizons: &[f64],
    cfg: &SimConfig,
    form: FzForm,
) -> Result<Vec<PortfolioDecomposition>> {
    c.require()?;
    check_state(model.kind, z)?;
    let r = estimate_remainder(model, c, z, horizons, cfg, form)?;
    (0..horizons.len())
        .map(|k| assemble(spec, model, c, z, &r.point(k)))
        .collect()
}

/// How a fund's holding depends on the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StateFactor {
    One,
    Z,
    InvZ,
}

impl StateFactor {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            StateFactor::One => 1.0,
            StateFactor::Z => z,
            StateFactor::InvZ => 1.0 / z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FundRole {
    Safe,
    Myopic,
    StaticHedge,
    /// Weight is multiplied by `f_z/f` at run time.
    Intertemporal,
}

/// One mutual fund: holding `weight · factor(z) · direction`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fund {
    pub name: &'static str,
    pub role: FundRole,
    /// Depends on preferences, not on the state.
    pub weight: f64,
    pub factor: StateFactor,
    /// Depends on the state model, not on preferences. Empty for the safe asset.
    pub direction: Vec<f64>,
}

impl Fund {
    pub fn holding(&self, z: f64) -> Vec<f64> {
        let s = self.weight * self.factor.eval(z);
        self.direction.iter().map(|d| s * d).collect()
    }
}

/// Named funds of the dynamic fund separation.
///
/// The static portfolio is the sum of the non-intertemporal holdings; the
/// dynamic one adds the intertemporal fund scaled by `f_z/f`.
pub fn fund_table(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    c: &DerivedConstants,
) -> Vec<Fund> {
    let w = 1.0 / (1.0 - spec.p);
    let d = c.delta * w;
    let dm = spec.myopic_direction();
    let dr: Vec<f64> = spec
        .rho_direction()
        .iter()
        .map(|x| model.sigma * x)
        .collect();
    let fund = |name, role, weight, factor, direction: &Vec<f64>| Fund {
        name,
        role,
        weight,
        factor,
        direction: direction.clone(),
    };
    let safe = fund("safe", FundRole::Safe, 1.0, StateFactor::One, &Vec::new());
    match model.kind {
        ModelKind::ThreeHalves => vec![
            safe,
            fund("myopic", FundRole::Myopic, w, StateFactor::One, &dm),
            fund(
                "static_hedge",
                FundRole::StaticHedge,
                -d * c.eta,
                StateFactor::One,
                &dr,
            ),
            fund(
                "intertemporal",
                FundRole::Intertemporal,
                d,
                StateFactor::Z,
                &dr,
            ),
        ],
        ModelKind::InverseBessel => vec![
            safe,
            fund("myopic", FundRole::Myopic, w, StateFactor::One, &dm),
            fund(
                "static_hedge",
                FundRole::StaticHedge,
                -d * c.eta,
                StateFactor::One,
                &dr,
            ),
            fund(
                "static_hedge_inv_z",
                FundRole::StaticHedge,
                -d * c.xi,
                StateFactor::InvZ,
                &dr,
            ),
            fund(
                "intertemporal",
                FundRole::Intertemporal,
                d,
                StateFactor::Z,
                &dr,
            ),
        ],
        ModelKind::FilteredOu => {
            let dt = combine(&dm, &spec.rho_direction(), c.p0.unwrap_or(0.0), model.sigma);
            vec![
                safe,
                fund("myopic_z", FundRole::Myopic, w, StateFactor::Z, &dm),
                fund(
                    "static_hedge_z",
                    FundRole::StaticHedge,
                    -2.0 * d * c.eta,
                    StateFactor::Z,
                    &dt,
                ),
                fund(
                    "static_hedge",
                    FundRole::StaticHedge,
                    -d * c.xi,
                    StateFactor::One,
                    &dt,
                ),
                fund(
                    "intertemporal",
                    FundRole::Intertemporal,
                    d,
                    StateFactor::One,
                    &dt,
                ),
            ]
        }
    }
}

/// Static portfolio rebuilt from the fund table.
pub fn static_from_funds(funds: &[Fund], z: f64) -> Vec<f64> {
    let n = funds.iter().map(|f| f.direction.len()).max().unwrap_or(0);
    let mut out = vec![0.0; n];
    for f in funds
        .iter()
        .filter(|f| matches!(f.role, FundRole::Myopic | FundRole::StaticHedge))
    {
        for (o, h) in out.iter_mut().zip(f.holding(z)) {
            *o += h;
        }
    }
    out
}

/// Euclidean norm of a difference, used for convergence gaps.
pub fn gap_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
