//! State-variable models and their derived constants.

use crate::error::{Error, Result};
use crate::market::{MarketScalars, PreferenceMarketSpec};
use crate::scalar::{Dual, Scalar};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    /// `dY = (b − aY)Y dt + σY^{3/2} dB`
    ThreeHalves,
    /// `dY = (b − aY)Y² dt + σY² dB`
    InverseBessel,
    /// `dY = (b − aY) dt + σ dB`, observed only through prices.
    FilteredOu,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::ThreeHalves,
        ModelKind::InverseBessel,
        ModelKind::FilteredOu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ThreeHalves => "three-halves",
            ModelKind::InverseBessel => "inverse-bessel",
            ModelKind::FilteredOu => "filtered-ou",
        }
    }

    /// Drift is `(level − reversion·z)·z^k`.
    pub fn drift_power(self) -> f64 {
        match self {
            ModelKind::ThreeHalves => 1.0,
            ModelKind::InverseBessel => 2.0,
            ModelKind::FilteredOu => 0.0,
        }
    }

    /// Diffusion is `σ·z^m`.
    pub fn diffusion_power(self) -> f64 {
        match self {
            ModelKind::ThreeHalves => 1.5,
            ModelKind::InverseBessel => 2.0,
            ModelKind::FilteredOu => 0.0,
        }
    }

    /// The state function `g` in the potential: `z` for 3/2, `z²` otherwise.
    pub fn g(self, z: f64) -> f64 {
        match self {
            ModelKind::ThreeHalves => z,
            _ => z * z,
        }
    }

    pub fn positive_state(self) -> bool {
        !matches!(self, ModelKind::FilteredOu)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three-halves" | "3/2" | "ThreeHalves" => Ok(ModelKind::ThreeHalves),
            "inverse-bessel" | "invB" | "InverseBessel" => Ok(ModelKind::InverseBessel),
            "filtered-ou" | "fou" | "FilteredOu" => Ok(ModelKind::FilteredOu),
            other => Err(Error::InvalidSpec(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateModelSpec {
    pub kind: ModelKind,
    pub b: f64,
    pub a: f64,
    pub sigma: f64,
}

impl StateModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "b must be positive, got {}",
                self.b
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !self.a.is_finite() {
            return Err(Error::InvalidSpec("a must be finite".into()));
        }
        match self.kind {
            ModelKind::FilteredOu if self.a <= 0.0 => Err(Error::InvalidSpec(format!(
                "filtered OU needs a > 0, got {}",
                self.a
            ))),
            ModelKind::ThreeHalves | ModelKind::InverseBessel
                if self.a <= -0.5 * self.sigma * self.sigma =>
            {
                Err(Error::InvalidSpec(format!(
                    "a must exceed -sigma^2/2 = {}",
                    -0.5 * self.sigma * self.sigma
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn with_param(&self, param: Param, value: f64) -> StateModelSpec {
        let mut m = *self;
        match param {
            Param::B => m.b = value,
            Param::A => m.a = value,
            Param::Sigma => m.sigma = value,
            Param::Z => {}
        }
        m
    }

    pub fn param(&self, param: Param) -> f64 {
        match param {
            Param::B => self.b,
            Param::A => self.a,
            Param::Sigma => self.sigma,
            Param::Z => f64::NAN,
        }
    }
}

/// Perturbation directions of the stability program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Param {
    Z,
    B,
    A,
    Sigma,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::Z, Param::B, Param::A, Param::Sigma];

    pub fn name(self) -> &'static str {
        match self {
            Param::Z => "z",
            Param::B => "b",
            Param::A => "a",
            Param::Sigma => "sigma",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Param {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z" => Ok(Param::Z),
            "b" => Ok(Param::B),
            "a" => Ok(Param::A),
            "sigma" => Ok(Param::Sigma),
            other => Err(Error::InvalidSpec(format!("unknown parameter `{other}`"))),
        }
    }
}

/// Closed-form constants over a generic scalar.
///
/// For the 3/2 and inverse Bessel models `theta` is the scalar `a + qσρᵀμ` and
/// `kappa == theta`. For the filtered OU model the vector `θ = P₀μ + σρ` enters
/// only through `theta_mu = θᵀμ` and `theta_norm2 = ‖θ‖²`, and
/// `kappa = a + qθᵀμ` is the reversion under the original measure.
#[derive(Debug, Clone, Copy)]
pub struct Constants<S> {
    pub q: f64,
    pub delta: f64,
    pub theta: S,
    pub kappa: S,
    pub eta: S,
    pub xi: S,
    pub zeta: S,
    pub lambda: S,
    pub lambda_hat: S,
    pub p0: S,
    pub theta_mu: S,
    pub theta_norm2: S,
}

/// `(−h + √(h² + c))` computed without cancellation when `h > 0`.
fn root_shift<S: Scalar>(h: S, c: S) -> S {
    let s = (h * h + c).sqrt();
    if h.value() > 0.0 {
        c / (h + s)
    } else {
        s - h
    }
}

/// Steady filter variance solving `−2AP + σ²(1−‖ρ‖²) − ‖μ‖²P² = 0`, `A = a + σρᵀμ`.
pub fn riccati_root<S: Scalar>(m: &MarketScalars, a: S, sigma: S) -> Result<S> {
    let aa = a + sigma * m.rm;
    let c = sigma * sigma * (1.0 - m.rr);
    if m.mm == 0.0 {
        let lim = c / (aa * 2.0);
        if lim.value() > 0.0 {
            return Ok(lim);
        }
        return Err(Error::DegenerateObservation(
            "mu = 0 and the limiting filter variance is not positive".into(),
        ));
    }
    Ok(root_shift(aa, c * m.mm) / m.mm)
}

pub fn constants_generic<S: Scalar>(
    kind: ModelKind,
    m: &MarketScalars,
    b: S,
    a: S,
    sigma: S,
) -> Result<Constants<S>> {
    let q = m.p / (m.p - 1.0);
    let delta = 1.0 / (1.0 - q * m.rr);
    let zero = S::cst(0.0);
    let pr = m.p * m.r / delta;
    let s2 = sigma * sigma;
    match kind {
        ModelKind::ThreeHalves | ModelKind::InverseBessel => {
            let theta = a + sigma * (q * m.rm);
            let h = theta / s2 + 0.5;
            let eta = root_shift(h, (s2 * delta).recip() * (q * m.mm));
            if kind == ModelKind::ThreeHalves {
                return Ok(Constants {
                    q,
                    delta,
                    theta,
                    kappa: theta,
                    eta,
                    xi: zero,
                    zeta: zero,
                    lambda: b * eta - pr,
                    lambda_hat: b,
                    p0: zero,
                    theta_mu: zero,
                    theta_norm2: zero,
                });
            }
            let xi = b * eta / (s2 * (eta + 1.0) + theta);
            let lambda = -(s2 * xi * xi) * 0.5 + b * xi - pr;
            let level = b - s2 * xi;
            let den = theta + s2 * (eta + 2.0);
            let zeta = level / den;
            let lambda_hat = -(s2 * zeta * zeta) * 0.5 + level * level / den;
            Ok(Constants {
                q,
                delta,
                theta,
                kappa: theta,
                eta,
                xi,
                zeta,
                lambda,
                lambda_hat,
                p0: zero,
                theta_mu: zero,
                theta_norm2: zero,
            })
        }
        ModelKind::FilteredOu => {
            let p0 = riccati_root(m, a, sigma)?;
            let theta_mu = p0 * m.mm + sigma * m.rm;
            let theta_norm2 = p0 * p0 * m.mm + p0 * sigma * (2.0 * m.rm) + s2 * m.rr;
            if !(theta_norm2.value() > 0.0) {
                return Err(Error::InvalidSpec(
                    "filtered OU state noise ‖θ‖ vanishes".into(),
                ));
            }
            let kappa = a + theta_mu * q;
            // η = (−κ + √(κ² + (q/δ)‖θ‖²‖μ‖²)) / (2‖θ‖²)
            let eta = root_shift(kappa, theta_norm2 * (q / delta * m.mm)) / (theta_norm2 * 2.0);
            let lambda_hat = kappa + theta_norm2 * eta * 2.0;
            let xi = b * eta * 2.0 / lambda_hat;
            let lambda = (eta - xi * xi * 0.5) * theta_norm2 + b * xi - pr;
            Ok(Constants {
                q,
                delta,
                theta: kappa,
                kappa,
                eta,
                xi,
                zeta: zero,
                lambda,
                lambda_hat,
                p0,
                theta_mu,
                theta_norm2,
            })
        }
    }
}

/// Constants of one model under one market, with the assumption flag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub kind: ModelKind,
    pub q: f64,
    pub delta: f64,
    /// Scalar `a + qσρᵀμ` (3/2, inverse Bessel) or `a + qθᵀμ` (filtered OU).
    pub theta: f64,
    /// Vector `P₀μ + σρ` for the filtered OU model, empty otherwise.
    pub theta_vec: Vec<f64>,
    pub theta_norm2: f64,
    pub theta_mu: f64,
    /// Reversion of the state under the original measure.
    pub kappa: f64,
    pub eta: f64,
    pub xi: f64,
    /// Inverse Bessel second-tilt coefficient `(b − σ²ξ)/(θ + σ²(η+2))`, zero otherwise.
    pub zeta: f64,
    pub lambda: f64,
    pub lambda_hat: f64,
    pub p0: Option<f64>,
    pub assumption_ok: bool,
    pub assumption: &'static str,
    pub market: MarketScalars,
}

impl DerivedConstants {
    /// Potential `V(z) = −(pr − q‖μ‖²g(z)/2)/δ`.
    pub fn potential(&self, z: f64) -> f64 {
        let m = &self.market;
        -(m.p * m.r - 0.5 * self.q * m.mm * self.kind.g(z)) / self.delta
    }

    pub fn require(&self) -> Result<()> {
        if self.assumption_ok {
            Ok(())
        } else {
            Err(Error::AssumptionViolated(self.assumption.to_string()))
        }
    }

    /// State volatility under the original measure: `σ`, or `‖θ‖` for the filtered OU model.
    pub fn state_sigma(&self, model: &StateModelSpec) -> f64 {
        match self.kind {
            ModelKind::FilteredOu => self.theta_norm2.sqrt(),
            _ => model.sigma,
        }
    }

    /// The second expression for the inverse Bessel `λ̂`, `−½σ²ζ² + (b − σ²ξ)ζ`.
    pub fn lambda_hat_alt(&self, model: &StateModelSpec) -> f64 {
        let s2 = model.sigma * model.sigma;
        -0.5 * s2 * self.zeta * self.zeta + (model.b - s2 * self.xi) * self.zeta
    }
}

pub fn derive_constants(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
) -> Result<DerivedConstants> {
    spec.validate()?;
    model.validate()?;
    let m = spec.scalars();
    let c = constants_generic(model.kind, &m, model.b, model.a, model.sigma)?;
    let s2 = model.sigma * model.sigma;
    let (ok, what) = match model.kind {
        ModelKind::ThreeHalves => (
            c.theta > -0.5 * s2,
            "three-halves model requires theta = a + q*sigma*rho'mu > -sigma^2/2",
        ),
        ModelKind::InverseBessel => (
            c.theta > -0.5 * s2,
            "inverse Bessel model requires theta = a + q*sigma*rho'mu > -sigma^2/2",
        ),
        ModelKind::FilteredOu => (
            c.kappa > 0.0,
            "filtered OU model requires a + q*theta'mu > 0",
        ),
    };
    let theta_vec = match model.kind {
        ModelKind::FilteredOu => spec
            .mu
            .iter()
            .zip(&spec.rho)
            .map(|(mu, rho)| c.p0 * mu + model.sigma * rho)
            .collect(),
        _ => Vec::new(),
    };
    let all_finite = [c.eta, c.xi, c.lambda, c.lambda_hat]
        .iter()
        .all(|x| x.is_finite());
    let ok = ok && all_finite && c.eta >= 0.0 && c.lambda_hat > 0.0;
    Ok(DerivedConstants {
        kind: model.kind,
        q: c.q,
        delta: c.delta,
        theta: c.theta,
        theta_vec,
        theta_norm2: c.theta_norm2,
        theta_mu: c.theta_mu,
        kappa: c.kappa,
        eta: c.eta,
        xi: c.xi,
        zeta: c.zeta,
        lambda: c.lambda,
        lambda_hat: c.lambda_hat,
        p0: (model.kind == ModelKind::FilteredOu).then_some(c.p0),
        assumption_ok: ok,
        assumption: what,
        market: m,
    })
}

/// Constants carrying their derivative with respect to one of `b`, `a`, `σ`.
pub fn constants_tangent(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    param: Param,
) -> Result<Constants<Dual>> {
    let m = spec.scalars();
    let seed = |p: Param, v: f64| {
        if p == param {
            Dual::var(v)
        } else {
            Dual::cst(v)
        }
    };
    constants_generic(
        model.kind,
        &m,
        seed(Param::B, model.b),
        seed(Param::A, model.a),
        seed(Param::Sigma, model.sigma),
    )
}
