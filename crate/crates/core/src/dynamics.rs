//! Effective state dynamics under each probability measure.

use crate::error::{Error, Result};
use crate::model::{DerivedConstants, ModelKind, StateModelSpec};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Probability measure under which the state is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureTag {
    /// Risk-adjusted original measure of the Feynman–Kac representation.
    P,
    /// Tilted by the principal eigenfunction: drift `+σ²φ′/φ`.
    PTilde,
    /// Tilted a second time by `φ̂` (3/2 and inverse Bessel only).
    PHat,
    /// Third tilt used for second derivatives (3/2 and inverse Bessel only).
    PBar,
    /// The model's own parameters without risk adjustment.
    Raw,
}

impl MeasureTag {
    pub fn drift_shift_description(self) -> &'static str {
        match self {
            MeasureTag::P => "base drift b - q (Sigma^-1 mu)' rho sigma",
            MeasureTag::PTilde => "base drift + sigma^2 phi'/phi",
            MeasureTag::PHat => "tilted drift + sigma^2 phi_hat'/phi_hat",
            MeasureTag::PBar => "doubly tilted drift + sigma^2 phi_bar'/phi_bar",
            MeasureTag::Raw => "unadjusted model drift",
        }
    }
}

impl fmt::Display for MeasureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MeasureTag::P => "P",
            MeasureTag::PTilde => "P~",
            MeasureTag::PHat => "P^",
            MeasureTag::PBar => "P-",
            MeasureTag::Raw => "raw",
        };
        f.write_str(s)
    }
}

/// `dZ = (level − reversion·Z)·Z^k dt + sigma·Z^m dB` with `k, m` fixed by the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dynamics {
    pub kind: ModelKind,
    pub level: f64,
    pub reversion: f64,
    pub sigma: f64,
}

impl Dynamics {
    pub fn drift(&self, z: f64) -> f64 {
        (self.level - self.reversion * z) * z.powf(self.kind.drift_power())
    }

    pub fn diffusion(&self, z: f64) -> f64 {
        self.sigma * z.powf(self.kind.diffusion_power())
    }

    /// Pathwise `∂Z_t/∂z` given the path end point and its time integrals.
    ///
    /// `int_z` is `∫Z ds` and `int_z2` is `∫Z² ds`; only the one the model needs is read.
    pub fn flow_derivative(&self, z0: f64, zt: f64, t: f64, int_z: f64, int_z2: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        match self.kind {
            ModelKind::ThreeHalves => {
                (zt / z0).powf(1.5)
                    * (-0.5 * self.level * t - (0.5 * self.reversion + 0.375 * s2) * int_z).exp()
            }
            ModelKind::InverseBessel => {
                let r = zt / z0;
                r * r * (-(s2 + self.reversion) * int_z2).exp()
            }
            ModelKind::FilteredOu => (-self.reversion * t).exp(),
        }
    }
}

/// Effective coefficients of the state under `measure`.
pub fn dynamics(
    model: &StateModelSpec,
    c: &DerivedConstants,
    measure: MeasureTag,
) -> Result<Dynamics> {
    let s2 = model.sigma * model.sigma;
    let d = |level: f64, reversion: f64, sigma: f64| Dynamics {
        kind: model.kind,
        level,
        reversion,
        sigma,
    };
    let unsupported = || {
        Err(Error::UnsupportedMeasure(format!(
            "{measure} for {}",
            model.kind
        )))
    };
    match (model.kind, measure) {
        (_, MeasureTag::Raw) => Ok(d(model.b, model.a, model.sigma)),
        (ModelKind::ThreeHalves, m) => {
            let shift = match m {
                MeasureTag::P => 0.0,
                MeasureTag::PTilde => c.eta,
                MeasureTag::PHat => c.eta + 0.5,
                MeasureTag::PBar => c.eta + 1.0,
                MeasureTag::Raw => unreachable!(),
            };
            Ok(d(model.b, c.theta + s2 * shift, model.sigma))
        }
        (ModelKind::InverseBessel, m) => {
            let (level, reversion) = match m {
                MeasureTag::P => (model.b, c.theta),
                MeasureTag::PTilde => (model.b - s2 * c.xi, c.theta + s2 * c.eta),
                MeasureTag::PHat => (model.b - s2 * (c.xi + c.zeta), c.theta + s2 * (c.eta + 1.0)),
                MeasureTag::PBar => {
                    let hat = model.b - s2 * (c.xi + c.zeta);
                    let varsigma = hat / (c.theta + s2 * (c.eta + 3.0));
                    (hat - s2 * varsigma, c.theta + s2 * (c.eta + 2.0))
                }
                MeasureTag::Raw => unreachable!(),
            };
            Ok(d(level, reversion, model.sigma))
        }
        (ModelKind::FilteredOu, MeasureTag::P) => Ok(d(model.b, c.kappa, c.theta_norm2.sqrt())),
        (ModelKind::FilteredOu, MeasureTag::PTilde) => Ok(d(
            model.b - c.theta_norm2 * c.xi,
            c.lambda_hat,
            c.theta_norm2.sqrt(),
        )),
        (ModelKind::FilteredOu, _) => unsupported(),
    }
}
