//! Default market and model parameter sets.

use crate::eigen::{invariant_density, InvariantDensity};
use crate::error::Result;
use crate::market::PreferenceMarketSpec;
use crate::model::{DerivedConstants, ModelKind, StateModelSpec};

/// Two risky assets, `p = −1`.
pub fn market() -> PreferenceMarketSpec {
    PreferenceMarketSpec {
        p: -1.0,
        r: 0.03,
        mu: vec![0.6, 0.4],
        sigma: vec![vec![0.2, 0.0], vec![0.05, 0.25]],
        rho: vec![-0.4, -0.3],
    }
}

pub fn model(kind: ModelKind) -> StateModelSpec {
    match kind {
        ModelKind::ThreeHalves => StateModelSpec {
            kind,
            b: 1.0,
            a: 0.5,
            sigma: 0.5,
        },
        ModelKind::InverseBessel => StateModelSpec {
            kind,
            b: 1.0,
            a: 0.5,
            sigma: 0.5,
        },
        ModelKind::FilteredOu => StateModelSpec {
            kind,
            b: 0.5,
            a: 1.0,
            sigma: 0.5,
        },
    }
}

/// Mean of the tilted stationary law, the default evaluation point.
pub fn tilted_mean(model: &StateModelSpec, c: &DerivedConstants) -> Result<f64> {
    Ok(match invariant_density(model, c)? {
        InvariantDensity::InverseGamma { shape, scale, .. } => scale / (shape - 1.0),
        InvariantDensity::Gaussian { mean, .. } => mean,
    })
}
