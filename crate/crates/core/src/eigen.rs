//! Principal eigenpairs, invariant densities and the positive-recurrence test.

use crate::dynamics::{dynamics, MeasureTag};
use crate::error::{Error, Result};
use crate::model::{DerivedConstants, ModelKind, StateModelSpec};
use crate::quadrature::{integrate, integrate_line, integrate_upper, ABS_TOL};
use statrs::function::gamma::ln_gamma;

/// Closed-form principal eigenpair `(λ, φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenpair {
    pub kind: ModelKind,
    pub lambda: f64,
    pub eta: f64,
    pub xi: f64,
}

impl Eigenpair {
    pub fn log_phi(&self, z: f64) -> f64 {
        match self.kind {
            ModelKind::ThreeHalves => -self.eta * z.ln(),
            ModelKind::InverseBessel => -self.eta * z.ln() + self.xi / z,
            ModelKind::FilteredOu => -self.eta * z * z - self.xi * z,
        }
    }

    pub fn phi(&self, z: f64) -> f64 {
        self.log_phi(z).exp()
    }

    /// `φ′(z)/φ(z)`
    pub fn dlog_phi(&self, z: f64) -> f64 {
        match self.kind {
            ModelKind::ThreeHalves => -self.eta / z,
            ModelKind::InverseBessel => -self.eta / z - self.xi / (z * z),
            ModelKind::FilteredOu => -2.0 * self.eta * z - self.xi,
        }
    }

    /// `φ″(z)/φ(z)`
    pub fn d2_over_phi(&self, z: f64) -> f64 {
        let l = self.dlog_phi(z);
        let dl = match self.kind {
            ModelKind::ThreeHalves => self.eta / (z * z),
            ModelKind::InverseBessel => self.eta / (z * z) + 2.0 * self.xi / (z * z * z),
            ModelKind::FilteredOu => -2.0 * self.eta,
        };
        l * l + dl
    }

    pub fn d2_phi(&self, z: f64) -> f64 {
        self.phi(z) * self.d2_over_phi(z)
    }
}

pub fn eigenpair(model: &StateModelSpec, c: &DerivedConstants) -> Result<Eigenpair> {
    c.require()?;
    Ok(Eigenpair {
        kind: model.kind,
        lambda: c.lambda,
        eta: c.eta,
        xi: c.xi,
    })
}

/// Largest `|𝓛φ + λφ|/φ` over `grid`, with `𝓛` the generator under ℙ minus the potential.
///
/// Uses the constants as given (not re-derived), so perturbed constants show up
/// as a non-zero residual.
pub fn eigen_residual(model: &StateModelSpec, c: &DerivedConstants, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let dy = dynamics(model, c, MeasureTag::P)?;
    let ep = Eigenpair {
        kind: model.kind,
        lambda: c.lambda,
        eta: c.eta,
        xi: c.xi,
    };
    let mut worst: f64 = 0.0;
    for &z in grid {
        if model.kind.positive_state() && !(z > 0.0) {
            return Err(Error::DomainError(format!(
                "grid point {z} outside (0, inf)"
            )));
        }
        let s = dy.diffusion(z);
        let r = 0.5 * s * s * ep.d2_over_phi(z) + dy.drift(z) * ep.dlog_phi(z) - c.potential(z)
            + ep.lambda;
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Stationary law of the tilted state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InvariantDensity {
    /// Density `∝ z^{−shape−1} e^{−scale/z}` on `(0, ∞)`; `log_norm` is the
    /// log of the numerically integrated kernel.
    InverseGamma {
        shape: f64,
        scale: f64,
        log_norm: f64,
    },
    Gaussian {
        mean: f64,
        var: f64,
    },
}

impl InvariantDensity {
    pub fn pdf(&self, z: f64) -> f64 {
        match *self {
            InvariantDensity::InverseGamma {
                shape,
                scale,
                log_norm,
            } => {
                if z <= 0.0 {
                    0.0
                } else {
                    (-(shape + 1.0) * z.ln() - scale / z - log_norm).exp()
                }
            }
            InvariantDensity::Gaussian { mean, var } => {
                let d = z - mean;
                (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
            }
        }
    }

    /// `∫ g(z) φ̃(z) dz` by adaptive quadrature.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        let rel = 1e-11;
        match *self {
            InvariantDensity::InverseGamma { shape, scale, .. } => {
                let mode = scale / (shape + 1.0);
                let q = integrate_upper(
                    |x| mode * g(mode * x) * self.pdf(mode * x),
                    0.0,
                    ABS_TOL,
                    rel,
                )?;
                Ok(q.value)
            }
            InvariantDensity::Gaussian { mean, var } => {
                let sd = var.sqrt();
                let q = integrate_line(
                    |x| sd * g(mean + sd * x) * self.pdf(mean + sd * x),
                    ABS_TOL,
                    rel,
                )?;
                Ok(q.value)
            }
        }
    }

    /// Closed-form `ln Γ(shape) − shape·ln(scale)` for comparison with the quadrature.
    pub fn log_norm_closed_form(&self) -> Option<f64> {
        match *self {
            InvariantDensity::InverseGamma { shape, scale, .. } => {
                Some(ln_gamma(shape) - shape * scale.ln())
            }
            InvariantDensity::Gaussian { .. } => None,
        }
    }
}

fn inverse_gamma(shape: f64, scale: f64) -> Result<InvariantDensity> {
    if !(shape > 0.0 && scale > 0.0) {
        return Err(Error::DomainError(format!(
            "invalid inverse-gamma law ({shape}, {scale})"
        )));
    }
    let mode = scale / (shape + 1.0);
    let log_kernel_mode = -(shape + 1.0) * mode.ln() - scale / mode;
    // kernel rescaled by its value at the mode, integrated in units of the mode
    let q = integrate_upper(
        |x: f64| {
            if x <= 0.0 {
                0.0
            } else {
                (-(shape + 1.0) * x.ln() - (scale / mode) * (1.0 / x - 1.0)).exp()
            }
        },
        0.0,
        ABS_TOL,
        1e-13,
    )?;
    Ok(InvariantDensity::InverseGamma {
        shape,
        scale,
        log_norm: log_kernel_mode + mode.ln() + q.value.ln(),
    })
}

/// Stationary density of the state under ℙ̃.
pub fn invariant_density(model: &StateModelSpec, c: &DerivedConstants) -> Result<InvariantDensity> {
    let dy = dynamics(model, c, MeasureTag::PTilde)?;
    let s2 = dy.sigma * dy.sigma;
    match model.kind {
        ModelKind::ThreeHalves => inverse_gamma(2.0 * dy.reversion / s2 + 2.0, 2.0 * dy.level / s2),
        ModelKind::InverseBessel => {
            inverse_gamma(2.0 * dy.reversion / s2 + 3.0, 2.0 * dy.level / s2)
        }
        ModelKind::FilteredOu => Ok(InvariantDensity::Gaussian {
            mean: dy.level / dy.reversion,
            var: s2 / (2.0 * dy.reversion),
        }),
    }
}

/// Outcome of [`positive_recurrence_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recurrence {
    pub recurrent: bool,
    /// Scale integral towards the lower end, towards the upper end, and the speed integral.
    pub integrals: [f64; 3],
}

/// Default threshold above which a truncated integral is called divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

// Truncation depth in the log-distance coordinate: e^{-9} and e^{-23} relative
// to the interior point for finite ends, e^{9} and e^{23} for infinite ones.
const LEVELS: [usize; 2] = [9, 23];

enum End {
    Finite(f64),
    PlusInf,
    MinusInf,
}

struct SideMap {
    c: f64,
    w: f64,
    end: End,
}

impl SideMap {
    fn x(&self, u: f64) -> f64 {
        match self.end {
            End::Finite(e) => e + (self.c - e) * (-u).exp(),
            End::PlusInf => self.c + self.w * u.exp_m1(),
            End::MinusInf => self.c - self.w * u.exp_m1(),
        }
    }
    fn dx(&self, u: f64) -> f64 {
        match self.end {
            End::Finite(e) => -(self.c - e) * (-u).exp(),
            End::PlusInf => self.w * u.exp(),
            End::MinusInf => -self.w * u.exp(),
        }
    }
}

/// Returns (scale integral, speed integral) truncated at each level.
fn side_integrals<B: Fn(f64) -> f64, S: Fn(f64) -> f64>(
    drift: &B,
    diffusion: &S,
    map: &SideMap,
) -> Result<([f64; 2], [f64; 2])> {
    let rel = 1e-9;
    let ratio = |u: f64| {
        let x = map.x(u);
        let s = diffusion(x);
        2.0 * drift(x) / (s * s) * map.dx(u)
    };
    let mut s_start: f64 = 0.0; // S(u) = −∫_c^{x(u)} 2b/σ²
    let mut scale: f64 = 0.0;
    let mut speed: f64 = 0.0;
    let mut out_scale = [0.0; 2];
    let mut out_speed = [0.0; 2];
    for k in 0..LEVELS[1] {
        let (u0, u1) = (k as f64, k as f64 + 1.0);
        let inner = |u: f64| -> f64 {
            match integrate(&ratio, u0, u, 1e-10, rel) {
                Ok(q) => s_start - q.value,
                Err(_) => f64::NAN,
            }
        };
        let sc = if scale.is_finite() {
            integrate(
                |u| {
                    let s = inner(u);
                    if s > 700.0 {
                        f64::INFINITY
                    } else {
                        s.exp() * map.dx(u).abs()
                    }
                },
                u0,
                u1,
                1e-10,
                rel,
            )
            .map(|q| q.value)
            .unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        };
        let sp = if speed.is_finite() {
            integrate(
                |u| {
                    let s = inner(u);
                    let x = map.x(u);
                    let d = diffusion(x);
                    if -s > 700.0 {
                        f64::INFINITY
                    } else {
                        (-s).exp() / (d * d) * map.dx(u).abs()
                    }
                },
                u0,
                u1,
                1e-10,
                rel,
            )
            .map(|q| q.value)
            .unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        };
        scale += sc;
        speed += sp;
        let step = integrate(&ratio, u0, u1, 1e-10, rel)
            .map(|q| q.value)
            .unwrap_or(f64::NAN);
        s_start -= step;
        if !s_start.is_finite() {
            scale = f64::INFINITY;
            speed = f64::INFINITY;
        }
        for (i, &lv) in LEVELS.iter().enumerate() {
            if k + 1 == lv {
                out_scale[i] = scale;
                out_speed[i] = speed;
            }
        }
    }
    Ok((out_scale, out_speed))
}

fn divergent(levels: [f64; 2], threshold: f64) -> bool {
    !(levels[1] <= threshold) || levels[1] > 1.5 * levels[0]
}

/// One-dimensional positive-recurrence criterion.
///
/// A diffusion on `(alpha, beta)` is positive recurrent iff both scale
/// integrals diverge and the speed measure is finite. Divergence is decided
/// heuristically: the integral truncated close to the boundary exceeds
/// `threshold`, or still grows by more than half between the two truncation
/// levels.
pub fn positive_recurrence_check<B, S>(
    drift: B,
    diffusion: S,
    domain: (f64, f64),
    c: f64,
    threshold: f64,
) -> Result<Recurrence>
where
    B: Fn(f64) -> f64,
    S: Fn(f64) -> f64,
{
    let (lo, hi) = domain;
    if !(lo < c && c < hi) {
        return Err(Error::DomainError(format!(
            "interior point {c} not inside ({lo}, {hi})"
        )));
    }
    let w = c.abs().max(1.0);
    let lower = SideMap {
        c,
        w,
        end: if lo.is_finite() {
            End::Finite(lo)
        } else {
            End::MinusInf
        },
    };
    let upper = SideMap {
        c,
        w,
        end: if hi.is_finite() {
            End::Finite(hi)
        } else {
            End::PlusInf
        },
    };
    let (sl, ml) = side_integrals(&drift, &diffusion, &lower)?;
    let (su, mu) = side_integrals(&drift, &diffusion, &upper)?;
    let speed = [ml[0] + mu[0], ml[1] + mu[1]];
    let recurrent =
        divergent(sl, threshold) && divergent(su, threshold) && !divergent(speed, threshold);
    Ok(Recurrence {
        recurrent,
        integrals: [sl[1], su[1], speed[1]],
    })
}
