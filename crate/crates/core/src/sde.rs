//! Path simulation of the state processes and their functionals.

use crate::dynamics::{dynamics, Dynamics, MeasureTag};
use crate::eigen::Eigenpair;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Exec};
use crate::model::{DerivedConstants, ModelKind, StateModelSpec};
use crate::rng::{normal, stream, Digest};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Discretization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Drift-implicit Euler on the reciprocal coordinate with additive noise
    /// (`Z^{-1/2}` for 3/2, `1/Z` for inverse Bessel). Positive by construction.
    ImplicitReciprocal,
    /// Explicit full-truncation Euler on the square-root process `1/Z` (3/2) or
    /// `1/Z²` (inverse Bessel); plain Euler for the OU model.
    EulerFullTruncation,
    /// Exact Gaussian transitions (OU model only).
    ExactOu,
}

impl Scheme {
    pub fn default_for(kind: ModelKind) -> Scheme {
        match kind {
            ModelKind::FilteredOu => Scheme::ExactOu,
            _ => Scheme::ImplicitReciprocal,
        }
    }
}

/// Path functionals accumulated during simulation.
///
/// With drift `(β − κZ)Z^k` and diffusion `σZ^m`, `ItoLevel` is `∫Z^{k−m} dB`
/// and `ItoReversion` is `∫Z^{k+1−m} dB`: the score integrands of the level
/// and reversion coefficients (up to `1/σ`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Functional {
    /// `∫Z ds`, trapezoidal.
    IntZ,
    /// `∫Z² ds`, trapezoidal.
    IntZ2,
    ItoLevel,
    ItoReversion,
    /// `B_t`.
    Brownian,
}

impl Functional {
    pub fn name(self) -> &'static str {
        match self {
            Functional::IntZ => "int_z",
            Functional::IntZ2 => "int_z2",
            Functional::ItoLevel => "ito_level",
            Functional::ItoReversion => "ito_reversion",
            Functional::Brownian => "brownian",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// `None` picks [`Scheme::default_for`] the model.
    pub scheme: Option<Scheme>,
    pub antithetic: bool,
    /// Times at which states and functionals are kept, snapped to the `dt` grid;
    /// empty means `{0, horizon}`.
    pub record_times: Vec<f64>,
    pub exec: Exec,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            horizon: 1.0,
            n_paths: 100_000,
            seed: 20240601,
            scheme: None,
            antithetic: true,
            record_times: Vec::new(),
            exec: Exec::Auto,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::ConfigError(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= self.dt) {
            return Err(Error::ConfigError(format!(
                "horizon {} is shorter than dt {}",
                self.horizon, self.dt
            )));
        }
        if self.n_paths < 2 {
            return Err(Error::ConfigError("at least two paths are required".into()));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(Error::ConfigError(
                "antithetic sampling needs an even path count".into(),
            ));
        }
        Ok(())
    }

    /// Copy recording exactly `times`, with the horizon set to the last one.
    pub fn recording(&self, times: &[f64]) -> SimConfig {
        let horizon = times.iter().copied().fold(self.dt, f64::max);
        SimConfig {
            horizon,
            record_times: times.to_vec(),
            ..self.clone()
        }
    }

    fn grid(&self) -> Result<(usize, Vec<usize>)> {
        let times: Vec<f64> = if self.record_times.is_empty() {
            vec![0.0, self.horizon]
        } else {
            self.record_times.clone()
        };
        let mut idx = Vec::with_capacity(times.len());
        for &t in &times {
            if !(t >= 0.0) || t > self.horizon * (1.0 + 1e-12) {
                return Err(Error::ConfigError(format!(
                    "record time {t} outside [0, {}]",
                    self.horizon
                )));
            }
            // off-grid times snap to the nearest step; `PathBatch::times` reports the result
            idx.push((t / self.dt).round() as usize);
        }
        if idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ConfigError(
                "record times must be strictly increasing and at least one step apart".into(),
            ));
        }
        let steps = *idx.last().expect("non-empty");
        Ok((steps, idx))
    }
}

/// Simulated paths observed at the record times.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub dynamics: Dynamics,
    pub measure: MeasureTag,
    pub z0: f64,
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub antithetic: bool,
    pub seed: u64,
    /// Path-major: `states[path * times.len() + k]`.
    pub states: Vec<f64>,
    pub integrals: BTreeMap<Functional, Vec<f64>>,
    /// Steps where the explicit scheme fell back to the implicit root.
    pub clamps: u64,
    pub steps: u64,
    /// Digest of every normal draw, in path order.
    pub checksum: u64,
}

impl PathBatch {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, path: usize, k: usize) -> f64 {
        self.states[path * self.times.len() + k]
    }

    /// States of every path at record index `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.state(p, k)).collect()
    }

    pub fn integral(&self, f: Functional, path: usize, k: usize) -> Result<f64> {
        self.integrals
            .get(&f)
            .map(|v| v[path * self.times.len() + k])
            .ok_or(Error::MissingFunctional(f.name()))
    }

    pub fn integral_column(&self, f: Functional, k: usize) -> Result<Vec<f64>> {
        let v = self
            .integrals
            .get(&f)
            .ok_or(Error::MissingFunctional(f.name()))?;
        Ok((0..self.n_paths)
            .map(|p| v[p * self.times.len() + k])
            .collect())
    }

    /// Pathwise `∂Z_t/∂z` at record index `k`.
    pub fn flow_derivative(&self, k: usize) -> Result<Vec<f64>> {
        let t = self.times[k];
        let need = match self.dynamics.kind {
            ModelKind::ThreeHalves => Some(Functional::IntZ),
            ModelKind::InverseBessel => Some(Functional::IntZ2),
            ModelKind::FilteredOu => None,
        };
        let ints = match need {
            Some(f) => self.integral_column(f, k)?,
            None => vec![0.0; self.n_paths],
        };
        Ok((0..self.n_paths)
            .map(|p| {
                self.dynamics
                    .flow_derivative(self.z0, self.state(p, k), t, ints[p], ints[p])
            })
            .collect())
    }
}

/// Pathwise `∂Z_t/∂z` for a batch (see [`PathBatch::flow_derivative`]).
pub fn flow_derivative(batch: &PathBatch, k: usize) -> Result<Vec<f64>> {
    batch.flow_derivative(k)
}

/// Density process `M_t = e^{λt − ∫V} φ(Z_t)/φ(z)` of ℙ̃ with respect to ℙ.
pub fn girsanov_weight(
    c: &DerivedConstants,
    batch: &PathBatch,
    k: usize,
    from: MeasureTag,
    to: MeasureTag,
) -> Result<Vec<f64>> {
    if from == to {
        return Ok(vec![1.0; batch.n_paths]);
    }
    if !(from == MeasureTag::P && to == MeasureTag::PTilde) || batch.measure != from {
        return Err(Error::UnsupportedMeasurePair {
            from: from.to_string(),
            to: to.to_string(),
        });
    }
    let ep = Eigenpair {
        kind: c.kind,
        lambda: c.lambda,
        eta: c.eta,
        xi: c.xi,
    };
    let t = batch.times[k];
    let g = match c.kind {
        ModelKind::ThreeHalves => Functional::IntZ,
        _ => Functional::IntZ2,
    };
    let ints = batch.integral_column(g, k)?;
    let m = &c.market;
    let log0 = ep.log_phi(batch.z0);
    Ok((0..batch.n_paths)
        .map(|p| {
            let int_v = -(m.p * m.r * t - 0.5 * c.q * m.mm * ints[p]) / c.delta;
            (c.lambda * t - int_v + ep.log_phi(batch.state(p, k)) - log0).exp()
        })
        .collect())
}

/// Simulates the state of `model` under `measure` from `z0`.
pub fn simulate(
    model: &StateModelSpec,
    c: &DerivedConstants,
    measure: MeasureTag,
    z0: f64,
    cfg: &SimConfig,
    functionals: &[Functional],
) -> Result<PathBatch> {
    let dy = dynamics(model, c, measure)?;
    let mut batch = simulate_dynamics(&dy, z0, cfg, functionals)?;
    batch.measure = measure;
    Ok(batch)
}

struct Unit {
    // per path in the unit: states then each functional, each of length n_rec
    data: Vec<f64>,
    clamps: u64,
    digest: Digest,
}

#[derive(Clone, Copy)]
struct Flags {
    int_z: bool,
    int_z2: bool,
    ito_level: bool,
    ito_rev: bool,
    brownian: bool,
}

/// Simulates explicit effective dynamics (any measure, or hand-built coefficients).
pub fn simulate_dynamics(
    dy: &Dynamics,
    z0: f64,
    cfg: &SimConfig,
    functionals: &[Functional],
) -> Result<PathBatch> {
    cfg.validate()?;
    let kind = dy.kind;
    if kind.positive_state() && !(z0 > 0.0 && z0.is_finite()) {
        return Err(Error::DomainError(format!(
            "initial state {z0} must be positive"
        )));
    }
    if !z0.is_finite() {
        return Err(Error::DomainError("initial state must be finite".into()));
    }
    let scheme = cfg.scheme.unwrap_or(Scheme::default_for(kind));
    match (kind, scheme) {
        (ModelKind::FilteredOu, Scheme::ImplicitReciprocal)
        | (ModelKind::ThreeHalves | ModelKind::InverseBessel, Scheme::ExactOu) => {
            return Err(Error::ConfigError(format!(
                "scheme {scheme:?} does not apply to {kind}"
            )));
        }
        _ => {}
    }
    let s2 = dy.sigma * dy.sigma;
    match kind {
        ModelKind::ThreeHalves if !(dy.reversion + 0.75 * s2 > 0.0) => {
            return Err(Error::DomainError(
                "reciprocal 3/2 coordinate loses positivity".into(),
            ));
        }
        ModelKind::InverseBessel if !(dy.reversion + s2 > 0.0) => {
            return Err(Error::DomainError(
                "reciprocal inverse Bessel coordinate loses positivity".into(),
            ));
        }
        ModelKind::FilteredOu if scheme == Scheme::ExactOu && dy.reversion == 0.0 => {
            return Err(Error::DomainError(
                "exact OU transition needs non-zero reversion".into(),
            ));
        }
        _ => {}
    }
    let (steps, rec_idx) = cfg.grid()?;
    let mut funcs: Vec<Functional> = functionals.to_vec();
    funcs.sort();
    funcs.dedup();
    let flags = Flags {
        int_z: funcs.contains(&Functional::IntZ),
        int_z2: funcs.contains(&Functional::IntZ2),
        ito_level: funcs.contains(&Functional::ItoLevel),
        ito_rev: funcs.contains(&Functional::ItoReversion),
        brownian: funcs.contains(&Functional::Brownian),
    };
    let n_rec = rec_idx.len();
    let per_path = n_rec * (1 + funcs.len());
    let width = if cfg.antithetic { 2 } else { 1 };
    let n_units = cfg.n_paths / width;
    let stepper = Stepper::new(dy, scheme, cfg.dt);
    let kpow = kind.drift_power() - kind.diffusion_power();

    let units = map_indexed(n_units, cfg.exec, |u| {
        let mut rng = stream(cfg.seed, u as u64);
        let mut data = vec![0.0; width * per_path];
        let mut digest = Digest::default();
        let mut clamps = 0u64;
        let mut st = [stepper.init(z0); 2];
        let mut z = [z0; 2];
        let mut acc = [[0.0f64; 5]; 2];
        let mut next_rec = 0usize;
        let sqdt = cfg.dt.sqrt();
        for step in 0..=steps {
            if next_rec < n_rec && rec_idx[next_rec] == step {
                for w in 0..width {
                    let base = w * per_path;
                    data[base + next_rec] = z[w];
                    let mut col = 1;
                    for (fi, on) in [
                        flags.int_z,
                        flags.int_z2,
                        flags.ito_level,
                        flags.ito_rev,
                        flags.brownian,
                    ]
                    .iter()
                    .enumerate()
                    {
                        if *on {
                            data[base + col * n_rec + next_rec] = acc[w][fi];
                            col += 1;
                        }
                    }
                }
                next_rec += 1;
            }
            if step == steps {
                break;
            }
            let n = normal(&mut rng);
            digest.push(n);
            for w in 0..width {
                let dw = if w == 0 { n * sqdt } else { -n * sqdt };
                let zl = z[w];
                let (s_new, z_new, clamped, db) = stepper.step(st[w], zl, dw);
                clamps += clamped as u64;
                if flags.int_z {
                    acc[w][0] += 0.5 * (zl + z_new) * cfg.dt;
                }
                if flags.int_z2 {
                    acc[w][1] += 0.5 * (zl * zl + z_new * z_new) * cfg.dt;
                }
                if flags.ito_level || flags.ito_rev {
                    let base = if kpow == 0.0 { 1.0 } else { zl.powf(kpow) };
                    if flags.ito_level {
                        acc[w][2] += base * db;
                    }
                    if flags.ito_rev {
                        acc[w][3] += base * zl * db;
                    }
                }
                if flags.brownian {
                    acc[w][4] += db;
                }
                st[w] = s_new;
                z[w] = z_new;
            }
        }
        Unit {
            data,
            clamps,
            digest,
        }
    });

    let mut states = vec![0.0; cfg.n_paths * n_rec];
    let mut integrals: BTreeMap<Functional, Vec<f64>> = funcs
        .iter()
        .map(|&f| (f, vec![0.0; cfg.n_paths * n_rec]))
        .collect();
    let mut clamps = 0u64;
    let mut checksum = Digest::default();
    for (u, unit) in units.iter().enumerate() {
        clamps += unit.clamps;
        checksum.combine(unit.digest);
        for w in 0..width {
            let path = u * width + w;
            let src = &unit.data[w * per_path..(w + 1) * per_path];
            states[path * n_rec..(path + 1) * n_rec].copy_from_slice(&src[..n_rec]);
            for (col, f) in funcs.iter().enumerate() {
                let dst = integrals.get_mut(f).expect("allocated above");
                dst[path * n_rec..(path + 1) * n_rec]
                    .copy_from_slice(&src[(col + 1) * n_rec..(col + 2) * n_rec]);
            }
        }
    }
    let total_steps = (steps as u64) * cfg.n_paths as u64;
    if total_steps > 0 && clamps as f64 > 0.01 * total_steps as f64 {
        return Err(Error::NonPositiveState(format!(
            "{clamps} of {total_steps} steps crossed zero; reduce dt"
        )));
    }
    if states.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(
            "simulated state is not finite; reduce dt".into(),
        ));
    }
    Ok(PathBatch {
        dynamics: *dy,
        measure: MeasureTag::Raw,
        z0,
        times: rec_idx.iter().map(|&k| k as f64 * cfg.dt).collect(),
        n_paths: cfg.n_paths,
        antithetic: cfg.antithetic,
        seed: cfg.seed,
        states,
        integrals,
        clamps,
        steps: total_steps,
        checksum: checksum.0,
    })
}

/// One-step map in the latent coordinate used by each scheme.
struct Stepper {
    kind: ModelKind,
    scheme: Scheme,
    dt: f64,
    level: f64,
    reversion: f64,
    sigma: f64,
    // exact OU transition
    decay: f64,
    ou_sd: f64,
}

impl Stepper {
    fn new(dy: &Dynamics, scheme: Scheme, dt: f64) -> Self {
        let (decay, ou_sd) = if dy.kind == ModelKind::FilteredOu && scheme == Scheme::ExactOu {
            let k = dy.reversion;
            let e = (-k * dt).exp();
            (
                e,
                dy.sigma * ((-(-2.0 * k * dt).exp_m1()) / (2.0 * k)).sqrt(),
            )
        } else {
            (0.0, 0.0)
        };
        Stepper {
            kind: dy.kind,
            scheme,
            dt,
            level: dy.level,
            reversion: dy.reversion,
            sigma: dy.sigma,
            decay,
            ou_sd,
        }
    }

    fn init(&self, z0: f64) -> f64 {
        match self.kind {
            ModelKind::ThreeHalves => z0.powf(-0.5),
            ModelKind::InverseBessel => 1.0 / z0,
            ModelKind::FilteredOu => z0,
        }
    }

    /// Advances latent `s` (state `z`) by Brownian increment `dw`.
    /// Returns the new latent, new state, whether a clamp happened, and the
    /// Brownian increment to use in Itô sums.
    #[inline]
    fn step(&self, s: f64, z: f64, dw: f64) -> (f64, f64, bool, f64) {
        let dt = self.dt;
        let s2 = self.sigma * self.sigma;
        match self.kind {
            ModelKind::ThreeHalves => {
                // v = Z^{-1/2}: dv = ((κ + 3σ²/4)/(2v) − βv/2) dt − (σ/2) dB
                let implicit = || {
                    let a = 1.0 + 0.5 * self.level * dt;
                    let c = 0.5 * (self.reversion + 0.75 * s2);
                    let w = s - 0.5 * self.sigma * dw;
                    (w + (w * w + 4.0 * a * c * dt).sqrt()) / (2.0 * a)
                };
                let (v, clamped) = match self.scheme {
                    Scheme::EulerFullTruncation => {
                        // X = 1/Z: dX = (κ + σ² − βX) dt − σ√X dB
                        let x = s * s;
                        let xn = x + (self.reversion + s2 - self.level * x) * dt
                            - self.sigma * x.sqrt() * dw;
                        if xn > 0.0 {
                            (xn.sqrt(), false)
                        } else {
                            (implicit(), true)
                        }
                    }
                    _ => (implicit(), false),
                };
                (v, 1.0 / (v * v), clamped, dw)
            }
            ModelKind::InverseBessel => {
                // u = 1/Z: du = ((κ + σ²)/u − β) dt − σ dB
                let implicit = || {
                    let c = self.reversion + s2;
                    let w = s - self.level * dt - self.sigma * dw;
                    0.5 * (w + (w * w + 4.0 * c * dt).sqrt())
                };
                let (u, clamped) = match self.scheme {
                    Scheme::EulerFullTruncation => {
                        // W = 1/Z²: dW = (2κ + 3σ² − 2β√W) dt − 2σ√W dB
                        let x = s * s;
                        let xn = x + (2.0 * self.reversion + 3.0 * s2 - 2.0 * self.level * s) * dt
                            - 2.0 * self.sigma * s * dw;
                        if xn > 0.0 {
                            (xn.sqrt(), false)
                        } else {
                            (implicit(), true)
                        }
                    }
                    _ => (implicit(), false),
                };
                (u, 1.0 / u, clamped, dw)
            }
            ModelKind::FilteredOu => match self.scheme {
                Scheme::ExactOu => {
                    let m = self.level / self.reversion;
                    let zn = m + (z - m) * self.decay + self.ou_sd * dw / dt.sqrt();
                    // increment implied by the trapezoidal drift integral
                    let drift = self.level - 0.5 * self.reversion * (z + zn);
                    let db = (zn - z - drift * dt) / self.sigma;
                    (zn, zn, false, db)
                }
                _ => {
                    let zn = z + (self.level - self.reversion * z) * dt + self.sigma * dw;
                    (zn, zn, false, dw)
                }
            },
        }
    }
}
