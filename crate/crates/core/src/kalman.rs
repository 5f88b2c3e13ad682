//! Steady-state Kalman–Bucy filter for the partially observed OU state.
//!
//! The state `dY = (b − aY)dt + σdB` drives expected returns
//! `dS/S = (r + ΣμY)dt + ΣdW` with `d⟨W, B⟩ = ρdt`. The filter runs with the
//! conditional variance frozen at the stationary Riccati root `P₀`.

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::market::PreferenceMarketSpec;
use crate::model::{riccati_root, StateModelSpec};
use crate::rng::{normal, stream};
use crate::sde::SimConfig;
use crate::stats::McEstimate;
use serde::Serialize;
use std::path::Path;

/// Filter state with the steady gain `(P₀μ′ + σρ′)Σ⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterState {
    pub y_hat: f64,
    pub p: f64,
    pub gain: Vec<f64>,
}

/// Observed prices, `prices[asset][k]` at `times[k]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSeries {
    pub times: Vec<f64>,
    pub prices: Vec<Vec<f64>>,
}

impl PriceSeries {
    pub fn n_assets(&self) -> usize {
        self.prices.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() < 2 {
            return Err(Error::ValidationError(
                "need at least two observations".into(),
            ));
        }
        if self.prices.is_empty() {
            return Err(Error::ValidationError("no assets".into()));
        }
        for (k, w) in self.times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::ValidationError(format!(
                    "time {} at observation {} does not increase on {}",
                    w[1],
                    k + 2,
                    w[0]
                )));
            }
        }
        for (i, series) in self.prices.iter().enumerate() {
            if series.len() != self.times.len() {
                return Err(Error::ValidationError(format!(
                    "asset_{} has {} prices for {} times",
                    i + 1,
                    series.len(),
                    self.times.len()
                )));
            }
            if let Some(k) = series.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::ValidationError(format!(
                    "price {} of asset_{} at observation {} is not positive",
                    series[k],
                    i + 1,
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Positive root of `−2(a+σρ′μ)P + σ²(1−‖ρ‖²) − ‖μ‖²P² = 0`.
pub fn steady_state_variance(spec: &PreferenceMarketSpec, model: &StateModelSpec) -> Result<f64> {
    let p0 = riccati_root(&spec.scalars(), model.a, model.sigma)?;
    if !(p0 >= 0.0 && p0.is_finite()) {
        return Err(Error::DomainError(format!(
            "Riccati root {p0} is not a variance"
        )));
    }
    Ok(p0)
}

/// Right-hand side of the variance equation at `p`.
pub fn riccati_residual(spec: &PreferenceMarketSpec, model: &StateModelSpec, p: f64) -> f64 {
    let m = spec.scalars();
    -2.0 * (model.a + model.sigma * m.rm) * p + model.sigma * model.sigma * (1.0 - m.rr)
        - m.mm * p * p
}

/// Gain `(Pμ′ + σρ′)Σ⁻¹` as a vector.
pub fn gain(spec: &PreferenceMarketSpec, model: &StateModelSpec, p: f64) -> Vec<f64> {
    let g: Vec<f64> = spec
        .mu
        .iter()
        .zip(&spec.rho)
        .map(|(m, r)| p * m + model.sigma * r)
        .collect();
    spec.solve_sigma_t(&g)
}

pub fn filter_state(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    y_hat: f64,
) -> Result<FilterState> {
    let p = steady_state_variance(spec, model)?;
    Ok(FilterState {
        y_hat,
        p,
        gain: gain(spec, model, p),
    })
}

/// One simulated path of the state and the prices it drives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointPath {
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub prices: PriceSeries,
    /// Increments `ΔWʲ`, `dw[j][k]` over step `k`.
    pub dw: Vec<Vec<f64>>,
    /// Increments `ΔB = ρ′ΔW + √(1−‖ρ‖²)ΔW⊥`.
    pub db: Vec<f64>,
}

/// Simulates `(Y, S)` on the `cfg.dt` grid up to `cfg.horizon`, prices starting at 1.
///
/// `Y` starts at `y0`, or at a draw from its stationary law when `None`. Its
/// transitions are exact; log-prices use the left-point state over each step.
pub fn simulate_joint(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    cfg: &SimConfig,
    y0: Option<f64>,
) -> Result<JointPath> {
    spec.validate()?;
    if !(cfg.dt > 0.0 && cfg.dt.is_finite() && cfg.horizon.is_finite()) {
        return Err(Error::ConfigError(format!(
            "dt must be positive, got {}",
            cfg.dt
        )));
    }
    if !(model.a > 0.0 && model.sigma > 0.0) {
        return Err(Error::ConfigError(format!(
            "joint simulation needs a > 0 and sigma > 0, got a = {}, sigma = {}",
            model.a, model.sigma
        )));
    }
    let m = spec.scalars();
    if m.rr > 1.0 {
        return Err(Error::ConfigError(
            "correlation vector has norm above one".into(),
        ));
    }
    let n = spec.n();
    let h = cfg.dt;
    let steps = (cfg.horizon / h).round() as usize;
    if steps == 0 {
        return Err(Error::ConfigError(
            "horizon is shorter than one step".into(),
        ));
    }
    let a = model.a;
    let e = (-a * h).exp();
    // per Brownian component: (ΔW, ∫e^{−a(h−s)}dW) is Gaussian with this covariance
    let v_int = (1.0 - e * e) / (2.0 * a);
    let cov = (1.0 - e) / a;
    let beta = cov / h;
    let resid = (v_int - cov * cov / h).max(0.0).sqrt();
    let perp = (1.0 - m.rr).max(0.0).sqrt();
    let sig = &spec.sigma;
    let sigma_mu: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| sig[i][j] * spec.mu[j]).sum())
        .collect();
    let half_var: Vec<f64> = (0..n)
        .map(|i| 0.5 * sig[i].iter().map(|s| s * s).sum::<f64>())
        .collect();

    let mut rng = stream(cfg.seed, 0);
    let sd = model.sigma / (2.0 * a).sqrt();
    let mut y = y0.unwrap_or_else(|| model.b / a + sd * normal(&mut rng));
    let mut log_s = vec![0.0; n];
    let mut out = JointPath {
        times: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        prices: PriceSeries {
            times: Vec::new(),
            prices: vec![Vec::with_capacity(steps + 1); n],
        },
        dw: vec![Vec::with_capacity(steps); n],
        db: Vec::with_capacity(steps),
    };
    let record = |out: &mut JointPath, k: usize, y: f64, log_s: &[f64]| {
        out.times.push(k as f64 * h);
        out.y.push(y);
        for (i, l) in log_s.iter().enumerate() {
            out.prices.prices[i].push(l.exp());
        }
    };
    record(&mut out, 0, y, &log_s);
    let mut dw = vec![0.0; n + 1];
    let mut ew = vec![0.0; n + 1];
    for k in 0..steps {
        for j in 0..=n {
            let z1 = normal(&mut rng);
            let z2 = normal(&mut rng);
            dw[j] = h.sqrt() * z1;
            ew[j] = beta * dw[j] + resid * z2;
        }
        let db: f64 = (0..n).map(|j| spec.rho[j] * dw[j]).sum::<f64>() + perp * dw[n];
        let eb: f64 = (0..n).map(|j| spec.rho[j] * ew[j]).sum::<f64>() + perp * ew[n];
        for i in 0..n {
            let noise: f64 = (0..n).map(|j| sig[i][j] * dw[j]).sum();
            log_s[i] += (m.r + sigma_mu[i] * y - half_var[i]) * h + noise;
            out.dw[i].push(dw[i]);
        }
        out.db.push(db);
        y = y * e + model.b / a * (1.0 - e) + model.sigma * eb;
        record(&mut out, k + 1, y, &log_s);
    }
    out.prices.times = out.times.clone();
    if out.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("simulated state is not finite".into()));
    }
    Ok(out)
}

/// Filtered state and innovations on the observation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterOutput {
    pub times: Vec<f64>,
    pub y_hat: Vec<f64>,
    /// `innovations[k][i]`: `dνⁱ` over step `k`.
    pub innovations: Vec<Vec<f64>>,
    pub state: FilterState,
}

/// Excess log-returns `ΔlogS + ½diag(ΣΣ′)Δt − rΔt`, `obs[k][i]` over step `k`.
pub fn observations(spec: &PreferenceMarketSpec, prices: &PriceSeries) -> Result<Vec<Vec<f64>>> {
    prices.validate()?;
    if prices.n_assets() != spec.n() {
        return Err(Error::ValidationError(format!(
            "{} price columns for {} assets",
            prices.n_assets(),
            spec.n()
        )));
    }
    let half: Vec<f64> = spec
        .sigma
        .iter()
        .map(|row| 0.5 * row.iter().map(|s| s * s).sum::<f64>())
        .collect();
    Ok((1..prices.len())
        .map(|k| {
            let dt = prices.times[k] - prices.times[k - 1];
            (0..spec.n())
                .map(|i| {
                    (prices.prices[i][k] / prices.prices[i][k - 1]).ln() + (half[i] - spec.r) * dt
                })
                .collect()
        })
        .collect())
}

/// Runs the filter on excess log-returns. Affine in `obs`.
pub fn run_filter_observations(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    p0: f64,
    times: &[f64],
    obs: &[Vec<f64>],
    y0_hat: f64,
) -> Result<FilterOutput> {
    if times.len() != obs.len() + 1 {
        return Err(Error::ValidationError(format!(
            "{} times for {} observation steps",
            times.len(),
            obs.len()
        )));
    }
    let g = gain(spec, model, p0);
    let n = spec.n();
    let sigma_mu: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| spec.sigma[i][j] * spec.mu[j]).sum())
        .collect();
    let mut y = y0_hat;
    let mut y_hat = Vec::with_capacity(times.len());
    let mut innovations = Vec::with_capacity(obs.len());
    y_hat.push(y);
    for (k, x) in obs.iter().enumerate() {
        let dt = times[k + 1] - times[k];
        let nu: Vec<f64> = x
            .iter()
            .zip(&sigma_mu)
            .map(|(x, sm)| x - sm * y * dt)
            .collect();
        y += (model.b - model.a * y) * dt + g.iter().zip(&nu).map(|(g, v)| g * v).sum::<f64>();
        if !y.is_finite() || y.abs() > 1e150 {
            return Err(Error::NonFinite(format!(
                "filter diverged at t = {}; reduce the step",
                times[k + 1]
            )));
        }
        y_hat.push(y);
        innovations.push(nu);
    }
    Ok(FilterOutput {
        times: times.to_vec(),
        state: FilterState {
            y_hat: y,
            p: p0,
            gain: g,
        },
        y_hat,
        innovations,
    })
}

/// Runs the filter on observed prices.
pub fn run_filter(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    p0: f64,
    prices: &PriceSeries,
    y0_hat: f64,
) -> Result<FilterOutput> {
    let obs = observations(spec, prices)?;
    run_filter_observations(spec, model, p0, &prices.times, &obs, y0_hat)
}

/// Default initial estimate, the unconditional mean `b/a`.
pub fn default_y0_hat(model: &StateModelSpec) -> f64 {
    model.b / model.a
}

/// Time average of `(Y − Ŷ)²` after dropping the first `burn_in` time units.
pub fn mean_square_error(times: &[f64], y: &[f64], y_hat: &[f64], burn_in: f64) -> f64 {
    let e: Vec<f64> = times
        .iter()
        .zip(y.iter().zip(y_hat))
        .filter(|(t, _)| **t >= burn_in)
        .map(|(_, (a, b))| (a - b) * (a - b))
        .collect();
    e.iter().sum::<f64>() / e.len() as f64
}

/// Mean-square filter error over independent synthetic replicates.
///
/// Replicate `i` uses seed `cfg.seed + i` and starts from the stationary law.
pub fn filter_error_study(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    cfg: &SimConfig,
    replicates: usize,
    burn_in: f64,
) -> Result<McEstimate> {
    if replicates < 2 {
        return Err(Error::ConfigError("need at least two replicates".into()));
    }
    let p0 = steady_state_variance(spec, model)?;
    let runs = map_indexed(replicates, cfg.exec, |i| -> Result<f64> {
        let c = SimConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let path = simulate_joint(spec, model, &c, None)?;
        let out = run_filter(spec, model, p0, &path.prices, default_y0_hat(model))?;
        Ok(mean_square_error(&path.times, &path.y, &out.y_hat, burn_in))
    });
    let v: Vec<f64> = runs.into_iter().collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&v, false, cfg.seed))
}

/// Reads a price CSV with header `time,asset_1,…,asset_n`.
pub fn ingest_prices(path: impl AsRef<Path>) -> Result<PriceSeries> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_prices(file)
}

pub fn read_prices<R: std::io::Read>(reader: R) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::ParseError {
            row: 1,
            col: 1,
            msg: e.to_string(),
        })?
        .clone();
    if header.get(0) != Some("time") {
        return Err(Error::ParseError {
            row: 1,
            col: 1,
            msg: "first column must be `time`".into(),
        });
    }
    for (j, name) in header.iter().enumerate().skip(1) {
        if name != format!("asset_{j}") {
            return Err(Error::ParseError {
                row: 1,
                col: j + 1,
                msg: format!("expected `asset_{j}`, found `{name}`"),
            });
        }
    }
    let n = header.len() - 1;
    if n == 0 {
        return Err(Error::ParseError {
            row: 1,
            col: 2,
            msg: "no asset columns".into(),
        });
    }
    let mut s = PriceSeries {
        times: Vec::new(),
        prices: vec![Vec::new(); n],
    };
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::ParseError {
            row,
            col: 1,
            msg: e.to_string(),
        })?;
        if rec.len() != n + 1 {
            return Err(Error::ParseError {
                row,
                col: rec.len().min(n + 1) + 1,
                msg: format!("expected {} fields, found {}", n + 1, rec.len()),
            });
        }
        let mut vals = Vec::with_capacity(n + 1);
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::ParseError {
                row,
                col: j + 1,
                msg: format!("`{field}` is not a number"),
            })?;
            vals.push(v);
        }
        s.times.push(vals[0]);
        for (i, v) in vals[1..].iter().enumerate() {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(Error::ValidationError(format!(
                    "row {row}, column {} (asset_{}): price {v} is not positive",
                    i + 2,
                    i + 1
                )));
            }
            s.prices[i].push(*v);
        }
        if k > 0 && !(vals[0] > s.times[k - 1]) {
            return Err(Error::ValidationError(format!(
                "row {row}: time {} is not after {} (times must be increasing)",
                vals[0],
                s.times[k - 1]
            )));
        }
    }
    s.validate()?;
    Ok(s)
}

/// Writes prices in the format read by [`ingest_prices`].
pub fn write_prices<W: std::io::Write>(writer: W, prices: &PriceSeries) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string()];
    header.extend((1..=prices.n_assets()).map(|j| format!("asset_{j}")));
    w.write_record(&header).map_err(io)?;
    for k in 0..prices.len() {
        let mut row = vec![format!("{}", prices.times[k])];
        row.extend(prices.prices.iter().map(|s| format!("{}", s[k])));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}
