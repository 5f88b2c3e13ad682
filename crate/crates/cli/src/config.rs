//! Configuration file, resolved against presets and command-line overrides.

use fundsep::dynamics::MeasureTag;
use fundsep::market::PreferenceMarketSpec;
use fundsep::model::{ModelKind, Param, StateModelSpec};
use fundsep::portfolio::MyopicScaling;
use fundsep::sde::{Scheme, SimConfig};
use fundsep::{presets, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub mu: Option<Vec<f64>>,
    pub sigma: Option<Vec<Vec<f64>>>,
    pub rho: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Option<String>,
    pub b: Option<f64>,
    pub a: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub antithetic: Option<bool>,
    /// `implicit-reciprocal`, `euler` or `exact-ou`.
    pub scheme: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Evaluation state; defaults to the tilted stationary mean.
    pub z: Option<f64>,
    /// Current time `t` of the portfolio query.
    pub t: Option<f64>,
    /// Maturity `T` (portfolio) or simulated horizon (simulate, filter).
    pub horizon: Option<f64>,
    /// Time grid of `rate` and record times of `simulate`.
    pub times: Option<Vec<f64>>,
    /// Maturities of `sens`.
    pub horizons: Option<Vec<f64>>,
    pub parameter: Option<String>,
    /// `P`, `P~`, `P^` or `raw` for `simulate`.
    pub measure: Option<String>,
    /// Paths written out by `simulate`.
    pub sample_paths: Option<usize>,
    pub replicates: Option<usize>,
    pub burn_in: Option<f64>,
    /// Price CSV for `filter`; synthetic prices are simulated when absent.
    pub prices: Option<String>,
    pub myopic_scaling: Option<String>,
}

/// Values given on the command line, which take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub expensive: bool,
    pub static_only: bool,
    pub myopic_scaling: Option<String>,
}

/// Simulation budget without `--expensive`.
pub const DESK_PATHS: usize = 20_000;
pub const DESK_DT: f64 = 2e-3;
/// Simulation budget with `--expensive`.
pub const FULL_PATHS: usize = 100_000;
pub const FULL_DT: f64 = 1e-3;
pub const DEFAULT_SEED: u64 = 20240601;

#[derive(Debug, Clone, Serialize)]
pub struct Simulation {
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub scheme: Option<Scheme>,
}

/// Fully resolved configuration; its JSON form is what the manifest hashes.
#[derive(Debug, Clone, Serialize)]
pub struct Config {
    pub market: PreferenceMarketSpec,
    pub model: StateModelSpec,
    pub simulation: Simulation,
    pub experiment: ExperimentSection,
    pub myopic_scaling: MyopicScaling,
    pub expensive: bool,
    pub static_only: bool,
}

impl Config {
    pub fn sim(&self, horizon: f64) -> SimConfig {
        SimConfig {
            dt: self.simulation.dt,
            horizon,
            n_paths: self.simulation.paths,
            seed: self.simulation.seed,
            scheme: self.simulation.scheme,
            antithetic: self.simulation.antithetic,
            ..SimConfig::default()
        }
    }

    pub fn parameter(&self) -> Result<Param> {
        self.experiment.parameter.as_deref().unwrap_or("b").parse()
    }

    pub fn measure(&self) -> Result<MeasureTag> {
        match self.experiment.measure.as_deref().unwrap_or("P~") {
            "P" => Ok(MeasureTag::P),
            "P~" => Ok(MeasureTag::PTilde),
            "P^" => Ok(MeasureTag::PHat),
            "raw" => Ok(MeasureTag::Raw),
            other => Err(Error::ConfigError(format!(
                "unknown measure `{other}` (P, P~, P^, raw)"
            ))),
        }
    }

    /// SHA-256 of the resolved configuration together with the command.
    pub fn hash(&self, command: &str) -> String {
        let json = serde_json::to_string(&(command, self)).expect("configuration serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.chars().rev().take_while(|&c| c != '\n').count() + 1;
    (line, col)
}

pub fn parse(text: &str) -> Result<ConfigFile> {
    toml::from_str(text).map_err(|e| {
        let (row, col) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::ParseError {
            row,
            col,
            msg: e.message().to_string(),
        }
    })
}

pub fn load(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            parse(&text).map_err(|e| match e {
                Error::ParseError { row, col, msg } => {
                    Error::ConfigError(format!("{}: line {row}, column {col}: {msg}", p.display()))
                }
                other => other,
            })
        }
    }
}

fn scheme(name: &str) -> Result<Scheme> {
    match name {
        "implicit-reciprocal" => Ok(Scheme::ImplicitReciprocal),
        "euler" => Ok(Scheme::EulerFullTruncation),
        "exact-ou" => Ok(Scheme::ExactOu),
        other => Err(Error::ConfigError(format!(
            "unknown scheme `{other}` (implicit-reciprocal, euler, exact-ou)"
        ))),
    }
}

pub fn resolve(file: ConfigFile, o: &Overrides) -> Result<Config> {
    let m = presets::market();
    let market = PreferenceMarketSpec {
        p: file.market.p.unwrap_or(m.p),
        r: file.market.r.unwrap_or(m.r),
        mu: file.market.mu.unwrap_or(m.mu),
        sigma: file.market.sigma.unwrap_or(m.sigma),
        rho: file.market.rho.unwrap_or(m.rho),
    };
    let kind: ModelKind = file
        .model
        .kind
        .as_deref()
        .unwrap_or("three-halves")
        .parse()?;
    let d = presets::model(kind);
    let model = StateModelSpec {
        kind,
        b: file.model.b.unwrap_or(d.b),
        a: file.model.a.unwrap_or(d.a),
        sigma: file.model.sigma.unwrap_or(d.sigma),
    };
    let s = file.simulation;
    let (paths, dt) = if o.expensive {
        (FULL_PATHS, FULL_DT)
    } else {
        (DESK_PATHS, DESK_DT)
    };
    let simulation = Simulation {
        paths: o.paths.or(s.paths).unwrap_or(paths),
        dt: o.dt.or(s.dt).unwrap_or(dt),
        seed: o.seed.or(s.seed).unwrap_or(DEFAULT_SEED),
        antithetic: s.antithetic.unwrap_or(true),
        scheme: s.scheme.as_deref().map(scheme).transpose()?,
    };
    let myopic_scaling = o
        .myopic_scaling
        .as_deref()
        .or(file.experiment.myopic_scaling.as_deref())
        .unwrap_or("linear")
        .parse()?;
    let cfg = Config {
        market,
        model,
        simulation,
        experiment: file.experiment,
        myopic_scaling,
        expensive: o.expensive,
        static_only: o.static_only,
    };
    // surface bad values before any work starts
    cfg.sim(1.0).validate()?;
    cfg.parameter()?;
    cfg.measure()?;
    Ok(cfg)
}
