//! Subcommand bodies. Each returns its files and a printable summary.

use crate::config::Config;
use crate::output::{key_values, num, Outcome, Table};
use fundsep::convergence::rate_fit_from;
use fundsep::eigen::eigen_residual;
use fundsep::feynman_kac::{estimate_remainder, FzForm};
use fundsep::kalman;
use fundsep::model::{DerivedConstants, ModelKind, StateModelSpec};
use fundsep::portfolio::{
    dynamic_portfolio_horizons, fund_table, static_from_funds, FundRole, StateFactor,
};
use fundsep::sensitivity::sensitivity_report;
use fundsep::verify::{self, Check};
use fundsep::{derive_constants, presets, simulate, Error, Result};
use std::fmt::Write;

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn summarize(title: &str, pairs: &[(String, String)]) -> String {
    let w = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = format!("{title}\n");
    for (k, v) in pairs {
        let _ = writeln!(s, "  {k:<w$}  {v}");
    }
    s
}

fn assets(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn nums(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| num(*x)).collect()
}

fn evaluation_point(cfg: &Config, c: &DerivedConstants) -> Result<f64> {
    match cfg.experiment.z {
        Some(z) => Ok(z),
        None => {
            c.require()?;
            presets::tilted_mean(&cfg.model, c)
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Grid on which the eigen residual is reported.
pub fn residual_grid(kind: ModelKind) -> Vec<f64> {
    match kind {
        ModelKind::FilteredOu => linspace(-2.0, 3.0, 50),
        _ => linspace(0.1, 5.0, 50),
    }
}

fn constant_rows(model: &StateModelSpec, c: &DerivedConstants) -> Vec<(String, String)> {
    vec![
        kv("kind", model.kind),
        kv("q", num(c.q)),
        kv("delta", num(c.delta)),
        kv("theta", num(c.theta)),
        kv("kappa", num(c.kappa)),
        kv("eta", num(c.eta)),
        kv("xi", num(c.xi)),
        kv("zeta", num(c.zeta)),
        kv("lambda", num(c.lambda)),
        kv("lambda_hat", num(c.lambda_hat)),
        kv("p0", c.p0.map_or(String::new(), num)),
        kv("assumption", c.assumption),
        kv("assumption_ok", c.assumption_ok),
    ]
}

pub fn derive(cfg: &Config) -> Result<Outcome> {
    let model = &cfg.model;
    let c = derive_constants(&cfg.market, model)?;
    if !c.assumption_ok {
        return Err(Error::AssumptionViolated(format!(
            "{} (theta = {}, sigma = {})",
            c.assumption,
            num(c.theta),
            num(model.sigma)
        )));
    }
    let mut rows = constant_rows(model, &c);
    rows.push(kv(
        "eigen_residual",
        num(eigen_residual(model, &c, &residual_grid(model.kind))?),
    ));
    rows.push(kv("tilted_mean", num(presets::tilted_mean(model, &c)?)));
    let mut out = Outcome {
        summary: summarize("derived constants", &rows),
        ..Outcome::default()
    };
    out.file("derive.csv", &key_values(&rows));
    Ok(out)
}

fn role_name(r: FundRole) -> &'static str {
    match r {
        FundRole::Safe => "safe",
        FundRole::Myopic => "myopic",
        FundRole::StaticHedge => "static_hedge",
        FundRole::Intertemporal => "intertemporal",
    }
}

fn factor_name(f: StateFactor) -> &'static str {
    match f {
        StateFactor::One => "1",
        StateFactor::Z => "z",
        StateFactor::InvZ => "1/z",
    }
}

pub fn portfolio(cfg: &Config) -> Result<Outcome> {
    let (spec, model) = (&cfg.market, &cfg.model);
    let c = derive_constants(spec, model)?;
    c.require()?;
    let z = evaluation_point(cfg, &c)?;
    let t = cfg.experiment.t.unwrap_or(0.0);
    let big_t = cfg.experiment.horizon.unwrap_or(5.0);
    if !(t >= 0.0 && t < big_t) {
        return Err(Error::ConfigError(format!(
            "need 0 <= t < T, got t = {t}, T = {big_t}"
        )));
    }
    let scale = cfg.myopic_scaling.factor(model.kind, z)?;
    let funds = fund_table(spec, model, &c);
    let n = spec.n();
    let dec = if cfg.static_only {
        None
    } else {
        let h = big_t - t;
        let form = FzForm::preferred(model.kind);
        Some(
            dynamic_portfolio_horizons(spec, model, &c, z, &[h], &cfg.sim(h), form)?
                .remove(0)
                .rescaled(scale),
        )
    };
    let total_static: Vec<f64> = static_from_funds(&funds, z)
        .iter()
        .map(|x| x * scale)
        .collect();
    let total = dec
        .as_ref()
        .map_or(total_static.clone(), |d| d.total_dynamic.clone());
    let cash = 1.0 - total.iter().sum::<f64>();

    let mut header = vec![
        "fund".to_string(),
        "role".into(),
        "weight".into(),
        "state_factor".into(),
    ];
    header.extend(["multiplier".to_string(), "cash".into()]);
    header.extend(assets("asset_", n));
    let mut table = Table::new(&header);
    for f in &funds {
        let multiplier = match (f.role, &dec) {
            (FundRole::Intertemporal, None) => continue,
            (FundRole::Intertemporal, Some(d)) => d.intertemporal_weight.value,
            _ => 1.0,
        };
        let mut row = vec![
            f.name.to_string(),
            role_name(f.role).into(),
            num(f.weight),
            factor_name(f.factor).into(),
        ];
        if f.role == FundRole::Safe {
            row.extend([num(1.0), num(cash)]);
            row.extend(vec![num(0.0); n]);
        } else {
            row.extend([num(multiplier), num(0.0)]);
            row.extend(f.holding(z).iter().map(|h| num(h * multiplier * scale)));
        }
        table.push(row);
    }
    let total_row = |name: &str, v: &[f64], multiplier: f64, cash: f64| {
        let mut row = vec![
            name.to_string(),
            "total".into(),
            String::new(),
            String::new(),
            num(multiplier),
            num(cash),
        ];
        row.extend(nums(v));
        row
    };
    table.push(total_row(
        "total_static",
        &total_static,
        1.0,
        1.0 - total_static.iter().sum::<f64>(),
    ));
    let mut rows = vec![
        kv("kind", model.kind),
        kv("z", num(z)),
        kv("t", num(t)),
        kv("T", num(big_t)),
        kv("myopic_scaling", cfg.myopic_scaling),
        kv("static", format!("{:?}", total_static)),
    ];
    if let Some(d) = &dec {
        let w = d.intertemporal_weight;
        table.push(total_row("total_dynamic", &d.total_dynamic, w.value, cash));
        table.push(total_row(
            "total_dynamic_se",
            &d.total_dynamic_se,
            w.std_error,
            f64::NAN,
        ));
        rows.push(kv(
            "f_z/f",
            format!("{} +/- {}", num(w.value), num(w.std_error)),
        ));
        rows.push(kv("dynamic", format!("{:?}", d.total_dynamic)));
        rows.push(kv("paths", cfg.simulation.paths));
    }
    let mut out = Outcome {
        summary: summarize("portfolio", &rows),
        ..Outcome::default()
    };
    out.file("portfolio.csv", &table);
    Ok(out)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

pub fn simulate_cmd(cfg: &Config) -> Result<Outcome> {
    let model = &cfg.model;
    let c = derive_constants(&cfg.market, model)?;
    let z = evaluation_point(cfg, &c)?;
    let measure = cfg.measure()?;
    let horizon = cfg.experiment.horizon.unwrap_or(5.0);
    let times = cfg
        .experiment
        .times
        .clone()
        .unwrap_or_else(|| linspace(0.0, horizon, 51));
    let sim = cfg.sim(horizon).recording(&times);
    let batch = simulate(model, &c, measure, z, &sim, &[])?;
    let mut stats = Table::new(&["time", "mean", "std_error", "sd", "q05", "q50", "q95"]);
    for k in 0..batch.n_times() {
        let mut col = batch.column(k);
        let est = fundsep::McEstimate::from_samples(&col, batch.antithetic, batch.seed);
        let n = col.len() as f64;
        let sd = (col.iter().map(|x| (x - est.value).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        col.sort_by(f64::total_cmp);
        let row = [
            batch.times[k],
            est.value,
            est.std_error,
            sd,
            quantile(&col, 0.05),
            quantile(&col, 0.5),
            quantile(&col, 0.95),
        ];
        stats.push(nums(&row));
    }
    let k_paths = cfg.experiment.sample_paths.unwrap_or(10).min(batch.n_paths);
    let mut header = vec!["time".to_string()];
    header.extend(assets("path_", k_paths));
    let mut paths = Table::new(&header);
    for k in 0..batch.n_times() {
        let mut row = vec![num(batch.times[k])];
        row.extend((0..k_paths).map(|p| num(batch.state(p, k))));
        paths.push(row);
    }
    let rows = vec![
        kv("kind", model.kind),
        kv("measure", measure),
        kv("z0", num(z)),
        kv("horizon", num(*batch.times.last().expect("non-empty"))),
        kv("paths", batch.n_paths),
        kv("steps", batch.steps),
        kv("clamps", batch.clamps),
        kv("checksum", format!("{:016x}", batch.checksum)),
    ];
    let mut out = Outcome {
        summary: summarize("simulation", &rows),
        ..Outcome::default()
    };
    out.file("simulate.csv", &stats);
    out.file("simulate_paths.csv", &paths);
    Ok(out)
}

pub fn rate(cfg: &Config) -> Result<Outcome> {
    let model = &cfg.model;
    let c = derive_constants(&cfg.market, model)?;
    c.require()?;
    let z = evaluation_point(cfg, &c)?;
    let times = cfg
        .experiment
        .times
        .clone()
        .unwrap_or_else(|| vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let rem = estimate_remainder(
        model,
        &c,
        z,
        &times,
        &cfg.sim(horizon),
        FzForm::preferred(model.kind),
    )?;
    let fit = rate_fit_from(&c, &rem.times, rem.ratio.clone())?;
    let mut table = Table::new(&["t", "f", "f_se", "f_z", "f_z_se", "ratio", "ratio_se"]);
    for k in 0..rem.times.len() {
        let (f, fz, r) = (rem.f[k], rem.f_z[k], rem.ratio[k]);
        table.push(nums(&[
            rem.times[k],
            f.value,
            f.std_error,
            fz.value,
            fz.std_error,
            r.value,
            r.std_error,
        ]));
    }
    let rows = vec![
        kv("kind", model.kind),
        kv("z", num(z)),
        kv("paths", cfg.simulation.paths),
        kv("dt", num(cfg.simulation.dt)),
        kv("fitted_rate", num(-fit.slope)),
        kv("lambda_hat", num(fit.analytic_rate)),
        kv("rel_error", num(fit.rel_error)),
        kv("r_squared", num(fit.r_squared)),
    ];
    let mut out = Outcome {
        summary: summarize("decay rate of f_z/f", &rows),
        ..Outcome::default()
    };
    out.file("rate.csv", &table);
    out.file("rate_summary.csv", &key_values(&rows));
    Ok(out)
}

pub fn sens(cfg: &Config) -> Result<Outcome> {
    let model = &cfg.model;
    let c = derive_constants(&cfg.market, model)?;
    c.require()?;
    let z = evaluation_point(cfg, &c)?;
    let param = cfg.parameter()?;
    let horizons = cfg
        .experiment
        .horizons
        .clone()
        .unwrap_or_else(|| (2..=8).map(|k| k as f64 / c.lambda_hat).collect());
    let horizon = horizons.iter().copied().fold(0.0, f64::max);
    let rep = sensitivity_report(&cfg.market, model, z, param, &horizons, &cfg.sim(horizon))?;
    let n = cfg.market.n();
    let mut header = vec!["T".to_string(), "gap".into(), "gap_se".into()];
    header.extend(assets("dynamic_", n));
    header.extend(assets("dynamic_se_", n));
    header.extend(assets("static_", n));
    let mut table = Table::new(&header);
    for k in 0..rep.t_grid.len() {
        let mut row = nums(&[rep.t_grid[k], rep.gap_norm[k], rep.gap_se[k]]);
        row.extend(nums(&rep.dynamic_sens[k]));
        row.extend(nums(&rep.dynamic_se[k]));
        row.extend(nums(&rep.static_sens));
        table.push(row);
    }
    let rows = vec![
        kv("kind", model.kind),
        kv("parameter", param),
        kv("z", num(z)),
        kv("theory_rate", num(rep.theory_rate)),
        kv("fitted_rate", num(rep.free_fit.rate)),
        kv("fitted_degree", num(rep.free_fit.degree)),
        kv("rate_rel_error", num(rep.rate_rel_error())),
        kv("envelope_degree", num(rep.envelope.degree)),
        kv("envelope_constant", num(rep.envelope.c)),
        kv("decreasing", rep.decreasing(3.0)),
    ];
    let mut out = Outcome {
        summary: summarize("sensitivity gap", &rows),
        ..Outcome::default()
    };
    out.file("sens.csv", &table);
    out.file("sens_summary.csv", &key_values(&rows));
    Ok(out)
}

pub fn filter(cfg: &Config) -> Result<Outcome> {
    let (spec, model) = (&cfg.market, &cfg.model);
    if model.kind != ModelKind::FilteredOu {
        return Err(Error::ConfigError(format!(
            "filter needs model kind filtered-ou, got {}",
            model.kind
        )));
    }
    let p0 = kalman::steady_state_variance(spec, model)?;
    let gain = kalman::gain(spec, model, p0);
    let n = spec.n();
    let mut rows = vec![
        kv("p0", num(p0)),
        kv(
            "riccati_residual",
            num(kalman::riccati_residual(spec, model, p0)),
        ),
    ];
    rows.extend(
        gain.iter()
            .enumerate()
            .map(|(i, g)| kv(&format!("gain_{}", i + 1), num(*g))),
    );
    let mut out = Outcome::default();
    let (prices, truth) = match &cfg.experiment.prices {
        Some(path) => (kalman::ingest_prices(path)?, None),
        None => {
            let horizon = cfg.experiment.horizon.unwrap_or(50.0 / model.a);
            let path = kalman::simulate_joint(spec, model, &cfg.sim(horizon), None)?;
            let mut bytes = Vec::new();
            kalman::write_prices(&mut bytes, &path.prices)?;
            out.files.push(("prices.csv".into(), bytes));
            (path.prices, Some(path.y))
        }
    };
    let y0_hat = kalman::default_y0_hat(model);
    let run = kalman::run_filter(spec, model, p0, &prices, y0_hat)?;
    let mut header = vec!["time".to_string(), "y_hat".into()];
    header.extend(assets("innovation_", n));
    if truth.is_some() {
        header.push("y".into());
    }
    let mut table = Table::new(&header);
    for k in 0..run.times.len() {
        let mut row = nums(&[run.times[k], run.y_hat[k]]);
        match k {
            0 => row.extend(vec![String::new(); n]),
            _ => row.extend(nums(&run.innovations[k - 1])),
        }
        if let Some(y) = &truth {
            row.push(num(y[k]));
        }
        table.push(row);
    }
    rows.push(kv("observations", run.times.len()));
    rows.push(kv("y_hat_final", num(run.state.y_hat)));
    if let Some(y) = &truth {
        let burn_in = cfg.experiment.burn_in.unwrap_or(5.0 / model.a);
        let mse = kalman::mean_square_error(&run.times, y, &run.y_hat, burn_in);
        rows.push(kv("mse", num(mse)));
        rows.push(kv("mse_over_p0", num(mse / p0)));
    }
    if let Some(reps) = cfg.experiment.replicates {
        let horizon = cfg.experiment.horizon.unwrap_or(50.0 / model.a);
        let burn_in = cfg.experiment.burn_in.unwrap_or(5.0 / model.a);
        let study = kalman::filter_error_study(spec, model, &cfg.sim(horizon), reps, burn_in)?;
        rows.push(kv("replicate_mse", num(study.value)));
        rows.push(kv("replicate_mse_se", num(study.std_error)));
    }
    out.summary = summarize("steady-state filter", &rows);
    out.file("filter.csv", &table);
    out.file("filter_summary.csv", &key_values(&rows));
    Ok(out)
}

/// The configured model for its kind, presets for the others.
fn model_for(cfg: &Config, kind: ModelKind) -> StateModelSpec {
    if cfg.model.kind == kind {
        cfg.model
    } else {
        presets::model(kind)
    }
}

pub fn verify_hs(cfg: &Config) -> Result<Outcome> {
    let times = [0.5, 1.0, 2.0];
    let mut checks: Vec<Check> = Vec::new();
    for kind in ModelKind::ALL {
        let model = model_for(cfg, kind);
        let c = derive_constants(&cfg.market, &model)?;
        c.require()?;
        let z = presets::tilted_mean(&model, &c)?;
        let points = verify::probe_points(&model, &c)?;
        let sim = cfg.sim(2.0);
        checks.extend(verify::hs_identity(&model, &c, &points, &times, &sim)?);
        checks.extend(verify::girsanov_mean(&model, &c, z, &times, &sim)?);
        match kind {
            ModelKind::ThreeHalves => {
                let orders = verify::moment_orders(&model);
                checks.extend(verify::moment_formula(
                    &model,
                    &c,
                    z,
                    &orders,
                    &[0.5, 2.0],
                    &sim,
                )?);
            }
            ModelKind::FilteredOu => {
                checks.extend(verify::gaussian_oracle(
                    &model,
                    &c,
                    &points,
                    &[0.5, 2.0],
                    &sim,
                )?);
            }
            ModelKind::InverseBessel => {}
        }
    }
    let mut table = Table::new(&[
        "suite",
        "model",
        "t",
        "z",
        "order",
        "estimate",
        "target",
        "std_error",
        "z_score",
        "passed",
    ]);
    for ch in &checks {
        let mut row = vec![ch.suite.to_string(), ch.kind.to_string()];
        row.extend(nums(&[
            ch.t,
            ch.z,
            ch.extra,
            ch.estimate,
            ch.target,
            ch.std_error,
            ch.z_score(),
        ]));
        row.push(ch.passed.to_string());
        table.push(row);
    }
    let mut rows = Vec::new();
    for suite in [
        "hs_identity",
        "girsanov_mean",
        "moment_formula",
        "gaussian_oracle",
    ] {
        let s: Vec<&Check> = checks.iter().filter(|c| c.suite == suite).collect();
        let passed = s.iter().filter(|c| c.passed).count();
        rows.push(kv(suite, format!("{passed}/{} within 3 SE", s.len())));
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    rows.push(kv("failed", failed));
    let mut out = Outcome {
        summary: summarize("oracle checks", &rows),
        failed: failed > 0,
        ..Outcome::default()
    };
    out.file("verify_hs.csv", &table);
    Ok(out)
}

pub fn report(cfg: &Config) -> Result<Outcome> {
    let spec = &cfg.market;
    let n = spec.n();
    let mut table = Table::new(&["model", "quantity", "value"]);
    let mut summary = String::new();
    for kind in ModelKind::ALL {
        let model = model_for(cfg, kind);
        let c = derive_constants(spec, &model)?;
        let mut rows = constant_rows(&model, &c);
        if c.assumption_ok {
            let z = presets::tilted_mean(&model, &c)?;
            rows.push(kv("tilted_mean", num(z)));
            rows.push(kv(
                "eigen_residual",
                num(eigen_residual(&model, &c, &residual_grid(kind))?),
            ));
            let funds = fund_table(spec, &model, &c);
            for f in &funds {
                rows.push(kv(&format!("fund_{}_weight", f.name), num(f.weight)));
            }
            let st = static_from_funds(&funds, z);
            rows.extend((0..n).map(|i| kv(&format!("static_{}", i + 1), num(st[i]))));
            if cfg.expensive {
                let times = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
                let rem = estimate_remainder(
                    &model,
                    &c,
                    z,
                    &times,
                    &cfg.sim(6.0),
                    FzForm::preferred(kind),
                )?;
                let fit = rate_fit_from(&c, &rem.times, rem.ratio)?;
                rows.push(kv("fitted_rate", num(-fit.slope)));
                rows.push(kv("rate_rel_error", num(fit.rel_error)));
            }
        }
        for (k, v) in &rows {
            table.push(vec![kind.to_string(), k.clone(), v.clone()]);
        }
        summary.push_str(&summarize(kind.name(), &rows));
    }
    let mut out = Outcome {
        summary,
        ..Outcome::default()
    };
    out.file("report.csv", &table);
    Ok(out)
}
