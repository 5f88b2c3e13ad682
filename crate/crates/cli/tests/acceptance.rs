//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Cells listed in `KNOWN_GAPS` may fail without failing the run; every other
//! failing cell makes the process exit non-zero.

use fundsep::convergence::{portfolio_convergence, rate_fit_from};
use fundsep::eigen::{eigen_residual, invariant_density, InvariantDensity};
use fundsep::feynman_kac::{
    estimate_moment_32, estimate_remainder, gaussian_f_oracle, tilted_ou_moments, FzForm,
};
use fundsep::kalman::{filter_error_study, riccati_residual, steady_state_variance};
use fundsep::model::Param;
use fundsep::quadrature::integrate_line;
use fundsep::sensitivity::{
    default_step, drift_sensitivity_lr, f_sensitivity_fd, sensitivity_report, static_sensitivity,
    static_sensitivity_fd,
};
use fundsep::verify::{self, Check};
use fundsep::*;
use statrs::function::gamma::ln_gamma;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

// tolerances
const EIGEN_RESIDUAL: f64 = 1e-10;
const SE_K: f64 = 3.0;
const CLOSED_FORM_VS_QUADRATURE: f64 = 1e-10;
const RATE_REL: f64 = 0.10;
const PORTFOLIO_RATE_REL: f64 = 0.15;
const FLOW_REL: f64 = 1e-3;
const STATIC_SENS_REL: f64 = 1e-6;
const SENS_RATE_REL: f64 = 0.20;
const RICCATI_RESIDUAL: f64 = 1e-12;
const FILTER_MSE_REL: f64 = 0.20;

// budgets
const DT: f64 = 1e-3;
const RATE_PATHS: usize = 100_000;

/// `(criterion, cell)` pairs that are known not to meet their tolerance.
const KNOWN_GAPS: &[(u32, &str)] = &[
    // the subleading mode decays at a rate comparable to λ̂ over t∈[1,6]
    (4, "inverse-bessel"),
    // the signed gap heads for a sign change just past the horizon window
    (10, "gap rate inverse-bessel a"),
];

struct Cell {
    label: String,
    passed: bool,
    detail: String,
}

fn cell(label: impl Into<String>, passed: bool, detail: impl Into<String>) -> Cell {
    Cell {
        label: label.into(),
        passed,
        detail: detail.into(),
    }
}

fn setup(kind: ModelKind) -> (PreferenceMarketSpec, StateModelSpec, DerivedConstants, f64) {
    let spec = presets::market();
    let model = presets::model(kind);
    let c = derive_constants(&spec, &model).unwrap();
    let z = presets::tilted_mean(&model, &c).unwrap();
    (spec, model, c, z)
}

fn cfg(n_paths: usize, dt: f64, seed: u64) -> SimConfig {
    SimConfig {
        n_paths,
        dt,
        seed,
        ..SimConfig::default()
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn check_cells(checks: &[Check], label: &str) -> Cell {
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    let worst = checks.iter().map(Check::z_score).fold(0.0, f64::max);
    let detail = format!(
        "{}/{} within {SE_K} SE, worst {worst:.2} SE",
        checks.len() - failed.len(),
        checks.len()
    );
    cell(label, failed.is_empty(), detail)
}

fn eigen_residuals() -> Vec<Cell> {
    ModelKind::ALL
        .iter()
        .map(|&kind| {
            let (_, model, c, _) = setup(kind);
            let grid = match kind {
                ModelKind::FilteredOu => linspace(-2.0, 3.0, 50),
                _ => linspace(0.1, 5.0, 50),
            };
            let r = eigen_residual(&model, &c, &grid).unwrap();
            cell(kind.name(), r < EIGEN_RESIDUAL, format!("residual {r:.1e}"))
        })
        .collect()
}

fn hs_identity() -> Vec<Cell> {
    ModelKind::ALL
        .iter()
        .map(|&kind| {
            let (_, model, c, _) = setup(kind);
            let points = verify::probe_points(&model, &c).unwrap();
            let checks =
                verify::hs_identity(&model, &c, &points, &[0.5, 1.0, 2.0], &cfg(20_000, DT, 200))
                    .unwrap();
            check_cells(&checks, kind.name())
        })
        .collect()
}

/// `E[e^{ηX²+ξX}]` for `X ~ N(m, s2)` by quadrature over the real line.
fn gaussian_by_quadrature(eta: f64, xi: f64, m: f64, s2: f64) -> f64 {
    let s = s2.sqrt();
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    integrate_line(
        |y: f64| (eta * (m + s * y).powi(2) + xi * (m + s * y) - 0.5 * y * y).exp() / norm,
        0.0,
        1e-14,
    )
    .unwrap()
    .value
}

fn fou_oracle() -> Vec<Cell> {
    let (_, model, c, _) = setup(ModelKind::FilteredOu);
    let points = verify::probe_points(&model, &c).unwrap();
    let times = [0.5, 2.0];
    let checks =
        verify::gaussian_oracle(&model, &c, &points, &times, &cfg(20_000, DT, 300)).unwrap();
    let mut worst: f64 = 0.0;
    for &z in &points {
        for &t in &times {
            let closed = gaussian_f_oracle(&model, &c, z, t).unwrap();
            let (m, s2) = tilted_ou_moments(&model, &c, z, t).unwrap();
            let quad = gaussian_by_quadrature(c.eta, c.xi, m, s2);
            worst = worst.max((closed - quad).abs() / quad);
        }
    }
    vec![
        check_cells(&checks, "Monte Carlo vs closed form"),
        cell(
            "closed form vs quadrature",
            worst <= CLOSED_FORM_VS_QUADRATURE,
            format!("max rel {worst:.1e}"),
        ),
    ]
}

fn rate_recovery() -> Vec<Cell> {
    let times = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    ModelKind::ALL
        .iter()
        .map(|&kind| {
            let (_, model, c, z) = setup(kind);
            let r = estimate_remainder(
                &model,
                &c,
                z,
                &times,
                &cfg(RATE_PATHS, DT, 400),
                FzForm::preferred(kind),
            )
            .unwrap();
            let fit = rate_fit_from(&c, &r.times, r.ratio).unwrap();
            let detail = format!(
                "slope {:.4} vs -{:.4}, rel {:.3}",
                fit.slope, c.lambda_hat, fit.rel_error
            );
            cell(kind.name(), fit.rel_error <= RATE_REL, detail)
        })
        .collect()
}

fn portfolio_rate() -> Vec<Cell> {
    ModelKind::ALL
        .iter()
        .map(|&kind| {
            let (spec, model, c, z) = setup(kind);
            let hs: Vec<f64> = [2.0, 4.0, 6.0].iter().map(|k| k / c.lambda_hat).collect();
            let pc =
                portfolio_convergence(&spec, &model, &c, z, &hs, &cfg(50_000, DT, 500)).unwrap();
            let detail = format!(
                "gaps {:.2e} {:.2e} {:.2e}, rel {:.3}",
                pc.gaps[0], pc.gaps[1], pc.gaps[2], pc.rel_error
            );
            cell(
                kind.name(),
                pc.decreasing && pc.rel_error <= PORTFOLIO_RATE_REL,
                detail,
            )
        })
        .collect()
}

fn flow_derivative() -> Vec<Cell> {
    let mut out = Vec::new();
    for kind in ModelKind::ALL {
        let (_, model, c, z) = setup(kind);
        let mut worst: f64 = 0.0;
        for measure in [MeasureTag::P, MeasureTag::PTilde] {
            let config = cfg(1_000, 1e-4, 600).recording(&[1.0]);
            let fs = [Functional::IntZ, Functional::IntZ2];
            let h = 1e-5;
            let run = |z0: f64| simulate(&model, &c, measure, z0, &config, &fs).unwrap();
            let (mid, up, dn) = (run(z), run(z + h), run(z - h));
            assert_eq!(up.checksum, dn.checksum);
            let formula: f64 = mid.flow_derivative(0).unwrap().iter().sum();
            let fd: f64 = (0..1_000)
                .map(|p| (up.state(p, 0) - dn.state(p, 0)) / (2.0 * h))
                .sum();
            worst = worst.max((formula - fd).abs() / fd.abs());
        }
        out.push(cell(
            kind.name(),
            worst <= FLOW_REL,
            format!("max rel {worst:.1e}"),
        ));
    }
    out
}

fn girsanov() -> Vec<Cell> {
    ModelKind::ALL
        .iter()
        .map(|&kind| {
            let (_, model, c, z) = setup(kind);
            let checks =
                verify::girsanov_mean(&model, &c, z, &[0.5, 1.0, 2.0], &cfg(20_000, DT, 700))
                    .unwrap();
            check_cells(&checks, kind.name())
        })
        .collect()
}

/// `E[Y_t^ν]` of the 3/2 process through its reciprocal, a scaled noncentral χ²
/// written as a Poisson mixture of central χ² laws.
fn moment_via_cir(b: f64, a: f64, sigma: f64, y0: f64, nu: f64, t: f64) -> f64 {
    let s2 = sigma * sigma;
    let c = s2 * (-(-b * t).exp_m1()) / (4.0 * b);
    let half_d = 2.0 * (a + s2) / s2;
    let half_lam = 0.5 * (1.0 / y0) * (-b * t).exp() / c;
    let mut sum = 0.0;
    for j in 0..5000 {
        let j = j as f64;
        let log_pois = -half_lam + j * half_lam.ln() - ln_gamma(j + 1.0);
        let term = (log_pois + ln_gamma(half_d + j - nu) - ln_gamma(half_d + j)).exp();
        sum += term;
        if j > half_lam && term < 1e-18 * sum {
            break;
        }
    }
    (2.0 * c).powf(-nu) * sum
}

fn moment_formula() -> Vec<Cell> {
    let (_, model, c, z) = setup(ModelKind::ThreeHalves);
    let orders = verify::moment_orders(&model);
    let times = [0.5, 2.0];
    let checks =
        verify::moment_formula(&model, &c, z, &orders, &times, &cfg(100_000, DT, 800)).unwrap();
    let mut worst: f64 = 0.0;
    for &nu in &orders {
        for &t in &times {
            let quad = estimate_moment_32(model.b, model.a, model.sigma, z, nu, t).unwrap();
            let series = moment_via_cir(model.b, model.a, model.sigma, z, nu, t);
            worst = worst.max((quad - series).abs() / series);
        }
    }
    vec![
        check_cells(&checks, "Monte Carlo vs formula"),
        cell(
            "formula vs Poisson-mixture series",
            worst < 1e-9,
            format!("max rel {worst:.1e}"),
        ),
    ]
}

/// `E[1/φ]` under the tilted stationary law in closed form.
fn ergodic_closed_form(c: &DerivedConstants, law: &InvariantDensity) -> f64 {
    match *law {
        // 1/φ = z^η e^{−ξ/z} against an inverse gamma law
        InvariantDensity::InverseGamma { shape, scale, .. } => {
            let log = shape * scale.ln() + ln_gamma(shape - c.eta)
                - ln_gamma(shape)
                - (shape - c.eta) * (scale + c.xi).ln();
            log.exp()
        }
        // 1/φ = e^{ηz² + ξz} against a Gaussian law
        InvariantDensity::Gaussian { mean, var } => {
            let d = 1.0 - 2.0 * c.eta * var;
            ((c.eta * mean * mean + c.xi * mean + 0.5 * c.xi * c.xi * var) / d).exp() / d.sqrt()
        }
    }
}

fn ergodic_limits() -> Vec<Cell> {
    let mut out = Vec::new();
    for kind in ModelKind::ALL {
        let (_, model, c, z) = setup(kind);
        let t = 8.0 / c.lambda_hat;
        let check = verify::ergodic_limit(&model, &c, z, t, &cfg(20_000, DT, 900)).unwrap();
        let closed = ergodic_closed_form(&c, &invariant_density(&model, &c).unwrap());
        let agree = (check.target - closed).abs() <= 1e-8 * closed;
        let detail = format!(
            "f({t:.2}) = {:.6} vs {:.6} ({:.2} SE), quadrature vs closed form {:.1e}",
            check.estimate,
            check.target,
            check.z_score(),
            (check.target - closed).abs() / closed
        );
        out.push(cell(kind.name(), check.passed && agree, detail));
    }
    out
}

fn sensitivities() -> Vec<Cell> {
    let mut out = Vec::new();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut worst: f64 = 0.0;
    for kind in ModelKind::ALL {
        let (spec, model, c, z) = setup(kind);
        for p in Param::ALL {
            let exact = static_sensitivity(&spec, &model, &c, z, p).unwrap();
            let fd = static_sensitivity_fd(&spec, &model, z, p).unwrap();
            let err = norm(
                &exact
                    .iter()
                    .zip(&fd)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            let scale = norm(&exact);
            worst = worst.max(if scale == 0.0 { err } else { err / scale });
        }
    }
    out.push(cell(
        "static analytic vs FD",
        worst <= STATIC_SENS_REL,
        format!("max rel {worst:.1e}"),
    ));

    let mut lr_cells = (0, 0, 0.0f64);
    for kind in ModelKind::ALL {
        let (spec, model, c, z) = setup(kind);
        for p in [Param::B, Param::A] {
            let config = cfg(40_000, DT, 1000);
            let lr = drift_sensitivity_lr(&model, &c, z, 1.0, p, &config).unwrap();
            let fd = f_sensitivity_fd(
                &spec,
                &model,
                z,
                1.0,
                p,
                default_step(&model, z, p),
                &config,
            )
            .unwrap();
            let k = (lr.value - fd.value).abs() / lr.combined_se(&fd);
            lr_cells.0 += 1;
            lr_cells.1 += usize::from(k <= SE_K);
            lr_cells.2 = lr_cells.2.max(k);
        }
    }
    out.push(cell(
        "LR vs FD df/db, df/da",
        lr_cells.0 == lr_cells.1,
        format!(
            "{}/{} within {SE_K} SE, worst {:.2} SE",
            lr_cells.1, lr_cells.0, lr_cells.2
        ),
    ));

    for kind in ModelKind::ALL {
        let (spec, model, c, z) = setup(kind);
        let hs: Vec<f64> = (2..=8).map(|k| k as f64 / c.lambda_hat).collect();
        for p in Param::ALL {
            let r = sensitivity_report(&spec, &model, z, p, &hs, &cfg(20_000, DT, 1100)).unwrap();
            let ok = r.decreasing(SE_K) && r.rate_rel_error() <= SENS_RATE_REL;
            let detail = format!(
                "rate {:.3} vs {:.3}, rel {:.3}, decreasing {}",
                r.free_fit.rate,
                r.theory_rate,
                r.rate_rel_error(),
                r.decreasing(SE_K)
            );
            out.push(cell(format!("gap rate {} {p}", kind.name()), ok, detail));
        }
    }
    out
}

fn kalman() -> Vec<Cell> {
    let (spec, model, _, _) = setup(ModelKind::FilteredOu);
    let p0 = steady_state_variance(&spec, &model).unwrap();
    let res = riccati_residual(&spec, &model, p0).abs();
    let config = SimConfig {
        horizon: 50.0 / model.a,
        ..cfg(2, DT, 1200)
    };
    let mse = filter_error_study(&spec, &model, &config, 16, 0.0).unwrap();
    let rel = (mse.value / p0 - 1.0).abs();
    vec![
        cell(
            "Riccati residual",
            res <= RICCATI_RESIDUAL,
            format!("{res:.1e}"),
        ),
        cell(
            "filter mean-square error",
            rel <= FILTER_MSE_REL,
            format!("{:.5} vs P0 {p0:.5}, rel {rel:.3}", mse.value),
        ),
    ]
}

fn run_cli(dir: &Path, threads: &str, out: &str, args: &[&str]) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_fundsep"))
        .current_dir(dir)
        .args(args)
        .args(["--out-dir", out])
        .env("FUNDSEP_THREADS", threads)
        .output()
        .unwrap();
    (
        o.status.code().unwrap(),
        String::from_utf8_lossy(&o.stdout).into_owned(),
    )
}

fn reproducibility() -> Vec<Cell> {
    let dir = tempfile::TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("fou.toml"),
        "[model]\nkind = \"filtered-ou\"\n[experiment]\nhorizon = 10.0\n",
    )
    .unwrap();
    std::fs::write(
        d.join("invb.toml"),
        "[model]\nkind = \"inverse-bessel\"\n[simulation]\nseed = 99\n",
    )
    .unwrap();
    let small = ["--paths", "4000", "--dt", "0.01"];
    let runs: Vec<Vec<&str>> = vec![
        vec!["derive"],
        vec!["report"],
        [&["portfolio"][..], &small].concat(),
        [&["portfolio", "--config", "invb.toml"][..], &small].concat(),
        [&["simulate"][..], &small].concat(),
        [&["rate", "--config", "invb.toml"][..], &small].concat(),
        [&["sens", "--paths", "2000", "--dt", "0.01"][..]].concat(),
        vec!["filter", "--config", "fou.toml"],
        vec!["verify-hs", "--paths", "1000", "--dt", "0.01"],
    ];
    let mut out = Vec::new();
    for args in &runs {
        let name = args.join(" ");
        let codes: Vec<i32> = [("1", "a"), ("4", "b"), ("2", "c")]
            .iter()
            .map(|(t, o)| run_cli(d, t, o, args).0)
            .collect();
        let same_code = codes.iter().all(|c| *c == codes[0]) && codes[0] != 1 && codes[0] != 2;
        let mut files = Vec::new();
        let mut identical = true;
        for entry in std::fs::read_dir(d.join("a")).unwrap() {
            let f = entry.unwrap().file_name();
            let a = std::fs::read(d.join("a").join(&f)).unwrap();
            for o in ["b", "c"] {
                identical &= std::fs::read(d.join(o).join(&f)).ok().as_ref() == Some(&a);
            }
            files.push(f);
        }
        let mut check_args = args.clone();
        check_args.push("--check");
        let (_, stdout) = run_cli(d, "3", "a", &check_args);
        let matched = stdout.contains("outputs match");
        let ok = same_code && identical && matched;
        let detail = format!(
            "exit codes {codes:?}, {} files identical {identical}, --check match {matched}",
            files.len()
        );
        out.push(cell(name, ok, detail));
        for o in ["a", "b", "c"] {
            let _ = std::fs::remove_dir_all(d.join(o));
        }
    }
    out
}

fn main() {
    let criteria: [(u32, &str, fn() -> Vec<Cell>); 12] = [
        (1, "eigen residual", eigen_residuals),
        (2, "HS decomposition identity", hs_identity),
        (3, "FOU closed-form oracle", fou_oracle),
        (4, "rate recovery", rate_recovery),
        (5, "portfolio convergence", portfolio_rate),
        (6, "flow-derivative oracle", flow_derivative),
        (7, "Girsanov martingale mean", girsanov),
        (8, "3/2 moment formula", moment_formula),
        (9, "ergodic limits", ergodic_limits),
        (10, "sensitivities", sensitivities),
        (11, "Kalman filter", kalman),
        (12, "reproducibility", reproducibility),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let start = Instant::now();
        let cells = run();
        let passed = cells.iter().all(|c| c.passed);
        println!(
            "{} {id:>2} {name} ({:.1} s)",
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        for c in &cells {
            let known = KNOWN_GAPS.contains(&(id, c.label.as_str()));
            let tag = match (c.passed, known) {
                (true, false) => "ok",
                (true, true) => "ok (listed as a known gap)",
                (false, true) => "FAIL (known gap)",
                (false, false) => "FAIL",
            };
            println!("       {:<34} {:<28} {}", c.label, tag, c.detail);
            if !c.passed && !known {
                unexpected.push(format!("criterion {id}: {}", c.label));
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
