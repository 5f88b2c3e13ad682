use fundsep::feynman_kac::*;
use fundsep::quadrature::integrate_line;
use fundsep::stats::mean_se;
use fundsep::*;
use proptest::prelude::*;
use statrs::function::gamma::ln_gamma;

fn setup(kind: ModelKind) -> (StateModelSpec, DerivedConstants, f64) {
    let model = presets::model(kind);
    let c = derive_constants(&presets::market(), &model).unwrap();
    let z = presets::tilted_mean(&model, &c).unwrap();
    (model, c, z)
}

fn cfg(n_paths: usize, dt: f64, seed: u64) -> SimConfig {
    SimConfig {
        n_paths,
        dt,
        seed,
        ..SimConfig::default()
    }
}

/// `E[e^{ηX²+ξX}]` for a Gaussian by quadrature on the real line.
fn gaussian_by_quadrature(eta: f64, xi: f64, m: f64, s2: f64) -> f64 {
    let s = s2.sqrt();
    let norm = (2.0 * std::f64::consts::PI * s2).sqrt();
    integrate_line(
        |y: f64| {
            let x = m + s * y;
            (eta * x * x + xi * x - 0.5 * y * y).exp() * s / norm
        },
        0.0,
        1e-13,
    )
    .unwrap()
    .value
}

/// `E[Y_t^ν]` for the 3/2 process through its reciprocal CIR: `1/Y` is a scaled
/// noncentral χ², expanded as a Poisson mixture of central χ² laws.
fn moment_via_cir(b: f64, a: f64, sigma: f64, y0: f64, nu: f64, t: f64) -> f64 {
    let s2 = sigma * sigma;
    let c = s2 * (-(-b * t).exp_m1()) / (4.0 * b);
    let half_d = 2.0 * (a + s2) / s2;
    let half_lam = 0.5 * (1.0 / y0) * (-b * t).exp() / c;
    let mut sum = 0.0;
    for j in 0..2000 {
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

#[test]
fn u_at_time_zero_is_one() {
    let (model, c, z) = setup(ModelKind::InverseBessel);
    let u = estimate_u(&model, &c, z, 0.0, &cfg(100, 1e-3, 1)).unwrap();
    assert_eq!(u.value, 1.0);
    assert_eq!(u.std_error, 0.0);
}

#[test]
fn u_without_risk_premium_is_deterministic() {
    let mut market = presets::market();
    market.mu = vec![0.0, 0.0];
    for kind in ModelKind::ALL {
        let model = presets::model(kind);
        let c = derive_constants(&market, &model).unwrap();
        let u = estimate_u(&model, &c, 0.8, 1.0, &cfg(200, 1e-2, 3)).unwrap();
        let exact = (market.p * market.r / c.delta).exp();
        assert!(
            (u.value - exact).abs() < 1e-13,
            "{kind}: {} vs {exact}",
            u.value
        );
        assert!(u.std_error < 1e-14);
    }
}

#[test]
fn hs_identity_three_halves() {
    let (model, c, z) = setup(ModelKind::ThreeHalves);
    let ep = eigenpair(&model, &c).unwrap();
    let u = estimate_u(&model, &c, z, 1.0, &cfg(20_000, 1e-3, 11)).unwrap();
    let f = estimate_f(&model, &c, z, 1.0, &cfg(20_000, 1e-3, 12)).unwrap();
    let scale = (-c.lambda).exp() * ep.phi(z);
    let hs = f.scaled(scale);
    assert!(
        (u.value - hs.value).abs() <= 3.0 * u.combined_se(&hs),
        "{u:?} vs {hs:?}"
    );
}

#[test]
fn f_at_time_zero_is_inverse_phi() {
    for kind in ModelKind::ALL {
        let (model, c, z) = setup(kind);
        let f = estimate_f(&model, &c, z, 0.0, &cfg(10, 1e-3, 1)).unwrap();
        let exact = 1.0 / eigenpair(&model, &c).unwrap().phi(z);
        assert!((f.value - exact).abs() < 1e-15 * exact);
    }
}

#[test]
fn f_requires_assumption() {
    let model = StateModelSpec {
        kind: ModelKind::ThreeHalves,
        b: 1.0,
        a: -0.1,
        sigma: 0.5,
    };
    let c = derive_constants(&presets::market(), &model).unwrap();
    assert!(!c.assumption_ok);
    let err = estimate_f(&model, &c, 1.0, 1.0, &cfg(10, 1e-2, 1)).unwrap_err();
    assert!(matches!(err, Error::AssumptionViolated(_)));
}

#[test]
fn fou_f_matches_gaussian_oracle() {
    let (model, c, z) = setup(ModelKind::FilteredOu);
    let times = [0.5, 1.0, 2.0];
    let est = estimate_f_series(&model, &c, z + 0.3, &times, &cfg(20_000, 1e-2, 5)).unwrap();
    for (t, e) in times.iter().zip(&est) {
        let exact = gaussian_f_oracle(&model, &c, z + 0.3, *t).unwrap();
        assert!(e.within(exact, 3.0), "t={t}: {e:?} vs {exact}");
    }
}

#[test]
fn three_halves_f_reaches_ergodic_limit() {
    let (model, c, z) = setup(ModelKind::ThreeHalves);
    let dens = invariant_density(&model, &c).unwrap();
    let limit = dens.expect(|x| x.powf(c.eta)).unwrap();
    let f = estimate_f(&model, &c, 0.5 * z, 20.0, &cfg(10_000, 5e-3, 8)).unwrap();
    assert!(f.within(limit, 3.0), "{f:?} vs {limit}");
}

#[test]
fn fou_f_z_at_time_zero() {
    let (model, c, z) = setup(ModelKind::FilteredOu);
    let fz = estimate_f_z(&model, &c, z, 0.0, &cfg(10, 1e-3, 1), FzForm::Tilted).unwrap();
    let exact = (2.0 * c.eta * z + c.xi) * (c.eta * z * z + c.xi * z).exp();
    assert!((fz.value - exact).abs() < 1e-15);
}

#[test]
fn fou_f_z_matches_closed_form() {
    let (model, c, z) = setup(ModelKind::FilteredOu);
    let fz = estimate_f_z(&model, &c, z, 1.5, &cfg(20_000, 1e-2, 4), FzForm::Tilted).unwrap();
    let exact = gaussian_f_z_oracle(&model, &c, z, 1.5).unwrap();
    assert!(fz.within(exact, 3.0), "{fz:?} vs {exact}");
}

#[test]
fn f_z_matches_crn_finite_difference() {
    for kind in ModelKind::ALL {
        let (model, c, z) = setup(kind);
        let t = 1.0;
        let h = if kind == ModelKind::FilteredOu {
            1e-4
        } else {
            1e-4 * z
        };
        let config = cfg(4_000, 1e-3, 21).recording(&[t]);
        let ep = eigenpair(&model, &c).unwrap();
        let end = |z0: f64| {
            let b = simulate(&model, &c, MeasureTag::PTilde, z0, &config, &[]).unwrap();
            b.column(0)
                .into_iter()
                .map(|x| (-ep.log_phi(x)).exp())
                .collect::<Vec<_>>()
        };
        let (up, dn) = (end(z + h), end(z - h));
        let fd: Vec<f64> = up
            .iter()
            .zip(&dn)
            .map(|(u, d)| (u - d) / (2.0 * h))
            .collect();
        let (fd_mean, fd_se) = mean_se(&fd, true);
        let fz = estimate_f_z(&model, &c, z, t, &config, FzForm::Tilted).unwrap();
        assert!(
            (fz.value - fd_mean).abs() <= 3.0 * fz.std_error.hypot(fd_se),
            "{kind}: {fz:?} vs {fd_mean} ± {fd_se}"
        );
    }
}

#[test]
fn tilted_and_hat_forms_agree() {
    for kind in [ModelKind::ThreeHalves, ModelKind::InverseBessel] {
        let (model, c, z) = setup(kind);
        let config = cfg(20_000, 1e-3, 31);
        let a = estimate_f_z(&model, &c, z, 1.0, &config, FzForm::Tilted).unwrap();
        let b = estimate_f_z(&model, &c, z, 1.0, &config, FzForm::Hat).unwrap();
        assert!(a.value > 0.0 && b.value > 0.0);
        assert!(
            (a.value - b.value).abs() <= 3.0 * a.combined_se(&b),
            "{kind}: {a:?} vs {b:?}"
        );
    }
}

#[test]
fn hat_form_unsupported_for_fou() {
    let (model, c, z) = setup(ModelKind::FilteredOu);
    let err = estimate_f_z(&model, &c, z, 1.0, &cfg(10, 1e-2, 1), FzForm::Hat).unwrap_err();
    assert!(matches!(err, Error::UnsupportedMeasure(_)));
}

#[test]
fn three_halves_f_z_decays_at_rate_b() {
    let (model, c, z) = setup(ModelKind::ThreeHalves);
    let times: Vec<f64> = (1..=6).map(|t| t as f64).collect();
    let est =
        estimate_f_z_series(&model, &c, z, &times, &cfg(20_000, 2e-3, 41), FzForm::Hat).unwrap();
    let y: Vec<f64> = est.iter().map(|e| e.value.ln()).collect();
    let (slope, _, _) = fundsep::stats::ols(&times, &y);
    assert!((slope + model.b).abs() <= 0.1 * model.b, "slope {slope}");
}

#[test]
fn remainder_ratio_is_consistent() {
    let (model, c, z) = setup(ModelKind::InverseBessel);
    let r = estimate_remainder(
        &model,
        &c,
        z,
        &[0.5, 1.0],
        &cfg(2_000, 1e-3, 2),
        FzForm::Tilted,
    )
    .unwrap();
    for k in 0..2 {
        assert!((r.ratio[k].value - r.f_z[k].value / r.f[k].value).abs() < 1e-12);
        assert!(r.ratio[k].std_error > 0.0);
    }
}

#[test]
fn gaussian_oracle_trivial_cases() {
    assert_eq!(gaussian_quad_exp(0.0, 0.0, 0.7, 0.3).unwrap(), 1.0);
    let (xi, m, s2) = (0.4, -0.2, 0.5);
    let v = gaussian_quad_exp(0.0, xi, m, s2).unwrap();
    assert!((v - (xi * m + 0.5 * xi * xi * s2).exp()).abs() < 1e-15);
    assert!(matches!(
        gaussian_quad_exp(1.0, 0.0, 0.0, 0.5),
        Err(Error::DomainError(_))
    ));
}

#[test]
fn gaussian_oracle_matches_quadrature() {
    let (model, c, _) = setup(ModelKind::FilteredOu);
    for (z, t) in [(0.1, 0.3), (0.5, 1.0), (1.2, 4.0), (-0.4, 2.0)] {
        let (m, s2) = tilted_ou_moments(&model, &c, z, t).unwrap();
        assert!(1.0 - 2.0 * c.eta * s2 > 0.0);
        let q = gaussian_by_quadrature(c.eta, c.xi, m, s2);
        let v = gaussian_f_oracle(&model, &c, z, t).unwrap();
        assert!((v - q).abs() < 1e-10 * v, "{v} vs {q}");
    }
}

#[test]
fn fou_oracle_denominator_is_positive_at_stationarity() {
    let (model, c, _) = setup(ModelKind::FilteredOu);
    let stationary_var = c.theta_norm2 / (2.0 * c.lambda_hat);
    assert!(2.0 * c.eta * stationary_var < 0.5);
    let (_, s2) = tilted_ou_moments(&model, &c, 0.0, 1e3).unwrap();
    assert!((s2 - stationary_var).abs() < 1e-14);
}

#[test]
fn fou_f_is_martingale_along_tilted_paths() {
    let (model, c, z) = setup(ModelKind::FilteredOu);
    let (horizon, t) = (3.0, 1.0);
    let base = gaussian_f_oracle(&model, &c, z, horizon).unwrap();
    let batch = simulate(
        &model,
        &c,
        MeasureTag::PTilde,
        z,
        &cfg(20_000, 1e-2, 9).recording(&[t]),
        &[],
    )
    .unwrap();
    let vals: Vec<f64> = batch
        .column(0)
        .into_iter()
        .map(|x| gaussian_f_oracle(&model, &c, x, horizon - t).unwrap() / base)
        .collect();
    let est = McEstimate::from_samples(&vals, true, 9);
    assert!(est.within(1.0, 3.0), "{est:?}");
}

#[test]
fn moment_formula_matches_cir_series() {
    let (b, a, sigma, y0) = (1.0, 0.5, 0.5, 1.3);
    let kappa = 2.0 * a / (sigma * sigma) + 1.0;
    for nu in [0.3, 0.5, 1.0, kappa / 2.0, kappa + 0.5] {
        for t in [0.1, 0.5, 2.0, 10.0] {
            let v = estimate_moment_32(b, a, sigma, y0, nu, t).unwrap();
            let o = moment_via_cir(b, a, sigma, y0, nu, t);
            assert!((v - o).abs() < 1e-9 * o, "nu={nu} t={t}: {v} vs {o}");
        }
    }
}

#[test]
fn moment_formula_is_continuous_at_zero() {
    let (b, a, sigma, y0, nu) = (1.0, 0.5, 0.5, 1.3, 0.7);
    let v = estimate_moment_32(b, a, sigma, y0, nu, 1e-7).unwrap();
    assert!((v - y0.powf(nu)).abs() < 1e-5);
    assert_eq!(
        estimate_moment_32(b, a, sigma, y0, nu, 0.0).unwrap(),
        y0.powf(nu)
    );
}

#[test]
fn moment_formula_rejects_upper_boundary() {
    let (a, sigma) = (0.5, 0.5);
    let kappa = 2.0 * a / (sigma * sigma) + 1.0;
    let err = estimate_moment_32(1.0, a, sigma, 1.0, kappa + 1.0, 1.0).unwrap_err();
    assert!(matches!(err, Error::ParameterOutOfRange(_)));
}

#[test]
fn moment_formula_matches_simulation() {
    let model = presets::model(ModelKind::ThreeHalves);
    let c = derive_constants(&presets::market(), &model).unwrap();
    let (y0, nu, t) = (1.0, 0.5, 1.0);
    let batch = simulate(
        &model,
        &c,
        MeasureTag::Raw,
        y0,
        &cfg(20_000, 1e-3, 13).recording(&[t]),
        &[],
    )
    .unwrap();
    let vals: Vec<f64> = batch.column(0).into_iter().map(|y| y.powf(nu)).collect();
    let est = McEstimate::from_samples(&vals, true, 13);
    let exact = estimate_moment_32(model.b, model.a, model.sigma, y0, nu, t).unwrap();
    assert!(est.within(exact, 3.0), "{est:?} vs {exact}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gaussian_formula_agrees_with_quadrature(
        eta in 0.0f64..0.4, xi in -1.0f64..1.0, m in -2.0f64..2.0, s2 in 0.01f64..1.0
    ) {
        let v = gaussian_quad_exp(eta, xi, m, s2).unwrap();
        let q = gaussian_by_quadrature(eta, xi, m, s2);
        prop_assert!((v - q).abs() < 1e-9 * v);
    }

    #[test]
    fn moment_is_positive_and_finite(nu in 0.05f64..4.5, t in 0.01f64..5.0, y0 in 0.1f64..5.0) {
        let v = estimate_moment_32(1.0, 0.5, 0.5, y0, nu, t).unwrap();
        prop_assert!(v.is_finite() && v > 0.0);
    }
}
