use fundsep::feynman_kac::RemainderPoint;
use fundsep::portfolio::*;
use fundsep::*;
use proptest::prelude::*;

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

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

/// `(Σ′)⁻¹v` by Cramer's rule for the 2×2 preset.
fn solve_t(s: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    // Σ′ = [[s00, s10], [s01, s11]]
    vec![
        (s[1][1] * v[0] - s[1][0] * v[1]) / det,
        (s[0][0] * v[1] - s[0][1] * v[0]) / det,
    ]
}

/// Static portfolio from `myopic + δ/(1−p)·hedge·(log φ)′` with a numerical derivative.
fn static_oracle(
    spec: &PreferenceMarketSpec,
    model: &StateModelSpec,
    c: &DerivedConstants,
    z: f64,
) -> Vec<f64> {
    let ep = eigenpair(model, c).unwrap();
    let h = 1e-5 * z.abs().max(1.0);
    let dlog = (ep.log_phi(z + h) - ep.log_phi(z - h)) / (2.0 * h);
    let dm = solve_t(&spec.sigma, &spec.mu);
    let dr = solve_t(&spec.sigma, &spec.rho);
    let w = 1.0 / (1.0 - spec.p);
    let (m, hedge): (f64, Vec<f64>) = match model.kind {
        ModelKind::FilteredOu => {
            let p0 = c.p0.unwrap();
            (
                z,
                dm.iter()
                    .zip(&dr)
                    .map(|(a, b)| p0 * a + model.sigma * b)
                    .collect(),
            )
        }
        _ => (1.0, dr.iter().map(|b| model.sigma * z * b).collect()),
    };
    dm.iter()
        .zip(&hedge)
        .map(|(a, hh)| w * m * a + c.delta * w * hh * dlog)
        .collect()
}

#[test]
fn static_portfolio_matches_numerical_oracle() {
    for kind in ModelKind::ALL {
        let (spec, model, c, z) = setup(kind);
        for zz in [0.3 * z, z, 2.5 * z] {
            let pi = static_portfolio(&spec, &model, &c, zz).unwrap();
            assert!(
                close(&pi, &static_oracle(&spec, &model, &c, zz), 1e-8),
                "{kind} z={zz}"
            );
        }
    }
}

#[test]
fn zero_correlation_leaves_only_myopic() {
    let mut spec = presets::market();
    spec.rho = vec![0.0, 0.0];
    for kind in [ModelKind::ThreeHalves, ModelKind::InverseBessel] {
        let model = presets::model(kind);
        let c = derive_constants(&spec, &model).unwrap();
        let z = 0.9;
        let pi = static_portfolio(&spec, &model, &c, z).unwrap();
        assert!(
            close(&pi, &myopic_portfolio(&spec, kind, z), 1e-14),
            "{kind}"
        );
    }
    // the filtered state still hedges along P₀(Σ′)⁻¹μ through the filter gain
    let model = presets::model(ModelKind::FilteredOu);
    let c = derive_constants(&spec, &model).unwrap();
    let h = hedge_direction(&spec, &model, &c, 0.9);
    let dm = spec.myopic_direction();
    assert!(close(
        &h,
        &dm.iter().map(|x| c.p0.unwrap() * x).collect::<Vec<_>>(),
        1e-14
    ));
}

#[test]
fn three_halves_static_portfolio_is_state_free() {
    let (spec, model, c, _) = setup(ModelKind::ThreeHalves);
    let first = static_portfolio(&spec, &model, &c, 0.01).unwrap();
    for z in [0.1, 0.5, 1.0, 3.0, 40.0] {
        assert_eq!(static_portfolio(&spec, &model, &c, z).unwrap(), first);
    }
}

#[test]
fn inverse_bessel_approaches_constant_part() {
    let (spec, model, c, _) = setup(ModelKind::InverseBessel);
    assert!(c.xi > 0.0);
    let w = 1.0 / (1.0 - spec.p);
    let limit: Vec<f64> = spec
        .myopic_direction()
        .iter()
        .zip(spec.rho_direction())
        .map(|(m, r)| w * m - c.delta * w * c.eta * model.sigma * r)
        .collect();
    let gaps: Vec<f64> = [10.0, 100.0, 1000.0]
        .iter()
        .map(|&z| gap_norm(&static_portfolio(&spec, &model, &c, z).unwrap(), &limit))
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2]);
    assert!((gaps[1] / gaps[2] - 10.0).abs() < 1e-6);
}

#[test]
fn fou_static_portfolio_is_affine() {
    let (spec, model, c, _) = setup(ModelKind::FilteredOu);
    let zs = [-1.0, -0.2, 0.4, 1.3, 2.0];
    let pis: Vec<Vec<f64>> = zs
        .iter()
        .map(|&z| static_portfolio(&spec, &model, &c, z).unwrap())
        .collect();
    for i in 1..zs.len() - 1 {
        for j in 0..2 {
            let left = (pis[i][j] - pis[i - 1][j]) / (zs[i] - zs[i - 1]);
            let right = (pis[i + 1][j] - pis[i][j]) / (zs[i + 1] - zs[i]);
            assert!((left - right).abs() < 1e-12);
        }
    }
}

#[test]
fn fund_counts() {
    for (kind, dynamic, fixed) in [
        (ModelKind::ThreeHalves, 4, 3),
        (ModelKind::InverseBessel, 5, 4),
        (ModelKind::FilteredOu, 5, 4),
    ] {
        let (spec, model, c, _) = setup(kind);
        let funds = fund_table(&spec, &model, &c);
        assert_eq!(funds.len(), dynamic, "{kind}");
        assert_eq!(
            funds
                .iter()
                .filter(|f| f.role != FundRole::Intertemporal)
                .count(),
            fixed,
            "{kind}"
        );
    }
}

#[test]
fn funds_rebuild_static_portfolio() {
    for kind in ModelKind::ALL {
        let (spec, model, c, z) = setup(kind);
        let funds = fund_table(&spec, &model, &c);
        for zz in [0.5 * z, z, 2.0 * z] {
            let a = static_from_funds(&funds, zz);
            let b = static_portfolio(&spec, &model, &c, zz).unwrap();
            assert!(close(&a, &b, 1e-12), "{kind}");
        }
    }
}

#[test]
fn weights_and_funds_separate() {
    for kind in ModelKind::ALL {
        let model = presets::model(kind);
        let tables: Vec<Vec<Fund>> = [-0.5, -1.0, -3.0]
            .iter()
            .map(|&p| {
                let spec = PreferenceMarketSpec {
                    p,
                    ..presets::market()
                };
                fund_table(&spec, &model, &derive_constants(&spec, &model).unwrap())
            })
            .collect();
        for t in &tables[1..] {
            for (a, b) in t.iter().zip(&tables[0]) {
                assert_eq!(a.name, b.name);
                assert_eq!(a.factor, b.factor);
                // the filtered OU θ direction depends on P₀, which is preference free
                assert!(
                    close(&a.direction, &b.direction, 1e-15),
                    "{kind} {}",
                    a.name
                );
            }
        }
        let w: Vec<f64> = tables.iter().map(|t| t[1].weight).collect();
        assert!(w[0] != w[1] && w[1] != w[2]);
    }
}

#[test]
fn decomposition_identity_and_channels() {
    for kind in ModelKind::ALL {
        let (spec, model, c, z) = setup(kind);
        let rem = RemainderPoint {
            horizon: 1.0,
            f: McEstimate::exact(1.3, 0, 0),
            f_z: McEstimate::exact(0.2, 0, 0),
            ratio: McEstimate {
                value: 0.2 / 1.3,
                std_error: 0.01,
                n_paths: 10,
                seed: 0,
            },
        };
        let d = assemble(&spec, &model, &c, z, &rem).unwrap();
        let k = c.delta / (1.0 - spec.p);
        for j in 0..2 {
            let lhs = d.total_dynamic[j] - d.total_static[j];
            let rhs = k * d.hedge_direction[j] * rem.ratio.value;
            assert!((lhs - rhs).abs() < 1e-12);
            assert!((d.via_log_u[j] - d.total_dynamic[j]).abs() < 1e-12);
            assert!(
                (d.total_dynamic_se[j] - (k * d.hedge_direction[j]).abs() * 0.01).abs() < 1e-15
            );
        }
        assert!(close(
            &d.total_static,
            &static_portfolio(&spec, &model, &c, z).unwrap(),
            1e-12
        ));
    }
}

#[test]
fn at_maturity_intertemporal_cancels_static_hedge() {
    for kind in ModelKind::ALL {
        let (spec, model, c, z) = setup(kind);
        let d = assemble(&spec, &model, &c, z, &RemainderPoint::at_maturity(&c, z)).unwrap();
        assert!(close(&d.total_dynamic, &d.myopic, 1e-12), "{kind}");
    }
    let (spec, model, c, z) = setup(ModelKind::FilteredOu);
    let rem = RemainderPoint::at_maturity(&c, z);
    assert!((rem.ratio.value - (2.0 * c.eta * z + c.xi)).abs() < 1e-15);
    let d = assemble(&spec, &model, &c, z, &rem).unwrap();
    assert!(close(
        &d.total_dynamic,
        &myopic_portfolio(&spec, ModelKind::FilteredOu, z),
        1e-12
    ));
}

#[test]
fn no_risk_premium_means_no_myopic_demand() {
    let spec = PreferenceMarketSpec {
        mu: vec![0.0, 0.0],
        ..presets::market()
    };
    for kind in [ModelKind::ThreeHalves, ModelKind::InverseBessel] {
        let model = presets::model(kind);
        let c = derive_constants(&spec, &model).unwrap();
        let d = assemble(
            &spec,
            &model,
            &c,
            1.0,
            &RemainderPoint::at_maturity(&c, 1.0),
        )
        .unwrap();
        assert!(d.myopic.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn long_horizon_dynamic_reaches_static() {
    for kind in ModelKind::ALL {
        let (spec, model, c, z) = setup(kind);
        let big_t = 8.0 / c.lambda_hat;
        let d =
            dynamic_portfolio(&spec, &model, &c, z, 0.0, big_t, &cfg(10_000, 5e-3, 17)).unwrap();
        let st = static_portfolio(&spec, &model, &c, z).unwrap();
        for j in 0..2 {
            let slack = 3.0 * d.total_dynamic_se[j] + 1e-3 * st[j].abs();
            assert!(
                (d.total_dynamic[j] - st[j]).abs() <= slack,
                "{kind} {j}: {:?} vs {st:?}",
                d.total_dynamic
            );
        }
    }
}

#[test]
fn dynamic_portfolio_checks_times() {
    let (spec, model, c, z) = setup(ModelKind::ThreeHalves);
    let err = dynamic_portfolio(&spec, &model, &c, z, 2.0, 1.0, &cfg(10, 1e-3, 1)).unwrap_err();
    assert!(matches!(err, Error::DomainError(_)));
}

#[test]
fn violated_assumption_is_reported() {
    let spec = presets::market();
    let model = StateModelSpec {
        kind: ModelKind::ThreeHalves,
        b: 1.0,
        a: -0.1,
        sigma: 0.5,
    };
    let c = derive_constants(&spec, &model).unwrap();
    assert!(matches!(
        static_portfolio(&spec, &model, &c, 1.0),
        Err(Error::AssumptionViolated(_))
    ));
}

#[test]
fn sqrt_scaling_variant() {
    assert_eq!(
        MyopicScaling::Sqrt
            .factor(ModelKind::ThreeHalves, 4.0)
            .unwrap(),
        0.5
    );
    assert!(MyopicScaling::Sqrt
        .factor(ModelKind::FilteredOu, 4.0)
        .is_err());
    assert_eq!(
        "sqrt".parse::<MyopicScaling>().unwrap(),
        MyopicScaling::Sqrt
    );
    let (spec, model, c, _) = setup(ModelKind::ThreeHalves);
    let z = 4.0;
    let d = assemble(&spec, &model, &c, z, &RemainderPoint::at_maturity(&c, z)).unwrap();
    let s = d
        .clone()
        .rescaled(MyopicScaling::Sqrt.factor(model.kind, z).unwrap());
    // myopic and static hedge scale like z^{-1/2}, the intertemporal term like z^{1/2}
    for j in 0..2 {
        assert_eq!(s.myopic[j], 0.5 * d.myopic[j]);
        assert_eq!(s.static_hedge[j], 0.5 * d.static_hedge[j]);
        assert!((s.intertemporal[j] / z.sqrt() - d.intertemporal[j] / z).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_holds_for_any_weight(kind in 0usize..3, z in 0.05f64..5.0, ratio in -3.0f64..3.0) {
        let (spec, model, c, _) = setup(ModelKind::ALL[kind]);
        let rem = RemainderPoint {
            horizon: 1.0,
            f: McEstimate::exact(1.0, 0, 0),
            f_z: McEstimate::exact(ratio, 0, 0),
            ratio: McEstimate::exact(ratio, 0, 0),
        };
        let d = assemble(&spec, &model, &c, z, &rem).unwrap();
        let k = c.delta / (1.0 - spec.p);
        for j in 0..2 {
            let lhs = d.total_dynamic[j] - d.total_static[j];
            prop_assert!((lhs - k * d.hedge_direction[j] * ratio).abs() < 1e-12);
            prop_assert!((d.via_log_u[j] - d.total_dynamic[j]).abs() < 1e-12);
        }
    }
}
