//! Acceptance gate: one test per release criterion, each asserting the
//! stated tolerance and printing one line with the measured numbers.

mod common;

use common::*;
use mixvol::black::OptionKind;
use mixvol::hierarchy::{
    build_hierarchy, heston_variance_law, verify_hierarchy, HestonParams, HierarchicalModel,
    HierarchyOptions, RatioSlice,
};
use mixvol::localvol::verify_projection;
use mixvol::market::RateCurve;
use mixvol::mc::{
    path_rng, posterior_price, price_mc, simulate_hierarchical, simulate_mixture, PayoffSpec,
};
use mixvol::mixture::{
    check_strong_solution, greeks, implied_vol, posterior_mixing, price_european, Admissibility,
    EuropeanOption, MixingLaw, MixtureModel,
};
use mixvol::numerics::linspace;
use mixvol::recovery::{
    calibrate_mixture, default_eta_grid, invert_laplace, CalibrationOptions, InversionEngine,
    TransformProfile,
};
use mixvol::stats::ks_two_sample;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn criterion_01_two_atom_pricing_identity() {
    let model = two_atom_model(0.0, 100.0, 0.0, &[1.0]);
    let opt = EuropeanOption { kind: OptionKind::Call, strike: 100.0, maturity: 1.0 };
    let analytic = price_european(&model, &opt).unwrap();
    let reference = 0.5 * bs_call(100.0, 100.0, 0.01) + 0.5 * bs_call(100.0, 100.0, 0.09);
    let gap = (analytic - reference).abs();
    assert!(gap <= 1e-10, "analytic gap {gap}");

    let payoff = PayoffSpec::European { kind: OptionKind::Call, strike: 100.0, maturity: 1.0 };
    let batch = simulate_mixture(&model, &[1.0], 100_000, 4242, false).unwrap();
    let est = price_mc(&batch, &payoff, &model.rates, 0.0).unwrap();
    let dev = (est.value - reference).abs();
    assert!(
        dev <= 3.0 * est.std_error,
        "mc {} +- {} vs {reference}",
        est.value,
        est.std_error
    );
    println!(
        "PASS criterion 1: weighted-closed-form gap {gap:.2e}; mc {:.4} +- {:.4} vs {reference:.4} ({:.2} se)",
        est.value,
        est.std_error,
        dev / est.std_error
    );
}

#[test]
fn criterion_02_transform_roundtrip() {
    // smooth roundtrip: Gamma(2, 0.02) inverted on 512 cells
    let theta = linspace(0.3 / 2000.0, 0.3, 512);
    let cell = theta[1] - theta[0];
    let gamma = TransformProfile::from_closed_form(1.0, default_eta_grid(&theta), |s: Complex64| {
        (Complex64::new(1.0, 0.0) + 0.02 * s).powf(-2.0)
    });
    let gamma_cdf = |t: f64| {
        let z = t / 0.02;
        1.0 - (1.0 + z) * (-z).exp()
    };
    let talbot = invert_laplace(&gamma, &theta, InversionEngine::Talbot { nodes: 32 }).unwrap();
    let mut linf_talbot = 0.0_f64;
    for (i, &t) in talbot.grid.iter().enumerate() {
        linf_talbot = linf_talbot.max((talbot.cdf[i] - gamma_cdf(t)).abs());
    }
    assert!(linf_talbot < 1e-3, "talbot-32 gamma cdf sup error {linf_talbot}");

    let auto = invert_laplace(&gamma, &theta, InversionEngine::Auto).unwrap();
    let mut linf_auto = 0.0_f64;
    for (i, &t) in auto.grid.iter().enumerate() {
        linf_auto = linf_auto.max((auto.cdf[i] - gamma_cdf(t)).abs());
    }
    assert!(linf_auto < 1e-3, "auto gamma cdf sup error {linf_auto}");

    // atomic fixtures: atom locations within one grid cell
    let dirac = TransformProfile::from_closed_form(1.0, default_eta_grid(&theta), |s| {
        (-0.04 * s).exp()
    });
    let rec = invert_laplace(&dirac, &theta, InversionEngine::Auto).unwrap();
    let atoms = rec.atoms.expect("dirac not atomic");
    let dirac_err = (atoms[0].0 - 0.04_f64).abs();
    assert!(dirac_err < cell, "dirac atom error {dirac_err} vs cell {cell}");

    let two = TransformProfile::from_closed_form(1.0, default_eta_grid(&theta), |s| {
        0.5 * (-0.01 * s).exp() + 0.5 * (-0.09 * s).exp()
    });
    let rec = invert_laplace(&two, &theta, InversionEngine::Auto).unwrap();
    let atoms = rec.atoms.expect("two-atom law not atomic");
    let two_err = (atoms[0].0 - 0.01_f64).abs().max((atoms[1].0 - 0.09_f64).abs());
    assert!(two_err < cell, "two-atom location error {two_err} vs cell {cell}");
    println!(
        "PASS criterion 2: gamma cdf Linf {linf_talbot:.2e} (talbot-32) / {linf_auto:.2e} (auto); \
         atom errors {dirac_err:.1e} dirac, {two_err:.1e} two-atom (cell {cell:.1e})"
    );
}

#[test]
fn criterion_03_calibration_reprice() {
    let slices = vec![
        mixture_log_moneyness(0.5, 100.0, &[(0.005, 0.5), (0.045, 0.5)], 6001),
        mixture_log_moneyness(1.0, 100.0, &[(0.01, 0.5), (0.09, 0.5)], 6001),
    ];
    let rates = RateCurve::flat(0.0);
    let (model, report) =
        calibrate_mixture(&slices, 100.0, 0.0, &rates, &CalibrationOptions::default()).unwrap();
    let mut worst = 0.0_f64;
    for &(t, scale) in &[(0.5, 0.5), (1.0, 1.0)] {
        for i in 0..21 {
            let y = -0.45 + 0.9 * i as f64 / 20.0;
            let k = 100.0 * y.exp();
            let want =
                0.5 * bs_call(100.0, k, 0.01 * scale) + 0.5 * bs_call(100.0, k, 0.09 * scale);
            let opt = EuropeanOption { kind: OptionKind::Call, strike: k, maturity: t };
            let got = price_european(&model, &opt).unwrap();
            worst = worst.max((got - want).abs() / want);
        }
    }
    assert!(worst <= 1e-3, "worst reprice error {worst}");
    println!(
        "PASS criterion 3: worst reprice {worst:.2e} over 42 strikes, engines [{}]",
        report.slice_engines.join(", ")
    );
}

#[test]
fn criterion_04_projection_marginals() {
    let model = two_atom_model(0.0, 100.0, 0.0, &[0.5, 1.0]);
    let report = verify_projection(&model, &[0.5, 1.0], 100_000, 400, 904, 1.0, 0.01).unwrap();
    assert!(report.passed, "faithful projection rejected: {:?}", report.checks);
    let ks: Vec<String> = report
        .checks
        .iter()
        .map(|c| format!("{:.4}@{}", c.ks, c.maturity))
        .collect();

    let control = verify_projection(&model, &[0.5, 1.0], 100_000, 400, 904, 1.2, 0.01).unwrap();
    assert!(!control.passed, "inflated-variance control not flagged");
    let ctrl_ks = control
        .checks
        .iter()
        .map(|c| c.ks)
        .fold(0.0_f64, f64::max);
    println!(
        "PASS criterion 4: ks {} (threshold 0.01); +20% variance control flagged at ks {ctrl_ks:.3}",
        ks.join(", ")
    );
}

#[test]
fn criterion_05_sticky_delta_smile() {
    let base = two_atom_model(0.0, 100.0, 0.02, &[0.5, 1.0]);
    let mut worst = 0.0_f64;
    for &scale in &[0.5, 2.0] {
        let mut scaled = base.clone();
        scaled.x0 = 100.0 * scale;
        for &t in &[0.5, 1.0] {
            let fb = base.forward(t).unwrap();
            let fs = scaled.forward(t).unwrap();
            for i in 0..9 {
                let y = -0.4 + 0.8 * i as f64 / 8.0;
                let ob = EuropeanOption { kind: OptionKind::Call, strike: fb * y.exp(), maturity: t };
                let os = EuropeanOption { kind: OptionKind::Call, strike: fs * y.exp(), maturity: t };
                let iv_b = implied_vol(&base, &ob).unwrap();
                let iv_s = implied_vol(&scaled, &os).unwrap();
                worst = worst.max((iv_b - iv_s).abs());
            }
        }
    }
    assert!(worst <= 1e-8, "smile moved by {worst} in implied vol");
    println!(
        "PASS criterion 5: implied vol drift {worst:.2e} under spot x0.5 / x2 (tolerance 1e-8)"
    );
}

#[test]
fn criterion_06_hierarchy_from_generated_slices() {
    let spot = vec![
        mixture_log_moneyness(0.5, 100.0, &[(0.005, 0.5), (0.045, 0.5)], 6001),
        mixture_log_moneyness(1.0, 100.0, &[(0.01, 0.5), (0.09, 0.5)], 6001),
    ];
    let ratio = vec![RatioSlice {
        start: 0.5,
        density: mixture_log_moneyness(1.0, 1.0, &[(0.005, 0.5), (0.045, 0.5)], 6001),
    }];
    let hier = build_hierarchy(
        &spot,
        &ratio,
        100.0,
        0.0,
        0.0,
        &RateCurve::flat(0.0),
        &HierarchyOptions::default(),
    )
    .unwrap();
    verify_hierarchy(&hier).map(|r| assert!(r.passed)).unwrap();

    let sim = simulate_hierarchical(&hier, 100_000, 606).unwrap();
    let model = two_atom_model(0.0, 100.0, 0.0, &[0.5, 1.0]);
    let reference = simulate_mixture(&model, &[0.5, 1.0], 100_000, 607, false).unwrap();

    let mut results = Vec::new();
    for (label, idx) in [("X(0.5)", 0usize), ("X(1)", 1)] {
        let mut a = sim.column(idx);
        let mut b = reference.column(idx);
        let ks = ks_two_sample(&mut a, &mut b);
        assert!(ks < 0.01, "{label} diverged: ks {ks}");
        results.push(format!("{label} {ks:.4}"));
    }
    let mut a: Vec<f64> = (0..100_000)
        .map(|p| (sim.value(p, 1) / sim.value(p, 0)).ln())
        .collect();
    let mut b: Vec<f64> = (0..100_000)
        .map(|p| (reference.value(p, 1) / reference.value(p, 0)).ln())
        .collect();
    let ks = ks_two_sample(&mut a, &mut b);
    assert!(ks < 0.01, "period ratio diverged: ks {ks}");
    results.push(format!("log-ratio {ks:.4}"));
    println!(
        "PASS criterion 6: ks {} at 100000 paths (threshold 0.01)",
        results.join(", ")
    );
}

#[test]
fn criterion_07_square_root_variance_target() {
    let p = HestonParams { kappa: 2.0, theta_bar: 0.04, xi: 0.3, v0: 0.04 };
    let mats = [0.5, 1.0];
    let (marginals, increments, couplings) =
        heston_variance_law(&p, &mats, 0.0, 200_000, 500, 777, 512).unwrap();
    let hier = HierarchicalModel {
        t0: 0.0,
        x0: 100.0,
        v0: 0.0,
        rates: RateCurve::flat(0.0),
        maturities: mats.to_vec(),
        marginals,
        increment_laws: increments,
        couplings,
    };
    hier.validate().unwrap();
    let sim = simulate_hierarchical(&hier, 100_000, 1213).unwrap();

    // independent direct reference: same variance scheme, exact lognormal
    // spot conditional on each period's integrated variance
    let n_ref = 100_000;
    let steps = 500usize;
    let dt = 1.0 / steps as f64;
    let mut ref_x: Vec<[f64; 2]> = Vec::with_capacity(n_ref);
    for path in 0..n_ref {
        let mut rng = path_rng(0xd1ce, path as u64);
        let mut v = p.v0;
        let mut acc = 0.0;
        let mut cum = [0.0; 2];
        for step in 0..steps {
            let t = (step + 1) as f64 * dt;
            let z: f64 = StandardNormal.sample(&mut rng);
            acc += v.max(0.0) * dt;
            v += p.kappa * (p.theta_bar - v.max(0.0)) * dt
                + p.xi * v.max(0.0).sqrt() * dt.sqrt() * z;
            if (t - 0.5).abs() < 0.5 * dt {
                cum[0] = acc;
            }
        }
        cum[1] = acc;
        let mut x = 100.0_f64;
        let mut prev = 0.0;
        let mut out = [0.0; 2];
        for k in 0..2 {
            let dv = (cum[k] - prev).max(0.0);
            prev = cum[k];
            let z: f64 = StandardNormal.sample(&mut rng);
            x *= (-0.5 * dv + dv.sqrt() * z).exp();
            out[k] = x;
        }
        ref_x.push(out);
    }

    let mut results = Vec::new();
    for (label, idx) in [("X(0.5)", 0usize), ("X(1)", 1)] {
        let mut a = sim.column(idx);
        let mut b: Vec<f64> = ref_x.iter().map(|r| r[idx]).collect();
        let ks = ks_two_sample(&mut a, &mut b);
        assert!(ks < 0.015, "{label}: ks {ks}");
        results.push(format!("{label} {ks:.4}"));
    }
    let mut a: Vec<f64> = (0..100_000)
        .map(|p| (sim.value(p, 1) / sim.value(p, 0)).ln())
        .collect();
    let mut b: Vec<f64> = ref_x.iter().map(|r| (r[1] / r[0]).ln()).collect();
    let ks = ks_two_sample(&mut a, &mut b);
    assert!(ks < 0.015, "log ratio: ks {ks}");
    results.push(format!("log-ratio {ks:.4}"));
    println!(
        "PASS criterion 7: ks {} vs direct square-root-variance reference (threshold 0.015)",
        results.join(", ")
    );
}

#[test]
fn criterion_08_posterior_conditioning() {
    let model = two_atom_model(0.0, 100.0, 0.0, &[0.5, 1.0]);

    // point conditioning: weights renormalize exactly
    let x1 = 100.0 * (-0.5_f64).exp();
    let post = posterior_mixing(&model, 1.0, x1).unwrap();
    let (sum, w_hi) = match &post {
        MixingLaw::Atoms(atoms) => (atoms.iter().map(|a| a.1).sum::<f64>(), atoms[1].1),
        _ => unreachable!(),
    };
    assert_eq!(sum, 1.0, "posterior weights sum {sum}");
    assert!((w_hi - 0.9999547154257632).abs() < 1e-12);

    // conditional price vs brute-force bucketed paths
    let x_obs = 100.0 * (-0.25_f64).exp();
    let bucket = (x_obs * (-0.05_f64).exp(), x_obs * (0.05_f64).exp());
    let opt = EuropeanOption { kind: OptionKind::Call, strike: 75.0, maturity: 1.0 };
    let conditional = posterior_price(&model, 0.5, bucket, &opt).unwrap();

    let n = 400_000;
    let batch = simulate_mixture(&model, &[0.5, 1.0], n, 3131, false).unwrap();
    let mut payoffs = Vec::new();
    for p in 0..n {
        let mid = batch.value(p, 0);
        if mid > bucket.0 && mid <= bucket.1 {
            payoffs.push((batch.value(p, 1) - 75.0).max(0.0));
        }
    }
    let (mean, se) = mixvol::stats::mean_se(&payoffs);
    let gap = (conditional - mean).abs();
    assert!(
        gap <= 3.0 * se,
        "conditional {conditional} vs bucketed {mean} +- {se} ({} paths)",
        payoffs.len()
    );
    println!(
        "PASS criterion 8: weights sum exactly 1, high-variance weight {w_hi:.10}; \
         conditional price {conditional:.4} vs bucketed mc {mean:.4} +- {se:.4} ({} paths, {:.2} se)",
        payoffs.len(),
        gap / se
    );
}

#[test]
fn criterion_09_greeks_against_finite_differences() {
    let model = two_atom_model(0.0, 100.0, 0.03, &[0.5, 1.0]);
    let h = 0.05;
    let mut worst = 0.0_f64;
    for &t in &[0.5, 1.0] {
        for &k in &[80.0, 90.0, 100.0, 110.0, 120.0] {
            let opt = EuropeanOption { kind: OptionKind::Call, strike: k, maturity: t };
            let g = greeks(&model, &opt).unwrap();
            let reprice = |x0: f64| {
                let mut m = model.clone();
                m.x0 = x0;
                price_european(&m, &opt).unwrap()
            };
            let up = reprice(100.0 + h);
            let dn = reprice(100.0 - h);
            let mid = reprice(100.0);
            let fd_delta = (up - dn) / (2.0 * h);
            let fd_gamma = (up - 2.0 * mid + dn) / (h * h);
            worst = worst.max((g.delta - fd_delta).abs() / fd_delta.abs());
            worst = worst.max((g.gamma - fd_gamma).abs() / fd_gamma.abs());

            // vega per component against a component-volatility bump
            let hv = 1e-5;
            for (i, &rate) in [0.01_f64, 0.09].iter().enumerate() {
                let sigma = rate.sqrt();
                let bump = |s: f64| {
                    let mixing = MixingLaw::atoms(vec![(0.01, 0.5), (0.09, 0.5)]).unwrap();
                    let mut incs =
                        vec![vec![0.005, 0.005], vec![0.045, 0.045]];
                    incs[i] = vec![s * s * 0.5, s * s * 0.5];
                    let m = MixtureModel::new(
                        mixing,
                        vec![0.5, 1.0],
                        incs,
                        0.0,
                        100.0,
                        RateCurve::flat(0.03),
                    )
                    .unwrap();
                    price_european(&m, &opt).unwrap()
                };
                let fd = (bump(sigma + hv) - bump(sigma - hv)) / (2.0 * hv);
                worst = worst.max((g.vega_profile[i] - fd).abs() / fd.abs());
            }
        }
    }
    assert!(worst <= 1e-4, "worst relative greek error {worst}");
    println!(
        "PASS criterion 9: worst delta/gamma/vega relative error {worst:.2e} over 5 strikes x 2 maturities"
    );
}

#[test]
fn criterion_10_admissibility_bound() {
    let model = two_atom_model(0.0, 100.0, 0.0, &[1.0]);
    let f = |_: usize| 0.3;
    let value = match check_strong_solution(&model, Some(&f), 1.0).unwrap() {
        Admissibility::Finite { value } => value,
        Admissibility::Divergent { detail } => panic!("compact fixture divergent: {detail}"),
    };
    assert!((value - 6.0496474644129465).abs() < 1e-12, "integral {value}");

    // heavy tail: density e^{-theta/2} against growth e^{C0 theta}
    let theta: Vec<f64> = (0..400).map(|i| 0.01 + 30.0 * i as f64 / 399.0).collect();
    let raw: Vec<f64> = theta.iter().map(|&t| (-0.5 * t).exp()).collect();
    let mass = mixvol::numerics::trapezoid(&theta, &raw);
    let density: Vec<f64> = raw.iter().map(|d| d / mass).collect();
    let mixing = MixingLaw::grid(theta.clone(), density).unwrap();
    let increments: Vec<Vec<f64>> = theta.iter().map(|&t| vec![t]).collect();
    let heavy = MixtureModel::new(
        mixing,
        vec![1.0],
        increments,
        0.0,
        100.0,
        RateCurve::flat(0.0),
    )
    .unwrap();
    let detail = match check_strong_solution(&heavy, None, 1.0).unwrap() {
        Admissibility::Divergent { detail } => detail,
        Admissibility::Finite { value } => panic!("heavy tail accepted: {value}"),
    };
    println!(
        "PASS criterion 10: compact fixture integral {value:.12} (= e^1.8); heavy tail rejected ({detail})"
    );
}

// keep the rng import exercised even if reference construction changes
#[allow(dead_code)]
fn _rng_probe() -> f64 {
    path_rng(0, 0).gen::<f64>()
}
