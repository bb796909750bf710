mod common;

use common::*;
use mixvol::black::OptionKind;
use mixvol::market::RateCurve;
use mixvol::mc::{
    posterior_price, posterior_weights, price_analytic, price_mc, simulate_hierarchical,
    simulate_mixture, PayoffSpec,
};
use mixvol::mixture::EuropeanOption;
use mixvol::stats::ks_two_sample;

fn atm_call() -> PayoffSpec {
    PayoffSpec::European { kind: OptionKind::Call, strike: 100.0, maturity: 1.0 }
}

#[test]
fn estimates_agree_with_closed_form_within_three_errors() {
    let model = two_atom_model(0.0, 100.0, 0.0, &[1.0]);
    let payoff = atm_call();
    let batch = simulate_mixture(&model, &[1.0], 100_000, 42, false).unwrap();
    let est = price_mc(&batch, &payoff, &model.rates, 0.0).unwrap();
    let want = 7.955649820861495;
    assert!((price_analytic(&model, &payoff).unwrap() - want).abs() < 1e-12);
    assert!(
        (est.value - want).abs() < 3.0 * est.std_error,
        "mc {} +- {} vs analytic {want}",
        est.value,
        est.std_error
    );
    assert!(est.std_error > 0.0 && est.std_error < 0.2);
}

#[test]
fn antithetic_pairing_reduces_standard_error() {
    let model = two_atom_model(0.0, 100.0, 0.0, &[1.0]);
    let payoff = atm_call();
    let plain = price_mc(
        &simulate_mixture(&model, &[1.0], 40_000, 7, false).unwrap(),
        &payoff,
        &model.rates,
        0.0,
    )
    .unwrap();
    let anti = price_mc(
        &simulate_mixture(&model, &[1.0], 40_000, 7, true).unwrap(),
        &payoff,
        &model.rates,
        0.0,
    )
    .unwrap();
    assert!(
        anti.std_error < plain.std_error,
        "antithetic {} vs plain {}",
        anti.std_error,
        plain.std_error
    );
    assert!((anti.value - 7.955649820861495).abs() < 3.0 * anti.std_error);
}

#[test]
fn same_seed_reproduces_the_batch_exactly() {
    let model = two_atom_model(0.0, 100.0, 0.02, &[0.5, 1.0]);
    let a = simulate_mixture(&model, &[0.5, 1.0], 2_000, 99, false).unwrap();
    let b = simulate_mixture(&model, &[0.5, 1.0], 2_000, 99, false).unwrap();
    for p in (0..2_000).step_by(137) {
        for t in 0..2 {
            assert_eq!(a.value(p, t), b.value(p, t));
        }
    }
    let c = simulate_mixture(&model, &[0.5, 1.0], 2_000, 100, false).unwrap();
    assert_ne!(a.value(0, 0), c.value(0, 0));
}

#[test]
fn draws_are_identical_across_worker_counts() {
    let model = two_atom_model(0.0, 100.0, 0.0, &[1.0]);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| simulate_mixture(&model, &[1.0], 10_000, 5, false).unwrap())
    };
    let one = run(1);
    let three = run(3);
    for p in (0..10_000).step_by(271) {
        assert_eq!(one.value(p, 0), three.value(p, 0), "path {p} diverged");
    }
}

#[test]
fn observation_grid_does_not_change_the_terminal_law() {
    let model = two_atom_model(0.0, 100.0, 0.0, &[1.0]);
    let coarse = simulate_mixture(&model, &[1.0], 50_000, 13, false).unwrap();
    let fine = simulate_mixture(&model, &[0.25, 0.5, 1.0], 50_000, 14, false).unwrap();
    let mut a = coarse.column(0);
    let mut b = fine.column(2);
    let ks = ks_two_sample(&mut a, &mut b);
    assert!(ks < 0.01, "terminal law moved with the observation grid: ks {ks}");
}

#[test]
fn rms_error_scales_like_inverse_square_root_of_paths() {
    let model = two_atom_model(0.0, 100.0, 0.0, &[1.0]);
    let payoff = atm_call();
    let want = 7.955649820861495;
    let sizes = [1_000usize, 4_000, 16_000, 64_000];
    let mut rms = Vec::new();
    for (si, &n) in sizes.iter().enumerate() {
        let mut sq = 0.0;
        let reps = 16;
        for r in 0..reps {
            let seed = 1_000 + (si * reps + r) as u64;
            let batch = simulate_mixture(&model, &[1.0], n, seed, false).unwrap();
            let est = price_mc(&batch, &payoff, &model.rates, 0.0).unwrap();
            sq += (est.value - want) * (est.value - want);
        }
        rms.push((sq / reps as f64).sqrt());
    }
    // least-squares slope of log rms against log n
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = rms.iter().map(|r| r.ln()).collect();
    let xm = xs.iter().sum::<f64>() / 4.0;
    let ym = ys.iter().sum::<f64>() / 4.0;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xm) * (y - ym))
        .sum::<f64>()
        / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
    assert!(
        (-0.65..=-0.35).contains(&slope),
        "convergence slope {slope}, rms {rms:?}"
    );
}

#[test]
fn forward_ratio_options_price_consistently() {
    let model = two_atom_model(0.0, 100.0, 0.03, &[0.5, 1.0]);
    let payoff = PayoffSpec::ForwardStartRatio {
        kind: OptionKind::Call,
        strike: 1.02,
        start: 0.5,
        end: 1.0,
    };
    // closed form: one Black price per component on the period variance,
    // with the period growth factor as forward
    let growth = (0.03_f64 * 0.5).exp();
    let df = (-0.03_f64).exp();
    let want = df
        * (0.5 * bs_call(growth, 1.02, 0.005) + 0.5 * bs_call(growth, 1.02, 0.045));
    let got = price_analytic(&model, &payoff).unwrap();
    assert!((got - want).abs() < 1e-12, "analytic forward-ratio {got} vs {want}");

    let batch = simulate_mixture(&model, &payoff.observation_times(), 100_000, 21, false).unwrap();
    let est = price_mc(&batch, &payoff, &model.rates, 0.0).unwrap();
    assert!(
        (est.value - want).abs() < 3.0 * est.std_error,
        "mc {} +- {} vs {want}",
        est.value,
        est.std_error
    );
}

#[test]
fn bucketed_paths_confirm_posterior_prices() {
    let model = two_atom_model(0.0, 100.0, 0.0, &[0.5, 1.0]);
    // observe the spot well below the forward at mid-life
    let x_obs = 100.0 * (-0.25_f64).exp();
    let bucket = (x_obs * (-0.05_f64).exp(), x_obs * (0.05_f64).exp());
    let opt = EuropeanOption { kind: OptionKind::Call, strike: 75.0, maturity: 1.0 };
    let want = posterior_price(&model, 0.5, bucket, &opt).unwrap();

    let batch = simulate_mixture(&model, &[0.5, 1.0], 200_000, 33, false).unwrap();
    let mut payoffs = Vec::new();
    for p in 0..200_000 {
        let x_mid = batch.value(p, 0);
        if x_mid > bucket.0 && x_mid <= bucket.1 {
            payoffs.push((batch.value(p, 1) - 75.0).max(0.0));
        }
    }
    assert!(payoffs.len() > 2_000, "only {} paths hit the bucket", payoffs.len());
    let (mean, se) = mixvol::stats::mean_se(&payoffs);
    assert!(
        (want - mean).abs() < 3.0 * se,
        "posterior {want} vs bucketed mc {mean} +- {se} ({} paths)",
        payoffs.len()
    );

    // posterior reweighting favors the high-variance component
    let w = posterior_weights(&model, 0.5, bucket).unwrap();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(w[1] > 0.95, "high-variance weight {}", w[1]);
}

#[test]
fn hierarchical_simulation_matches_mixture_law() {
    // a hierarchical model with comonotone couplings built from the
    // two-atom slices is the two-atom mixture in disguise
    let spot = vec![
        mixture_log_moneyness(0.5, 100.0, &[(0.005, 0.5), (0.045, 0.5)], 6001),
        mixture_log_moneyness(1.0, 100.0, &[(0.01, 0.5), (0.09, 0.5)], 6001),
    ];
    let ratio = vec![mixvol::hierarchy::RatioSlice {
        start: 0.5,
        density: mixture_log_moneyness(1.0, 1.0, &[(0.005, 0.5), (0.045, 0.5)], 6001),
    }];
    let hier = mixvol::hierarchy::build_hierarchy(
        &spot,
        &ratio,
        100.0,
        0.0,
        0.0,
        &RateCurve::flat(0.0),
        &mixvol::hierarchy::HierarchyOptions::default(),
    )
    .unwrap();
    let batch = simulate_hierarchical(&hier, 50_000, 17).unwrap();

    let model = two_atom_model(0.0, 100.0, 0.0, &[0.5, 1.0]);
    let reference = simulate_mixture(&model, &[0.5, 1.0], 50_000, 18, false).unwrap();
    for t in 0..2 {
        let mut a = batch.column(t);
        let mut b = reference.column(t);
        let ks = ks_two_sample(&mut a, &mut b);
        assert!(ks < 0.012, "marginal {t} diverged: ks {ks}");
    }
}

#[test]
fn batch_lookup_rejects_unknown_times() {
    let model = two_atom_model(0.0, 100.0, 0.0, &[1.0]);
    let batch = simulate_mixture(&model, &[0.5, 1.0], 100, 1, false).unwrap();
    assert!(batch.time_index(0.5).is_ok());
    assert!(batch.time_index(0.33).is_err());
    // antithetic batches need an even path count
    assert!(simulate_mixture(&model, &[1.0], 101, 1, true).is_err());
}
