mod common;

use common::*;
use mixvol::hierarchy::{
    build_hierarchy, compare_marginals, conditional_restart, coupling_from_marginals,
    heston_variance_law, lattice, sample_variance_path, verify_hierarchy, HestonParams,
    HierarchicalModel, HierarchyOptions, RatioSlice, VarianceCoupling, VarianceMarginal,
};
use mixvol::market::RateCurve;
use mixvol::mc::path_rng;
use mixvol::Error;
use rand::Rng;

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[test]
fn proportional_fitting_matches_all_three_marginals() {
    let grid = lattice(0.2, 48);
    let n = grid.len();
    // a consistent triple generated from a true joint with increments
    // mildly dependent on the level
    let mut joint = vec![vec![0.0; n]; n];
    for i in 0..20 {
        let pi = (-((i as f64 - 8.0) * (i as f64 - 8.0)) / 18.0).exp();
        for d in 0..16 {
            let lam = 3.0 + 0.05 * i as f64;
            let rd = (-(d as f64) / lam).exp();
            joint[i][i + d] = pi * rd;
        }
    }
    let total: f64 = joint.iter().flatten().sum();
    for row in joint.iter_mut() {
        for c in row.iter_mut() {
            *c /= total;
        }
    }
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut r = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            p[i] += joint[i][j];
            q[j] += joint[i][j];
            if j >= i {
                r[j - i] += joint[i][j];
            }
        }
    }

    let opts = HierarchyOptions::default();
    let coup = coupling_from_marginals(0.5, 1.0, &grid, &p, &q, &r, &opts).unwrap();
    assert!(l1(&coup.row_marginal(), &p) < 1e-5, "rows off by {}", l1(&coup.row_marginal(), &p));
    assert!(l1(&coup.col_marginal(), &q) < 1e-5);
    assert!(l1(&coup.difference_marginal(), &r) < 1e-5);
    // couplings never place mass below the diagonal (variance cannot fall)
    for i in 0..n {
        for j in 0..i {
            assert_eq!(coup.matrix[i][j], 0.0);
        }
    }
}

#[test]
fn two_atom_constraints_force_the_comonotone_coupling() {
    let grid = lattice(0.12, 121);
    let n = grid.len();
    let h = grid[1] - grid[0];
    let node = |v: f64| ((v / h).round() as usize).min(n - 1);
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut r = vec![0.0; n];
    p[node(0.005)] = 0.5;
    p[node(0.045)] = 0.5;
    q[node(0.010)] = 0.5;
    q[node(0.090)] = 0.5;
    r[node(0.005)] = 0.5;
    r[node(0.045)] = 0.5;

    let coup =
        coupling_from_marginals(0.5, 1.0, &grid, &p, &q, &r, &HierarchyOptions::default())
            .unwrap();
    // only the diagonal pairing satisfies rows, columns, and differences
    let lo = coup.matrix[node(0.005)][node(0.010)];
    let hi = coup.matrix[node(0.045)][node(0.090)];
    assert!((lo - 0.5).abs() < 1e-9, "low pairing mass {lo}");
    assert!((hi - 0.5).abs() < 1e-9, "high pairing mass {hi}");
    let off: f64 = coup
        .matrix
        .iter()
        .flatten()
        .sum::<f64>()
        - lo
        - hi;
    assert!(off.abs() < 1e-9, "stray off-pairing mass {off}");
}

#[test]
fn infeasible_marginal_triples_are_reported() {
    let grid = lattice(0.12, 61);
    let n = grid.len();
    let h = grid[1] - grid[0];
    let node = |v: f64| ((v / h).round() as usize).min(n - 1);
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut r = vec![0.0; n];
    // rows and columns demand movement, the increment law forbids it
    p[node(0.005)] = 1.0;
    q[node(0.060)] = 1.0;
    r[0] = 1.0;
    assert_err_matches(
        coupling_from_marginals(0.5, 1.0, &grid, &p, &q, &r, &HierarchyOptions::default())
            .map(|_| ()),
        |e| matches!(e, Error::InfeasibleCoupling(_)),
        "contradictory triple",
    );
}

fn two_atom_slices() -> (Vec<mixvol::market::LogMoneynessDensity>, Vec<RatioSlice>) {
    let spot = vec![
        mixture_log_moneyness(0.5, 100.0, &[(0.005, 0.5), (0.045, 0.5)], 6001),
        mixture_log_moneyness(1.0, 100.0, &[(0.01, 0.5), (0.09, 0.5)], 6001),
    ];
    // the period-two ratio law shares the mixing draw: same weights,
    // increment variances
    let ratio = vec![RatioSlice {
        start: 0.5,
        density: mixture_log_moneyness(1.0, 1.0, &[(0.005, 0.5), (0.045, 0.5)], 6001),
    }];
    (spot, ratio)
}

#[test]
fn hierarchy_from_generated_slices_verifies_and_matches_atoms() {
    let (spot, ratio) = two_atom_slices();
    let model = build_hierarchy(
        &spot,
        &ratio,
        100.0,
        0.0,
        0.0,
        &RateCurve::flat(0.0),
        &HierarchyOptions::default(),
    )
    .unwrap();
    let report = verify_hierarchy(&model).unwrap();
    assert!(report.passed, "internal consistency: {:?}", report.checks);

    // first marginal concentrates half the mass near each variance atom
    let m0 = &model.marginals[0];
    let h = m0.grid[1] - m0.grid[0];
    let mass_near = |v: f64| -> f64 {
        m0.grid
            .iter()
            .zip(&m0.pmf)
            .filter(|(g, _)| (**g - v).abs() <= 2.0 * h)
            .map(|(_, p)| p)
            .sum()
    };
    assert!((mass_near(0.005) - 0.5).abs() < 0.01, "mass near 0.005: {}", mass_near(0.005));
    assert!((mass_near(0.045) - 0.5).abs() < 0.01, "mass near 0.045: {}", mass_near(0.045));
}

#[test]
fn heston_law_mean_matches_the_ode_oracle() {
    let p = HestonParams { kappa: 2.0, theta_bar: 0.04, xi: 0.3, v0: 0.09 };
    let (marginals, _, _) =
        heston_variance_law(&p, &[1.0], 0.0, 60_000, 400, 977, 256).unwrap();
    let mean: f64 = marginals[0]
        .grid
        .iter()
        .zip(&marginals[0].pmf)
        .map(|(g, p)| g * p)
        .sum();
    // E integral_0^1 v dt = theta + (v0 - theta)(1 - e^-kappa)/kappa
    let oracle = 0.06161661791908468;
    assert!(
        (mean - oracle).abs() < 7e-4,
        "integrated variance mean {mean} vs {oracle}"
    );
}

#[test]
fn empirical_couplings_are_self_consistent() {
    let p = HestonParams { kappa: 2.0, theta_bar: 0.04, xi: 0.3, v0: 0.04 };
    let (marginals, increments, couplings) =
        heston_variance_law(&p, &[0.5, 1.0], 0.0, 30_000, 300, 31, 128).unwrap();
    assert_eq!(marginals.len(), 2);
    assert_eq!(increments.len(), 1);
    assert_eq!(couplings.len(), 1);

    // the coupling is the joint itself: its marginal families coincide with
    // the stored laws exactly
    assert!(l1(&couplings[0].row_marginal(), &marginals[0].pmf) < 1e-12);
    assert!(l1(&couplings[0].col_marginal(), &marginals[1].pmf) < 1e-12);
    assert!(l1(&couplings[0].difference_marginal(), &increments[0].pmf) < 1e-12);

    let model = HierarchicalModel {
        t0: 0.0,
        x0: 100.0,
        v0: 0.0,
        rates: RateCurve::flat(0.0),
        maturities: vec![0.5, 1.0],
        marginals,
        increment_laws: increments,
        couplings,
    };
    model.validate().unwrap();
    let report = verify_hierarchy(&model).unwrap();
    assert!(report.passed, "{:?}", report.checks);
}

#[test]
fn conditional_restart_follows_the_observed_component() {
    let (spot, ratio) = two_atom_slices();
    let model = build_hierarchy(
        &spot,
        &ratio,
        100.0,
        0.0,
        0.0,
        &RateCurve::flat(0.0),
        &HierarchyOptions::default(),
    )
    .unwrap();
    // observing the low first-period variance pins the remaining path
    let restarted = conditional_restart(&model, 0, 0.005, 90.0).unwrap();
    assert_eq!(restarted.t0, 0.5);
    assert_eq!(restarted.x0, 90.0);
    assert!((restarted.v0 - 0.005).abs() < 1e-12);
    let mut rng = path_rng(7, 0);
    for _ in 0..50 {
        let path = sample_variance_path(&restarted, &mut rng);
        assert_eq!(path.len(), 1);
        // cumulative variance stays near the low component's full-year total
        assert!(
            (path[0] - 0.01).abs() < 0.002,
            "restarted path escaped the low component: {}",
            path[0]
        );
    }
}

#[test]
fn sampled_paths_have_nondecreasing_variance() {
    let (spot, ratio) = two_atom_slices();
    let model = build_hierarchy(
        &spot,
        &ratio,
        100.0,
        0.0,
        0.0,
        &RateCurve::flat(0.0),
        &HierarchyOptions::default(),
    )
    .unwrap();
    let mut rng = path_rng(11, 0);
    for _ in 0..200 {
        let path = sample_variance_path(&model, &mut rng);
        assert_eq!(path.len(), 2);
        assert!(path[0] >= 0.0);
        assert!(path[1] >= path[0] - 1e-15, "variance fell: {path:?}");
    }
}

#[test]
fn marginal_sampling_interpolates_within_cells() {
    let grid = lattice(0.1, 51);
    let mut pmf = vec![0.0; 51];
    pmf[20] = 1.0;
    let m = VarianceMarginal { maturity: 1.0, grid: grid.clone(), pmf };
    m.validate().unwrap();
    let mut rng = path_rng(3, 0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..500 {
        let v = m.sample_value(rng.gen::<f64>());
        lo = lo.min(v);
        hi = hi.max(v);
        // all mass in one cell: samples stay within half a cell of the node
        assert!((v - grid[20]).abs() <= 0.5 * (grid[1] - grid[0]) + 1e-12);
    }
    // interpolation spreads samples inside the cell rather than pinning them
    assert!(hi - lo > 0.25 * (grid[1] - grid[0]), "samples degenerate: [{lo}, {hi}]");
}

#[test]
fn marginal_and_coupling_validation_reject_bad_shapes() {
    let grid = lattice(0.1, 32);
    let bad = VarianceMarginal { maturity: 1.0, grid: grid.clone(), pmf: vec![0.1; 32] };
    assert!(bad.validate().is_err());

    let mut matrix = vec![vec![0.0; 32]; 32];
    matrix[0][0] = 1.0;
    let coup = VarianceCoupling { t_lo: 1.0, t_hi: 0.5, grid, matrix };
    // conditional rows must still normalize even for off-support queries
    let pmf = coup.conditional_pmf(0.09);
    assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn simulation_check_compares_marginals() {
    let a: Vec<f64> = (0..4000).map(|i| (i as f64 + 0.5) / 4000.0).collect();
    let b: Vec<f64> = (0..4000).map(|i| ((i as f64 + 0.5) / 4000.0).powf(1.02)).collect();
    let checks = compare_marginals(
        std::slice::from_ref(&a),
        &[b],
        &["terminal".to_string()],
        0.05,
    );
    assert_eq!(checks.len(), 1);
    assert!(checks[0].passed, "ks {}", checks[0].ks);
    let c: Vec<f64> = a.iter().map(|x| x * 0.5).collect();
    let checks = compare_marginals(&[a], &[c], &["shifted".to_string()], 0.05);
    assert!(!checks[0].passed);
}
