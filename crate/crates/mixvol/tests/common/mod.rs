#![allow(dead_code)]

use mixvol::black::{self, OptionKind};
use mixvol::market::{LogMoneynessDensity, RateCurve};
use mixvol::mixture::{MixingLaw, MixtureModel};
use mixvol::Result;

pub const SQRT_2PI: f64 = 2.5066282746310002;

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = (x - mean) / var.sqrt();
    (-0.5 * z * z).exp() / (var.sqrt() * SQRT_2PI)
}

pub fn bs_call(f: f64, k: f64, v: f64) -> f64 {
    black::price(OptionKind::Call, f, k, v)
}

/// Two-component lognormal mixture with variance rates 0.01 and 0.09 and
/// equal weights, the standard fixture throughout the suite.
pub fn two_atom_model(t0: f64, x0: f64, rate: f64, maturities: &[f64]) -> MixtureModel {
    let mixing = MixingLaw::atoms(vec![(0.01, 0.5), (0.09, 0.5)]).unwrap();
    let mut increments = Vec::new();
    for &(theta, _) in &[(0.01, 0.5), (0.09, 0.5)] {
        let mut prev = t0;
        let row: Vec<f64> = maturities
            .iter()
            .map(|&t| {
                let inc = theta * (t - prev);
                prev = t;
                inc
            })
            .collect();
        increments.push(row);
    }
    MixtureModel::new(
        mixing,
        maturities.to_vec(),
        increments,
        t0,
        x0,
        RateCurve::flat(rate),
    )
    .unwrap()
}

/// Exact log-moneyness density of a mixture: each component contributes a
/// normal in y = log(x/F) with mean -v/2 and variance v (total variance v).
pub fn mixture_log_moneyness(
    maturity: f64,
    forward: f64,
    comps: &[(f64, f64)],
    n: usize,
) -> LogMoneynessDensity {
    let sd_max = comps
        .iter()
        .map(|&(v, _)| v.sqrt())
        .fold(0.0_f64, f64::max);
    let lo = -8.5 * sd_max - 0.5 * comps.iter().map(|c| c.0).fold(0.0_f64, f64::max);
    let hi = 8.5 * sd_max;
    let grid: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let density: Vec<f64> = grid
        .iter()
        .map(|&y| {
            comps
                .iter()
                .map(|&(v, w)| w * normal_pdf(y, -0.5 * v, v))
                .sum()
        })
        .collect();
    LogMoneynessDensity { maturity, forward, grid, density }
}

pub fn assert_err_matches<T>(r: Result<T>, pat: fn(&mixvol::Error) -> bool, label: &str) {
    match r {
        Ok(_) => panic!("{label}: expected an error"),
        Err(e) => assert!(pat(&e), "{label}: unexpected error {e}"),
    }
}
