//! Markovian projection of the mixture dynamics: the state-conditional
//! expectation of the component variance rate defines a local-volatility
//! surface whose one-dimensional marginals match the mixture's.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mc::path_rng;
use crate::mixture::MixtureModel;
use crate::numerics::linspace;
use crate::stats::ks_two_sample;

/// Local variance at (x, t): the posterior-weighted average of component
/// variance rates given X_t = x. Returns None where the mixture density is
/// below 1e-12 (the projection is undefined there).
pub fn local_variance(model: &MixtureModel, x: f64, t: f64) -> Result<Option<f64>> {
    if x <= 0.0 {
        return Err(Error::Domain("price must be positive".into()));
    }
    let f = model.forward(t)?;
    let weights = model.support_weights();
    let mut num = 0.0;
    let mut den = 0.0;
    for (node, &(_, w)) in weights.iter().enumerate() {
        let v = model.total_variance(node, t);
        if let Some(d) = crate::black::lognormal_density(f, v, x) {
            let rate = model.variance_rate(node, t);
            num += w * d * rate;
            den += w * d;
        }
    }
    if den < 1e-12 {
        return Ok(None);
    }
    Ok(Some(num / den))
}

/// Projected surface on a (time, price) grid. Masked entries mark states
/// the mixture cannot reach.
#[derive(Debug, Clone)]
pub struct LocalVolSurface {
    pub times: Vec<f64>,
    pub space: Vec<f64>,
    /// variance[ti][xj]; masked entries hold 0.
    pub variance: Vec<Vec<f64>>,
    pub masked: Vec<Vec<bool>>,
}

/// Evaluates the projection on the given grids.
pub fn project(model: &MixtureModel, times: &[f64], space: &[f64]) -> Result<LocalVolSurface> {
    if times.is_empty() || space.is_empty() {
        return Err(Error::InvalidInput("projection grids must be nonempty".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) || space.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("projection grids must be ascending".into()));
    }
    let mut variance = Vec::with_capacity(times.len());
    let mut masked = Vec::with_capacity(times.len());
    for &t in times {
        let mut row = Vec::with_capacity(space.len());
        let mut mrow = Vec::with_capacity(space.len());
        for &x in space {
            match local_variance(model, x, t)? {
                Some(v) => {
                    row.push(v);
                    mrow.push(false);
                }
                None => {
                    row.push(0.0);
                    mrow.push(true);
                }
            }
        }
        variance.push(row);
        masked.push(mrow);
    }
    Ok(LocalVolSurface { times: times.to_vec(), space: space.to_vec(), variance, masked })
}

/// Default projection grids: times uniform on (t0, horizon], prices
/// log-spaced over +-4 standard deviations of the widest component.
pub fn default_grids(model: &MixtureModel, nt: usize, nx: usize) -> (Vec<f64>, Vec<f64>) {
    let t0 = model.t0;
    let th = model.horizon();
    let times: Vec<f64> = (1..=nt)
        .map(|i| t0 + (th - t0) * i as f64 / nt as f64)
        .collect();
    let n_nodes = model.mixing.n_nodes();
    let v_max = (0..n_nodes)
        .map(|i| model.total_variance(i, th))
        .fold(0.0_f64, f64::max)
        .max(1e-8);
    let f = model.x0 * model.rates.integral(t0, th).exp();
    let sd = v_max.sqrt();
    let lo = (-4.0 * sd - 0.5 * v_max).exp() * f;
    let hi = (4.0 * sd).exp() * f;
    let ln_grid = linspace(lo.ln(), hi.ln(), nx);
    let space = ln_grid.iter().map(|&y| y.exp()).collect();
    (times, space)
}

#[derive(Debug, Clone)]
pub struct ProjectionCheck {
    pub maturity: f64,
    pub ks: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ProjectionReport {
    pub checks: Vec<ProjectionCheck>,
    pub n_paths: usize,
    pub threshold: f64,
    pub passed: bool,
}

/// Simulates the projected local-volatility SDE by log-space Euler stepping
/// and compares its marginals against exact mixture sampling with a
/// two-sample KS statistic per maturity. `variance_scale` rescales the
/// projected variance (1 = faithful projection; used as a negative control
/// when != 1).
pub fn verify_projection(
    model: &MixtureModel,
    maturities: &[f64],
    n_paths: usize,
    steps_per_year: usize,
    seed: u64,
    variance_scale: f64,
    ks_threshold: f64,
) -> Result<ProjectionReport> {
    if maturities.is_empty() {
        return Err(Error::InvalidInput("need at least one maturity".into()));
    }
    let mut mats = maturities.to_vec();
    mats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if mats[0] <= model.t0 || mats[mats.len() - 1] > model.horizon() + 1e-12 {
        return Err(Error::Domain("maturities must lie in (t0, horizon]".into()));
    }
    let weights = model.support_weights();
    // mean variance rate as the fallback when a path escapes the mask
    let mean_rate = |t: f64| -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(i, &(_, w))| w * model.variance_rate(i, t))
            .sum()
    };
    let t_end = mats[mats.len() - 1];
    let n_steps = (((t_end - model.t0) * steps_per_year as f64).ceil() as usize).max(1);
    let dt = (t_end - model.t0) / n_steps as f64;
    let sqdt = dt.sqrt();
    // euler paths with per-maturity snapshots
    let mut euler: Vec<Vec<f64>> = vec![Vec::with_capacity(n_paths); mats.len()];
    for p in 0..n_paths {
        let mut rng = path_rng(seed, p as u64);
        let mut x = model.x0;
        let mut t = model.t0;
        let mut next_mat = 0;
        let mut last_rate = mean_rate(model.t0 + 0.5 * dt);
        for _ in 0..n_steps {
            let t_mid = t + 0.5 * dt;
            let rate = match local_variance(model, x, t_mid.min(t_end))? {
                Some(v) => {
                    last_rate = v;
                    v
                }
                None => last_rate,
            } * variance_scale;
            let r = model.rates.rate_at(t_mid);
            let z: f64 = rng.sample(StandardNormal);
            x *= ((r - 0.5 * rate) * dt + rate.sqrt() * sqdt * z).exp();
            t += dt;
            while next_mat < mats.len() && t >= mats[next_mat] - 0.5 * dt {
                euler[next_mat].push(x);
                next_mat += 1;
            }
        }
        while next_mat < mats.len() {
            euler[next_mat].push(x);
            next_mat += 1;
        }
    }
    // exact mixture samples, independent stream
    let mut checks = Vec::with_capacity(mats.len());
    let mut all_pass = true;
    for (mi, &tm) in mats.iter().enumerate() {
        let f = model.forward(tm)?;
        let mut exact: Vec<f64> = Vec::with_capacity(n_paths);
        for p in 0..n_paths {
            let mut rng = path_rng(seed ^ 0x9e37_79b9_7f4a_7c15, (mi * n_paths + p) as u64);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut node = weights.len() - 1;
            for (i, &(_, w)) in weights.iter().enumerate() {
                acc += w;
                if u <= acc {
                    node = i;
                    break;
                }
            }
            let v = model.total_variance(node, tm);
            let z: f64 = rng.sample(StandardNormal);
            exact.push(f * (-0.5 * v + v.sqrt() * z).exp());
        }
        let ks = ks_two_sample(&mut euler[mi], &mut exact);
        let passed = ks < ks_threshold;
        all_pass &= passed;
        checks.push(ProjectionCheck { maturity: tm, ks, passed });
    }
    Ok(ProjectionReport { checks, n_paths, threshold: ks_threshold, passed: all_pass })
}
