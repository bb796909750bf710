//! Monte Carlo engine. Every path owns a counter-derived random stream, so
//! results are bit-identical for any worker count, and lognormal steps are
//! exact in distribution (no time discretization error for the mixture).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::black::{norm_cdf, OptionKind};
use crate::error::{Error, Result};
use crate::hierarchy::{sample_variance_path, HierarchicalModel};
use crate::mixture::{EuropeanOption, MixtureModel};
use crate::numerics::linspace;
use crate::stats::mean_se;

/// Dedicated stream for one path: the key mixes the run seed, the path
/// index, and a fixed salt, so streams never collide across paths and the
/// partitioning of paths over workers cannot matter.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path.to_le_bytes());
    key[16..24].copy_from_slice(&0x6d69_7876_6f6c_2d31_u64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Simulated values at the requested observation times, path-major.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub times: Vec<f64>,
    pub n_paths: usize,
    values: Vec<f64>,
}

impl PathBatch {
    pub fn value(&self, path: usize, time_idx: usize) -> f64 {
        self.values[path * self.times.len() + time_idx]
    }

    pub fn column(&self, time_idx: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.value(p, time_idx)).collect()
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&ti| (ti - t).abs() <= 1e-12)
            .ok_or_else(|| Error::InvalidInput(format!("time {t} not among simulated times")))
    }
}

/// Payoff descriptions the pricer understands.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PayoffSpec {
    European { kind: OptionKind, strike: f64, maturity: f64 },
    /// Option on X(end) / X(start).
    ForwardStartRatio { kind: OptionKind, strike: f64, start: f64, end: f64 },
}

impl PayoffSpec {
    pub fn observation_times(&self) -> Vec<f64> {
        match *self {
            PayoffSpec::European { maturity, .. } => vec![maturity],
            PayoffSpec::ForwardStartRatio { start, end, .. } => vec![start, end],
        }
    }

    pub fn settlement(&self) -> f64 {
        match *self {
            PayoffSpec::European { maturity, .. } => maturity,
            PayoffSpec::ForwardStartRatio { end, .. } => end,
        }
    }
}

fn intrinsic(kind: OptionKind, x: f64, k: f64) -> f64 {
    match kind {
        OptionKind::Call => (x - k).max(0.0),
        OptionKind::Put => (k - x).max(0.0),
    }
}

/// Simulates the mixture model at the given observation times. The
/// volatility parameter is drawn once per path at inception; increments
/// between observation times are exact lognormal steps. With `antithetic`,
/// even/odd path pairs share a stream and flip the sign of every normal
/// draw (the component draw is shared).
pub fn simulate_mixture(
    model: &MixtureModel,
    times: &[f64],
    n_paths: usize,
    seed: u64,
    antithetic: bool,
) -> Result<PathBatch> {
    if times.is_empty() {
        return Err(Error::InvalidInput("need at least one observation time".into()));
    }
    if times[0] <= model.t0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "observation times must be ascending after t0".into(),
        ));
    }
    if *times.last().unwrap() > model.horizon() + 1e-12 {
        return Err(Error::Domain("observation beyond model horizon".into()));
    }
    if antithetic && n_paths % 2 != 0 {
        return Err(Error::InvalidInput("antithetic runs need an even path count".into()));
    }
    let weights = model.support_weights();
    let cum_weights: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, &(_, w)| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let nt = times.len();
    // drift and variance increments per component over each interval
    let mut drift = Vec::with_capacity(nt);
    let mut lo = model.t0;
    for &t in times {
        drift.push(model.rates.integral(lo, t));
        lo = t;
    }
    let var_inc: Vec<Vec<f64>> = (0..weights.len())
        .map(|node| {
            let mut prev = 0.0;
            times
                .iter()
                .map(|&t| {
                    let v = model.total_variance(node, t);
                    let inc = (v - prev).max(0.0);
                    prev = v;
                    inc
                })
                .collect()
        })
        .collect();
    let x0 = model.x0;
    let sim_one = |stream: u64| -> (Vec<f64>, Vec<f64>) {
        let mut rng = path_rng(seed, stream);
        let u: f64 = rng.gen();
        let node = cum_weights.iter().position(|&c| u <= c).unwrap_or(weights.len() - 1);
        let mut zs = Vec::with_capacity(nt);
        for _ in 0..nt {
            zs.push(rng.sample::<f64, _>(StandardNormal));
        }
        let walk = |sign: f64| -> Vec<f64> {
            let mut x = x0;
            let mut row = Vec::with_capacity(nt);
            for j in 0..nt {
                let dv = var_inc[node][j];
                x *= (drift[j] - 0.5 * dv + dv.sqrt() * sign * zs[j]).exp();
                row.push(x);
            }
            row
        };
        (walk(1.0), walk(-1.0))
    };
    let values: Vec<f64> = if antithetic {
        (0..n_paths / 2)
            .into_par_iter()
            .flat_map_iter(|pair| {
                let (a, b) = sim_one(pair as u64);
                a.into_iter().chain(b)
            })
            .collect()
    } else {
        (0..n_paths)
            .into_par_iter()
            .flat_map_iter(|p| sim_one(p as u64).0.into_iter())
            .collect()
    };
    Ok(PathBatch { times: times.to_vec(), n_paths, values })
}

/// Simulates the hierarchical model at its own maturities: a cumulative
/// variance path is drawn from the coupled layers, then price increments
/// are exact lognormals with those variances.
pub fn simulate_hierarchical(
    model: &HierarchicalModel,
    n_paths: usize,
    seed: u64,
) -> Result<PathBatch> {
    model.validate()?;
    let times = model.maturities.clone();
    let nt = times.len();
    let mut drift = Vec::with_capacity(nt);
    let mut lo = model.t0;
    for &t in &times {
        drift.push(model.rates.integral(lo, t));
        lo = t;
    }
    let values: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .flat_map_iter(|p| {
            let mut rng = path_rng(seed, p as u64);
            let cum = sample_variance_path(model, &mut rng);
            let mut x = model.x0;
            let mut prev = model.v0;
            let mut row = Vec::with_capacity(nt);
            for j in 0..nt {
                let dv = (cum[j] - prev).max(0.0);
                prev = cum[j];
                let z: f64 = rng.sample(StandardNormal);
                x *= (drift[j] - 0.5 * dv + dv.sqrt() * z).exp();
                row.push(x);
            }
            row.into_iter()
        })
        .collect();
    Ok(PathBatch { times, n_paths, values })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Prices a payoff from simulated paths, discounting at the model rates.
pub fn price_mc(
    batch: &PathBatch,
    payoff: &PayoffSpec,
    rates: &crate::market::RateCurve,
    t0: f64,
) -> Result<McEstimate> {
    let df = rates.discount(t0, payoff.settlement());
    let samples: Vec<f64> = match *payoff {
        PayoffSpec::European { kind, strike, maturity } => {
            if strike <= 0.0 {
                return Err(Error::Domain("strike must be positive".into()));
            }
            let ti = batch.time_index(maturity)?;
            (0..batch.n_paths)
                .map(|p| df * intrinsic(kind, batch.value(p, ti), strike))
                .collect()
        }
        PayoffSpec::ForwardStartRatio { kind, strike, start, end } => {
            if strike <= 0.0 {
                return Err(Error::Domain("strike must be positive".into()));
            }
            let a = batch.time_index(start)?;
            let b = batch.time_index(end)?;
            (0..batch.n_paths)
                .map(|p| df * intrinsic(kind, batch.value(p, b) / batch.value(p, a), strike))
                .collect()
        }
    };
    let (value, std_error) = mean_se(&samples);
    Ok(McEstimate { value, std_error, n_paths: batch.n_paths })
}

/// Closed-form price of a payoff under the mixture: both supported payoffs
/// are conditionally lognormal given the component, so the price is the
/// mixing-weighted average of component values.
pub fn price_analytic(model: &MixtureModel, payoff: &PayoffSpec) -> Result<f64> {
    match *payoff {
        PayoffSpec::European { kind, strike, maturity } => {
            crate::mixture::price_european(
                model,
                &EuropeanOption { kind, strike, maturity },
            )
        }
        PayoffSpec::ForwardStartRatio { kind, strike, start, end } => {
            if strike <= 0.0 {
                return Err(Error::Domain("strike must be positive".into()));
            }
            if start <= model.t0 || end <= start || end > model.horizon() + 1e-12 {
                return Err(Error::Domain(
                    "ratio window must satisfy t0 < start < end <= horizon".into(),
                ));
            }
            let fwd_ratio = model.rates.integral(start, end).exp();
            let df = model.rates.discount(model.t0, end);
            let mut price = 0.0;
            for (node, &(_, w)) in model.support_weights().iter().enumerate() {
                let dv = (model.total_variance(node, end)
                    - model.total_variance(node, start))
                .max(0.0);
                price += w * crate::black::price(kind, fwd_ratio, strike, dv);
            }
            Ok(df * price)
        }
    }
}

/// Probability each component assigns to X(t) landing in the bucket.
fn bucket_probability(model: &MixtureModel, node: usize, t: f64, bucket: (f64, f64)) -> Result<f64> {
    let f = model.forward(t)?;
    let v = model.total_variance(node, t);
    let (a, b) = bucket;
    if v <= 0.0 {
        return Ok(if a < f && f <= b { 1.0 } else { 0.0 });
    }
    let sv = v.sqrt();
    let dist = |x: f64| norm_cdf(((x / f).ln() + 0.5 * v) / sv);
    Ok(dist(b) - dist(a))
}

/// Posterior mixing weights after observing X(t) in the bucket (a, b].
/// The weights sum to one whenever the bucket has positive probability.
pub fn posterior_weights(
    model: &MixtureModel,
    t: f64,
    bucket: (f64, f64),
) -> Result<Vec<f64>> {
    if bucket.0 >= bucket.1 || bucket.0 <= 0.0 {
        return Err(Error::InvalidInput("bucket must satisfy 0 < a < b".into()));
    }
    let weights = model.support_weights();
    let mut post: Vec<f64> = Vec::with_capacity(weights.len());
    for (node, &(_, w)) in weights.iter().enumerate() {
        post.push(w * bucket_probability(model, node, t, bucket)?);
    }
    let total: f64 = post.iter().sum();
    if total <= 0.0 {
        return Err(Error::Domain("bucket has zero probability under the model".into()));
    }
    for p in post.iter_mut() {
        *p /= total;
    }
    Ok(post)
}

/// Price of a later-maturity option conditional on X(t_obs) falling in the
/// bucket: components are reweighted by their bucket probabilities and the
/// start point is integrated over the bucket under each component's law.
pub fn posterior_price(
    model: &MixtureModel,
    t_obs: f64,
    bucket: (f64, f64),
    opt: &EuropeanOption,
) -> Result<f64> {
    if opt.maturity <= t_obs {
        return Err(Error::Domain("option must mature after the observation time".into()));
    }
    let weights = model.support_weights();
    let f_obs = model.forward(t_obs)?;
    let growth = model.rates.integral(t_obs, opt.maturity).exp();
    let df = model.rates.discount(model.t0, opt.maturity);
    // integrate each component's conditional value over the bucket
    let n_pts = 401;
    let ln_grid = linspace(bucket.0.ln(), bucket.1.ln(), n_pts);
    let mut numer = 0.0;
    let mut denom = 0.0;
    for (node, &(_, w)) in weights.iter().enumerate() {
        let v_obs = model.total_variance(node, t_obs);
        let dv = (model.total_variance(node, opt.maturity) - v_obs).max(0.0);
        let p_bucket = bucket_probability(model, node, t_obs, bucket)?;
        if p_bucket <= 0.0 {
            continue;
        }
        denom += w * p_bucket;
        if v_obs <= 0.0 {
            numer += w * p_bucket * crate::black::price(opt.kind, f_obs * growth, opt.strike, dv);
            continue;
        }
        // trapezoid in log space against the lognormal start-point density
        let mut acc = 0.0;
        for (i, &ly) in ln_grid.iter().enumerate() {
            let x = ly.exp();
            let dens = crate::black::lognormal_density(f_obs, v_obs, x).unwrap_or(0.0);
            let val = crate::black::price(opt.kind, x * growth, opt.strike, dv);
            let wgt = if i == 0 || i == n_pts - 1 { 0.5 } else { 1.0 };
            acc += wgt * dens * val * x; // dx = x d(ln x)
        }
        acc *= (ln_grid[1] - ln_grid[0]) * w;
        numer += acc;
    }
    if denom <= 0.0 {
        return Err(Error::Domain("bucket has zero probability under the model".into()));
    }
    Ok(df * numer / denom)
}
