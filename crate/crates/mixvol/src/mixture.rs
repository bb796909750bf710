//! Mixture-of-lognormal-diffusions parametrization: mixing laws over a
//! volatility parameter drawn once at inception, exact weighted pricing and
//! Greeks, equivalence re-parametrization, and the strong-solution
//! admissibility check.

use serde::{Deserialize, Serialize};

use crate::black::{self, OptionKind};
use crate::error::{Error, Result};
use crate::market::{RateCurve, RiskNeutralSlice};
use crate::numerics::{quantile_from_cdf, trapezoid, trapezoid_weights};

/// Probability law over the volatility parameter theta: either discrete
/// atoms or a gridded density with its CDF table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum MixingLaw {
    Atoms(Vec<(f64, f64)>),
    Grid { theta: Vec<f64>, density: Vec<f64>, cdf: Vec<f64> },
}

impl MixingLaw {
    pub fn atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let law = MixingLaw::Atoms(atoms);
        law.validate()?;
        Ok(law)
    }

    /// Builds a grid law from a density table; the CDF is accumulated by
    /// trapezoid and clamped monotone.
    pub fn grid(theta: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if theta.len() != density.len() || theta.len() < 2 {
            return Err(Error::InvalidInput("mixing grid/density mismatch".into()));
        }
        let mut cdf = Vec::with_capacity(theta.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..theta.len() {
            acc += 0.5 * (density[i] + density[i - 1]) * (theta[i] - theta[i - 1]);
            cdf.push(acc.min(1.0));
        }
        let law = MixingLaw::Grid { theta, density, cdf };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MixingLaw::Atoms(atoms) => {
                if atoms.is_empty() {
                    return Err(Error::InvalidInput("mixing law has no atoms".into()));
                }
                if atoms.iter().any(|&(t, w)| t < 0.0 || w < 0.0) {
                    return Err(Error::InvalidInput(
                        "mixing atoms need theta >= 0 and weight >= 0".into(),
                    ));
                }
                let sum: f64 = atoms.iter().map(|a| a.1).sum();
                if (sum - 1.0).abs() > 1e-10 {
                    return Err(Error::InvalidInput(format!(
                        "atom weights sum to {sum}, need 1 +- 1e-10"
                    )));
                }
            }
            MixingLaw::Grid { theta, density, cdf } => {
                if theta.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidInput("mixing grid must be ascending".into()));
                }
                if theta[0] < 0.0 || density.iter().any(|&d| d < 0.0) {
                    return Err(Error::InvalidInput("mixing density must be >= 0 on theta >= 0".into()));
                }
                let mass = trapezoid(theta, density);
                if (mass - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "mixing density mass {mass} outside 1 +- 1e-6"
                    )));
                }
                if cdf.windows(2).any(|w| w[1] < w[0] - 1e-12) {
                    return Err(Error::InvalidInput("mixing CDF must be monotone".into()));
                }
            }
        }
        Ok(())
    }

    /// Support nodes with their probability weights (quadrature weights for
    /// grid laws, normalized to total mass one).
    pub fn support_weights(&self) -> Vec<(f64, f64)> {
        match self {
            MixingLaw::Atoms(atoms) => atoms.clone(),
            MixingLaw::Grid { theta, density, .. } => {
                let tw = trapezoid_weights(theta);
                let mut w: Vec<(f64, f64)> = theta
                    .iter()
                    .zip(density.iter().zip(&tw))
                    .map(|(&t, (&d, &wt))| (t, d * wt))
                    .collect();
                let mass: f64 = w.iter().map(|p| p.1).sum();
                for p in w.iter_mut() {
                    p.1 /= mass;
                }
                w
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            MixingLaw::Atoms(a) => a.len(),
            MixingLaw::Grid { theta, .. } => theta.len(),
        }
    }

    /// CDF evaluated at theta (right-continuous for atoms).
    pub fn cdf_at(&self, x: f64) -> f64 {
        match self {
            MixingLaw::Atoms(atoms) => {
                atoms.iter().filter(|&&(t, _)| t <= x).map(|a| a.1).sum()
            }
            MixingLaw::Grid { theta, cdf, .. } => {
                crate::numerics::interp_clamped(theta, cdf, x)
            }
        }
    }

    /// Quantile at level u; flat CDF stretches resolve to midpoints.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            MixingLaw::Atoms(atoms) => {
                let mut acc = 0.0;
                for &(t, w) in atoms {
                    acc += w;
                    if u <= acc + 1e-15 {
                        return t;
                    }
                }
                atoms[atoms.len() - 1].0
            }
            MixingLaw::Grid { theta, cdf, .. } => quantile_from_cdf(theta, cdf, u),
        }
    }

    /// Errors if the CDF has an interior flat stretch (not invertible).
    pub fn require_invertible(&self) -> Result<()> {
        if let MixingLaw::Grid { theta, density, .. } = self {
            let first = density.iter().position(|&d| d > 0.0);
            let last = density.iter().rposition(|&d| d > 0.0);
            if let (Some(a), Some(b)) = (first, last) {
                for i in a..b {
                    if density[i] == 0.0 && density[i + 1] == 0.0 {
                        return Err(Error::FlatCdf(format!(
                            "mixing CDF flat on [{}, {}]",
                            theta[i], theta[i + 1]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The model parametrization: a mixing law, a per-node variance schedule
/// (total-variance increments on the maturity grid, constant rate inside
/// each interval), the start (t0, x0), and the rate curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureModel {
    pub mixing: MixingLaw,
    /// Maturity grid t0 < T_1 < ... < T_n; the model is defined on [t0, T_n].
    pub maturities: Vec<f64>,
    /// variance_increments[node][k] = total-variance increment of support
    /// node `node` over (T_{k-1}, T_k]; all increments >= 0.
    pub variance_increments: Vec<Vec<f64>>,
    pub t0: f64,
    pub x0: f64,
    pub rates: RateCurve,
}

impl MixtureModel {
    pub fn new(
        mixing: MixingLaw,
        maturities: Vec<f64>,
        variance_increments: Vec<Vec<f64>>,
        t0: f64,
        x0: f64,
        rates: RateCurve,
    ) -> Result<Self> {
        mixing.validate()?;
        if x0 <= 0.0 {
            return Err(Error::InvalidInput("x0 must be positive".into()));
        }
        if maturities.is_empty() || maturities[0] <= t0 {
            return Err(Error::InvalidInput("need maturities strictly after t0".into()));
        }
        if maturities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("maturities must be strictly ascending".into()));
        }
        if variance_increments.len() != mixing.n_nodes() {
            return Err(Error::InvalidInput(
                "variance schedule must have one row per mixing node".into(),
            ));
        }
        for row in &variance_increments {
            if row.len() != maturities.len() {
                return Err(Error::InvalidInput(
                    "variance schedule rows must match the maturity grid".into(),
                ));
            }
            if row.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidInput("variance increments must be >= 0".into()));
            }
        }
        Ok(MixtureModel { mixing, maturities, variance_increments, t0, x0, rates })
    }

    /// Single-period model whose mixing law is stated directly in total
    /// variance at maturity `t`.
    pub fn single_period(mixing: MixingLaw, t0: f64, t: f64, x0: f64, rates: RateCurve) -> Result<Self> {
        let nodes = mixing.support_weights();
        let inc: Vec<Vec<f64>> = nodes.iter().map(|&(theta, _)| vec![theta]).collect();
        MixtureModel::new(mixing, vec![t], inc, t0, x0, rates)
    }

    pub fn horizon(&self) -> f64 {
        *self.maturities.last().unwrap()
    }

    pub fn forward(&self, t: f64) -> Result<f64> {
        if t < self.t0 {
            return Err(Error::Domain(format!("t={t} before t0={}", self.t0)));
        }
        Ok(self.x0 * self.rates.integral(self.t0, t).exp())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t <= self.t0 || t > self.horizon() + 1e-12 {
            return Err(Error::Domain(format!(
                "t={t} outside ({}, {}]",
                self.t0,
                self.horizon()
            )));
        }
        Ok(())
    }

    /// Cumulative total variance of support node `node` from t0 to t; the
    /// increment of the enclosing interval accrues at a constant rate.
    pub fn total_variance(&self, node: usize, t: f64) -> f64 {
        let mut v = 0.0;
        let mut lo = self.t0;
        for (k, &tk) in self.maturities.iter().enumerate() {
            let inc = self.variance_increments[node][k];
            if t >= tk {
                v += inc;
            } else {
                if t > lo {
                    v += inc * (t - lo) / (tk - lo);
                }
                break;
            }
            lo = tk;
        }
        v
    }

    /// Instantaneous variance rate of node `node` at time t.
    pub fn variance_rate(&self, node: usize, t: f64) -> f64 {
        let mut lo = self.t0;
        for (k, &tk) in self.maturities.iter().enumerate() {
            if t <= tk || k == self.maturities.len() - 1 {
                return self.variance_increments[node][k] / (tk - lo);
            }
            lo = tk;
        }
        unreachable!()
    }

    pub fn support_weights(&self) -> Vec<(f64, f64)> {
        self.mixing.support_weights()
    }
}

/// Component density outcome: a proper density value, or the degenerate
/// point-mass flag when the component's variance is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityValue {
    Density(f64),
    PointMass { at: f64 },
}

/// Lognormal density of component `node` at price x, time t.
pub fn component_density(model: &MixtureModel, node: usize, x: f64, t: f64) -> Result<DensityValue> {
    if x <= 0.0 {
        return Err(Error::Domain("price must be positive".into()));
    }
    model.check_time(t)?;
    let f = model.forward(t)?;
    let v = model.total_variance(node, t);
    Ok(match black::lognormal_density(f, v, x) {
        Some(d) => DensityValue::Density(d),
        None => DensityValue::PointMass { at: f },
    })
}

/// Mixture density at (x, t): the absolutely-continuous part. Zero-variance
/// nodes carry point mass at the forward and contribute nothing here.
pub fn mixture_density(model: &MixtureModel, x: f64, t: f64) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::Domain("price must be positive".into()));
    }
    model.check_time(t)?;
    let f = model.forward(t)?;
    let mut dens = 0.0;
    for (node, &(_, w)) in model.support_weights().iter().enumerate() {
        let v = model.total_variance(node, t);
        if let Some(d) = black::lognormal_density(f, v, x) {
            dens += w * d;
        }
    }
    Ok(dens)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EuropeanOption {
    pub kind: OptionKind,
    pub strike: f64,
    pub maturity: f64,
}

impl Serialize for OptionKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            OptionKind::Call => s.serialize_str("call"),
            OptionKind::Put => s.serialize_str("put"),
        }
    }
}

impl<'de> Deserialize<'de> for OptionKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "call" => Ok(OptionKind::Call),
            "put" => Ok(OptionKind::Put),
            other => Err(serde::de::Error::custom(format!("unknown option kind {other}"))),
        }
    }
}

/// Discounted European price: the mixing-weighted average of component
/// prices, each a closed-form value with that component's total variance.
pub fn price_european(model: &MixtureModel, opt: &EuropeanOption) -> Result<f64> {
    if opt.strike <= 0.0 {
        return Err(Error::Domain("strike must be positive".into()));
    }
    model.check_time(opt.maturity)?;
    let f = model.forward(opt.maturity)?;
    let df = model.rates.discount(model.t0, opt.maturity);
    let mut price = 0.0;
    for (node, &(_, w)) in model.support_weights().iter().enumerate() {
        let v = model.total_variance(node, opt.maturity);
        price += w * black::price(opt.kind, f, opt.strike, v);
    }
    Ok(df * price)
}

#[derive(Debug, Clone)]
pub struct Greeks {
    /// dPrice / dSpot.
    pub delta: f64,
    /// d2Price / dSpot2.
    pub gamma: f64,
    /// Per-component dPrice / dSigma_i, sigma_i the component's annualized vol.
    pub vega_profile: Vec<f64>,
}

/// Analytic Greeks as mixing-weighted component Greeks.
pub fn greeks(model: &MixtureModel, opt: &EuropeanOption) -> Result<Greeks> {
    model.check_time(opt.maturity)?;
    let f = model.forward(opt.maturity)?;
    let df = model.rates.discount(model.t0, opt.maturity);
    let growth = f / model.x0; // dF/dx0
    let tau = opt.maturity - model.t0;
    let mut delta = 0.0;
    let mut gamma = 0.0;
    let mut vega = Vec::new();
    for (node, &(_, w)) in model.support_weights().iter().enumerate() {
        let v = model.total_variance(node, opt.maturity);
        delta += w * df * growth * black::delta(opt.kind, f, opt.strike, v);
        gamma += w * df * growth * growth * black::gamma(f, opt.strike, v);
        vega.push(w * df * black::vega(f, opt.strike, v, tau));
    }
    Ok(Greeks { delta, gamma, vega_profile: vega })
}

/// Black-Scholes implied volatility of the model price at (strike, maturity).
pub fn implied_vol(model: &MixtureModel, opt: &EuropeanOption) -> Result<f64> {
    let price = price_european(model, opt)?;
    let f = model.forward(opt.maturity)?;
    let df = model.rates.discount(model.t0, opt.maturity);
    let v = black::implied_total_variance(opt.kind, f, opt.strike, price / df)?;
    Ok((v / (opt.maturity - model.t0)).sqrt())
}

/// Re-parametrizes the model onto a target mixing law so that the mixture
/// laws agree at every grid maturity: the new node at quantile u inherits
/// the variance schedule of the source node at the same quantile.
pub fn reparametrize_equivalent(
    model: &MixtureModel,
    target: &MixingLaw,
) -> Result<MixtureModel> {
    target.validate()?;
    model.mixing.require_invertible()?;
    target.require_invertible()?;
    let t_nodes = target.support_weights();
    let mut increments = Vec::with_capacity(t_nodes.len());
    // map each target node to its quantile level, then to the source node
    let mut acc = 0.0;
    for &(_, w) in &t_nodes {
        let u = acc + 0.5 * w;
        acc += w;
        let src_theta = model.mixing.quantile(u);
        let src_node = nearest_node(&model.mixing, src_theta);
        increments.push(model.variance_increments[src_node].clone());
    }
    MixtureModel::new(
        target.clone(),
        model.maturities.clone(),
        increments,
        model.t0,
        model.x0,
        model.rates.clone(),
    )
}

fn nearest_node(law: &MixingLaw, theta: f64) -> usize {
    let nodes = law.support_weights();
    nodes
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1 .0 - theta)
                .abs()
                .partial_cmp(&(b.1 .0 - theta).abs())
                .unwrap()
        })
        .map(|(i, _)| i)
        .unwrap()
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    pub max_relative_deviation: f64,
    /// (quantile, maturity) of the worst deviation.
    pub worst: (f64, f64),
}

/// Two parametrizations are equivalent when their quantile total-variance
/// profiles agree at every grid maturity. Compared on a 256-point quantile
/// grid with relative tolerance 1e-8.
pub fn check_equivalence(a: &MixtureModel, b: &MixtureModel) -> Result<EquivalenceReport> {
    if a.maturities != b.maturities {
        return Err(Error::InvalidInput("models must share the maturity grid".into()));
    }
    let n_q = 256;
    let mut worst = (0.0, 0.0);
    let mut max_dev: f64 = 0.0;
    for (k, &tk) in a.maturities.iter().enumerate() {
        for j in 0..n_q {
            let u = (j as f64 + 0.5) / n_q as f64;
            let va = quantile_total_variance(a, u, k);
            let vb = quantile_total_variance(b, u, k);
            let dev = (va - vb).abs() / va.abs().max(vb.abs()).max(1e-300);
            if dev > max_dev {
                max_dev = dev;
                worst = (u, tk);
            }
        }
    }
    Ok(EquivalenceReport { equivalent: max_dev <= 1e-8, max_relative_deviation: max_dev, worst })
}

fn quantile_total_variance(m: &MixtureModel, u: f64, k: usize) -> f64 {
    let theta = m.mixing.quantile(u);
    let node = nearest_node(&m.mixing, theta);
    m.variance_increments[node][..=k].iter().sum()
}

/// Posterior mixing law after observing X(t1) = x1: weights are multiplied
/// by the component densities at the observation and renormalized.
/// Zero-variance components keep mass only if the observation sits exactly
/// at the forward.
pub fn posterior_mixing(model: &MixtureModel, t1: f64, x1: f64) -> Result<MixingLaw> {
    if x1 <= 0.0 {
        return Err(Error::Domain("observed price must be positive".into()));
    }
    model.check_time(t1)?;
    let f = model.forward(t1)?;
    let weights = model.support_weights();
    let mut post: Vec<(f64, f64)> = Vec::with_capacity(weights.len());
    let mut total = 0.0;
    for (node, &(theta, w)) in weights.iter().enumerate() {
        let v = model.total_variance(node, t1);
        let like = match black::lognormal_density(f, v, x1) {
            Some(d) => d,
            None => {
                if (x1 - f).abs() <= 1e-12 * f {
                    return MixingLaw::atoms(vec![(theta, 1.0)]);
                }
                0.0
            }
        };
        let m = w * like;
        total += m;
        post.push((theta, m));
    }
    if total <= 0.0 {
        return Err(Error::Domain(
            "observation has zero likelihood under every component".into(),
        ));
    }
    for p in post.iter_mut() {
        p.1 /= total;
    }
    // assign the largest weight as one minus the rest so the weights sum
    // to one exactly in floating point
    let hottest = post
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let rest: f64 = post
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != hottest)
        .map(|(_, p)| p.1)
        .sum();
    post[hottest].1 = (1.0 - rest).max(0.0);
    MixingLaw::atoms(post)
}

/// Restarts the model at (t1, x1): posterior mixing, remaining variance
/// increments, and the observation as the new start state.
pub fn restart_model(model: &MixtureModel, t1: f64, x1: f64) -> Result<MixtureModel> {
    model.check_time(t1)?;
    if t1 >= model.horizon() {
        return Err(Error::Domain("no maturities remain after the restart time".into()));
    }
    let mixing = posterior_mixing(model, t1, x1)?;
    // remaining maturity grid; t1 becomes the new start
    let keep: Vec<usize> = model
        .maturities
        .iter()
        .enumerate()
        .filter(|&(_, &t)| t > t1 + 1e-12)
        .map(|(k, _)| k)
        .collect();
    let maturities: Vec<f64> = keep.iter().map(|&k| model.maturities[k]).collect();
    let n_nodes = model.mixing.n_nodes();
    let mut increments = Vec::with_capacity(n_nodes);
    for node in 0..n_nodes {
        let v_at_t1 = model.total_variance(node, t1);
        let mut prev = v_at_t1;
        let row: Vec<f64> = keep
            .iter()
            .map(|&k| {
                let v = model.total_variance(node, model.maturities[k]);
                let inc = (v - prev).max(0.0);
                prev = v;
                inc
            })
            .collect();
        increments.push(row);
    }
    // posterior_mixing preserves node order and count for atom laws built
    // from support_weights, so increments stay aligned
    let rows = match &mixing {
        MixingLaw::Atoms(a) if a.len() == n_nodes => increments,
        _ => {
            return Err(Error::Internal(
                "posterior mixing changed the support unexpectedly".into(),
            ))
        }
    };
    MixtureModel::new(mixing, maturities, rows, t1, x1, model.rates.clone())
}

#[derive(Debug, Clone)]
pub enum Admissibility {
    Finite { value: f64 },
    Divergent { detail: String },
}

/// Strong-solution admissibility: evaluates the exponential moment
/// integral of exp(C0 f(theta)^2) under the mixing law with
/// C0 = 10 (tau0^2 + tau0). `f` is the per-node growth bound; pass None to
/// derive the default GGBM bound max(sup r, sup_t sqrt(variance rate)).
pub fn check_strong_solution(
    model: &MixtureModel,
    f: Option<&dyn Fn(usize) -> f64>,
    tau0: f64,
) -> Result<Admissibility> {
    if tau0 <= 0.0 {
        return Err(Error::Domain("tau0 must be positive".into()));
    }
    let c0 = 10.0 * (tau0 * tau0 + tau0);
    let default_f = |node: usize| -> f64 {
        let sup_r = model
            .rates
            .knots()
            .iter()
            .map(|k| k.1.abs())
            .fold(0.0_f64, f64::max);
        let mut lo = model.t0;
        let mut sup_rate: f64 = 0.0;
        for (k, &tk) in model.maturities.iter().enumerate() {
            sup_rate = sup_rate.max(model.variance_increments[node][k] / (tk - lo));
            lo = tk;
        }
        sup_r.max(sup_rate.sqrt())
    };
    let fval = |node: usize| -> f64 {
        match f {
            Some(g) => g(node),
            None => default_f(node),
        }
    };
    match &model.mixing {
        MixingLaw::Atoms(atoms) => {
            let mut total = 0.0;
            for (node, &(_, w)) in atoms.iter().enumerate() {
                let fx = fval(node);
                let e = c0 * fx * fx;
                if e > 700.0 {
                    return Ok(Admissibility::Divergent {
                        detail: format!("atom {node} overflows exp({e:.1})"),
                    });
                }
                total += w * e.exp();
            }
            Ok(Admissibility::Finite { value: total })
        }
        MixingLaw::Grid { theta, density, .. } => {
            let tw = trapezoid_weights(theta);
            let mut contribs = Vec::with_capacity(theta.len());
            for node in 0..theta.len() {
                let fx = fval(node);
                let e = c0 * fx * fx;
                if e > 700.0 {
                    return Ok(Admissibility::Divergent {
                        detail: format!("integrand overflows at theta={}", theta[node]),
                    });
                }
                contribs.push(tw[node] * density[node] * e.exp());
            }
            // tail screen: per-cell contributions must decay at the top end;
            // a rising trend over the last cells means the density loses to
            // exp(C0 f^2) and the true integral diverges
            let n = contribs.len();
            let look = 8.min(n / 4).max(2);
            let tail = &contribs[n - look..];
            let rising = tail.windows(2).all(|w| w[1] >= w[0]) && tail[look - 1] > 1e-300;
            if rising {
                return Ok(Admissibility::Divergent {
                    detail: format!(
                        "tail contributions rising over the last {look} cells; density decays slower than exp(-C0 f^2)"
                    ),
                });
            }
            Ok(Admissibility::Finite { value: contribs.iter().sum() })
        }
    }
}

/// Evaluates the model's exact risk-neutral slice at maturity t on a
/// log-spaced grid spanning `span_sigmas` standard deviations of the widest
/// component (plus drift allowance), n points.
pub fn slice_from_mixture(
    model: &MixtureModel,
    t: f64,
    n: usize,
    span_sigmas: f64,
) -> Result<RiskNeutralSlice> {
    model.check_time(t)?;
    let f = model.forward(t)?;
    let weights = model.support_weights();
    let v_max = (0..weights.len())
        .map(|i| model.total_variance(i, t))
        .fold(0.0_f64, f64::max)
        .max(1e-8);
    let sv = v_max.sqrt();
    let y_lo = -span_sigmas * sv - 0.5 * v_max;
    let y_hi = span_sigmas * sv;
    let grid: Vec<f64> = (0..n)
        .map(|i| f * (y_lo + (y_hi - y_lo) * i as f64 / (n - 1) as f64).exp())
        .collect();
    let mut density = Vec::with_capacity(n);
    for &x in &grid {
        density.push(mixture_density(model, x, t)?);
    }
    RiskNeutralSlice::new(t, grid, density)
}
