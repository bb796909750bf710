//! Rates, forwards, option chains, and risk-neutral densities, plus the
//! coordinate change between asset price and log-moneyness.

use serde::{Deserialize, Serialize};

use crate::black::norm_cdf;
use crate::error::{Error, Result};
use crate::numerics::{interp_clamped, nnls, spd_solve, trapezoid, Mat};

/// Piecewise-constant forward rate curve. The rate over [knots[i].0,
/// knots[i+1].0) is knots[i].1; the last rate extends to infinity.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RateCurve {
    knots: Vec<(f64, f64)>,
}

impl RateCurve {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidInput("rate curve needs at least one knot".into()));
        }
        if knots[0].0 < 0.0 {
            return Err(Error::InvalidInput("rate knot times must be >= 0".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidInput("rate knot times must be strictly increasing".into()));
        }
        Ok(RateCurve { knots })
    }

    pub fn flat(rate: f64) -> Self {
        RateCurve { knots: vec![(0.0, rate)] }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let mut r = self.knots[0].1;
        for &(tk, rk) in &self.knots {
            if tk <= t {
                r = rk;
            } else {
                break;
            }
        }
        r
    }

    /// Exact integral of the rate over [a, b] (a <= b).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a <= b);
        let mut total = 0.0;
        let mut lo = a;
        for (i, &(tk, rk)) in self.knots.iter().enumerate() {
            let hi = self.knots.get(i + 1).map_or(f64::INFINITY, |k| k.0);
            let seg_lo = lo.max(tk);
            let seg_hi = b.min(hi);
            if seg_hi > seg_lo {
                total += rk * (seg_hi - seg_lo);
                lo = seg_hi;
            }
            if lo >= b {
                break;
            }
        }
        // times before the first knot accrue at the first rate
        if a < self.knots[0].0 {
            total += self.knots[0].1 * (b.min(self.knots[0].0) - a);
        }
        total
    }

    pub fn discount(&self, a: f64, b: f64) -> f64 {
        (-self.integral(a, b)).exp()
    }
}

/// Deterministic forward curve F(t) = x0 exp(int_{t0}^t r ds).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ForwardCurve {
    pub x0: f64,
    pub t0: f64,
    pub rates: RateCurve,
}

impl ForwardCurve {
    pub fn new(x0: f64, t0: f64, rates: RateCurve) -> Result<Self> {
        if x0 <= 0.0 {
            return Err(Error::InvalidInput("spot must be positive".into()));
        }
        Ok(ForwardCurve { x0, t0, rates })
    }

    pub fn forward(&self, t: f64) -> Result<f64> {
        if t < self.t0 {
            return Err(Error::Domain(format!("t={t} before curve start t0={}", self.t0)));
        }
        Ok(self.x0 * self.rates.integral(self.t0, t).exp())
    }
}

/// Quoted call prices at one maturity. Prices are discounted market prices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptionChain {
    pub maturity: f64,
    pub forward: f64,
    pub strikes: Vec<f64>,
    pub call_prices: Vec<f64>,
}

impl OptionChain {
    pub fn validate(&self) -> Result<()> {
        if self.strikes.len() != self.call_prices.len() {
            return Err(Error::InvalidInput("strikes and prices differ in length".into()));
        }
        if self.strikes.len() < 5 {
            return Err(Error::InvalidInput(format!(
                "need at least 5 strikes, got {}",
                self.strikes.len()
            )));
        }
        if self.strikes.iter().any(|&k| k <= 0.0) || self.forward <= 0.0 {
            return Err(Error::InvalidInput("strikes and forward must be positive".into()));
        }
        if self.strikes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("strikes must be strictly ascending".into()));
        }
        if self.call_prices.iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidInput("call prices must be positive".into()));
        }
        Ok(())
    }
}

/// Risk-neutral density of the asset price at one maturity, on an ascending
/// price grid, with its CDF.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskNeutralSlice {
    pub maturity: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl RiskNeutralSlice {
    /// Builds a slice from a density table, accumulating the CDF by trapezoid.
    /// Mass must already be 1 within 1e-6.
    pub fn new(maturity: f64, grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if grid.len() != density.len() || grid.len() < 8 {
            return Err(Error::InvalidInput("slice grid/density mismatch or too short".into()));
        }
        if grid[0] <= 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("slice grid must be positive ascending".into()));
        }
        if density.iter().any(|&d| d < 0.0) {
            return Err(Error::InvalidInput("slice density must be nonnegative".into()));
        }
        let mass = trapezoid(&grid, &density);
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "slice mass {mass} outside 1 +- 1e-6"
            )));
        }
        let cdf = cumulative_trapezoid_clamped(&grid, &density);
        Ok(RiskNeutralSlice { maturity, grid, density, cdf })
    }

    pub fn mass(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    pub fn mean(&self) -> f64 {
        let xd: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, d)| x * d).collect();
        trapezoid(&self.grid, &xd)
    }

    /// Martingale check: mean equals the forward within 0.1%.
    pub fn check_martingale(&self, forward: f64) -> Result<()> {
        let mean = self.mean();
        if (mean / forward - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidInput(format!(
                "slice mean {mean} deviates from forward {forward} beyond 0.1%"
            )));
        }
        Ok(())
    }
}

fn cumulative_trapezoid_clamped(x: &[f64], f: &[f64]) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    cdf.push(0.0);
    for i in 1..x.len() {
        acc += 0.5 * (f[i] + f[i - 1]) * (x[i] - x[i - 1]);
        cdf.push(acc.min(1.0));
    }
    cdf
}

/// Density of y = log(x / F(t)).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogMoneynessDensity {
    pub maturity: f64,
    pub forward: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl LogMoneynessDensity {
    pub fn mass(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// E[e^y], which is 1 for a martingale slice.
    pub fn exp_moment(&self) -> f64 {
        let f: Vec<f64> =
            self.grid.iter().zip(&self.density).map(|(y, e)| y.exp() * e).collect();
        trapezoid(&self.grid, &f)
    }
}

/// Changes variables from price to log-moneyness: E(y) = x D(x), y = log(x/F).
/// The Jacobian is analytic, so the law's mass is invariant under the change;
/// after checking the trapezoid drift is O(h^2), the output is rescaled to
/// the input mass so downstream unit-mass gates see the invariant restored.
pub fn to_log_moneyness(slice: &RiskNeutralSlice, forward: f64) -> Result<LogMoneynessDensity> {
    if forward <= 0.0 {
        return Err(Error::InvalidInput("forward must be positive".into()));
    }
    let grid: Vec<f64> = slice.grid.iter().map(|&x| (x / forward).ln()).collect();
    let density: Vec<f64> =
        slice.grid.iter().zip(&slice.density).map(|(&x, &d)| x * d).collect();
    let mut out = LogMoneynessDensity { maturity: slice.maturity, forward, grid, density };
    // the coordinate change re-quadratures the same law; drift beyond
    // O(h^2) roundoff means the grid cannot support the mapping
    let target = slice.mass();
    let drift = out.mass() - target;
    if drift.abs() > 1e-4 {
        return Err(Error::GridTooCoarse(format!(
            "log-moneyness re-quadrature moved mass by {drift:.3e}"
        )));
    }
    let scale = target / (target + drift);
    if scale.is_finite() && scale > 0.0 {
        for d in out.density.iter_mut() {
            *d *= scale;
        }
    }
    Ok(out)
}

/// Inverse of `to_log_moneyness`, with the same mass restoration so the
/// two mappings compose to the identity pointwise.
pub fn from_log_moneyness(e: &LogMoneynessDensity) -> Result<RiskNeutralSlice> {
    let grid: Vec<f64> = e.grid.iter().map(|&y| e.forward * y.exp()).collect();
    let mut density: Vec<f64> =
        grid.iter().zip(&e.density).map(|(&x, &ey)| ey / x).collect();
    let target = e.mass();
    let got = trapezoid(&grid, &density);
    if got > 0.0 && target > 0.0 {
        let scale = target / got;
        for d in density.iter_mut() {
            *d *= scale;
        }
    }
    let cdf = cumulative_trapezoid_clamped(&grid, &density);
    Ok(RiskNeutralSlice { maturity: e.maturity, grid, density, cdf })
}

/// Diagnostics from chain cleaning and density extraction.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Strikes whose quotes the convex cleaning moved materially.
    pub repaired_strikes: Vec<f64>,
    /// Largest quote adjustment, in price units.
    pub max_adjustment: f64,
    /// Mass clipped from negative second differences.
    pub clipped_mass: f64,
    /// Factor applied to renormalize the final density to unit mass.
    pub renormalization: f64,
    /// Mass carried by the pasted lognormal tails (left, right).
    pub tail_mass: (f64, f64),
}

/// Extracts the risk-neutral density from an option chain by the second
/// strike derivative of the undiscounted call price. Quotes are first
/// projected onto the convex cone (hinge basis, non-negative weights);
/// tails are pasted as lognormal densities matched to edge value and slope.
/// The result is resampled onto `n_grid` log-spaced prices spanning
/// `span_sigmas` standard deviations around the forward.
pub fn chain_to_density(
    chain: &OptionChain,
    discount: f64,
    n_grid: usize,
    span_sigmas: f64,
) -> Result<(RiskNeutralSlice, ChainDiagnostics)> {
    chain.validate()?;
    if discount <= 0.0 {
        return Err(Error::InvalidInput("discount factor must be positive".into()));
    }
    let m = chain.strikes.len();
    let ks = &chain.strikes;
    let undisc: Vec<f64> = chain.call_prices.iter().map(|p| p / discount).collect();

    let cleaned = project_convex(ks, &undisc)?;
    let mut diags = ChainDiagnostics { renormalization: 1.0, ..Default::default() };
    let price_scale = undisc.iter().cloned().fold(0.0_f64, f64::max);
    for i in 0..m {
        let adj = (cleaned[i] - undisc[i]).abs();
        if adj > 1e-8 * price_scale {
            diags.repaired_strikes.push(ks[i]);
        }
        diags.max_adjustment = diags.max_adjustment.max(adj);
    }
    if diags.max_adjustment > 0.05 * price_scale {
        let worst = diags
            .repaired_strikes
            .first()
            .copied()
            .unwrap_or(ks[0]);
        return Err(Error::Arbitrage(format!(
            "chain not convexifiable within tolerance; worst strike {worst}"
        )));
    }
    if cleaned.windows(2).any(|w| w[1] > w[0] + 1e-9 * price_scale) {
        let worst = cleaned
            .windows(2)
            .enumerate()
            .find(|(_, w)| w[1] > w[0] + 1e-9 * price_scale)
            .map(|(i, _)| ks[i + 1])
            .unwrap();
        return Err(Error::Arbitrage(format!(
            "cleaned prices increase in strike at {worst}"
        )));
    }

    // density at interior strikes: second derivative on a non-uniform grid
    let mut dens = Vec::with_capacity(m - 2);
    for i in 1..m - 1 {
        let (h0, h1) = (ks[i] - ks[i - 1], ks[i + 1] - ks[i]);
        let d2 = 2.0
            * (cleaned[i - 1] * h1 - cleaned[i] * (h0 + h1) + cleaned[i + 1] * h0)
            / (h0 * h1 * (h0 + h1));
        dens.push(d2);
    }
    let inner_k = &ks[1..m - 1];
    // the second difference reads the density through a triangle kernel as
    // wide as the strike spacing, which damps the high-frequency content the
    // mixture transform lives on; subtracting the kernel's leading blur
    // (variance h^2/6) removes the bias at second order
    let nd = dens.len();
    let mut sharp = dens.clone();
    for j in 1..nd.saturating_sub(1) {
        let (h0, h1) = (inner_k[j] - inner_k[j - 1], inner_k[j + 1] - inner_k[j]);
        let dd = 2.0 * (dens[j - 1] * h1 - dens[j] * (h0 + h1) + dens[j + 1] * h0)
            / (h0 * h1 * (h0 + h1));
        sharp[j] = dens[j] - 0.5 * (h0 * h0 + h1 * h1) * dd / 6.0;
    }
    let mut dens = sharp;
    let clipped: f64 = dens.iter().map(|d| (-d).max(0.0)).sum();
    diags.clipped_mass = clipped;
    for d in dens.iter_mut() {
        *d = d.max(0.0);
    }

    // tails matched to edge value and slope
    let left = fit_lognormal_tail(inner_k, &dens, TailSide::Left)?;
    let right = fit_lognormal_tail(inner_k, &dens, TailSide::Right)?;

    // target grid: log-spaced around the forward, span from ATM implied variance
    let f = chain.forward;
    let atm = interp_clamped(ks, &undisc, f);
    let v_atm = crate::black::implied_total_variance(crate::black::OptionKind::Call, f, f, atm)
        .unwrap_or(0.04)
        .max(1e-4);
    let sv = v_atm.sqrt();
    let y_lo = -span_sigmas * sv - v_atm;
    let y_hi = span_sigmas * sv;
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| f * (y_lo + (y_hi - y_lo) * i as f64 / (n_grid - 1) as f64).exp())
        .collect();

    let mut pdf = Vec::with_capacity(n_grid);
    for &x in &grid {
        let d = if x < inner_k[0] {
            left.map_or(0.0, |t| t.density(x))
        } else if x > inner_k[inner_k.len() - 1] {
            right.map_or(0.0, |t| t.density(x))
        } else {
            interp_clamped(inner_k, &dens, x)
        };
        pdf.push(d.max(0.0));
    }
    let mass = trapezoid(&grid, &pdf);
    if mass <= 0.0 {
        return Err(Error::Arbitrage("chain produced an empty density".into()));
    }
    diags.renormalization = 1.0 / mass;
    for d in pdf.iter_mut() {
        *d /= mass;
    }
    if let Some(t) = left {
        diags.tail_mass.0 = t.mass_beyond(inner_k[0], TailSide::Left) / mass;
    }
    if let Some(t) = right {
        diags.tail_mass.1 = t.mass_beyond(inner_k[inner_k.len() - 1], TailSide::Right) / mass;
    }

    let slice = RiskNeutralSlice::new(chain.maturity, grid, pdf)?;
    slice.check_martingale(f)?;
    Ok((slice, diags))
}

/// L2 projection of quotes onto the cone of convex sequences.
/// Convex sequences on the strike grid are exactly {affine + hinge combos
/// with non-negative hinge weights}; the affine part is unconstrained and is
/// eliminated before the NNLS solve.
fn project_convex(ks: &[f64], prices: &[f64]) -> Result<Vec<f64>> {
    let m = ks.len();
    let nh = m - 2;
    // affine basis Q = [1, k]; projector P = I - Q (Q^T Q)^-1 Q^T
    let mut qtq = Mat::zeros(2, 2);
    let mut qtc = [0.0; 2];
    for i in 0..m {
        *qtq.at_mut(0, 0) += 1.0;
        *qtq.at_mut(0, 1) += ks[i];
        *qtq.at_mut(1, 1) += ks[i] * ks[i];
        qtc[0] += prices[i];
        qtc[1] += ks[i] * prices[i];
    }
    *qtq.at_mut(1, 0) = qtq.at(0, 1);
    let project_out_affine = |v: &[f64]| -> Result<Vec<f64>> {
        let mut rhs = [0.0; 2];
        for i in 0..m {
            rhs[0] += v[i];
            rhs[1] += ks[i] * v[i];
        }
        let ab = spd_solve(&qtq, &rhs)
            .ok_or_else(|| Error::Internal("degenerate strike grid".into()))?;
        Ok((0..m).map(|i| v[i] - ab[0] - ab[1] * ks[i]).collect())
    };

    let mut h = Mat::zeros(m, nh);
    for j in 0..nh {
        for i in 0..m {
            *h.at_mut(i, j) = (ks[i] - ks[j + 1]).max(0.0);
        }
    }
    // columns of P H
    let mut ph = Mat::zeros(m, nh);
    for j in 0..nh {
        let col: Vec<f64> = (0..m).map(|i| h.at(i, j)).collect();
        let pc = project_out_affine(&col)?;
        for (i, &v) in pc.iter().enumerate() {
            *ph.at_mut(i, j) = v;
        }
    }
    let pc = project_out_affine(prices)?;
    let w = nnls(&ph, &pc)?;

    // recover the affine part for the chosen hinge weights
    let hw = h.matvec(&w);
    let resid: Vec<f64> = prices.iter().zip(&hw).map(|(p, s)| p - s).collect();
    let mut rhs = [0.0; 2];
    for i in 0..m {
        rhs[0] += resid[i];
        rhs[1] += ks[i] * resid[i];
    }
    let ab = spd_solve(&qtq, &rhs)
        .ok_or_else(|| Error::Internal("degenerate strike grid".into()))?;
    Ok((0..m).map(|i| ab[0] + ab[1] * ks[i] + hw[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TailSide {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy)]
struct LognormalTail {
    mu: f64,
    sigma: f64,
    scale: f64,
}

impl LognormalTail {
    fn density(&self, x: f64) -> f64 {
        let z = ((x.ln() - self.mu) / self.sigma, x * self.sigma);
        self.scale * crate::black::norm_pdf(z.0) / z.1
    }

    fn mass_beyond(&self, edge: f64, side: TailSide) -> f64 {
        let z = (edge.ln() - self.mu) / self.sigma;
        match side {
            TailSide::Right => self.scale * (1.0 - norm_cdf(z)),
            TailSide::Left => self.scale * norm_cdf(z),
        }
    }
}

/// Fits a (scaled) lognormal to the edge density value and slope. Returns
/// None when the edge density vanishes (no tail mass needed).
fn fit_lognormal_tail(ks: &[f64], dens: &[f64], side: TailSide) -> Result<Option<LognormalTail>> {
    let n = ks.len();
    let (xe, de, dd) = match side {
        TailSide::Left => (ks[0], dens[0], (dens[1] - dens[0]) / (ks[1] - ks[0])),
        TailSide::Right => (
            ks[n - 1],
            dens[n - 1],
            (dens[n - 1] - dens[n - 2]) / (ks[n - 1] - ks[n - 2]),
        ),
    };
    if de <= 0.0 {
        return Ok(None);
    }
    // with u = ln x and d(x) = scale * phi((u-mu)/s) / (x s):
    //   x d'/d = -1 - (u - mu)/s^2  =>  (u - mu)/s^2 = -(1 + x d'/d) =: a
    let a = -(1.0 + xe * dd / de);
    let integrable = match side {
        TailSide::Right => a > 0.0,
        TailSide::Left => a < 0.0,
    };
    if !integrable {
        return Err(Error::Arbitrage(format!(
            "edge density at {xe} does not decay; cannot paste a lognormal tail"
        )));
    }
    // value match with scale fixed by continuity of the *shape*: choose
    // scale so that the tail density equals de at the edge for the solved
    // (mu, sigma); sigma solves e^{-a^2 s^2 / 2} = de * xe * sqrt(2pi) * s
    // after absorbing any remaining mismatch into `scale`.
    let c = de * xe * (2.0 * std::f64::consts::PI).sqrt();
    let g = |s: f64| (-0.5 * a * a * s * s).exp() - c * s;
    let mut lo = 1e-8;
    let mut hi = 1e-8;
    while g(hi) > 0.0 && hi < 1e6 {
        lo = hi;
        hi *= 2.0;
    }
    let (mut sigma, mut scale) = (0.2, 1.0);
    if g(hi) <= 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        sigma = 0.5 * (lo + hi);
    } else {
        // no root: keep a default width and absorb the mismatch in scale
        scale = 1.0;
    }
    let mu = xe.ln() - a * sigma * sigma;
    let mut tail = LognormalTail { mu, sigma, scale };
    let model = tail.density(xe);
    if model > 0.0 {
        tail.scale = de / model;
    }
    Ok(Some(tail))
}
