//! Black-Scholes closed forms parametrized by total variance.
//!
//! All prices are undiscounted (forward) values; discounting is applied by
//! callers that know the rate curve. `v` is the total variance over the
//! option's life, i.e. sigma^2 * T.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub fn norm_pdf(x: f64) -> f64 {
    Normal::standard().pdf(x)
}

pub fn norm_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Call,
    Put,
}

/// Forward value of a European option with total variance `v`.
/// v = 0 degenerates to intrinsic value on the forward.
pub fn price(kind: OptionKind, f: f64, k: f64, v: f64) -> f64 {
    debug_assert!(f > 0.0 && k > 0.0 && v >= 0.0);
    if v == 0.0 {
        return match kind {
            OptionKind::Call => (f - k).max(0.0),
            OptionKind::Put => (k - f).max(0.0),
        };
    }
    let sv = v.sqrt();
    let d1 = ((f / k).ln() + 0.5 * v) / sv;
    let d2 = d1 - sv;
    match kind {
        OptionKind::Call => f * norm_cdf(d1) - k * norm_cdf(d2),
        OptionKind::Put => k * norm_cdf(-d2) - f * norm_cdf(-d1),
    }
}

/// Forward delta (derivative in the forward/spot with strike fixed).
pub fn delta(kind: OptionKind, f: f64, k: f64, v: f64) -> f64 {
    if v == 0.0 {
        let intrinsic = match kind {
            OptionKind::Call => f > k,
            OptionKind::Put => f < k,
        };
        return match (kind, intrinsic) {
            (OptionKind::Call, true) => 1.0,
            (OptionKind::Call, false) => 0.0,
            (OptionKind::Put, true) => -1.0,
            (OptionKind::Put, false) => 0.0,
        };
    }
    let sv = v.sqrt();
    let d1 = ((f / k).ln() + 0.5 * v) / sv;
    match kind {
        OptionKind::Call => norm_cdf(d1),
        OptionKind::Put => norm_cdf(d1) - 1.0,
    }
}

/// Gamma (second derivative in the forward). Same for calls and puts.
pub fn gamma(f: f64, k: f64, v: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let sv = v.sqrt();
    let d1 = ((f / k).ln() + 0.5 * v) / sv;
    norm_pdf(d1) / (f * sv)
}

/// Vega with respect to annualized volatility sigma = sqrt(v / t).
/// Same for calls and puts.
pub fn vega(f: f64, k: f64, v: f64, t: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let sv = v.sqrt();
    let d1 = ((f / k).ln() + 0.5 * v) / sv;
    f * norm_pdf(d1) * t.sqrt()
}

/// Lognormal density of the terminal price x when log(x/f) ~ N(-v/2, v).
/// Returns None for the degenerate v = 0 case (a point mass at f).
pub fn lognormal_density(f: f64, v: f64, x: f64) -> Option<f64> {
    if v == 0.0 {
        return None;
    }
    let y = (x / f).ln();
    let z = (y + 0.5 * v) / v.sqrt();
    Some(norm_pdf(z) / (x * v.sqrt()))
}

/// Density of y = log(x/f) when the component has total variance v.
pub fn log_moneyness_density(v: f64, y: f64) -> f64 {
    debug_assert!(v > 0.0);
    let z = (y + 0.5 * v) / v.sqrt();
    norm_pdf(z) / v.sqrt()
}

/// Implied total variance from a forward option price, by bracketed bisection
/// refined with Newton steps. Tolerance 1e-14 in price.
pub fn implied_total_variance(kind: OptionKind, f: f64, k: f64, target: f64) -> Result<f64> {
    let intrinsic = price(kind, f, k, 0.0);
    let upper_price = match kind {
        OptionKind::Call => f,
        OptionKind::Put => k,
    };
    if target < intrinsic - 1e-12 || target > upper_price {
        return Err(Error::Domain(format!(
            "option price {target} outside no-arbitrage bounds [{intrinsic}, {upper_price}]"
        )));
    }
    if target <= intrinsic + 1e-15 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (1e-16, 16.0);
    while price(kind, f, k, hi) < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Domain("implied variance above 1e6".into()));
        }
    }
    let mut v = 0.5 * (lo + hi);
    for _ in 0..200 {
        let p = price(kind, f, k, v);
        if (p - target).abs() < 1e-14 * f.max(1.0) {
            return Ok(v);
        }
        if p > target {
            hi = v;
        } else {
            lo = v;
        }
        // Newton on v: dP/dv = vega / (2 sqrt(v t)) * ... simpler via chain rule
        let dv = {
            let sv = v.sqrt();
            let d1 = ((f / k).ln() + 0.5 * v) / sv;
            f * norm_pdf(d1) / (2.0 * sv)
        };
        let next = if dv > 1e-300 { v - (p - target) / dv } else { f64::NAN };
        v = if next.is_finite() && next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(v)
}
