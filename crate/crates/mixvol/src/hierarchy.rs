//! Multi-period hierarchical model: laws of cumulative variance at each
//! maturity linked by couplings whose three marginal families (rows,
//! columns, lattice-aligned differences) are pinned by spot slices and
//! forward-ratio slices. All laws live on one shared uniform lattice so
//! difference binning is exact.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{LogMoneynessDensity, RateCurve};
use crate::mc::path_rng;
use crate::numerics::interp_clamped;
use crate::recovery::{
    default_eta_grid, invert_laplace, mixing_transform, InversionEngine, RecoveredMixing,
};
use crate::stats::ks_two_sample;

/// Law of a variance quantity on the shared lattice (grid node j holds
/// probability pmf[j]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceMarginal {
    pub maturity: f64,
    pub grid: Vec<f64>,
    pub pmf: Vec<f64>,
}

impl VarianceMarginal {
    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != self.pmf.len() || self.grid.len() < 2 {
            return Err(Error::InvalidInput("marginal grid/pmf mismatch".into()));
        }
        let sum: f64 = self.pmf.iter().sum();
        if (sum - 1.0).abs() > 1e-8 || self.pmf.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidInput(format!(
                "marginal pmf must be nonnegative with mass 1 (got {sum})"
            )));
        }
        Ok(())
    }

    /// Piecewise-linear inverse CDF: continuous within cells, so lattice
    /// quantization does not imprint steps on simulated laws.
    pub fn sample_value(&self, u: f64) -> f64 {
        sample_pmf(&self.grid, &self.pmf, u)
    }
}

fn sample_pmf(grid: &[f64], pmf: &[f64], u: f64) -> f64 {
    let h = grid[1] - grid[0];
    let mut acc = 0.0;
    for (j, &p) in pmf.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        if u <= acc + p {
            let frac = ((u - acc) / p).clamp(0.0, 1.0);
            return (grid[j] - 0.5 * h + frac * h).max(0.0);
        }
        acc += p;
    }
    grid[grid.len() - 1]
}

/// Joint law of cumulative variance at two consecutive maturities on the
/// shared lattice; matrix[i][j] = P(V_lo = grid[i], V_hi = grid[j]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceCoupling {
    pub t_lo: f64,
    pub t_hi: f64,
    pub grid: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
}

impl VarianceCoupling {
    pub fn row_marginal(&self) -> Vec<f64> {
        self.matrix.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut col = vec![0.0; n];
        for row in &self.matrix {
            for (j, &c) in row.iter().enumerate() {
                col[j] += c;
            }
        }
        col
    }

    /// Law of V_hi - V_lo; exact on the lattice since offsets align.
    pub fn difference_marginal(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut diff = vec![0.0; n];
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if j >= i {
                    diff[j - i] += c;
                }
            }
        }
        diff
    }

    /// Conditional pmf of V_hi given V_lo in the cell nearest to v_lo.
    /// Empty rows fall back to the nearest populated one.
    pub fn conditional_pmf(&self, v_lo: f64) -> Vec<f64> {
        let n = self.grid.len();
        let h = self.grid[1] - self.grid[0];
        let i0 = (((v_lo - self.grid[0]) / h).round() as i64).clamp(0, n as i64 - 1) as usize;
        let row_mass = |i: usize| -> f64 { self.matrix[i].iter().sum() };
        let mut i = i0;
        if row_mass(i) <= 0.0 {
            for d in 1..n {
                if i0 >= d && row_mass(i0 - d) > 0.0 {
                    i = i0 - d;
                    break;
                }
                if i0 + d < n && row_mass(i0 + d) > 0.0 {
                    i = i0 + d;
                    break;
                }
            }
        }
        let mass = row_mass(i);
        self.matrix[i].iter().map(|&c| c / mass).collect()
    }
}

/// Hierarchical model over maturities T_1 < ... < T_K: cumulative-variance
/// marginals, one coupling per consecutive pair, and the per-period
/// increment laws the couplings' difference marginals must match.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchicalModel {
    pub t0: f64,
    pub x0: f64,
    pub v0: f64,
    pub rates: RateCurve,
    pub maturities: Vec<f64>,
    pub marginals: Vec<VarianceMarginal>,
    pub increment_laws: Vec<VarianceMarginal>,
    pub couplings: Vec<VarianceCoupling>,
}

impl HierarchicalModel {
    pub fn validate(&self) -> Result<()> {
        let k = self.maturities.len();
        if k == 0 || self.maturities[0] <= self.t0 {
            return Err(Error::InvalidInput("maturities must start after t0".into()));
        }
        if self.maturities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("maturities must be ascending".into()));
        }
        if self.marginals.len() != k
            || self.couplings.len() + 1 != k && k > 1
            || (k == 1 && !self.couplings.is_empty())
        {
            return Err(Error::InvalidInput("marginal/coupling counts must match periods".into()));
        }
        if self.increment_laws.len() != self.couplings.len() {
            return Err(Error::InvalidInput(
                "need one increment law per coupling".into(),
            ));
        }
        for m in &self.marginals {
            m.validate()?;
        }
        if self.x0 <= 0.0 || self.v0 < 0.0 {
            return Err(Error::InvalidInput("need x0 > 0 and v0 >= 0".into()));
        }
        Ok(())
    }
}

/// Options controlling lattice size and coupling construction.
#[derive(Debug, Clone)]
pub struct HierarchyOptions {
    pub lattice_cells: usize,
    pub ipf_tol: f64,
    pub ipf_max_sweeps: usize,
    /// Residual above this after the sweep budget is an infeasibility error.
    pub ipf_fail_residual: f64,
    pub engine: InversionEngine,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        HierarchyOptions {
            lattice_cells: 512,
            ipf_tol: 1e-6,
            ipf_max_sweeps: 10_000,
            ipf_fail_residual: 1e-3,
            engine: InversionEngine::Auto,
        }
    }
}

/// Iterative proportional fitting of a coupling to three marginal families:
/// rows -> p, columns -> q, lattice differences -> r. Initialized from the
/// row x difference product, which already satisfies rows and differences.
pub fn coupling_from_marginals(
    t_lo: f64,
    t_hi: f64,
    grid: &[f64],
    p: &[f64],
    q: &[f64],
    r: &[f64],
    opts: &HierarchyOptions,
) -> Result<VarianceCoupling> {
    let n = grid.len();
    if p.len() != n || q.len() != n || r.len() != n {
        return Err(Error::InvalidInput("marginals must share the lattice".into()));
    }
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        if p[i] <= 0.0 {
            continue;
        }
        for j in i..n {
            let rd = r[j - i];
            if rd > 0.0 {
                c[i][j] = p[i] * rd;
            }
        }
    }
    let mut residual = f64::INFINITY;
    for _ in 0..opts.ipf_max_sweeps {
        // rows
        for i in 0..n {
            let s: f64 = c[i].iter().sum();
            if s > 0.0 && p[i] > 0.0 {
                let f = p[i] / s;
                for v in c[i].iter_mut() {
                    *v *= f;
                }
            } else if s > 0.0 {
                for v in c[i].iter_mut() {
                    *v = 0.0;
                }
            }
        }
        // columns
        let mut col = vec![0.0; n];
        for row in &c {
            for (j, &v) in row.iter().enumerate() {
                col[j] += v;
            }
        }
        for row in c.iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                if col[j] > 0.0 && q[j] > 0.0 {
                    *v *= q[j] / col[j];
                } else if col[j] > 0.0 {
                    *v = 0.0;
                }
            }
        }
        // differences
        let mut diag = vec![0.0; n];
        for (i, row) in c.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if j >= i {
                    diag[j - i] += v;
                }
            }
        }
        for (i, row) in c.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if j >= i {
                    let d = j - i;
                    if diag[d] > 0.0 && r[d] > 0.0 {
                        *v *= r[d] / diag[d];
                    } else if diag[d] > 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        // total renormalization guards drift from clipped families
        let total: f64 = c.iter().map(|row| row.iter().sum::<f64>()).sum();
        if total > 0.0 {
            for row in c.iter_mut() {
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
        }
        let coup = VarianceCoupling { t_lo, t_hi, grid: grid.to_vec(), matrix: c.clone() };
        let e_row = l1(&coup.row_marginal(), p);
        let e_col = l1(&coup.col_marginal(), q);
        let e_diag = l1(&coup.difference_marginal(), r);
        residual = e_row.max(e_col).max(e_diag);
        if residual < opts.ipf_tol {
            break;
        }
    }
    if residual > opts.ipf_fail_residual {
        return Err(Error::InfeasibleCoupling(format!(
            "coupling fit stalled at L1 residual {residual:.2e}; the three marginal \
             families are mutually inconsistent"
        )));
    }
    Ok(VarianceCoupling { t_lo, t_hi, grid: grid.to_vec(), matrix: c })
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Shared lattice 0, h, ..., (n-1) h covering [0, v_max].
pub fn lattice(v_max: f64, cells: usize) -> Vec<f64> {
    let n = cells.max(16);
    let h = v_max / (n - 1) as f64;
    (0..n).map(|j| j as f64 * h).collect()
}

/// Bins a recovered law onto the lattice: atom mass is split linearly
/// between the two neighboring nodes (preserving its mean, which keeps
/// level, increment, and sum laws additively consistent on the shared
/// lattice), gridded laws by distribution-function differences over cells.
pub fn bin_recovered(rec: &RecoveredMixing, grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let h = grid[1] - grid[0];
    let mut pmf = vec![0.0; n];
    if let Some(atoms) = &rec.atoms {
        for &(t, m) in atoms {
            let pos = ((t - grid[0]) / h).clamp(0.0, (n - 1) as f64);
            let j0 = pos.floor() as usize;
            let j1 = (j0 + 1).min(n - 1);
            let frac = pos - j0 as f64;
            pmf[j0] += m * (1.0 - frac);
            pmf[j1] += m * frac;
        }
    } else {
        let z_at = |v: f64| -> f64 {
            if v <= rec.grid[0] {
                0.0
            } else if v >= rec.grid[rec.grid.len() - 1] {
                rec.cdf[rec.cdf.len() - 1]
            } else {
                interp_clamped(&rec.grid, &rec.cdf, v)
            }
        };
        for j in 0..n {
            let lo = grid[j] - 0.5 * h;
            let hi = grid[j] + 0.5 * h;
            pmf[j] = z_at(hi) - z_at(lo);
        }
        pmf[0] += z_at(grid[0] - 0.5 * h);
        pmf[n - 1] += rec.cdf[rec.cdf.len() - 1] - z_at(grid[n - 1] + 0.5 * h);
    }
    let s: f64 = pmf.iter().sum();
    if s > 0.0 {
        for v in pmf.iter_mut() {
            *v /= s;
        }
    }
    pmf
}

/// A forward-ratio slice: the log-moneyness density of X(end)/X(start),
/// with `density.maturity` the end time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioSlice {
    pub start: f64,
    pub density: LogMoneynessDensity,
}

/// Builds the hierarchical model from spot slices (one per maturity) and
/// forward-ratio slices (one per consecutive period). Cumulative and
/// increment variance laws are recovered per slice, binned to the shared
/// lattice, and coupled by proportional fitting.
pub fn build_hierarchy(
    spot: &[LogMoneynessDensity],
    ratio: &[RatioSlice],
    x0: f64,
    t0: f64,
    v0: f64,
    rates: &RateCurve,
    opts: &HierarchyOptions,
) -> Result<HierarchicalModel> {
    let k = spot.len();
    if k == 0 {
        return Err(Error::InvalidInput("need at least one spot slice".into()));
    }
    if ratio.len() + 1 != k {
        return Err(Error::InvalidInput(
            "need exactly one ratio slice per consecutive maturity pair".into(),
        ));
    }
    let mats: Vec<f64> = spot.iter().map(|s| s.maturity).collect();
    if mats[0] <= t0 || mats.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("spot maturities must ascend after t0".into()));
    }
    for (i, r) in ratio.iter().enumerate() {
        if (r.start - mats[i]).abs() > 1e-12 || (r.density.maturity - mats[i + 1]).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "ratio slice {i} must span maturity {} to {}",
                mats[i],
                mats[i + 1]
            )));
        }
    }
    // recover every law first to size the lattice
    let mut recs = Vec::with_capacity(k);
    for e in spot {
        recs.push(recover_total_variance(e, opts.engine)?);
    }
    let mut recs_ratio = Vec::with_capacity(ratio.len());
    for r in ratio {
        recs_ratio.push(recover_total_variance(&r.density, opts.engine)?);
    }
    let v_max = recs
        .iter()
        .chain(recs_ratio.iter())
        .map(|r| r.grid[r.grid.len() - 1])
        .fold(0.0_f64, f64::max)
        + v0;
    let grid = lattice(v_max, opts.lattice_cells);
    if v0 != 0.0 {
        return Err(Error::InvalidInput(
            "building from slices assumes no variance accrued before t0".into(),
        ));
    }
    let marginals: Vec<VarianceMarginal> = recs
        .iter()
        .zip(&mats)
        .map(|(rec, &m)| VarianceMarginal {
            maturity: m,
            grid: grid.clone(),
            pmf: bin_recovered(rec, &grid),
        })
        .collect();
    let increment_laws: Vec<VarianceMarginal> = recs_ratio
        .iter()
        .zip(mats.iter().skip(1))
        .map(|(rec, &m)| VarianceMarginal {
            maturity: m,
            grid: grid.clone(),
            pmf: bin_recovered(rec, &grid),
        })
        .collect();
    let mut couplings = Vec::with_capacity(k - 1);
    for i in 0..k - 1 {
        couplings.push(coupling_from_marginals(
            mats[i],
            mats[i + 1],
            &grid,
            &marginals[i].pmf,
            &marginals[i + 1].pmf,
            &increment_laws[i].pmf,
            opts,
        )?);
    }
    let model = HierarchicalModel {
        t0,
        x0,
        v0,
        rates: rates.clone(),
        maturities: mats,
        marginals,
        increment_laws,
        couplings,
    };
    model.validate()?;
    Ok(model)
}

fn recover_total_variance(
    e: &LogMoneynessDensity,
    engine: InversionEngine,
) -> Result<RecoveredMixing> {
    let vbar = {
        let w = crate::numerics::trapezoid_weights(&e.grid);
        let mass: f64 = e.density.iter().zip(&w).map(|(&d, &wi)| d * wi).sum();
        let mean: f64 = e
            .grid
            .iter()
            .zip(e.density.iter().zip(&w))
            .map(|(&y, (&d, &wi))| y * d * wi)
            .sum::<f64>()
            / mass;
        e.grid
            .iter()
            .zip(e.density.iter().zip(&w))
            .map(|(&y, (&d, &wi))| (y - mean) * (y - mean) * d * wi)
            .sum::<f64>()
            / mass
    }
    .max(1e-8);
    let theta_hi = 6.0 * vbar;
    let theta = crate::numerics::linspace(theta_hi / 2000.0, theta_hi, 512);
    let profile = mixing_transform(e, &default_eta_grid(&theta), 1.0)?;
    invert_laplace(&profile, &theta, engine)
}

#[derive(Debug, Clone)]
pub struct HierarchyCheck {
    pub coupling: usize,
    pub row_l1: f64,
    pub col_l1: f64,
    pub diff_l1: f64,
    pub chain_l1: f64,
}

#[derive(Debug, Clone)]
pub struct HierarchyReport {
    pub checks: Vec<HierarchyCheck>,
    pub marginal_tol: f64,
    pub chain_tol: f64,
    pub passed: bool,
}

/// Verifies the model's internal consistency: each coupling's three
/// marginal families match the stored laws within 1e-4 L1, and pushing a
/// marginal through the coupling's conditionals reproduces the next one
/// within 2e-4 L1.
pub fn verify_hierarchy(model: &HierarchicalModel) -> Result<HierarchyReport> {
    model.validate()?;
    let marginal_tol = 1e-4;
    let chain_tol = 2e-4;
    let mut checks = Vec::with_capacity(model.couplings.len());
    let mut passed = true;
    for (i, coup) in model.couplings.iter().enumerate() {
        let row_l1 = l1(&coup.row_marginal(), &model.marginals[i].pmf);
        let col_l1 = l1(&coup.col_marginal(), &model.marginals[i + 1].pmf);
        let diff_l1 = l1(&coup.difference_marginal(), &model.increment_laws[i].pmf);
        // chain: push the lower marginal through the conditional kernel
        let n = coup.grid.len();
        let rows = coup.row_marginal();
        let mut pushed = vec![0.0; n];
        for (a, row) in coup.matrix.iter().enumerate() {
            if rows[a] <= 0.0 {
                continue;
            }
            let scale = model.marginals[i].pmf[a] / rows[a];
            for (b, &v) in row.iter().enumerate() {
                pushed[b] += v * scale;
            }
        }
        let chain_l1 = l1(&pushed, &model.marginals[i + 1].pmf);
        passed &= row_l1 <= marginal_tol
            && col_l1 <= marginal_tol
            && diff_l1 <= marginal_tol
            && chain_l1 <= chain_tol;
        checks.push(HierarchyCheck { coupling: i, row_l1, col_l1, diff_l1, chain_l1 });
    }
    Ok(HierarchyReport { checks, marginal_tol, chain_tol, passed })
}

/// Square-root variance process parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta_bar: f64,
    pub xi: f64,
    pub v0: f64,
}

/// Builds the hierarchical layers implied by a square-root variance
/// process: simulates the variance path by full-truncation Euler,
/// accumulates integrated variance per period, and takes empirical joint
/// couplings between consecutive cumulative variances. No proportional
/// fitting is involved; the empirical joint is the coupling.
pub fn heston_variance_law(
    p: &HestonParams,
    maturities: &[f64],
    t0: f64,
    n_paths: usize,
    steps_per_year: usize,
    seed: u64,
    lattice_cells: usize,
) -> Result<(Vec<VarianceMarginal>, Vec<VarianceMarginal>, Vec<VarianceCoupling>)> {
    if p.kappa <= 0.0 || p.theta_bar <= 0.0 || p.xi < 0.0 || p.v0 < 0.0 {
        return Err(Error::InvalidInput("need kappa, theta_bar > 0 and xi, v0 >= 0".into()));
    }
    let k = maturities.len();
    if k == 0 || maturities[0] <= t0 || maturities.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("maturities must ascend after t0".into()));
    }
    let t_end = maturities[k - 1];
    let n_steps = (((t_end - t0) * steps_per_year as f64).ceil() as usize).max(1);
    let dt = (t_end - t0) / n_steps as f64;
    let sqdt = dt.sqrt();
    // cumulative integrated variance per path at each maturity
    let mut cum = vec![vec![0.0_f64; k]; n_paths];
    for (path, cum_row) in cum.iter_mut().enumerate() {
        let mut rng = path_rng(seed, path as u64);
        let mut v = p.v0;
        let mut acc = 0.0;
        let mut t = t0;
        let mut next = 0;
        for _ in 0..n_steps {
            let vp = v.max(0.0);
            acc += vp * dt;
            let z: f64 = rng.sample(StandardNormal);
            v += p.kappa * (p.theta_bar - vp) * dt + p.xi * vp.sqrt() * sqdt * z;
            t += dt;
            while next < k && t >= maturities[next] - 0.5 * dt {
                cum_row[next] = acc;
                next += 1;
            }
        }
        while next < k {
            cum_row[next] = acc;
            next += 1;
        }
    }
    let v_max = cum
        .iter()
        .map(|row| row[k - 1])
        .fold(0.0_f64, f64::max)
        * 1.02
        + 1e-12;
    let grid = lattice(v_max, lattice_cells);
    let h = grid[1] - grid[0];
    let n = grid.len();
    let bin = |v: f64| -> usize { (((v - grid[0]) / h).round() as i64).clamp(0, n as i64 - 1) as usize };
    let w = 1.0 / n_paths as f64;
    let mut marginals = Vec::with_capacity(k);
    for (ki, &m) in maturities.iter().enumerate() {
        let mut pmf = vec![0.0; n];
        for row in &cum {
            pmf[bin(row[ki])] += w;
        }
        marginals.push(VarianceMarginal { maturity: m, grid: grid.clone(), pmf });
    }
    let mut couplings = Vec::with_capacity(k.saturating_sub(1));
    let mut increment_laws = Vec::with_capacity(k.saturating_sub(1));
    for ki in 0..k.saturating_sub(1) {
        let mut mat = vec![vec![0.0; n]; n];
        for row in &cum {
            mat[bin(row[ki])][bin(row[ki + 1])] += w;
        }
        let coup = VarianceCoupling {
            t_lo: maturities[ki],
            t_hi: maturities[ki + 1],
            grid: grid.clone(),
            matrix: mat,
        };
        increment_laws.push(VarianceMarginal {
            maturity: maturities[ki + 1],
            grid: grid.clone(),
            pmf: coup.difference_marginal(),
        });
        couplings.push(coup);
    }
    Ok((marginals, increment_laws, couplings))
}

/// Conditional restart: the sub-model on maturities after period `k`,
/// given the realized cumulative variance and price at T_k.
pub fn conditional_restart(
    model: &HierarchicalModel,
    k: usize,
    v_realized: f64,
    x_at: f64,
) -> Result<HierarchicalModel> {
    model.validate()?;
    if k + 1 >= model.maturities.len() {
        return Err(Error::InvalidInput("no periods remain after the restart point".into()));
    }
    if v_realized < 0.0 || x_at <= 0.0 {
        return Err(Error::InvalidInput("need v_realized >= 0 and x_at > 0".into()));
    }
    let coup = &model.couplings[k];
    let grid = coup.grid.clone();
    let cond = coup.conditional_pmf(v_realized);
    let mut marginals = vec![VarianceMarginal {
        maturity: model.maturities[k + 1],
        grid: grid.clone(),
        pmf: cond,
    }];
    // push the conditional forward through the remaining couplings
    for later in k + 1..model.couplings.len() {
        let c = &model.couplings[later];
        let rows = c.row_marginal();
        let n = grid.len();
        let mut pushed = vec![0.0; n];
        for (a, row) in c.matrix.iter().enumerate() {
            if rows[a] <= 0.0 {
                continue;
            }
            let scale = marginals[marginals.len() - 1].pmf[a] / rows[a];
            for (b, &v) in row.iter().enumerate() {
                pushed[b] += v * scale;
            }
        }
        let s: f64 = pushed.iter().sum();
        if s > 0.0 {
            for v in pushed.iter_mut() {
                *v /= s;
            }
        }
        marginals.push(VarianceMarginal {
            maturity: c.t_hi,
            grid: grid.clone(),
            pmf: pushed,
        });
    }
    let restart = HierarchicalModel {
        t0: model.maturities[k],
        x0: x_at,
        v0: v_realized,
        rates: model.rates.clone(),
        maturities: model.maturities[k + 1..].to_vec(),
        marginals,
        increment_laws: model.increment_laws[k + 1..].to_vec(),
        couplings: model.couplings[k + 1..].to_vec(),
    };
    restart.validate()?;
    Ok(restart)
}

#[derive(Debug, Clone)]
pub struct SimulationCheck {
    pub label: String,
    pub ks: f64,
    pub passed: bool,
}

/// Compares hierarchical simulation against reference samples maturity by
/// maturity plus the terminal-period log ratio.
pub fn compare_marginals(
    sim: &[Vec<f64>],
    reference: &[Vec<f64>],
    labels: &[String],
    threshold: f64,
) -> Vec<SimulationCheck> {
    sim.iter()
        .zip(reference)
        .zip(labels)
        .map(|((a, b), l)| {
            let mut a = a.clone();
            let mut b = b.clone();
            let ks = ks_two_sample(&mut a, &mut b);
            SimulationCheck { label: l.clone(), ks, passed: ks < threshold }
        })
        .collect()
}

/// Samples a cumulative-variance path (V_1, ..., V_K). Marginals and
/// couplings are laws of variance accumulated since inception; v0 floors
/// the first draw for restarted models.
pub fn sample_variance_path<R: Rng>(model: &HierarchicalModel, rng: &mut R) -> Vec<f64> {
    let k = model.maturities.len();
    let mut path = Vec::with_capacity(k);
    let u: f64 = rng.gen();
    let mut v = model.marginals[0].sample_value(u).max(model.v0);
    path.push(v);
    for coup in &model.couplings {
        let pmf = coup.conditional_pmf(v);
        let u: f64 = rng.gen();
        let next = sample_pmf(&coup.grid, &pmf, u).max(v);
        v = next;
        path.push(v);
    }
    path
}
