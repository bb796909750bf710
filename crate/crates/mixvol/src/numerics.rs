//! Small numeric kernels: quadrature, interpolation, isotonic regression,
//! non-negative least squares, and dense SPD solves.

use crate::error::{Error, Result};

/// Trapezoid weights for an arbitrary ascending grid.
pub fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 2);
    let mut w = vec![0.0; n];
    w[0] = 0.5 * (x[1] - x[0]);
    w[n - 1] = 0.5 * (x[n - 1] - x[n - 2]);
    for i in 1..n - 1 {
        w[i] = 0.5 * (x[i + 1] - x[i - 1]);
    }
    w
}

pub fn trapezoid(x: &[f64], f: &[f64]) -> f64 {
    trapezoid_weights(x).iter().zip(f).map(|(w, v)| w * v).sum()
}

/// Composite Simpson weights on a uniform grid with an odd point count.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 3 && n % 2 == 1, "simpson needs an odd point count");
    let mut w = vec![2.0 * h / 3.0; n];
    w[0] = h / 3.0;
    w[n - 1] = h / 3.0;
    for wi in w.iter_mut().skip(1).step_by(2) {
        *wi = 4.0 * h / 3.0;
    }
    w
}

/// Piecewise-linear interpolation on an ascending table, clamped at the ends.
pub fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let j = match xs.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
        Ok(j) => return ys[j],
        Err(j) => j,
    };
    let t = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    ys[j - 1] + t * (ys[j] - ys[j - 1])
}

/// Inverse of a monotone nondecreasing table y(x) at level `p`.
/// Flat stretches (ties) resolve to the midpoint of the tied x-interval.
pub fn quantile_from_cdf(xs: &[f64], cdf: &[f64], p: f64) -> f64 {
    debug_assert_eq!(xs.len(), cdf.len());
    let n = xs.len();
    if p <= cdf[0] {
        return xs[0];
    }
    if p >= cdf[n - 1] {
        return xs[n - 1];
    }
    // first index with cdf >= p
    let mut hi = match cdf.binary_search_by(|c| c.partial_cmp(&p).unwrap()) {
        Ok(j) => j,
        Err(j) => j,
    };
    // exact tie: midpoint of the maximal tied interval
    if (cdf[hi] - p).abs() <= f64::EPSILON * 4.0 {
        let mut lo = hi;
        while lo > 0 && (cdf[lo - 1] - p).abs() <= f64::EPSILON * 4.0 {
            lo -= 1;
        }
        let mut top = hi;
        while top + 1 < n && (cdf[top + 1] - p).abs() <= f64::EPSILON * 4.0 {
            top += 1;
        }
        return 0.5 * (xs[lo] + xs[top]);
    }
    while hi > 0 && cdf[hi - 1] >= p {
        hi -= 1;
    }
    let lo = hi - 1;
    let dc = cdf[hi] - cdf[lo];
    if dc <= 0.0 {
        return 0.5 * (xs[lo] + xs[hi]);
    }
    xs[lo] + (p - cdf[lo]) / dc * (xs[hi] - xs[lo])
}

/// Weighted isotonic regression (nondecreasing), pool-adjacent-violators.
pub fn isotonic_nondecreasing(y: &[f64], w: &[f64]) -> Vec<f64> {
    debug_assert_eq!(y.len(), w.len());
    let n = y.len();
    let mut level: Vec<f64> = Vec::with_capacity(n);
    let mut weight: Vec<f64> = Vec::with_capacity(n);
    let mut count: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        level.push(y[i]);
        weight.push(w[i]);
        count.push(1);
        while level.len() > 1 && level[level.len() - 2] > level[level.len() - 1] {
            let (l2, w2, c2) = (level.pop().unwrap(), weight.pop().unwrap(), count.pop().unwrap());
            let l1 = *level.last().unwrap();
            let w1 = *weight.last().unwrap();
            let c1 = *count.last().unwrap();
            let wt = w1 + w2;
            *level.last_mut().unwrap() = (l1 * w1 + l2 * w2) / wt;
            *weight.last_mut().unwrap() = wt;
            *count.last_mut().unwrap() = c1 + c2;
        }
    }
    let mut out = Vec::with_capacity(n);
    for (l, c) in level.iter().zip(&count) {
        out.extend(std::iter::repeat(*l).take(*c));
    }
    out
}

/// Running-max projection of a sequence onto nondecreasing, then clamp to [lo, hi].
pub fn monotone_clamp(y: &mut [f64], lo: f64, hi: f64) {
    let mut m = f64::NEG_INFINITY;
    for v in y.iter_mut() {
        m = m.max(*v);
        *v = m.clamp(lo, hi);
    }
}

/// Dense row-major matrix, just enough for the solvers in this crate.
#[derive(Debug, Clone)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// A^T A restricted later to column subsets by the NNLS solver.
    pub fn gram(&self) -> Mat {
        let mut g = Mat::zeros(self.cols, self.cols);
        for row in self.data.chunks(self.cols) {
            for i in 0..self.cols {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for (j, &rj) in row.iter().enumerate().skip(i) {
                    *g.at_mut(i, j) += ri * rj;
                }
            }
        }
        for i in 0..self.cols {
            for j in 0..i {
                *g.at_mut(i, j) = g.at(j, i);
            }
        }
        g
    }

    pub fn t_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, yi) in self.data.chunks(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }
}

/// Cholesky solve of an SPD system given as a dense symmetric matrix.
/// Returns None if the matrix is not numerically positive definite.
pub fn spd_solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows;
    debug_assert_eq!(a.cols, n);
    debug_assert_eq!(b.len(), n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}

/// Non-negative least squares min ||A x - b||, x >= 0 (Lawson-Hanson active set).
/// The Gram matrix is formed once; passive-set solves use Cholesky on its
/// principal submatrices, so the per-iteration cost scales with the passive
/// set size, which stays small for the sparse spectra this crate fits.
pub fn nnls(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.cols;
    let gram = a.gram();
    let atb = a.t_vec(b);
    let mut x = vec![0.0; n];
    let mut passive: Vec<usize> = Vec::new();
    let mut in_passive = vec![false; n];
    let max_outer = 3 * n + 30;

    // gradient of 0.5||Ax-b||^2 is G x - A^T b
    let grad = |x: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; n];
        for i in 0..n {
            let mut s = -atb[i];
            let row = gram.row(i);
            for (xj, gij) in x.iter().zip(row) {
                if *xj != 0.0 {
                    s += gij * xj;
                }
            }
            g[i] = s;
        }
        g
    };

    for _ in 0..max_outer {
        let g = grad(&x);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !in_passive[j]
                && g[j] < -1e-12 * (1.0 + atb[j].abs())
                && best.map_or(true, |(_, v)| g[j] < v)
            {
                best = Some((j, g[j]));
            }
        }
        let Some((j_new, _)) = best else {
            return Ok(x);
        };
        passive.push(j_new);
        in_passive[j_new] = true;

        loop {
            let k = passive.len();
            let mut sub = Mat::zeros(k, k);
            let mut rhs = vec![0.0; k];
            for (r, &jr) in passive.iter().enumerate() {
                rhs[r] = atb[jr];
                for (c, &jc) in passive.iter().enumerate() {
                    *sub.at_mut(r, c) = gram.at(jr, jc);
                }
            }
            let z = spd_solve(&sub, &rhs).ok_or_else(|| {
                Error::Internal("singular passive-set system in nnls".into())
            })?;
            if z.iter().all(|&v| v > 0.0) {
                for xi in x.iter_mut() {
                    *xi = 0.0;
                }
                for (&j, &v) in passive.iter().zip(&z) {
                    x[j] = v;
                }
                break;
            }
            // step as far toward z as feasibility allows, drop blockers
            let mut alpha = f64::INFINITY;
            for (&j, &zj) in passive.iter().zip(&z) {
                if zj <= 0.0 {
                    let a_j = x[j] / (x[j] - zj);
                    alpha = alpha.min(a_j);
                }
            }
            for (&j, &zj) in passive.iter().zip(&z) {
                x[j] += alpha * (zj - x[j]);
            }
            let mut kept = Vec::with_capacity(passive.len());
            for &j in &passive {
                if x[j] > 1e-14 {
                    kept.push(j);
                } else {
                    x[j] = 0.0;
                    in_passive[j] = false;
                }
            }
            passive = kept;
            if passive.is_empty() {
                break;
            }
        }
    }
    Ok(x)
}

/// Forward divided differences f[x_0..x_n] over an arbitrary grid.
pub fn divided_difference(xs: &[f64], fs: &[f64]) -> f64 {
    let n = xs.len();
    debug_assert_eq!(fs.len(), n);
    let mut c = fs.to_vec();
    for level in 1..n {
        for i in (level..n).rev() {
            c[i] = (c[i] - c[i - 1]) / (xs[i] - xs[i - level]);
        }
    }
    c[n - 1]
}

/// log-spaced grid from lo to hi inclusive.
pub fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let l0 = lo.ln();
    let l1 = hi.ln();
    (0..n)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}
