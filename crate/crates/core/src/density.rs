//! Ulam discretization of the annealed transfer operator
//! `P = p1 P_{T_alpha} + p2 P_{T_beta}`, its fixed density, regularity
//! checks, `nu`-sampling and correlation decay.

use crate::driver::{purpose, replica_rng, ModelParams, SkewState, SymbolStream};
use crate::error::{Error, Result};
use crate::maps::MapParams;
use crate::observable::Observable;
use crate::parallel::map_replicas;
use crate::stats::{cell_average, stderr, Estimate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Default lower edge of the geometric part of the grid.
pub const DEFAULT_X_MIN: f64 = 1e-10;

/// Cell boundaries `0 = b_0 < ... < b_K = 1`.
///
/// With `K = 4G`: `2G` geometric cells on `[0, 0.1]` with
/// `b_i = 0.1 (x_min / 0.1)^((2G - i) / 2G)` for `i >= 1`, then `G` uniform
/// cells on each of `[0.1, 0.5]` and `[0.5, 1]`. Doubling `K` at fixed
/// `x_min` refines every cell except the first into two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlamGrid {
    breakpoints: Vec<f64>,
    x_min: f64,
}

impl UlamGrid {
    pub fn new(cells: usize, x_min: f64) -> Result<Self> {
        if cells < 8 || !cells.is_multiple_of(4) {
            return Err(Error::InvalidParams(format!(
                "cell count must be a multiple of 4 and at least 8, got {cells}"
            )));
        }
        if !(x_min > 0.0 && x_min < 0.1) {
            return Err(Error::InvalidParams(format!("x_min = {x_min} must lie in (0, 0.1)")));
        }
        let g = cells / 2;
        let q = cells / 4;
        let mut b = Vec::with_capacity(cells + 1);
        b.push(0.0);
        let ratio = (x_min / 0.1).ln();
        for i in 1..g {
            b.push(0.1 * (ratio * (g - i) as f64 / g as f64).exp());
        }
        for i in 0..q {
            b.push(0.1 + 0.4 * i as f64 / q as f64);
        }
        for i in 0..q {
            b.push(0.5 + 0.5 * i as f64 / q as f64);
        }
        b.push(1.0);
        Ok(Self { breakpoints: b, x_min })
    }

    /// `cells` equal cells.
    pub fn uniform(cells: usize) -> Result<Self> {
        if cells < 2 || !cells.is_multiple_of(2) {
            return Err(Error::InvalidParams("uniform grid needs an even cell count".into()));
        }
        let b = (0..=cells).map(|i| i as f64 / cells as f64).collect();
        Ok(Self { breakpoints: b, x_min: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    #[inline]
    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.breakpoints[i], self.breakpoints[i + 1])
    }

    /// Index of the cell `[b_i, b_{i+1})` containing `x`; `x = 1` is in the last.
    #[inline]
    pub fn locate(&self, x: f64) -> usize {
        let k = self.breakpoints.partition_point(|&b| b <= x);
        k.saturating_sub(1).min(self.len() - 1)
    }

    /// Geometric ratio of consecutive breakpoints near zero.
    pub fn geometric_ratio(&self) -> f64 {
        self.breakpoints[2] / self.breakpoints[1]
    }
}

/// Sparse Ulam matrix, stored both by rows and by columns.
#[derive(Debug, Clone)]
pub struct UlamMatrix {
    grid: Arc<UlamGrid>,
    row_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    row_val: Vec<f64>,
    col_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    col_val: Vec<f64>,
}

impl UlamMatrix {
    pub fn grid(&self) -> &UlamGrid {
        &self.grid
    }

    pub fn nnz(&self) -> usize {
        self.row_val.len()
    }

    /// Nonzero entries `(j, P_ij)` of row `i`, sorted by `j`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.row_idx[r.clone()].iter().map(|&j| j as usize).zip(self.row_val[r].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(k, _)| k == j).map_or(0.0, |(_, v)| v)
    }

    /// Row-vector product `v P`: the pushforward of cell masses.
    pub fn push(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.push_into(v, &mut out);
        out
    }

    fn push_into(&self, v: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().with_min_len(1024).for_each(|(j, o)| {
            let r = self.col_ptr[j]..self.col_ptr[j + 1];
            *o = self.col_idx[r.clone()]
                .iter()
                .zip(&self.col_val[r])
                .map(|(&i, &p)| v[i as usize] * p)
                .sum();
        });
    }
}

// Overlaps of `[a, b]` with the preimages `[pre[j], pre[j+1]]` of the cells
// `j` in `[jlo, jhi]`, added with weight `w / (b - a)`.
fn add_branch(out: &mut Vec<(usize, f64)>, pre: &[f64], a: f64, b: f64, jlo: usize, jhi: usize, w: f64) {
    let len = b - a;
    for j in jlo..=jhi {
        let ov = b.min(pre[j + 1]) - a.max(pre[j]);
        if ov > 0.0 {
            out.push((j, w * ov / len));
        }
    }
}

fn branch_row(grid: &UlamGrid, maps: &[(f64, &MapParams, Vec<f64>)], right_pre: &[f64], i: usize) -> Vec<(usize, f64)> {
    let (a, b) = grid.cell(i);
    let k = grid.len();
    let mut out = Vec::new();
    for (p, m, left_pre) in maps {
        if a < 0.5 {
            let bl = b.min(0.5);
            let jlo = grid.locate(m.forward(a)).saturating_sub(1);
            let jhi = (grid.locate(m.forward(bl)) + 1).min(k - 1);
            add_branch(&mut out, left_pre, a, bl, jlo, jhi, *p * (bl - a) / (b - a));
        }
        if b > 0.5 {
            let ar = a.max(0.5);
            let jlo = grid.locate(2.0 * ar - 1.0).saturating_sub(1);
            let jhi = (grid.locate(2.0 * b - 1.0) + 1).min(k - 1);
            add_branch(&mut out, right_pre, ar, b, jlo, jhi, *p * (b - ar) / (b - a));
        }
    }
    out.sort_by_key(|e| e.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(out.len());
    for (j, v) in out {
        match merged.last_mut() {
            Some(last) if last.0 == j => last.1 += v,
            _ => merged.push((j, v)),
        }
    }
    merged
}

/// Ulam matrix `P_ij = sum_s p_s m(cell_i ∩ T_s^{-1} cell_j) / m(cell_i)`,
/// with preimages taken exactly through the branch inverses.
pub fn ulam_matrix(grid: &UlamGrid, mp: &ModelParams) -> UlamMatrix {
    let bp = grid.breakpoints();
    let mut maps = Vec::new();
    for (p, m) in [(mp.p1(), mp.fast()), (mp.p2(), mp.slow())] {
        if p > 0.0 {
            let pre: Vec<f64> = bp.iter().map(|&y| m.left_inverse(y)).collect();
            maps.push((p, m, pre));
        }
    }
    let right_pre: Vec<f64> = bp.iter().map(|&y| 0.5 * (y + 1.0)).collect();
    let rows: Vec<Vec<(usize, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| branch_row(grid, &maps, &right_pre, i))
        .collect();

    let k = grid.len();
    let mut row_ptr = Vec::with_capacity(k + 1);
    let (mut row_idx, mut row_val) = (Vec::new(), Vec::new());
    let mut col_count = vec![0usize; k];
    row_ptr.push(0);
    for r in &rows {
        for &(j, v) in r {
            row_idx.push(j as u32);
            row_val.push(v);
            col_count[j] += 1;
        }
        row_ptr.push(row_idx.len());
    }
    let mut col_ptr = vec![0usize; k + 1];
    for j in 0..k {
        col_ptr[j + 1] = col_ptr[j] + col_count[j];
    }
    let mut fill = col_ptr.clone();
    let mut col_idx = vec![0u32; row_idx.len()];
    let mut col_val = vec![0.0; row_idx.len()];
    for (i, r) in rows.iter().enumerate() {
        for &(j, v) in r {
            col_idx[fill[j]] = i as u32;
            col_val[fill[j]] = v;
            fill[j] += 1;
        }
    }
    UlamMatrix {
        grid: Arc::new(grid.clone()),
        row_ptr,
        row_idx,
        row_val,
        col_ptr,
        col_idx,
        col_val,
    }
}

/// Piecewise-constant density on an Ulam grid.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub grid: Arc<UlamGrid>,
    /// Density value on each cell.
    pub cell_values: Vec<f64>,
    /// `||P f - f||_1` at the returned iterate.
    pub residual: f64,
    pub iterations: usize,
    cdf: Vec<f64>,
}

impl DensityEstimate {
    /// Density with the given cell masses (normalized to total mass 1).
    pub fn from_masses(grid: Arc<UlamGrid>, masses: &[f64]) -> Result<Self> {
        if masses.len() != grid.len() || masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidParams("cell masses must be finite, nonnegative, one per cell".into()));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParams("total mass must be positive".into()));
        }
        let mut cdf = Vec::with_capacity(masses.len() + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        let mut values = Vec::with_capacity(masses.len());
        for (i, &m) in masses.iter().enumerate() {
            let (a, b) = grid.cell(i);
            acc += m / total;
            cdf.push(acc);
            values.push(m / total / (b - a));
        }
        Ok(Self {
            grid,
            cell_values: values,
            residual: f64::NAN,
            iterations: 0,
            cdf,
        })
    }

    pub fn from_fn(grid: Arc<UlamGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let masses: Vec<f64> = (0..grid.len())
            .map(|i| {
                let (a, b) = grid.cell(i);
                cell_average(a, b, &f) * (b - a)
            })
            .collect();
        Self::from_masses(grid, &masses)
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.cdf[i + 1] - self.cdf[i]
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.mass(i)).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.cell_values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (a, b) = self.grid.cell(i);
                v * (b - a)
            })
            .sum()
    }

    pub fn value_at(&self, x: f64) -> f64 {
        self.cell_values[self.grid.locate(x)]
    }

    /// `f*(1/2)` as the cell average immediately right of `1/2`.
    pub fn value_right_of_half(&self) -> f64 {
        self.cell_values[self.grid.locate(0.5)]
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let i = self.grid.locate(x);
        let (a, b) = self.grid.cell(i);
        self.cdf[i] + self.mass(i) * (x - a) / (b - a)
    }

    /// Inverse CDF, uniform within cells.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.grid.len();
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, k) - 1;
        let (a, b) = self.grid.cell(i);
        let m = self.mass(i);
        if m <= 0.0 {
            return a;
        }
        (a + (b - a) * (u - self.cdf[i]) / m).clamp(a, b)
    }

    /// `int g f* dx`, cell by cell with five-point Gauss–Legendre.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let (a, b) = self.grid.cell(i);
                self.mass(i) * cell_average(a, b, &g)
            })
            .sum()
    }

    /// `nu(f) = int E_w f(x, w) f*(x) dx`, summing over the observable's
    /// symbol cylinders.
    pub fn nu_mean(&self, f: &Observable, mp: &ModelParams) -> f64 {
        let h = f.symbol_horizon();
        if h == 0 {
            return self.integrate(|x| f.eval(x, &[]));
        }
        let cyl = crate::driver::cylinder_enumerate(mp, h).expect("observable horizon is bounded");
        cyl.iter().map(|(s, w)| w * self.integrate(|x| f.eval(x, s))).sum()
    }

    /// Log-log slope of the cell values over cells inside `[lo, hi]`.
    pub fn exponent_near_zero(&self, lo: f64, hi: f64) -> f64 {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for i in 0..self.grid.len() {
            let (a, b) = self.grid.cell(i);
            if a >= lo && b <= hi && self.cell_values[i] > 0.0 {
                xs.push((a * b).sqrt());
                ys.push(self.cell_values[i]);
            }
        }
        crate::stats::loglog_fit(&xs, &ys).slope
    }
}

/// Power iteration from the uniform density.
pub fn invariant_density(matrix: &UlamMatrix, tol: f64, max_iter: usize) -> Result<DensityEstimate> {
    let grid = matrix.grid();
    let init: Vec<f64> = (0..grid.len()).map(|i| grid.cell(i).1 - grid.cell(i).0).collect();
    invariant_density_from(matrix, &init, tol, max_iter)
}

/// Power iteration on cell masses from `init`, renormalized each step, until
/// successive iterates differ by less than `tol` in `L1`.
pub fn invariant_density_from(matrix: &UlamMatrix, init: &[f64], tol: f64, max_iter: usize) -> Result<DensityEstimate> {
    let k = matrix.grid().len();
    if init.len() != k {
        return Err(Error::InvalidParams("initial vector has the wrong length".into()));
    }
    let mut v = init.to_vec();
    normalize(&mut v);
    let mut next = vec![0.0; k];
    let mut residual = f64::INFINITY;
    let mut it = 0;
    while it < max_iter {
        matrix.push_into(&v, &mut next);
        normalize(&mut next);
        residual = l1_dist(&v, &next);
        std::mem::swap(&mut v, &mut next);
        it += 1;
        if residual < tol {
            break;
        }
    }
    if residual >= tol {
        return Err(Error::NonConvergence {
            iterations: it,
            residual,
        });
    }
    matrix.push_into(&v, &mut next);
    let mut d = DensityEstimate::from_masses(Arc::new(matrix.grid().clone()), &v)?;
    d.residual = l1_dist(&v, &next);
    d.iterations = it;
    Ok(d)
}

/// Gauss-Seidel sweeps on `v = v P` in increasing cell order, renormalized
/// after each sweep, stopping once `|v P - v|_1 < tol`.
///
/// Left-branch mass only moves rightward, so one sweep carries mass out of
/// the neutral region in a single pass instead of one cell per step; this is
/// what makes strongly intermittent parameters tractable.
pub fn gauss_seidel_masses(matrix: &UlamMatrix, init: &[f64], tol: f64, max_sweeps: usize) -> Result<(Vec<f64>, usize, f64)> {
    let k = matrix.grid().len();
    if init.len() != k {
        return Err(Error::InvalidParams("initial vector has the wrong length".into()));
    }
    let mut v = init.to_vec();
    normalize(&mut v);
    let mut pushed = vec![0.0; k];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        for j in 0..k {
            let r = matrix.col_ptr[j]..matrix.col_ptr[j + 1];
            let mut acc = 0.0;
            let mut diag = 0.0;
            for (&i, &p) in matrix.col_idx[r.clone()].iter().zip(&matrix.col_val[r]) {
                if i as usize == j {
                    diag = p;
                } else {
                    acc += v[i as usize] * p;
                }
            }
            v[j] = if diag < 1.0 { acc / (1.0 - diag) } else { v[j] };
        }
        normalize(&mut v);
        sweeps += 1;
        matrix.push_into(&v, &mut pushed);
        residual = l1_dist(&v, &pushed);
        if residual < tol {
            break;
        }
    }
    if residual >= tol {
        return Err(Error::NonConvergence {
            iterations: sweeps,
            residual,
        });
    }
    Ok((v, sweeps, residual))
}

/// Gauss-Seidel warm start followed by the power iteration of
/// [`invariant_density_from`], so the returned estimate satisfies both the
/// successive-iterate criterion and `|P f - f|_1 < tol`.
pub fn solve_invariant_density(matrix: &UlamMatrix, tol: f64, max_iter: usize) -> Result<DensityEstimate> {
    let grid = matrix.grid();
    let init: Vec<f64> = (0..grid.len()).map(|i| grid.cell(i).1 - grid.cell(i).0).collect();
    let (warm, sweeps, _) = gauss_seidel_masses(matrix, &init, 0.1 * tol, max_iter)?;
    let mut d = invariant_density_from(matrix, &warm, tol, max_iter)?;
    d.iterations += sweeps;
    Ok(d)
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `int |f - g| dx` for densities on nested grids (every cell of the finer
/// grid inside one cell of the coarser).
pub fn l1_gap(coarse: &DensityEstimate, fine: &DensityEstimate) -> f64 {
    (0..fine.grid.len())
        .map(|i| {
            let (a, b) = fine.grid.cell(i);
            (fine.cell_values[i] - coarse.value_at(0.5 * (a + b))).abs() * (b - a)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub a: f64,
    pub beta: f64,
    pub nonnegative: bool,
    pub monotone_violations: usize,
    pub integral_violations: usize,
    /// `max_x int_0^x f / (x^(1-beta) int f)`, over the grid breakpoints.
    pub max_ratio: f64,
    pub pass: bool,
}

/// Cone membership with the constant `a = 4 / (1 - beta)`.
pub fn cone_check(d: &DensityEstimate, beta: f64) -> Result<ConeReport> {
    if beta >= 1.0 || beta.is_nan() {
        return Err(Error::Domain(format!("cone exponent beta = {beta} must be < 1")));
    }
    cone_check_with(d, beta, 4.0 / (1.0 - beta))
}

/// Cone membership with an explicit constant `a`. Monotonicity is checked
/// with a one-cell tolerance: cell `i + 2` may not exceed cell `i`.
pub fn cone_check_with(d: &DensityEstimate, beta: f64, a: f64) -> Result<ConeReport> {
    let v = &d.cell_values;
    let nonnegative = v.iter().all(|&x| x >= 0.0);
    let monotone_violations = v.windows(3).filter(|w| w[2] > w[0] * (1.0 + 1e-12)).count();
    let total = d.total_mass();
    let mut integral_violations = 0;
    let mut max_ratio: f64 = 0.0;
    let mut cum = 0.0;
    for (i, &vi) in v.iter().enumerate() {
        let (l, r) = d.grid.cell(i);
        cum += vi * (r - l);
        let ratio = cum / (r.powf(1.0 - beta) * total);
        max_ratio = max_ratio.max(ratio);
        if ratio > a * (1.0 + 1e-12) {
            integral_violations += 1;
        }
    }
    Ok(ConeReport {
        a,
        beta,
        nonnegative,
        monotone_violations,
        integral_violations,
        max_ratio,
        pass: nonnegative && monotone_violations == 0 && integral_violations == 0,
    })
}

/// Draws `x` from the density.
pub(crate) fn draw_x(d: &DensityEstimate, rng: &mut ChaCha8Rng) -> f64 {
    d.quantile(rng.random::<f64>())
}

/// `M` points of the skew product with `x ~ f*` and an independent i.i.d.
/// itinerary each.
pub fn nu_sample(d: &DensityEstimate, mp: &ModelParams, m: usize, seed: u64) -> Vec<SkewState> {
    map_replicas(m, |i| {
        let x = draw_x(d, &mut replica_rng(seed, purpose::SPACE, i));
        SkewState::new(x, SymbolStream::for_replica(mp, seed, i)).expect("quantile lies in [0, 1]")
    })
}

/// `(A, sharp)` with `A = c(alpha) p1^(-1/alpha) h / 2` and the correlation
/// prefactor `h (alpha p1)^(-1/alpha) / (4 (1/alpha - 1))` (only for
/// `alpha < 1`), where `h = f*(1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrConstants {
    pub f_half: f64,
    pub a: f64,
    pub sharp: Option<f64>,
}

pub fn corr_constants(mp: &ModelParams, d: &DensityEstimate) -> CorrConstants {
    corr_constants_from_half(mp, d.value_right_of_half())
}

pub fn corr_constants_from_half(mp: &ModelParams, f_half: f64) -> CorrConstants {
    let alpha = mp.alpha();
    let a = 0.5 * mp.fast().c_limit() * mp.p1().powf(-1.0 / alpha) * f_half;
    let sharp = (alpha < 1.0).then(|| 0.25 * f_half * (alpha * mp.p1()).powf(-1.0 / alpha) / (1.0 / alpha - 1.0));
    CorrConstants { f_half, a, sharp }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub n: usize,
    pub corr: f64,
    pub stderr: f64,
    /// `sharp * nu(phi) nu(psi) n^(1 - 1/alpha)`, when defined.
    pub predicted: Option<f64>,
}

fn predicted_corr(mp: &ModelParams, d: &DensityEstimate, mphi: f64, mpsi: f64, n: usize) -> Option<f64> {
    let k = corr_constants(mp, d);
    k.sharp
        .filter(|_| n > 0)
        .map(|s| s * mphi * mpsi * (n as f64).powf(1.0 - 1.0 / mp.alpha()))
}

/// Monte Carlo `int phi∘S^n psi dnu - nu(phi) nu(psi)` from `nu`-distributed
/// starts. The means are density quadratures.
pub fn correlation_estimate(
    phi: &Observable,
    psi: &Observable,
    n_grid: &[usize],
    mp: &ModelParams,
    d: &DensityEstimate,
    m: usize,
    seed: u64,
) -> Result<Vec<CorrelationRow>> {
    if m < 2 || n_grid.is_empty() {
        return Err(Error::InvalidParams("need at least two replicas and a nonempty grid".into()));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let n_max = *grid.last().unwrap();
    let (hphi, hpsi) = (phi.symbol_horizon(), psi.symbol_horizon());
    let samples: Vec<Vec<f64>> = map_replicas(m, |i| {
        let mut x = draw_x(d, &mut replica_rng(seed, purpose::SPACE, i));
        let mut stream = SymbolStream::for_replica(mp, seed, i);
        let psi0 = psi.eval(x, stream.window(hpsi));
        let mut out = Vec::with_capacity(grid.len());
        let mut next = 0;
        for t in 0..=n_max {
            if grid[next] == t {
                out.push(phi.eval(x, stream.window(hphi)) * psi0);
                next += 1;
                if next == grid.len() {
                    break;
                }
            }
            let s = stream.peek(0);
            x = mp.map(s).forward(x).clamp(0.0, 1.0);
            stream.shift();
        }
        out
    });
    let (mphi, mpsi) = (d.nu_mean(phi, mp), d.nu_mean(psi, mp));
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            let e = Estimate::from_samples(&col);
            CorrelationRow {
                n,
                corr: e.mean - mphi * mpsi,
                stderr: stderr(&col),
                predicted: predicted_corr(mp, d, mphi, mpsi, n),
            }
        })
        .collect())
}

/// Correlation of two spatial observables through the Ulam operator:
/// `sum_j [(psi - nu(psi)) f*]_j P^n (cell means of phi)`. Deterministic,
/// so `stderr` is zero.
pub fn operator_correlation(
    phi: &Observable,
    psi: &Observable,
    n_grid: &[usize],
    mp: &ModelParams,
    matrix: &UlamMatrix,
    d: &DensityEstimate,
) -> Result<Vec<CorrelationRow>> {
    if phi.symbol_horizon() > 0 || psi.symbol_horizon() > 0 {
        return Err(Error::InvalidParams("operator correlation needs spatial observables".into()));
    }
    let grid = matrix.grid();
    if grid.len() != d.grid.len() {
        return Err(Error::InvalidParams("density and matrix grids differ".into()));
    }
    let avg = |f: &Observable| -> Vec<f64> {
        (0..grid.len())
            .map(|i| {
                let (a, b) = grid.cell(i);
                cell_average(a, b, |x| f.eval(x, &[]))
            })
            .collect()
    };
    let (aphi, apsi) = (avg(phi), avg(psi));
    let masses = d.masses();
    let mpsi: f64 = masses.iter().zip(&apsi).map(|(m, p)| m * p).sum();
    let mphi: f64 = masses.iter().zip(&aphi).map(|(m, p)| m * p).sum();
    let mut v: Vec<f64> = masses.iter().zip(&apsi).map(|(m, p)| m * (p - mpsi)).collect();
    let mut sorted = n_grid.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = Vec::with_capacity(sorted.len());
    let mut t = 0;
    let mut buf = vec![0.0; v.len()];
    for &n in &sorted {
        while t < n {
            matrix.push_into(&v, &mut buf);
            std::mem::swap(&mut v, &mut buf);
            t += 1;
        }
        let corr: f64 = v.iter().zip(&aphi).map(|(a, b)| a * b).sum();
        out.push(CorrelationRow {
            n,
            corr,
            stderr: 0.0,
            predicted: predicted_corr(mp, d, mphi, mpsi, n),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_statistic;

    fn mp() -> ModelParams {
        ModelParams::new(0.5, 0.75, 0.5).unwrap()
    }

    #[test]
    fn grid_layout() {
        let g = UlamGrid::new(1024, 1e-10).unwrap();
        assert_eq!(g.len(), 1024);
        let b = g.breakpoints();
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(b[512], 0.1);
        assert_eq!(b[768], 0.5);
        assert_eq!(b[896], 0.75);
        assert_eq!(b[1024], 1.0);
        assert!(b.iter().filter(|&&x| x < 0.1).count() >= 512);
        let fine = UlamGrid::new(2048, 1e-10).unwrap();
        for (i, &x) in b.iter().enumerate().skip(1) {
            assert!((fine.breakpoints()[2 * i] - x).abs() <= 1e-15 * x, "{i}");
        }
        assert_eq!(g.locate(0.5), 768);
        assert_eq!(g.locate(1.0), 1023);
        assert_eq!(g.locate(0.0), 0);
        assert!(UlamGrid::new(10, 1e-10).is_err());
    }

    #[test]
    fn rows_are_stochastic() {
        let g = UlamGrid::new(512, 1e-8).unwrap();
        for p in [mp(), ModelParams::new(0.3, 2.0, 0.7).unwrap(), ModelParams::new(0.5, 0.75, 1.0).unwrap()] {
            let m = ulam_matrix(&g, &p);
            for i in 0..g.len() {
                let s: f64 = m.row(i).map(|e| e.1).sum();
                assert!((s - 1.0).abs() < 1e-12, "row {i}: {s}");
                assert!(m.row(i).all(|e| e.1 >= 0.0));
            }
        }
    }

    #[test]
    fn degenerate_mixture_is_single_map() {
        let g = UlamGrid::new(256, 1e-6).unwrap();
        let full = ulam_matrix(&g, &ModelParams::new(0.5, 0.75, 1.0).unwrap());
        let other = ulam_matrix(&g, &ModelParams::new(0.5, 3.0, 1.0).unwrap());
        for i in 0..g.len() {
            assert_eq!(full.row(i).collect::<Vec<_>>(), other.row(i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn self_transition_at_zero_tends_to_one() {
        let mut prev = 0.0;
        for k in [64, 256, 1024, 4096] {
            let g = UlamGrid::new(k, 1e-8).unwrap();
            let p = ulam_matrix(&g, &mp()).entry(0, 0);
            assert!(p > prev);
            prev = p;
        }
        assert!(prev > 0.99);
    }

    #[test]
    fn uniform_density_for_doubling_map_limit() {
        // Small alpha: T is close to the doubling map, whose density is 1.
        let g = Arc::new(UlamGrid::uniform(256).unwrap());
        let mut dev = Vec::new();
        for a in [0.4, 0.2, 0.05] {
            let p = ModelParams::new(a, 1.0, 1.0).unwrap();
            let d = invariant_density(&ulam_matrix(&g, &p), 1e-12, 100_000).unwrap();
            dev.push(d.cell_values.iter().map(|v| (v - 1.0).abs()).sum::<f64>() / 256.0);
        }
        assert!(dev[0] > dev[1] && dev[1] > dev[2], "{dev:?}");
    }

    #[test]
    fn density_is_invariant_and_in_cone() {
        let g = UlamGrid::new(2048, 1e-6).unwrap();
        let m = ulam_matrix(&g, &mp());
        let d = invariant_density(&m, 1e-11, 1_000_000).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-10);
        let pushed = m.push(&d.masses());
        let worst = pushed
            .iter()
            .zip(d.masses())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 10.0 * 1e-11);
        let cone = cone_check(&d, 0.75).unwrap();
        assert!(cone.pass, "{cone:?}");
        let k = corr_constants(&mp(), &d);
        assert!(k.f_half > 0.3 && k.f_half < 1.5, "{k:?}");
    }

    #[test]
    fn gauss_seidel_matches_power_iteration() {
        let g = UlamGrid::new(2048, 1e-6).unwrap();
        let m = ulam_matrix(&g, &mp());
        let slow = invariant_density(&m, 1e-12, 1_000_000).unwrap();
        let fast = solve_invariant_density(&m, 1e-12, 10_000).unwrap();
        assert!(fast.iterations < 200, "{}", fast.iterations);
        let diff: f64 = slow.masses().iter().zip(fast.masses()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff < 1e-8, "{diff}");
        assert!(fast.residual < 1e-12);
    }

    #[test]
    fn cone_controls() {
        let g = Arc::new(UlamGrid::new(256, 1e-6).unwrap());
        let one = DensityEstimate::from_fn(g.clone(), |_| 1.0).unwrap();
        for beta in [0.1, 0.5, 0.9] {
            assert!(cone_check_with(&one, beta, 1.0).unwrap().pass);
        }
        let up = DensityEstimate::from_fn(g, |x| 0.5 + x).unwrap();
        let r = cone_check(&up, 0.75).unwrap();
        assert!(!r.pass && r.monotone_violations > 0);
    }

    #[test]
    fn constants() {
        let k = corr_constants_from_half(&mp(), 1.0);
        assert!((k.a - 4.0).abs() < 1e-12);
        let k2 = corr_constants_from_half(&mp(), 2.5);
        assert!((k2.a - 10.0).abs() < 1e-12);
        // The correlation prefactor equals A / (1/alpha - 1).
        for (a, b, p) in [(0.5, 0.75, 0.5), (0.75, 0.9, 0.3), (0.6, 2.0, 0.9)] {
            let m = ModelParams::new(a, b, p).unwrap();
            let k = corr_constants_from_half(&m, 0.7);
            assert!((k.sharp.unwrap() - k.a / (1.0 / a - 1.0)).abs() < 1e-12 * k.a);
        }
        assert!(corr_constants_from_half(&ModelParams::new(2.0, 3.0, 0.5).unwrap(), 1.0).sharp.is_none());
    }

    #[test]
    fn nu_sampling() {
        let m = mp();
        let g = UlamGrid::new(1024, 1e-6).unwrap();
        let mat = ulam_matrix(&g, &m);
        let d = invariant_density(&mat, 1e-11, 1_000_000).unwrap();
        let s = nu_sample(&d, &m, 100_000, 3);
        let xs: Vec<f64> = s.iter().map(|z| z.x).collect();
        assert!(ks_statistic(&xs, |x| d.cdf(x)) < 0.01);
        let mut fast = 0usize;
        let mut counts = [0usize; 8];
        let mut after = vec![0usize; 8];
        let cell = |x: f64| ((x * 8.0) as usize).min(7);
        for mut z in s {
            if z.stream.peek(0) == crate::driver::Symbol::Fast {
                fast += 1;
            }
            counts[cell(z.x)] += 1;
            z.step(&m);
            after[cell(z.x)] += 1;
        }
        assert!((fast as f64 / 1e5 - 0.5).abs() < 0.005);
        for (c, a) in counts.iter().zip(&after) {
            let p = *c as f64 / 1e5;
            let se = (2.0 * p * (1.0 - p) / 1e5).sqrt();
            assert!(((*a as f64 - *c as f64) / 1e5).abs() < 3.0 * se + 1e-4, "{c} {a}");
        }
    }

    #[test]
    fn constant_observables_do_not_correlate() {
        let m = mp();
        let g = UlamGrid::new(512, 1e-6).unwrap();
        let mat = ulam_matrix(&g, &m);
        let d = invariant_density(&mat, 1e-11, 1_000_000).unwrap();
        let one = Observable::constant(1.0);
        for row in correlation_estimate(&one, &one, &[0, 5, 50], &m, &d, 1000, 1).unwrap() {
            assert!(row.corr.abs() < 1e-12);
        }
        let f = Observable::bump(0.6, 0.9, 1.0);
        let mean = d.nu_mean(&f, &m);
        let var = d.integrate(|x| (f.eval(x, &[]) - mean).powi(2));
        let op = operator_correlation(&f, &f, &[0, 3, 30], &m, &mat, &d).unwrap();
        assert!((op[0].corr - var).abs() < 1e-3 * var);
        let mc = correlation_estimate(&f, &f, &[0, 3, 30], &m, &d, 100_000, 2).unwrap();
        for (a, b) in op.iter().zip(&mc) {
            assert!((a.corr - b.corr).abs() < 4.0 * b.stderr + 2e-4, "{a:?} {b:?}");
        }
    }

    #[test]
    fn pure_symbol_observables_decorrelate() {
        let m = ModelParams::new(0.5, 0.75, 0.3).unwrap();
        let g = UlamGrid::new(256, 1e-6).unwrap();
        let d = invariant_density(&ulam_matrix(&g, &m), 1e-11, 1_000_000).unwrap();
        let fast = |_: f64, w: &[crate::driver::Symbol]| f64::from(u8::from(w[0] == crate::driver::Symbol::Fast));
        let f = Observable::with_symbols("w0", 1.0, 1, &m, fast);
        let rows = correlation_estimate(&f, &f, &[0, 1, 2, 7], &m, &d, 20_000, 4).unwrap();
        assert!((rows[0].corr - 0.21).abs() < 0.01);
        for r in &rows[1..] {
            assert!(r.corr.abs() < 4.0 * r.stderr + 1e-3, "{r:?}");
        }
    }

    #[test]
    fn refinement_gap_shrinks() {
        let m = mp();
        let dens: Vec<DensityEstimate> = [256, 512, 1024]
            .iter()
            .map(|&k| {
                let g = UlamGrid::new(k, 1e-6).unwrap();
                invariant_density(&ulam_matrix(&g, &m), 1e-12, 1_000_000).unwrap()
            })
            .collect();
        let g1 = l1_gap(&dens[0], &dens[1]);
        let g2 = l1_gap(&dens[1], &dens[2]);
        assert!(g2 < g1, "{g1} {g2}");
        let slope = dens[2].exponent_near_zero(1e-5, 1e-3);
        assert!(slope < 0.0 && slope > -1.0, "{slope}");
    }
}
