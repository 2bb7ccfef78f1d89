//! The piecewise affine version of the random model.
//!
//! On `(x_n(w), x_{n-1}(w)]` the left branch is replaced by the increasing
//! affine map onto `(x_{n-1}(phi w), x_{n-2}(phi w)]` (with `x_0 = 1`); the
//! right branch stays `2x - 1`. Breakpoints, and with them the return cells
//! `J_n(w)`, are those of the nonlinear model, so return times agree.
//! Since every return cell is mapped affinely onto `(1/2, 1]`, the induced
//! map preserves normalized Lebesgue measure on `D0` times the Bernoulli
//! measure; that product is the invariant probability `nu_D0`.

use crate::driver::{draw_symbol, purpose, replica_rng, ModelParams, Symbol, SymbolStream};
use crate::error::{Error, Result};
use crate::induced::first_return_rng;
use crate::observable::Observable;
use crate::parallel::{fold_replicas, map_replicas};
use crate::quenched::xn_unchecked;
use crate::stats::{linear_fit, loglog_fit, LinearFit};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default cap on branch depth and on return times.
pub const DEFAULT_DEPTH_CAP: usize = 1_000_000;

fn check_regime(mp: &ModelParams) -> Result<()> {
    if mp.alpha() < 1.0 {
        Err(Error::InvalidParams(format!(
            "the linearized model is set up for 1 <= alpha, got alpha = {}",
            mp.alpha()
        )))
    } else {
        Ok(())
    }
}

/// Breakpoint tables of the excursion in progress: at level `j` the point
/// lies in `(lower[j], upper[j]]`, with `lower[j] = x_{n-j}(phi^j w)` and
/// `upper[j] = x_{n-j-1}(phi^j w)` for the branch index `n` at level 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchCache {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: usize,
}

/// `{n}` tables for the itinerary `sym` (at least `n - 1` symbols).
fn branch_tables(sym: &[Symbol], n: usize, mp: &ModelParams) -> BranchCache {
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    lower[n - 1] = 0.5;
    upper[n - 1] = 1.0;
    for j in (0..n - 1).rev() {
        let m = mp.map(sym[j]);
        lower[j] = m.left_inverse(lower[j + 1]);
        upper[j] = m.left_inverse(upper[j + 1]);
    }
    BranchCache { lower, upper, level: 0 }
}

#[derive(Debug, Clone)]
pub struct LinearizedState {
    pub x: f64,
    pub stream: SymbolStream,
    pub cache: Option<BranchCache>,
    pub depth_cap: usize,
}

impl LinearizedState {
    pub fn new(x: f64, stream: SymbolStream) -> Result<Self> {
        if !(x.is_finite() && (0.0..=1.0).contains(&x)) {
            return Err(Error::Domain(format!("x = {x} is outside [0, 1]")));
        }
        Ok(Self {
            x,
            stream,
            cache: None,
            depth_cap: DEFAULT_DEPTH_CAP,
        })
    }

    /// The branch index `n >= 2` with `x in (x_n(w), x_{n-1}(w)]`, for
    /// `x <= 1/2`. A forward pass of the nonlinear map gives a candidate,
    /// which is then checked against the breakpoints.
    fn build_cache(&mut self, mp: &ModelParams) -> Result<()> {
        let x = self.x;
        if x <= 0.0 {
            return Err(Error::TooLarge {
                what: "branch depth",
                requested: usize::MAX,
                limit: self.depth_cap,
            });
        }
        let mut y = x;
        let mut n = 1usize;
        while y <= 0.5 {
            if n > self.depth_cap {
                return Err(Error::TooLarge {
                    what: "branch depth",
                    requested: n,
                    limit: self.depth_cap,
                });
            }
            y = mp.map(self.stream.peek(n - 1)).forward(y);
            n += 1;
        }
        loop {
            let c = branch_tables(self.stream.window(n - 1), n, mp);
            if x <= c.lower[0] {
                n += 1;
            } else if x > c.upper[0] {
                n -= 1;
            } else {
                self.cache = Some(c);
                return Ok(());
            }
        }
    }

    /// The current branch index, if `x <= 1/2`.
    pub fn branch_index(&mut self, mp: &ModelParams) -> Result<Option<usize>> {
        if self.x > 0.5 {
            return Ok(None);
        }
        if self.cache.is_none() {
            self.build_cache(mp)?;
        }
        let c = self.cache.as_ref().unwrap();
        Ok(Some(c.lower.len() - c.level))
    }
}

/// One step of the linearized skew product, in place.
pub fn linearized_step(s: &mut LinearizedState, mp: &ModelParams) -> Result<()> {
    check_regime(mp)?;
    if s.x > 0.5 {
        s.x = 2.0 * s.x - 1.0;
        s.cache = None;
        s.stream.shift();
        return Ok(());
    }
    if s.cache.is_none() {
        s.build_cache(mp)?;
    }
    let c = s.cache.as_mut().unwrap();
    let j = c.level;
    let (lo, hi) = (c.lower[j], c.upper[j]);
    let (lo2, hi2) = (c.lower[j + 1], c.upper[j + 1]);
    let y = if s.x == hi { hi2 } else { lo2 + (s.x - lo) * ((hi2 - lo2) / (hi - lo)) };
    s.x = y.clamp(lo2, hi2);
    if s.x == lo2 {
        s.x = hi2.min(next_up(lo2));
    }
    c.level += 1;
    if c.level + 1 == c.lower.len() {
        s.cache = None;
    }
    s.stream.shift();
    Ok(())
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

/// Outcome of an induced step. On a capped excursion the state's `x` is
/// left unchanged and the stream has advanced by `cap` symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InducedOutcome {
    Returned { r: usize, x: f64 },
    Capped { steps: usize },
}

/// `x'_n` from the excursion's symbols (`sym[k]` is read at step `k`).
#[inline]
fn xprime(sym: &[Symbol], n: usize, mp: &ModelParams) -> f64 {
    match n {
        0 => 1.0,
        1 => 0.75,
        _ => 0.5 * (xn_unchecked(&sym[1..], n, mp) + 1.0),
    }
}

/// The induced map on the cell `J_r`: `x -> 1/2 + (x - x'_r) / (2 (x'_{r-1} - x'_r))`.
/// `r` is checked against the breakpoints and moved by one if rounding in
/// the forward pass misplaced it; `more` supplies extra symbols if needed.
fn induced_image(x: f64, mut r: usize, sym: &mut Vec<Symbol>, mp: &ModelParams, mut more: impl FnMut() -> Symbol) -> (usize, f64) {
    loop {
        while sym.len() < r + 1 {
            sym.push(more());
        }
        let (lo, hi) = (xprime(sym, r, mp), xprime(sym, r - 1, mp));
        if x <= lo {
            r += 1;
        } else if x > hi && r > 1 {
            r -= 1;
        } else {
            let y = 0.5 + (x - lo) / (2.0 * (hi - lo));
            let y = if x == hi { 1.0 } else { y.clamp(next_up(0.5), 1.0) };
            return (r, y);
        }
    }
}

/// Iterates the linearized map from `x in (1/2, 1]` to its first return.
pub fn induced_affine_step(s: &mut LinearizedState, mp: &ModelParams, cap: usize) -> Result<InducedOutcome> {
    check_regime(mp)?;
    let x = s.x;
    if !(x > 0.5 && x <= 1.0) {
        return Err(Error::Domain(format!("x = {x} is outside (1/2, 1]")));
    }
    let mut y = x;
    let mut r = 0usize;
    loop {
        if r == cap {
            s.stream.advance(cap);
            s.cache = None;
            return Ok(InducedOutcome::Capped { steps: cap });
        }
        y = mp.map(s.stream.peek(r)).forward(y);
        r += 1;
        if y > 0.5 {
            break;
        }
    }
    let mut sym = s.stream.window(r).to_vec();
    let mut k = r;
    let stream = &mut s.stream;
    let (r, img) = induced_image(x, r, &mut sym, mp, || {
        let v = stream.peek(k);
        k += 1;
        v
    });
    s.stream.advance(r);
    s.x = img;
    s.cache = None;
    Ok(InducedOutcome::Returned { r, x: img })
}

/// Induced step drawing symbols straight from `rng`; `None` past `cap`.
/// Consumes the same draws as [`induced_affine_step`] on a stream built
/// from the same generator, except when the forward pass needs correcting.
#[inline]
pub(crate) fn induced_step_rng(x: f64, mp: &ModelParams, rng: &mut ChaCha8Rng, cap: u64, sym: &mut Vec<Symbol>) -> Option<(u64, f64)> {
    sym.clear();
    let p1 = mp.p1();
    let mut y = x;
    loop {
        if sym.len() as u64 == cap {
            return None;
        }
        let s = draw_symbol(rng, p1);
        sym.push(s);
        y = mp.map(s).forward(y);
        if y > 0.5 {
            break;
        }
    }
    let r0 = sym.len();
    let (r, img) = induced_image(x, r0, sym, mp, || draw_symbol(rng, p1));
    Some((r as u64, img))
}

#[derive(Debug, Clone)]
pub struct NuDelta0Sample {
    pub states: Vec<LinearizedState>,
    /// Excursions that hit the cap during burn-in and were restarted from
    /// a fresh uniform draw.
    pub capped: u64,
}

/// Starts uniform on `(1/2, 1]` and applies `burn` induced steps.
pub fn sample_nu_delta0(mp: &ModelParams, burn: usize, m: usize, seed: u64, cap: usize) -> Result<NuDelta0Sample> {
    check_regime(mp)?;
    if burn < 1000 {
        return Err(Error::InvalidParams(format!("burn-in must be at least 1000 induced steps, got {burn}")));
    }
    let out: Vec<(LinearizedState, u64)> = map_replicas(m, |i| {
        let mut space = replica_rng(seed, purpose::SPACE, i);
        let mut s = LinearizedState::new(uniform_d0(&mut space), SymbolStream::for_replica(mp, seed, i)).unwrap();
        let mut capped = 0;
        for _ in 0..burn {
            match induced_affine_step(&mut s, mp, cap).expect("state stays in (1/2, 1]") {
                InducedOutcome::Returned { .. } => {}
                InducedOutcome::Capped { .. } => {
                    s.x = uniform_d0(&mut space);
                    capped += 1;
                }
            }
        }
        (s, capped)
    });
    let capped = out.iter().map(|o| o.1).sum();
    Ok(NuDelta0Sample {
        states: out.into_iter().map(|o| o.0).collect(),
        capped,
    })
}

#[inline]
fn uniform_d0(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - 0.5 * rng.random::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfiniteCorrRow {
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// `n^(1 - 1/alpha)`, or `ln n` at `alpha = 1`.
    pub normalizer: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfiniteCorrReport {
    pub rows: Vec<InfiniteCorrRow>,
    /// Log-log fit of the estimate against `n` (`alpha > 1`), or linear fit
    /// against `1 / ln n` (`alpha = 1`), over the grid points in the fit range.
    pub fit: LinearFit,
    pub fit_range: (usize, usize),
}

/// Per-replica data for [`infinite_correlation`]: `f(z) g(S^n z)` across
/// the grid, for `z` drawn from `nu_D0`.
fn corr_paths(
    fs: &[(&Observable, &Observable)],
    mp: &ModelParams,
    grid: &[usize],
    m: usize,
    seed: u64,
) -> Vec<Vec<Vec<f64>>> {
    let n_max = *grid.last().unwrap();
    map_replicas(m, |i| {
        let x0 = uniform_d0(&mut replica_rng(seed, purpose::SPACE, i));
        let mut out = vec![vec![0.0; grid.len()]; fs.len()];
        let f0: Vec<f64> = fs.iter().map(|(f, _)| f.eval(x0, &[])).collect();
        if f0.iter().all(|&v| v == 0.0) {
            return out;
        }
        let mut rng = replica_rng(seed, purpose::SYMBOLS, i);
        let mut sym = Vec::new();
        let (mut t, mut x, mut k) = (0usize, x0, 0usize);
        loop {
            while k < grid.len() && grid[k] < t {
                k += 1;
            }
            if k == grid.len() {
                break;
            }
            if grid[k] == t {
                for (j, (_, g)) in fs.iter().enumerate() {
                    out[j][k] = f0[j] * g.eval(x, &[]);
                }
            }
            match induced_step_rng(x, mp, &mut rng, (n_max - t) as u64, &mut sym) {
                Some((r, y)) => {
                    t += r as usize;
                    x = y;
                }
                None => break,
            }
        }
        out
    })
}

fn corr_report(samples: &[Vec<f64>], grid: &[usize], alpha: f64, fit_range: (usize, usize)) -> InfiniteCorrReport {
    let mut rows = Vec::with_capacity(grid.len());
    for (k, &n) in grid.iter().enumerate() {
        let col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
        let e = crate::stats::Estimate::from_samples(&col);
        let normalizer = if alpha == 1.0 {
            (n as f64).ln()
        } else {
            (n as f64).powf(1.0 - 1.0 / alpha)
        };
        rows.push(InfiniteCorrRow {
            n,
            estimate: e.mean,
            stderr: e.stderr,
            normalizer,
            normalized: e.mean * normalizer,
        });
    }
    let sel: Vec<&InfiniteCorrRow> = rows
        .iter()
        .filter(|r| r.n >= fit_range.0 && r.n <= fit_range.1 && r.estimate > 0.0)
        .collect();
    let fit = if sel.len() < 2 {
        LinearFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            r_squared: f64::NAN,
        }
    } else if alpha == 1.0 {
        let x: Vec<f64> = sel.iter().map(|r| 1.0 / (r.n as f64).ln()).collect();
        let y: Vec<f64> = sel.iter().map(|r| r.estimate).collect();
        linear_fit(&x, &y)
    } else {
        let x: Vec<f64> = sel.iter().map(|r| r.n as f64).collect();
        let y: Vec<f64> = sel.iter().map(|r| r.estimate).collect();
        loglog_fit(&x, &y)
    };
    InfiniteCorrReport { rows, fit, fit_range }
}

fn check_pair(f: &Observable, g: &Observable) -> Result<()> {
    if f.symbol_horizon() > 0 || g.symbol_horizon() > 0 {
        return Err(Error::InvalidParams("infinite-measure correlations need spatial observables".into()));
    }
    Ok(())
}

/// `E_{nu_D0}[f(z) g(S^n z)]` per `n` in `n_grid`, for `f, g` supported on
/// `D0`, with `z` drawn exactly from `nu_D0`. Only return times are
/// simulated, since `g(S^n z) != 0` requires `S^n z in D0`.
pub fn infinite_correlation(
    f: &Observable,
    g: &Observable,
    mp: &ModelParams,
    n_grid: &[usize],
    m: usize,
    seed: u64,
    fit_range: (usize, usize),
) -> Result<InfiniteCorrReport> {
    Ok(infinite_correlation_pairs(&[(f, g)], mp, n_grid, m, seed, fit_range)?.remove(0))
}

/// [`infinite_correlation`] for several pairs on common paths.
pub fn infinite_correlation_pairs(
    pairs: &[(&Observable, &Observable)],
    mp: &ModelParams,
    n_grid: &[usize],
    m: usize,
    seed: u64,
    fit_range: (usize, usize),
) -> Result<Vec<InfiniteCorrReport>> {
    check_regime(mp)?;
    for (f, g) in pairs {
        check_pair(f, g)?;
    }
    if m < 2 || n_grid.is_empty() {
        return Err(Error::InvalidParams("need at least two replicas and a nonempty grid".into()));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let paths = corr_paths(pairs, mp, &grid, m, seed);
    Ok((0..pairs.len())
        .map(|j| {
            let s: Vec<Vec<f64>> = paths.iter().map(|p| p[j].clone()).collect();
            corr_report(&s, &grid, mp.alpha(), fit_range)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncRow {
    pub cap: u64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncReport {
    pub rows: Vec<TruncRow>,
    /// `ln E[min(R, cap)]` against `ln cap`.
    pub loglog: LinearFit,
    /// `E[min(R, cap)]` against `ln cap`.
    pub vs_log: LinearFit,
}

/// `E[min(R, cap)]` per cap, for starts drawn from `nu_D0` (uniform on `D0`).
/// All caps share the same excursions.
pub fn truncated_return_growth(mp: &ModelParams, caps: &[u64], m: u64, seed: u64) -> Result<TruncReport> {
    if caps.is_empty() || caps.contains(&0) || m < 2 {
        return Err(Error::InvalidParams("need positive caps and at least two replicas".into()));
    }
    let cap_max = *caps.iter().max().unwrap();
    let p1 = mp.p1();
    let k = caps.len();
    let (s1, s2) = fold_replicas(
        m,
        || (vec![0.0f64; k], vec![0.0f64; k]),
        |acc, i| {
            let x = uniform_d0(&mut replica_rng(seed, purpose::SPACE, i));
            let mut rng = replica_rng(seed, purpose::SYMBOLS, i);
            let r = first_return_rng(x, mp, p1, &mut rng, cap_max).unwrap_or(u64::MAX);
            for (j, &c) in caps.iter().enumerate() {
                let v = r.min(c) as f64;
                acc.0[j] += v;
                acc.1[j] += v * v;
            }
        },
        |mut a, b| {
            for j in 0..k {
                a.0[j] += b.0[j];
                a.1[j] += b.1[j];
            }
            a
        },
    );
    let mf = m as f64;
    let rows: Vec<TruncRow> = caps
        .iter()
        .enumerate()
        .map(|(j, &cap)| {
            let mean = s1[j] / mf;
            let var = (s2[j] / mf - mean * mean) * mf / (mf - 1.0);
            TruncRow {
                cap,
                mean,
                stderr: (var.max(0.0) / mf).sqrt(),
            }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.cap as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    Ok(TruncReport {
        loglog: loglog_fit(&xs, &ys),
        vs_log: linear_fit(&lx, &ys),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quenched::quenched_xn;
    use crate::stats::{ks_statistic, ks_two_sample};

    fn mp() -> ModelParams {
        ModelParams::new(2.0, 3.0, 0.5).unwrap()
    }

    fn state(x: f64, seed: u64) -> LinearizedState {
        LinearizedState::new(x, SymbolStream::for_replica(&mp(), seed, 0)).unwrap()
    }

    #[test]
    fn right_branch() {
        let mut s = state(0.9, 0);
        linearized_step(&mut s, &mp()).unwrap();
        assert!((s.x - 0.8).abs() < 1e-15);
        assert!(linearized_step(&mut state(0.3, 0), &ModelParams::new(0.5, 2.0, 0.5).unwrap()).is_err());
    }

    #[test]
    fn branch_endpoints_map_exactly() {
        let p = mp();
        for seed in 0..20 {
            let mut st = SymbolStream::for_replica(&p, seed, 0);
            let sym = st.window(16).to_vec();
            for n in 2..10 {
                let right = quenched_xn(&sym, n - 1, &p).unwrap();
                let mut s = LinearizedState::new(right, SymbolStream::for_replica(&p, seed, 0)).unwrap();
                assert_eq!(s.branch_index(&p).unwrap(), Some(n));
                linearized_step(&mut s, &p).unwrap();
                let target = if n == 2 { 1.0 } else { quenched_xn(&sym[1..], n - 2, &p).unwrap() };
                assert!((s.x - target).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn interior_point_matches_hand_formula() {
        let p = mp();
        let mut st = SymbolStream::for_replica(&p, 7, 0);
        let sym = st.window(8).to_vec();
        let (x3, x2) = (quenched_xn(&sym, 3, &p).unwrap(), quenched_xn(&sym, 2, &p).unwrap());
        let (y2, y1) = (quenched_xn(&sym[1..], 2, &p).unwrap(), quenched_xn(&sym[1..], 1, &p).unwrap());
        let x = x3 + 0.3 * (x2 - x3);
        let want = (y1 - y2) / (x2 - x3) * (x - x3) + y2;
        let mut s = LinearizedState::new(x, SymbolStream::for_replica(&p, 7, 0)).unwrap();
        linearized_step(&mut s, &p).unwrap();
        assert!((s.x - want).abs() < 1e-14);
    }

    #[test]
    fn cached_breakpoints_match_fresh_evaluation() {
        let p = mp();
        let mut s = state(0.01, 3);
        s.branch_index(&p).unwrap();
        let c = s.cache.clone().unwrap();
        let n = c.lower.len();
        let sym = s.stream.window(n).to_vec();
        for j in 0..n {
            assert!((c.lower[j] - quenched_xn(&sym[j..], n - j, &p).unwrap()).abs() < 1e-12);
            if n - j > 1 {
                assert!((c.upper[j] - quenched_xn(&sym[j..], n - j - 1, &p).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn induced_step_equals_iterated_steps() {
        let p = mp();
        for seed in 0..200u64 {
            let x = 1.0 - 0.5 * replica_rng(seed, purpose::SPACE, 0).random::<f64>();
            let mut a = LinearizedState::new(x, SymbolStream::for_replica(&p, seed, 0)).unwrap();
            let InducedOutcome::Returned { r, x: y } = induced_affine_step(&mut a, &p, 1 << 20).unwrap() else {
                continue;
            };
            let mut b = LinearizedState::new(x, SymbolStream::for_replica(&p, seed, 0)).unwrap();
            for _ in 0..r {
                linearized_step(&mut b, &p).unwrap();
            }
            assert!((b.x - y).abs() < 1e-9, "seed {seed}: {} vs {y}", b.x);
            assert!(y > 0.5);
            // Same return time as the nonlinear model.
            let mut rng = replica_rng(seed, purpose::SYMBOLS, 0);
            assert_eq!(first_return_rng(x, &p, p.p1(), &mut rng, 1 << 20), Some(r as u64));
        }
    }

    #[test]
    fn induced_map_is_affine_and_onto() {
        let p = mp();
        for seed in 0..300u64 {
            let mut st = SymbolStream::for_replica(&p, seed, 0);
            let sym = st.window(40).to_vec();
            let r = 1 + (seed as usize % 30);
            let (lo, hi) = (xprime(&sym, r, &p), xprime(&sym, r - 1, &p));
            let img = |u: f64| {
                let x = lo + u * (hi - lo);
                let mut s = LinearizedState::new(x, SymbolStream::for_replica(&p, seed, 0)).unwrap();
                match induced_affine_step(&mut s, &p, 1000).unwrap() {
                    InducedOutcome::Returned { r: got, x } => {
                        assert_eq!(got, r);
                        x
                    }
                    InducedOutcome::Capped { .. } => panic!(),
                }
            };
            let (a, b, c) = (img(0.2), img(0.5), img(0.8));
            assert!(((b - a) - (c - b)).abs() < 1e-9);
            assert!((img(1.0) - 1.0).abs() < 1e-9);
            assert!((img(1e-9) - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn induced_map_preserves_uniform_law() {
        let p = mp();
        let m = 20_000u64;
        let mut before = Vec::new();
        let mut after = Vec::new();
        let mut sym = Vec::new();
        for i in 0..m {
            let x = uniform_d0(&mut replica_rng(4, purpose::SPACE, i));
            let mut rng = replica_rng(4, purpose::SYMBOLS, i);
            if let Some((_, y)) = induced_step_rng(x, &p, &mut rng, 1 << 24, &mut sym) {
                before.push(x);
                after.push(y);
            }
        }
        let cdf = |x: f64| (2.0 * (x - 0.5)).clamp(0.0, 1.0);
        let crit = 1.63 / (after.len() as f64).sqrt();
        assert!(ks_statistic(&before, cdf) < crit);
        assert!(ks_statistic(&after, cdf) < crit);
    }

    #[test]
    fn burn_in_is_stationary() {
        let p = ModelParams::new(1.0, 2.0, 0.5).unwrap();
        let a = sample_nu_delta0(&p, 1000, 2000, 5, 100_000).unwrap();
        let b = sample_nu_delta0(&p, 2000, 2000, 6, 100_000).unwrap();
        let xa: Vec<f64> = a.states.iter().map(|s| s.x).collect();
        let xb: Vec<f64> = b.states.iter().map(|s| s.x).collect();
        assert!(ks_two_sample(&xa, &xb) < 1.63 * (2.0 / 2000.0f64).sqrt());
        assert!(sample_nu_delta0(&p, 10, 10, 0, 100).is_err());
    }

    #[test]
    fn zero_observables_and_lag_zero() {
        let p = mp();
        let zero = Observable::constant(0.0);
        let bump = Observable::bump(0.6, 0.9, 1.0);
        let r = infinite_correlation(&zero, &bump, &p, &[0, 10, 100], 1000, 1, (10, 100)).unwrap();
        assert!(r.rows.iter().all(|row| row.estimate == 0.0));
        let r = infinite_correlation(&bump, &bump, &p, &[0], 200_000, 2, (1, 1)).unwrap();
        // Second moment under uniform on (1/2, 1].
        let fine: f64 = (0..1000)
            .map(|k| {
                let a = 0.5 + 0.0005 * k as f64;
                crate::stats::cell_average(a, a + 0.0005, |x| bump.eval(x, &[]).powi(2))
            })
            .sum::<f64>()
            / 1000.0;
        assert!((r.rows[0].estimate - fine).abs() < 3.0 * r.rows[0].stderr);
    }

    #[test]
    fn truncated_growth_regimes() {
        // Finite mean for alpha < 1.
        let fin = truncated_return_growth(&ModelParams::new(0.5, 2.0, 0.5).unwrap(), &[100, 1000, 10_000], 100_000, 1).unwrap();
        let (a, b) = (fin.rows[1].mean, fin.rows[2].mean);
        assert!((b - a) < 0.02 * b, "{fin:?}");
        let inf = truncated_return_growth(&mp(), &[100, 1000, 10_000], 50_000, 2).unwrap();
        assert!((inf.loglog.slope - 0.5).abs() < 0.1, "{inf:?}");
    }
}
