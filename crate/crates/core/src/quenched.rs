//! Quenched backward orbits `x_n(w)`, `x'_n(w)`, the normalized statistic
//! `c_n(w) = n^(1/alpha) x_n(w)`, and the concentration sums behind its limit.

use crate::driver::{ModelParams, Symbol, SymbolStream};
use crate::error::{Error, Result};
use crate::maps::deterministic_xseq;
use crate::parallel::map_replicas;
use crate::stats::{mean, median, stderr, Estimate};
use serde::{Deserialize, Serialize};

/// Largest `n` accepted by [`expected_xn_exact`].
pub const EXACT_MAX_N: usize = 20;

fn need(sym: &[Symbol], needed: usize) -> Result<()> {
    if sym.len() < needed {
        Err(Error::InsufficientSymbols {
            needed,
            available: sym.len(),
        })
    } else {
        Ok(())
    }
}

/// Unchecked `x_n(w)`: apply the left inverses for symbols `n-2, ..., 0`
/// to `1/2`, since `x_n(w) = T_{a(w)}^{-1} x_{n-1}(phi w)`.
#[inline]
pub(crate) fn xn_unchecked(sym: &[Symbol], n: usize, mp: &ModelParams) -> f64 {
    sym[..n.saturating_sub(1)]
        .iter()
        .rev()
        .fold(0.5, |x, &s| mp.map(s).left_inverse(x))
}

/// `x_n(w)` for `n >= 1`; reads the first `n - 1` symbols.
pub fn quenched_xn(sym: &[Symbol], n: usize, mp: &ModelParams) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("x_n(w) is defined for n >= 1".into()));
    }
    need(sym, n - 1)?;
    Ok(xn_unchecked(sym, n, mp))
}

/// `x'_n(w)`: 1, 3/4, then `(x_n(phi w) + 1) / 2`; reads the first `n` symbols.
pub fn quenched_xprime(sym: &[Symbol], n: usize, mp: &ModelParams) -> Result<f64> {
    match n {
        0 => Ok(1.0),
        1 => Ok(0.75),
        _ => {
            need(sym, n)?;
            Ok(0.5 * (xn_unchecked(&sym[1..], n, mp) + 1.0))
        }
    }
}

/// `E_w x_n(w)` summed over all `2^(n-1)` relevant cylinders.
///
/// Depth-first over the itinerary from its last relevant symbol back to the
/// first, so each tree node costs one inverse evaluation.
pub fn expected_xn_exact(mp: &ModelParams, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("x_n(w) is defined for n >= 1".into()));
    }
    if n > EXACT_MAX_N {
        return Err(Error::TooLarge {
            what: "exact expectation order n",
            requested: n,
            limit: EXACT_MAX_N,
        });
    }
    fn go(mp: &ModelParams, x: f64, depth: usize) -> f64 {
        if depth == 0 {
            return x;
        }
        let mut acc = 0.0;
        for s in [Symbol::Fast, Symbol::Slow] {
            let p = mp.prob(s);
            if p > 0.0 {
                acc += p * go(mp, mp.map(s).left_inverse(x), depth - 1);
            }
        }
        acc
    }
    Ok(go(mp, 0.5, n - 1))
}

/// Monte Carlo `E_w x_n(w)` over `m` independent itineraries.
pub fn expected_xn_mc(mp: &ModelParams, n: usize, m: usize, seed: u64) -> Result<Estimate> {
    if n == 0 {
        return Err(Error::Domain("x_n(w) is defined for n >= 1".into()));
    }
    if m < 2 {
        return Err(Error::InvalidParams("need at least two replicas".into()));
    }
    let samples = map_replicas(m, |i| {
        let mut s = SymbolStream::for_replica(mp, seed, i);
        xn_unchecked(s.window(n - 1), n, mp)
    });
    Ok(Estimate::from_samples(&samples))
}

/// Which of the two concentration sums to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnVariant {
    /// `A_n(w)`, built from the deterministic `c_k(alpha)` and `c_k(beta)`.
    A,
    /// `A'_n(w)`, built from the constant `c(alpha) p1^(-1/alpha) + 1`.
    Aprime,
}

/// Precomputed deterministic orbits `x_k(alpha)`, `x_k(beta)` for `k <= n_max`,
/// reused across replicas.
#[derive(Debug, Clone)]
pub struct AnTables {
    mp: ModelParams,
    x_alpha: Vec<f64>,
    x_beta: Vec<f64>,
}

impl AnTables {
    pub fn new(mp: &ModelParams, n_max: usize) -> Result<Self> {
        Ok(Self {
            mp: *mp,
            x_alpha: deterministic_xseq(mp.fast(), n_max.max(1))?,
            x_beta: deterministic_xseq(mp.slow(), n_max.max(1))?,
        })
    }

    pub fn n_max(&self) -> usize {
        self.x_alpha.len()
    }

    /// Summand `X_k` of the first sum of `A_n`: 1 on a Fast symbol, else
    /// `(2 x_k(alpha))^(beta - alpha)`; always in `(0, 1]`.
    #[inline]
    pub fn first_term(&self, k: usize, s: Symbol) -> f64 {
        match s {
            Symbol::Fast => 1.0,
            Symbol::Slow => (2.0 * self.x_alpha[k - 1]).powf(self.mp.beta() - self.mp.alpha()),
        }
    }

    /// `E X_k = p1 + p2 (2 x_k(alpha))^(beta - alpha)`.
    pub fn first_term_mean(&self, k: usize) -> f64 {
        self.mp.p1() * self.first_term(k, Symbol::Fast) + self.mp.p2() * self.first_term(k, Symbol::Slow)
    }

    #[inline]
    fn second_term(&self, k: usize, s: Symbol) -> f64 {
        let a = self.mp.alpha();
        let e = 2.0 * self.mp.map(s).alpha() - a;
        (2.0 * self.x_beta[k - 1]).powf(e)
    }

    pub fn statistic(&self, sym: &[Symbol], n: usize, variant: AnVariant) -> Result<f64> {
        if n < 2 {
            return Err(Error::Domain("A_n is defined for n >= 2".into()));
        }
        need(sym, n - 1)?;
        let a = self.mp.alpha();
        match variant {
            AnVariant::A => {
                if n > self.n_max() {
                    return Err(Error::TooLarge {
                        what: "A_n order",
                        requested: n,
                        limit: self.n_max(),
                    });
                }
                let (mut s1, mut s2) = (0.0, 0.0);
                for k in 2..=n {
                    let s = sym[n - k];
                    s1 += self.first_term(k, s);
                    s2 += self.second_term(k, s);
                }
                let d = (n - 1) as f64;
                Ok(s1 / d - 0.5 * (1.0 + a) * s2 / d)
            }
            AnVariant::Aprime => {
                let r = (n as f64).sqrt().floor() as usize;
                let base = 2.0 * (self.mp.quenched_limit() + 1.0) / (n as f64).powf(1.0 / a);
                let slow = base.powf(self.mp.beta() - a);
                let slow_count = (r + 1..=n).filter(|&k| sym[n - k] == Symbol::Slow).count();
                let fast_count = (n - r) - slow_count;
                Ok((fast_count as f64 + slow_count as f64 * slow) / (n - r) as f64)
            }
        }
    }
}

/// `A_n(w)` or `A'_n(w)` for one itinerary.
pub fn an_statistic(sym: &[Symbol], n: usize, mp: &ModelParams, variant: AnVariant) -> Result<f64> {
    AnTables::new(mp, n)?.statistic(sym, n, variant)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingRow {
    pub t: f64,
    pub empirical: f64,
    pub bound: f64,
    /// Binomial standard error of the frequency, evaluated at the bound.
    pub stderr: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingReport {
    pub n: usize,
    pub replicas: usize,
    pub rows: Vec<HoeffdingRow>,
}

impl HoeffdingReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.violation).count()
    }
}

/// Empirical `P(|mean X - E mean X| >= t)` for the `n` independent summands
/// `X_k`, `k = 2..=n+1`, of the first sum of `A_{n+1}`, against
/// `exp(-2 n t^2)`.
pub fn hoeffding_check(
    mp: &ModelParams,
    n: usize,
    t_grid: &[f64],
    m: usize,
    seed: u64,
) -> Result<HoeffdingReport> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParams("need n >= 1 and at least one replica".into()));
    }
    let tables = AnTables::new(mp, n + 1)?;
    let expected = (2..=n + 1).map(|k| tables.first_term_mean(k)).sum::<f64>() / n as f64;
    let deviations = map_replicas(m, |i| {
        let mut s = SymbolStream::for_replica(mp, seed, i);
        let sym = s.window(n);
        let total: f64 = (2..=n + 1).map(|k| tables.first_term(k, sym[n + 1 - k])).sum();
        (total / n as f64 - expected).abs()
    });
    let rows = t_grid
        .iter()
        .map(|&t| {
            let hits = deviations.iter().filter(|&&d| d >= t).count();
            let empirical = hits as f64 / m as f64;
            let bound = if t > 0.0 { (-2.0 * n as f64 * t * t).exp() } else { 1.0 };
            let se = (bound * (1.0 - bound) / m as f64).sqrt();
            HoeffdingRow {
                t,
                empirical,
                bound,
                stderr: se,
                violation: empirical > bound + 3.0 * se,
            }
        })
        .collect();
    Ok(HoeffdingReport { n, replicas: m, rows })
}

/// Per-`n` summary of `c_n(w)` across replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchedRow {
    pub n: usize,
    pub mean_cn: f64,
    pub stderr: f64,
    pub median_cn: f64,
    pub l1_error: f64,
    pub l1_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchedReport {
    pub n_values: Vec<usize>,
    /// `cn_samples[i][r]` is `c_{n_values[i]}` for replica `r`.
    pub cn_samples: Vec<Vec<f64>>,
    pub limit_value: f64,
    pub rows: Vec<QuenchedRow>,
}

impl QuenchedReport {
    pub fn l1_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.l1_error).collect()
    }
}

/// `c_n(w)` on the grid `n_grid` for `m` itineraries. Each `x_n` costs `O(n)`,
/// so the grid should be sparse (logarithmic) rather than every `n`.
pub fn quenched_report(mp: &ModelParams, n_grid: &[usize], m: usize, seed: u64) -> Result<QuenchedReport> {
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::InvalidParams("n grid must be nonempty and positive".into()));
    }
    let n_max = *n_grid.iter().max().unwrap();
    let inv_a = 1.0 / mp.alpha();
    let per_replica = map_replicas(m, |i| {
        let mut s = SymbolStream::for_replica(mp, seed, i);
        let sym = s.window(n_max - 1).to_vec();
        n_grid
            .iter()
            .map(|&n| (n as f64).powf(inv_a) * xn_unchecked(&sym, n, mp))
            .collect::<Vec<f64>>()
    });
    let limit = mp.quenched_limit();
    let cn_samples: Vec<Vec<f64>> = (0..n_grid.len())
        .map(|j| per_replica.iter().map(|r| r[j]).collect())
        .collect();
    let rows = n_grid
        .iter()
        .zip(&cn_samples)
        .map(|(&n, v)| {
            let dev: Vec<f64> = v.iter().map(|c| (c - limit).abs()).collect();
            QuenchedRow {
                n,
                mean_cn: mean(v),
                stderr: stderr(v),
                median_cn: median(v),
                l1_error: mean(&dev),
                l1_stderr: stderr(&dev),
            }
        })
        .collect();
    Ok(QuenchedReport {
        n_values: n_grid.to_vec(),
        cn_samples,
        limit_value: limit,
        rows,
    })
}

/// Counts of `x_n(alpha) <= x_n(w) <= x_n(beta)` violations over `m`
/// itineraries and every `n` in `n_grid`. Returns `(checks, violations,
/// strict_failures)`, where the last counts mixed itineraries for which an
/// inequality was not strict.
pub fn sandwich_check(mp: &ModelParams, n_grid: &[usize], m: usize, seed: u64) -> Result<(usize, usize, usize)> {
    let n_max = n_grid.iter().copied().max().unwrap_or(1);
    let xa = deterministic_xseq(mp.fast(), n_max)?;
    let xb = deterministic_xseq(mp.slow(), n_max)?;
    let counts = map_replicas(m, |i| {
        let mut s = SymbolStream::for_replica(mp, seed, i);
        let sym = s.window(n_max.saturating_sub(1)).to_vec();
        let (mut viol, mut nonstrict) = (0usize, 0usize);
        for &n in n_grid {
            let x = xn_unchecked(&sym, n, mp);
            let (lo, hi) = (xa[n - 1], xb[n - 1]);
            if x < lo || x > hi {
                viol += 1;
            }
            let used = &sym[..n - 1];
            let mixed = used.contains(&Symbol::Fast) && used.contains(&Symbol::Slow);
            if mixed && !(lo < x && x < hi) {
                nonstrict += 1;
            }
        }
        (viol, nonstrict)
    });
    let violations = counts.iter().map(|c| c.0).sum();
    let nonstrict = counts.iter().map(|c| c.1).sum();
    Ok((m * n_grid.len(), violations, nonstrict))
}

/// i.i.d. symbols drawn straight from a replica generator; the same sequence
/// a [`SymbolStream`] for that replica would produce.
#[cfg(test)]
pub(crate) fn replica_symbols(mp: &ModelParams, seed: u64, replica: u64, n: usize) -> Vec<Symbol> {
    use crate::driver::{draw_symbol, purpose, replica_rng};
    let mut rng = replica_rng(seed, purpose::SYMBOLS, replica);
    (0..n).map(|_| draw_symbol(&mut rng, mp.p1())).collect()
}
