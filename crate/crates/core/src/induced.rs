//! First returns of the skew product to `D0 = (1/2, 1] x [0, 1]`.
//!
//! The return cell of `x` is `J_n(w) = (x'_n(w), x'_{n-1}(w)]`. Return times
//! are computed two ways: by forward iteration and by searching the
//! decreasing breakpoints `x'_n(w)`.

use crate::driver::{draw_symbol, purpose, replica_rng, ModelParams, SkewState, Symbol, SymbolStream, SymbolString};
use crate::error::{Error, Result};
use crate::parallel::{fold_replicas, map_replicas};
use crate::quenched::{expected_xn_exact, quenched_xprime, xn_unchecked, EXACT_MAX_N};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default return-time cap in the finite-measure regime.
pub const DEFAULT_CAP: u64 = 10_000_000;

/// One completed excursion from `D0` back to `D0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnRecord {
    pub r: u64,
    /// `x` on arrival back in `(1/2, 1]`.
    pub entry_x: f64,
    /// The `r` symbols read during the excursion.
    pub cylinder: SymbolString,
    /// Probability of `cylinder`.
    pub weight: f64,
}

/// Result of [`return_time_iterate`]. Hitting the cap is an outcome, not an
/// error: in the infinite-measure regime it is expected.
#[derive(Debug, Clone, PartialEq)]
pub enum ReturnOutcome {
    Returned(ReturnRecord),
    Capped { steps: u64, x: f64 },
}

impl ReturnOutcome {
    pub fn return_time(&self) -> Option<u64> {
        match self {
            ReturnOutcome::Returned(r) => Some(r.r),
            ReturnOutcome::Capped { .. } => None,
        }
    }
}

fn check_d0(x: f64) -> Result<()> {
    if x > 0.5 && x <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("x = {x} is outside (1/2, 1]")))
    }
}

/// Applies the skew step until `x > 1/2` again, at most `cap` times.
/// `s` is left at the return point (or wherever the cap stopped it).
pub fn return_time_iterate(s: &mut SkewState, mp: &ModelParams, cap: u64) -> Result<ReturnOutcome> {
    check_d0(s.x)?;
    let start = s.stream.offset();
    let w0 = s.logweight;
    let mut steps = 0u64;
    loop {
        if steps == cap {
            return Ok(ReturnOutcome::Capped { steps, x: s.x });
        }
        s.step(mp);
        steps += 1;
        if s.x > 0.5 {
            break;
        }
    }
    let cylinder = SymbolString::new(s.stream.history()[start..s.stream.offset()].to_vec());
    Ok(ReturnOutcome::Returned(ReturnRecord {
        r: steps,
        entry_x: s.x,
        cylinder,
        weight: (s.logweight - w0).exp(),
    }))
}

/// Forward return time drawing symbols straight from `rng`; `None` past `cap`.
/// Consumes exactly the draws a [`SymbolStream`] on the same generator would.
#[inline]
pub(crate) fn first_return_rng<R: Rng>(x: f64, mp: &ModelParams, p1: f64, rng: &mut R, cap: u64) -> Option<u64> {
    let mut x = x;
    let mut steps = 0u64;
    loop {
        if steps == cap {
            return None;
        }
        let s = draw_symbol(rng, p1);
        x = mp.map(s).forward(x).clamp(0.0, 1.0);
        steps += 1;
        if x > 0.5 {
            return Some(steps);
        }
    }
}

/// The `n` with `x in (x'_n(w), x'_{n-1}(w)]`, found by galloping over the
/// decreasing breakpoints and then bisecting.
pub fn return_time_locate(x: f64, sym: &[Symbol], mp: &ModelParams) -> Result<usize> {
    check_d0(x)?;
    let xp = |n: usize| quenched_xprime(sym, n, mp);
    if x > 0.75 {
        return Ok(1);
    }
    // Invariant: x'_lo >= x > x'_hi.
    let mut lo = 1usize;
    let mut hi = 2usize;
    loop {
        let h = hi.min(sym.len().max(2));
        if xp(h)? < x {
            hi = h;
            break;
        }
        if h == sym.len() {
            return Err(Error::InsufficientSymbols {
                needed: h + 1,
                available: sym.len(),
            });
        }
        lo = h;
        hi = 2 * h;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if xp(mid)? >= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// [`return_time_locate`] on a lazily extended stream; `None` if the return
/// time exceeds `cap`.
pub fn return_time_locate_stream(x: f64, stream: &mut SymbolStream, mp: &ModelParams, cap: usize) -> Result<Option<usize>> {
    check_d0(x)?;
    let mut len = 64usize.min(cap.max(1));
    loop {
        match return_time_locate(x, stream.window(len), mp) {
            Ok(n) if n <= cap => return Ok(Some(n)),
            Ok(_) => return Ok(None),
            Err(Error::InsufficientSymbols { .. }) if len < cap => len = (2 * len).min(cap),
            Err(Error::InsufficientSymbols { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
}

/// The return cells `J_1(w), ..., J_{n_max}(w)` as `(n, left, right)`.
pub fn return_partition(sym: &[Symbol], n_max: usize, mp: &ModelParams) -> Result<Vec<(usize, f64, f64)>> {
    let mut out = Vec::with_capacity(n_max);
    let mut right = 1.0;
    for n in 1..=n_max {
        let left = quenched_xprime(sym, n, mp)?;
        out.push((n, left, right));
        right = left;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub n: usize,
    pub empirical: f64,
    pub stderr: f64,
    /// `E_w x_n(w)`: exact for `n <= EXACT_MAX_N`, else `C n^(-1/alpha)`.
    pub predicted: f64,
    pub predicted_exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub replicas: u64,
    pub rows: Vec<TailRow>,
}

/// Empirical `P(R > n)` for `(x, w)` uniform on `D0`.
///
/// Replica `i` takes `x = 1 - u/2` from its spatial generator and its
/// itinerary from its symbol generator; only the first `max(n_grid) + 1`
/// steps are simulated.
pub fn tail_estimate(mp: &ModelParams, n_grid: &[usize], m: u64, seed: u64) -> Result<TailReport> {
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::InvalidParams("tail grid must be nonempty and positive".into()));
    }
    if m < 2 {
        return Err(Error::InvalidParams("need at least two replicas".into()));
    }
    let n_max = *n_grid.iter().max().unwrap() as u64;
    let p1 = mp.p1();
    let counts = fold_replicas(
        m,
        || vec![0u64; n_grid.len()],
        |acc, i| {
            let x = 1.0 - 0.5 * replica_rng(seed, purpose::SPACE, i).random::<f64>();
            let mut rng = replica_rng(seed, purpose::SYMBOLS, i);
            let r = first_return_rng(x, mp, p1, &mut rng, n_max).unwrap_or(u64::MAX);
            for (c, &n) in acc.iter_mut().zip(n_grid) {
                if r > n as u64 {
                    *c += 1;
                }
            }
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    );
    let mut rows = Vec::with_capacity(n_grid.len());
    for (&n, &c) in n_grid.iter().zip(&counts) {
        let p = c as f64 / m as f64;
        let exact = n <= EXACT_MAX_N;
        let predicted = if exact {
            expected_xn_exact(mp, n)?
        } else {
            mp.quenched_limit() * (n as f64).powf(-1.0 / mp.alpha())
        };
        rows.push(TailRow {
            n,
            empirical: p,
            stderr: (p * (1.0 - p) / m as f64).sqrt(),
            predicted,
            predicted_exact: exact,
        });
    }
    Ok(TailReport { replicas: m, rows })
}

/// Return time of one input by both routes; `None` means past the cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualReturn {
    pub replica: u64,
    pub x: f64,
    pub iterate: Option<u64>,
    pub locate: Option<u64>,
}

impl DualReturn {
    pub fn agree(&self) -> bool {
        self.iterate == self.locate
    }
}

/// [`return_time_iterate`] and [`return_time_locate_stream`] on `m` inputs
/// `x = 1 - u/2` with independent itineraries, replica `i` drawing from its
/// own generators.
pub fn return_time_agreement(mp: &ModelParams, m: usize, seed: u64, cap: u64) -> Result<Vec<DualReturn>> {
    map_replicas(m, |i| {
        let x = 1.0 - 0.5 * replica_rng(seed, purpose::SPACE, i).random::<f64>();
        let stream = SymbolStream::for_replica(mp, seed, i);
        let mut state = SkewState::new(x, stream.clone())?;
        let iterate = return_time_iterate(&mut state, mp, cap)?.return_time();
        let mut stream = stream;
        let locate = return_time_locate_stream(x, &mut stream, mp, cap as usize)?.map(|n| n as u64);
        Ok(DualReturn {
            replica: i,
            x,
            iterate,
            locate,
        })
    })
    .into_iter()
    .collect()
}

/// Checks that the orbit of a point with return time `R = n` visits
/// `I_{n-1}(phi w), ..., I_1(phi^{n-1} w)` at steps `1, ..., n-1`, where
/// `I_k(w) = (x_{k+1}(w), x_k(w)]`. Returns the number of misplaced steps.
pub fn passage_chain_violations(x: f64, sym: &[Symbol], mp: &ModelParams) -> Result<usize> {
    let n = return_time_locate(x, sym, mp)?;
    let mut y = x;
    let mut bad = 0;
    for (k, &s) in sym.iter().enumerate().take(n - 1) {
        y = mp.map(s).forward(y);
        let level = n - 1 - k;
        let shifted = &sym[k + 1..];
        let lo = xn_unchecked(shifted, level + 1, mp);
        let hi = xn_unchecked(shifted, level, mp);
        if !(y > lo && y <= hi) {
            bad += 1;
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::cylinder_enumerate;
    use crate::quenched::expected_xn_exact;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn mp() -> ModelParams {
        ModelParams::new(0.5, 0.75, 0.5).unwrap()
    }

    #[test]
    fn dual_return_times_agree() {
        let mp = mp();
        let rows = return_time_agreement(&mp, 500, 11, 1_000_000).unwrap();
        assert_eq!(rows.len(), 500);
        assert!(rows.iter().all(DualReturn::agree));
        assert!(rows.iter().all(|r| r.x > 0.5 && r.x <= 1.0 && r.iterate.is_some()));
        assert_eq!(rows, return_time_agreement(&mp, 500, 11, 1_000_000).unwrap());
    }

    fn state(x: f64, seed: u64) -> SkewState {
        SkewState::new(x, SymbolStream::for_replica(&mp(), seed, 0)).unwrap()
    }

    #[test]
    fn iterate_examples() {
        let mut s = state(0.9, 1);
        let out = return_time_iterate(&mut s, &mp(), DEFAULT_CAP).unwrap();
        let ReturnOutcome::Returned(rec) = out else { panic!() };
        assert_eq!(rec.r, 1);
        assert!((rec.entry_x - 0.8).abs() < 1e-15);
        assert_eq!(rec.cylinder.len(), 1);
        assert!((rec.weight - 0.5).abs() < 1e-15);

        let mut s = state(0.5 + 1e-6, 2);
        let r = return_time_iterate(&mut s, &mp(), DEFAULT_CAP).unwrap().return_time().unwrap();
        assert!(r > 100, "{r}");
        let mut s = state(0.75, 3);
        assert!(return_time_iterate(&mut s, &mp(), DEFAULT_CAP).unwrap().return_time().unwrap() >= 2);
        assert!(return_time_iterate(&mut state(0.4999, 0), &mp(), 10).is_err());
    }

    #[test]
    fn cap_is_a_value() {
        let mut s = state(0.5 + 1e-9, 4);
        assert_eq!(
            return_time_iterate(&mut s, &mp(), 5).unwrap(),
            ReturnOutcome::Capped { steps: 5, x: s.x }
        );
    }

    #[test]
    fn locate_examples() {
        let p = mp();
        let sym = SymbolString::constant(Symbol::Slow, 64);
        assert_eq!(return_time_locate(0.8, &sym, &p).unwrap(), 1);
        assert_eq!(return_time_locate(0.75, &sym, &p).unwrap(), 2);
        assert_eq!(return_time_locate(1.0, &sym, &p).unwrap(), 1);
        let one = ModelParams::new(0.5, 1.0, 0.0).unwrap();
        let r = return_time_locate(0.6, &sym, &one).unwrap();
        let mut s = SkewState::new(0.6, SymbolStream::for_replica(&one, 0, 0)).unwrap();
        assert_eq!(return_time_iterate(&mut s, &one, 1000).unwrap().return_time(), Some(r as u64));
        assert!(matches!(
            return_time_locate(0.5 + 1e-9, &sym[..3], &p),
            Err(Error::InsufficientSymbols { .. })
        ));
    }

    #[test]
    fn locate_and_iterate_agree() {
        let p = mp();
        for i in 0..2000u64 {
            let x = 1.0 - 0.5 * replica_rng(9, purpose::SPACE, i).random::<f64>();
            let mut s = SkewState::new(x, SymbolStream::for_replica(&p, 9, i)).unwrap();
            let it = return_time_iterate(&mut s, &p, 1 << 20).unwrap().return_time().unwrap();
            let mut st = SymbolStream::for_replica(&p, 9, i);
            let lo = return_time_locate_stream(x, &mut st, &p, 1 << 20).unwrap().unwrap();
            assert_eq!(it, lo as u64, "replica {i}");
        }
    }

    #[test]
    fn tail_small_n_matches_exact() {
        let p = mp();
        let grid = [1, 2, 4, 8, 16];
        let rep = tail_estimate(&p, &grid, 200_000, 5).unwrap();
        for row in &rep.rows {
            let exact = expected_xn_exact(&p, row.n).unwrap();
            assert_eq!(row.predicted, exact);
            assert!((row.empirical - exact).abs() < 3.5 * row.stderr + 1e-12, "{row:?}");
        }
        assert!((rep.rows[0].predicted - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tail_is_worker_count_independent() {
        let p = mp();
        let run = |k| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .unwrap()
                .install(|| tail_estimate(&p, &[3, 30], 10_000, 8).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn passage_chain() {
        let p = mp();
        let mut checked = 0;
        for i in 0..1000u64 {
            let x = 1.0 - 0.5 * replica_rng(11, purpose::SPACE, i).random::<f64>();
            let mut st = SymbolStream::for_replica(&p, 11, i);
            let sym = st.window(64).to_vec();
            let Ok(n) = return_time_locate(x, &sym, &p) else { continue };
            if n <= 10 {
                assert_eq!(passage_chain_violations(x, &sym, &p).unwrap(), 0);
                checked += 1;
            }
        }
        assert!(checked > 900);
    }

    #[test]
    fn partition_completeness() {
        let p = ModelParams::new(0.5, 0.75, 0.3).unwrap();
        let n_max = 12;
        let mut covered = 0.0;
        for (sym, w) in cylinder_enumerate(&p, n_max).unwrap() {
            let cells = return_partition(&sym, n_max, &p).unwrap();
            covered += w * cells.iter().map(|c| c.2 - c.1).sum::<f64>() / 0.5;
        }
        let tail = expected_xn_exact(&p, n_max).unwrap();
        assert!((covered - (1.0 - tail)).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn locate_matches_iterate(u in 0.0f64..1.0, seed in 0u64..1000) {
            let p = mp();
            let x = 1.0 - 0.5 * u;
            let mut s = SkewState::new(x, SymbolStream::for_replica(&p, seed, 0)).unwrap();
            let it = return_time_iterate(&mut s, &p, 1 << 22).unwrap().return_time();
            let mut st = SymbolStream::for_replica(&p, seed, 0);
            let lo = return_time_locate_stream(x, &mut st, &p, 1 << 22).unwrap().map(|n| n as u64);
            prop_assert_eq!(it, lo);
        }
    }
}
