//! The randomizing process. A noise point `w` only matters through its
//! itinerary `a(w), a(phi w), ...`, which under Lebesgue measure is an i.i.d.
//! Bernoulli(p1) string, so `w` is represented by that string directly.

use crate::error::{Error, Result};
use crate::maps::MapParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Deref;

/// Which map a step applies: `Fast` is `T_alpha`, `Slow` is `T_beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    Fast,
    Slow,
}

/// `(alpha, beta, p1)` of the random map `{T_alpha, T_beta; p1, p2}`.
///
/// `p1` may be 0 or 1 here (degenerate randomness is useful as a reference);
/// the experiment configuration insists on `0 < p1 < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    fast: MapParams,
    slow: MapParams,
    p1: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, beta: f64, p1: f64) -> Result<Self> {
        let fast = MapParams::new(alpha)?;
        let slow = MapParams::new(beta)?;
        if alpha >= beta {
            return Err(Error::InvalidParams(format!(
                "need alpha < beta, got alpha = {alpha}, beta = {beta}"
            )));
        }
        if !(0.0..=1.0).contains(&p1) {
            return Err(Error::InvalidParams(format!("p1 = {p1} is outside [0, 1]")));
        }
        Ok(Self { fast, slow, p1 })
    }

    pub fn alpha(&self) -> f64 {
        self.fast.alpha()
    }

    pub fn beta(&self) -> f64 {
        self.slow.alpha()
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p2(&self) -> f64 {
        1.0 - self.p1
    }

    pub fn fast(&self) -> &MapParams {
        &self.fast
    }

    pub fn slow(&self) -> &MapParams {
        &self.slow
    }

    #[inline]
    pub fn map(&self, s: Symbol) -> &MapParams {
        match s {
            Symbol::Fast => &self.fast,
            Symbol::Slow => &self.slow,
        }
    }

    #[inline]
    pub fn prob(&self, s: Symbol) -> f64 {
        match s {
            Symbol::Fast => self.p1,
            Symbol::Slow => 1.0 - self.p1,
        }
    }

    /// `c(alpha) p1^(-1/alpha) = (alpha p1)^(-1/alpha) / 2`, the quenched limit
    /// of `n^(1/alpha) x_n(w)`.
    pub fn quenched_limit(&self) -> f64 {
        let a = self.alpha();
        0.5 * (a * self.p1).powf(-1.0 / a)
    }
}

/// A finite itinerary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SymbolString(Vec<Symbol>);

impl SymbolString {
    pub fn new(symbols: Vec<Symbol>) -> Self {
        Self(symbols)
    }

    pub fn constant(s: Symbol, n: usize) -> Self {
        Self(vec![s; n])
    }

    pub fn fast_count(&self) -> usize {
        self.0.iter().filter(|&&s| s == Symbol::Fast).count()
    }

    /// Cylinder weight `p1^#Fast p2^#Slow`.
    pub fn weight(&self, mp: &ModelParams) -> f64 {
        let f = self.fast_count() as i32;
        let s = self.0.len() as i32 - f;
        mp.p1().powi(f) * mp.p2().powi(s)
    }

    pub fn into_inner(self) -> Vec<Symbol> {
        self.0
    }
}

impl Deref for SymbolString {
    type Target = [Symbol];
    fn deref(&self) -> &[Symbol] {
        &self.0
    }
}

impl From<Vec<Symbol>> for SymbolString {
    fn from(v: Vec<Symbol>) -> Self {
        Self(v)
    }
}

/// Random-number purposes, so that e.g. the spatial draw of a replica never
/// shares a ChaCha stream with its symbols.
pub mod purpose {
    pub const SYMBOLS: u64 = 0x5359_4d42;
    pub const SPACE: u64 = 0x5350_4143;
    pub const AUX: u64 = 0x4155_5831;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based generator for replica `replica` of an experiment seeded with
/// `master`: the ChaCha key depends on `(master, purpose)` and the stream id is
/// the replica index, so a replica's draws do not depend on scheduling.
pub fn replica_rng(master: u64, purpose: u64, replica: u64) -> ChaCha8Rng {
    let key = splitmix64(master ^ splitmix64(purpose));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(replica);
    rng
}

#[inline]
pub(crate) fn draw_symbol<R: Rng>(rng: &mut R, p1: f64) -> Symbol {
    if rng.random::<f64>() < p1 {
        Symbol::Fast
    } else {
        Symbol::Slow
    }
}

/// `n` i.i.d. symbols with `P(Fast) = p1`.
pub fn draw_symbols(mp: &ModelParams, n: usize, seed: u64) -> SymbolString {
    let mut rng = replica_rng(seed, purpose::SYMBOLS, 0);
    SymbolString((0..n).map(|_| draw_symbol(&mut rng, mp.p1())).collect())
}

/// Lazily generated itinerary `a(phi^k w)`, `k = offset, offset + 1, ...`.
///
/// Symbol `k` is the `k`-th draw of the generator, so it never changes once
/// produced. All symbols ever drawn stay in the buffer.
#[derive(Debug, Clone)]
pub struct SymbolStream {
    buffer: Vec<Symbol>,
    rng: ChaCha8Rng,
    p1: f64,
    offset: usize,
}

impl SymbolStream {
    pub fn new(p1: f64, rng: ChaCha8Rng) -> Self {
        Self {
            buffer: Vec::new(),
            rng,
            p1,
            offset: 0,
        }
    }

    /// Stream for replica `replica` of an experiment seeded with `master`.
    pub fn for_replica(mp: &ModelParams, master: u64, replica: u64) -> Self {
        Self::new(mp.p1(), replica_rng(master, purpose::SYMBOLS, replica))
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Make at least `len` unread symbols available.
    #[inline]
    pub fn ensure(&mut self, len: usize) {
        let need = self.offset + len;
        while self.buffer.len() < need {
            let s = draw_symbol(&mut self.rng, self.p1);
            self.buffer.push(s);
        }
    }

    /// Symbol of `phi^(offset + k) w`.
    #[inline]
    pub fn peek(&mut self, k: usize) -> Symbol {
        self.ensure(k + 1);
        self.buffer[self.offset + k]
    }

    /// The next `len` unread symbols.
    pub fn window(&mut self, len: usize) -> &[Symbol] {
        self.ensure(len);
        &self.buffer[self.offset..self.offset + len]
    }

    /// Apply the shift `phi`.
    #[inline]
    pub fn shift(&mut self) {
        self.ensure(1);
        self.offset += 1;
    }

    pub fn advance(&mut self, k: usize) {
        self.ensure(k);
        self.offset += k;
    }

    /// Every symbol drawn so far, including already-consumed ones.
    pub fn history(&self) -> &[Symbol] {
        &self.buffer
    }
}

/// A point of the skew product together with the log-weight of the cylinder
/// that its consumed symbols select.
#[derive(Debug, Clone)]
pub struct SkewState {
    pub x: f64,
    pub stream: SymbolStream,
    pub logweight: f64,
    pub steps: u64,
}

impl SkewState {
    pub fn new(x: f64, stream: SymbolStream) -> Result<Self> {
        if !(x.is_finite() && (0.0..=1.0).contains(&x)) {
            return Err(Error::Domain(format!("x = {x} is outside [0, 1]")));
        }
        Ok(Self {
            x,
            stream,
            logweight: 0.0,
            steps: 0,
        })
    }

    /// `S(x, w) = (T_{a(w)} x, phi w)` in place.
    #[inline]
    pub fn step(&mut self, mp: &ModelParams) {
        let s = self.stream.peek(0);
        self.x = mp.map(s).forward(self.x).clamp(0.0, 1.0);
        self.logweight += mp.prob(s).ln();
        self.stream.shift();
        self.steps += 1;
    }

    /// Symbols consumed since the stream was created.
    pub fn consumed(&self) -> &[Symbol] {
        &self.stream.history()[..self.stream.offset()]
    }
}

/// One application of the skew product.
pub fn skew_step(mut s: SkewState, mp: &ModelParams) -> SkewState {
    s.step(mp);
    s
}

pub const MAX_CYLINDER_LEN: usize = 24;

/// All `2^n` length-`n` itineraries with their weights, in lexicographic
/// order with `Fast < Slow`.
pub fn cylinder_enumerate(mp: &ModelParams, n: usize) -> Result<Vec<(SymbolString, f64)>> {
    if n > MAX_CYLINDER_LEN {
        return Err(Error::TooLarge {
            what: "cylinder length",
            requested: n,
            limit: MAX_CYLINDER_LEN,
        });
    }
    let out = (0..1usize << n)
        .map(|j| {
            let syms: Vec<Symbol> = (0..n)
                .map(|k| {
                    if (j >> (n - 1 - k)) & 1 == 0 {
                        Symbol::Fast
                    } else {
                        Symbol::Slow
                    }
                })
                .collect();
            let s = SymbolString(syms);
            let w = s.weight(mp);
            (s, w)
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use Symbol::*;

    fn model(p1: f64) -> ModelParams {
        ModelParams::new(0.5, 0.75, p1).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.75, 0.5, 0.5).is_err());
        assert!(ModelParams::new(0.5, 0.5, 0.5).is_err());
        assert!(ModelParams::new(0.5, 0.75, 1.5).is_err());
        assert!(ModelParams::new(0.0, 0.75, 0.5).is_err());
        let mp = model(0.3);
        assert!((mp.p2() - 0.7).abs() < 1e-15);
        assert!((model(0.5).quenched_limit() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_draws() {
        assert_eq!(&*draw_symbols(&model(1.0), 3, 99), &[Fast, Fast, Fast]);
        assert_eq!(&*draw_symbols(&model(0.0), 2, 5), &[Slow, Slow]);
    }

    #[test]
    fn fast_fraction() {
        let n = 100_000;
        let s = draw_symbols(&model(0.5), n, 7);
        let frac = s.fast_count() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "{frac}");
    }

    #[test]
    fn draws_are_reproducible() {
        let mp = model(0.4);
        assert_eq!(draw_symbols(&mp, 1000, 3), draw_symbols(&mp, 1000, 3));
        assert_ne!(draw_symbols(&mp, 1000, 3), draw_symbols(&mp, 1000, 4));
    }

    #[test]
    fn stream_symbols_are_stable() {
        let mp = model(0.4);
        let mut a = SymbolStream::for_replica(&mp, 11, 2);
        let mut b = SymbolStream::for_replica(&mp, 11, 2);
        let far = a.peek(500);
        let w: Vec<Symbol> = a.window(10).to_vec();
        for (k, s) in w.iter().enumerate() {
            assert_eq!(b.peek(k), *s);
        }
        b.advance(500);
        assert_eq!(b.peek(0), far);
        a.shift();
        assert_eq!(a.offset(), 1);
        assert_eq!(a.peek(0), w[1]);
    }

    #[test]
    fn skew_step_examples() {
        let mp = model(0.5);
        let st = SkewState::new(0.75, SymbolStream::for_replica(&mp, 1, 0)).unwrap();
        let st = skew_step(st, &mp);
        assert_eq!(st.x, 0.5);
        assert_eq!(st.steps, 1);

        let mp = model(1.0);
        let st = SkewState::new(0.25, SymbolStream::for_replica(&mp, 1, 0)).unwrap();
        let st = skew_step(st, &mp);
        assert!((st.x - 0.426_776_695_296_636_9).abs() < 1e-15);
    }

    #[test]
    fn all_fast_matches_deterministic_iteration() {
        let mp = model(1.0);
        let mut st = SkewState::new(0.3, SymbolStream::for_replica(&mp, 5, 0)).unwrap();
        let mut x = 0.3;
        for _ in 0..200 {
            st.step(&mp);
            x = mp.fast().forward(x);
            assert_eq!(st.x, x);
        }
    }

    #[test]
    fn cylinders() {
        let c = cylinder_enumerate(&model(0.3), 1).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(&*c[0].0, &[Fast]);
        assert!((c[0].1 - 0.3).abs() < 1e-15 && (c[1].1 - 0.7).abs() < 1e-15);

        let c = cylinder_enumerate(&model(0.5), 2).unwrap();
        assert!(c.iter().all(|(_, w)| (w - 0.25).abs() < 1e-15));

        let c = cylinder_enumerate(&model(0.3), 2).unwrap();
        let expect = [0.09, 0.21, 0.21, 0.49];
        let names = [[Fast, Fast], [Fast, Slow], [Slow, Fast], [Slow, Slow]];
        for (k, (s, w)) in c.iter().enumerate() {
            assert_eq!(&**s, &names[k]);
            assert!((w - expect[k]).abs() < 1e-15);
        }

        for n in [0, 5, 12, 16] {
            let c = cylinder_enumerate(&model(0.37), n).unwrap();
            assert_eq!(c.len(), 1 << n);
            let total: f64 = c.iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            cylinder_enumerate(&model(0.5), 25),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn replica_streams_are_independent_of_order() {
        let first: Vec<u64> = (0..4)
            .map(|i| replica_rng(9, purpose::SYMBOLS, i).random())
            .collect();
        let reversed: Vec<u64> = (0..4)
            .rev()
            .map(|i| replica_rng(9, purpose::SYMBOLS, i).random())
            .collect();
        assert_eq!(first, reversed.into_iter().rev().collect::<Vec<_>>());
        let a: u64 = replica_rng(9, purpose::SYMBOLS, 0).random();
        let b: u64 = replica_rng(9, purpose::SPACE, 0).random();
        assert_ne!(a, b);
    }

    proptest! {
        #[test]
        fn logweight_matches_cylinder_weight(seed in 0u64..1000, n in 1usize..60, p1 in 0.05f64..0.95) {
            let mp = ModelParams::new(0.4, 0.8, p1).unwrap();
            let mut st = SkewState::new(0.6, SymbolStream::for_replica(&mp, seed, 0)).unwrap();
            for _ in 0..n {
                st.step(&mp);
            }
            let cyl = SymbolString::new(st.consumed().to_vec());
            prop_assert_eq!(cyl.len(), n);
            prop_assert!((st.logweight.exp() - cyl.weight(&mp)).abs() <= 1e-12);
        }

        #[test]
        fn steps_compose_along_the_itinerary(seed in 0u64..1000, x0 in 0.0f64..=1.0, n in 1usize..80) {
            let mp = ModelParams::new(0.3, 0.9, 0.5).unwrap();
            let mut st = SkewState::new(x0, SymbolStream::for_replica(&mp, seed, 1)).unwrap();
            for _ in 0..n {
                st.step(&mp);
            }
            let syms = st.consumed().to_vec();
            let composed = syms.iter().fold(x0, |x, &s| mp.map(s).forward(x).clamp(0.0, 1.0));
            prop_assert_eq!(st.x, composed);
        }
    }
}
