//! Observables `f(x, w)` on the skew product.

use crate::driver::{ModelParams, Symbol};
use std::fmt;
use std::sync::Arc;

type EvalFn = dyn Fn(f64, &[Symbol]) -> f64 + Send + Sync;

/// A bounded function of the spatial point and the leading `symbol_horizon`
/// symbols of the noise itinerary.
#[derive(Clone)]
pub struct Observable {
    name: String,
    eval: Arc<EvalFn>,
    holder_exponent: f64,
    symbol_horizon: usize,
    c_value: f64,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("name", &self.name)
            .field("holder_exponent", &self.holder_exponent)
            .field("symbol_horizon", &self.symbol_horizon)
            .field("c_value", &self.c_value)
            .finish()
    }
}

impl Observable {
    /// Observable depending on `x` only.
    pub fn spatial<F>(name: impl Into<String>, holder_exponent: f64, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let c_value = f(0.0);
        Self {
            name: name.into(),
            eval: Arc::new(move |x, _| f(x)),
            holder_exponent,
            symbol_horizon: 0,
            c_value,
        }
    }

    /// Observable reading the first `horizon` symbols. `c_value = E_w f(0, w)`
    /// is computed exactly by summing over the `2^horizon` cylinders.
    pub fn with_symbols<F>(
        name: impl Into<String>,
        holder_exponent: f64,
        horizon: usize,
        mp: &ModelParams,
        f: F,
    ) -> Self
    where
        F: Fn(f64, &[Symbol]) -> f64 + Send + Sync + 'static,
    {
        assert!(horizon <= 20, "symbol horizon {horizon} is too large to enumerate");
        let c_value = (0..1usize << horizon)
            .map(|j| {
                let syms: Vec<Symbol> = (0..horizon)
                    .map(|k| if (j >> k) & 1 == 0 { Symbol::Fast } else { Symbol::Slow })
                    .collect();
                let w: f64 = syms.iter().map(|&s| mp.prob(s)).product();
                w * f(0.0, &syms)
            })
            .sum();
        Self {
            name: name.into(),
            eval: Arc::new(f),
            holder_exponent,
            symbol_horizon: horizon,
            c_value,
        }
    }

    /// `height` times the smooth bump `exp(1 - 1/(1 - s^2))`, supported on
    /// `(lo, hi)` with peak at the midpoint.
    pub fn bump(lo: f64, hi: f64, height: f64) -> Self {
        assert!(lo < hi);
        Self::spatial(format!("bump[{lo},{hi}]x{height}"), 1.0, move |x| {
            height * bump_profile(lo, hi, x)
        })
    }

    /// Piecewise linear tent on `[lo, hi]` peaking at `height` in the middle.
    pub fn tent(lo: f64, hi: f64, height: f64) -> Self {
        assert!(lo < hi);
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        Self::spatial(format!("tent[{lo},{hi}]x{height}"), 1.0, move |x| {
            height * (1.0 - (x - mid).abs() / half).max(0.0)
        })
    }

    pub fn constant(v: f64) -> Self {
        Self::spatial(format!("const({v})"), 1.0, move |_| v)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: f64, omega: &[Symbol]) -> f64 {
        (self.eval)(x, omega)
    }

    pub fn holder_exponent(&self) -> f64 {
        self.holder_exponent
    }

    pub fn symbol_horizon(&self) -> usize {
        self.symbol_horizon
    }

    /// `c = E_w f(0, w)`.
    pub fn c_value(&self) -> f64 {
        self.c_value
    }

    /// `f - delta`.
    pub fn shifted(&self, delta: f64) -> Observable {
        let inner = Arc::clone(&self.eval);
        Observable {
            name: format!("{} - {delta}", self.name),
            eval: Arc::new(move |x, w| inner(x, w) - delta),
            holder_exponent: self.holder_exponent,
            symbol_horizon: self.symbol_horizon,
            c_value: self.c_value - delta,
        }
    }

    /// `k f`.
    pub fn scaled(&self, k: f64) -> Observable {
        let inner = Arc::clone(&self.eval);
        Observable {
            name: format!("{k} * {}", self.name),
            eval: Arc::new(move |x, w| k * inner(x, w)),
            holder_exponent: self.holder_exponent,
            symbol_horizon: self.symbol_horizon,
            c_value: k * self.c_value,
        }
    }

    /// `f + g`.
    pub fn plus(&self, other: &Observable) -> Observable {
        let (a, b) = (Arc::clone(&self.eval), Arc::clone(&other.eval));
        Observable {
            name: format!("{} + {}", self.name, other.name),
            eval: Arc::new(move |x, w| a(x, w) + b(x, w)),
            holder_exponent: self.holder_exponent.min(other.holder_exponent),
            symbol_horizon: self.symbol_horizon.max(other.symbol_horizon),
            c_value: self.c_value + other.c_value,
        }
    }
}

#[inline]
pub(crate) fn bump_profile(lo: f64, hi: f64, x: f64) -> f64 {
    let s = (2.0 * x - lo - hi) / (hi - lo);
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_support_and_peak() {
        let b = Observable::bump(0.6, 0.9, 2.0);
        assert_eq!(b.eval(0.6, &[]), 0.0);
        assert_eq!(b.eval(0.95, &[]), 0.0);
        assert!((b.eval(0.75, &[]) - 2.0).abs() < 1e-15);
        assert_eq!(b.c_value(), 0.0);
        assert_eq!(b.symbol_horizon(), 0);
    }

    #[test]
    fn tent_shape() {
        let t = Observable::tent(0.5, 1.0, 4.0);
        assert_eq!(t.eval(0.75, &[]), 4.0);
        assert_eq!(t.eval(0.625, &[]), 2.0);
        assert_eq!(t.eval(0.4, &[]), 0.0);
        assert_eq!(t.c_value(), 0.0);
    }

    #[test]
    fn algebra() {
        let f = Observable::spatial("1-x", 1.0, |x| 1.0 - x);
        assert_eq!(f.c_value(), 1.0);
        let g = f.shifted(0.25).scaled(2.0);
        assert_eq!(g.c_value(), 1.5);
        assert_eq!(g.eval(0.5, &[]), 0.5);
        let h = g.plus(&Observable::constant(1.0));
        assert_eq!(h.eval(0.5, &[]), 1.5);
    }

    #[test]
    fn symbol_c_value() {
        let mp = ModelParams::new(0.5, 0.75, 0.3).unwrap();
        let f = Observable::with_symbols("w0", 1.0, 1, &mp, |_, w| {
            if w[0] == Symbol::Fast { 1.0 } else { 0.0 }
        });
        assert!((f.c_value() - 0.3).abs() < 1e-15);
    }
}
