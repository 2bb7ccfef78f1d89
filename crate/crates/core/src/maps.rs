//! Deterministic layer: the LSV maps `T_a(x) = x(1 + 2^a x^a)` on `[0, 1/2]`
//! and `2x - 1` on `(1/2, 1]`, the inverse of the left branch, and the
//! backward orbit of `1/2` under that inverse.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Intermittency exponent of one LSV map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MapParams {
    alpha: f64,
    // Exponent as an integer when it is one, so that `(2x)^a` can use `powi`.
    #[serde(skip)]
    int_alpha: Option<i32>,
}

impl MapParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParams(format!(
                "alpha must be a positive finite real, got {alpha}"
            )));
        }
        let int_alpha = if alpha.fract() == 0.0 && alpha <= 64.0 {
            Some(alpha as i32)
        } else {
            None
        };
        Ok(Self { alpha, int_alpha })
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `t^alpha` for `t >= 0`.
    #[inline]
    pub fn pow(&self, t: f64) -> f64 {
        match self.int_alpha {
            Some(k) => t.powi(k),
            None => t.powf(self.alpha),
        }
    }

    /// `c(alpha) = 1 / (2 alpha^(1/alpha))`, the limit of `n^(1/alpha) x_n(alpha)`.
    pub fn c_limit(&self) -> f64 {
        0.5 * self.alpha.powf(-1.0 / self.alpha)
    }

    /// Evaluates the map without validating the argument.
    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        if x <= 0.5 {
            x * (1.0 + self.pow(2.0 * x))
        } else {
            2.0 * x - 1.0
        }
    }

    /// Left-branch inverse without validating the argument.
    ///
    /// Newton iteration on the convex, increasing `g(x) = x(1 + (2x)^a) - y`.
    /// The seed `y / (1 + (2y)^a)` lies below the root, so after the first
    /// step every iterate sits above it and decreases monotonically; the loop
    /// stops as soon as an iterate fails to decrease, which is the limit of
    /// binary64 resolution. Bisection on the bracket takes over if a step
    /// ever leaves it.
    #[inline]
    pub fn left_inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        if y >= 1.0 {
            return 0.5;
        }
        let a = self.alpha;
        let mut lo = 0.0_f64;
        let mut hi = 0.5_f64;
        let mut x = y / (1.0 + self.pow(2.0 * y));
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let p = self.pow(2.0 * x);
            let g = x * (1.0 + p) - y;
            if g == 0.0 {
                return x;
            }
            if g < 0.0 {
                lo = lo.max(x);
            } else {
                hi = hi.min(x);
                if x >= prev {
                    return x;
                }
                prev = x;
            }
            let mut next = x - g / (1.0 + (1.0 + a) * p);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
                if next <= lo || next >= hi {
                    return hi;
                }
            }
            x = next;
        }
        x
    }
}

impl TryFrom<f64> for MapParams {
    type Error = Error;
    fn try_from(alpha: f64) -> Result<Self> {
        MapParams::new(alpha)
    }
}

impl From<MapParams> for f64 {
    fn from(p: MapParams) -> f64 {
        p.alpha
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {v} is outside [0, 1]")))
    }
}

/// `T_a(x)`; `x = 1/2` belongs to the left branch.
pub fn lsv_forward(p: &MapParams, x: f64) -> Result<f64> {
    check_unit("x", x)?;
    Ok(p.forward(x).clamp(0.0, 1.0))
}

/// The unique `x` in `[0, 1/2]` with `x(1 + 2^a x^a) = y`.
pub fn lsv_left_inverse(p: &MapParams, y: f64) -> Result<f64> {
    check_unit("y", y)?;
    Ok(p.left_inverse(y))
}

/// `(x_1(a), ..., x_N(a))` with `x_1 = 1/2` and `x_n = T_a^{-1}(x_{n-1})`.
pub fn deterministic_xseq(p: &MapParams, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Domain("sequence length must be positive".into()));
    }
    let mut out = Vec::with_capacity(n);
    let mut x = 0.5;
    out.push(x);
    for _ in 1..n {
        x = p.left_inverse(x);
        out.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mp(a: f64) -> MapParams {
        MapParams::new(a).unwrap()
    }

    #[test]
    fn forward_examples() {
        assert_eq!(lsv_forward(&mp(0.5), 0.5).unwrap(), 1.0);
        for a in [0.3, 0.5, 1.0, 2.0, 7.5] {
            assert_eq!(lsv_forward(&mp(a), 0.75).unwrap(), 0.5);
        }
        let v = lsv_forward(&mp(0.5), 0.25).unwrap();
        assert!((v - 0.426_776_695_296_636_9).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_out_of_domain() {
        assert!(lsv_forward(&mp(0.5), -0.1).is_err());
        assert!(lsv_forward(&mp(0.5), 1.5).is_err());
        assert!(lsv_forward(&mp(0.5), f64::NAN).is_err());
        assert!(lsv_left_inverse(&mp(0.5), 1.01).is_err());
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        assert!(MapParams::new(0.0).is_err());
        assert!(MapParams::new(-1.0).is_err());
        assert!(MapParams::new(f64::INFINITY).is_err());
    }

    #[test]
    fn inverse_examples() {
        for a in [0.2, 0.5, 1.0, 3.0] {
            assert_eq!(lsv_left_inverse(&mp(a), 1.0).unwrap(), 0.5);
            assert_eq!(lsv_left_inverse(&mp(a), 0.0).unwrap(), 0.0);
        }
        let golden = (5f64.sqrt() - 1.0) / 4.0;
        assert!((lsv_left_inverse(&mp(1.0), 0.5).unwrap() - golden).abs() < 1e-15);
    }

    #[test]
    fn inverse_matches_bisection() {
        for a in [0.3, 0.5, 0.75, 1.0, 2.0, 3.0] {
            let p = mp(a);
            for i in 1..200 {
                let y = i as f64 / 200.0;
                let (mut lo, mut hi) = (0.0f64, 0.5f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid * (1.0 + (2.0 * mid).powf(a)) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                assert!((p.left_inverse(y) - hi).abs() < 1e-14, "a={a} y={y}");
            }
        }
    }

    #[test]
    fn xseq_examples() {
        assert_eq!(deterministic_xseq(&mp(1.0), 1).unwrap(), vec![0.5]);
        let s = deterministic_xseq(&mp(1.0), 3).unwrap();
        assert!((s[1] - 0.309_016_994_374_947_4).abs() < 1e-15);
        // Closed-form root of 2x^2 + x = x_2.
        let x3 = (-1.0 + (1.0 + 8.0 * s[1]).sqrt()) / 4.0;
        assert!((s[2] - x3).abs() < 1e-15);
        assert!((s[2] - 0.215_841_708_295_289_6).abs() < 1e-14);
        assert!(deterministic_xseq(&mp(1.0), 0).is_err());
    }

    #[test]
    fn xseq_scaling_limit() {
        for a in [0.5, 0.75] {
            let p = mp(a);
            let limit = p.c_limit();
            let s = deterministic_xseq(&p, 200_000).unwrap();
            let dev = |n: usize| ((n as f64).powf(1.0 / a) * s[n - 1] - limit).abs();
            let grid = [100usize, 1_000, 10_000, 100_000, 200_000];
            for w in grid.windows(2) {
                assert!(dev(w[1]) < dev(w[0]), "a={a}");
            }
            assert!(dev(200_000) < 0.01 * limit, "a={a}: {}", dev(200_000));
        }
        // x_N N^2 -> c(1/2) = 2.
        let s = deterministic_xseq(&mp(0.5), 100_000).unwrap();
        let v = s[99_999] * 1e10;
        assert!((v - 2.0).abs() < 0.01, "{v}");
    }

    #[test]
    fn xseq_strictly_decreasing() {
        let s = deterministic_xseq(&mp(0.75), 5_000).unwrap();
        assert!(s.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn taylor_sandwich() {
        for a in [0.05, 0.3, 0.5, 0.9, 1.0, 2.0, 5.0] {
            for i in 0..=1000 {
                let x = i as f64 / 1000.0;
                let v = (1.0 + x).powf(-a);
                let lower = 1.0 - a * x;
                let upper = 1.0 - a * x + a * (1.0 + a) * x * x / 2.0;
                assert!(lower <= v + 1e-15 && v <= upper + 1e-15, "a={a} x={x}");
                if i > 0 {
                    assert!(lower < v && v < upper, "strict a={a} x={x}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(ai in 0usize..5, y in 0.0f64..=1.0) {
            let a = [0.3, 0.5, 0.9, 1.0, 2.0][ai];
            let p = mp(a);
            let x = lsv_left_inverse(&p, y).unwrap();
            prop_assert!((0.0..=0.5).contains(&x));
            prop_assert!((lsv_forward(&p, x).unwrap() - y).abs() <= 1e-12);
        }

        #[test]
        fn monotone_branches(a in 0.05f64..4.0, x in 0.0f64..0.5, dx in 1e-9f64..0.01) {
            let p = mp(a);
            let x2 = (x + dx).min(0.5);
            if x2 > x {
                prop_assert!(p.forward(x2) > p.forward(x));
                prop_assert!(p.left_inverse(p.forward(x2)) > p.left_inverse(p.forward(x)));
            }
            let r = 0.5 + x;
            let r2 = (r + dx).min(1.0);
            if r2 > r && r > 0.5 {
                prop_assert!(p.forward(r2) > p.forward(r));
            }
        }
    }
}
