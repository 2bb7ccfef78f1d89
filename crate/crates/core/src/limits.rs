//! Birkhoff sums `S_n f` from stationary starts and the four limit regimes:
//! CLT for `alpha < 1/2`, CLT for centered-at-zero observables, the
//! `sqrt(c^2 A n ln n)` normalization at `alpha = 1/2`, and the stable law
//! of index `1/alpha` for `1/2 < alpha < 1`.

use crate::density::{draw_x, DensityEstimate};
use crate::driver::{cylinder_enumerate, draw_symbol, purpose, replica_rng, ModelParams, SymbolStream};
use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::parallel::map_replicas;
use crate::stats::{ks_statistic, loglog_fit, mean, normal_cdf, variance, SampleBatch};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimitKind {
    /// `alpha < 1/2`: `S_n f / sqrt(n)` is asymptotically normal.
    Clt,
    /// `1/2 <= alpha < 1`, `c = 0` and a Hölder envelope at 0: normal.
    CltCentered,
    /// `alpha = 1/2`, `c != 0`: `S_n f / sqrt(c^2 A n ln n)` tends to `N(0, 1)`.
    LogNormalHalf,
    /// `1/2 < alpha < 1`, `c != 0`: `S_n f / n^alpha` tends to a stable law.
    Stable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCase {
    pub kind: LimitKind,
    pub alpha: f64,
    pub c: f64,
    /// The constant `A`.
    pub a_const: f64,
    /// Hölder exponent of `x -> f(x, w) - f(0, w)` at 0.
    pub gamma: f64,
}

impl LimitCase {
    /// The normalizer `B_n`.
    pub fn normalizer(&self, n: usize) -> f64 {
        let n = n as f64;
        match self.kind {
            LimitKind::Clt | LimitKind::CltCentered => n.sqrt(),
            LimitKind::LogNormalHalf => (self.c * self.c * self.a_const * n * n.ln()).sqrt(),
            LimitKind::Stable => n.powf(self.alpha),
        }
    }
}

/// `sup |f(x, w) - f(0, w)| / x^gamma` over a logarithmic `x` grid and every
/// symbol cylinder the observable reads.
pub fn holder_envelope(f: &Observable, mp: &ModelParams, gamma: f64) -> f64 {
    let cyl = cylinder_enumerate(mp, f.symbol_horizon()).expect("observable horizon is bounded");
    let mut best: f64 = 0.0;
    for (s, _) in &cyl {
        let f0 = f.eval(0.0, s);
        for k in 0..=480 {
            let x = 10f64.powf(-12.0 + k as f64 / 40.0);
            best = best.max((f.eval(x, s) - f0).abs() / x.powf(gamma));
        }
    }
    best
}

/// The regime for `(alpha, c)`, with `gamma` taken from the observable.
pub fn select_limit_case(mp: &ModelParams, f: &Observable, a_const: f64) -> Result<LimitCase> {
    let (alpha, beta, c) = (mp.alpha(), mp.beta(), f.c_value());
    let gamma = f.holder_exponent();
    let kind = if alpha < 0.5 {
        LimitKind::Clt
    } else if alpha >= 1.0 {
        return Err(Error::Domain(format!("no finite-measure limit law for alpha = {alpha} >= 1")));
    } else if c == 0.0 {
        let bound = beta / alpha * (alpha - 0.5);
        if gamma <= bound {
            return Err(Error::Hypothesis(format!(
                "c = 0 needs a Hölder exponent gamma > {bound}, observable has {gamma}"
            )));
        }
        LimitKind::CltCentered
    } else if alpha == 0.5 {
        LimitKind::LogNormalHalf
    } else {
        LimitKind::Stable
    };
    Ok(LimitCase {
        kind,
        alpha,
        c,
        a_const,
        gamma,
    })
}

/// `f - nu(f)`, with the mean from density quadrature and exact symbol
/// averaging. The shift moves `c` by the same constant.
pub fn center_observable(f: &Observable, d: &DensityEstimate, mp: &ModelParams) -> Observable {
    f.shifted(d.nu_mean(f, mp))
}

/// Samples of `S_n f` for each `n` in `ns`, all read off the same
/// `nu`-distributed paths: batch `k` holds `S_{ns[k]} f` for replicas `0..m`.
pub fn birkhoff_samples_multi(
    f: &Observable,
    mp: &ModelParams,
    d: &DensityEstimate,
    ns: &[usize],
    m: usize,
    seed: u64,
) -> Result<Vec<SampleBatch>> {
    if ns.is_empty() || m == 0 {
        return Err(Error::InvalidParams("need a nonempty n list and replicas".into()));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams("n list must be strictly increasing".into()));
    }
    let n_max = *ns.last().unwrap();
    let h = f.symbol_horizon();
    let p1 = mp.p1();
    let rows: Vec<Vec<f64>> = map_replicas(m, |i| {
        let mut x = draw_x(d, &mut replica_rng(seed, purpose::SPACE, i));
        let mut out = Vec::with_capacity(ns.len());
        let mut acc = 0.0;
        let mut next = 0;
        if h == 0 {
            let mut rng = replica_rng(seed, purpose::SYMBOLS, i);
            for t in 0..n_max {
                acc += f.eval(x, &[]);
                let s = draw_symbol(&mut rng, p1);
                x = mp.map(s).forward(x).clamp(0.0, 1.0);
                if t + 1 == ns[next] {
                    out.push(acc);
                    next += 1;
                }
            }
        } else {
            let mut stream = SymbolStream::for_replica(mp, seed, i);
            for t in 0..n_max {
                acc += f.eval(x, stream.window(h));
                let s = stream.peek(0);
                x = mp.map(s).forward(x).clamp(0.0, 1.0);
                stream.shift();
                if t + 1 == ns[next] {
                    out.push(acc);
                    next += 1;
                }
            }
        }
        out
    });
    Ok(ns
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            SampleBatch::new(format!("S_{n} {}", f.name()), seed, rows.iter().map(|r| r[k]).collect())
        })
        .collect())
}

/// `M` independent samples of `S_n f` from `nu`-distributed starts.
pub fn birkhoff_samples(
    f: &Observable,
    mp: &ModelParams,
    d: &DensityEstimate,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<SampleBatch> {
    if n == 0 {
        return Ok(SampleBatch::new(format!("S_0 {}", f.name()), seed, vec![0.0; m]));
    }
    Ok(birkhoff_samples_multi(f, mp, d, &[n], m, seed)?.remove(0))
}

/// Characteristic function of the stable limit,
/// `exp{-A |c|^(1/a) G(1-1/a) cos(pi/2a) |t|^(1/a) (1 - i sgn(ct) tan(pi/2a))}`.
pub fn stable_cf(t: f64, alpha: f64, c: f64, a: f64) -> Result<Complex64> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::Domain(format!("stable index needs 1/2 < alpha < 1, got {alpha}")));
    }
    if c == 0.0 || !c.is_finite() {
        return Err(Error::Domain("stable law needs c != 0".into()));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!("A must be positive, got {a}")));
    }
    if !t.is_finite() {
        return Err(Error::Domain("t must be finite".into()));
    }
    if t == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let r = 1.0 / alpha;
    let theta = PI / (2.0 * alpha);
    let scale = a * c.abs().powf(r) * statrs::function::gamma::gamma(1.0 - r) * theta.cos() * t.abs().powf(r);
    let sgn = (c * t).signum();
    Ok((-scale * Complex64::new(1.0, -sgn * theta.tan())).exp())
}

/// `(1/M) sum_j exp(i t s_j)` for each `t`.
pub fn empirical_cf(batch: &SampleBatch, t_grid: &[f64]) -> Result<Vec<Complex64>> {
    if batch.is_empty() {
        return Err(Error::InvalidParams("empty batch".into()));
    }
    let m = batch.len() as f64;
    Ok(t_grid
        .iter()
        .map(|&t| {
            let (re, im) = batch
                .values
                .iter()
                .fold((0.0, 0.0), |(re, im), &s| (re + (t * s).cos(), im + (t * s).sin()));
            Complex64::new(re / m, im / m)
        })
        .collect())
}

/// Target law for [`ks_against`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Normal { mean: f64, sd: f64 },
    /// Normal with mean and standard deviation fitted from the batch.
    FittedNormal,
}

pub fn ks_against(batch: &SampleBatch, target: Target) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidParams("empty batch".into()));
    }
    let (mu, sd) = match target {
        Target::Normal { mean, sd } => (mean, sd),
        Target::FittedNormal => (batch.mean(), batch.variance().sqrt()),
    };
    if sd.is_nan() || sd <= 0.0 {
        return Err(Error::Domain("normal target needs a positive standard deviation".into()));
    }
    Ok(ks_statistic(&batch.values, |x| normal_cdf(x, mu, sd)))
}

/// Log-log slope of `z -> P(|S| > z)` over `points` logarithmic `z` in `[z_lo, z_hi]`.
pub fn tail_index_slope(batch: &SampleBatch, z_lo: f64, z_hi: f64, points: usize) -> Result<f64> {
    if !(z_lo > 0.0 && z_hi > z_lo) || points < 2 {
        return Err(Error::InvalidParams("tail range needs 0 < z_lo < z_hi and two points".into()));
    }
    let mut abs: Vec<f64> = batch.values.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let m = abs.len() as f64;
    let (mut zs, mut ps) = (Vec::new(), Vec::new());
    for k in 0..points {
        let z = z_lo * (z_hi / z_lo).powf(k as f64 / (points - 1) as f64);
        let above = abs.len() - abs.partition_point(|&v| v <= z);
        if above > 0 {
            zs.push(z);
            ps.push(above as f64 / m);
        }
    }
    if zs.len() < 2 {
        return Err(Error::InvalidParams("too few exceedances in the tail range".into()));
    }
    Ok(loglog_fit(&zs, &ps).slope)
}

/// The 41-point grid on `[-5, 5]`.
pub fn default_t_grid() -> Vec<f64> {
    (0..41).map(|k| -5.0 + 0.25 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitVerdict {
    pub case: LimitKind,
    pub alpha: f64,
    pub beta: f64,
    pub p1: f64,
    pub n: usize,
    pub replicas: usize,
    pub normalizer: f64,
    pub c: f64,
    pub a_const: f64,
    /// KS distance, or sup CF distance for the stable case.
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub sample_mean: f64,
    pub sample_sd: f64,
    /// KS under the `sqrt(n)` normalization, for the `alpha = 1/2` case.
    pub ks_sqrt_n: Option<f64>,
}

/// Default pass thresholds per regime.
pub fn default_threshold(kind: LimitKind) -> f64 {
    match kind {
        LimitKind::Clt | LimitKind::CltCentered => 0.02,
        LimitKind::LogNormalHalf | LimitKind::Stable => 0.05,
    }
}

/// Samples, normalizes and compares against the regime's target.
///
/// The case must match `(alpha, c, gamma)`; for the centered case the
/// Hölder envelope must be finite. Violations are rejected before sampling.
#[allow(clippy::too_many_arguments)]
pub fn run_limit_case(
    mp: &ModelParams,
    f: &Observable,
    case: &LimitCase,
    d: &DensityEstimate,
    n: usize,
    m: usize,
    seed: u64,
    threshold: f64,
) -> Result<(LimitVerdict, SampleBatch)> {
    let expected = select_limit_case(mp, f, case.a_const)?;
    if expected.kind != case.kind {
        return Err(Error::Hypothesis(format!(
            "case {:?} does not match alpha = {}, c = {}; expected {:?}",
            case.kind,
            mp.alpha(),
            f.c_value(),
            expected.kind
        )));
    }
    if case.kind == LimitKind::CltCentered {
        let cf = holder_envelope(f, mp, case.gamma);
        if !cf.is_finite() {
            return Err(Error::Hypothesis("Hölder envelope is unbounded".into()));
        }
    }
    if n < 2 || m < 2 {
        return Err(Error::InvalidParams("need n >= 2 and at least two replicas".into()));
    }
    let raw = birkhoff_samples(f, mp, d, n, m, seed)?;
    let b = case.normalizer(n);
    let z = raw.scaled(1.0 / b);
    let mut ks_sqrt_n = None;
    let statistic = match case.kind {
        LimitKind::Clt | LimitKind::CltCentered => ks_against(&z, Target::FittedNormal)?,
        LimitKind::LogNormalHalf => {
            let alt = raw.scaled(1.0 / (n as f64).sqrt());
            ks_sqrt_n = Some(ks_against(&alt, Target::Normal { mean: 0.0, sd: 1.0 })?);
            ks_against(&z, Target::Normal { mean: 0.0, sd: 1.0 })?
        }
        LimitKind::Stable => {
            let grid = default_t_grid();
            let emp = empirical_cf(&z, &grid)?;
            let mut sup: f64 = 0.0;
            for (t, e) in grid.iter().zip(emp) {
                sup = sup.max((e - stable_cf(*t, case.alpha, case.c, case.a_const)?).norm());
            }
            sup
        }
    };
    let verdict = LimitVerdict {
        case: case.kind,
        alpha: mp.alpha(),
        beta: mp.beta(),
        p1: mp.p1(),
        n,
        replicas: m,
        normalizer: b,
        c: case.c,
        a_const: case.a_const,
        statistic,
        threshold,
        pass: statistic < threshold && ks_sqrt_n.is_none_or(|alt| statistic < alt),
        sample_mean: mean(&z.values),
        sample_sd: variance(&z.values).sqrt(),
        ks_sqrt_n,
    };
    Ok((verdict, z))
}
