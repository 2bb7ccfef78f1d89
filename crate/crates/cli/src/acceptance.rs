//! The fifteen acceptance criteria behind `irand accept-all`.
//!
//! Each criterion writes `NN-name/` under the output directory: its data
//! tables, `verdict.json` and `manifest.json`. `summary.json` collects the
//! verdicts. Nothing time dependent is written, so two runs with the same
//! master seed must agree byte for byte (criterion 15 checks exactly that).

use crate::error::{CliError, CliResult};
use crate::experiments::{balanced_observable, correlation_slope, density_on, limit_run, linear_observable};
use crate::output::{Cell, Check, OutputSet, Table, Verdict, TOOL, VERSION};
use irand_core::density::{cone_check, l1_gap, operator_correlation, DensityEstimate, UlamMatrix};
use irand_core::induced::{return_time_agreement, tail_estimate, DEFAULT_CAP};
use irand_core::infinite::{infinite_correlation_pairs, truncated_return_growth};
use irand_core::quenched::{expected_xn_exact, expected_xn_mc, hoeffding_check, quenched_report, sandwich_check, QuenchedReport};
use irand_core::stats::log_grid;
use irand_core::{ModelParams, Observable};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub title: &'static str,
}

impl Criterion {
    /// Directory name, e.g. `04-return-tail`.
    pub fn dir(&self) -> String {
        format!("{:02}-{}", self.id, self.name)
    }
}

pub const CRITERIA: [Criterion; 15] = [
    Criterion { id: 1, name: "quenched-median", title: "median of n^2 x_n within 10% of 8 at n = 1e5" },
    Criterion { id: 2, name: "l1-convergence", title: "E|c_n - 8| decreasing over n = 1e2..1e5" },
    Criterion { id: 3, name: "oracle-equivalence", title: "Monte Carlo E x_n equals cylinder enumeration, n <= 16" },
    Criterion { id: 4, name: "return-tail", title: "P(R > n) = E x_n; n^2 P(R > 1e3) within 15% of 8" },
    Criterion { id: 5, name: "sandwich", title: "x_n(alpha) <= x_n(w) <= x_n(beta)" },
    Criterion { id: 6, name: "hoeffding", title: "concentration below exp(-2 n t^2)" },
    Criterion { id: 7, name: "invariant-density", title: "Ulam fixed point: residual, cone, refinement" },
    Criterion { id: 8, name: "correlation-decay", title: "Cor(phi, psi o S^n) ~ n^(1 - 1/alpha)" },
    Criterion { id: 9, name: "clt", title: "central limit theorem at alpha = 0.4" },
    Criterion { id: 10, name: "stable-law", title: "stable limit at alpha = 0.75" },
    Criterion { id: 11, name: "half-case", title: "sqrt(n ln n) normalization at alpha = 0.5" },
    Criterion { id: 12, name: "infinite-signature", title: "E min(R, cap) growth in the infinite measure regime" },
    Criterion { id: 13, name: "infinite-correlation", title: "n^(1 - 1/alpha) correlation scaling, factorized constant" },
    Criterion { id: 14, name: "dual-return-times", title: "iterated and located return times agree" },
    Criterion { id: 15, name: "determinism", title: "repeat run is byte identical" },
];

/// Looks a criterion up by number (`4`, `04`) or name (`return-tail`, `04-return-tail`).
pub fn parse_criterion(s: &str) -> CliResult<Criterion> {
    let s = s.trim();
    CRITERIA
        .iter()
        .copied()
        .find(|c| s.parse::<u8>().ok() == Some(c.id) || s == c.name || s == c.dir())
        .ok_or_else(|| {
            let names: Vec<String> = CRITERIA.iter().map(Criterion::dir).collect();
            CliError::config(format!("unknown criterion `{s}`; expected one of {}", names.join(", ")))
        })
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the sub-experiment `tag`: independent streams per tag while
/// staying a pure function of the master seed.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    tag.bytes().fold(mix(master), |h, b| mix(h ^ u64::from(b)))
}

/// Results one criterion computes, before they are written.
struct Outcome {
    checks: Vec<Check>,
    params: Value,
    seed: u64,
    files: OutputSet,
}

impl Outcome {
    fn new(seed: u64, params: Value) -> Self {
        Outcome {
            checks: Vec::new(),
            params,
            seed,
            files: OutputSet::new(),
        }
    }
}

type Density = Arc<(UlamMatrix, DensityEstimate)>;

/// Work shared between criteria of one pass.
#[derive(Default)]
struct Ctx {
    quenched: OnceLock<CliResult<QuenchedReport>>,
    densities: Mutex<HashMap<(u64, u64, u64, usize), Density>>,
}

const X_MIN: f64 = 1e-10;
const DENSITY_TOL: f64 = 1e-9;
const CELLS: usize = 1 << 14;

impl Ctx {
    fn quenched(&self, master: u64) -> CliResult<&QuenchedReport> {
        self.quenched
            .get_or_init(|| {
                let mp = params(0.5, 0.75, 0.5)?;
                Ok(quenched_report(&mp, &QUENCHED_GRID, 200, derive_seed(master, "quenched"))?)
            })
            .as_ref()
            .map_err(|e| CliError::config(e.to_string()))
    }

    fn density(&self, mp: &ModelParams, cells: usize) -> CliResult<Density> {
        let key = (mp.alpha().to_bits(), mp.beta().to_bits(), mp.p1().to_bits(), cells);
        if let Some(d) = self.densities.lock().unwrap().get(&key) {
            return Ok(Arc::clone(d));
        }
        let d = Arc::new(density_on(mp, cells, X_MIN, DENSITY_TOL)?);
        self.densities.lock().unwrap().insert(key, Arc::clone(&d));
        Ok(d)
    }
}

const QUENCHED_GRID: [usize; 4] = [100, 1_000, 10_000, 100_000];

fn params(a: f64, b: f64, p: f64) -> CliResult<ModelParams> {
    Ok(ModelParams::new(a, b, p)?)
}

fn mp_json(mp: &ModelParams) -> Value {
    json!({"alpha": mp.alpha(), "beta": mp.beta(), "p1": mp.p1()})
}

fn quenched_table(r: &QuenchedReport) -> Table {
    let mut t = Table::new(&["n", "mean_cn", "stderr", "median_cn", "l1_error", "l1_stderr", "limit"]);
    for row in &r.rows {
        t.push(vec![
            row.n.into(),
            row.mean_cn.into(),
            row.stderr.into(),
            row.median_cn.into(),
            row.l1_error.into(),
            row.l1_stderr.into(),
            r.limit_value.into(),
        ]);
    }
    t
}

fn c01(master: u64, ctx: &Ctx) -> CliResult<Outcome> {
    let seed = derive_seed(master, "quenched");
    let mut o = Outcome::new(seed, json!({"model": [0.5, 0.75, 0.5], "n_grid": QUENCHED_GRID, "replicas": 200}));
    let r = ctx.quenched(master)?;
    o.files.add_table("quenched.csv", &quenched_table(r))?;
    let dev = |n: usize| {
        let row = r.rows.iter().find(|x| x.n == n).unwrap();
        (row.median_cn - r.limit_value).abs()
    };
    o.checks.push(Check::below("median_rel_deviation_n100000", dev(100_000) / r.limit_value, 0.1));
    o.checks.push(Check::below("median_deviation_n100000_minus_n1000", dev(100_000) - dev(1_000), 0.0));
    Ok(o)
}

fn c02(master: u64, ctx: &Ctx) -> CliResult<Outcome> {
    let seed = derive_seed(master, "quenched");
    let mut o = Outcome::new(seed, json!({"model": [0.5, 0.75, 0.5], "n_grid": QUENCHED_GRID, "replicas": 200}));
    let r = ctx.quenched(master)?;
    let mut t = Table::new(&["n", "l1_error", "l1_stderr"]);
    for row in &r.rows {
        t.push(vec![row.n.into(), row.l1_error.into(), row.l1_stderr.into()]);
    }
    o.files.add_table("l1.csv", &t)?;
    for w in r.rows.windows(2) {
        o.checks.push(Check::below(
            &format!("l1_step_n{}_to_n{}", w[0].n, w[1].n),
            w[1].l1_error - w[0].l1_error,
            0.0,
        ));
    }
    Ok(o)
}

fn c03(master: u64, _: &Ctx) -> CliResult<Outcome> {
    const M: usize = 100_000;
    let triples = [(0.5, 0.75, 0.5), (0.3, 0.8, 0.25)];
    let seed = derive_seed(master, "oracle");
    let mut o = Outcome::new(seed, json!({"models": triples, "n_max": 16, "replicas": M, "sigma": 3.0}));
    let mut t = Table::new(&["alpha", "beta", "p1", "n", "mc_mean", "mc_stderr", "exact", "z"]);
    for (k, &(a, b, p)) in triples.iter().enumerate() {
        let mp = params(a, b, p)?;
        let mut z_max: f64 = 0.0;
        for n in 1..=16 {
            let e = expected_xn_mc(&mp, n, M, derive_seed(seed, &format!("{k}/{n}")))?;
            let exact = expected_xn_exact(&mp, n)?;
            let diff = (e.mean - exact).abs();
            // n = 1 is deterministic: x_1 = 1/2 for every itinerary.
            let z = if diff == 0.0 { 0.0 } else { diff / e.stderr };
            z_max = z_max.max(z);
            t.push(vec![a.into(), b.into(), p.into(), n.into(), e.mean.into(), e.stderr.into(), exact.into(), z.into()]);
        }
        o.checks.push(Check {
            name: format!("max_z_alpha{a}_beta{b}_p{p}"),
            value: z_max,
            condition: "<= 3".into(),
            pass: z_max <= 3.0,
        });
    }
    o.files.add_table("oracle.csv", &t)?;
    Ok(o)
}

fn c04(master: u64, _: &Ctx) -> CliResult<Outcome> {
    const M: u64 = 40_000_000;
    let grid = [1usize, 2, 4, 8, 16, 1000];
    let seed = derive_seed(master, "tail");
    let mp = params(0.5, 0.75, 0.5)?;
    let mut o = Outcome::new(seed, json!({"model": mp_json(&mp), "n_grid": grid, "replicas": M}));
    let r = tail_estimate(&mp, &grid, M, seed)?;
    let mut t = Table::new(&["n", "empirical_tail", "stderr", "expected_xn", "z", "scaled_tail"]);
    for row in &r.rows {
        let z = (row.empirical - row.predicted).abs() / row.stderr;
        let scaled = (row.n as f64).powi(2) * row.empirical;
        let expected: Cell = if row.predicted_exact { row.predicted.into() } else { f64::NAN.into() };
        let zc: Cell = if row.predicted_exact { z.into() } else { f64::NAN.into() };
        t.push(vec![row.n.into(), row.empirical.into(), row.stderr.into(), expected, zc, scaled.into()]);
        if row.predicted_exact {
            o.checks.push(Check {
                name: format!("tail_vs_exact_n{}", row.n),
                value: z,
                condition: "<= 3 stderr".into(),
                pass: z <= 3.0,
            });
        } else {
            o.checks.push(Check::below(&format!("scaled_tail_rel_deviation_n{}", row.n), (scaled / 8.0 - 1.0).abs(), 0.15));
        }
    }
    o.files.add_table("tail.csv", &t)?;
    Ok(o)
}

/// Every `n <= 200` and a log grid on to `1e4`.
fn sandwich_grid() -> Vec<usize> {
    let mut g: Vec<usize> = (1..=200).collect();
    g.extend(log_grid(200, 10_000, 120).into_iter().map(|n| n as usize));
    g.sort_unstable();
    g.dedup();
    g
}

fn c05(master: u64, _: &Ctx) -> CliResult<Outcome> {
    const M: usize = 1000;
    let seed = derive_seed(master, "sandwich");
    let grid = sandwich_grid();
    let mut o = Outcome::new(seed, json!({"model": [0.5, 0.75, 0.5], "replicas": M, "n_grid": grid}));
    let mp = params(0.5, 0.75, 0.5)?;
    let (checks, violations, nonstrict) = sandwich_check(&mp, &grid, M, seed)?;
    let mut t = Table::new(&["comparisons", "violations", "nonstrict"]);
    t.push(vec![checks.into(), violations.into(), nonstrict.into()]);
    o.files.add_table("sandwich.csv", &t)?;
    o.checks.push(Check::equals("violations", violations as f64, 0.0));
    Ok(o)
}

fn c06(master: u64, _: &Ctx) -> CliResult<Outcome> {
    const M: usize = 10_000;
    let ts = [0.05, 0.1, 0.2];
    let seed = derive_seed(master, "hoeffding");
    let mp = params(0.5, 0.75, 0.5)?;
    let mut o = Outcome::new(seed, json!({"model": mp_json(&mp), "n": [100, 1000], "t": ts, "replicas": M}));
    let mut t = Table::new(&["n", "t", "empirical", "bound", "stderr", "violation"]);
    let mut violations = 0;
    for n in [100usize, 1000] {
        let r = hoeffding_check(&mp, n, &ts, M, derive_seed(seed, &n.to_string()))?;
        for row in &r.rows {
            t.push(vec![n.into(), row.t.into(), row.empirical.into(), row.bound.into(), row.stderr.into(), row.violation.into()]);
        }
        violations += r.violations();
    }
    o.files.add_table("hoeffding.csv", &t)?;
    o.checks.push(Check::equals("exceedances_beyond_3_stderr", violations as f64, 0.0));
    Ok(o)
}

fn c07(_: u64, ctx: &Ctx) -> CliResult<Outcome> {
    let mp = params(0.5, 0.75, 0.5)?;
    let levels = [CELLS / 4, CELLS / 2, CELLS];
    let mut o = Outcome::new(
        0,
        json!({"model": mp_json(&mp), "cells": levels, "x_min": X_MIN, "tol": DENSITY_TOL}),
    );
    let ds: Vec<Density> = levels.iter().map(|&k| ctx.density(&mp, k)).collect::<CliResult<_>>()?;
    let mut t = Table::new(&["cells", "residual", "iterations", "f_half", "l1_gap_to_coarser"]);
    let mut gaps = Vec::new();
    for (i, (k, d)) in levels.iter().zip(&ds).enumerate() {
        let gap = (i > 0).then(|| l1_gap(&ds[i - 1].1, &d.1));
        gaps.extend(gap);
        t.push(vec![(*k).into(), d.1.residual.into(), d.1.iterations.into(), d.1.value_right_of_half().into(), gap.into()]);
    }
    o.files.add_table("refinement.csv", &t)?;
    let fine = &ds[2].1;
    let mut dt = Table::new(&["cell_left", "cell_right", "value"]);
    for i in 0..fine.grid.len() {
        let (a, b) = fine.grid.cell(i);
        dt.push(vec![a.into(), b.into(), fine.cell_values[i].into()]);
    }
    o.files.add_table("density.csv", &dt)?;
    let cone = cone_check(fine, mp.beta())?;
    o.files.add_json("cone.json", &cone)?;
    o.checks.push(Check::below("residual_16384_cells", fine.residual, 1e-8));
    o.checks.push(Check::within("cone_constant", cone.a, 4.0 / (1.0 - mp.beta()), 0.0));
    o.checks.push(Check::flag("cone", cone.pass, "monotone, nonnegative, int_0^x f <= a x^(1-beta) int f"));
    o.checks.push(Check::below("l1_gap_8192_to_16384_minus_4096_to_8192", gaps[1] - gaps[0], 0.0));
    o.checks.push(Check::within("total_mass", fine.integrate(|_| 1.0), 1.0, 1e-12));
    Ok(o)
}

fn c08(_: u64, ctx: &Ctx) -> CliResult<Outcome> {
    let mp = params(0.5, 0.75, 0.5)?;
    let grid: Vec<usize> = log_grid(100, 10_000, 21).into_iter().map(|n| n as usize).collect();
    let mut o = Outcome::new(
        0,
        json!({"model": mp_json(&mp), "phi": "bump[0.6,0.9]", "psi": "bump[0.65,0.85]", "n_grid": grid,
               "method": "operator", "cells": CELLS}),
    );
    let d = ctx.density(&mp, CELLS)?;
    let (phi, psi) = (Observable::bump(0.6, 0.9, 1.0), Observable::bump(0.65, 0.85, 1.0));
    let rows = operator_correlation(&phi, &psi, &grid, &mp, &d.0, &d.1)?;
    let mut t = Table::new(&["n", "corr", "stderr", "predicted"]);
    for r in &rows {
        t.push(vec![r.n.into(), r.corr.into(), r.stderr.into(), r.predicted.into()]);
    }
    o.files.add_table("correlation.csv", &t)?;
    o.checks.push(Check::above("nu_mean_phi", d.1.nu_mean(&phi, &mp), 0.0));
    o.checks.push(Check::above("nu_mean_psi", d.1.nu_mean(&psi, &mp), 0.0));
    o.checks.push(Check::within("loglog_slope", correlation_slope(&rows), 1.0 - 1.0 / mp.alpha(), 0.15));
    Ok(o)
}

/// Shared body of criteria 9 to 11.
fn limit_criterion(master: u64, ctx: &Ctx, tag: &str, mp: ModelParams, balanced: bool, tols: &[(&str, f64)]) -> CliResult<Outcome> {
    const N: usize = 10_000;
    const M: usize = 10_000;
    let seed = derive_seed(master, tag);
    let d = ctx.density(&mp, CELLS)?;
    let f = if balanced { balanced_observable(&d.1, &mp) } else { linear_observable(&d.1) };
    let tolerances: BTreeMap<String, f64> = tols.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let o_params = json!({"model": mp_json(&mp), "observable": f.name(), "n": N, "replicas": M,
                          "cells": CELLS, "tolerances": tolerances});
    let mut o = Outcome::new(seed, o_params);
    let run = limit_run(&mp, &d.1, &f, &[N], M, seed, &tolerances)?;
    o.files.add_table("limits.csv", &run.summary)?;
    o.files.add_table("samples.csv", &run.samples)?;
    if let Some(cf) = &run.cf {
        o.files.add_table("cf.csv", cf)?;
    }
    o.checks = run.checks;
    Ok(o)
}

fn c09(master: u64, ctx: &Ctx) -> CliResult<Outcome> {
    let tols = [("statistic", 0.02), ("variance_flatness", 0.1)];
    limit_criterion(master, ctx, "clt", params(0.4, 0.75, 0.5)?, true, &tols)
}

fn c10(master: u64, ctx: &Ctx) -> CliResult<Outcome> {
    let tols = [("statistic", 0.05), ("tail_slope", 0.15)];
    limit_criterion(master, ctx, "stable", params(0.75, 0.9, 0.5)?, false, &tols)
}

fn c11(master: u64, ctx: &Ctx) -> CliResult<Outcome> {
    let tols = [("statistic", 0.05)];
    limit_criterion(master, ctx, "half", params(0.5, 0.75, 0.5)?, false, &tols)
}

fn c12(master: u64, _: &Ctx) -> CliResult<Outcome> {
    let caps = log_grid(100, 1_000_000, 9);
    let runs = [((2.0, 3.0), 1_000_000u64), ((1.0, 2.0), 50_000_000u64)];
    let seed = derive_seed(master, "truncated");
    let mut o = Outcome::new(
        seed,
        json!({"models": [[2.0, 3.0, 0.5], [1.0, 2.0, 0.5]], "caps": caps, "replicas": [runs[0].1, runs[1].1]}),
    );
    let mut t = Table::new(&["alpha", "beta", "cap", "mean", "stderr"]);
    for (k, &((a, b), m)) in runs.iter().enumerate() {
        let mp = params(a, b, 0.5)?;
        let r = truncated_return_growth(&mp, &caps, m, derive_seed(seed, &k.to_string()))?;
        for row in &r.rows {
            t.push(vec![a.into(), b.into(), row.cap.into(), row.mean.into(), row.stderr.into()]);
        }
        if a > 1.0 {
            o.checks.push(Check::within("loglog_slope_alpha2_beta3", r.loglog.slope, 1.0 - 1.0 / a, 0.1));
        } else {
            o.checks.push(Check::above("r_squared_vs_ln_cap_alpha1_beta2", r.vs_log.r_squared, 0.99));
        }
    }
    o.files.add_table("truncated.csv", &t)?;
    Ok(o)
}

/// Midpoint rule on `[lo, hi]`.
fn integral(f: &Observable, lo: f64, hi: f64) -> f64 {
    const K: usize = 100_000;
    let h = (hi - lo) / K as f64;
    (0..K).map(|i| f.eval(lo + (i as f64 + 0.5) * h, &[])).sum::<f64>() * h
}

fn c13(master: u64, _: &Ctx) -> CliResult<Outcome> {
    const M: usize = 300_000;
    let mp = params(2.0, 3.0, 0.5)?;
    let grid: Vec<usize> = log_grid(100, 10_000, 9).into_iter().map(|n| n as usize).collect();
    let f1 = Observable::bump(0.6, 0.9, 1.0);
    // A tent on [0.55, 0.95] has integral 0.2 x height.
    let f2 = Observable::tent(0.55, 0.95, 2.0 * integral(&f1, 0.6, 0.9) / 0.2);
    let g = Observable::bump(0.6, 0.9, 1.0);
    let seed = derive_seed(master, "infinite-correlation");
    let mut o = Outcome::new(
        seed,
        json!({"model": mp_json(&mp), "pairs": [[f1.name(), g.name()], [f2.name(), g.name()]],
               "integral_ratio": integral(&f2, 0.55, 0.95) / integral(&f1, 0.6, 0.9), "n_grid": grid, "replicas": M}),
    );
    let reps = infinite_correlation_pairs(&[(&f1, &g), (&f2, &g)], &mp, &grid, M, seed, (100, 10_000))?;
    let mut t = Table::new(&["pair", "n", "estimate", "stderr", "normalizer", "fitted_slope"]);
    for (j, r) in reps.iter().enumerate() {
        for row in &r.rows {
            t.push(vec![(j + 1).into(), row.n.into(), row.estimate.into(), row.stderr.into(), row.normalizer.into(), r.fit.slope.into()]);
        }
    }
    o.files.add_table("infinite.csv", &t)?;
    let pooled = |k: usize| reps[k].rows.iter().map(|r| r.estimate).sum::<f64>();
    o.checks.push(Check::within("loglog_slope_pair1", reps[0].fit.slope, 1.0 / mp.alpha() - 1.0, 0.1));
    o.checks.push(Check::within("pooled_ratio_pair2_over_pair1", pooled(1) / pooled(0), 2.0, 0.2));
    Ok(o)
}

fn c14(master: u64, _: &Ctx) -> CliResult<Outcome> {
    const M: usize = 10_000;
    let mp = params(0.5, 0.75, 0.5)?;
    let seed = derive_seed(master, "dual-return");
    let mut o = Outcome::new(seed, json!({"model": mp_json(&mp), "inputs": M, "cap": DEFAULT_CAP}));
    let rows = return_time_agreement(&mp, M, seed, DEFAULT_CAP)?;
    let mut t = Table::new(&["replica", "x", "iterate", "locate", "agree"]);
    let opt = |v: Option<u64>| -> Cell { v.map_or(Cell::Text("capped".into()), |r| r.into()) };
    for r in &rows {
        t.push(vec![r.replica.into(), r.x.into(), opt(r.iterate), opt(r.locate), r.agree().into()]);
    }
    o.files.add_table("return_times.csv", &t)?;
    let mismatches = rows.iter().filter(|r| !r.agree()).count();
    o.checks.push(Check::equals("mismatches", mismatches as f64, 0.0));
    Ok(o)
}

type CriterionFn = fn(u64, &Ctx) -> CliResult<Outcome>;

const FNS: [CriterionFn; 14] = [c01, c02, c03, c04, c05, c06, c07, c08, c09, c10, c11, c12, c13, c14];

/// What one criterion produced.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub criterion: Criterion,
    pub pass: bool,
    pub checks: Vec<Check>,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
    pub elapsed: Duration,
    output: OutputSet,
}

#[derive(Serialize)]
struct CriterionManifest<'a> {
    tool: &'a str,
    version: &'a str,
    criterion: String,
    master_seed: u64,
    seed: u64,
    parameters: &'a Value,
    files: Vec<String>,
}

fn finish(c: Criterion, master: u64, res: CliResult<Outcome>, started: Instant) -> CliResult<CriterionResult> {
    let mut o = match res {
        Ok(o) if !o.checks.is_empty() => o,
        Ok(mut o) => {
            o.checks.push(Check::flag("checks_present", false, "criterion produced checks"));
            o
        }
        // Errors are verdicts, not aborts.
        Err(e) => {
            let mut o = Outcome::new(0, Value::Null);
            o.checks.push(Check::flag("error", false, &e.to_string()));
            o
        }
    };
    let verdict = Verdict::new(&c.dir(), o.checks.clone());
    o.files.add_json("verdict.json", &verdict)?;
    let mut names = o.files.names();
    names.push("manifest.json".into());
    let manifest = CriterionManifest {
        tool: TOOL,
        version: VERSION,
        criterion: c.dir(),
        master_seed: master,
        seed: o.seed,
        parameters: &o.params,
        files: names,
    };
    o.files.add_json("manifest.json", &manifest)?;
    let mut output = OutputSet::new();
    for (name, bytes) in o.files.files() {
        output.add(format!("{}/{name}", c.dir()), bytes.clone());
    }
    Ok(CriterionResult {
        criterion: c,
        pass: verdict.pass,
        checks: verdict.checks,
        files: output.names(),
        elapsed: started.elapsed(),
        output,
    })
}

fn evaluate(c: Criterion, master: u64, ctx: &Ctx) -> CliResult<CriterionResult> {
    let t0 = Instant::now();
    let f = FNS[c.id as usize - 1];
    finish(c, master, f(master, ctx), t0)
}

/// Criteria 1 to 14, in memory.
fn first_fourteen(master: u64) -> CliResult<Vec<CriterionResult>> {
    let ctx = Ctx::default();
    CRITERIA[..14].iter().map(|&c| evaluate(c, master, &ctx)).collect()
}

/// Compares `reference` (path, bytes) to a fresh run under a pool with one
/// more worker than the current one.
fn determinism(master: u64, reference: &[(String, Vec<u8>)]) -> CliResult<Outcome> {
    let workers = rayon::current_num_threads() + 1;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::config(format!("worker pool: {e}")))?;
    let rerun = pool.install(|| first_fourteen(master))?;
    let fresh: BTreeMap<&str, &[u8]> = rerun
        .iter()
        .flat_map(|r| r.output.files().iter().map(|(n, b)| (n.as_str(), b.as_slice())))
        .collect();
    let mut o = Outcome::new(master, json!({"criteria": "1-14", "repeat_workers": "current + 1"}));
    let mut t = Table::new(&["file", "identical"]);
    let mut mismatches = 0usize;
    let mut seen = 0usize;
    for (name, bytes) in reference {
        let same = fresh.get(name.as_str()) == Some(&bytes.as_slice());
        seen += 1;
        mismatches += usize::from(!same);
        t.push(vec![name.as_str().into(), same.into()]);
    }
    for name in fresh.keys().filter(|n| !reference.iter().any(|(r, _)| r == *n)) {
        mismatches += 1;
        t.push(vec![(*name).into(), false.into()]);
    }
    o.files.add_table("files.csv", &t)?;
    o.checks.push(Check::above("files_compared", seen as f64, 0.0));
    o.checks.push(Check::equals("mismatched_files", mismatches as f64, 0.0));
    Ok(o)
}

/// Reads back what pass one wrote, so the comparison covers the files as stored.
fn read_back(out: &Path, results: &[CriterionResult]) -> CliResult<Vec<(String, Vec<u8>)>> {
    results
        .iter()
        .flat_map(|r| r.files.iter())
        .map(|n| Ok((n.clone(), fs::read(out.join(n))?)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    pub out: PathBuf,
    pub only: Option<Criterion>,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub seed: u64,
    pub results: Vec<CriterionResult>,
}

impl SuiteResult {
    pub fn pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }
}

#[derive(Serialize)]
struct SummaryEntry<'a> {
    id: u8,
    name: &'a str,
    title: &'a str,
    pass: bool,
    checks: &'a [Check],
    files: &'a [String],
}

#[derive(Serialize)]
struct Summary<'a> {
    tool: &'a str,
    version: &'a str,
    seed: u64,
    pass: bool,
    passed: usize,
    total: usize,
    criteria: Vec<SummaryEntry<'a>>,
}

fn commit(out: &Path, r: &CriterionResult) -> CliResult<()> {
    let dir = out.join(r.criterion.dir());
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    r.output.commit(out)?;
    Ok(())
}

/// Runs the suite (or one criterion), writing each criterion's directory as
/// soon as it is done and `summary.json` at the end. `progress` sees every
/// result in order.
pub fn run_suite(opts: &SuiteOptions, mut progress: impl FnMut(&CriterionResult)) -> CliResult<SuiteResult> {
    fs::create_dir_all(&opts.out)?;
    let ctx = Ctx::default();
    let master = opts.seed;
    let selected: Vec<Criterion> = match opts.only {
        Some(c) => vec![c],
        None => CRITERIA.to_vec(),
    };
    let mut results: Vec<CriterionResult> = Vec::new();
    for c in selected {
        let r = if c.id == 15 {
            let t0 = Instant::now();
            let reference = if results.is_empty() {
                // Run alone: the reference is a first in-memory run.
                first_fourteen(master)?
                    .iter()
                    .flat_map(|r| r.output.files().iter().cloned())
                    .collect()
            } else {
                read_back(&opts.out, &results)?
            };
            finish(c, master, determinism(master, &reference), t0)?
        } else {
            evaluate(c, master, &ctx)?
        };
        commit(&opts.out, &r)?;
        progress(&r);
        results.push(r);
    }
    let summary = Summary {
        tool: TOOL,
        version: VERSION,
        seed: master,
        pass: results.iter().all(|r| r.pass),
        passed: results.iter().filter(|r| r.pass).count(),
        total: results.len(),
        criteria: results
            .iter()
            .map(|r| SummaryEntry {
                id: r.criterion.id,
                name: r.criterion.name,
                title: r.criterion.title,
                pass: r.pass,
                checks: &r.checks,
                files: &r.files,
            })
            .collect(),
    };
    let mut s = OutputSet::new();
    s.add_json("summary.json", &summary)?;
    s.commit(&opts.out)?;
    Ok(SuiteResult { seed: master, results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criterion_lookup() {
        assert_eq!(parse_criterion("4").unwrap().name, "return-tail");
        assert_eq!(parse_criterion("04").unwrap().id, 4);
        assert_eq!(parse_criterion("half-case").unwrap().id, 11);
        assert_eq!(parse_criterion("15-determinism").unwrap().id, 15);
        let e = parse_criterion("16").unwrap_err();
        assert_eq!(e.exit_code(), crate::error::exit::CONFIG);
        assert!(parse_criterion("tail").is_err());
    }

    #[test]
    fn ids_are_sequential() {
        for (i, c) in CRITERIA.iter().enumerate() {
            assert_eq!(c.id as usize, i + 1);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, "tail");
        assert_eq!(a, derive_seed(1, "tail"));
        assert_ne!(a, derive_seed(2, "tail"));
        assert_ne!(a, derive_seed(1, "tails"));
    }

    #[test]
    fn single_cheap_criterion_writes_its_directory() {
        let dir = tempfile::tempdir().unwrap();
        let opts = SuiteOptions {
            seed: 3,
            out: dir.path().to_path_buf(),
            only: Some(parse_criterion("hoeffding").unwrap()),
        };
        let r = run_suite(&opts, |_| {}).unwrap();
        assert_eq!(r.results.len(), 1);
        assert!(r.pass());
        for f in ["06-hoeffding/hoeffding.csv", "06-hoeffding/verdict.json", "06-hoeffding/manifest.json", "summary.json"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let first = fs::read(dir.path().join("06-hoeffding/hoeffding.csv")).unwrap();
        run_suite(&opts, |_| {}).unwrap();
        assert_eq!(first, fs::read(dir.path().join("06-hoeffding/hoeffding.csv")).unwrap());
    }
}
