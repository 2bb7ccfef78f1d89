//! The six experiments behind `irand <experiment>`.

use crate::config::{CorrMethod, ExperimentConfig, ExperimentKind, ObservableSpec};
use crate::error::{CliError, CliResult};
use crate::output::{gnuplot_script, Axes, Cell, Check, Manifest, OutputSet, Table, Verdict, TOOL, VERSION};
use irand_core::density::{
    cone_check, correlation_estimate, corr_constants, l1_gap, operator_correlation, solve_invariant_density,
    ulam_matrix, CorrelationRow, DensityEstimate, UlamGrid, UlamMatrix,
};
use irand_core::infinite::{infinite_correlation, truncated_return_growth};
use irand_core::induced::tail_estimate;
use irand_core::limits::{
    birkhoff_samples_multi, center_observable, default_t_grid, empirical_cf, run_limit_case, select_limit_case,
    stable_cf, tail_index_slope, LimitCase, LimitKind,
};
use irand_core::quenched::quenched_report;
use irand_core::stats::{loglog_fit, variance};
use irand_core::{ModelParams, Observable, SampleBatch};
use std::path::PathBuf;

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub verdict: Option<Verdict>,
}

impl RunOutcome {
    pub fn pass(&self) -> bool {
        self.verdict.as_ref().is_none_or(|v| v.pass)
    }
}

/// Runs a resolved config and writes its outputs, or nothing on error.
pub fn run(cfg: &ExperimentConfig) -> CliResult<RunOutcome> {
    let (out, verdict) = build(cfg)?;
    let dir = cfg.output_dir();
    out.commit(&dir)?;
    Ok(RunOutcome {
        dir,
        files: out.names(),
        verdict,
    })
}

/// Computes every output file of `cfg` in memory.
pub fn build(cfg: &ExperimentConfig) -> CliResult<(OutputSet, Option<Verdict>)> {
    let mut out = OutputSet::new();
    let verdict = match cfg.experiment {
        ExperimentKind::Asymptotics => asymptotics(cfg, &mut out)?,
        ExperimentKind::Tail => tail(cfg, &mut out)?,
        ExperimentKind::Density => density(cfg, &mut out)?,
        ExperimentKind::Correlation => correlation(cfg, &mut out)?,
        ExperimentKind::Limits => limits(cfg, &mut out)?,
        ExperimentKind::Infinite => infinite(cfg, &mut out)?,
        ExperimentKind::AcceptAll => {
            return Err(CliError::config("accept-all is run through the acceptance suite"));
        }
    };
    let verdict = verdict.map(|checks| Verdict::new(cfg.experiment.name(), checks));
    if let Some(v) = &verdict {
        out.add_json("verdict.json", v)?;
    }
    let mut files = out.names();
    files.push("manifest.json".into());
    let manifest = Manifest {
        tool: TOOL,
        version: VERSION,
        experiment: cfg.experiment.name(),
        seed: cfg.seed,
        config: cfg,
        files,
    };
    out.add_json("manifest.json", &manifest)?;
    Ok((out, verdict))
}

pub fn model(cfg: &ExperimentConfig) -> CliResult<ModelParams> {
    ModelParams::new(cfg.alpha, cfg.beta, cfg.p1).map_err(|e| CliError::config(e.to_string()))
}

fn grid_usize(cfg: &ExperimentConfig) -> Vec<usize> {
    cfg.n_grid.iter().map(|&n| n as usize).collect()
}

/// Ulam matrix and invariant density on a `cells`-cell grid.
pub fn density_on(mp: &ModelParams, cells: usize, x_min: f64, tol: f64) -> CliResult<(UlamMatrix, DensityEstimate)> {
    let grid = UlamGrid::new(cells, x_min)?;
    let m = ulam_matrix(&grid, mp);
    let d = solve_invariant_density(&m, tol, 100_000)?;
    Ok((m, d))
}

fn density_of(cfg: &ExperimentConfig, mp: &ModelParams) -> CliResult<(UlamMatrix, DensityEstimate)> {
    density_on(mp, cfg.cells.unwrap(), cfg.x_min.unwrap(), cfg.density_tol.unwrap())
}

/// `1 - x / nu(x)`, which equals 1 at the fixed point and has `nu` mean 0.
pub fn linear_observable(d: &DensityEstimate) -> Observable {
    let mu = d.integrate(|x| x);
    Observable::spatial(format!("1 - x/{mu}"), 1.0, move |x| 1.0 - x / mu)
}

/// `bump[0.6, 0.9] - k bump[0.1, 0.4]` with `k` making the `nu` mean 0.
pub fn balanced_observable(d: &DensityEstimate, mp: &ModelParams) -> Observable {
    let (b1, b2) = (Observable::bump(0.6, 0.9, 1.0), Observable::bump(0.1, 0.4, 1.0));
    let k = d.nu_mean(&b1, mp) / d.nu_mean(&b2, mp);
    b1.plus(&b2.scaled(-k))
}

/// The observable described by `spec`. Density-dependent kinds need `d`.
pub fn observable(spec: &ObservableSpec, mp: &ModelParams, d: Option<&DensityEstimate>) -> CliResult<Observable> {
    let need = || d.ok_or_else(|| CliError::config("observable needs an invariant density"));
    Ok(match spec {
        ObservableSpec::Bump { lo, hi, height } => Observable::bump(*lo, *hi, *height),
        ObservableSpec::Tent { lo, hi, height } => Observable::tent(*lo, *hi, *height),
        ObservableSpec::Linear => linear_observable(need()?),
        ObservableSpec::Balanced => balanced_observable(need()?, mp),
    })
}

fn asymptotics(cfg: &ExperimentConfig, out: &mut OutputSet) -> CliResult<Option<Vec<Check>>> {
    let mp = model(cfg)?;
    let grid = grid_usize(cfg);
    let r = quenched_report(&mp, &grid, cfg.replicas() as usize, cfg.seed)?;
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
    out.add_table("asymptotics.csv", &t)?;
    out.add_text(
        "asymptotics.gp",
        gnuplot_script(
            "n^(1/alpha) x_n",
            "asymptotics.csv",
            1,
            &[(2, "linespoints"), (4, "linespoints"), (7, "lines")],
            Axes { logx: true, logy: false },
            "n",
            "c_n",
        ),
    );
    let first = r.rows.first().unwrap();
    let last = r.rows.last().unwrap();
    let limit = r.limit_value;
    let dev = |m: f64| (m - limit).abs();
    let l1 = r.l1_errors();
    Ok(Some(vec![
        Check::below("median_rel_deviation_at_max_n", dev(last.median_cn) / limit, cfg.tolerance("median_rel")),
        Check::flag(
            "median_deviation_shrinks",
            r.rows.len() < 2 || dev(last.median_cn) < dev(first.median_cn),
            "deviation at max n < deviation at min n",
        ),
        Check::flag("l1_error_decreasing", l1.windows(2).all(|w| w[1] < w[0]), "strictly decreasing in n"),
    ]))
}

fn tail(cfg: &ExperimentConfig, out: &mut OutputSet) -> CliResult<Option<Vec<Check>>> {
    let mp = model(cfg)?;
    let grid = grid_usize(cfg);
    let r = tail_estimate(&mp, &grid, cfg.replicas(), cfg.seed)?;
    let inv_a = 1.0 / mp.alpha();
    let mut t = Table::new(&["n", "empirical_tail", "stderr", "predicted_tail", "predicted_exact", "scaled_tail"]);
    let mut checks = Vec::new();
    let (sigma, rel) = (cfg.tolerance("sigma"), cfg.tolerance("rel"));
    for row in &r.rows {
        let scaled = (row.n as f64).powf(inv_a) * row.empirical;
        t.push(vec![
            row.n.into(),
            row.empirical.into(),
            row.stderr.into(),
            row.predicted.into(),
            row.predicted_exact.into(),
            scaled.into(),
        ]);
        if row.predicted_exact {
            let z = (row.empirical - row.predicted).abs();
            checks.push(Check {
                name: format!("tail_vs_exact_n{}", row.n),
                value: z,
                condition: format!("<= {sigma} * {:e}", row.stderr),
                pass: z <= sigma * row.stderr,
            });
        } else {
            let limit = mp.quenched_limit();
            checks.push(Check::below(
                &format!("scaled_tail_rel_deviation_n{}", row.n),
                (scaled / limit - 1.0).abs(),
                rel,
            ));
        }
    }
    out.add_table("tail.csv", &t)?;
    out.add_text(
        "tail.gp",
        gnuplot_script(
            "P(R > n), uniform start on (1/2, 1]",
            "tail.csv",
            1,
            &[(2, "points"), (4, "lines")],
            Axes { logx: true, logy: true },
            "n",
            "P(R > n)",
        ),
    );
    Ok(Some(checks))
}

fn density_table(d: &DensityEstimate) -> Table {
    let mut t = Table::new(&["cell_left", "cell_right", "value"]);
    for i in 0..d.grid.len() {
        let (a, b) = d.grid.cell(i);
        t.push(vec![a.into(), b.into(), d.cell_values[i].into()]);
    }
    t
}

fn density(cfg: &ExperimentConfig, out: &mut OutputSet) -> CliResult<Option<Vec<Check>>> {
    let mp = model(cfg)?;
    let cells = cfg.cells.unwrap();
    let (x_min, tol) = (cfg.x_min.unwrap(), cfg.density_tol.unwrap());
    let levels = [cells / 4, cells / 2, cells];
    let mut refinement = Table::new(&["cells", "residual", "iterations", "f_half", "l1_gap_to_coarser"]);
    let mut prev: Option<DensityEstimate> = None;
    let mut gaps = Vec::new();
    let mut finest = None;
    for &k in &levels {
        let (_, d) = density_on(&mp, k, x_min, tol)?;
        let gap = prev.as_ref().map(|p| l1_gap(p, &d));
        gaps.extend(gap);
        refinement.push(vec![
            k.into(),
            d.residual.into(),
            d.iterations.into(),
            d.value_right_of_half().into(),
            gap.into(),
        ]);
        prev = Some(d.clone());
        finest = Some(d);
    }
    let d = finest.unwrap();
    out.add_table("density.csv", &density_table(&d))?;
    out.add_table("refinement.csv", &refinement)?;
    out.add_text(
        "density.gp",
        gnuplot_script(
            "invariant density f*",
            "density.csv",
            1,
            &[(3, "steps")],
            Axes { logx: true, logy: true },
            "x",
            "f*(x)",
        ),
    );
    let mut checks = vec![
        Check::below("residual", d.residual, cfg.tolerance("residual")),
        Check::flag("refinement_gap_decreasing", gaps.windows(2).all(|w| w[1] < w[0]), "L1 gaps decrease"),
    ];
    if mp.beta() < 1.0 {
        let cone = cone_check(&d, mp.beta())?;
        checks.push(Check::flag("cone", cone.pass, &format!("in cone with a = {}", cone.a)));
        out.add_json("cone.json", &cone)?;
    }
    Ok(Some(checks))
}

fn correlation_table(rows: &[CorrelationRow]) -> Table {
    let mut t = Table::new(&["n", "corr", "stderr", "predicted"]);
    for r in rows {
        t.push(vec![r.n.into(), r.corr.into(), r.stderr.into(), r.predicted.into()]);
    }
    t
}

/// Log-log slope of `|corr|` against `n`.
pub fn correlation_slope(rows: &[CorrelationRow]) -> f64 {
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.corr.abs()).collect();
    loglog_fit(&xs, &ys).slope
}

fn correlation(cfg: &ExperimentConfig, out: &mut OutputSet) -> CliResult<Option<Vec<Check>>> {
    let mp = model(cfg)?;
    let (m, d) = density_of(cfg, &mp)?;
    let phi = observable(cfg.phi.as_ref().unwrap(), &mp, Some(&d))?;
    let psi = observable(cfg.psi.as_ref().unwrap(), &mp, Some(&d))?;
    let grid = grid_usize(cfg);
    let rows = match cfg.method.unwrap() {
        CorrMethod::Operator => operator_correlation(&phi, &psi, &grid, &mp, &m, &d)?,
        CorrMethod::MonteCarlo => correlation_estimate(&phi, &psi, &grid, &mp, &d, cfg.replicas() as usize, cfg.seed)?,
    };
    out.add_table("correlation.csv", &correlation_table(&rows))?;
    out.add_text(
        "correlation.gp",
        gnuplot_script(
            "Cor(phi, psi) against n",
            "correlation.csv",
            1,
            &[(2, "points"), (4, "lines")],
            Axes { logx: true, logy: true },
            "n",
            "Cor",
        ),
    );
    let target = 1.0 - 1.0 / mp.alpha();
    Ok(Some(vec![Check::within("loglog_slope", correlation_slope(&rows), target, cfg.tolerance("slope"))]))
}

/// `(A |c|^(1/a) |G(1 - 1/a) cos(pi/2a)|)^a`, the scale of the stable limit.
pub fn stable_scale(case: &LimitCase) -> f64 {
    let k = stable_cf(1.0, case.alpha, case.c, case.a_const).map(|v| -v.norm().ln()).unwrap_or(f64::NAN);
    k.powf(case.alpha)
}

/// Tail fit range `[2 sigma, n^(1 - alpha) sup|f| / 2]`: past the body of
/// the limit law, and below the hard bound `|S_n f| <= n sup|f|`.
pub fn stable_tail_range(case: &LimitCase, n: usize, sup_f: f64) -> (f64, f64) {
    (2.0 * stable_scale(case), 0.5 * (n as f64).powf(1.0 - case.alpha) * sup_f)
}

pub fn sup_abs(f: &Observable) -> f64 {
    (0..=10_000).map(|k| f.eval(k as f64 / 10_000.0, &[]).abs()).fold(0.0, f64::max)
}

/// Birkhoff-sum observable for the limit experiments: bumps and tents get
/// centered under `nu`, the others are centered by construction.
pub fn limit_observable(spec: &ObservableSpec, mp: &ModelParams, d: &DensityEstimate) -> CliResult<Observable> {
    let f = observable(spec, mp, Some(d))?;
    Ok(match spec {
        ObservableSpec::Bump { .. } | ObservableSpec::Tent { .. } => center_observable(&f, d, mp),
        _ => f,
    })
}

/// Checks and tables for one limit run; shared with the acceptance suite.
pub struct LimitRun {
    pub checks: Vec<Check>,
    pub summary: Table,
    pub samples: Table,
    pub cf: Option<Table>,
}

pub fn limit_run(
    mp: &ModelParams,
    d: &DensityEstimate,
    f: &Observable,
    n_grid: &[usize],
    m: usize,
    seed: u64,
    tolerances: &std::collections::BTreeMap<String, f64>,
) -> CliResult<LimitRun> {
    let k = corr_constants(mp, d);
    let case = select_limit_case(mp, f, k.a)?;
    let mut summary = Table::new(&[
        "n", "case", "normalizer", "statistic", "threshold", "pass", "sample_mean", "sample_sd", "ks_sqrt_n",
    ]);
    let mut checks = Vec::new();
    let threshold = tolerances["statistic"];
    let mut last: Option<SampleBatch> = None;
    for &n in n_grid {
        let (v, z) = run_limit_case(mp, f, &case, d, n, m, seed, threshold)?;
        summary.push(vec![
            n.into(),
            Cell::Text(format!("{:?}", v.case)),
            v.normalizer.into(),
            v.statistic.into(),
            v.threshold.into(),
            v.pass.into(),
            v.sample_mean.into(),
            v.sample_sd.into(),
            v.ks_sqrt_n.into(),
        ]);
        let label = match case.kind {
            LimitKind::Stable => "sup_cf_distance",
            _ => "ks_distance",
        };
        checks.push(Check::below(&format!("{label}_n{n}"), v.statistic, threshold));
        if let Some(alt) = v.ks_sqrt_n {
            checks.push(Check::below(&format!("ks_beats_sqrt_n_normalization_n{n}"), v.statistic, alt));
        }
        last = Some(z);
    }
    let n = *n_grid.last().unwrap();
    let z = last.unwrap();
    let mut samples = Table::new(&["replica", "normalized_sum"]);
    for (i, v) in z.values.iter().enumerate() {
        samples.push(vec![i.into(), (*v).into()]);
    }
    let mut cf = None;
    match case.kind {
        LimitKind::Clt | LimitKind::CltCentered => {
            let half = n / 2;
            if half >= 1 {
                let b = birkhoff_samples_multi(f, mp, d, &[half, n], m, seed)?;
                let (v1, v2) = (variance(&b[0].values) / half as f64, variance(&b[1].values) / n as f64);
                checks.push(Check::below(
                    &format!("variance_ratio_deviation_n{half}_vs_n{n}"),
                    (v1 / v2 - 1.0).abs(),
                    tolerances["variance_flatness"],
                ));
            }
        }
        LimitKind::Stable => {
            let grid = default_t_grid();
            let emp = empirical_cf(&z, &grid)?;
            let mut t = Table::new(&["t", "empirical_re", "empirical_im", "stable_re", "stable_im", "abs_diff"]);
            for (tv, e) in grid.iter().zip(emp) {
                let th = stable_cf(*tv, case.alpha, case.c, case.a_const)?;
                t.push(vec![(*tv).into(), e.re.into(), e.im.into(), th.re.into(), th.im.into(), (e - th).norm().into()]);
            }
            cf = Some(t);
            let (lo, hi) = stable_tail_range(&case, n, sup_abs(f));
            let slope = tail_index_slope(&z, lo, hi, 12)?;
            checks.push(Check::within("tail_index_slope", slope, -1.0 / case.alpha, tolerances["tail_slope"]));
        }
        LimitKind::LogNormalHalf => {}
    }
    Ok(LimitRun {
        checks,
        summary,
        samples,
        cf,
    })
}

fn limits(cfg: &ExperimentConfig, out: &mut OutputSet) -> CliResult<Option<Vec<Check>>> {
    let mp = model(cfg)?;
    let (_, d) = density_of(cfg, &mp)?;
    let f = limit_observable(cfg.observable.as_ref().unwrap(), &mp, &d)?;
    let mut grid = grid_usize(cfg);
    grid.sort_unstable();
    grid.dedup();
    let run = limit_run(&mp, &d, &f, &grid, cfg.replicas() as usize, cfg.seed, &cfg.tolerances)?;
    out.add_table("limits.csv", &run.summary)?;
    out.add_table("samples.csv", &run.samples)?;
    out.add_text(
        "samples.gp",
        "set datafile separator ','\nset terminal pngcairo size 900,600\nset output 'samples.png'\n\
         set title 'normalized Birkhoff sums'\nbinwidth = 0.1\nbin(x) = binwidth * floor(x / binwidth)\n\
         plot 'samples.csv' using (bin($2)):(1.0) smooth freq with boxes notitle\n"
            .to_string(),
    );
    if let Some(cf) = &run.cf {
        out.add_table("cf.csv", cf)?;
        out.add_text(
            "cf.gp",
            gnuplot_script(
                "characteristic functions",
                "cf.csv",
                1,
                &[(2, "points"), (4, "lines"), (3, "points"), (5, "lines")],
                Axes { logx: false, logy: false },
                "t",
                "E exp(itZ)",
            ),
        );
    }
    Ok(Some(run.checks))
}

fn infinite(cfg: &ExperimentConfig, out: &mut OutputSet) -> CliResult<Option<Vec<Check>>> {
    let mp = model(cfg)?;
    let phi = observable(cfg.phi.as_ref().unwrap(), &mp, None)?;
    let psi = observable(cfg.psi.as_ref().unwrap(), &mp, None)?;
    let grid = grid_usize(cfg);
    let range = (*grid.iter().min().unwrap(), *grid.iter().max().unwrap());
    let corr = infinite_correlation(&phi, &psi, &mp, &grid, cfg.replicas() as usize, cfg.seed, range)?;
    let caps = cfg.caps.clone().unwrap();
    let trunc = truncated_return_growth(&mp, &caps, cfg.trunc_replicas.unwrap(), cfg.seed)?;
    let mut t = Table::new(&["n", "estimate", "stderr", "normalizer", "fitted_slope"]);
    for r in &corr.rows {
        t.push(vec![r.n.into(), r.estimate.into(), r.stderr.into(), r.normalizer.into(), corr.fit.slope.into()]);
    }
    out.add_table("infinite.csv", &t)?;
    let mut tt = Table::new(&["cap", "mean", "stderr"]);
    for r in &trunc.rows {
        tt.push(vec![r.cap.into(), r.mean.into(), r.stderr.into()]);
    }
    out.add_table("truncated.csv", &tt)?;
    out.add_text(
        "infinite.gp",
        gnuplot_script(
            "int f g o S^n d nu",
            "infinite.csv",
            1,
            &[(2, "points")],
            Axes { logx: true, logy: true },
            "n",
            "estimate",
        ),
    );
    out.add_text(
        "truncated.gp",
        gnuplot_script(
            "E min(R, cap)",
            "truncated.csv",
            1,
            &[(2, "linespoints")],
            Axes { logx: true, logy: mp.alpha() > 1.0 },
            "cap",
            "E min(R, cap)",
        ),
    );
    let (slope_tol, r2) = (cfg.tolerance("slope"), cfg.tolerance("r_squared"));
    let checks = if mp.alpha() > 1.0 {
        let growth = 1.0 - 1.0 / mp.alpha();
        vec![
            Check::within("truncated_loglog_slope", trunc.loglog.slope, growth, slope_tol),
            Check::within("correlation_loglog_slope", corr.fit.slope, -growth, slope_tol),
        ]
    } else {
        vec![
            Check::above("truncated_r_squared_vs_log_cap", trunc.vs_log.r_squared, r2),
            Check::above("correlation_r_squared_vs_inverse_log", corr.fit.r_squared, r2),
        ]
    };
    Ok(Some(checks))
}
