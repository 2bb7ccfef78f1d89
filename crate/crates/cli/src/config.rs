//! Experiment configuration: one JSON file plus flat `key=value` overrides,
//! resolved to a fully explicit form that the manifest records.

use crate::error::{CliError, CliResult};
use irand_core::limits::{default_threshold, LimitKind};
use irand_core::stats::log_grid;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Asymptotics,
    Tail,
    Density,
    Correlation,
    Limits,
    Infinite,
    AcceptAll,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Asymptotics,
        ExperimentKind::Tail,
        ExperimentKind::Density,
        ExperimentKind::Correlation,
        ExperimentKind::Limits,
        ExperimentKind::Infinite,
        ExperimentKind::AcceptAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Asymptotics => "asymptotics",
            ExperimentKind::Tail => "tail",
            ExperimentKind::Density => "density",
            ExperimentKind::Correlation => "correlation",
            ExperimentKind::Limits => "limits",
            ExperimentKind::Infinite => "infinite",
            ExperimentKind::AcceptAll => "accept-all",
        }
    }

    /// Tolerance keys the experiment understands.
    pub fn tolerance_keys(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Asymptotics => &["median_rel"],
            ExperimentKind::Tail => &["sigma", "rel"],
            ExperimentKind::Density => &["residual"],
            ExperimentKind::Correlation => &["slope"],
            ExperimentKind::Limits => &["statistic", "variance_flatness", "tail_slope"],
            ExperimentKind::Infinite => &["slope", "r_squared"],
            ExperimentKind::AcceptAll => &[],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CliError::config(format!("unknown experiment `{s}`")))
    }
}

/// Observables selectable from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    /// Smooth bump supported on `[lo, hi]` with peak `height`.
    Bump { lo: f64, hi: f64, height: f64 },
    /// Piecewise linear tent on `[lo, hi]` with peak `height` at the midpoint.
    Tent { lo: f64, hi: f64, height: f64 },
    /// `1 - x / nu(x)`: value 1 at the fixed point, centered under `nu`.
    Linear,
    /// `bump[0.6, 0.9] - k bump[0.1, 0.4]`, `k` chosen to center under `nu`;
    /// vanishes near 0.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrMethod {
    /// Deterministic propagation through the Ulam matrix.
    Operator,
    /// Independent stationary starts.
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_p1")]
    pub p1: f64,
    #[serde(default)]
    pub n_grid: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Not echoed in manifests: it does not influence any number.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    /// Ulam grid size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    /// Left end of the geometric part of the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<CorrMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<ObservableSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<ObservableSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<ObservableSpec>,
    /// Truncation levels for `E min(R, cap)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caps: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trunc_replicas: Option<u64>,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_beta() -> f64 {
    0.75
}
fn default_p1() -> f64 {
    0.5
}
pub fn default_seed() -> u64 {
    1
}

pub const DEFAULT_OUTPUT_DIR: &str = "results";

impl ExperimentConfig {
    /// Defaults for `kind` at the default parameters.
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment: kind,
            alpha: default_alpha(),
            beta: default_beta(),
            p1: default_p1(),
            n_grid: Vec::new(),
            replicas: None,
            seed: default_seed(),
            output_dir: None,
            tolerances: BTreeMap::new(),
            cells: None,
            x_min: None,
            density_tol: None,
            method: None,
            phi: None,
            psi: None,
            observable: None,
            caps: None,
            trunc_replicas: None,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn replicas(&self) -> u64 {
        self.replicas.unwrap_or(0)
    }

    pub fn tolerance(&self, key: &str) -> f64 {
        self.tolerances[key]
    }

    /// Fills every unset field with its experiment default and validates.
    pub fn resolve(mut self) -> CliResult<Self> {
        self.validate_common()?;
        let kind = self.experiment;
        let log = |lo, hi, k| log_grid(lo, hi, k);
        match kind {
            ExperimentKind::Asymptotics => {
                default_vec(&mut self.n_grid, vec![100, 1_000, 10_000, 100_000]);
                self.replicas.get_or_insert(200);
                default_tol(&mut self.tolerances, "median_rel", 0.1);
            }
            ExperimentKind::Tail => {
                default_vec(&mut self.n_grid, vec![1, 2, 4, 8, 16, 1_000]);
                self.replicas.get_or_insert(10_000_000);
                default_tol(&mut self.tolerances, "sigma", 3.0);
                default_tol(&mut self.tolerances, "rel", 0.15);
            }
            ExperimentKind::Density => {
                self.density_defaults();
                default_tol(&mut self.tolerances, "residual", 1e-8);
            }
            ExperimentKind::Correlation => {
                self.density_defaults();
                default_vec(&mut self.n_grid, log(100, 10_000, 21));
                let method = *self.method.get_or_insert(CorrMethod::Operator);
                if method == CorrMethod::MonteCarlo {
                    self.replicas.get_or_insert(100_000);
                }
                self.phi.get_or_insert(ObservableSpec::Bump { lo: 0.6, hi: 0.9, height: 1.0 });
                self.psi.get_or_insert(ObservableSpec::Bump { lo: 0.65, hi: 0.85, height: 1.0 });
                default_tol(&mut self.tolerances, "slope", 0.15);
            }
            ExperimentKind::Limits => {
                self.density_defaults();
                default_vec(&mut self.n_grid, vec![10_000]);
                self.replicas.get_or_insert(10_000);
                let alpha = self.alpha;
                let obs = self
                    .observable
                    .get_or_insert(if alpha < 0.5 { ObservableSpec::Balanced } else { ObservableSpec::Linear })
                    .clone();
                let kind = predicted_limit_kind(alpha, &obs);
                default_tol(&mut self.tolerances, "statistic", default_threshold(kind));
                default_tol(&mut self.tolerances, "variance_flatness", 0.1);
                default_tol(&mut self.tolerances, "tail_slope", 0.15);
            }
            ExperimentKind::Infinite => {
                default_vec(&mut self.n_grid, log(100, 10_000, 9));
                self.replicas.get_or_insert(300_000);
                self.caps.get_or_insert_with(|| log_grid(100, 1_000_000, 9));
                let tr = if self.alpha == 1.0 { 50_000_000 } else { 1_000_000 };
                self.trunc_replicas.get_or_insert(tr);
                self.phi.get_or_insert(ObservableSpec::Bump { lo: 0.6, hi: 0.9, height: 1.0 });
                self.psi.get_or_insert(ObservableSpec::Bump { lo: 0.6, hi: 0.9, height: 1.0 });
                default_tol(&mut self.tolerances, "slope", 0.1);
                default_tol(&mut self.tolerances, "r_squared", 0.99);
            }
            ExperimentKind::AcceptAll => {}
        }
        self.validate_resolved()?;
        Ok(self)
    }

    fn density_defaults(&mut self) {
        self.cells.get_or_insert(1 << 14);
        self.x_min.get_or_insert(1e-10);
        self.density_tol.get_or_insert(1e-9);
    }

    fn validate_common(&self) -> CliResult<()> {
        let (a, b, p) = (self.alpha, self.beta, self.p1);
        if !(a.is_finite() && a > 0.0) {
            return Err(CliError::config(format!("alpha: must be a positive real, got {a}")));
        }
        if !(b.is_finite() && b > a) {
            return Err(CliError::config(format!("alpha, beta: need 0 < alpha < beta, got alpha = {a}, beta = {b}")));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(CliError::config(format!("p1: need 0 < p1 < 1, got {p}")));
        }
        let allowed = self.experiment.tolerance_keys();
        if let Some(k) = self.tolerances.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CliError::config(format!(
                "tolerances.{k}: not used by experiment {}, expected one of {allowed:?}",
                self.experiment
            )));
        }
        if let Some((k, v)) = self.tolerances.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(CliError::config(format!("tolerances.{k}: must be a positive real, got {v}")));
        }
        if self.n_grid.contains(&0) {
            return Err(CliError::config("n_grid: entries must be positive"));
        }
        Ok(())
    }

    fn validate_resolved(&self) -> CliResult<()> {
        let (a, b) = (self.alpha, self.beta);
        match self.experiment {
            ExperimentKind::Density | ExperimentKind::Correlation if a >= 1.0 => {
                return Err(CliError::config(format!(
                    "alpha: {} needs a finite invariant measure (alpha < 1), got {a}",
                    self.experiment
                )));
            }
            ExperimentKind::Limits if b >= 1.0 => {
                return Err(CliError::config(format!(
                    "alpha, beta: limits requires 0 < alpha < beta < 1, got alpha = {a}, beta = {b}"
                )));
            }
            ExperimentKind::Infinite if a < 1.0 => {
                return Err(CliError::config(format!("alpha: infinite requires alpha >= 1, got {a}")));
            }
            _ => {}
        }
        if let Some(m) = self.replicas {
            if m < 2 {
                return Err(CliError::config(format!("replicas: need at least 2, got {m}")));
            }
        }
        if self.experiment == ExperimentKind::Limits && self.n_grid.iter().any(|&n| n < 2) {
            return Err(CliError::config("n_grid: limits needs n >= 2"));
        }
        if let Some(k) = self.cells {
            if k < 64 || k % 4 != 0 {
                return Err(CliError::config(format!("cells: need a multiple of 4 that is at least 64, got {k}")));
            }
        }
        if let Some(x) = self.x_min {
            if !(x > 0.0 && x < 0.1) {
                return Err(CliError::config(format!("x_min: need 0 < x_min < 0.1, got {x}")));
            }
        }
        if let Some(t) = self.density_tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::config(format!("density_tol: must be a positive real, got {t}")));
            }
        }
        if let Some(caps) = &self.caps {
            if caps.len() < 2 || caps.contains(&0) {
                return Err(CliError::config("caps: need at least two positive caps"));
            }
        }
        if let Some(m) = self.trunc_replicas {
            if m < 2 {
                return Err(CliError::config(format!("trunc_replicas: need at least 2, got {m}")));
            }
        }
        for (field, spec) in [("phi", &self.phi), ("psi", &self.psi), ("observable", &self.observable)] {
            if let Some(s) = spec {
                validate_observable(field, s, self.experiment)?;
            }
        }
        Ok(())
    }
}

fn validate_observable(field: &str, s: &ObservableSpec, kind: ExperimentKind) -> CliResult<()> {
    match s {
        ObservableSpec::Bump { lo, hi, height } | ObservableSpec::Tent { lo, hi, height } => {
            if !(0.0 <= *lo && lo < hi && *hi <= 1.0) {
                return Err(CliError::config(format!("{field}: need 0 <= lo < hi <= 1, got [{lo}, {hi}]")));
            }
            if !height.is_finite() {
                return Err(CliError::config(format!("{field}.height: must be finite")));
            }
            if kind == ExperimentKind::Infinite && *lo < 0.5 {
                return Err(CliError::config(format!("{field}: infinite needs support inside [0.5, 1], got lo = {lo}")));
            }
        }
        ObservableSpec::Linear | ObservableSpec::Balanced => {
            if kind == ExperimentKind::Infinite {
                return Err(CliError::config(format!("{field}: infinite needs bump or tent observables")));
            }
        }
    }
    Ok(())
}

/// The regime the observable falls in once centered. Centering a bump or
/// tent moves its value at 0 to `-nu(f) != 0`; only the balanced
/// observable keeps `c = 0`.
pub fn predicted_limit_kind(alpha: f64, obs: &ObservableSpec) -> LimitKind {
    let c_zero = matches!(obs, ObservableSpec::Balanced);
    if alpha < 0.5 {
        LimitKind::Clt
    } else if c_zero {
        LimitKind::CltCentered
    } else if alpha == 0.5 {
        LimitKind::LogNormalHalf
    } else {
        LimitKind::Stable
    }
}

fn default_vec(v: &mut Vec<u64>, d: Vec<u64>) {
    if v.is_empty() {
        *v = d;
    }
}

fn default_tol(t: &mut BTreeMap<String, f64>, key: &str, v: f64) {
    t.entry(key.to_string()).or_insert(v);
}

/// Parses `key=value`, with dotted keys addressing nested objects. Values
/// are read as JSON when they parse, and as strings otherwise.
pub fn apply_set(doc: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set {assignment}: expected key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::config(format!("--set {assignment}: empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("--set {key}: `{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!()
}

/// Command-line inputs to a run.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Reads the config file (if any), applies overrides, checks the experiment
/// name against `kind`, and resolves.
pub fn load(kind: ExperimentKind, ov: &Overrides) -> CliResult<ExperimentConfig> {
    let mut doc = match &ov.config {
        Some(p) => read_json(p)?,
        None => Value::Object(Map::new()),
    };
    if !doc.is_object() {
        return Err(CliError::config("config file must hold a JSON object"));
    }
    for s in &ov.sets {
        apply_set(&mut doc, s)?;
    }
    let obj = doc.as_object_mut().unwrap();
    match obj.get("experiment") {
        None => {
            obj.insert("experiment".into(), Value::String(kind.name().into()));
        }
        Some(Value::String(s)) if s == kind.name() => {}
        Some(other) => {
            return Err(CliError::config(format!(
                "experiment: config names {other}, command is {}",
                kind.name()
            )))
        }
    }
    if let Some(seed) = ov.seed {
        obj.insert("seed".into(), Value::from(seed));
    }
    if let Some(out) = &ov.out {
        obj.insert("output_dir".into(), Value::String(out.to_string_lossy().into_owned()));
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(format!("{path}: {}", e.into_inner()))
    })?;
    cfg.resolve()
}

fn read_json(p: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(sets: &[&str]) -> Overrides {
        Overrides {
            sets: sets.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_resolve() {
        for k in ExperimentKind::ALL {
            let mut c = ExperimentConfig::new(k);
            if k == ExperimentKind::Infinite {
                c.alpha = 2.0;
                c.beta = 3.0;
            }
            let r = c.resolve().unwrap();
            for key in k.tolerance_keys() {
                assert!(r.tolerances.contains_key(*key), "{k} {key}");
            }
        }
    }

    #[test]
    fn set_overrides() {
        let c = load(ExperimentKind::Tail, &ov(&["alpha=0.4", "n_grid=[1,2]", "tolerances.rel=0.2", "seed=9"])).unwrap();
        assert_eq!(c.alpha, 0.4);
        assert_eq!(c.n_grid, vec![1, 2]);
        assert_eq!(c.tolerances["rel"], 0.2);
        assert_eq!(c.tolerances["sigma"], 3.0);
        assert_eq!(c.seed, 9);
        let c = load(ExperimentKind::Correlation, &ov(&["phi.kind=tent", "phi.lo=0.6", "phi.hi=0.8", "phi.height=2"])).unwrap();
        assert_eq!(c.phi, Some(ObservableSpec::Tent { lo: 0.6, hi: 0.8, height: 2.0 }));
    }

    #[test]
    fn diagnostics_name_the_field() {
        let msg = |sets: &[&str], k| load(k, &ov(sets)).unwrap_err().to_string();
        assert!(msg(&["alpha=0.9"], ExperimentKind::Tail).contains("alpha < beta"));
        assert!(msg(&["alpah=0.3"], ExperimentKind::Tail).contains("alpah"));
        assert!(msg(&["alpha=oops"], ExperimentKind::Tail).contains("alpha"));
        assert!(msg(&["p1=1"], ExperimentKind::Tail).contains("p1"));
        assert!(msg(&["tolerances.ks=0.1"], ExperimentKind::Tail).contains("tolerances.ks"));
        assert!(msg(&["alpha=1.5", "beta=2"], ExperimentKind::Limits).contains("limits requires"));
        assert!(msg(&[], ExperimentKind::Infinite).contains("alpha >= 1"));
        assert!(msg(&["replicas=1"], ExperimentKind::Tail).contains("replicas"));
        assert!(msg(&["experiment=tail"], ExperimentKind::Density).contains("experiment"));
        assert!(msg(&["n_grid=[0]"], ExperimentKind::Tail).contains("n_grid"));
        assert!(msg(&["phi.kind=wave"], ExperimentKind::Correlation).contains("phi"));
        assert_eq!(load(ExperimentKind::Tail, &ov(&["alpha=0.9"])).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn set_syntax_errors() {
        let mut v = Value::Object(Map::new());
        assert!(apply_set(&mut v, "novalue").is_err());
        assert!(apply_set(&mut v, "=3").is_err());
        apply_set(&mut v, "a=3").unwrap();
        assert!(apply_set(&mut v, "a.b=3").is_err());
        apply_set(&mut v, "name=hello").unwrap();
        assert_eq!(v["name"], Value::String("hello".into()));
    }

    #[test]
    fn manifest_echo_round_trips() {
        let mut c = load(ExperimentKind::Limits, &ov(&[])).unwrap();
        c.output_dir = Some("somewhere".into());
        let text = serde_json::to_string(&c).unwrap();
        assert!(!text.contains("somewhere"));
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.resolve().unwrap(), ExperimentConfig { output_dir: None, ..c });
    }
}
