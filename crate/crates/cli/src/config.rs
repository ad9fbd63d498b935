//! Run configuration: a JSON document with a strict schema.
//!
//! Parsing happens in two passes. The untyped pass walks the JSON value,
//! rejects unknown keys and out-of-range numbers and collects every
//! violation; the typed pass then deserializes the normalized value.

use std::fmt;
use std::path::PathBuf;

use clspec::ensemble::{
    constant_profile, power_law_profile, two_block_profile, EnsembleSpec, Model,
    DEFAULT_FLATNESS_BOUND, DENSE_DIMENSION_CAP,
};
use clspec::harness::{BulkSelection, Domain, Thresholds};
use clspec::sce::SolverOptions;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Prefix of environment variables that override configuration keys.
pub const ENV_PREFIX: &str = "CLSPEC_";

/// One schema violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Dotted path, e.g. `local_law.etas[1]`; empty for the document root.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "(root): {}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{} schema violation(s):\n{}", .0.len(), .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    SchemaViolation(Vec<Violation>),
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::SchemaViolation(v) => v,
        }
    }
}

/// One factor `γ^(k)` of the variance profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorSpec {
    /// `γ_i = (i/N)^-μ`.
    PowerLaw {
        mu: f64,
    },
    Constant {
        value: f64,
    },
    TwoBlock {
        values: [f64; 2],
        proportions: [f64; 2],
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl FactorSpec {
    pub fn build(&self, n: usize) -> Result<Vec<f64>, String> {
        match self {
            FactorSpec::PowerLaw { mu } => power_law_profile(n, *mu).map_err(|e| e.to_string()),
            FactorSpec::Constant { value } => Ok(constant_profile(n, *value)),
            FactorSpec::TwoBlock {
                values,
                proportions,
            } => two_block_profile(n, values, proportions).map_err(|e| e.to_string()),
            FactorSpec::Explicit { values } => Ok(values.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping_floor: f64,
    pub history: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::<f64>::default();
        Self {
            tol: o.tol,
            max_iter: o.max_iter,
            damping_floor: o.damping_floor,
            history: o.history,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions<f64> {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            damping_floor: self.damping_floor,
            history: self.history,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Log,
}

/// `points` values from `lower` to `upper` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    #[serde(default = "linear")]
    pub spacing: Spacing,
}

fn linear() -> Spacing {
    Spacing::Linear
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.lower];
        }
        let last = self.points - 1;
        (0..self.points)
            .map(|i| {
                let t = i as f64 / last as f64;
                match (i, self.spacing) {
                    // Endpoints are reproduced exactly.
                    (0, _) => self.lower,
                    (i, _) if i == last => self.upper,
                    (_, Spacing::Linear) => self.lower + (self.upper - self.lower) * t,
                    (_, Spacing::Log) => self.lower * (self.upper / self.lower).powf(t),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    /// Explicit points `[Re z, Im z]`.
    pub points: Vec<[f64; 2]>,
    /// Energies and `η` values crossed with each other and appended to `points`.
    pub energies: Vec<f64>,
    pub etas: Vec<f64>,
    /// Appended to `energies`.
    pub energy_range: Option<Range>,
    /// Appended to `etas`.
    pub eta_range: Option<Range>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            points: Vec::new(),
            energies: Vec::new(),
            etas: Vec::new(),
            energy_range: None,
            eta_range: None,
        }
    }
}

impl SolveConfig {
    pub fn grid(&self) -> Vec<[f64; 2]> {
        let mut energies = self.energies.clone();
        energies.extend(self.energy_range.iter().flat_map(Range::values));
        let mut etas = self.etas.clone();
        etas.extend(self.eta_range.iter().flat_map(Range::values));
        let mut out = self.points.clone();
        for &e in &energies {
            for &eta in &etas {
                out.push([e, eta]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSource {
    /// Cell averages of the configured low-rank profile.
    Profile,
    Constant,
    /// Square CSV matrix of cell values.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QveConfig {
    pub grid: usize,
    pub kernel: KernelSource,
    pub value: f64,
    pub path: Option<PathBuf>,
    pub points: Vec<[f64; 2]>,
}

impl Default for QveConfig {
    fn default() -> Self {
        Self {
            grid: 256,
            kernel: KernelSource::Profile,
            value: 1.0,
            path: None,
            points: vec![[0.0, 1.0]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub points: Vec<[f64; 2]>,
    pub pair_budget: usize,
    /// Matrix written by `sample`; sampled from the configured ensemble when absent.
    pub matrix_file: Option<PathBuf>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            points: vec![[0.0, 0.1]],
            pair_budget: clspec::spectral::DEFAULT_PAIR_BUDGET,
            matrix_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalLawConfig {
    pub energy_interval: [f64; 2],
    pub energy_points: usize,
    pub etas: Vec<f64>,
    pub samples: usize,
    pub pair_budget: usize,
    pub delta: f64,
    pub bulk_threshold: f64,
    pub bulk_probe_eta: f64,
    pub ward_rows: usize,
    pub thresholds: Thresholds,
}

impl Default for LocalLawConfig {
    fn default() -> Self {
        Self {
            energy_interval: [-0.5, 0.5],
            energy_points: 5,
            etas: vec![0.1],
            samples: 10,
            pair_budget: clspec::spectral::DEFAULT_PAIR_BUDGET,
            delta: clspec::spectral::DEFAULT_DELTA,
            bulk_threshold: 0.05,
            bulk_probe_eta: 1e-3,
            ward_rows: 10,
            thresholds: Thresholds::default(),
        }
    }
}

impl LocalLawConfig {
    pub fn domain(&self) -> Domain {
        Domain {
            energy_interval: (self.energy_interval[0], self.energy_interval[1]),
            energy_points: self.energy_points,
            etas: self.etas.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniversalityConfig {
    pub samples: usize,
    /// Defaults to `samples`.
    pub goe_samples: Option<usize>,
    /// Defaults to a seed derived from the run seed.
    pub goe_seed: Option<u64>,
    pub bulk: BulkSelection,
    pub ks_threshold: f64,
    pub control_threshold: f64,
    pub null_check: bool,
    pub poisson_control: bool,
}

impl Default for UniversalityConfig {
    fn default() -> Self {
        Self {
            samples: 10,
            goe_samples: None,
            goe_seed: None,
            bulk: BulkSelection::MiddleThird,
            ks_threshold: 0.02,
            control_threshold: 0.1,
            null_check: true,
            poisson_control: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegreesConfig {
    pub samples: usize,
    pub cutoff_quantile: f64,
    pub bootstrap: usize,
    pub confidence: f64,
    pub target: Option<[f64; 2]>,
}

impl Default for DegreesConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            cutoff_quantile: 0.8,
            bootstrap: 200,
            confidence: 0.95,
            target: None,
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n: usize,
    pub kappa: f64,
    pub profile: Vec<FactorSpec>,
    pub flatness_bound: f64,
    pub model: Model,
    pub seed: u64,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub solver: SolverConfig,
    pub solve: SolveConfig,
    pub qve: QveConfig,
    pub stats: StatsConfig,
    pub local_law: LocalLawConfig,
    pub universality: UniversalityConfig,
    pub degrees: DegreesConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            kappa: 0.5,
            profile: vec![FactorSpec::Constant { value: 1.0 }],
            flatness_bound: DEFAULT_FLATNESS_BOUND,
            model: Model::RandomSign,
            seed: 0,
            threads: None,
            output_dir: None,
            solver: SolverConfig::default(),
            solve: SolveConfig::default(),
            qve: QveConfig::default(),
            stats: StatsConfig::default(),
            local_law: LocalLawConfig::default(),
            universality: UniversalityConfig::default(),
            degrees: DegreesConfig::default(),
        }
    }
}

impl RunConfig {
    /// Builds the validated ensemble.
    pub fn ensemble(&self) -> Result<EnsembleSpec<f64>, String> {
        let gammas = self
            .profile
            .iter()
            .map(|f| f.build(self.n))
            .collect::<Result<Vec<_>, _>>()?;
        EnsembleSpec::with_flatness_bound(self.n, self.kappa, gammas, self.flatness_bound)
            .map_err(|e| e.to_string())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a configuration, applying overrides from the
/// process environment.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with_env(text, std::env::vars())
}

/// Parses and validates with explicit `(name, value)` environment pairs.
/// Only names starting with [`ENV_PREFIX`] are used; `__` separates nested keys,
/// e.g. `CLSPEC_LOCAL_LAW__SAMPLES=5`. Values are read as JSON when they parse,
/// otherwise as strings.
pub fn parse_config_with_env(
    text: &str,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<RunConfig, ConfigError> {
    parse_layered(text, env, &[])
}

/// Parses with three layers: the document, then environment overrides, then
/// explicit `(dotted.path, value)` overrides such as command-line flags.
pub fn parse_layered(
    text: &str,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[(String, Value)],
) -> Result<RunConfig, ConfigError> {
    let mut value: Value = if text.trim().is_empty() {
        Value::Object(Map::new())
    } else {
        serde_json::from_str(text).map_err(|e| {
            ConfigError::SchemaViolation(vec![Violation {
                path: String::new(),
                message: format!("invalid JSON: {e}"),
            }])
        })?
    };
    let mut env: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.len() > ENV_PREFIX.len())
        .collect();
    env.sort();
    for (k, v) in env {
        let parsed = serde_json::from_str(&v).unwrap_or(Value::String(v));
        let parts: Vec<String> = k[ENV_PREFIX.len()..]
            .split("__")
            .map(|p| p.to_ascii_lowercase())
            .collect();
        set_path(&mut value, &parts, parsed);
    }
    for (path, v) in overrides {
        let parts: Vec<String> = path.split('.').map(str::to_string).collect();
        set_path(&mut value, &parts, v.clone());
    }
    from_value(value)
}

fn set_path(root: &mut Value, parts: &[String], parsed: Value) {
    let mut cursor = root;
    for (depth, part) in parts.iter().enumerate() {
        if !cursor.is_object() {
            *cursor = Value::Object(Map::new());
        }
        let map = cursor.as_object_mut().expect("object");
        if depth + 1 == parts.len() {
            map.insert(part.clone(), parsed);
            return;
        }
        cursor = map
            .entry(part.clone())
            .or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Validates and deserializes an already parsed JSON value.
pub fn from_value(mut value: Value) -> Result<RunConfig, ConfigError> {
    let mut v = Validator::default();
    v.root(&mut value);
    if !v.out.is_empty() {
        return Err(ConfigError::SchemaViolation(v.out));
    }
    let config: RunConfig = serde_json::from_value(value).map_err(|e| {
        ConfigError::SchemaViolation(vec![Violation {
            path: String::new(),
            message: e.to_string(),
        }])
    })?;
    if let Err(msg) = config.ensemble() {
        return Err(ConfigError::SchemaViolation(vec![Violation {
            path: "profile".into(),
            message: format!("ensemble is not admissible: {msg}"),
        }]));
    }
    Ok(config)
}

#[derive(Default)]
struct Validator {
    out: Vec<Violation>,
    n: Option<usize>,
}

#[derive(Clone, Copy)]
enum Lo {
    Open(f64),
    Closed(f64),
    None,
}

#[derive(Clone, Copy)]
enum Hi {
    Open(f64),
    Closed(f64),
    None,
}

fn join(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}

fn describe(kind: &str, lo: Lo, hi: Hi) -> String {
    let l = match lo {
        Lo::Open(x) => format!("({x}"),
        Lo::Closed(x) => format!("[{x}"),
        Lo::None => "(-inf".into(),
    };
    let h = match hi {
        Hi::Open(x) => format!("{x})"),
        Hi::Closed(x) => format!("{x}]"),
        Hi::None => "inf)".into(),
    };
    format!("{kind} in {l},{h}").replace(",", ", ")
}

fn in_range(x: f64, lo: Lo, hi: Hi) -> bool {
    let a = match lo {
        Lo::Open(l) => x > l,
        Lo::Closed(l) => x >= l,
        Lo::None => true,
    };
    let b = match hi {
        Hi::Open(h) => x < h,
        Hi::Closed(h) => x <= h,
        Hi::None => true,
    };
    a && b && x.is_finite()
}

const ROOT_KEYS: &[&str] = &[
    "n",
    "kappa",
    "profile",
    "flatness_bound",
    "model",
    "seed",
    "threads",
    "output_dir",
    "solver",
    "solve",
    "qve",
    "stats",
    "local_law",
    "universality",
    "degrees",
];

impl Validator {
    fn push(&mut self, path: String, message: impl Into<String>) {
        self.out.push(Violation {
            path,
            message: message.into(),
        });
    }

    /// Reports unknown keys; returns the object if `value` is one.
    fn object<'v>(
        &mut self,
        value: &'v mut Value,
        path: &str,
        allowed: &[&str],
    ) -> Option<&'v mut Map<String, Value>> {
        match value {
            Value::Object(map) => {
                let mut unknown: Vec<String> = map
                    .keys()
                    .filter(|k| !allowed.contains(&k.as_str()))
                    .cloned()
                    .collect();
                unknown.sort();
                for k in unknown {
                    self.push(join(path, &k), format!("unknown key \"{k}\""));
                }
                Some(map)
            }
            _ => {
                self.push(path.to_string(), "expected an object");
                None
            }
        }
    }

    fn real_value(&mut self, value: &Value, path: &str, lo: Lo, hi: Hi) -> Option<f64> {
        match value.as_f64() {
            Some(x) if in_range(x, lo, hi) => Some(x),
            _ => {
                self.push(path.to_string(), describe("real", lo, hi));
                None
            }
        }
    }

    fn real(
        &mut self,
        map: &Map<String, Value>,
        parent: &str,
        key: &str,
        lo: Lo,
        hi: Hi,
    ) -> Option<f64> {
        let v = map.get(key)?;
        self.real_value(v, &join(parent, key), lo, hi)
    }

    fn integer_value(
        &mut self,
        value: &Value,
        path: &str,
        lo: u64,
        hi: Option<u64>,
    ) -> Option<u64> {
        let ok = value
            .as_u64()
            .filter(|&x| x >= lo && hi.is_none_or(|h| x <= h));
        if ok.is_none() {
            let range = match hi {
                Some(h) => format!("integer in [{lo}, {h}]"),
                None => format!("integer >= {lo}"),
            };
            self.push(path.to_string(), range);
        }
        ok
    }

    fn integer(
        &mut self,
        map: &Map<String, Value>,
        parent: &str,
        key: &str,
        lo: u64,
        hi: Option<u64>,
    ) -> Option<u64> {
        let v = map.get(key)?;
        self.integer_value(v, &join(parent, key), lo, hi)
    }

    fn optional_integer(
        &mut self,
        map: &Map<String, Value>,
        parent: &str,
        key: &str,
        lo: u64,
        hi: Option<u64>,
    ) {
        if let Some(v) = map.get(key) {
            if !v.is_null() {
                self.integer_value(v, &join(parent, key), lo, hi);
            }
        }
    }

    fn boolean(&mut self, map: &Map<String, Value>, parent: &str, key: &str) {
        if let Some(v) = map.get(key) {
            if !v.is_boolean() {
                self.push(join(parent, key), "expected true or false");
            }
        }
    }

    fn string_in(
        &mut self,
        map: &Map<String, Value>,
        parent: &str,
        key: &str,
        choices: &[&str],
    ) -> Option<String> {
        let v = map.get(key)?;
        match v.as_str() {
            Some(s) if choices.contains(&s) => Some(s.to_string()),
            _ => {
                self.push(join(parent, key), format!("one of {}", choices.join(", ")));
                None
            }
        }
    }

    fn path_value(&mut self, map: &Map<String, Value>, parent: &str, key: &str) {
        if let Some(v) = map.get(key) {
            if !(v.is_string() || v.is_null()) {
                self.push(join(parent, key), "expected a path string");
            }
        }
    }

    /// List of reals; entries `{"n_power": p}` are replaced by `N^p`.
    fn reals(&mut self, map: &mut Map<String, Value>, parent: &str, key: &str, lo: Lo, hi: Hi) {
        let n = self.n;
        let Some(v) = map.get_mut(key) else { return };
        let path = join(parent, key);
        let Some(items) = v.as_array_mut() else {
            self.push(path, "expected a list of reals");
            return;
        };
        for (i, item) in items.iter_mut().enumerate() {
            let p = format!("{path}[{i}]");
            if let Some(obj) = item.as_object() {
                if obj.len() == 1 && obj.contains_key("n_power") {
                    match (obj["n_power"].as_f64(), n) {
                        (Some(e), Some(n)) => {
                            *item = Value::from((n as f64).powf(e));
                        }
                        _ => {
                            self.push(format!("{p}.n_power"), "real exponent (requires a valid n)");
                            continue;
                        }
                    }
                } else {
                    self.push(p, "expected a real or {\"n_power\": real}");
                    continue;
                }
            }
            self.real_value(item, &p, lo, hi);
        }
    }

    fn pair(&mut self, value: &Value, path: &str, lo: [Lo; 2]) -> Option<[f64; 2]> {
        match value.as_array() {
            Some(a) if a.len() == 2 => {
                let x = self.real_value(&a[0], &format!("{path}[0]"), lo[0], Hi::None);
                let y = self.real_value(&a[1], &format!("{path}[1]"), lo[1], Hi::None);
                Some([x?, y?])
            }
            _ => {
                self.push(path.to_string(), "expected a pair [real, real]");
                None
            }
        }
    }

    fn points(&mut self, map: &Map<String, Value>, parent: &str, key: &str) {
        let Some(v) = map.get(key) else { return };
        let path = join(parent, key);
        match v.as_array() {
            Some(items) => {
                for (i, item) in items.iter().enumerate() {
                    self.pair(item, &format!("{path}[{i}]"), [Lo::None, Lo::Open(0.0)]);
                }
            }
            None => self.push(path, "expected a list of [Re z, Im z] pairs with Im z > 0"),
        }
    }

    fn root(&mut self, value: &mut Value) {
        let Some(map) = self.object(value, "", ROOT_KEYS) else {
            return;
        };
        self.n = match map.get("n") {
            Some(_) => self
                .integer(map, "", "n", 2, Some(DENSE_DIMENSION_CAP as u64))
                .map(|x| x as usize),
            None => Some(RunConfig::default().n),
        };
        self.real(map, "", "kappa", Lo::Open(0.0), Hi::Closed(1.0));
        self.real(map, "", "flatness_bound", Lo::Open(0.0), Hi::None);
        self.string_in(
            map,
            "",
            "model",
            &["random_sign", "centered_zero_one", "goe"],
        );
        if let Some(v) = map.get("seed") {
            if v.as_u64().is_none() {
                self.push("seed".into(), "unsigned 64-bit integer");
            }
        }
        self.optional_integer(map, "", "threads", 1, Some(1024));
        self.path_value(map, "", "output_dir");
        if let Some(p) = map.get_mut("profile") {
            if p.is_object() {
                *p = Value::Array(vec![p.take()]);
            }
            self.profile(p);
        }
        if let Some(v) = map.get_mut("solver") {
            self.solver(v);
        }
        if let Some(v) = map.get_mut("solve") {
            self.solve(v);
        }
        if let Some(v) = map.get_mut("qve") {
            self.qve(v);
        }
        if let Some(v) = map.get_mut("stats") {
            self.stats(v);
        }
        if let Some(v) = map.get_mut("local_law") {
            self.local_law(v);
        }
        if let Some(v) = map.get_mut("universality") {
            self.universality(v);
        }
        if let Some(v) = map.get_mut("degrees") {
            self.degrees(v);
        }
    }

    fn profile(&mut self, value: &mut Value) {
        let Some(items) = value.as_array_mut() else {
            self.push(
                "profile".into(),
                "expected a factor object or a list of factors",
            );
            return;
        };
        if items.is_empty() {
            self.push("profile".into(), "at least one factor is required");
        }
        for (i, item) in items.iter_mut().enumerate() {
            let path = format!("profile[{i}]");
            let kind = item
                .get("type")
                .and_then(|t| t.as_str())
                .map(str::to_string);
            let allowed: &[&str] = match kind.as_deref() {
                Some("power_law") => &["type", "mu"],
                Some("constant") => &["type", "value"],
                Some("two_block") => &["type", "values", "proportions"],
                Some("explicit") => &["type", "values"],
                _ => {
                    self.push(
                        join(&path, "type"),
                        "one of power_law, constant, two_block, explicit",
                    );
                    continue;
                }
            };
            let Some(map) = self.object(item, &path, allowed) else {
                continue;
            };
            match kind.as_deref() {
                Some("power_law") => {
                    if map.contains_key("mu") {
                        self.real(map, &path, "mu", Lo::Open(0.0), Hi::Open(0.5));
                    } else {
                        self.push(join(&path, "mu"), "required real in (0, 0.5)");
                    }
                }
                Some("constant") => {
                    if map.contains_key("value") {
                        self.real(map, &path, "value", Lo::Closed(1.0), Hi::None);
                    } else {
                        self.push(join(&path, "value"), "required real >= 1");
                    }
                }
                Some("two_block") => {
                    for key in ["values", "proportions"] {
                        match map.get(key) {
                            Some(v) => {
                                let lo = if key == "values" {
                                    Lo::Closed(1.0)
                                } else {
                                    Lo::Open(0.0)
                                };
                                self.pair(v, &join(&path, key), [lo, lo]);
                            }
                            None => self.push(join(&path, key), "required pair"),
                        }
                    }
                }
                _ => match map.get("values").and_then(|v| v.as_array()) {
                    Some(vals) => {
                        if let Some(n) = self.n {
                            if vals.len() != n {
                                self.push(
                                    join(&path, "values"),
                                    format!("expected {n} entries, found {}", vals.len()),
                                );
                            }
                        }
                        for (k, x) in vals.iter().enumerate() {
                            self.real_value(
                                x,
                                &format!("{path}.values[{k}]"),
                                Lo::Closed(1.0),
                                Hi::None,
                            );
                        }
                    }
                    None => self.push(join(&path, "values"), "required list of reals >= 1"),
                },
            }
        }
    }

    fn solver(&mut self, value: &mut Value) {
        let Some(map) = self.object(
            value,
            "solver",
            &["tol", "max_iter", "damping_floor", "history"],
        ) else {
            return;
        };
        self.real(map, "solver", "tol", Lo::Open(0.0), Hi::Closed(1e-2));
        self.integer(map, "solver", "max_iter", 1, Some(10_000_000));
        self.real(
            map,
            "solver",
            "damping_floor",
            Lo::Open(0.0),
            Hi::Closed(1.0),
        );
        self.integer(map, "solver", "history", 0, Some(64));
    }

    fn solve(&mut self, value: &mut Value) {
        const KEYS: &[&str] = &["points", "energies", "etas", "energy_range", "eta_range"];
        let Some(map) = self.object(value, "solve", KEYS) else {
            return;
        };
        self.points(map, "solve", "points");
        self.reals(map, "solve", "energies", Lo::None, Hi::None);
        self.reals(map, "solve", "etas", Lo::Open(0.0), Hi::None);
        for (key, lo) in [("energy_range", Lo::None), ("eta_range", Lo::Open(0.0))] {
            if let Some(v) = map.get_mut(key) {
                if !v.is_null() {
                    self.range(v, &join("solve", key), lo);
                }
            }
        }
    }

    fn range(&mut self, value: &mut Value, path: &str, lo: Lo) {
        let Some(map) = self.object(value, path, &["lower", "upper", "points", "spacing"]) else {
            return;
        };
        for key in ["lower", "upper", "points"] {
            if !map.contains_key(key) {
                self.push(join(path, key), "required");
            }
        }
        let a = self.real(map, path, "lower", lo, Hi::None);
        let b = self.real(map, path, "upper", lo, Hi::None);
        if let (Some(a), Some(b)) = (a, b) {
            if a > b {
                self.push(path.to_string(), "lower end exceeds upper end");
            }
        }
        self.integer(map, path, "points", 1, Some(100_000));
        let spacing = self.string_in(map, path, "spacing", &["linear", "log"]);
        if spacing.as_deref() == Some("log") && a.is_some_and(|a| a <= 0.0) {
            self.push(
                join(path, "lower"),
                "log spacing needs a positive lower end",
            );
        }
    }

    fn qve(&mut self, value: &mut Value) {
        let Some(map) = self.object(value, "qve", &["grid", "kernel", "value", "path", "points"])
        else {
            return;
        };
        if let Some(g) = map.get("grid") {
            let ok = g.as_u64().filter(|&x| x.is_power_of_two() && x <= 8192);
            if ok.is_none() {
                self.push("qve.grid".into(), "power of two in [1, 8192]");
            }
        }
        let kernel = self.string_in(map, "qve", "kernel", &["profile", "constant", "file"]);
        self.real(map, "qve", "value", Lo::Closed(0.0), Hi::None);
        self.path_value(map, "qve", "path");
        if kernel.as_deref() == Some("file") && map.get("path").is_none_or(|p| p.is_null()) {
            self.push("qve.path".into(), "required when kernel is \"file\"");
        }
        self.points(map, "qve", "points");
    }

    fn stats(&mut self, value: &mut Value) {
        let Some(map) = self.object(value, "stats", &["points", "pair_budget", "matrix_file"])
        else {
            return;
        };
        self.points(map, "stats", "points");
        self.integer(map, "stats", "pair_budget", 1, None);
        self.path_value(map, "stats", "matrix_file");
    }

    fn local_law(&mut self, value: &mut Value) {
        const KEYS: &[&str] = &[
            "energy_interval",
            "energy_points",
            "etas",
            "samples",
            "pair_budget",
            "delta",
            "bulk_threshold",
            "bulk_probe_eta",
            "ward_rows",
            "thresholds",
        ];
        let Some(map) = self.object(value, "local_law", KEYS) else {
            return;
        };
        if let Some(v) = map.get("energy_interval") {
            if let Some([a, b]) = self.pair(v, "local_law.energy_interval", [Lo::None, Lo::None]) {
                if a > b {
                    self.push(
                        "local_law.energy_interval".into(),
                        "lower end exceeds upper end",
                    );
                }
            }
        }
        self.integer(map, "local_law", "energy_points", 1, Some(10_000));
        self.reals(map, "local_law", "etas", Lo::Open(0.0), Hi::Closed(10.0));
        self.integer(map, "local_law", "samples", 1, None);
        self.integer(map, "local_law", "pair_budget", 1, None);
        self.real(map, "local_law", "delta", Lo::Open(0.0), Hi::Open(1.0));
        self.real(
            map,
            "local_law",
            "bulk_threshold",
            Lo::Closed(0.0),
            Hi::None,
        );
        self.real(
            map,
            "local_law",
            "bulk_probe_eta",
            Lo::Open(0.0),
            Hi::Closed(10.0),
        );
        self.integer(map, "local_law", "ward_rows", 0, None);
        if let Some(v) = map.get_mut("thresholds") {
            const T: &[&str] = &[
                "quantile",
                "lambda_over_phi",
                "schur_over_phi",
                "m_error_over_phi",
                "delocalization",
                "dyadic",
                "ward",
            ];
            if let Some(t) = self.object(v, "local_law.thresholds", T) {
                let p = "local_law.thresholds";
                self.real(t, p, "quantile", Lo::Open(0.0), Hi::Closed(1.0));
                for key in &T[1..] {
                    self.real(t, p, key, Lo::Open(0.0), Hi::None);
                }
            }
        }
    }

    fn universality(&mut self, value: &mut Value) {
        const KEYS: &[&str] = &[
            "samples",
            "goe_samples",
            "goe_seed",
            "bulk",
            "ks_threshold",
            "control_threshold",
            "null_check",
            "poisson_control",
        ];
        let Some(map) = self.object(value, "universality", KEYS) else {
            return;
        };
        let p = "universality";
        self.integer(map, p, "samples", 1, None);
        self.optional_integer(map, p, "goe_samples", 1, None);
        if let Some(v) = map.get("goe_seed") {
            if !(v.is_null() || v.as_u64().is_some()) {
                self.push("universality.goe_seed".into(), "unsigned 64-bit integer");
            }
        }
        if let Some(b) = map.get_mut("bulk") {
            let kind = b.get("type").and_then(|t| t.as_str()).map(str::to_string);
            match kind.as_deref() {
                Some("middle_third") => {
                    self.object(b, "universality.bulk", &["type"]);
                }
                Some("interval") => {
                    if let Some(m) =
                        self.object(b, "universality.bulk", &["type", "lower", "upper"])
                    {
                        let lo = self.real(m, "universality.bulk", "lower", Lo::None, Hi::None);
                        let hi = self.real(m, "universality.bulk", "upper", Lo::None, Hi::None);
                        match (lo, hi) {
                            (Some(a), Some(b)) if a < b => {}
                            (Some(_), Some(_)) => {
                                self.push("universality.bulk".into(), "lower must be below upper")
                            }
                            _ if !(m.contains_key("lower") && m.contains_key("upper")) => self
                                .push("universality.bulk".into(), "lower and upper are required"),
                            _ => {}
                        }
                    }
                }
                _ => self.push(
                    "universality.bulk.type".into(),
                    "one of middle_third, interval",
                ),
            }
        }
        self.real(map, p, "ks_threshold", Lo::Open(0.0), Hi::Closed(1.0));
        self.real(map, p, "control_threshold", Lo::Open(0.0), Hi::Closed(1.0));
        self.boolean(map, p, "null_check");
        self.boolean(map, p, "poisson_control");
    }

    fn degrees(&mut self, value: &mut Value) {
        const KEYS: &[&str] = &[
            "samples",
            "cutoff_quantile",
            "bootstrap",
            "confidence",
            "target",
        ];
        let Some(map) = self.object(value, "degrees", KEYS) else {
            return;
        };
        let p = "degrees";
        self.integer(map, p, "samples", 1, None);
        self.real(map, p, "cutoff_quantile", Lo::Open(0.0), Hi::Open(1.0));
        self.integer(map, p, "bootstrap", 0, None);
        self.real(map, p, "confidence", Lo::Open(0.0), Hi::Open(1.0));
        if let Some(v) = map.get("target") {
            if !v.is_null() {
                if let Some([a, b]) = self.pair(v, "degrees.target", [Lo::None, Lo::None]) {
                    if a > b {
                        self.push("degrees.target".into(), "lower end exceeds upper end");
                    }
                }
            }
        }
    }
}

/// Builds the ensemble used by a configuration or reports it as a violation.
pub fn build_ensemble(config: &RunConfig) -> Result<EnsembleSpec<f64>, ConfigError> {
    config.ensemble().map_err(|message| {
        ConfigError::SchemaViolation(vec![Violation {
            path: "profile".into(),
            message,
        }])
    })
}
