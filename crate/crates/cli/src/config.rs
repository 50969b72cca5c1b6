//! Run configuration: a flat file of dotted keys (`model.mu = 1.5`) plus
//! command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use epd_core::epd_solver::GridSpec;
use epd_core::exponents::{p_strauss, ModelParams};
use epd_core::test_functions::{AngleQuad, TestFunctionParams};
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}` expects {expected}, got `{got}`")]
    Type {
        key: String,
        expected: &'static str,
        got: String,
    },
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Str,
    FloatList,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Int => "an integer",
            Kind::Float => "a number",
            Kind::Bool => "a boolean",
            Kind::Str => "a string",
            Kind::FloatList => "a list of numbers",
        }
    }
}

const KEYS: &[(&str, Kind)] = &[
    ("model.n", Kind::Int),
    ("model.mu", Kind::Float),
    ("model.alpha", Kind::Float),
    ("model.p", Kind::Float),
    ("model.eps", Kind::Float),
    ("grid.dr", Kind::Float),
    ("grid.cfl", Kind::Float),
    ("grid.t_budget", Kind::Float),
    ("grid.r_max", Kind::Float),
    ("grid.threshold", Kind::Float),
    ("solver.refine", Kind::Bool),
    ("solver.causal_window", Kind::Bool),
    ("testfn.panel_nodes", Kind::Int),
    ("testfn.lambda_rel_tol", Kind::Float),
    ("testfn.angle_nodes", Kind::Int),
    ("functional.snapshot_dt", Kind::Float),
    ("functional.r_stride", Kind::Int),
    ("functional.cache_spacing", Kind::Float),
    ("output.dir", Kind::Str),
    ("output.snapshots", Kind::FloatList),
];

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, kind)| *kind)
}

/// Raw key/value settings, validated against [`KEYS`] on insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, Value>);

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", table, &mut flat);
        let mut out = Settings::default();
        for (k, v) in flat {
            out.set(&k, v)?;
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: Value) -> Result<(), ConfigError> {
        let kind = kind_of(key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let value = coerce(key, kind, value)?;
        self.0.insert(key.to_string(), value);
        Ok(())
    }

    /// `key=value` with the value in TOML syntax; bare words are strings.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse(format!("expected key=value, got `{assignment}`")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = match format!("v = {raw}").parse::<Table>() {
            Ok(mut t) => t.remove("v").unwrap_or(Value::String(raw.to_string())),
            Err(_) => Value::String(raw.to_string()),
        };
        self.set(key, value)
    }

    fn float(&self, key: &str) -> Option<f64> {
        self.0.get(key).and_then(Value::as_float)
    }

    fn int(&self, key: &str) -> Option<i64> {
        self.0.get(key).and_then(Value::as_integer)
    }

    fn boolean(&self, key: &str) -> Option<bool> {
        self.0.get(key).and_then(Value::as_bool)
    }

    fn string(&self, key: &str) -> Option<&str> {
        self.0.get(key).and_then(Value::as_str)
    }

    fn floats(&self, key: &str) -> Option<Vec<f64>> {
        self.0
            .get(key)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_float).collect())
    }
}

fn flatten(prefix: &str, table: Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other);
            }
        }
    }
}

fn coerce(key: &str, kind: Kind, value: Value) -> Result<Value, ConfigError> {
    let bad = |v: &Value| ConfigError::Type {
        key: key.to_string(),
        expected: kind.name(),
        got: v.to_string(),
    };
    let as_f64 = |v: &Value| match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    };
    match kind {
        Kind::Int => match value {
            Value::Integer(_) => Ok(value),
            _ => Err(bad(&value)),
        },
        Kind::Float => as_f64(&value).map(Value::Float).ok_or_else(|| bad(&value)),
        Kind::Bool => match value {
            Value::Boolean(_) => Ok(value),
            _ => Err(bad(&value)),
        },
        Kind::Str => match value {
            Value::String(_) => Ok(value),
            _ => Err(bad(&value)),
        },
        Kind::FloatList => match &value {
            Value::Array(items) => items
                .iter()
                .map(|v| as_f64(v).map(Value::Float).ok_or_else(|| bad(&value)))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array),
            v => as_f64(v).map(|x| Value::Array(vec![Value::Float(x)])).ok_or_else(|| bad(&value)),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestfnSettings {
    pub panel_nodes: usize,
    pub lambda_rel_tol: f64,
    pub angle_nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSettings {
    pub snapshot_dt: f64,
    pub r_stride: usize,
    pub cache_spacing: f64,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grid: GridSpec,
    pub refine: bool,
    pub causal_window: bool,
    pub testfn: TestfnSettings,
    pub functional: FunctionalSettings,
    pub output_dir: PathBuf,
    pub emit_snapshots: Vec<f64>,
}

fn positive_int(s: &Settings, key: &str, default: usize) -> Result<usize, ConfigError> {
    match s.int(key) {
        None => Ok(default),
        Some(v) if v > 0 => Ok(v as usize),
        Some(v) => Err(ConfigError::Invalid(format!("{key} must be positive, got {v}"))),
    }
}

impl RunConfig {
    /// Resolves settings against the defaults. An empty set gives the
    /// canonical run n = 3, μ = 1, α = 0, p = p_S = 2, ε = 1. An unset
    /// `model.p` resolves to p_S(n, μ, α).
    pub fn resolve(s: &Settings) -> Result<Self, ConfigError> {
        let n = match s.int("model.n") {
            None => 3,
            Some(v) if (2..=64).contains(&v) => v as u32,
            Some(v) => return Err(ConfigError::Invalid(format!("model.n must lie in [2, 64], got {v}"))),
        };
        let mu = s.float("model.mu").unwrap_or(1.0);
        let alpha = s.float("model.alpha").unwrap_or(0.0);
        let p = match s.float("model.p") {
            Some(p) => p,
            None => p_strauss(n as f64, mu, alpha).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        };
        let model = ModelParams {
            n,
            mu,
            alpha,
            p,
            epsilon: s.float("model.eps").unwrap_or(1.0),
        };
        model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let dr = s.float("grid.dr").unwrap_or(0.01);
        let cfl = s.float("grid.cfl").unwrap_or(0.5);
        let t_budget = s.float("grid.t_budget").unwrap_or(50.0);
        let mut grid = GridSpec::new(dr, cfl, t_budget);
        if let Some(r_max) = s.float("grid.r_max") {
            grid.r_max = r_max;
        }
        if let Some(th) = s.float("grid.threshold") {
            grid.blowup_threshold = th;
        }
        grid.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let testfn = TestfnSettings {
            panel_nodes: positive_int(s, "testfn.panel_nodes", 16)?,
            lambda_rel_tol: s.float("testfn.lambda_rel_tol").unwrap_or(1e-10),
            angle_nodes: positive_int(s, "testfn.angle_nodes", 128)?,
        };
        if !(testfn.lambda_rel_tol > 0.0 && testfn.lambda_rel_tol < 1.0) {
            return Err(ConfigError::Invalid("testfn.lambda_rel_tol must lie in (0, 1)".into()));
        }
        let functional = FunctionalSettings {
            snapshot_dt: s.float("functional.snapshot_dt").unwrap_or(0.05),
            r_stride: positive_int(s, "functional.r_stride", 2)?,
            cache_spacing: s.float("functional.cache_spacing").unwrap_or(0.05),
        };
        if !(functional.snapshot_dt > 0.0 && functional.cache_spacing > 0.0) {
            return Err(ConfigError::Invalid(
                "functional.snapshot_dt and functional.cache_spacing must be positive".into(),
            ));
        }
        let mut emit_snapshots = s.floats("output.snapshots").unwrap_or_default();
        if emit_snapshots.iter().any(|&t| !(0.0..=t_budget).contains(&t)) {
            return Err(ConfigError::Invalid(format!("output.snapshots must lie in [0, {t_budget}]")));
        }
        emit_snapshots.sort_by(f64::total_cmp);
        emit_snapshots.dedup();

        Ok(Self {
            model,
            grid,
            refine: s.boolean("solver.refine").unwrap_or(true),
            causal_window: s.boolean("solver.causal_window").unwrap_or(true),
            testfn,
            functional,
            output_dir: PathBuf::from(s.string("output.dir").unwrap_or("out")),
            emit_snapshots,
        })
    }

    pub fn test_function_params(&self) -> epd_core::Result<TestFunctionParams> {
        let mut tf = TestFunctionParams::from_model(&self.model)?;
        tf.lambda_quad.panel_nodes = self.testfn.panel_nodes;
        tf.lambda_quad.rel_tol = self.testfn.lambda_rel_tol;
        tf.angle_quad = AngleQuad::new(self.testfn.angle_nodes);
        Ok(tf)
    }

    /// Every key with its resolved value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let f = |x: f64| format!("{x:.16e}");
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|&x| f(x)).collect::<Vec<_>>().join(", "));
        let m = &self.model;
        let lines = [
            ("model.n", m.n.to_string()),
            ("model.mu", f(m.mu)),
            ("model.alpha", f(m.alpha)),
            ("model.p", f(m.p)),
            ("model.eps", f(m.epsilon)),
            ("grid.dr", f(self.grid.dr)),
            ("grid.cfl", f(self.grid.cfl)),
            ("grid.t_budget", f(self.grid.t_budget)),
            ("grid.r_max", f(self.grid.r_max)),
            ("grid.threshold", f(self.grid.blowup_threshold)),
            ("solver.refine", self.refine.to_string()),
            ("solver.causal_window", self.causal_window.to_string()),
            ("testfn.panel_nodes", self.testfn.panel_nodes.to_string()),
            ("testfn.lambda_rel_tol", f(self.testfn.lambda_rel_tol)),
            ("testfn.angle_nodes", self.testfn.angle_nodes.to_string()),
            ("functional.snapshot_dt", f(self.functional.snapshot_dt)),
            ("functional.r_stride", self.functional.r_stride.to_string()),
            ("functional.cache_spacing", f(self.functional.cache_spacing)),
            ("output.dir", Value::String(self.output_dir.to_string_lossy().into_owned()).to_string()),
            ("output.snapshots", list(&self.emit_snapshots)),
        ];
        let mut out = String::new();
        for (k, v) in lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
