//! JSON experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use dfsq::functions::{from_name, ProfileOptions};
use dfsq::{FunctionModel, Marginal, Regime, SourceModel};
use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;

/// A real number written either as a JSON number or as a decimal string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decimal(pub f64);

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Decimal;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a decimal string")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Decimal, E> {
                Ok(Decimal(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Decimal, E> {
                Ok(Decimal(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Decimal, E> {
                Ok(Decimal(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Decimal, E> {
                f64::from_str(v.trim())
                    .ok()
                    .filter(|x| x.is_finite())
                    .map(Decimal)
                    .ok_or_else(|| E::custom(format!("'{v}' is not a decimal number")))
            }
        }
        d.deserialize_any(V)
    }
}

/// `source` in the configuration, keyed by `kind`.
#[derive(Debug, Clone)]
pub enum SourceSpec {
    /// `n` iid uniform variables.
    Uniform { n: usize },
    /// `n` iid variables with density `(k+1) x^k`.
    Power { n: usize, k: Decimal },
    /// `n` iid variables, piecewise constant on equal bins.
    Piecewise { n: usize, probs: Vec<Decimal> },
    /// Piecewise-constant joint density on a `size^n` grid, last variable fastest.
    Grid { n: usize, size: usize, weights: Vec<Decimal> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformFields {
    n: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerFields {
    n: usize,
    k: Decimal,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PiecewiseFields {
    n: usize,
    probs: Vec<Decimal>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFields {
    n: usize,
    size: usize,
    weights: Vec<Decimal>,
}

fn fields<T: de::DeserializeOwned>(prefix: &str, value: serde_json::Value) -> Result<T, SchemaError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." { prefix.to_string() } else { format!("{prefix}.{inner}") };
        schema(path, e.into_inner())
    })
}

impl SourceSpec {
    fn parse(value: serde_json::Value) -> Result<Self, SchemaError> {
        let serde_json::Value::Object(mut obj) = value else {
            return Err(schema("source", "expected an object with a \"kind\""));
        };
        let kind = match obj.remove("kind") {
            Some(serde_json::Value::String(k)) => k,
            Some(_) => return Err(schema("source.kind", "expected a string")),
            None => return Err(schema("source", "missing field `kind`")),
        };
        let rest = serde_json::Value::Object(obj);
        Ok(match kind.as_str() {
            "uniform" => {
                let f: UniformFields = fields("source", rest)?;
                SourceSpec::Uniform { n: f.n }
            }
            "power" => {
                let f: PowerFields = fields("source", rest)?;
                SourceSpec::Power { n: f.n, k: f.k }
            }
            "piecewise" => {
                let f: PiecewiseFields = fields("source", rest)?;
                SourceSpec::Piecewise { n: f.n, probs: f.probs }
            }
            "grid" => {
                let f: GridFields = fields("source", rest)?;
                SourceSpec::Grid { n: f.n, size: f.size, weights: f.weights }
            }
            other => {
                return Err(schema(
                    "source.kind",
                    format!("unknown kind '{other}', expected uniform, power, piecewise or grid"),
                ))
            }
        })
    }

    pub fn n(&self) -> usize {
        match self {
            SourceSpec::Uniform { n }
            | SourceSpec::Power { n, .. }
            | SourceSpec::Piecewise { n, .. }
            | SourceSpec::Grid { n, .. } => *n,
        }
    }

    fn build(&self, n: usize) -> dfsq::Result<SourceModel> {
        match self {
            SourceSpec::Uniform { .. } => SourceModel::uniform(n),
            SourceSpec::Power { k, .. } => SourceModel::iid(n, Marginal::power(k.0)?),
            SourceSpec::Piecewise { probs, .. } => {
                SourceModel::iid(n, Marginal::piecewise(probs.iter().map(|p| p.0).collect())?)
            }
            SourceSpec::Grid { size, weights, .. } => {
                SourceModel::grid(n, *size, weights.iter().map(|w| w.0).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<Decimal>,
}

fn default_samples() -> usize {
    1 << 20
}

fn default_grid_size() -> usize {
    1024
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    source: serde_json::Value,
    pub function: FunctionSpec,
    pub regime: String,
    /// Bits per variable, `R̄`.
    pub rates: Vec<Decimal>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Numbers of variables for a sweep over `n`.
    #[serde(default)]
    pub n_values: Option<Vec<usize>>,
}

/// A problem with a field path, reported with exit status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn schema(path: impl Into<String>, message: impl fmt::Display) -> SchemaError {
    SchemaError { path: path.into(), message: message.to_string() }
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: Config,
    pub source: SourceSpec,
    pub regime: Regime,
    pub rates: Vec<f64>,
}

impl Experiment {
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(if path == "." { "(root)".to_string() } else { path }, e.into_inner())
        })?;
        Self::validate(config)
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|e| schema("(file)", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(config: Config) -> Result<Self, SchemaError> {
        let source = SourceSpec::parse(config.source.clone())?;
        let regime = Regime::from_str(&config.regime).map_err(|e| schema("regime", e))?;
        if config.rates.is_empty() {
            return Err(schema("rates", "at least one rate is required"));
        }
        for (i, r) in config.rates.iter().enumerate() {
            if !(r.0 >= 0.0) {
                return Err(schema(format!("rates[{i}]"), format!("rate must be nonnegative, got {}", r.0)));
            }
        }
        if config.samples == 0 {
            return Err(schema("samples", "at least one sample is required"));
        }
        if config.grid_size < 2 {
            return Err(schema("grid_size", "need at least two grid points"));
        }
        if source.n() == 0 {
            return Err(schema("source.n", "need at least one variable"));
        }
        if let Some(ns) = &config.n_values {
            if ns.is_empty() {
                return Err(schema("n_values", "list is empty"));
            }
            if let Some(i) = ns.iter().position(|&n| n == 0) {
                return Err(schema(format!("n_values[{i}]"), "need at least one variable"));
            }
            if matches!(source, SourceSpec::Grid { .. }) {
                return Err(schema("n_values", "a grid source has a fixed number of variables"));
            }
        }
        let rates = config.rates.iter().map(|r| r.0).collect();
        let exp = Experiment { config, source, regime, rates };
        for n in exp.n_list() {
            exp.instance(n)?;
        }
        Ok(exp)
    }

    /// Numbers of variables to run: `n_values` if given, else the source's `n`.
    pub fn n_list(&self) -> Vec<usize> {
        self.config.n_values.clone().unwrap_or_else(|| vec![self.source.n()])
    }

    /// Source and function with `n` variables.
    pub fn instance(&self, n: usize) -> Result<(SourceModel, Arc<dyn FunctionModel>), SchemaError> {
        let source = self.source.build(n).map_err(|e| schema("source", e))?;
        let params: Vec<f64> = self.config.function.params.iter().map(|p| p.0).collect();
        let g = from_name(&self.config.function.name, Some(n), &params).map_err(|e| schema("function", e))?;
        if g.arity() != n {
            return Err(schema(
                "function",
                format!("{} takes {} variables but the source has {n}", self.config.function.name, g.arity()),
            ));
        }
        Ok((source, g))
    }

    pub fn profile_options(&self) -> ProfileOptions {
        ProfileOptions { grid_size: self.config.grid_size, seed: self.config.seed, ..ProfileOptions::default() }
    }
}
