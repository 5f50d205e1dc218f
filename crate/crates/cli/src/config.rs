//! Experiment specification: a flat `key = value` format with `[sections]`,
//! or the equivalent JSON document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use missdag::datagen::{GraphModel, GraphSpec, Mechanism, MissingnessSpec};
use missdag::model::NoiseFamily;
use missdag::mstep::{ModelClass, SolverConfig, SolverMethod};
use serde::Deserialize;

use crate::AppError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub graph: GraphSection,
    pub sem: SemSection,
    pub missingness: MissingnessSection,
    pub methods: MethodsSection,
    pub run: RunSection,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub d: usize,
    pub k: f64,
    pub model: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemSection {
    pub function: String,
    pub noise: String,
    pub n: usize,
    /// Equal-scale value; per-node scales are drawn from Uniform[1,2] when
    /// `equal_scale = false`.
    #[serde(default = "default_scale")]
    pub noise_scale: f64,
    #[serde(default = "default_true")]
    pub equal_scale: bool,
    /// Hidden width of the generating MLPs (nonlinear function only).
    #[serde(default = "default_gen_hidden")]
    pub gen_hidden: usize,
}

fn default_scale() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_gen_hidden() -> usize {
    100
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingnessSection {
    pub mechanisms: Vec<String>,
    pub rates: Vec<f64>,
    #[serde(default = "default_fully_observed")]
    pub fully_observed_fraction: f64,
}

fn default_fully_observed() -> f64 {
    0.3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodsSection {
    pub methods: Vec<String>,
    pub model_class: String,
    #[serde(default = "default_solver")]
    pub solver: String,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub threshold: Option<f64>,
    pub mlp_hidden: Option<usize>,
    #[serde(default)]
    pub include_logdet: bool,
}

fn default_solver() -> String {
    "hard_al".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    #[serde(default = "default_em_iters")]
    pub em_iters: usize,
    #[serde(default = "default_ns")]
    pub ns: usize,
}

fn default_em_iters() -> usize {
    10
}

fn default_ns() -> usize {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::config(format!("cannot read {}: {e}", path.display())))?;
        let looks_like_json = text.trim_start().starts_with('{')
            || path.extension().is_some_and(|ext| ext == "json");
        let spec: ExperimentSpec = if looks_like_json {
            serde_json::from_str(&text)
                .map_err(|e| AppError::config(format!("bad JSON spec: {e}")))?
        } else {
            let sections = parse_sections(&text)?;
            let json = sections_to_json(&sections)?;
            serde_json::from_value(json)
                .map_err(|e| AppError::config(format!("bad spec: {e}")))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), AppError> {
        if self.run.seeds.is_empty() {
            return Err(AppError::config("run.seeds must be nonempty"));
        }
        if self.methods.methods.is_empty() {
            return Err(AppError::config("methods.methods must be nonempty"));
        }
        if self.missingness.mechanisms.is_empty() || self.missingness.rates.is_empty() {
            return Err(AppError::config(
                "missingness.mechanisms and missingness.rates must be nonempty",
            ));
        }
        self.graph_model()?;
        self.noise_family()?;
        self.model_class()?;
        for m in &self.missingness.mechanisms {
            parse_mechanism(m)?;
        }
        for name in &self.methods.methods {
            crate::methods::Method::parse(name)?;
        }
        let function = self.sem.function.as_str();
        if !matches!(function, "linear" | "mlp") {
            return Err(AppError::config(format!(
                "sem.function must be linear or mlp, got {function:?}"
            )));
        }
        // Solver model class and generating SEM must be compatible.
        let class = self.model_class()?;
        match (function, class) {
            ("mlp", ModelClass::MlpAnm) | ("linear", ModelClass::MlpAnm) => {}
            ("mlp", other) => {
                return Err(AppError::config(format!(
                    "nonlinear data requires model_class = mlp_anm, got {other:?}"
                )))
            }
            ("linear", _) => {}
            _ => unreachable!(),
        }
        Ok(())
    }

    pub fn graph_model(&self) -> Result<GraphModel, AppError> {
        match self.graph.model.as_str() {
            "er" => Ok(GraphModel::Er),
            "sf" => Ok(GraphModel::Sf),
            other => Err(AppError::config(format!(
                "graph.model must be er or sf, got {other:?}"
            ))),
        }
    }

    pub fn noise_family(&self) -> Result<NoiseFamily, AppError> {
        parse_noise_family(&self.sem.noise)
    }

    pub fn model_class(&self) -> Result<ModelClass, AppError> {
        parse_model_class(&self.methods.model_class)
    }

    pub fn graph_spec(&self, seed: u64) -> Result<GraphSpec, AppError> {
        Ok(GraphSpec {
            d: self.graph.d,
            k: self.graph.k,
            model: self.graph_model()?,
            seed,
        })
    }

    pub fn missingness_spec(&self, mechanism: &str, rate: f64) -> Result<MissingnessSpec, AppError> {
        let mut spec = MissingnessSpec::new(parse_mechanism(mechanism)?, rate)
            .map_err(|e| AppError::config(e.to_string()))?;
        spec.fully_observed_fraction = self.missingness.fully_observed_fraction;
        Ok(spec)
    }

    pub fn solver_config(&self) -> Result<SolverConfig, AppError> {
        let class = self.model_class()?;
        let mut cfg = match self.methods.solver.as_str() {
            "hard_al" => SolverConfig::for_class(class),
            "soft" => SolverConfig::soft(class),
            "exhaustive" => {
                let mut c = SolverConfig::for_class(class);
                c.method = SolverMethod::ExhaustiveExact;
                c
            }
            other => {
                return Err(AppError::config(format!(
                    "methods.solver must be hard_al, soft, or exhaustive, got {other:?}"
                )))
            }
        };
        if let Some(l1) = self.methods.lambda1 {
            cfg.lambda1 = l1;
        }
        if let Some(l2) = self.methods.lambda2 {
            cfg.lambda2 = l2;
        }
        if let Some(t) = self.methods.threshold {
            cfg.threshold = t;
        }
        if let Some(h) = self.methods.mlp_hidden {
            cfg.mlp_hidden = h;
        }
        cfg.include_logdet = self.methods.include_logdet;
        Ok(cfg)
    }
}

pub fn parse_mechanism(name: &str) -> Result<Mechanism, AppError> {
    match name {
        "mcar" => Ok(Mechanism::Mcar),
        "mar" => Ok(Mechanism::Mar),
        "mnar" => Ok(Mechanism::Mnar),
        other => Err(AppError::config(format!(
            "mechanism must be mcar, mar, or mnar, got {other:?}"
        ))),
    }
}

pub fn parse_noise_family(name: &str) -> Result<NoiseFamily, AppError> {
    match name {
        "gaussian_ev" => Ok(NoiseFamily::GaussianEv),
        "gaussian_nv" => Ok(NoiseFamily::GaussianNv),
        "gumbel" => Ok(NoiseFamily::Gumbel),
        "laplace" => Ok(NoiseFamily::Laplace),
        "exponential" => Ok(NoiseFamily::Exponential),
        other => Err(AppError::config(format!("unknown noise family {other:?}"))),
    }
}

pub fn parse_model_class(name: &str) -> Result<ModelClass, AppError> {
    match name {
        "linear_gaussian_ev" => Ok(ModelClass::LinearGaussianEv),
        "linear_gaussian_nv" => Ok(ModelClass::LinearGaussianNv),
        "linear_logcosh" => Ok(ModelClass::LinearLogCosh),
        "mlp_anm" => Ok(ModelClass::MlpAnm),
        other => Err(AppError::config(format!("unknown model class {other:?}"))),
    }
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

fn parse_sections(text: &str) -> Result<Sections, AppError> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            let name = line[1..line.len() - 1].trim().to_string();
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(AppError::config(format!(
                "line {}: expected `key = value`, got {raw:?}",
                lineno + 1
            )));
        };
        let Some(section) = &current else {
            return Err(AppError::config(format!(
                "line {}: key before any [section]",
                lineno + 1
            )));
        };
        sections
            .get_mut(section)
            .expect("section inserted above")
            .insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(sections)
}

/// Converts the flat sections into the JSON shape `ExperimentSpec` expects,
/// typing values by field.
fn sections_to_json(sections: &Sections) -> Result<serde_json::Value, AppError> {
    use serde_json::{Map, Value};
    let mut root = Map::new();
    for (section, entries) in sections {
        let mut obj = Map::new();
        for (key, value) in entries {
            let typed: Value = match (section.as_str(), key.as_str()) {
                ("graph", "d")
                | ("sem", "n")
                | ("sem", "gen_hidden")
                | ("methods", "mlp_hidden")
                | ("run", "em_iters")
                | ("run", "ns") => Value::from(parse_number::<u64>(section, key, value)?),
                ("graph", "k")
                | ("sem", "noise_scale")
                | ("missingness", "fully_observed_fraction")
                | ("methods", "lambda1")
                | ("methods", "lambda2")
                | ("methods", "threshold") => {
                    Value::from(parse_number::<f64>(section, key, value)?)
                }
                ("sem", "equal_scale") | ("methods", "include_logdet") => {
                    Value::from(parse_bool(section, key, value)?)
                }
                ("missingness", "rates") => Value::from(
                    split_list(value)
                        .iter()
                        .map(|v| parse_number::<f64>(section, key, v))
                        .collect::<Result<Vec<_>, _>>()?,
                ),
                ("run", "seeds") => Value::from(parse_seed_list(value)?),
                ("missingness", "mechanisms") | ("methods", "methods") => Value::from(
                    split_list(value)
                        .into_iter()
                        .map(Value::from)
                        .collect::<Vec<_>>(),
                ),
                _ => Value::from(value.clone()),
            };
            obj.insert(key.clone(), typed);
        }
        root.insert(section.clone(), Value::Object(obj));
    }
    Ok(Value::Object(root))
}

fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Seeds accept either a comma list or an inclusive-exclusive range `a..b`.
fn parse_seed_list(value: &str) -> Result<Vec<u64>, AppError> {
    if let Some((lo, hi)) = value.split_once("..") {
        let lo: u64 = parse_number("run", "seeds", lo.trim())?;
        let hi: u64 = parse_number("run", "seeds", hi.trim())?;
        if hi <= lo {
            return Err(AppError::config(format!("empty seed range {value:?}")));
        }
        return Ok((lo..hi).collect());
    }
    split_list(value)
        .iter()
        .map(|v| parse_number::<u64>("run", "seeds", v))
        .collect()
}

fn parse_number<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T, AppError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| {
        AppError::config(format!("[{section}] {key} = {value:?} is not a number: {e}"))
    })
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool, AppError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(AppError::config(format!(
            "[{section}] {key} = {other:?} is not a boolean"
        ))),
    }
}
