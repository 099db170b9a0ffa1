//! Run configuration: TOML parsing, defaults, validation and the digest.

use std::fmt;
use std::path::PathBuf;

use domsde_core::domain::{ExhaustionShape, SpaceTimeDomain};
use domsde_core::integrate::StepPolicy;
use domsde_core::models::ModelConfig;
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::fields::FieldSpec;

/// Everything a run needs. All defaults are materialized by deserialization,
/// so serializing a parsed config reproduces every effective setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(deserialize_with = "deserialize_model")]
    pub model: ModelConfig,
    pub seed: u64,
    pub n_paths: usize,
    pub horizon: f64,
    /// Initial position; the model default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    /// Initial time; the model default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_time: Option<f64>,
    /// Replaces the model's domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub policy: StepPolicy,
    /// Worker threads; all cores when absent. Never affects results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub lyapunov: LyapunovSpec,
    #[serde(default)]
    pub moments: MomentsSpec,
    #[serde(default)]
    pub krylov: KrylovSpec,
    #[serde(default)]
    pub runs: RunsSpec,
    #[serde(default)]
    pub girsanov: GirsanovSpec,
    #[serde(default)]
    pub norm: NormSpec,
    #[serde(default)]
    pub constants: ConstantsSpec,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Write per-path CSV files.
    pub paths: bool,
    /// Keep every `thin`-th recorded state in paths.csv.
    pub thin: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { paths: true, thin: 1 }
    }
}

/// Exponent and constant overrides shared by several subcommands. Missing
/// values come from the model's Lyapunov data, or from the ellipticity
/// bounds of `σσ*` on an exhaustion level.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Exponents {
    pub epsilon: Option<f64>,
    pub k1: Option<f64>,
    pub k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSpec {
    pub level: u32,
    pub grid: usize,
    pub moll_width: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    /// Constant `h` replacing the model's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Ellipticity bound to certify; only reported when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    pub integrability: bool,
    pub integrability_a: f64,
    pub integrability_r: f64,
    pub integrability_samples: usize,
}

impl Default for LyapunovSpec {
    fn default() -> Self {
        Self {
            level: 2,
            grid: 32,
            moll_width: 1e-3,
            epsilon: None,
            k1: None,
            h: None,
            k: None,
            integrability: true,
            integrability_a: 1.0,
            integrability_r: 2.0,
            integrability_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    /// Exhaustion level and grid used to bound the ellipticity constant.
    pub level: u32,
    pub grid: usize,
    pub terminal: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exp_functional: Option<ExpFunctionalSpec>,
}

impl MomentsSpec {
    pub fn exponents(&self) -> Exponents {
        Exponents {
            epsilon: self.epsilon,
            k1: self.k1,
            k: self.k,
        }
    }
}

impl Default for MomentsSpec {
    fn default() -> Self {
        Self {
            epsilon: None,
            k1: None,
            k: None,
            level: 2,
            grid: 16,
            terminal: true,
            exp_functional: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpFunctionalSpec {
    pub kappa: f64,
    pub g: FieldSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrylovSpec {
    /// Start `S` of the occupation window, relative to the start time.
    pub from: f64,
    pub p: f64,
    pub q: f64,
    pub grid: usize,
    /// Each function is also run at these multiples.
    pub scales: Vec<f64>,
    pub functions: Vec<KrylovFunctionSpec>,
}

impl Default for KrylovSpec {
    fn default() -> Self {
        Self {
            from: 0.0,
            p: 4.0,
            q: 4.0,
            grid: 32,
            scales: vec![1.0],
            functions: Vec::new(),
        }
    }
}

/// `f · 1_{[lo, hi]}`; the norm is taken over the same box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrylovFunctionSpec {
    pub name: String,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default = "unit_field")]
    pub f: FieldSpec,
}

fn unit_field() -> FieldSpec {
    FieldSpec::Constant { c: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunsSpec {
    pub level: u32,
    pub alpha: f64,
    /// Stopping time `S`; the horizon when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub until: Option<f64>,
}

impl Default for RunsSpec {
    fn default() -> Self {
        Self {
            level: 1,
            alpha: 0.25,
            until: None,
        }
    }
}

/// Alternative drift for reweighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AltDrift {
    Zero,
    /// The same constant in every coordinate.
    Constant {
        value: f64,
    },
    /// `-c x`.
    Linear {
        c: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GirsanovSpec {
    pub drift: AltDrift,
    /// Evaluated at the terminal state.
    pub test_function: FieldSpec,
}

impl Default for GirsanovSpec {
    fn default() -> Self {
        Self {
            drift: AltDrift::Linear { c: 1.0 },
            test_function: FieldSpec::Coordinate { index: 0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormSpec {
    pub f: FieldSpec,
    pub p: f64,
    pub q: f64,
    pub grid: usize,
    /// Time window relative to the start time; `to` defaults to the horizon.
    pub from: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    /// Explicit box; when absent the norm of `f·1_{Qⁿ}` is reported for each level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    pub levels: Vec<u32>,
}

impl Default for NormSpec {
    fn default() -> Self {
        Self {
            f: FieldSpec::GradPhi,
            p: 2.0,
            q: 2.0,
            grid: 32,
            from: 0.0,
            to: None,
            lo: None,
            hi: None,
            levels: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    pub level: u32,
    pub grid: usize,
}

impl ConstantsSpec {
    pub fn exponents(&self) -> Exponents {
        Exponents {
            epsilon: self.epsilon,
            k1: self.k1,
            k: self.k,
        }
    }
}

impl Default for ConstantsSpec {
    fn default() -> Self {
        Self {
            epsilon: None,
            k1: None,
            k: None,
            level: 2,
            grid: 16,
        }
    }
}

/// A domain replacing the model's own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainSpec {
    FullSpace {
        dim: usize,
    },
    HalfLine,
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Slab {
        dim: usize,
        axis: usize,
        lo: f64,
        hi: f64,
    },
    PuncturedPlane {
        dim: usize,
        axis: usize,
    },
    ExcludedBalls {
        dim: usize,
        centers: Vec<Vec<f64>>,
        radius: f64,
    },
    CollisionFree {
        m: usize,
        block: usize,
    },
    Product {
        factors: Vec<DomainSpec>,
    },
}

impl DomainSpec {
    pub fn build(&self) -> Result<SpaceTimeDomain, CliError> {
        let d = match self {
            DomainSpec::FullSpace { dim } => SpaceTimeDomain::full_space(*dim),
            DomainSpec::HalfLine => SpaceTimeDomain::half_line(),
            DomainSpec::Halfspace { normal, offset } => SpaceTimeDomain::halfspace(normal.clone(), *offset)?,
            DomainSpec::Box { lo, hi } => SpaceTimeDomain::open_box(lo.clone(), hi.clone())?,
            DomainSpec::Slab { dim, axis, lo, hi } => SpaceTimeDomain::slab(*dim, *axis, *lo, *hi)?,
            DomainSpec::PuncturedPlane { dim, axis } => SpaceTimeDomain::punctured_plane(*dim, *axis)?,
            DomainSpec::ExcludedBalls { dim, centers, radius } => {
                SpaceTimeDomain::excluded_balls(*dim, centers, *radius)?
            }
            DomainSpec::CollisionFree { m, block } => SpaceTimeDomain::collision_free(*m, *block),
            DomainSpec::Product { factors } => {
                let built = factors.iter().map(|f| f.build()).collect::<Result<Vec<_>, _>>()?;
                SpaceTimeDomain::product(&built)
            }
        };
        Ok(d.with_shape(ExhaustionShape::Ball))
    }
}

/// Accepts either `model = "ou"` or a table `{ name = "...", params = {...} }`.
fn deserialize_model<'de, D: Deserializer<'de>>(d: D) -> Result<ModelConfig, D::Error> {
    struct ModelVisitor;

    impl<'de> Visitor<'de> for ModelVisitor {
        type Value = ModelConfig;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            write!(f, "a model name or a table with `name` and `params`")
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<ModelConfig, E> {
            ModelConfig::from_name(v).ok_or_else(|| E::unknown_variant(v, &ModelConfig::NAMES))
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<ModelConfig, A::Error> {
            let mut name: Option<String> = None;
            let mut params = toml::Table::new();
            while let Some(key) = map.next_key::<String>()? {
                match key.as_str() {
                    "name" => name = Some(map.next_value()?),
                    "params" => params = map.next_value()?,
                    other => return Err(de::Error::unknown_field(other, &["name", "params"])),
                }
            }
            let name = name.ok_or_else(|| de::Error::missing_field("name"))?;
            if ModelConfig::from_name(&name).is_none() {
                return Err(de::Error::unknown_variant(&name, &ModelConfig::NAMES));
            }
            let mut table = toml::Table::new();
            table.insert("name".into(), toml::Value::String(name));
            table.insert("params".into(), toml::Value::Table(params));
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| de::Error::custom(e.message()))
        }
    }

    d.deserialize_any(ModelVisitor)
}

fn check_epsilon(where_: &str, eps: Option<f64>) -> Result<(), CliError> {
    match eps {
        Some(e) if !(0.0..2.0).contains(&e) => Err(CliError::Config(format!(
            "{where_}.epsilon = {e} is out of range: epsilon must lie in [0, 2)"
        ))),
        _ => Ok(()),
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_epsilon("lyapunov", self.lyapunov.epsilon)?;
        check_epsilon("moments", self.moments.epsilon)?;
        check_epsilon("constants", self.constants.epsilon)?;
        if let ModelConfig::Example62(p) = &self.model {
            if !(p.delta > 0.0) {
                return Err(CliError::Config("example-6-2 needs delta > 0".into()));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(CliError::Config(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        if self.start_time.is_some_and(|t| !(t >= 0.0)) {
            return Err(CliError::Config("start_time must be nonnegative".into()));
        }
        if self.n_paths == 0 {
            return Err(CliError::Config("n_paths must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if self.output.thin == 0 {
            return Err(CliError::Config("output.thin must be at least 1".into()));
        }
        self.policy.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring settings that cannot
    /// change any estimate (workers, output location and CSV emission).
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.out = default_out();
        c.output = OutputSpec::default();
        let bytes = serde_json::to_vec(&c).expect("config serializes to JSON");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "model = \"ou\"\nseed = 1\nn_paths = 100\nhorizon = 1.0\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.model, ModelConfig::from_name("ou").unwrap());
        assert_eq!(c.policy, StepPolicy::default());
        assert_eq!(c.out, PathBuf::from("out"));
        assert!(c.output.paths);
        assert_eq!(c.runs.alpha, 0.25);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse(&format!("{MINIMAL}fooo = 3\n"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("fooo"), "{err}");
        let err = RunConfig::parse(&format!("{MINIMAL}[policy]\ndt_maxx = 0.1\n"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("dt_maxx"), "{err}");
    }

    #[test]
    fn unknown_model_param_is_named() {
        let text = "seed = 1\nn_paths = 1\nhorizon = 1.0\n[model]\nname = \"ou\"\nparams = { dimm = 2 }\n";
        let err = RunConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("dimm"), "{err}");
    }

    #[test]
    fn missing_key_is_named() {
        let err = RunConfig::parse("model = \"ou\"\nseed = 1\nn_paths = 5\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("horizon"), "{err}");
    }

    #[test]
    fn epsilon_out_of_range_cites_interval() {
        let err = RunConfig::parse(&format!("{MINIMAL}[lyapunov]\nepsilon = 2.5\n"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("[0, 2)"), "{err}");
        let err = RunConfig::parse(&format!("{MINIMAL}[constants]\nepsilon = 2.0\n"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("[0, 2)"), "{err}");
    }

    #[test]
    fn unknown_model_lists_names() {
        let err = RunConfig::parse("model = \"nope\"\nseed = 1\nn_paths = 1\nhorizon = 1.0\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("nope") && err.contains("bessel-drift"), "{err}");
    }

    #[test]
    fn round_trip_with_tables() {
        let text = r#"
seed = 3
n_paths = 10
horizon = 2.0
start = [0.5, 0.5]
[model]
name = "random-media"
params = { points = [[0.0, 0.0], [3.0, 1.0]], potential = { kind = "quadratic", c = 0.5 } }
[domain]
type = "box"
lo = [-1.0, -1.0]
hi = [2.0, 2.0]
[moments.exp_functional]
kappa = 0.1
g = { kind = "radial-power", c = 1.0, power = 1.0 }
[[krylov.functions]]
name = "unit"
lo = [0.0, 0.0]
hi = [1.0, 1.0]
"#;
        let c = RunConfig::parse(text).unwrap();
        let back = RunConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.digest(), back.digest());
    }

    #[test]
    fn digest_ignores_workers_and_out() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.workers = Some(8);
        b.out = PathBuf::from("elsewhere");
        b.output.paths = false;
        assert_eq!(a.digest(), b.digest());
        b.seed = 2;
        assert_ne!(a.digest(), b.digest());
    }
}
