//! Run configuration, strict parsing, and the named presets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continuity::NewtonConfig;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, Gauge};
use crate::geometry::GeometryConfig;
use crate::spectral1d::{Field, Grid, DEFAULT_NODES};

/// Background given either by pole slopes or by orbifold weights `(a, b)`,
/// which stand for slopes `(2/b, 2/a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slopes: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<[f64; 2]>,
    #[serde(default = "default_nodes")]
    pub n: usize,
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            slopes: Some([2.0, 2.0]),
            weights: None,
            n: DEFAULT_NODES,
        }
    }
}

impl GeometrySpec {
    pub fn slopes(p_minus: f64, p_plus: f64, n: usize) -> Self {
        Self {
            slopes: Some([p_minus, p_plus]),
            weights: None,
            n,
        }
    }

    pub fn resolve(&self) -> Result<GeometryConfig> {
        let cfg = match (self.slopes, self.weights) {
            (Some([pm, pp]), None) => GeometryConfig::new(pm, pp, self.n),
            (None, Some([a, b])) => GeometryConfig::from_weights(a, b, self.n)?,
            (Some(_), Some(_)) => {
                return Err(Error::Config("geometry: give either `slopes` or `weights`, not both".into()))
            }
            (None, None) => return Err(Error::Config("geometry: one of `slopes` or `weights` is required".into())),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Initial potential family.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialPotential {
    #[default]
    Zero,
    /// `Σ c_k P_k(y)` keyed by the degree `k` written as a string.
    Legendre { coefficients: BTreeMap<String, f64> },
    /// JSON array of nodal values on the configured grid.
    Nodal { path: PathBuf },
}

impl InitialPotential {
    pub fn legendre(pairs: &[(usize, f64)]) -> Self {
        Self::Legendre {
            coefficients: pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        }
    }

    /// Nodal values on `grid`. Relative nodal paths resolve against `base`.
    pub fn realize(&self, grid: &Grid, base: Option<&Path>) -> Result<Field> {
        match self {
            Self::Zero => Ok(Field::zeros(grid.size())),
            Self::Legendre { coefficients } => {
                let mut parsed = Vec::with_capacity(coefficients.len());
                for (key, &v) in coefficients {
                    let k: usize = key
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("initial_potential: degree `{key}` is not an integer")))?;
                    if !v.is_finite() {
                        return Err(Error::Config(format!("initial_potential: coefficient {k} is not finite")));
                    }
                    parsed.push((k, v));
                }
                let top = parsed.iter().map(|p| p.0).max().unwrap_or(0);
                if top >= grid.size() {
                    return Err(Error::Config(format!(
                        "initial_potential: degree {top} needs more than {} nodes",
                        grid.size()
                    )));
                }
                let mut c = vec![0.0; top + 1];
                for (k, v) in parsed {
                    c[k] = v;
                }
                Ok(grid.from_legendre(&c))
            }
            Self::Nodal { path } => {
                let full = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| Error::Config(format!("initial_potential: {}: {e}", full.display())))?;
                let values: Vec<f64> = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("initial_potential: {}: {e}", full.display())))?;
                if values.len() != grid.size() {
                    return Err(Error::GridMismatch {
                        expected: grid.size(),
                        found: values.len(),
                    });
                }
                let f = Field::new(values);
                if !f.is_finite() {
                    return Err(Error::Config("initial_potential: non-finite nodal value".into()));
                }
                Ok(f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write the snapshot stream alongside the table and report.
    pub snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            snapshots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub initial_potential: InitialPotential,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub continuity: NewtonConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry: GeometrySpec::default(),
            initial_potential: InitialPotential::Zero,
            flow: FlowConfig::default(),
            continuity: NewtonConfig::default(),
            outputs: OutputConfig::default(),
            seed: 0,
        }
    }
}

pub const PRESETS: [&str; 3] = ["round", "perturbed-regular", "football-21"];

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.resolve()?;
        self.flow.validate()?;
        self.continuity.validate()
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        match name {
            "round" => {
                cfg.flow.t_end = 5.0;
            }
            "perturbed-regular" => {
                cfg.initial_potential = InitialPotential::legendre(&[(2, 0.3)]);
            }
            "football-21" => {
                cfg.geometry = GeometrySpec::slopes(2.0, 1.0, DEFAULT_NODES);
                cfg.flow.gauge = Gauge::Pinned;
            }
            other => {
                return Err(Error::Usage(format!(
                    "unknown preset `{other}`; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(cfg)
    }

    /// Parses JSON, or TOML when the text is not JSON-shaped.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
