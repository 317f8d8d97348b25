//! System definitions: the JSON file format consumed by the CLI and the
//! built-in systems addressable by name (`ws`, `trig`, `damped`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{self, ModelError};
use crate::phase::{HamiltonianFunction, ParseError, Section, StructureKind};

/// On-disk system definition:
/// `{ "n": int, "structure": "symplectic|cosymplectic|contact",
///    "hamiltonian": string, "params": {name: real},
///    "section": [string per component] }` with `params` and `section`
/// optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n: usize,
    pub structure: StructureKind,
    pub hamiltonian: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<Vec<String>>,
}

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid system file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown system `{0}` (not a built-in name and not a readable file)")]
    Unknown(String),
    #[error("parameter `{name}` must be a number, got `{value}`")]
    BadParameter { name: String, value: String },
}

/// A resolved dynamical system: structure, Hamiltonian, optional section,
/// and a default singularity guard for `q`-singular potentials.
#[derive(Debug, Clone)]
pub struct System {
    pub name: String,
    pub kind: StructureKind,
    pub hamiltonian: HamiltonianFunction,
    pub section: Option<Section>,
    /// Default `|q|` floor for integration; `Some` marks the system as
    /// `q`-singular.
    pub default_q_min: Option<f64>,
}

impl System {
    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn from_config(name: &str, cfg: &SystemConfig) -> Result<Self, SystemError> {
        let hamiltonian =
            HamiltonianFunction::parse(&cfg.hamiltonian, cfg.n, cfg.params.clone())?;
        let section = cfg
            .section
            .as_ref()
            .map(|texts| Section::parse(texts, cfg.n, cfg.params.clone()))
            .transpose()?;
        Ok(Self {
            name: name.to_string(),
            kind: cfg.structure,
            hamiltonian,
            section,
            default_q_min: None,
        })
    }

    pub fn from_json(name: &str, text: &str) -> Result<Self, SystemError> {
        let cfg: SystemConfig = serde_json::from_str(text)?;
        Self::from_config(name, &cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, SystemError> {
        let text = fs::read_to_string(path).map_err(|source| SystemError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::from_json(&name, &text)
    }

    /// A built-in system by name, or `None` if the name is not built in.
    ///
    /// Recognized names and their parameters (all optional):
    /// - `ws`: `k` (default 1), frequency expression `omega` (default `1`);
    ///   cosymplectic, `q`-singular with a default guard of `1e-6`.
    /// - `trig`: `alpha` (default 1), `w` (default 1); cosymplectic.
    /// - `damped`: `m` (default 1), `alpha` (default 0.1), potential
    ///   expression `potential` (default `0.5*q1^2`); contact.
    pub fn builtin(name: &str, options: &BuiltinOptions) -> Result<Option<Self>, SystemError> {
        let system = match name {
            "ws" => {
                let k = options.number("k", 1.0);
                let omega = options.omega.as_deref().unwrap_or("1");
                Self {
                    name: name.to_string(),
                    kind: StructureKind::Cosymplectic,
                    hamiltonian: models::ws_hamiltonian(k, omega)?,
                    section: None,
                    default_q_min: Some(1e-6),
                }
            }
            "trig" => {
                let alpha = options.number("alpha", 1.0);
                let w = options.number("w", 1.0);
                Self {
                    name: name.to_string(),
                    kind: StructureKind::Cosymplectic,
                    hamiltonian: models::trig_hamiltonian(alpha, w),
                    section: None,
                    default_q_min: None,
                }
            }
            "damped" => {
                let m = options.number("m", 1.0);
                let alpha = options.number("alpha", 0.1);
                let v = options.potential.as_deref().unwrap_or("0.5*q1^2");
                Self {
                    name: name.to_string(),
                    kind: StructureKind::Contact,
                    hamiltonian: models::damped_hamiltonian(m, alpha, v)?,
                    section: None,
                    default_q_min: None,
                }
            }
            _ => return Ok(None),
        };
        Ok(Some(system))
    }

    /// Resolve a name: built-ins first, then the filesystem.
    pub fn resolve(name: &str, options: &BuiltinOptions) -> Result<Self, SystemError> {
        if let Some(system) = Self::builtin(name, options)? {
            return Ok(system);
        }
        let path = Path::new(name);
        if path.is_file() {
            return Self::from_file(path);
        }
        Err(SystemError::Unknown(name.to_string()))
    }
}

/// Parameter overrides for built-in systems.
#[derive(Debug, Clone, Default)]
pub struct BuiltinOptions {
    pub params: BTreeMap<String, f64>,
    /// Frequency expression in `t` for `ws`.
    pub omega: Option<String>,
    /// Potential expression in `q1` for `damped`.
    pub potential: Option<String>,
}

impl BuiltinOptions {
    fn number(&self, name: &str, default: f64) -> f64 {
        self.params.get(name).copied().unwrap_or(default)
    }
}
