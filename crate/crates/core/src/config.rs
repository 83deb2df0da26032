//! Run configuration in TOML with sections `[model]`, `[memory]` and `[run]`.
//!
//! ```toml
//! [model]
//! kind = "generalized"          # overdamped | underdamped | generalized
//! d = 1
//! beta = 1.0
//! gamma = 1.0                   # underdamped only
//! potential.kind = "quadratic"  # quadratic | double_well
//! potential.params = [1.0]      # [omega2] or [a, b]
//! interaction.eta2 = 1.0
//!
//! [memory]
//! m = 1
//! lambda = [1.0]                # row-major, (d*m) x d
//! diag = [1.0]                  # or A = [...] row-major, (d*m) x (d*m)
//!
//! [run]
//! N = 10000
//! T = 2.0
//! dt = 0.001
//! seed = 7
//! record_every = 100
//! ```
//!
//! Unknown keys are rejected.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::model::{validate, DynamicsKind, InteractionSpec, MemorySpec, ModelSpec, PotentialSpec, ValidatedModel};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub memory: Option<MemorySection>,
    pub run: Option<RunSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: DynamicsKind,
    #[serde(default = "one")]
    pub d: usize,
    pub beta: f64,
    pub gamma: Option<f64>,
    pub potential: PotentialSection,
    pub interaction: Option<InteractionSection>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PotentialName {
    Quadratic,
    DoubleWell,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    pub kind: PotentialName,
    pub params: Vec<f64>,
    pub offset: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InteractionSection {
    pub eta2: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MemorySection {
    pub m: usize,
    pub lambda: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Option<Vec<f64>>,
    pub diag: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub record_every: Option<u64>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn run(&self) -> RunSection {
        self.run.clone().unwrap_or_default()
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let p = &m.potential;
        let potential = match (p.kind, p.params.as_slice()) {
            (PotentialName::Quadratic, [w]) => PotentialSpec::quadratic(*w),
            (PotentialName::DoubleWell, [a, b]) => PotentialSpec::double_well(*a, *b),
            (kind, params) => {
                return Err(Error::Config(format!("potential {kind:?} got {} parameters", params.len())))
            }
        }
        .with_offset(p.offset.unwrap_or(0.0));
        let interaction = match &m.interaction {
            Some(i) => InteractionSpec::CurieWeiss { eta2: i.eta2 },
            None => InteractionSpec::None,
        };
        let memory = match &self.memory {
            Some(mem) => Some(memory_spec(mem, m.d)?),
            None => None,
        };
        Ok(ModelSpec { d: m.d, beta: m.beta, potential, interaction, memory, gamma: m.gamma, kind: m.kind })
    }

    pub fn model(&self) -> Result<ValidatedModel> {
        validate(self.model_spec()?)
    }
}

fn memory_spec(mem: &MemorySection, d: usize) -> Result<MemorySpec> {
    let dm = d * mem.m;
    if mem.lambda.len() != dm * d {
        return Err(Error::ShapeMismatch(format!("lambda needs {} entries, got {}", dm * d, mem.lambda.len())));
    }
    let lambda = DMatrix::from_row_slice(dm, d, &mem.lambda);
    let a = match (&mem.a, &mem.diag) {
        (Some(a), None) => SquareMatrix::from_row_slice(dm, a)?,
        (None, Some(diag)) if diag.len() == dm => SquareMatrix::from_diagonal(diag),
        (None, Some(diag)) => {
            return Err(Error::ShapeMismatch(format!("diag needs {dm} entries, got {}", diag.len())))
        }
        (Some(_), Some(_)) => return Err(Error::Config("give either A or diag, not both".into())),
        (None, None) => return Err(Error::MissingField("memory.A or memory.diag".into())),
    };
    Ok(MemorySpec::new(mem.m, lambda, a))
}
