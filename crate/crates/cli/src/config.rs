//! Experiment configs: typed JSON documents checked before any computation.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sparse_hw::bounds::exchange_matrix;
use sparse_hw::rng::RngStream;
use sparse_hw::sketchlr::random_low_rank;

use crate::CliError;

/// Where a matrix comes from. Random generators draw from the experiment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSpec {
    Inline { rows: Vec<Vec<f64>> },
    File { path: PathBuf },
    Exchange,
    Identity { n: usize },
    Zero { rows: usize, cols: usize },
    /// i.i.d. standard normal entries.
    Gaussian { rows: usize, cols: usize },
    /// Symmetric with standard normal entries on and above the diagonal.
    Symmetric {
        n: usize,
        #[serde(default)]
        diagonal_free: bool,
    },
    /// Orthonormal random factors with the given singular values.
    LowRank { rows: usize, cols: usize, singular_values: Vec<f64> },
}

impl MatrixSpec {
    /// Relative paths resolve against `base` (the config's directory).
    pub fn build(&self, seed: u64, base: &Path) -> Result<DMatrix<f64>, CliError> {
        let rng = || RngStream::for_domain(seed, "cli.instance", 0);
        let gauss = |rng: &mut RngStream| -> f64 { StandardNormal.sample(rng) };
        Ok(match self {
            MatrixSpec::Inline { rows } => {
                let cols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != cols) {
                    return Err(CliError::Config("inline matrix has ragged rows".into()));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                DMatrix::from_row_slice(rows.len(), cols, &flat)
            }
            MatrixSpec::File { path } => {
                let path = if path.is_relative() { base.join(path) } else { path.clone() };
                sparse_hw::matrix_io::read_matrix(&path)?
            }
            MatrixSpec::Exchange => exchange_matrix(),
            MatrixSpec::Identity { n } => DMatrix::identity(*n, *n),
            MatrixSpec::Zero { rows, cols } => DMatrix::zeros(*rows, *cols),
            MatrixSpec::Gaussian { rows, cols } => {
                let mut r = rng();
                DMatrix::from_fn(*rows, *cols, |_, _| gauss(&mut r))
            }
            MatrixSpec::Symmetric { n, diagonal_free } => {
                let mut r = rng();
                let mut a = DMatrix::zeros(*n, *n);
                for i in 0..*n {
                    for j in i..*n {
                        let v = if i == j && *diagonal_free { 0.0 } else { gauss(&mut r) };
                        a[(i, j)] = v;
                        a[(j, i)] = v;
                    }
                }
                a
            }
            MatrixSpec::LowRank { rows, cols, singular_values } => {
                if singular_values.len() > (*rows).min(*cols) {
                    return Err(CliError::Config("more singular values than min(rows, cols)".into()));
                }
                random_low_rank(*rows, *cols, singular_values, seed)
            }
        })
    }
}

/// One probability for every coordinate, or one per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Retention {
    Uniform(f64),
    PerCoordinate(Vec<f64>),
}

impl Retention {
    pub fn expand(&self, n: usize) -> Result<Vec<f64>, CliError> {
        let p = match self {
            Retention::Uniform(q) => vec![*q; n],
            Retention::PerCoordinate(v) if v.len() == n => v.clone(),
            Retention::PerCoordinate(v) => {
                return Err(CliError::Config(format!("p has {} entries, expected {n}", v.len())));
            }
        };
        if let Some(i) = p.iter().position(|q| !(0.0..=1.0).contains(q)) {
            return Err(CliError::Config(format!("p[{i}] = {} outside [0, 1]", p[i])));
        }
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Geometric,
}

/// An explicit list or `points` values from `start` to `stop`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Range {
        start: f64,
        stop: f64,
        points: usize,
        spacing: Spacing,
    },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        match *self {
            Grid::Values(ref v) => Ok(v.clone()),
            Grid::Range { start, stop, points, spacing } => {
                if points < 2 || !(start < stop) {
                    return Err(CliError::Config("grid needs start < stop and at least 2 points".into()));
                }
                if spacing == Spacing::Geometric && start <= 0.0 {
                    return Err(CliError::Config("geometric grid needs start > 0".into()));
                }
                let f = |i: usize| i as f64 / (points - 1) as f64;
                Ok((0..points)
                    .map(|i| match spacing {
                        Spacing::Linear => start + (stop - start) * f(i),
                        Spacing::Geometric => start * (stop / start).powf(f(i)),
                    })
                    .collect())
            }
        }
    }
}

/// A parsed config with the effective seed already merged in.
pub struct Loaded<T> {
    pub config: T,
    /// The echoed document, exactly as it will be written to the report.
    pub echo: Value,
    pub base: PathBuf,
}

/// Reads a JSON config, applies a `--seed` override and validates it against `T`.
pub fn load<T: DeserializeOwned + Serialize>(path: Option<&Path>, seed: Option<u64>) -> Result<Loaded<T>, CliError> {
    let (mut doc, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            (doc, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (Value::Object(Default::default()), PathBuf::from(".")),
    };
    let obj = doc.as_object_mut().ok_or_else(|| CliError::Config("config must be a JSON object".into()))?;
    if let Some(s) = seed {
        obj.insert("seed".into(), Value::from(s));
    }
    if !obj.contains_key("seed") {
        return Err(CliError::Config("missing field `seed` (set it in the config or pass --seed)".into()));
    }
    let config: T = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
    // echo the normalized document so defaults are visible and re-runs are exact
    let echo = serde_json::to_value(&config).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Loaded { config, echo, base })
}

pub fn default_true() -> bool {
    true
}
