//! JSON problem description: `(R0, C_1..C_m)`, bias, tolerances and limits.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wrtree::paths::DEFAULT_ENUMERATION_CAP;
use wrtree::{
    Bias, CMatrix, CVector, ContractionMatrix, EnergyTree, HermitianMatrix, PsdMatrix, Tolerances,
    TreeSpec, C64,
};

use crate::CliError;

/// A matrix or vector entry: a real number or `[re, im]`.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    fn value(self) -> C64 {
        match self {
            Entry::Real(re) => C64::new(re, 0.0),
            Entry::Complex([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGenerator {
    Identity,
    ScaledIdentity(f64),
    Diagonal(Vec<Entry>),
    Matrix(Vec<Vec<Entry>>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractionGenerator {
    Matrix(Vec<Vec<Entry>>),
    Diagonal(Vec<Entry>),
    /// Orthogonal projection onto the span of the given vectors.
    Projection(Vec<Vec<Entry>>),
    ScaledIdentity(f64),
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasConfig {
    #[default]
    Trace,
    Vector(Vec<Entry>),
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    pub dead_tol: Option<f64>,
    pub psd_tol: Option<f64>,
    pub cluster_tol: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_cap")]
    pub enumeration_cap: usize,
}

fn default_max_depth() -> usize {
    40
}

fn default_samples() -> usize {
    10_000
}

fn default_cap() -> usize {
    DEFAULT_ENUMERATION_CAP
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_depth: default_max_depth(),
            samples: default_samples(),
            enumeration_cap: default_cap(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dimension: usize,
    #[serde(default = "default_initial")]
    pub initial: InitialGenerator,
    pub contractions: Vec<ContractionGenerator>,
    #[serde(default)]
    pub bias: BiasConfig,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub limits: Limits,
}

fn default_initial() -> InitialGenerator {
    InitialGenerator::Identity
}

/// Tolerance set in effect, embedded in every report.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ToleranceReport {
    pub dead_tol: f64,
    pub psd_tol: f64,
    pub recon_tol: f64,
    pub op_tol: f64,
    pub pinv_tol: f64,
    pub cluster_tol: f64,
}

/// A validated problem ready to run.
pub struct Problem {
    pub tree: EnergyTree,
    pub bias: Bias,
    pub vector: Option<CVector>,
    pub seed: u64,
    pub limits: Limits,
    pub cluster_tol: f64,
    pub config_hash: String,
}

impl Problem {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let config: ProblemConfig =
            serde_json::from_slice(bytes).map_err(|e| CliError::Config(e.to_string()))?;
        let config_hash = hex::encode(Sha256::digest(bytes));
        config.build(config_hash)
    }

    pub fn tolerances(&self) -> ToleranceReport {
        let t = self.tree.spec().tolerances();
        ToleranceReport {
            dead_tol: self.tree.spec().dead_tol(),
            psd_tol: t.psd_rel,
            recon_tol: t.recon_rel,
            op_tol: t.op,
            pinv_tol: t.pinv,
            cluster_tol: self.cluster_tol,
        }
    }

    /// `--bias` resolution: `config` keeps the configured bias.
    pub fn bias_named(&self, name: &str) -> Result<Bias, CliError> {
        match name {
            "config" => Ok(self.bias.clone()),
            "trace" => Ok(Bias::Trace),
            "vector" => self
                .vector
                .clone()
                .map(Bias::Vector)
                .ok_or_else(|| CliError::Config("bias: no vector configured".into())),
            other => Err(CliError::Config(format!(
                "bias: expected config, trace or vector, got {other}"
            ))),
        }
    }
}

fn field(name: impl std::fmt::Display) -> impl Fn(wrtree::error::WrError) -> CliError {
    move |e| CliError::Config(format!("{name}: {e}"))
}

fn square(name: &str, rows: &[Vec<Entry>], d: usize) -> Result<CMatrix, CliError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::Config(format!("{name}: expected a {d}x{d} matrix")));
    }
    Ok(CMatrix::from_fn(d, d, |i, j| rows[i][j].value()))
}

fn vector(name: &str, entries: &[Entry], d: usize) -> Result<CVector, CliError> {
    if entries.len() != d {
        return Err(CliError::Config(format!(
            "{name}: expected {d} entries, got {}",
            entries.len()
        )));
    }
    Ok(CVector::from_iterator(d, entries.iter().map(|e| e.value())))
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name}: must be positive, got {v}")))
    }
}

impl ProblemConfig {
    fn build(self, config_hash: String) -> Result<Problem, CliError> {
        let d = self.dimension;
        if d == 0 {
            return Err(CliError::Config("dimension: must be at least 1".into()));
        }
        let mut tol = Tolerances::default();
        if let Some(p) = self.tolerances.psd_tol {
            tol.psd_rel = positive("tolerances.psd_tol", p)?;
        }
        let dead_tol = match self.tolerances.dead_tol {
            Some(v) => positive("tolerances.dead_tol", v)?,
            None => 1e-12,
        };

        let r0 = match &self.initial {
            InitialGenerator::Identity => PsdMatrix::identity(d),
            InitialGenerator::ScaledIdentity(g) => {
                PsdMatrix::identity(d).scale(positive("initial.scaled_identity", *g)?)
            }
            InitialGenerator::Diagonal(v) => {
                let diag = vector("initial.diagonal", v, d)?;
                PsdMatrix::from_matrix(CMatrix::from_diagonal(&diag), &tol)
                    .map_err(field("initial.diagonal"))?
            }
            InitialGenerator::Matrix(rows) => {
                let m = square("initial.matrix", rows, d)?;
                PsdMatrix::new(
                    HermitianMatrix::new(m).map_err(field("initial.matrix"))?,
                    &tol,
                )
                .map_err(field("initial.matrix"))?
            }
        };

        if self.contractions.is_empty() {
            return Err(CliError::Config("contractions: need at least one".into()));
        }
        let mut cs = Vec::with_capacity(self.contractions.len());
        for (j, g) in self.contractions.iter().enumerate() {
            let name = format!("contractions[{j}]");
            let c = match g {
                ContractionGenerator::Matrix(rows) => {
                    ContractionMatrix::new(square(&name, rows, d)?, &tol)
                }
                ContractionGenerator::Diagonal(v) => {
                    ContractionMatrix::new(CMatrix::from_diagonal(&vector(&name, v, d)?), &tol)
                }
                ContractionGenerator::Projection(vs) => {
                    let vectors = vs
                        .iter()
                        .map(|v| vector(&name, v, d))
                        .collect::<Result<Vec<_>, _>>()?;
                    ContractionMatrix::projection(d, &vectors, 1e-12, &tol)
                }
                ContractionGenerator::ScaledIdentity(g) => {
                    ContractionMatrix::scaled_identity(d, *g, &tol)
                }
            }
            .map_err(field(&name))?;
            cs.push(c);
        }

        let cluster_tol = match self.tolerances.cluster_tol {
            Some(v) => positive("tolerances.cluster_tol", v)?,
            None => 1e-4 * r0.trace().max(f64::MIN_POSITIVE),
        };
        let spec = TreeSpec::new(r0, cs, dead_tol, tol).map_err(field("tree"))?;
        let tree = EnergyTree::new(spec).map_err(field("tree"))?;

        let (bias, vector) = match &self.bias {
            BiasConfig::Trace => (Bias::Trace, None),
            BiasConfig::Vector(v) => {
                let x = vector("bias.vector", v, d)?;
                (Bias::vector(x.clone()).map_err(field("bias.vector"))?, Some(x))
            }
        };
        if self.limits.max_depth == 0 {
            return Err(CliError::Config("limits.max_depth: must be at least 1".into()));
        }
        Ok(Problem {
            tree,
            bias,
            vector,
            seed: self.seed,
            limits: self.limits,
            cluster_tol,
            config_hash,
        })
    }
}

/// `[[[re, im], ...], ...]` for JSON reports.
pub fn matrix_json(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<Problem, CliError> {
        Problem::from_bytes(text.as_bytes())
    }

    fn error(text: &str) -> String {
        match load(text) {
            Ok(_) => panic!("config accepted: {text}"),
            Err(e) => e.to_string(),
        }
    }

    #[test]
    fn parses_mixed_entries() {
        let p = load(
            r#"{"dimension": 2, "initial": {"matrix": [[2, [0, 1]], [[0, -1], 2]]},
                "contractions": [{"diagonal": [0.5, [0, 0.5]]}, {"scaled_identity": 0.5}],
                "bias": {"vector": [1, 0]}}"#,
        )
        .unwrap();
        assert_eq!(p.tree.m(), 2);
        assert!(matches!(p.bias, Bias::Vector(_)));
        assert_eq!(p.config_hash.len(), 64);
    }

    #[test]
    fn projection_orthonormalizes() {
        let p = load(
            r#"{"dimension": 3, "contractions": [{"projection": [[0, 1, 1], [0, 2, 2]]}]}"#,
        )
        .unwrap();
        let a = p.tree.spec().contractions()[0].effect();
        assert!((a.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors_name_the_field() {
        let err = error(r#"{"dimension": 2, "contractions": [{"diagonal": [1]}]}"#);
        assert!(err.contains("contractions[0]"), "{err}");
        let err = error(r#"{"dimension": 2, "contractions": [{"diagonal": [2, 0]}]}"#);
        assert!(err.contains("contractions[0]"), "{err}");
        let err = error(
            r#"{"dimension": 2, "initial": {"diagonal": [1, -1]}, "contractions": [{"scaled_identity": 0.5}]}"#,
        );
        assert!(err.contains("initial.diagonal"), "{err}");
        let err = error(
            r#"{"dimension": 2, "contractions": [{"scaled_identity": 0.5}], "bias": {"vector": [0, 0]}}"#,
        );
        assert!(err.contains("bias.vector"), "{err}");
    }
}
