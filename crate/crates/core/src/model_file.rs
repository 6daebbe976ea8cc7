//! JSON description of a user-defined quadratic Lagrangian.
//!
//! ```json
//! {
//!   "n": 2,
//!   "labels": ["x", "y"],
//!   "M": [[1, 0], [0, 0]],
//!   "N": [[0, -1], [0, 0]],
//!   "K": [[0, 0], [0, [1.0, 0.5]]],
//!   "gauges": [[[0, 1, 0, 0], 0]]
//! }
//! ```
//!
//! Entries are numbers or `[re, im]` pairs. Gauge conditions are affine
//! functions `c·z + c₀` on `z = (q, p)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algebra::{AffinePhaseFn, CMatrix, CVector, PhaseSpace, Scalar};
use crate::engine::QuadLagrangian;
use crate::error::{Error, Result};

/// Asymmetry of `M` or `K` above which loading warns.
pub const ASYMMETRY_WARN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    pub fn value(self) -> Scalar {
        match self {
            Entry::Real(x) => Scalar::new(x, 0.0),
            Entry::Complex([x, y]) => Scalar::new(x, y),
        }
    }
}

impl From<Scalar> for Entry {
    fn from(z: Scalar) -> Self {
        if z.im == 0.0 {
            Entry::Real(z.re)
        } else {
            Entry::Complex([z.re, z.im])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub labels: Vec<String>,
    #[serde(rename = "M")]
    pub m: Vec<Vec<Entry>>,
    #[serde(rename = "N")]
    pub n_mat: Vec<Vec<Entry>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<Entry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauges: Option<Vec<(Vec<Entry>, Entry)>>,
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub lagrangian: QuadLagrangian,
    pub gauges: Option<Vec<AffinePhaseFn>>,
    pub warnings: Vec<String>,
}

fn matrix(name: &str, rows: &[Vec<Entry>], n: usize) -> Result<CMatrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::ModelFile(format!("{name} must be {n}×{n}")));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j].value()))
}

fn asymmetry(m: &CMatrix) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    (m - m.transpose()).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validates shapes and builds the Lagrangian; `M` and `K` are
    /// symmetrized, with a warning when they were noticeably asymmetric.
    pub fn load(&self) -> Result<LoadedModel> {
        let n = self.n;
        if n == 0 {
            return Err(Error::ModelFile("n must be positive".into()));
        }
        if self.labels.len() != n {
            return Err(Error::ModelFile(format!("expected {n} labels, found {}", self.labels.len())));
        }
        let m = matrix("M", &self.m, n)?;
        let nm = matrix("N", &self.n_mat, n)?;
        let k = matrix("K", &self.k, n)?;
        let mut warnings = Vec::new();
        for (name, mat) in [("M", &m), ("K", &k)] {
            let a = asymmetry(mat);
            if a > ASYMMETRY_WARN {
                warnings.push(format!("{name} is not symmetric (relative asymmetry {a:.3e}); using its symmetric part"));
            }
        }
        let space = PhaseSpace::new(self.labels.clone()).map_err(|e| Error::ModelFile(e.to_string()))?;
        let lagrangian = QuadLagrangian::new(space, m, nm, k)?;
        let gauges = match &self.gauges {
            None => None,
            Some(list) => Some(
                list.iter()
                    .enumerate()
                    .map(|(i, (coeffs, c0))| {
                        if coeffs.len() != 2 * n {
                            return Err(Error::ModelFile(format!(
                                "gauge #{i} has {} coefficients, expected {}",
                                coeffs.len(),
                                2 * n
                            )));
                        }
                        let grad = CVector::from_iterator(2 * n, coeffs.iter().map(|e| e.value()));
                        Ok(AffinePhaseFn::new(grad, c0.value()))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(LoadedModel { lagrangian, gauges, warnings })
    }
}

impl LoadedModel {
    pub fn from_path(path: &Path) -> Result<Self> {
        ModelFile::read(path)?.load()
    }
}
