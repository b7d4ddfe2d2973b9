//! JSON fit artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub pirls_iterations: usize,
    pub converged: bool,
}

/// Which covariate direction and Ψ column a variance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentTag {
    pub dimension: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fitted {
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub format_version: u32,
    pub config: ModelConfig,
    /// `[min, max]` per covariate; the basis domain.
    pub domain: Vec<(f64, f64)>,
    pub coefficients: Coefficients,
    pub variances: Vec<f64>,
    pub components: Vec<ComponentTag>,
    pub phi: f64,
    pub eds: Vec<f64>,
    pub ed_total: f64,
    pub deviance: f64,
    pub caic: f64,
    pub convergence: Convergence,
    /// Posterior covariance of `(β, α)`, row by row.
    pub covariance: Vec<Vec<f64>>,
    /// Fitted values in input row order.
    pub fitted: Fitted,
    pub diagnostics: Vec<String>,
}

impl FitArtifact {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        let w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(w, self)
            .map_err(|e| CliError::Internal(format!("cannot write artifact: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let a: Self = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| CliError::Input(format!("invalid artifact {}: {e}", path.display())))?;
        if a.format_version != FORMAT_VERSION {
            return Err(CliError::Input(format!(
                "artifact format {} is not supported (expected {FORMAT_VERSION})",
                a.format_version
            )));
        }
        Ok(a)
    }
}
