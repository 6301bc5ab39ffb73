//! Run configuration: TOML file values merged under command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A malformed configuration or operator source (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Every setting a run can take. The output directory is excluded from the
/// hash so identical experiments written to different places match.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub builtin: Option<String>,
    pub operator_file: Option<PathBuf>,
    pub n: Option<usize>,
    #[serde(rename = "dimV", alias = "dim_v")]
    pub dim_v: Option<usize>,
    pub degree_cap: Option<usize>,
    pub resolution: Option<usize>,
    pub seed: Option<u64>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub fields: Option<usize>,
    pub radii: Option<Vec<f64>>,
    pub kind: Option<String>,
    pub band: Option<f64>,
    pub variant: Option<String>,
    pub points: Option<usize>,
    pub exponents: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub refine_steps: Option<usize>,
    pub homogeneity: Option<bool>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("config {}: {e}", path.display())))
    }

    /// Values from `top` win over values from `self`.
    pub fn overlaid(self, top: RunConfig) -> Self {
        overlay!(
            self, top, builtin, operator_file, n, dim_v, degree_cap, resolution, seed, out, fields, radii, kind, band,
            variant, points, exponents, trials, refine_steps, homogeneity
        )
    }

    /// SHA-256 of the canonical JSON form, followed by the operator file bytes.
    pub fn hash(&self) -> Result<String, ConfigError> {
        let mut hasher = Sha256::new();
        let json = serde_json::to_string(self).map_err(|e| ConfigError(e.to_string()))?;
        hasher.update(json.as_bytes());
        if let Some(path) = &self.operator_file {
            let bytes = std::fs::read(path)
                .map_err(|e| ConfigError(format!("cannot read operator file {}: {e}", path.display())))?;
            hasher.update(&bytes);
        }
        Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: RunConfig = toml::from_str("builtin = \"gradient\"\nn = 3\nseed = 4\nradii = [0.5, 1.0]").unwrap();
        let flags = RunConfig { n: Some(2), ..Default::default() };
        let merged = file.overlaid(flags);
        assert_eq!(merged.n, Some(2));
        assert_eq!(merged.seed, Some(4));
        assert_eq!(merged.builtin.as_deref(), Some("gradient"));
        assert_eq!(merged.radii, Some(vec![0.5, 1.0]));
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = RunConfig { seed: Some(1), out: Some("a".into()), ..Default::default() };
        let b = RunConfig { seed: Some(1), out: Some("b".into()), ..Default::default() };
        let c = RunConfig { seed: Some(2), ..Default::default() };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn unknown_keys_report_their_line() {
        let err = toml::from_str::<RunConfig>("seed = 1\nbogus = 2").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
