//! JSON configuration files of the subcommands.

use std::path::Path;

use hierest::params::ParameterDef;
use hierest::sim::StudySpec;
use serde::Deserialize;

use crate::CliError;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// One parameter in the estimate config; columns are referenced by name.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ParamConfig {
    Mean { column: String },
    Indicator { column: String, threshold: f64 },
    ProductMoment { columns: [String; 2] },
    Difference { columns: [String; 2] },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovarianceConfig {
    Plugin,
    Known { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub parameters: Vec<ParamConfig>,
    #[serde(default)]
    pub covariance: Option<CovarianceConfig>,
    #[serde(default)]
    pub monotone: Option<bool>,
}

impl EstimateConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_json(path)
    }

    /// Resolves column names against the dataset header.
    pub fn parameter_defs(&self, columns: &[String]) -> Result<Vec<ParameterDef<f64>>, CliError> {
        let find = |name: &str| -> Result<usize, CliError> {
            columns.iter().position(|c| c == name).ok_or_else(|| {
                CliError::Input(format!(
                    "parameter references unknown column '{name}' (header: {})",
                    columns.join(", ")
                ))
            })
        };
        self.parameters
            .iter()
            .map(|p| {
                Ok(match p {
                    ParamConfig::Mean { column } => {
                        ParameterDef::mean(find(column)?).with_label(format!("mean({column})"))
                    }
                    ParamConfig::Indicator { column, threshold } => {
                        ParameterDef::indicator(find(column)?, *threshold)
                            .with_label(format!("cdf({column}<={threshold})"))
                    }
                    ParamConfig::ProductMoment { columns: [a, b] } => {
                        ParameterDef::product_moment(find(a)?, find(b)?)
                            .with_label(format!("moment({a}*{b})"))
                    }
                    ParamConfig::Difference { columns: [a, b] } => {
                        ParameterDef::difference(find(a)?, find(b)?)
                            .with_label(format!("diff({a}-{b})"))
                    }
                })
            })
            .collect()
    }
}

/// Explicit-inputs form of the bivariate command.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BivariateFileConfig {
    pub means: MeansConfig,
    #[serde(default)]
    pub sigma: Option<SigmaConfig>,
    pub sizes: SizesConfig,
    #[serde(default)]
    pub compound_symmetry: Option<CompoundSymmetryConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeansConfig {
    /// Component means over complete pairs.
    pub complete: [f64; 2],
    #[serde(default)]
    pub first_only: Option<f64>,
    #[serde(default)]
    pub second_only: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaConfig {
    pub var1: f64,
    pub cov: f64,
    pub var2: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizesConfig {
    pub complete: usize,
    #[serde(default)]
    pub first_only: usize,
    #[serde(default)]
    pub second_only: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompoundSymmetryConfig {
    /// Standard deviation of both components.
    pub sigma: f64,
    pub rho: f64,
}

impl BivariateFileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_json(path)
    }
}

/// Study config: a [`StudySpec`] with an optional convergence ladder. The
/// seed may come from the file or the `--seed` flag (the flag wins).
pub struct StudyConfig {
    pub spec: StudySpec,
    pub size_ladder: Option<Vec<usize>>,
}

impl StudyConfig {
    pub fn load(path: &Path, seed_flag: Option<u64>) -> Result<Self, CliError> {
        let mut value: serde_json::Value = read_json(path)?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| CliError::Input(format!("{}: expected a JSON object", path.display())))?;
        let size_ladder = match obj.remove("size_ladder") {
            Some(v) => Some(
                serde_json::from_value(v)
                    .map_err(|e| CliError::Input(format!("size_ladder: {e}")))?,
            ),
            None => None,
        };
        if let Some(seed) = seed_flag {
            obj.insert("seed".into(), serde_json::json!(seed));
        }
        if !obj.contains_key("seed") {
            return Err(CliError::Input(
                "a seed is required: pass --seed or put \"seed\" in the config".into(),
            ));
        }
        let spec: StudySpec = serde_json::from_value(value)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Ok(Self { spec, size_ladder })
    }
}
