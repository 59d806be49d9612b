use std::path::Path;

use binprobe_core::bayes::{ParameterGrid, Prior, RunSettings};
use binprobe_core::models::SourceModel;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Optional settings file. Command-line flags take precedence over these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<SourceModel>,
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub gamma: Option<f64>,
    pub k: Option<f64>,
    /// Spacing grid, `start:stop:step` or a comma-separated list.
    pub h_grid: Option<String>,
    pub bayes: Option<BayesConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesConfig {
    pub grid: ParameterGrid,
    #[serde(default = "uniform")]
    pub prior: Prior,
    #[serde(default)]
    pub settings: Option<RunSettings>,
}

fn uniform() -> Prior {
    Prior::Uniform
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    pub fn model(&self) -> Result<&SourceModel, CliError> {
        self.model.as_ref().ok_or_else(|| {
            CliError::usage("a model is required (pass --config with a \"model\" entry)")
        })
    }
}

/// Parses `start:stop:step` (inclusive of `stop` up to rounding) or `a,b,c`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::usage(format!("bad spacing grid '{text}': {why}"));
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let parts: Vec<&str> = text.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (number(start)?, number(stop)?, number(step)?);
            if !(step > 0.0) || stop < start {
                return Err(bad("need start <= stop and step > 0"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            if count > 1_000_000 {
                return Err(bad("too many points"));
            }
            (0..count).map(|i| start + i as f64 * step).collect()
        }
        [list] => list.split(',').map(number).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(bad("expected start:stop:step or a comma-separated list")),
    };
    if values.is_empty() {
        return Err(bad("empty"));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_syntax() {
        assert_eq!(parse_grid("1:10:1").unwrap().len(), 10);
        assert_eq!(parse_grid("0.5:20:0.5").unwrap().len(), 40);
        assert_eq!(parse_grid("0.5,1.0").unwrap(), vec![0.5, 1.0]);
        assert!(parse_grid("1:0:1").is_err());
        assert!(parse_grid("a,b").is_err());
        assert!(parse_grid("1:2").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 1, "k": 0.02}"#).unwrap();
        assert_eq!(c.seed, Some(1));
    }
}
