//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid by
//! command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::OptimizationConfig;
use crate::providers::AdapterSettings;
use crate::schedule::NoiseSchedule;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "LATENT_DEID_CONFIG";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderNames {
    pub backend: String,
    pub embedder: String,
    pub attributes: String,
    pub parser: String,
    pub eval: String,
    /// Adapter-specific settings such as `weights`.
    pub options: BTreeMap<String, String>,
}

impl Default for ProviderNames {
    fn default() -> Self {
        let toy = "toy".to_string();
        Self {
            backend: toy.clone(),
            embedder: toy.clone(),
            attributes: toy.clone(),
            parser: toy.clone(),
            eval: toy,
            options: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub total_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.total_steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Images processed concurrently.
    pub workers: usize,
    pub optimization: OptimizationConfig,
    pub providers: ProviderNames,
    pub schedule: ScheduleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            optimization: OptimizationConfig::default(),
            providers: ProviderNames::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e))
    }

    /// Explicit path, else the environment variable, else defaults.
    pub fn resolve_base(explicit: Option<&Path>) -> Result<(Self, Option<PathBuf>)> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match path {
            Some(p) => Ok((Self::load(&p)?, Some(p))),
            None => Ok((Self::default(), None)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        self.optimization.validate()?;
        self.optimization.window.validate(&self.schedule.build()?)
    }

    /// Flat `dotted.key = value` TOML, one key per line in sorted order.
    pub fn to_dotted_toml(&self) -> Result<String> {
        let value = toml::Value::try_from(self).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        Ok(lines.join("\n") + "\n")
    }

    pub fn adapter_settings(&self, image_shape: [usize; 3], schedule: &NoiseSchedule) -> AdapterSettings {
        AdapterSettings {
            seed: self.optimization.seed,
            image_shape,
            alphas_cumprod: schedule.alphas_cumprod().to_vec(),
            options: self.providers.options.clone(),
        }
    }
}

fn quote_key(k: &str) -> String {
    if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        k.to_string()
    } else {
        toml::Value::String(k.to_string()).to_string()
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) if !t.is_empty() => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    quote_key(k)
                } else {
                    format!("{prefix}.{}", quote_key(k))
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::ModeKind;

    #[test]
    fn dotted_keys_parse_and_fill_defaults() {
        let c = RunConfig::from_toml(
            "optimization.mode = \"tangent\"\noptimization.window.n_denoise = 8\nproviders.options.weights = \"w.pt\"\n",
        )
        .unwrap();
        assert_eq!(c.optimization.mode, ModeKind::Tangent);
        assert_eq!(c.optimization.window.n_denoise, 8);
        assert_eq!(c.optimization.window.t0, 600);
        assert_eq!(c.optimization.lr, 0.001);
        assert_eq!(c.providers.options["weights"], "w.pt");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("optimization.learning_rate = 0.1\n").is_err());
    }

    #[test]
    fn echo_reloads_to_the_same_config() {
        let mut c = RunConfig::default();
        c.optimization
            .attribute_targets
            .insert("Mouth Slightly Open".into(), 0.9);
        c.optimization.lambda = 250.5;
        let text = c.to_dotted_toml().unwrap();
        assert!(text.contains("optimization.lr = 0.001"));
        assert!(text.contains("optimization.attribute_targets.\"Mouth Slightly Open\" = 0.9"));
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }
}
