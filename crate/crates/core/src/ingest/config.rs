use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::trace_model::NormalizationRules;

/// Run configuration, loaded from a TOML file of plain key/value pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Package prefixes that identify application ("system") classes.
    pub app_package_prefixes: Vec<String>,
    pub normalization_rules: NormalizationRules,
    pub top_n_files: usize,
    pub top_n_uris: usize,
    pub top_n_users_per_uri: usize,
    pub sample_trace_count: usize,
    pub sample_crash_id_count: usize,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            app_package_prefixes: Vec::new(),
            normalization_rules: NormalizationRules::default(),
            top_n_files: 5,
            top_n_uris: 5,
            top_n_users_per_uri: 5,
            sample_trace_count: 3,
            sample_crash_id_count: 10,
        }
    }
}

impl AppConfig {
    pub fn with_prefixes<I, S>(prefixes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            app_package_prefixes: prefixes.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.app_package_prefixes.iter().all(|p| p.trim().is_empty()) {
            return Err(ConfigError::Invalid(
                "app_package_prefixes must name at least one package".into(),
            ));
        }
        if self.top_n_files == 0 {
            return Err(ConfigError::Invalid("top_n_files must be at least 1".into()));
        }
        Ok(())
    }

    /// True when `qualified_name` lives under one of the application
    /// prefixes. Matching respects package boundaries: `s.p` covers
    /// `s.p.ClassMBean` but not `s.pq.Other`.
    pub fn is_app_class(&self, qualified_name: &str) -> bool {
        self.app_package_prefixes.iter().any(|prefix| {
            let prefix = prefix.trim().trim_end_matches('.');
            !prefix.is_empty()
                && qualified_name.starts_with(prefix)
                && matches!(qualified_name.as_bytes().get(prefix.len()), None | Some(b'.'))
        })
    }
}
