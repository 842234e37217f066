use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use foramslice_core::classify::EnsembleConfig;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DEFAULT_PORT: u16 = 8501;
pub const PORT_ENV: &str = "FORAMSLICE_PORT";
pub const INDEX_ENV: &str = "FORAMSLICE_INDEX";

/// A classifier provider as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    /// Nearest Hu vector over the loaded corpus index.
    HuNearest { id: String },
    /// Precomputed predictions keyed by upload id.
    Tsv { id: String, path: PathBuf },
    External {
        id: String,
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_provider_timeout")]
        timeout_secs: f64,
    },
    /// Fixed probability vector; `probs: null` makes it always unavailable.
    Stub { id: String, probs: Option<Vec<f64>> },
}

fn default_provider_timeout() -> f64 {
    30.0
}

impl ProviderSpec {
    pub fn id(&self) -> &str {
        match self {
            ProviderSpec::HuNearest { id }
            | ProviderSpec::Tsv { id, .. }
            | ProviderSpec::External { id, .. }
            | ProviderSpec::Stub { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Corpus index cache written by `foramslice index`; none serves an
    /// empty corpus.
    pub index_path: Option<PathBuf>,
    pub providers: Vec<ProviderSpec>,
    /// Named ensemble configurations selectable per request.
    pub ensembles: BTreeMap<String, EnsembleConfig>,
    pub max_upload_bytes: usize,
    /// Concurrent match jobs.
    pub workers: usize,
    /// Queued plus running jobs before new ones are refused.
    pub max_jobs: usize,
    pub upload_ttl_secs: u64,
    pub job_ttl_secs: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            index_path: None,
            providers: vec![ProviderSpec::HuNearest { id: "hu-nearest".into() }],
            ensembles: BTreeMap::new(),
            max_upload_bytes: 10 * 1024 * 1024,
            workers: 2,
            max_jobs: 16,
            upload_ttl_secs: 15 * 60,
            job_ttl_secs: 60 * 60,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    /// Port and index path from `FORAMSLICE_PORT` / `FORAMSLICE_INDEX`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(p) = lookup(PORT_ENV) {
            self.port = p
                .trim()
                .parse()
                .map_err(|_| ServiceError::Config(format!("{PORT_ENV}={p:?} is not a port number")))?;
        }
        if let Some(p) = lookup(INDEX_ENV) {
            self.index_path = Some(PathBuf::from(p));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: &str| Err(ServiceError::Config(m.into()));
        if self.port == 0 {
            return bad("port must be nonzero");
        }
        if self.workers == 0 || self.max_jobs == 0 {
            return bad("workers and max_jobs must be positive");
        }
        if self.max_upload_bytes == 0 {
            return bad("max_upload_bytes must be positive");
        }
        if self.providers.is_empty() {
            return bad("at least one provider is required");
        }
        let mut ids = std::collections::BTreeSet::new();
        for p in &self.providers {
            if !ids.insert(p.id()) {
                return Err(ServiceError::Config(format!("duplicate provider id {}", p.id())));
            }
        }
        for (name, e) in &self.ensembles {
            for id in e.provider_ids() {
                if !ids.contains(id.as_str()) {
                    return Err(ServiceError::Config(format!("ensemble {name} refers to unknown provider {id}")));
                }
            }
        }
        Ok(())
    }

    pub fn upload_ttl(&self) -> Duration {
        Duration::from_secs(self.upload_ttl_secs)
    }

    pub fn job_ttl(&self) -> Duration {
        Duration::from_secs(self.job_ttl_secs)
    }
}
