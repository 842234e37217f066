//! HTTP service over the foramslice pipeline.
//!
//! Endpoints (all JSON; images travel as base64 PNG):
//!
//! * `GET  /api/volumes`: corpus summary with per-species slice totals.
//! * `POST /api/preprocess`: raw PNG/JPEG body, [`PreprocessParams`] as query
//!   parameters. Returns a preview and an `upload_id` that expires.
//! * `POST /api/classify`: provider fan-out and ensemble for an upload.
//! * `POST /api/match`, `GET /api/match/{job_id}`: asynchronous slice
//!   matching with progress polling.
//! * `GET  /api/spec`, `GET /api/health`.
//!
//! Every error response has the body `{code, message, hint}`.

pub mod api;
pub mod config;
pub mod error;
pub mod jobs;
mod openapi;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use foramslice_core::classify::{ExternalProcessProvider, HuNearestProvider, Provider, StubProvider, TsvProvider};
use foramslice_core::matcher::{load_cache, IndexParams};
use foramslice_core::{CorpusIndex, LabelSet, PreprocessParams, SliceImage};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use api::router;
pub use config::{ProviderSpec, ServiceConfig};
pub use error::{ApiError, ErrorBody};
pub use jobs::{JobHandle, JobKind, JobState, JobTable};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("index: {0}")]
    Index(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lifecycle of the shared corpus index.
pub enum CorpusState {
    Building,
    Ready(Arc<ReadyCorpus>),
    Failed(String),
}

pub struct ReadyCorpus {
    pub index: CorpusIndex,
    /// Nearest-Hu providers keyed by id; absent when the corpus has no
    /// usable examples.
    hu: HashMap<String, Arc<HuNearestProvider>>,
}

/// A preprocessed upload kept for follow-up requests.
#[derive(Clone)]
pub struct Upload {
    pub original: SliceImage,
    pub processed: SliceImage,
    pub params: PreprocessParams,
    created: Instant,
}

enum ProviderSlot {
    Fixed(Arc<dyn Provider>),
    /// Resolved against the corpus once the index is ready.
    HuNearest(String),
}

pub struct AppState {
    pub config: ServiceConfig,
    pub labels: LabelSet,
    corpus: RwLock<CorpusState>,
    providers: Vec<ProviderSlot>,
    uploads: Mutex<HashMap<String, Upload>>,
    pub jobs: JobTable,
    workers: Arc<Semaphore>,
}

impl AppState {
    /// Validates the config and builds the provider registry. The corpus
    /// starts in [`CorpusState::Building`].
    pub fn new(config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        config.validate()?;
        let labels = LabelSet::species();
        for (name, e) in &config.ensembles {
            e.validate(&labels)
                .map_err(|err| ServiceError::Config(format!("ensemble {name}: {err}")))?;
        }
        let mut providers = Vec::with_capacity(config.providers.len());
        for spec in &config.providers {
            let slot = match spec {
                ProviderSpec::HuNearest { id } => ProviderSlot::HuNearest(id.clone()),
                ProviderSpec::Tsv { id, path } => ProviderSlot::Fixed(Arc::new(
                    TsvProvider::open(id.clone(), path, labels.clone())
                        .map_err(|e| ServiceError::Config(format!("provider {id}: {e}")))?,
                )),
                ProviderSpec::External {
                    id,
                    program,
                    args,
                    timeout_secs,
                } => {
                    if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                        return Err(ServiceError::Config(format!("provider {id}: timeout must be positive")));
                    }
                    ProviderSlot::Fixed(Arc::new(
                        ExternalProcessProvider::new(id.clone(), program.clone(), args.clone(), labels.clone())
                            .with_timeout(Duration::from_secs_f64(*timeout_secs)),
                    ))
                }
                ProviderSpec::Stub { id, probs } => ProviderSlot::Fixed(Arc::new(match probs {
                    Some(p) => StubProvider::fixed(id.clone(), p.clone()),
                    None => StubProvider::unavailable(id.clone()),
                })),
            };
            providers.push(slot);
        }
        Ok(Arc::new(Self {
            workers: Arc::new(Semaphore::new(config.workers)),
            config,
            labels,
            corpus: RwLock::new(CorpusState::Building),
            providers,
            uploads: Mutex::new(HashMap::new()),
            jobs: JobTable::default(),
        }))
    }

    pub fn set_index(&self, index: CorpusIndex) {
        let mut hu = HashMap::new();
        for slot in &self.providers {
            if let ProviderSlot::HuNearest(id) = slot {
                match HuNearestProvider::from_index(&index, self.labels.clone()) {
                    Ok(p) => {
                        hu.insert(id.clone(), Arc::new(p.with_id(id.clone())));
                    }
                    Err(e) => log::warn!("provider {id} disabled: {e}"),
                }
            }
        }
        log::info!("corpus ready: {} volumes, {} slices", index.volumes.len(), index.len());
        *self.corpus.write().unwrap() = CorpusState::Ready(Arc::new(ReadyCorpus { index, hu }));
    }

    pub fn set_index_failed(&self, message: String) {
        log::error!("corpus index failed: {message}");
        *self.corpus.write().unwrap() = CorpusState::Failed(message);
    }

    /// The ready corpus, or the error to send while it is not.
    pub fn corpus(&self) -> Result<Arc<ReadyCorpus>, ApiError> {
        match &*self.corpus.read().unwrap() {
            CorpusState::Ready(c) => Ok(c.clone()),
            CorpusState::Building => Err(ApiError::new(
                axum::http::StatusCode::SERVICE_UNAVAILABLE,
                "index_building",
                "the corpus index is still loading",
                "retry after a few seconds",
            )
            .with_retry_after(5)),
            CorpusState::Failed(m) => Err(ApiError::new(
                axum::http::StatusCode::SERVICE_UNAVAILABLE,
                "index_failed",
                format!("the corpus index could not be loaded: {m}"),
                "rebuild the index with `foramslice index` and restart the service",
            )),
        }
    }

    /// Provider handles in registry order. Nearest-Hu slots whose corpus
    /// is missing come back as the reason they cannot run.
    fn resolve_providers(&self) -> Vec<Result<Arc<dyn Provider>, (String, String)>> {
        let ready = match &*self.corpus.read().unwrap() {
            CorpusState::Ready(c) => Some(c.clone()),
            _ => None,
        };
        self.providers
            .iter()
            .map(|slot| match slot {
                ProviderSlot::Fixed(p) => Ok(p.clone()),
                ProviderSlot::HuNearest(id) => ready
                    .as_ref()
                    .and_then(|c| c.hu.get(id))
                    .map(|p| p.clone() as Arc<dyn Provider>)
                    .ok_or_else(|| (id.clone(), "corpus index has no usable examples".to_string())),
            })
            .collect()
    }

    fn insert_upload(&self, original: SliceImage, processed: SliceImage, params: PreprocessParams) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        let upload = Upload {
            original,
            processed,
            params,
            created: Instant::now(),
        };
        self.uploads.lock().unwrap().insert(id.clone(), upload);
        id
    }

    /// A live upload; expired ones are dropped on access.
    pub fn upload(&self, id: &str) -> Option<Upload> {
        let mut uploads = self.uploads.lock().unwrap();
        let ttl = self.config.upload_ttl();
        match uploads.get(id) {
            Some(u) if u.created.elapsed() < ttl => Some(u.clone()),
            Some(_) => {
                uploads.remove(id);
                None
            }
            None => None,
        }
    }

    /// Drops expired uploads and finished jobs.
    pub fn sweep(&self) {
        let ttl = self.config.upload_ttl();
        self.uploads.lock().unwrap().retain(|_, u| u.created.elapsed() < ttl);
        self.jobs.expire(self.config.job_ttl());
    }
}

/// A corpus with no volumes, served when no index path is configured.
pub fn empty_index() -> CorpusIndex {
    CorpusIndex {
        params: IndexParams::default(),
        content_hash: String::new(),
        volumes: Vec::new(),
        records: Vec::new(),
        failures: Vec::new(),
    }
}

pub fn load_index(config: &ServiceConfig) -> Result<CorpusIndex, ServiceError> {
    match &config.index_path {
        None => Ok(empty_index()),
        Some(p) => load_cache(p, None).map_err(|e| ServiceError::Index(format!("{}: {e}", p.display()))),
    }
}

/// Per-species kept-slice totals over the corpus.
pub fn species_totals(index: &CorpusIndex) -> BTreeMap<String, usize> {
    let mut totals = BTreeMap::new();
    for v in &index.volumes {
        *totals.entry(v.species.clone()).or_insert(0) += v.kept();
    }
    totals
}

/// Binds the listener, loads the index in the background and serves until
/// the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = AppState::new(config)?;
    let addr = format!("{}:{}", state.config.host, state.config.port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    log::info!("listening on http://{addr}");

    let loader = state.clone();
    tokio::task::spawn_blocking(move || match load_index(&loader.config) {
        Ok(index) => loader.set_index(index),
        Err(e) => loader.set_index_failed(e.to_string()),
    });

    let reaper = Arc::downgrade(&state);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(30));
        loop {
            tick.tick().await;
            match reaper.upgrade() {
                Some(s) => s.sweep(),
                None => break,
            }
        }
    });

    axum::serve(listener, router(state)).await?;
    Ok(())
}
