use std::sync::Arc;

use hyperpheno_core::ehr::Dataset;
use hyperpheno_core::model::ShyModel;

use crate::error::ServiceError;
use crate::payload::{check_vocabulary, DEFAULT_TOP_K};
use crate::session::SessionStore;

/// Read-only model plus the parameter checksum taken at load time.
#[derive(Debug)]
pub struct ModelHandle {
    pub model: ShyModel,
    pub checksum: String,
}

impl ModelHandle {
    pub fn new(model: ShyModel) -> Self {
        let checksum = model.store.checksum();
        Self { model, checksum }
    }
}

#[derive(Debug, Clone)]
pub struct AppState {
    /// `None` serves records and codes but answers model routes with 503.
    pub model: Option<Arc<ModelHandle>>,
    pub dataset: Arc<Dataset>,
    pub sessions: Arc<SessionStore>,
    pub top_k: usize,
}

impl AppState {
    pub fn new(model: Option<ShyModel>, dataset: Dataset, sessions: SessionStore) -> Result<Self, ServiceError> {
        if let Some(m) = &model {
            check_vocabulary(m, &dataset)?;
        }
        Ok(Self {
            model: model.map(|m| Arc::new(ModelHandle::new(m))),
            dataset: Arc::new(dataset),
            sessions: Arc::new(sessions),
            top_k: DEFAULT_TOP_K,
        })
    }

    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = k;
        self
    }

    pub fn model(&self) -> Result<&ModelHandle, ServiceError> {
        self.model.as_deref().ok_or(ServiceError::NoModel)
    }
}
