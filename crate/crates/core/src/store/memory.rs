use std::collections::BTreeMap;
use std::sync::RwLock;

use super::{
    check_bounds, validate_points, AuditEntry, Bounds, HangarProfile, ObservationSeries, Sample,
    SeriesKey, Store, StoreError, StoreState,
};

/// Volatile store for tests and dry runs.
#[derive(Debug, Default)]
pub struct MemoryStore {
    state: RwLock<StoreState>,
    artifacts: RwLock<BTreeMap<String, Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

fn poisoned<T>(_: T) -> StoreError {
    StoreError::StorageUnavailable("lock poisoned".into())
}

impl Store for MemoryStore {
    fn put_samples(&self, key: SeriesKey, points: &[Sample]) -> Result<usize, StoreError> {
        validate_points(key, points)?;
        let mut state = self.state.write().map_err(poisoned)?;
        Ok(state.apply_samples(key, points))
    }

    fn get_series(&self, key: SeriesKey, bounds: Bounds) -> Result<ObservationSeries, StoreError> {
        check_bounds(&bounds)?;
        self.state.read().map_err(poisoned)?.query(key, bounds)
    }

    fn keys(&self) -> Result<Vec<SeriesKey>, StoreError> {
        Ok(self.state.read().map_err(poisoned)?.series.keys().copied().collect())
    }

    fn upsert_profile(&self, profile: &HangarProfile) -> Result<u64, StoreError> {
        profile.validate()?;
        let mut state = self.state.write().map_err(poisoned)?;
        let version = state.next_version();
        state.apply_profile(version, profile.clone());
        Ok(version)
    }

    fn get_profile(&self) -> Result<(u64, HangarProfile), StoreError> {
        self.state
            .read()
            .map_err(poisoned)?
            .profile
            .clone()
            .ok_or(StoreError::NoProfile)
    }

    fn put_artifact(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        self.artifacts
            .write()
            .map_err(poisoned)?
            .insert(name.to_string(), bytes.to_vec());
        Ok(())
    }

    fn get_artifact(&self, name: &str) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(self.artifacts.read().map_err(poisoned)?.get(name).cloned())
    }

    fn audit_log(&self) -> Result<Vec<AuditEntry>, StoreError> {
        Ok(self.state.read().map_err(poisoned)?.audit.clone())
    }
}
