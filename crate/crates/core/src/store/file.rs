//! Embedded file-backed store: an append-only journal of sample and profile
//! writes, replayed on open, plus one file per artifact.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{
    check_bounds, validate_points, AuditEntry, Bounds, HangarProfile, ObservationSeries, Sample,
    SeriesKey, Store, StoreError, StoreState,
};

const JOURNAL: &str = "journal.jsonl";
const ARTIFACTS: &str = "artifacts";

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum JournalRecord {
    Samples { key: SeriesKey, points: Vec<Sample> },
    Profile { version: u64, profile: HangarProfile },
}

#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    state: RwLock<StoreState>,
    journal: Mutex<File>,
}

fn io_err(e: impl std::fmt::Display) -> StoreError {
    StoreError::StorageUnavailable(e.to_string())
}

impl FileStore {
    /// Opens (creating if needed) the store rooted at `root` and replays its journal.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join(ARTIFACTS)).map_err(io_err)?;
        let journal_path = root.join(JOURNAL);

        let mut state = StoreState::default();
        if journal_path.exists() {
            let reader = BufReader::new(File::open(&journal_path).map_err(io_err)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: JournalRecord = serde_json::from_str(&line).map_err(|e| {
                    StoreError::StorageUnavailable(format!("corrupt journal line {}: {e}", n + 1))
                })?;
                match record {
                    JournalRecord::Samples { key, points } => {
                        state.apply_samples(key, &points);
                    }
                    JournalRecord::Profile { version, profile } => {
                        state.apply_profile(version, profile)
                    }
                }
            }
        }
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(io_err)?;
        Ok(Self {
            root,
            state: RwLock::new(state),
            journal: Mutex::new(journal),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn append(&self, record: &JournalRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).map_err(io_err)?;
        line.push('\n');
        let mut journal = self.journal.lock().map_err(io_err)?;
        journal.write_all(line.as_bytes()).map_err(io_err)?;
        journal.flush().map_err(io_err)
    }

    fn artifact_path(&self, name: &str) -> Result<PathBuf, StoreError> {
        let valid = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && !name.starts_with('.');
        if !valid {
            return Err(StoreError::InvariantViolation(format!(
                "bad artifact name `{name}`"
            )));
        }
        Ok(self.root.join(ARTIFACTS).join(name))
    }
}

impl Store for FileStore {
    fn put_samples(&self, key: SeriesKey, points: &[Sample]) -> Result<usize, StoreError> {
        validate_points(key, points)?;
        let mut state = self.state.write().map_err(io_err)?;
        // Journal first so a failed write leaves memory and disk in agreement.
        let fresh: Vec<Sample> = {
            let existing = state.series.get(&key);
            points
                .iter()
                .filter(|p| {
                    existing
                        .and_then(|s| s.get(&p.timestamp))
                        .is_none_or(|v| v.to_bits() != p.value.to_bits())
                })
                .copied()
                .collect()
        };
        if fresh.is_empty() {
            return Ok(0);
        }
        self.append(&JournalRecord::Samples {
            key,
            points: fresh.clone(),
        })?;
        Ok(state.apply_samples(key, &fresh))
    }

    fn get_series(&self, key: SeriesKey, bounds: Bounds) -> Result<ObservationSeries, StoreError> {
        check_bounds(&bounds)?;
        self.state.read().map_err(io_err)?.query(key, bounds)
    }

    fn keys(&self) -> Result<Vec<SeriesKey>, StoreError> {
        Ok(self.state.read().map_err(io_err)?.series.keys().copied().collect())
    }

    fn upsert_profile(&self, profile: &HangarProfile) -> Result<u64, StoreError> {
        profile.validate()?;
        let mut state = self.state.write().map_err(io_err)?;
        let version = state.next_version();
        self.append(&JournalRecord::Profile {
            version,
            profile: profile.clone(),
        })?;
        state.apply_profile(version, profile.clone());
        Ok(version)
    }

    fn get_profile(&self) -> Result<(u64, HangarProfile), StoreError> {
        self.state
            .read()
            .map_err(io_err)?
            .profile
            .clone()
            .ok_or(StoreError::NoProfile)
    }

    fn put_artifact(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.artifact_path(name)?;
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes).map_err(io_err)?;
        fs::rename(&tmp, &path).map_err(io_err)
    }

    fn get_artifact(&self, name: &str) -> Result<Option<Vec<u8>>, StoreError> {
        let path = self.artifact_path(name)?;
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(e)),
        }
    }

    fn audit_log(&self) -> Result<Vec<AuditEntry>, StoreError> {
        Ok(self.state.read().map_err(io_err)?.audit.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{closed, Placement, Variable};
    use chrono::{TimeZone, Utc};

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let key = SeriesKey::of(Variable::So2, Placement::Outdoor);
        let t0 = Utc.with_ymd_and_hms(2023, 3, 1, 0, 0, 0).unwrap();
        let pts = [
            Sample { timestamp: t0, value: 4.0 },
            Sample { timestamp: t0 + chrono::Duration::hours(1), value: 5.0 },
        ];
        {
            let store = FileStore::open(dir.path()).unwrap();
            assert_eq!(store.put_samples(key, &pts).unwrap(), 2);
            store.upsert_profile(&crate::synth::kbely_profile()).unwrap();
            store.put_artifact("tree.json", b"{}").unwrap();
        }
        let store = FileStore::open(dir.path()).unwrap();
        assert_eq!(store.put_samples(key, &pts).unwrap(), 0);
        let series = store.get_series(key, closed(t0, t0 + chrono::Duration::hours(1))).unwrap();
        assert_eq!(series.points, pts.to_vec());
        assert_eq!(store.get_profile().unwrap().0, 1);
        assert_eq!(store.upsert_profile(&crate::synth::kbely_profile()).unwrap(), 2);
        assert_eq!(store.get_artifact("tree.json").unwrap().unwrap(), b"{}");
        assert!(store.get_artifact("missing").unwrap().is_none());
        assert!(store.put_artifact("../escape", b"x").is_err());
    }
}
