use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use bytes::Bytes;
use dashmap::DashMap;
use url::Url;

use super::{
    artifact_url, validate_job_id, ArtifactKey, ArtifactKind, ArtifactStore, StoreError,
};

/// Filesystem tree rooted at `root`. Writes go to a temp file that is
/// fsynced and renamed into place before the put returns.
#[derive(Debug)]
pub struct FsArtifactStore {
    root: PathBuf,
    public_base: Url,
    key_locks: DashMap<String, Arc<tokio::sync::Mutex<()>>>,
    available: AtomicBool,
}

impl FsArtifactStore {
    pub fn new(root: impl Into<PathBuf>, public_base: Url) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("jobs"))?;
        Ok(Self {
            root,
            public_base,
            key_locks: DashMap::new(),
            available: AtomicBool::new(true),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Simulates an outage of the backing store.
    pub fn set_available(&self, available: bool) {
        self.available.store(available, Ordering::SeqCst);
    }

    fn check(&self) -> Result<(), StoreError> {
        if self.available.load(Ordering::SeqCst) {
            Ok(())
        } else {
            Err(StoreError::Unavailable("store offline".into()))
        }
    }

    fn file(&self, key: &ArtifactKey) -> PathBuf {
        self.root.join(key.path())
    }

    fn lock_for(&self, key: &ArtifactKey) -> Arc<tokio::sync::Mutex<()>> {
        self.key_locks
            .entry(key.path())
            .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(())))
            .clone()
    }
}

fn io_err(e: std::io::Error) -> StoreError {
    StoreError::Unavailable(e.to_string())
}

fn write_durably(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().expect("artifact path has a parent");
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    std::fs::File::open(dir)?.sync_all()?;
    Ok(())
}

#[async_trait]
impl ArtifactStore for FsArtifactStore {
    async fn put(&self, key: &ArtifactKey, bytes: Bytes) -> Result<(), StoreError> {
        self.check()?;
        if bytes.is_empty() {
            return Err(StoreError::Empty);
        }
        let lock = self.lock_for(key);
        let _guard = lock.lock().await;
        let path = self.file(key);
        let label = key.path();
        tokio::task::spawn_blocking(move || match std::fs::read(&path) {
            Ok(existing) if existing == bytes.as_ref() => Ok(()),
            Ok(_) => Err(StoreError::Conflict(label)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                write_durably(&path, &bytes).map_err(io_err)
            }
            Err(e) => Err(io_err(e)),
        })
        .await
        .map_err(|e| StoreError::Unavailable(e.to_string()))?
    }

    async fn get(&self, key: &ArtifactKey) -> Result<Bytes, StoreError> {
        self.check()?;
        match tokio::fs::read(self.file(key)).await {
            Ok(bytes) => Ok(Bytes::from(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(StoreError::NotFound(key.path()))
            }
            Err(e) => Err(io_err(e)),
        }
    }

    async fn list(&self, job_id: &str) -> Result<BTreeSet<ArtifactKind>, StoreError> {
        self.check()?;
        validate_job_id(job_id)?;
        let dir = self.root.join("jobs").join(job_id);
        let mut kinds = BTreeSet::new();
        let mut entries = match tokio::fs::read_dir(&dir).await {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(kinds),
            Err(e) => return Err(io_err(e)),
        };
        while let Some(entry) = entries.next_entry().await.map_err(io_err)? {
            if let Some(kind) = entry.file_name().to_str().and_then(ArtifactKind::from_file_name) {
                kinds.insert(kind);
            }
        }
        Ok(kinds)
    }

    fn public_url(&self, key: &ArtifactKey) -> Url {
        artifact_url(&self.public_base, key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (FsArtifactStore, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let s = FsArtifactStore::new(
            dir.path(),
            Url::parse("https://store.example/").unwrap(),
        )
        .unwrap();
        (s, dir)
    }

    fn key(id: &str, kind: ArtifactKind) -> ArtifactKey {
        ArtifactKey::new(id, kind).unwrap()
    }

    #[tokio::test]
    async fn one_mebibyte_roundtrip() {
        let (s, _d) = store();
        let blob: Vec<u8> = (0..1_048_576u32).map(|i| (i * 31 % 251) as u8).collect();
        let k = key("J-1", ArtifactKind::Results);
        s.put(&k, Bytes::from(blob.clone())).await.unwrap();
        assert_eq!(s.get(&k).await.unwrap().as_ref(), blob.as_slice());
    }

    #[tokio::test]
    async fn list_reports_stored_kinds() {
        let (s, _d) = store();
        for kind in [ArtifactKind::Circuit, ArtifactKind::Results, ArtifactKind::Calibration] {
            s.put(&key("J-2", kind), Bytes::from_static(b"{}")).await.unwrap();
        }
        let kinds = s.list("J-2").await.unwrap();
        assert_eq!(kinds.len(), 3);
        assert!(!kinds.contains(&ArtifactKind::Timeline));
        assert!(s.list("J-none").await.unwrap().is_empty());
    }

    #[tokio::test]
    async fn missing_is_not_found() {
        let (s, _d) = store();
        assert!(matches!(
            s.get(&key("J-404", ArtifactKind::Results)).await,
            Err(StoreError::NotFound(_))
        ));
    }

    #[tokio::test]
    async fn write_once_semantics() {
        let (s, _d) = store();
        let k = key("J-3", ArtifactKind::Circuit);
        s.put(&k, Bytes::from_static(b"a")).await.unwrap();
        s.put(&k, Bytes::from_static(b"a")).await.unwrap();
        assert_eq!(
            s.put(&k, Bytes::from_static(b"b")).await,
            Err(StoreError::Conflict("jobs/J-3/circuit.json".into()))
        );
        assert_eq!(s.get(&k).await.unwrap(), Bytes::from_static(b"a"));
    }

    #[tokio::test]
    async fn empty_put_rejected() {
        let (s, _d) = store();
        assert_eq!(
            s.put(&key("J-4", ArtifactKind::Circuit), Bytes::new()).await,
            Err(StoreError::Empty)
        );
    }

    #[tokio::test]
    async fn survives_reopen() {
        let (s, dir) = store();
        let k = key("J-5", ArtifactKind::Timeline);
        s.put(&k, Bytes::from_static(b"[1]")).await.unwrap();
        drop(s);
        let reopened =
            FsArtifactStore::new(dir.path(), Url::parse("https://store.example/").unwrap()).unwrap();
        assert_eq!(reopened.get(&k).await.unwrap(), Bytes::from_static(b"[1]"));
    }

    #[tokio::test]
    async fn offline_store_is_unavailable() {
        let (s, _d) = store();
        s.set_available(false);
        assert!(matches!(
            s.put(&key("J-6", ArtifactKind::Circuit), Bytes::from_static(b"x")).await,
            Err(StoreError::Unavailable(_))
        ));
    }

    #[tokio::test]
    async fn concurrent_identical_puts_agree() {
        let (s, _d) = store();
        let s = Arc::new(s);
        let k = key("J-7", ArtifactKind::Results);
        let tasks: Vec<_> = (0..16)
            .map(|_| {
                let s = s.clone();
                let k = k.clone();
                tokio::spawn(async move { s.put(&k, Bytes::from_static(b"same")).await })
            })
            .collect();
        for t in tasks {
            t.await.unwrap().unwrap();
        }
        assert_eq!(s.get(&k).await.unwrap(), Bytes::from_static(b"same"));
    }
}
