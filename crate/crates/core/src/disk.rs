//! Per-node append-only file storage with a shadow write checker.
//!
//! Files live in memory; a node can optionally mirror every append to a
//! real directory so PLog replicas and slice logs are inspectable with
//! ordinary tools. There is no API that writes at an arbitrary offset, and
//! the shadow checker independently verifies that no `(file, offset)` is
//! ever written twice.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

static GLOBAL_WRITES: AtomicU64 = AtomicU64::new(0);
static GLOBAL_OVERWRITES: AtomicU64 = AtomicU64::new(0);

/// Process-wide append count, summed over every [`Disk`].
pub fn global_writes() -> u64 {
    GLOBAL_WRITES.load(Ordering::Relaxed)
}

/// Process-wide count of writes that landed below a file's high-water mark.
pub fn global_overwrites() -> u64 {
    GLOBAL_OVERWRITES.load(Ordering::Relaxed)
}

#[derive(Debug, Default, Clone)]
pub struct ShadowChecker {
    /// (file, generation) -> bytes written so far.
    high_water: BTreeMap<(String, u64), u64>,
    generation: BTreeMap<String, u64>,
    pub writes: u64,
    pub overwrites: u64,
}

impl ShadowChecker {
    fn record(&mut self, file: &str, offset: u64, len: u64) {
        let gen = *self.generation.get(file).unwrap_or(&0);
        let hw = self.high_water.entry((file.to_string(), gen)).or_insert(0);
        self.writes += 1;
        GLOBAL_WRITES.fetch_add(1, Ordering::Relaxed);
        if offset < *hw {
            self.overwrites += 1;
            GLOBAL_OVERWRITES.fetch_add(1, Ordering::Relaxed);
        }
        *hw = (*hw).max(offset + len);
    }

    fn retire(&mut self, file: &str) {
        *self.generation.entry(file.to_string()).or_insert(0) += 1;
    }
}

#[derive(Debug, Default)]
pub struct Disk {
    root: Option<PathBuf>,
    files: BTreeMap<String, Vec<u8>>,
    shadow: ShadowChecker,
    pub bytes_read: u64,
    pub reads: u64,
}

impl Disk {
    pub fn in_memory() -> Self {
        Disk::default()
    }

    /// Mirrors every append under `root`, which is created if missing.
    pub fn mirrored(root: impl AsRef<Path>) -> io::Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Disk {
            root: Some(root.as_ref().to_path_buf()),
            ..Disk::default()
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Appends `bytes` to `name`, creating it if needed, and returns the
    /// offset the bytes were written at.
    pub fn append(&mut self, name: &str, bytes: &[u8]) -> u64 {
        let file = self.files.entry(name.to_string()).or_default();
        let offset = file.len() as u64;
        file.extend_from_slice(bytes);
        self.shadow.record(name, offset, bytes.len() as u64);
        if let Some(root) = &self.root {
            let path = root.join(name);
            let mirrored = (|| -> io::Result<u64> {
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent)?;
                }
                let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
                let before = f.metadata()?.len();
                f.write_all(bytes)?;
                Ok(before)
            })();
            match mirrored {
                Ok(before) if before != offset => {
                    // The on-disk mirror diverged from the in-memory file.
                    self.shadow.overwrites += 1;
                    GLOBAL_OVERWRITES.fetch_add(1, Ordering::Relaxed);
                }
                Ok(_) => {}
                Err(e) => panic!("mirror write to {} failed: {e}", path.display()),
            }
        }
        offset
    }

    pub fn read(&mut self, name: &str, offset: u64, len: usize) -> Option<Vec<u8>> {
        let file = self.files.get(name)?;
        let start = offset as usize;
        let end = start.checked_add(len)?;
        if end > file.len() {
            return None;
        }
        self.reads += 1;
        self.bytes_read += len as u64;
        Some(file[start..end].to_vec())
    }

    /// Borrow of the whole file, not counted as a read.
    pub fn contents(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(|v| v.as_slice())
    }

    pub fn len(&self, name: &str) -> Option<u64> {
        self.files.get(name).map(|f| f.len() as u64)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.files.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> bool {
        let existed = self.files.remove(name).is_some();
        if existed {
            self.shadow.retire(name);
            if let Some(root) = &self.root {
                let _ = fs::remove_file(root.join(name));
            }
        }
        existed
    }

    pub fn file_names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(|k| k.as_str())
    }

    pub fn total_bytes(&self) -> u64 {
        self.files.values().map(|f| f.len() as u64).sum()
    }

    pub fn shadow(&self) -> &ShadowChecker {
        &self.shadow
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appends_return_increasing_offsets() {
        let mut d = Disk::in_memory();
        assert_eq!(d.append("a", b"hello"), 0);
        assert_eq!(d.append("a", b"!"), 5);
        assert_eq!(d.contents("a").unwrap(), b"hello!");
        assert_eq!(d.read("a", 1, 3).unwrap(), b"ell");
        assert!(d.read("a", 4, 5).is_none());
        assert_eq!(d.shadow().overwrites, 0);
        assert_eq!(d.shadow().writes, 2);
    }

    #[test]
    fn recreated_file_is_a_new_generation() {
        let mut d = Disk::in_memory();
        d.append("a", b"xyz");
        assert!(d.remove("a"));
        assert!(!d.remove("a"));
        assert_eq!(d.append("a", b"q"), 0);
        assert_eq!(d.shadow().overwrites, 0);
    }

    #[test]
    fn mirror_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = Disk::mirrored(dir.path()).unwrap();
        d.append("n1/x.plog", b"abc");
        d.append("n1/x.plog", b"def");
        let on_disk = std::fs::read(dir.path().join("n1/x.plog")).unwrap();
        assert_eq!(on_disk, b"abcdef");
        assert_eq!(d.shadow().overwrites, 0);
    }
}
