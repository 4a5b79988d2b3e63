//! Agent-side key share persistence.
//!
//! Layout under the store root:
//!
//! ```text
//! store.key                 32-byte sealing key, mode 0600
//! <hex key_id>/current      big-endian u32: the live version
//! <hex key_id>/v<N>.share   sealed record of version N
//! <hex key_id>/v<N>.staged  sealed record waiting for commit
//! ```
//!
//! Every file is written to a temporary name and renamed into place, and the
//! `current` pointer moves only after the new share is in place, so a crash
//! at any point leaves either the old or the new version readable. Older
//! versions are wiped only after the pointer has moved.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand_core::{OsRng, RngCore};
use thiserror::Error;
use zeroize::Zeroizing;

use tdh_core::protocols::KeyShareRecord;

const AAD_TAG: &[u8] = b"TDH-STORE-v1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("share file for {key_id} v{version} failed authentication")]
    Corrupt { key_id: String, version: u32 },
    #[error("key {0} already exists")]
    Exists(String),
    #[error("version {got} does not follow {have:?} for {key_id}")]
    VersionGap {
        key_id: String,
        have: Option<u32>,
        got: u32,
    },
    #[error("share for {0} belongs to a different public key")]
    ForeignKey(String),
    #[error("nothing staged for {key_id} v{version}")]
    NothingStaged { key_id: String, version: u32 },
    #[error("invalid record: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommitOutcome {
    Promoted,
    /// We held an old share but none in the new committee.
    Relinquished,
    AlreadyCurrent,
}

pub struct AgentShareStore {
    root: PathBuf,
    cipher: ChaCha20Poly1305,
    lock: Mutex<()>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

/// Overwrites the file with zeros before unlinking it.
fn wipe(path: &Path) -> io::Result<()> {
    match fs::metadata(path) {
        Ok(m) => {
            let mut f = OpenOptions::new().write(true).open(path)?;
            f.write_all(&vec![0u8; m.len() as usize])?;
            f.sync_all()?;
            drop(f);
            fs::remove_file(path)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e),
    }
}

fn load_or_create_key(path: &Path) -> Result<Zeroizing<[u8; 32]>, StoreError> {
    let mut key = Zeroizing::new([0u8; 32]);
    match File::open(path) {
        Ok(mut f) => {
            f.read_exact(key.as_mut())?;
            return Ok(key);
        }
        Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e.into()),
        Err(_) => {}
    }
    OsRng.fill_bytes(key.as_mut());
    let mut opts = OpenOptions::new();
    opts.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path)?;
    f.write_all(key.as_ref())?;
    f.sync_all()?;
    Ok(key)
}

impl AgentShareStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let key = load_or_create_key(&root.join("store.key"))?;
        Ok(AgentShareStore {
            cipher: ChaCha20Poly1305::new(&Key::from(*key)),
            root,
            lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn key_dir(&self, key_id: &str) -> PathBuf {
        self.root.join(hex::encode(key_id.as_bytes()))
    }

    fn aad(key_id: &str, version: u32) -> Vec<u8> {
        let mut aad = AAD_TAG.to_vec();
        aad.extend_from_slice(&(key_id.len() as u32).to_be_bytes());
        aad.extend_from_slice(key_id.as_bytes());
        aad.extend_from_slice(&version.to_be_bytes());
        aad
    }

    fn seal(&self, key_id: &str, version: u32, record: &KeyShareRecord) -> Vec<u8> {
        let plain = Zeroizing::new(record.to_bytes());
        let mut nonce = [0u8; 12];
        OsRng.fill_bytes(&mut nonce);
        let aad = Self::aad(key_id, version);
        let ct = self
            .cipher
            .encrypt(&Nonce::from(nonce), Payload { msg: &plain, aad: &aad })
            .expect("in-memory encryption cannot fail");
        let mut out = nonce.to_vec();
        out.extend_from_slice(&ct);
        out
    }

    fn unseal(&self, key_id: &str, version: u32, bytes: &[u8]) -> Result<KeyShareRecord, StoreError> {
        let corrupt = || StoreError::Corrupt {
            key_id: key_id.to_owned(),
            version,
        };
        if bytes.len() < 12 {
            return Err(corrupt());
        }
        let (nonce, ct) = bytes.split_at(12);
        let nonce: [u8; 12] = nonce.try_into().unwrap();
        let aad = Self::aad(key_id, version);
        let plain = Zeroizing::new(
            self.cipher
                .decrypt(&Nonce::from(nonce), Payload { msg: ct, aad: &aad })
                .map_err(|_| corrupt())?,
        );
        KeyShareRecord::from_bytes(&plain).map_err(|_| corrupt())
    }

    fn read_version(&self, key_id: &str) -> Result<Option<u32>, StoreError> {
        match fs::read(self.key_dir(key_id).join("current")) {
            Ok(b) if b.len() == 4 => Ok(Some(u32::from_be_bytes(b.try_into().unwrap()))),
            Ok(_) => Err(StoreError::Corrupt {
                key_id: key_id.to_owned(),
                version: 0,
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn read_share(&self, key_id: &str, version: u32, suffix: &str) -> Result<Option<KeyShareRecord>, StoreError> {
        let path = self.key_dir(key_id).join(format!("v{version}.{suffix}"));
        match fs::read(&path) {
            Ok(b) => self.unseal(key_id, version, &b).map(Some),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// The live version and its record.
    pub fn current(&self, key_id: &str) -> Result<Option<(u32, KeyShareRecord)>, StoreError> {
        let _g = self.lock.lock().unwrap();
        self.current_locked(key_id)
    }

    fn current_locked(&self, key_id: &str) -> Result<Option<(u32, KeyShareRecord)>, StoreError> {
        let Some(v) = self.read_version(key_id)? else {
            return Ok(None);
        };
        let rec = self.read_share(key_id, v, "share")?.ok_or(StoreError::Corrupt {
            key_id: key_id.to_owned(),
            version: v,
        })?;
        Ok(Some((v, rec)))
    }

    pub fn staged(&self, key_id: &str, version: u32) -> Result<Option<KeyShareRecord>, StoreError> {
        let _g = self.lock.lock().unwrap();
        self.read_share(key_id, version, "staged")
    }

    /// Writes `record` as the candidate for `version`, which must be newer
    /// than the live one and keep its public key.
    pub fn stage(&self, key_id: &str, version: u32, record: &KeyShareRecord) -> Result<(), StoreError> {
        record.validate().map_err(|e| StoreError::Invalid(e.to_string()))?;
        let _g = self.lock.lock().unwrap();
        let live = self.current_locked(key_id)?;
        match &live {
            // A first share may arrive through keygen or as a new committee
            // member of a reshare.
            None if version >= 1 => {}
            // A holder that missed a commit may rejoin at a later version.
            Some((v, rec)) if version > *v => {
                if rec.public_key != record.public_key {
                    return Err(StoreError::ForeignKey(key_id.to_owned()));
                }
            }
            Some(_) if version == 1 => return Err(StoreError::Exists(key_id.to_owned())),
            _ => {
                return Err(StoreError::VersionGap {
                    key_id: key_id.to_owned(),
                    have: live.map(|l| l.0),
                    got: version,
                })
            }
        }
        let dir = self.key_dir(key_id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(format!("v{version}.staged")), &self.seal(key_id, version, record))?;
        Ok(())
    }

    /// Makes `version` live. Without a staged share, an agent whose live
    /// version is the previous one hands the key over and forgets it.
    pub fn commit(&self, key_id: &str, version: u32) -> Result<CommitOutcome, StoreError> {
        let _g = self.lock.lock().unwrap();
        let dir = self.key_dir(key_id);
        let live = self.read_version(key_id)?;
        if live == Some(version) {
            return Ok(CommitOutcome::AlreadyCurrent);
        }
        let staged = dir.join(format!("v{version}.staged"));
        let share = dir.join(format!("v{version}.share"));
        if staged.exists() {
            // Authenticate before promoting.
            self.read_share(key_id, version, "staged")?;
            fs::rename(&staged, &share)?;
        }
        if share.exists() {
            write_atomic(&dir.join("current"), &version.to_be_bytes())?;
            if let Some(old) = live {
                wipe(&dir.join(format!("v{old}.share")))?;
            }
            return Ok(CommitOutcome::Promoted);
        }
        match live {
            Some(old) if old + 1 == version => {
                wipe(&dir.join(format!("v{old}.share")))?;
                wipe(&dir.join("current"))?;
                let _ = fs::remove_dir(&dir);
                Ok(CommitOutcome::Relinquished)
            }
            _ => Err(StoreError::NothingStaged {
                key_id: key_id.to_owned(),
                version,
            }),
        }
    }

    pub fn discard(&self, key_id: &str, version: u32) -> Result<(), StoreError> {
        let _g = self.lock.lock().unwrap();
        let dir = self.key_dir(key_id);
        wipe(&dir.join(format!("v{version}.staged")))?;
        if self.read_version(key_id)?.is_none() {
            let _ = fs::remove_dir(&dir);
        }
        Ok(())
    }

    /// Every key id with a live version.
    pub fn key_ids(&self) -> Result<Vec<String>, StoreError> {
        let _g = self.lock.lock().unwrap();
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let Some(id) = entry
                .file_name()
                .to_str()
                .and_then(|n| hex::decode(n).ok())
                .and_then(|b| String::from_utf8(b).ok())
            else {
                continue;
            };
            if self.read_version(&id)?.is_some() {
                out.push(id);
            }
        }
        out.sort();
        Ok(out)
    }
}
