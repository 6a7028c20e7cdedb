//! Local patient-id to pseudonym ledger.
//!
//! The ledger is a CSV file (`patient_id,pseudonym,created_at,note`) that only
//! ever changes by writing a complete new copy next to it and renaming it over
//! the old one, so a reader or a crash sees either the previous or the next
//! committed state. Writers serialise on an advisory lock file.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::media::{non_allowlisted_tags, probe, temp_sibling, MediaError};
use crate::tool::MediaTool;

pub const REGISTRY_HEADER: [&str; 4] = ["patient_id", "pseudonym", "created_at", "note"];

const LOCK_WAIT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("patient id must not be empty")]
    EmptyPatientId,
    #[error("registry {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("registry {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error(transparent)]
    Media(#[from] MediaError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RegistryError + '_ {
    move |source| RegistryError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudonymRecord {
    pub patient_id: String,
    pub pseudonym: String,
    pub created_at: String,
    pub note: String,
}

impl PseudonymRecord {
    pub fn created_at(&self) -> Option<DateTime<Utc>> {
        DateTime::parse_from_rfc3339(&self.created_at).ok().map(|t| t.with_timezone(&Utc))
    }
}

/// Canonical lowercase hyphenated UUID with version 4 and RFC 4122 variant.
pub fn is_uuid_v4(s: &str) -> bool {
    match Uuid::try_parse(s) {
        Ok(u) => u.get_version_num() == 4 && u.get_variant() == uuid::Variant::RFC4122 && u.hyphenated().to_string() == s,
        Err(_) => false,
    }
}

#[derive(Debug)]
pub struct Registry {
    path: PathBuf,
    records: Vec<PseudonymRecord>,
    by_patient: HashMap<String, usize>,
    by_pseudonym: HashMap<String, usize>,
}

impl Registry {
    /// Load the ledger at `path`, creating an empty one if absent.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let path = path.into();
        let mut reg = Self { path, records: Vec::new(), by_patient: HashMap::new(), by_pseudonym: HashMap::new() };
        if reg.path.exists() {
            reg.refresh()?;
        } else {
            let _lock = reg.lock()?;
            if reg.path.exists() {
                reg.refresh()?;
            } else {
                reg.commit(&[])?;
            }
        }
        Ok(reg)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Reload from disk, replacing the in-memory snapshot.
    pub fn refresh(&mut self) -> Result<(), RegistryError> {
        let records = read_records(&self.path)?;
        self.install(records)
    }

    fn install(&mut self, records: Vec<PseudonymRecord>) -> Result<(), RegistryError> {
        let corrupt = |reason: String| RegistryError::Corrupt { path: self.path.clone(), reason };
        let mut by_patient = HashMap::with_capacity(records.len());
        let mut by_pseudonym = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.patient_id.is_empty() {
                return Err(corrupt(format!("row {} has an empty patient id", i + 1)));
            }
            if !is_uuid_v4(&r.pseudonym) {
                return Err(corrupt(format!("row {} pseudonym is not a UUIDv4", i + 1)));
            }
            if by_patient.insert(r.patient_id.clone(), i).is_some() {
                return Err(corrupt(format!("row {} repeats a patient id", i + 1)));
            }
            if by_pseudonym.insert(r.pseudonym.clone(), i).is_some() {
                return Err(corrupt(format!("row {} repeats a pseudonym", i + 1)));
            }
        }
        self.records = records;
        self.by_patient = by_patient;
        self.by_pseudonym = by_pseudonym;
        Ok(())
    }

    pub fn records(&self) -> &[PseudonymRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.patient_id.as_str())
    }

    pub fn find_by_patient(&self, patient_id: &str) -> Option<&PseudonymRecord> {
        self.by_patient.get(patient_id).map(|&i| &self.records[i])
    }

    /// Patient id for `pseudonym`, if known.
    pub fn lookup(&self, pseudonym: &str) -> Option<&str> {
        self.by_pseudonym.get(pseudonym).map(|&i| self.records[i].patient_id.as_str())
    }

    pub fn assign(&mut self, patient_id: &str) -> Result<PseudonymRecord, RegistryError> {
        self.assign_with_note(patient_id, "")
    }

    /// The existing record for `patient_id`, or a freshly persisted one.
    pub fn assign_with_note(&mut self, patient_id: &str, note: &str) -> Result<PseudonymRecord, RegistryError> {
        if patient_id.is_empty() {
            return Err(RegistryError::EmptyPatientId);
        }
        let _lock = self.lock()?;
        self.refresh()?;
        if let Some(r) = self.find_by_patient(patient_id) {
            return Ok(r.clone());
        }
        let pseudonym = loop {
            let p = Uuid::new_v4().hyphenated().to_string();
            if !self.by_pseudonym.contains_key(&p) {
                break p;
            }
        };
        let record = PseudonymRecord {
            patient_id: patient_id.to_string(),
            pseudonym,
            created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            note: note.to_string(),
        };
        let mut next = self.records.clone();
        next.push(record.clone());
        self.commit(&next)?;
        self.install(next)?;
        Ok(record)
    }

    fn lock_path(&self) -> PathBuf {
        let mut name = self.path.file_name().unwrap_or_default().to_os_string();
        name.push(".lock");
        self.path.with_file_name(name)
    }

    fn lock(&self) -> Result<LockGuard, RegistryError> {
        let path = self.lock_path();
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(&path).map_err(io_err(&path))?;
        let deadline = Instant::now() + LOCK_WAIT;
        loop {
            match file.try_lock() {
                Ok(()) => return Ok(LockGuard(file)),
                Err(std::fs::TryLockError::WouldBlock) if Instant::now() < deadline => {
                    std::thread::sleep(Duration::from_millis(10))
                }
                Err(std::fs::TryLockError::WouldBlock) => return Err(RegistryError::Locked(self.path.clone())),
                Err(std::fs::TryLockError::Error(e)) => return Err(io_err(&path)(e)),
            }
        }
    }

    fn commit(&self, records: &[PseudonymRecord]) -> Result<(), RegistryError> {
        let tmp = temp_sibling(&self.path);
        let result = write_records(&tmp, records).and_then(|()| {
            std::fs::rename(&tmp, &self.path).map_err(io_err(&self.path))?;
            if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
                // Persist the rename itself; not every platform allows opening a directory.
                if let Ok(d) = File::open(dir) {
                    let _ = d.sync_all();
                }
            }
            Ok(())
        });
        if result.is_err() {
            let _ = std::fs::remove_file(&tmp);
        }
        result
    }
}

struct LockGuard(File);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

fn owner_only(opts: &mut OpenOptions) -> &mut OpenOptions {
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    opts
}

fn write_records(path: &Path, records: &[PseudonymRecord]) -> Result<(), RegistryError> {
    let file = owner_only(OpenOptions::new().write(true).create(true).truncate(true)).open(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let csv_err = |e: csv::Error| RegistryError::Io { path: path.to_path_buf(), source: e.into() };
    w.write_record(REGISTRY_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([&r.patient_id, &r.pseudonym, &r.created_at, &r.note]).map_err(csv_err)?;
    }
    let mut file = w.into_inner().map_err(|e| io_err(path)(e.into_error()))?;
    file.flush().map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))
}

fn read_records(path: &Path) -> Result<Vec<PseudonymRecord>, RegistryError> {
    let corrupt = |reason: String| RegistryError::Corrupt { path: path.to_path_buf(), reason };
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = r.headers().map_err(|e| corrupt(e.to_string()))?;
    if headers.iter().ne(REGISTRY_HEADER) {
        return Err(corrupt(format!("unexpected header {headers:?}")));
    }
    r.deserialize().map(|row| row.map_err(|e: csv::Error| corrupt(e.to_string()))).collect()
}

/// Outcome of checking one output file for residual identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// File stem is a UUIDv4 present in the registry.
    pub filename_ok: bool,
    /// No probe-visible tag outside the technical allowlist.
    pub metadata_ok: bool,
    pub offending_tags: Vec<String>,
    /// No audio stream, when the policy is to drop audio.
    pub audio_ok: bool,
    pub pass: bool,
}

impl VerificationReport {
    /// Names of the checks that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        [(self.filename_ok, "filename"), (self.metadata_ok, "metadata"), (self.audio_ok, "audio")]
            .into_iter()
            .filter(|(ok, _)| !ok)
            .map(|(_, name)| name)
            .collect()
    }
}

pub fn verify_deidentified(
    tool: &MediaTool,
    path: &Path,
    registry: &Registry,
    drop_audio: bool,
) -> Result<VerificationReport, RegistryError> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    verify_deidentified_as(tool, path, stem, registry, drop_audio)
}

/// [`verify_deidentified`] for a file that will be published under `stem`.
pub fn verify_deidentified_as(
    tool: &MediaTool,
    path: &Path,
    stem: &str,
    registry: &Registry,
    drop_audio: bool,
) -> Result<VerificationReport, RegistryError> {
    if !path.is_file() {
        return Err(io_err(path)(std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    let filename_ok = is_uuid_v4(stem) && registry.lookup(stem).is_some();
    let info = probe(tool, path)?;
    let offending_tags = non_allowlisted_tags(&info.tags);
    let metadata_ok = offending_tags.is_empty();
    let audio_ok = !(drop_audio && info.has_audio);
    Ok(VerificationReport {
        filename_ok,
        metadata_ok,
        offending_tags,
        audio_ok,
        pass: filename_ok && metadata_ok && audio_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assign_is_idempotent_and_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.csv");
        let mut reg = Registry::open(&path).unwrap();
        let a = reg.assign("P-007").unwrap();
        let b = reg.assign("P-007").unwrap();
        assert_eq!(a, b);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("patient_id,pseudonym,created_at,note\n"));
        assert_eq!(Registry::open(&path).unwrap().lookup(&a.pseudonym), Some("P-007"));
    }

    #[test]
    fn quoting_survives_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.csv");
        let mut reg = Registry::open(&path).unwrap();
        let id = "Doe, \"Jane\"\nline2";
        let r = reg.assign_with_note(id, "a,b").unwrap();
        let reg2 = Registry::open(&path).unwrap();
        assert_eq!(reg2.lookup(&r.pseudonym), Some(id));
        assert_eq!(reg2.records()[0].note, "a,b");
    }

    #[test]
    fn empty_patient_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::open(dir.path().join("r.csv")).unwrap();
        assert!(matches!(reg.assign(""), Err(RegistryError::EmptyPatientId)));
    }

    #[test]
    fn unknown_pseudonym_is_absent() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::open(dir.path().join("r.csv")).unwrap();
        reg.assign("P-1").unwrap();
        assert_eq!(reg.lookup(&Uuid::new_v4().to_string()), None);
    }

    #[test]
    fn duplicate_rows_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let u = Uuid::new_v4();
        std::fs::write(&path, format!("patient_id,pseudonym,created_at,note\nA,{u},t,\nB,{u},t,\n")).unwrap();
        assert!(matches!(Registry::open(&path), Err(RegistryError::Corrupt { .. })));
    }

    #[test]
    fn held_lock_times_out() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::open(dir.path().join("r.csv")).unwrap();
        let other = File::create(reg.lock_path()).unwrap();
        other.lock().unwrap();
        let start = Instant::now();
        assert!(matches!(reg.assign("P"), Err(RegistryError::Locked(_))));
        assert!(start.elapsed() >= LOCK_WAIT);
    }

    #[cfg(unix)]
    #[test]
    fn ledger_is_owner_only() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::open(dir.path().join("r.csv")).unwrap();
        reg.assign("P").unwrap();
        let mode = std::fs::metadata(reg.path()).unwrap().permissions().mode();
        assert_eq!(mode & 0o777, 0o600);
    }

    #[test]
    fn uuid_v4_shape() {
        assert!(is_uuid_v4(&Uuid::new_v4().to_string()));
        assert!(!is_uuid_v4(&Uuid::new_v4().to_string().to_uppercase()));
        assert!(!is_uuid_v4("00000000-0000-1000-8000-000000000000"));
        assert!(!is_uuid_v4("smith_case3"));
    }
}
