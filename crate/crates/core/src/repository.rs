//! File-per-document annotation store with a JSON manifest, incremental and
//! full synchronization, and a per-run statistics log.
//!
//! Layout: `<root>/<dataset>/<filename>` holds canonical document bytes,
//! `<root>/manifest.json` the manifest, `<root>/.lock` the writer lock.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{content_hash, filename_for_id, AnnotationDocument};
use crate::domspec::DomainSpecification;
use crate::validator::{validate_document, ViolationReport};
use crate::vocabulary::Vocabulary;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";
pub const STATS_CSV_HEADER: &str = "date,dataset,documents,triples,added,updated,removed";

#[derive(Debug, Error)]
pub enum RepositoryError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("repository is locked by another writer ({0})")]
    Locked(PathBuf),
    #[error("document `{id}` belongs to dataset `{existing}`, not `{dataset}`")]
    IdCollision {
        id: String,
        existing: String,
        dataset: String,
    },
    #[error("document id `{0}` occurs more than once in the batch")]
    DuplicateIncoming(String),
    #[error("incoming document has no @id")]
    MissingId,
    #[error("invalid dataset name `{0}`")]
    InvalidDataset(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RepositoryError + '_ {
    move |source| RepositoryError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Automatic,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ManifestEntry {
    pub filename: String,
    pub content_hash: String,
    pub triple_count: u64,
    pub dataset: String,
    pub origin: Origin,
    pub first_seen: NaiveDate,
    pub last_updated: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSnapshot {
    pub date: NaiveDate,
    pub dataset: String,
    pub documents: u64,
    pub triples: u64,
    pub added: u64,
    pub updated: u64,
    pub removed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
    pub stats_log: Vec<StatsSnapshot>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Entry whose stored file is `filename`.
    pub fn by_filename(&self, filename: &str) -> Option<(&str, &ManifestEntry)> {
        self.entries
            .iter()
            .find(|(_, e)| e.filename == filename)
            .map(|(id, e)| (id.as_str(), e))
    }

    pub fn dataset_totals(&self, dataset: &str) -> (u64, u64) {
        self.entries
            .values()
            .filter(|e| e.dataset == dataset)
            .fold((0, 0), |(d, t), e| (d + 1, t + e.triple_count))
    }
}

pub trait Clock: Send + Sync {
    fn today(&self) -> NaiveDate;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn today(&self) -> NaiveDate {
        chrono::Utc::now().date_naive()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub NaiveDate);

impl Clock for FixedClock {
    fn today(&self) -> NaiveDate {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncMode {
    Incremental,
    Full,
}

/// Ids per outcome, each list sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyncReport {
    pub added: Vec<String>,
    pub updated: Vec<String>,
    pub unchanged: Vec<String>,
    pub removed: Vec<String>,
}

impl SyncReport {
    pub fn counts(&self) -> SyncCounts {
        SyncCounts {
            added: self.added.len(),
            updated: self.updated.len(),
            unchanged: self.unchanged.len(),
            removed: self.removed.len(),
        }
    }

    pub fn merge(&mut self, other: SyncReport) {
        self.added.extend(other.added);
        self.updated.extend(other.updated);
        self.unchanged.extend(other.unchanged);
        self.removed.extend(other.removed);
        for list in [&mut self.added, &mut self.updated, &mut self.unchanged, &mut self.removed] {
            list.sort();
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncCounts {
    pub added: usize,
    pub updated: usize,
    pub unchanged: usize,
    pub removed: usize,
}

impl fmt::Display for SyncCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "added {}, updated {}, unchanged {}, removed {}",
            self.added, self.updated, self.unchanged, self.removed
        )
    }
}

impl Serialize for SyncReport {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Ids<'a> {
            added: &'a [String],
            updated: &'a [String],
            unchanged: &'a [String],
            removed: &'a [String],
        }
        #[derive(Serialize)]
        struct Repr<'a> {
            #[serde(flatten)]
            counts: SyncCounts,
            ids: Ids<'a>,
        }
        Repr {
            counts: self.counts(),
            ids: Ids {
                added: &self.added,
                updated: &self.updated,
                unchanged: &self.unchanged,
                removed: &self.removed,
            },
        }
        .serialize(serializer)
    }
}

/// Dataset names become directory names.
pub fn is_valid_dataset(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

/// Held while a writer mutates the repository; removes the lock file on drop.
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(root: &Path) -> Result<LockGuard, RepositoryError> {
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(RepositoryError::Locked(path)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RepositoryError> {
    let tmp = temp_path(path);
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!(".{name}.tmp"))
}

pub struct Repository {
    root: PathBuf,
    manifest: Manifest,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for Repository {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Repository")
            .field("root", &self.root)
            .field("entries", &self.manifest.entries.len())
            .finish()
    }
}

impl Repository {
    /// Opens (or starts) a repository at `root` using the system clock.
    pub fn open(root: impl Into<PathBuf>) -> Result<Repository, RepositoryError> {
        Repository::open_with_clock(root, Arc::new(SystemClock))
    }

    pub fn open_with_clock(
        root: impl Into<PathBuf>,
        clock: Arc<dyn Clock>,
    ) -> Result<Repository, RepositoryError> {
        let root = root.into();
        let manifest = read_manifest(&root)?;
        Ok(Repository { root, manifest, clock })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.manifest.entries.get(id)
    }

    pub fn entry_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.dataset).join(&entry.filename)
    }

    /// Bytes of the stored file named `filename`, if the manifest lists it.
    pub fn read_file(&self, filename: &str) -> Result<Option<Vec<u8>>, RepositoryError> {
        let Some((_, entry)) = self.manifest.by_filename(filename) else {
            return Ok(None);
        };
        let path = self.entry_path(entry);
        fs::read(&path).map(Some).map_err(io_err(&path))
    }

    pub fn read_document(&self, id: &str) -> Result<Option<AnnotationDocument>, RepositoryError> {
        let Some(entry) = self.entry(id) else {
            return Ok(None);
        };
        let path = self.entry_path(entry);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        AnnotationDocument::parse(&bytes)
            .map(Some)
            .map_err(|e| RepositoryError::Manifest {
                path,
                message: e.to_string(),
            })
    }

    /// Synchronizes one dataset with `incoming`.
    ///
    /// Incremental mode adds new ids and rewrites documents whose canonical
    /// hash changed; full mode additionally removes entries of the dataset
    /// that are absent from `incoming`. A snapshot for today's date is
    /// written to the stats log; a second run on the same date folds into
    /// the existing row, summing the deltas.
    pub fn sync(
        &mut self,
        incoming: &[AnnotationDocument],
        dataset: &str,
        mode: SyncMode,
        origin: Origin,
    ) -> Result<SyncReport, RepositoryError> {
        if !is_valid_dataset(dataset) {
            return Err(RepositoryError::InvalidDataset(dataset.into()));
        }
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let _lock = LockGuard::acquire(&self.root)?;
        let mut manifest = read_manifest(&self.root)?;
        let today = self.clock.today();

        let mut seen = BTreeSet::new();
        for doc in incoming {
            let id = doc.id.as_deref().ok_or(RepositoryError::MissingId)?;
            if !seen.insert(id) {
                return Err(RepositoryError::DuplicateIncoming(id.into()));
            }
            if let Some(existing) = manifest.entries.get(id) {
                if existing.dataset != dataset {
                    return Err(RepositoryError::IdCollision {
                        id: id.into(),
                        existing: existing.dataset.clone(),
                        dataset: dataset.into(),
                    });
                }
            }
        }

        let mut report = SyncReport::default();
        let mut writes: Vec<(PathBuf, Vec<u8>)> = Vec::new();
        let mut deletes: Vec<PathBuf> = Vec::new();
        let dir = self.root.join(dataset);

        for doc in incoming {
            let id = doc.id.clone().expect("checked above");
            let bytes = doc.canonical_bytes();
            let hash = content_hash(&bytes);
            match manifest.entries.get_mut(&id) {
                Some(entry) if entry.content_hash == hash && entry.origin == origin => {
                    report.unchanged.push(id);
                }
                Some(entry) => {
                    entry.content_hash = hash;
                    entry.triple_count = doc.count_triples();
                    entry.origin = origin;
                    entry.last_updated = today;
                    writes.push((dir.join(&entry.filename), bytes));
                    report.updated.push(id);
                }
                None => {
                    let filename = unique_filename(&manifest, &id);
                    writes.push((dir.join(&filename), bytes));
                    manifest.entries.insert(
                        id.clone(),
                        ManifestEntry {
                            filename,
                            content_hash: hash,
                            triple_count: doc.count_triples(),
                            dataset: dataset.into(),
                            origin,
                            first_seen: today,
                            last_updated: today,
                        },
                    );
                    report.added.push(id);
                }
            }
        }

        if mode == SyncMode::Full {
            let gone: Vec<String> = manifest
                .entries
                .iter()
                .filter(|(id, e)| e.dataset == dataset && !seen.contains(id.as_str()))
                .map(|(id, _)| id.clone())
                .collect();
            for id in gone {
                let entry = manifest.entries.remove(&id).expect("listed above");
                deletes.push(dir.join(&entry.filename));
                report.removed.push(id);
            }
        }

        for list in [&mut report.added, &mut report.updated, &mut report.unchanged, &mut report.removed] {
            list.sort();
        }
        record_snapshot(&mut manifest, today, dataset, &report);

        // Stage every file first so that an I/O failure leaves the manifest
        // and all live files untouched.
        if !writes.is_empty() {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let mut staged = Vec::with_capacity(writes.len());
        for (path, bytes) in &writes {
            let tmp = temp_path(path);
            let result = fs::write(&tmp, bytes).map_err(io_err(&tmp));
            staged.push(tmp);
            if let Err(e) = result {
                for tmp in &staged {
                    let _ = fs::remove_file(tmp);
                }
                return Err(e);
            }
        }
        for (tmp, (path, _)) in staged.iter().zip(&writes) {
            fs::rename(tmp, path).map_err(io_err(path))?;
        }
        let manifest_path = self.root.join(MANIFEST_FILE);
        write_atomic(&manifest_path, manifest.to_json().as_bytes())?;
        for path in deletes {
            let _ = fs::remove_file(path);
        }
        self.manifest = manifest;
        Ok(report)
    }

    /// Validates manual documents and syncs the valid ones incrementally,
    /// grouped by dataset, with origin `manual`. Documents without `@id` get
    /// their content-derived id.
    pub fn ingest_manual(
        &mut self,
        files: &[ManualFile],
        spec: &DomainSpecification,
        vocab: &Vocabulary,
    ) -> Result<IngestOutcome, RepositoryError> {
        let mut outcome = IngestOutcome::default();
        let mut by_dataset: BTreeMap<&str, Vec<AnnotationDocument>> = BTreeMap::new();
        for file in files {
            match prepare_manual(file, spec, vocab) {
                Ok(doc) => by_dataset.entry(&file.dataset).or_default().push(doc),
                Err(rejection) => outcome.rejected.push(rejection),
            }
        }
        for (dataset, docs) in by_dataset {
            let report = self.sync(&docs, dataset, SyncMode::Incremental, Origin::Manual)?;
            outcome.report.merge(report);
        }
        Ok(outcome)
    }

    /// CSV of the stats log, rows in (date, dataset) order.
    pub fn export_stats_csv(&self) -> Vec<u8> {
        export_stats_csv(&self.manifest)
    }

    /// Re-hashes and re-counts every stored document against the manifest.
    pub fn fsck(&self) -> FsckReport {
        let mut report = FsckReport::default();
        for (id, entry) in &self.manifest.entries {
            report.checked += 1;
            let path = self.entry_path(entry);
            let problem = match fs::read(&path) {
                Err(e) => Some(FsckProblem::Unreadable(e.to_string())),
                Ok(bytes) => {
                    let found = content_hash(&bytes);
                    if found != entry.content_hash {
                        Some(FsckProblem::HashMismatch {
                            expected: entry.content_hash.clone(),
                            found,
                        })
                    } else {
                        match AnnotationDocument::parse(&bytes) {
                            Err(e) => Some(FsckProblem::Unparsable(e.to_string())),
                            Ok(doc) if doc.count_triples() != entry.triple_count => {
                                Some(FsckProblem::TripleCountMismatch {
                                    expected: entry.triple_count,
                                    found: doc.count_triples(),
                                })
                            }
                            Ok(_) => None,
                        }
                    }
                }
            };
            if let Some(problem) = problem {
                report.failures.push(FsckFailure {
                    id: id.clone(),
                    path,
                    problem,
                });
            }
        }
        report
    }
}

/// Parses and validates one manual file, deriving an id when it has none.
pub fn prepare_manual(
    file: &ManualFile,
    spec: &DomainSpecification,
    vocab: &Vocabulary,
) -> Result<AnnotationDocument, Rejection> {
    let reject = |reason| Rejection {
        source: file.source.clone(),
        reason,
    };
    if !is_valid_dataset(&file.dataset) {
        return Err(reject(RejectReason::Dataset(file.dataset.clone())));
    }
    let mut doc = AnnotationDocument::parse(&file.bytes).map_err(|e| reject(RejectReason::Parse(e.to_string())))?;
    if doc.id.is_none() {
        doc.id = Some(doc.derived_id());
    }
    let report = validate_document(&doc, spec, vocab);
    if !report.is_conformant() {
        return Err(reject(RejectReason::Invalid(report)));
    }
    Ok(doc)
}

fn read_manifest(root: &Path) -> Result<Manifest, RepositoryError> {
    let path = root.join(MANIFEST_FILE);
    match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| RepositoryError::Manifest {
            path,
            message: e.to_string(),
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Manifest::default()),
        Err(e) => Err(io_err(&path)(e)),
    }
}

/// `filename_for_id` unless another id already owns that name, in which
/// case a hash of the id disambiguates.
fn unique_filename(manifest: &Manifest, id: &str) -> String {
    let plain = filename_for_id(id);
    if manifest.by_filename(&plain).is_none() {
        return plain;
    }
    let stem = plain.trim_end_matches(".json");
    let digest = content_hash(id.as_bytes());
    format!("{stem}-{}.json", &digest[..12])
}

fn record_snapshot(manifest: &mut Manifest, date: NaiveDate, dataset: &str, report: &SyncReport) {
    let (documents, triples) = manifest.dataset_totals(dataset);
    let c = report.counts();
    match manifest
        .stats_log
        .iter_mut()
        .find(|s| s.date == date && s.dataset == dataset)
    {
        Some(s) => {
            s.documents = documents;
            s.triples = triples;
            s.added += c.added as u64;
            s.updated += c.updated as u64;
            s.removed += c.removed as u64;
        }
        None => manifest.stats_log.push(StatsSnapshot {
            date,
            dataset: dataset.into(),
            documents,
            triples,
            added: c.added as u64,
            updated: c.updated as u64,
            removed: c.removed as u64,
        }),
    }
}

pub fn export_stats_csv(manifest: &Manifest) -> Vec<u8> {
    let mut rows: Vec<&StatsSnapshot> = manifest.stats_log.iter().collect();
    rows.sort_by(|a, b| (a.date, &a.dataset).cmp(&(b.date, &b.dataset)));
    let mut out = String::from(STATS_CSV_HEADER);
    out.push('\n');
    for s in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.date, s.dataset, s.documents, s.triples, s.added, s.updated, s.removed
        ));
    }
    out.into_bytes()
}

#[derive(Debug, Clone)]
pub struct ManualFile {
    /// Where the bytes came from, for error reporting.
    pub source: String,
    pub bytes: Vec<u8>,
    pub dataset: String,
}

/// Sidecar of a manual annotation file: `<stem>.meta.json` next to it with
/// `{"dataset": "..."}`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn read_sidecar_dataset(path: &Path) -> io::Result<Option<String>> {
    #[derive(Deserialize)]
    struct Sidecar {
        dataset: String,
    }
    let side = sidecar_path(path);
    match fs::read(&side) {
        Ok(bytes) => serde_json::from_slice::<Sidecar>(&bytes)
            .map(|s| Some(s.dataset))
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", side.display()))),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "camelCase")]
pub enum RejectReason {
    Parse(String),
    Invalid(ViolationReport),
    Dataset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub source: String,
    pub reason: RejectReason,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.reason {
            RejectReason::Parse(e) => write!(f, "{}: {e}", self.source),
            RejectReason::Invalid(r) => write!(f, "{}: {r}", self.source),
            RejectReason::Dataset(d) => write!(f, "{}: invalid dataset name `{d}`", self.source),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestOutcome {
    pub report: SyncReport,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum FsckProblem {
    Unreadable(String),
    HashMismatch { expected: String, found: String },
    Unparsable(String),
    TripleCountMismatch { expected: u64, found: u64 },
}

impl fmt::Display for FsckProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FsckProblem::Unreadable(e) => write!(f, "unreadable: {e}"),
            FsckProblem::HashMismatch { expected, found } => {
                write!(f, "hash mismatch: manifest {expected}, file {found}")
            }
            FsckProblem::Unparsable(e) => write!(f, "unparsable: {e}"),
            FsckProblem::TripleCountMismatch { expected, found } => {
                write!(f, "triple count mismatch: manifest {expected}, file {found}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FsckFailure {
    pub id: String,
    pub path: PathBuf,
    pub problem: FsckProblem,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FsckReport {
    pub checked: usize,
    pub failures: Vec<FsckFailure>,
}

impl FsckReport {
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }
}
