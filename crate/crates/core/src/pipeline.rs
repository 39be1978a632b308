//! End-to-end pipeline runs: fetch every configured source, map, validate,
//! then synchronize the repository.
//!
//! A run is all-or-nothing. Every source and manual file is processed
//! first; the repository is written only when no fetch, parse, mapping or
//! validation problem was found.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::annotation::AnnotationDocument;
use crate::domspec::{DomainSpecError, DomainSpecification};
use crate::mapping::{execute_mapping, render_stats_table, MappingDocument, MappingError, MappingStats};
use crate::repository::{
    prepare_manual, read_sidecar_dataset, Clock, ManualFile, Origin, RejectReason, Repository, RepositoryError,
    SyncMode, SyncReport, SystemClock,
};
use crate::source::{fetch, ConfigError, PipelineConfig, SourceConfig};
use crate::validator::{validate_document, ViolationReport};
use crate::vocabulary::{Vocabulary, VocabularyError};
use crate::xmlpath::XmlDocument;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Vocabulary {
        path: PathBuf,
        #[source]
        source: VocabularyError,
    },
    #[error("{path}: {source}")]
    Spec {
        path: PathBuf,
        #[source]
        source: DomainSpecError,
    },
    #[error("{path}: {source}")]
    Mapping {
        path: PathBuf,
        #[source]
        source: MappingError,
    },
    #[error("{0}: bad glob: {1}")]
    Glob(String, String),
    #[error(transparent)]
    Repository(#[from] RepositoryError),
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary, PipelineError> {
    Vocabulary::load(&read(path)?).map_err(|source| PipelineError::Vocabulary {
        path: path.to_owned(),
        source,
    })
}

pub fn load_spec(path: &Path, vocab: &Vocabulary) -> Result<DomainSpecification, PipelineError> {
    DomainSpecification::parse(&read(path)?, vocab).map_err(|source| PipelineError::Spec {
        path: path.to_owned(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum ProblemKind {
    Fetch,
    Xml,
    Mapping,
    Violation,
    Manual,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Problem {
    pub kind: ProblemKind,
    /// Source file, request label or document id.
    pub tag: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ViolationReport>,
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.report {
            Some(r) => write!(f, "{}: {r}", self.tag),
            None => write!(f, "{}: {}", self.tag, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetOutcome {
    pub origin: Origin,
    pub documents: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<MappingStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sync: Option<SyncReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunOutcome {
    pub synced: bool,
    pub datasets: BTreeMap<String, DatasetOutcome>,
    pub problems: Vec<Problem>,
}

impl RunOutcome {
    /// 0 ok, 3 when every problem is a validation violation, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.problems.is_empty() {
            0
        } else if self.problems.iter().all(|p| p.kind == ProblemKind::Violation) {
            3
        } else {
            1
        }
    }

    pub fn total(&self) -> SyncReport {
        let mut total = SyncReport::default();
        for d in self.datasets.values() {
            if let Some(r) = &d.sync {
                total.merge(r.clone());
            }
        }
        total
    }

    /// Mapping statistics table over the automatic datasets.
    pub fn stats_table(&self) -> String {
        let rows: Vec<(String, MappingStats)> = self
            .datasets
            .iter()
            .filter_map(|(name, d)| d.stats.clone().map(|s| (name.clone(), s)))
            .collect();
        render_stats_table(&rows)
    }
}

#[derive(Clone)]
pub struct RunOptions {
    pub mode: SyncMode,
    /// Only process sources and manual files of this dataset.
    pub dataset: Option<String>,
    pub clock: Arc<dyn Clock>,
    /// Fetch, map and validate without touching the repository.
    pub dry_run: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: SyncMode::Incremental,
            dataset: None,
            clock: Arc::new(SystemClock),
            dry_run: false,
        }
    }
}

/// A config with everything it references loaded and checked.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub vocabulary: Vocabulary,
    pub spec: DomainSpecification,
    pub sources: Vec<(SourceConfig, MappingDocument)>,
}

impl Pipeline {
    pub fn load(config_path: &Path) -> Result<Pipeline, PipelineError> {
        Pipeline::from_config(PipelineConfig::load(config_path)?)
    }

    /// Fails fast on any unreadable or invalid referenced file.
    pub fn from_config(config: PipelineConfig) -> Result<Pipeline, PipelineError> {
        let vocabulary = load_vocabulary(&config.vocabulary)?;
        let spec = load_spec(&config.spec, &vocabulary)?;
        let mut sources = Vec::new();
        for src in &config.sources {
            let mapping = MappingDocument::parse(&read(&src.mapping)?, &spec, &vocabulary).map_err(|source| {
                PipelineError::Mapping {
                    path: src.mapping.clone(),
                    source,
                }
            })?;
            sources.push((src.clone(), mapping));
        }
        for m in &config.manual {
            glob::Pattern::new(&m.path).map_err(|e| PipelineError::Glob(m.path.clone(), e.to_string()))?;
        }
        Ok(Pipeline {
            config,
            vocabulary,
            spec,
            sources,
        })
    }

    pub fn dataset_of(src: &SourceConfig, mapping: &MappingDocument) -> String {
        src.dataset.clone().unwrap_or_else(|| mapping.dataset.clone())
    }

    pub fn run(&self, opts: &RunOptions) -> Result<RunOutcome, PipelineError> {
        let wanted = |d: &str| opts.dataset.as_deref().is_none_or(|w| w == d);
        let mut outcome = RunOutcome::default();
        let mut batches: BTreeMap<String, (Origin, Vec<AnnotationDocument>)> = BTreeMap::new();

        for (src, mapping) in &self.sources {
            let dataset = Pipeline::dataset_of(src, mapping);
            if !wanted(&dataset) {
                continue;
            }
            let fetched = fetch(src, &self.config.bindings);
            for e in fetched.errors {
                outcome.problem(ProblemKind::Fetch, e.tag.clone(), e.kind.to_string());
            }
            let mut stats = MappingStats::default();
            let mut docs = Vec::new();
            for payload in fetched.payloads {
                let xml = match XmlDocument::parse(&payload.bytes) {
                    Ok(xml) => xml,
                    Err(e) => {
                        outcome.problem(ProblemKind::Xml, payload.tag, e.to_string());
                        continue;
                    }
                };
                match execute_mapping(mapping, &xml, &self.spec) {
                    Ok(run) => {
                        stats.merge(&run.stats);
                        for doc in run.documents {
                            self.check(&mut outcome, &doc);
                            docs.push(doc);
                        }
                    }
                    Err(e) => {
                        for f in e.failures {
                            outcome.problem(ProblemKind::Mapping, payload.tag.clone(), f.to_string());
                        }
                    }
                }
            }
            let entry = outcome.datasets.entry(dataset.clone()).or_insert(DatasetOutcome {
                origin: Origin::Automatic,
                documents: 0,
                stats: Some(MappingStats::default()),
                sync: None,
            });
            entry.documents += docs.len();
            if let Some(s) = entry.stats.as_mut() {
                s.merge(&stats);
            }
            batches.entry(dataset).or_insert((Origin::Automatic, Vec::new())).1.extend(docs);
        }

        for manual in &self.config.manual {
            if !wanted(&manual.dataset) {
                continue;
            }
            let files = self.manual_files(&manual.path, &manual.dataset, &mut outcome);
            let batch = batches
                .entry(manual.dataset.clone())
                .or_insert((Origin::Manual, Vec::new()));
            if batch.0 != Origin::Manual {
                outcome.problem(
                    ProblemKind::Conflict,
                    manual.dataset.clone(),
                    "dataset is fed by both mapped sources and manual files".into(),
                );
                continue;
            }
            for file in files {
                match prepare_manual(&file, &self.spec, &self.vocabulary) {
                    Ok(doc) => batch.1.push(doc),
                    Err(r) => {
                        let message = r.to_string();
                        let (kind, report) = match r.reason {
                            RejectReason::Invalid(report) => (ProblemKind::Violation, Some(report)),
                            _ => (ProblemKind::Manual, None),
                        };
                        outcome.problems.push(Problem {
                            kind,
                            tag: r.source,
                            message,
                            report,
                        });
                    }
                }
            }
            let entry = outcome.datasets.entry(manual.dataset.clone()).or_insert(DatasetOutcome {
                origin: Origin::Manual,
                documents: 0,
                stats: None,
                sync: None,
            });
            entry.documents = batch.1.len();
        }

        for (dataset, (_, docs)) in &batches {
            let mut seen = BTreeSet::new();
            for id in docs.iter().filter_map(|d| d.id.as_deref()) {
                if !seen.insert(id) {
                    outcome.problem(ProblemKind::Conflict, dataset.clone(), format!("document id `{id}` produced twice"));
                }
            }
        }

        if !outcome.problems.is_empty() || opts.dry_run {
            return Ok(outcome);
        }
        let mut repo = Repository::open_with_clock(&self.config.repository, Arc::clone(&opts.clock))?;
        for (dataset, (origin, docs)) in &batches {
            let report = repo.sync(docs, dataset, opts.mode, *origin)?;
            if let Some(d) = outcome.datasets.get_mut(dataset) {
                d.sync = Some(report);
            }
        }
        outcome.synced = true;
        Ok(outcome)
    }

    fn check(&self, outcome: &mut RunOutcome, doc: &AnnotationDocument) {
        let report = validate_document(doc, &self.spec, &self.vocabulary);
        if !report.is_conformant() {
            outcome.problems.push(Problem {
                kind: ProblemKind::Violation,
                tag: report.document_id.clone(),
                message: report.to_string(),
                report: Some(report),
            });
        }
    }

    /// Manual files matching `pattern`, in path order. A sidecar's dataset
    /// overrides the configured one.
    fn manual_files(&self, pattern: &str, dataset: &str, outcome: &mut RunOutcome) -> Vec<ManualFile> {
        let mut paths: Vec<PathBuf> = match glob::glob(pattern) {
            Ok(paths) => paths.filter_map(Result::ok).filter(|p| !is_sidecar(p)).collect(),
            Err(e) => {
                outcome.problem(ProblemKind::Manual, pattern.into(), e.to_string());
                return Vec::new();
            }
        };
        paths.sort();
        let mut files = Vec::new();
        for path in paths {
            let source = path.display().to_string();
            let loaded = fs::read(&path).and_then(|bytes| {
                let dataset = read_sidecar_dataset(&path)?.unwrap_or_else(|| dataset.to_owned());
                Ok(ManualFile {
                    source: source.clone(),
                    bytes,
                    dataset,
                })
            });
            match loaded {
                Ok(f) => files.push(f),
                Err(e) => outcome.problem(ProblemKind::Manual, source, e.to_string()),
            }
        }
        files
    }
}

pub fn is_sidecar(path: &Path) -> bool {
    path.file_name()
        .is_some_and(|n| n.to_string_lossy().ends_with(".meta.json"))
}

impl RunOutcome {
    fn problem(&mut self, kind: ProblemKind, tag: String, message: String) {
        self.problems.push(Problem {
            kind,
            tag,
            message,
            report: None,
        });
    }
}
