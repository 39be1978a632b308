//! Python bindings. Structured results cross the boundary as plain dicts
//! and lists built from the serde representation of the Rust types.

use std::path::PathBuf;
use std::sync::Arc;

use annotator::annotation::AnnotationDocument;
use annotator::domspec::DomainSpecification;
use annotator::embedder;
use annotator::mapping::{execute_mapping, mapping_stats, MappingDocument};
use annotator::pipeline::{Pipeline, RunOptions};
use annotator::repository::{Clock, FixedClock, Origin, Repository, SyncMode, SystemClock};
use annotator::validator::{validate_corpus, validate_document};
use annotator::vocabulary::Vocabulary;
use annotator::xmlpath::XmlDocument;
use chrono::NaiveDate;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn clock(today: Option<&str>) -> PyResult<Arc<dyn Clock>> {
    Ok(match today {
        Some(s) => Arc::new(FixedClock(NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(value_err)?)),
        None => Arc::new(SystemClock),
    })
}

fn sync_mode(mode: &str) -> PyResult<SyncMode> {
    match mode {
        "incremental" => Ok(SyncMode::Incremental),
        "full" => Ok(SyncMode::Full),
        other => Err(PyValueError::new_err(format!("unknown mode `{other}`, expected incremental or full"))),
    }
}

#[pyclass(name = "Vocabulary", module = "schema_annotator", frozen)]
struct PyVocabulary {
    inner: Arc<Vocabulary>,
}

#[pymethods]
impl PyVocabulary {
    #[new]
    fn new(source: &str) -> PyResult<Self> {
        let inner = Vocabulary::load(source.as_bytes()).map_err(value_err)?;
        Ok(PyVocabulary { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(io_err)?;
        let inner = Vocabulary::load(&bytes).map_err(value_err)?;
        Ok(PyVocabulary { inner: Arc::new(inner) })
    }

    fn has_type(&self, name: &str) -> bool {
        self.inner.has_type(name)
    }

    fn is_subtype_of(&self, sub: &str, sup: &str) -> PyResult<bool> {
        self.inner.is_subtype_of(sub, sup).map_err(value_err)
    }

    fn property_ranges(&self, property: &str) -> PyResult<Vec<String>> {
        self.inner.property_ranges(property).map(<[String]>::to_vec).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

#[pyclass(name = "DomainSpec", module = "schema_annotator", frozen)]
struct PyDomainSpec {
    inner: Arc<DomainSpecification>,
}

#[pymethods]
impl PyDomainSpec {
    #[new]
    fn new(source: &str, vocabulary: &PyVocabulary) -> PyResult<Self> {
        let inner = DomainSpecification::parse(source.as_bytes(), &vocabulary.inner).map_err(value_err)?;
        Ok(PyDomainSpec { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn from_file(path: PathBuf, vocabulary: &PyVocabulary) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(io_err)?;
        let inner = DomainSpecification::parse(&bytes, &vocabulary.inner).map_err(value_err)?;
        Ok(PyDomainSpec { inner: Arc::new(inner) })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    fn types(&self) -> Vec<String> {
        self.inner.type_specs.keys().cloned().collect()
    }

    /// Merged property specifications of `types`, keyed by property name.
    fn allowed_properties<'py>(&self, py: Python<'py>, types: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
        let props = self.inner.allowed_properties(&types).map_err(value_err)?;
        to_py(py, &props)
    }
}

#[pyclass(name = "Annotation", module = "schema_annotator", frozen, from_py_object)]
#[derive(Clone)]
struct PyAnnotation {
    inner: AnnotationDocument,
}

#[pymethods]
impl PyAnnotation {
    #[staticmethod]
    fn parse(source: &[u8]) -> PyResult<Self> {
        let inner = AnnotationDocument::parse(source).map_err(value_err)?;
        Ok(PyAnnotation { inner })
    }

    #[getter]
    fn id(&self) -> Option<String> {
        self.inner.id.clone()
    }

    #[getter]
    fn types(&self) -> Vec<String> {
        self.inner.types.clone()
    }

    fn properties(&self) -> Vec<String> {
        self.inner.properties.keys().cloned().collect()
    }

    fn canonical_json(&self) -> String {
        self.inner.canonical_string()
    }

    fn count_triples(&self) -> u64 {
        self.inner.count_triples()
    }

    fn content_hash(&self) -> String {
        annotator::annotation::content_hash(&self.inner.canonical_bytes())
    }

    fn derived_id(&self) -> String {
        self.inner.derived_id()
    }

    /// Violations as dicts with code, path, message, expected and found.
    fn validate<'py>(
        &self,
        py: Python<'py>,
        spec: &PyDomainSpec,
        vocabulary: &PyVocabulary,
    ) -> PyResult<Bound<'py, PyAny>> {
        let report = validate_document(&self.inner, &spec.inner, &vocabulary.inner);
        to_py(py, &report.violations)
    }

    fn __eq__(&self, other: &PyAnnotation) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Annotation(id={:?}, types={:?})",
            self.inner.id.as_deref().unwrap_or(""),
            self.inner.types
        )
    }
}

#[pyclass(name = "Mapping", module = "schema_annotator", frozen)]
struct PyMapping {
    inner: MappingDocument,
    spec: Arc<DomainSpecification>,
}

#[pymethods]
impl PyMapping {
    #[new]
    fn new(source: &str, spec: &PyDomainSpec, vocabulary: &PyVocabulary) -> PyResult<Self> {
        let inner = MappingDocument::parse(source.as_bytes(), &spec.inner, &vocabulary.inner).map_err(value_err)?;
        Ok(PyMapping { inner, spec: Arc::clone(&spec.inner) })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn dataset(&self) -> &str {
        &self.inner.dataset
    }

    /// Maps one XML source to annotation documents.
    fn execute(&self, xml: &[u8]) -> PyResult<Vec<PyAnnotation>> {
        let doc = XmlDocument::parse(xml).map_err(value_err)?;
        let run = execute_mapping(&self.inner, &doc, &self.spec).map_err(value_err)?;
        Ok(run.documents.into_iter().map(|inner| PyAnnotation { inner }).collect())
    }

    /// Source and target type counts over the given XML sources.
    fn stats<'py>(&self, py: Python<'py>, sources: Vec<Vec<u8>>) -> PyResult<Bound<'py, PyAny>> {
        let docs = sources
            .iter()
            .map(|s| XmlDocument::parse(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        to_py(py, &mapping_stats(&self.inner, &docs).counts())
    }
}

#[pyclass(name = "Repository", module = "schema_annotator")]
struct PyRepository {
    inner: Repository,
}

#[pymethods]
impl PyRepository {
    #[new]
    #[pyo3(signature = (root, today=None))]
    fn new(root: PathBuf, today: Option<&str>) -> PyResult<Self> {
        let inner = Repository::open_with_clock(root, clock(today)?).map_err(io_err)?;
        Ok(PyRepository { inner })
    }

    #[pyo3(signature = (documents, dataset, mode="incremental", manual=false))]
    fn sync<'py>(
        &mut self,
        py: Python<'py>,
        documents: Vec<PyAnnotation>,
        dataset: &str,
        mode: &str,
        manual: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let docs: Vec<AnnotationDocument> = documents.into_iter().map(|d| d.inner).collect();
        let origin = if manual { Origin::Manual } else { Origin::Automatic };
        let report = self.inner.sync(&docs, dataset, sync_mode(mode)?, origin).map_err(value_err)?;
        to_py(py, &report)
    }

    fn get(&self, id: &str) -> PyResult<Option<PyAnnotation>> {
        let doc = self.inner.read_document(id).map_err(io_err)?;
        Ok(doc.map(|inner| PyAnnotation { inner }))
    }

    fn ids(&self) -> Vec<String> {
        self.inner.manifest().entries.keys().cloned().collect()
    }

    fn manifest_json(&self) -> String {
        self.inner.manifest().to_json()
    }

    fn stats_csv(&self) -> PyResult<String> {
        String::from_utf8(self.inner.export_stats_csv()).map_err(value_err)
    }

    fn fsck<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.fsck())
    }

    fn validate<'py>(
        &self,
        py: Python<'py>,
        spec: &PyDomainSpec,
        vocabulary: &PyVocabulary,
    ) -> PyResult<Bound<'py, PyAny>> {
        let report = validate_corpus(self.inner.root(), &spec.inner, &vocabulary.inner).map_err(io_err)?;
        to_py(py, &report.summary)
    }
}

/// Inserts or replaces the annotation script block in `html`.
#[pyfunction]
fn inject<'py>(py: Python<'py>, html: &[u8], annotation: &[u8], annotation_id: &str) -> PyResult<Bound<'py, PyBytes>> {
    let out = embedder::inject(html, annotation, annotation_id).map_err(value_err)?;
    Ok(PyBytes::new(py, &out))
}

/// Runs the configured pipeline; returns `(exit_code, outcome)`.
#[pyfunction]
#[pyo3(signature = (config, mode="incremental", dataset=None, dry_run=false, today=None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    config: PathBuf,
    mode: &str,
    dataset: Option<String>,
    dry_run: bool,
    today: Option<&str>,
) -> PyResult<(i32, Bound<'py, PyAny>)> {
    let pipeline = Pipeline::load(&config).map_err(value_err)?;
    let opts = RunOptions {
        mode: sync_mode(mode)?,
        dataset,
        clock: clock(today)?,
        dry_run,
    };
    let outcome = pipeline.run(&opts).map_err(value_err)?;
    Ok((outcome.exit_code(), to_py(py, &outcome)?))
}

#[pymodule]
fn schema_annotator(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyDomainSpec>()?;
    m.add_class::<PyAnnotation>()?;
    m.add_class::<PyMapping>()?;
    m.add_class::<PyRepository>()?;
    m.add_function(wrap_pyfunction!(inject, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
