//! `annotator`: run the annotation pipeline, validate, report statistics,
//! ingest manual annotations, embed annotations into HTML, check the
//! repository.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use annotator::annotation::AnnotationDocument;
use annotator::domspec::DomainSpecification;
use annotator::embedder::{serve, EmbedService, Snapshot, SnapshotSource};
use annotator::pipeline::{load_spec, load_vocabulary, Pipeline, RunOptions};
use annotator::repository::{
    read_sidecar_dataset, Clock, FixedClock, ManualFile, RejectReason, Repository, SyncMode, SystemClock,
};
use annotator::source::PipelineConfig;
use annotator::validator::{validate_corpus, validate_document, CorpusReport};
use annotator::vocabulary::Vocabulary;
use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_VIOLATIONS: u8 = 3;

#[derive(Parser)]
#[command(name = "annotator", version, about = "schema.org JSON-LD annotation pipeline")]
struct Cli {
    /// Pipeline config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    /// Print errors only.
    #[arg(long, global = true)]
    quiet: bool,
    /// Repository directory, overriding the config.
    #[arg(long, global = true)]
    repo: Option<PathBuf>,
    /// Date recorded in stats snapshots (YYYY-MM-DD); defaults to today (UTC).
    #[arg(long, global = true)]
    today: Option<NaiveDate>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Incremental,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch, map, validate and synchronize every configured source.
    Run {
        #[arg(long, value_enum, default_value = "incremental")]
        mode: Mode,
        /// Only process this dataset.
        #[arg(long)]
        dataset: Option<String>,
        /// Stop before writing to the repository.
        #[arg(long)]
        dry_run: bool,
    },
    /// Validate an annotation file or a whole repository.
    Validate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Annotation file or repository directory; defaults to the repository.
        target: Option<PathBuf>,
    },
    /// Triple statistics from the repository's stats log.
    Stats {
        /// Write the stats CSV here (`-` for stdout).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Instead, print the data type mapping table for the configured
        /// sources (no repository changes).
        #[arg(long)]
        mapping: bool,
    },
    /// Validate and store manually written annotations.
    Ingest {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Dataset for files without a `.meta.json` sidecar.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Inject annotations into HTML files, or serve them over HTTP.
    Embed {
        /// Page map file, overriding the config.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Page key of the HTML files.
        #[arg(long, required_unless_present = "serve")]
        key: Option<String>,
        /// Output directory; a single file goes to stdout without it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["key", "out"])]
        serve: bool,
        #[arg(long, default_value = "127.0.0.1:8080", requires = "serve")]
        bind: String,
        files: Vec<PathBuf>,
    },
    /// Check stored files against the manifest's hashes and triple counts.
    Fsck,
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    config: Option<PipelineConfig>,
}

impl Ctx<'_> {
    fn config(&self) -> Result<&PipelineConfig> {
        self.config
            .as_ref()
            .ok_or_else(|| usage("this command needs --config"))
    }

    fn repo_path(&self) -> Result<PathBuf> {
        match (&self.cli.repo, &self.config) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(c)) => Ok(c.repository.clone()),
            (None, None) => Err(usage("give --repo or --config")),
        }
    }

    fn clock(&self) -> Arc<dyn Clock> {
        match self.cli.today {
            Some(d) => Arc::new(FixedClock(d)),
            None => Arc::new(SystemClock),
        }
    }

    fn repo(&self) -> Result<Repository> {
        Ok(Repository::open_with_clock(self.repo_path()?, self.clock())?)
    }

    fn spec_and_vocab(
        &self,
        spec: &Option<PathBuf>,
        vocab: &Option<PathBuf>,
    ) -> Result<(DomainSpecification, Vocabulary)> {
        let vocab_path = match (vocab, &self.config) {
            (Some(v), _) => v.clone(),
            (None, Some(c)) => c.vocabulary.clone(),
            (None, None) => return Err(usage("give --vocab or --config")),
        };
        let spec_path = match (spec, &self.config) {
            (Some(s), _) => s.clone(),
            (None, Some(c)) => c.spec.clone(),
            (None, None) => return Err(usage("give --spec or --config")),
        };
        let vocab = load_vocabulary(&vocab_path)?;
        let spec = load_spec(&spec_path, &vocab)?;
        Ok((spec, vocab))
    }

    fn say(&self, text: impl AsRef<str>) {
        if !self.cli.quiet {
            println!("{}", text.as_ref().trim_end());
        }
    }

    fn json(&self, value: &impl serde::Serialize) {
        println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
    }
}

fn run(cli: &Cli) -> Result<u8> {
    let config = match &cli.config {
        Some(p) => Some(PipelineConfig::load(p)?),
        None => None,
    };
    let ctx = Ctx { cli, config };
    match &cli.command {
        Command::Run { mode, dataset, dry_run } => cmd_run(&ctx, *mode, dataset.clone(), *dry_run),
        Command::Validate { spec, vocab, target } => cmd_validate(&ctx, spec, vocab, target.as_deref()),
        Command::Stats { csv, mapping } => cmd_stats(&ctx, csv.as_deref(), *mapping),
        Command::Ingest {
            spec,
            vocab,
            dataset,
            files,
        } => cmd_ingest(&ctx, spec, vocab, dataset.as_deref(), files),
        Command::Embed {
            map,
            key,
            out,
            serve,
            bind,
            files,
        } => cmd_embed(&ctx, map.as_deref(), key.as_deref(), out.as_deref(), *serve, bind, files),
        Command::Fsck => cmd_fsck(&ctx),
    }
}

fn load_pipeline(ctx: &Ctx) -> Result<Pipeline> {
    let mut config = ctx.config()?.clone();
    if let Some(r) = &ctx.cli.repo {
        config.repository = r.clone();
    }
    Ok(Pipeline::from_config(config)?)
}

fn cmd_run(ctx: &Ctx, mode: Mode, dataset: Option<String>, dry_run: bool) -> Result<u8> {
    let pipeline = load_pipeline(ctx)?;
    let opts = RunOptions {
        mode: match mode {
            Mode::Incremental => SyncMode::Incremental,
            Mode::Full => SyncMode::Full,
        },
        dataset,
        clock: ctx.clock(),
        dry_run,
    };
    let outcome = pipeline.run(&opts)?;
    for p in &outcome.problems {
        eprintln!("{p}");
    }
    if ctx.cli.json {
        ctx.json(&outcome);
    } else {
        for (name, d) in &outcome.datasets {
            match &d.sync {
                Some(r) => ctx.say(format!("{name}: {}", r.counts())),
                None => ctx.say(format!("{name}: {} document(s), not synchronized", d.documents)),
            }
        }
        if outcome.synced {
            ctx.say(format!("total: {}", outcome.total().counts()));
        }
    }
    Ok(outcome.exit_code() as u8)
}

fn cmd_validate(
    ctx: &Ctx,
    spec: &Option<PathBuf>,
    vocab: &Option<PathBuf>,
    target: Option<&Path>,
) -> Result<u8> {
    let (spec, vocab) = ctx.spec_and_vocab(spec, vocab)?;
    let target = match target {
        Some(t) => t.to_owned(),
        None => ctx.repo_path()?,
    };
    if target.is_file() {
        let bytes = fs::read(&target).with_context(|| target.display().to_string())?;
        let doc = AnnotationDocument::parse(&bytes).with_context(|| target.display().to_string())?;
        let report = validate_document(&doc, &spec, &vocab);
        if ctx.cli.json {
            ctx.json(&report);
        } else {
            ctx.say(report.to_string());
        }
        return Ok(if report.is_conformant() { 0 } else { EXIT_VIOLATIONS });
    }
    if !target.is_dir() {
        bail!("{}: no such file or directory", target.display());
    }
    let report = validate_corpus(&target, &spec, &vocab)?;
    print_corpus(ctx, &report);
    Ok(if !report.unreadable.is_empty() {
        EXIT_RUNTIME
    } else if report.is_clean() {
        0
    } else {
        EXIT_VIOLATIONS
    })
}

fn print_corpus(ctx: &Ctx, report: &CorpusReport) {
    if ctx.cli.json {
        ctx.json(&serde_json::json!({
            "summary": report.summary,
            "reports": report.reports.iter().filter(|r| !r.is_conformant()).collect::<Vec<_>>(),
            "unreadable": report.unreadable,
        }));
        return;
    }
    for r in report.reports.iter().filter(|r| !r.is_conformant()) {
        ctx.say(r.to_string());
    }
    for u in &report.unreadable {
        eprintln!("{}: {}", u.path.display(), u.error);
    }
    let s = &report.summary;
    ctx.say(format!("{} of {} document(s) valid", s.documents_valid, s.documents_checked));
    for (code, n) in &s.violations_by_code {
        ctx.say(format!("  {code}: {n}"));
    }
}

fn cmd_stats(ctx: &Ctx, csv: Option<&Path>, mapping: bool) -> Result<u8> {
    if mapping {
        let pipeline = load_pipeline(ctx)?;
        let outcome = pipeline.run(&RunOptions {
            dry_run: true,
            clock: ctx.clock(),
            ..RunOptions::default()
        })?;
        for p in &outcome.problems {
            eprintln!("{p}");
        }
        if ctx.cli.json {
            let stats: std::collections::BTreeMap<_, _> = outcome
                .datasets
                .iter()
                .filter_map(|(k, d)| d.stats.as_ref().map(|s| (k, s)))
                .collect();
            ctx.json(&stats);
        } else {
            ctx.say(outcome.stats_table());
        }
        return Ok(outcome.exit_code() as u8);
    }
    let repo = ctx.repo()?;
    let bytes = repo.export_stats_csv();
    match csv {
        Some(p) if p == Path::new("-") => std::io::stdout().write_all(&bytes)?,
        Some(p) => fs::write(p, &bytes).with_context(|| p.display().to_string())?,
        None => {}
    }
    if ctx.cli.json {
        ctx.json(&repo.manifest().stats_log);
    } else if csv.is_none() {
        ctx.say(format!(
            "{:<10} {:<16} {:>9} {:>9} {:>7} {:>7} {:>7}",
            "date", "dataset", "documents", "triples", "added", "updated", "removed"
        ));
        let mut rows: Vec<_> = repo.manifest().stats_log.iter().collect();
        rows.sort_by(|a, b| (a.date, &a.dataset).cmp(&(b.date, &b.dataset)));
        for s in rows {
            ctx.say(format!(
                "{:<10} {:<16} {:>9} {:>9} {:>7} {:>7} {:>7}",
                s.date, s.dataset, s.documents, s.triples, s.added, s.updated, s.removed
            ));
        }
        let total: u64 = repo.manifest().entries.values().map(|e| e.triple_count).sum();
        ctx.say(format!("{} document(s), {total} triple(s) stored", repo.manifest().entries.len()));
    }
    Ok(0)
}

fn cmd_ingest(
    ctx: &Ctx,
    spec: &Option<PathBuf>,
    vocab: &Option<PathBuf>,
    dataset: Option<&str>,
    files: &[PathBuf],
) -> Result<u8> {
    let (spec, vocab) = ctx.spec_and_vocab(spec, vocab)?;
    let mut manual = Vec::new();
    for path in files {
        let bytes = fs::read(path).with_context(|| path.display().to_string())?;
        let dataset = match read_sidecar_dataset(path)? {
            Some(d) => d,
            None => dataset
                .map(str::to_owned)
                .ok_or_else(|| usage(format!("{}: no sidecar and no --dataset", path.display())))?,
        };
        manual.push(ManualFile {
            source: path.display().to_string(),
            bytes,
            dataset,
        });
    }
    let mut repo = ctx.repo()?;
    let outcome = repo.ingest_manual(&manual, &spec, &vocab)?;
    for r in &outcome.rejected {
        eprintln!("rejected {r}");
    }
    if ctx.cli.json {
        ctx.json(&outcome);
    } else {
        ctx.say(outcome.report.counts().to_string());
    }
    let code = if outcome.rejected.is_empty() {
        0
    } else if outcome
        .rejected
        .iter()
        .all(|r| matches!(r.reason, RejectReason::Invalid(_)))
    {
        EXIT_VIOLATIONS
    } else {
        EXIT_RUNTIME
    };
    Ok(code)
}

fn cmd_embed(
    ctx: &Ctx,
    map: Option<&Path>,
    key: Option<&str>,
    out: Option<&Path>,
    serve_mode: bool,
    bind: &str,
    files: &[PathBuf],
) -> Result<u8> {
    let page_map = match (map, &ctx.config) {
        (Some(m), _) => m.to_owned(),
        (None, Some(c)) => c.page_map.clone().ok_or_else(|| usage("config has no pageMap; give --map"))?,
        (None, None) => return Err(usage("give --map or --config")),
    };
    let source = SnapshotSource {
        repository: ctx.repo_path()?,
        page_map,
    };
    if serve_mode {
        let service = EmbedService::new(source)?;
        for w in service.snapshot().warnings() {
            eprintln!("warning: {w}");
        }
        ctx.say(format!("serving on http://{bind}"));
        serve(Arc::new(service), bind).with_context(|| format!("serving on {bind}"))?;
        return Ok(0);
    }
    let key = key.expect("clap requires --key without --serve");
    if files.is_empty() {
        return Err(usage("no HTML files given"));
    }
    if files.len() > 1 && out.is_none() {
        return Err(usage("several files need --out"));
    }
    let snapshot: Snapshot = source.load()?;
    for w in snapshot.warnings() {
        eprintln!("warning: {w}");
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    for file in files {
        let html = fs::read(file).with_context(|| file.display().to_string())?;
        let result = snapshot
            .embed(key, &html)
            .with_context(|| file.display().to_string())?;
        match out {
            Some(dir) => {
                let target = dir.join(file.file_name().unwrap_or_default());
                fs::write(&target, result).with_context(|| target.display().to_string())?;
            }
            None => std::io::stdout().write_all(&result)?,
        }
    }
    Ok(0)
}

fn cmd_fsck(ctx: &Ctx) -> Result<u8> {
    let repo = ctx.repo()?;
    let report = repo.fsck();
    if ctx.cli.json {
        ctx.json(&report);
    } else {
        for f in &report.failures {
            eprintln!("{}: {} ({})", f.id, f.problem, f.path.display());
        }
        ctx.say(format!("{} document(s) checked, {} bad", report.checked, report.failures.len()));
    }
    Ok(if report.is_clean() { 0 } else { EXIT_RUNTIME })
}
