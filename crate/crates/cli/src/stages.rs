use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use stancelab_core::annotation::{self, AnnotationSession};
use stancelab_core::classifier::{
    classify_corpus, Backend, ClassificationRecord, ClassifyError, CompletionCache, LiveBackend,
    ReplayBackend, ScriptedBackend,
};
use stancelab_core::corpus::{self, CanonicalizeOptions, Document};
use stancelab_core::evidence::{self, EvidenceSentence, Lexicon};
use stancelab_core::jsonl;
use stancelab_core::report::{self, Format};
use stancelab_core::segmenter::{Segmenter, Sentence};
use stancelab_core::stats;
use stancelab_core::Label;
use stancelab_server::{AnnotationService, Item, SessionSpec};

use crate::config::{BackendKind, PipelineConfig};

pub const DOCUMENTS: &str = "documents.jsonl";
pub const SENTENCES: &str = "sentences.jsonl";
pub const EVIDENCE: &str = "evidence.jsonl";
pub const RECORDS: &str = "records.jsonl";
pub const RECORD_TIMESTAMPS: &str = "records.timestamps.jsonl";
pub const SESSIONS: &str = "sessions.jsonl";
pub const ANNOTATION_SAMPLE: &str = "annotation_sample.jsonl";
pub const BREAKDOWN: &str = "breakdown.csv";
pub const REPORT: &str = "report.txt";
pub const ANALYSIS: &str = "analysis.json";
pub const AGREEMENT: &str = "agreement.json";
pub const EVALUATION: &str = "evaluation.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Internal = 1,
    Config = 2,
    MissingInput = 3,
    Backend = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type StageResult<T = ()> = Result<T, Failure>;

trait OrExit<T> {
    fn or_exit(self, kind: ExitKind) -> StageResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, kind: ExitKind) -> StageResult<T> {
        self.map_err(|e| Failure {
            kind,
            error: e.into(),
        })
    }
}

fn fail(kind: ExitKind, error: anyhow::Error) -> Failure {
    Failure { kind, error }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Ingest,
    Segment,
    Filter,
    Classify,
    Annotate,
    Agree,
    Evaluate,
    Analyze,
    Report,
    All,
}

pub fn run(stage: Stage, cfg: &PipelineConfig) -> StageResult {
    fs::create_dir_all(&cfg.work_dir)
        .with_context(|| format!("creating {}", cfg.work_dir.display()))
        .or_exit(ExitKind::Internal)?;
    match stage {
        Stage::Ingest => ingest(cfg),
        Stage::Segment => segment(cfg),
        Stage::Filter => filter(cfg),
        Stage::Classify => classify(cfg),
        Stage::Annotate => annotate(cfg),
        Stage::Agree => agree(cfg),
        Stage::Evaluate => evaluate(cfg),
        Stage::Analyze => analyze(cfg),
        Stage::Report => report_stage(cfg),
        Stage::All => {
            ingest(cfg)?;
            segment(cfg)?;
            filter(cfg)?;
            classify(cfg)?;
            analyze(cfg)?;
            report_stage(cfg)
        }
    }
}

fn artifact(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.work_dir.join(name)
}

fn require(cfg: &PipelineConfig, name: &str, stage: &str) -> StageResult<PathBuf> {
    let p = artifact(cfg, name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(fail(
            ExitKind::MissingInput,
            anyhow!("{} not found; run `{stage}` first", p.display()),
        ))
    }
}

fn read_artifact<T: serde::de::DeserializeOwned>(
    cfg: &PipelineConfig,
    name: &str,
    stage: &str,
) -> StageResult<Vec<T>> {
    let p = require(cfg, name, stage)?;
    jsonl::read(&p).or_exit(ExitKind::Internal)
}

fn write_artifact<T: Serialize>(cfg: &PipelineConfig, name: &str, items: &[T]) -> StageResult {
    jsonl::write(&artifact(cfg, name), items).or_exit(ExitKind::Internal)
}

fn write_bytes(cfg: &PipelineConfig, name: &str, bytes: &[u8]) -> StageResult {
    let p = artifact(cfg, name);
    fs::write(&p, bytes)
        .with_context(|| format!("writing {}", p.display()))
        .or_exit(ExitKind::Internal)
}

fn ingest(cfg: &PipelineConfig) -> StageResult {
    let metas = corpus::load_manifest(&cfg.manifest_path).or_exit(ExitKind::Config)?;
    let base = cfg.manifest_path.parent().unwrap_or(Path::new("."));
    let opts = CanonicalizeOptions {
        strip_references: cfg.strip_references,
        strip_footnote_markers: cfg.strip_footnote_markers,
    };
    let docs = metas
        .iter()
        .map(|m| corpus::load_document(m, base, opts))
        .collect::<Result<Vec<_>, _>>()
        .or_exit(ExitKind::Config)?;
    write_artifact(cfg, DOCUMENTS, &docs)?;
    eprintln!("ingest: {} documents", docs.len());
    Ok(())
}

fn segment(cfg: &PipelineConfig) -> StageResult {
    let docs: Vec<Document> = read_artifact(cfg, DOCUMENTS, "ingest")?;
    let seg = match &cfg.abbreviations_path {
        Some(p) => Segmenter::from_file(p)
            .with_context(|| format!("abbreviations {}", p.display()))
            .or_exit(ExitKind::Config)?,
        None => Segmenter::default(),
    };
    let sentences: Vec<Sentence> = docs.iter().flat_map(|d| seg.segment(d)).collect();
    write_artifact(cfg, SENTENCES, &sentences)?;
    eprintln!("segment: {} sentences", sentences.len());
    Ok(())
}

fn lexicon(path: Option<&Path>, name: &str, default: fn() -> Lexicon) -> StageResult<Lexicon> {
    match path {
        Some(p) => Lexicon::from_file(name, p).or_exit(ExitKind::Config),
        None => Ok(default()),
    }
}

fn filter(cfg: &PipelineConfig) -> StageResult {
    let sentences: Vec<Sentence> = read_artifact(cfg, SENTENCES, "segment")?;
    let ends = lexicon(
        cfg.ends_lexicon_path.as_deref(),
        "ends",
        Lexicon::default_ends,
    )?;
    let ev = lexicon(
        cfg.evidence_lexicon_path.as_deref(),
        "evidence",
        Lexicon::default_evidence,
    )?;
    let kept = evidence::filter(&sentences, &ends, &ev);
    write_artifact(cfg, EVIDENCE, &kept)?;
    eprintln!(
        "filter: {} of {} sentences kept",
        kept.len(),
        sentences.len()
    );
    Ok(())
}

fn backend(cfg: &PipelineConfig, cache: &Arc<CompletionCache>) -> StageResult<Box<dyn Backend>> {
    Ok(match cfg.backend {
        BackendKind::Scripted => {
            let p = cfg.scripted_fixture_path.as_ref().expect("checked at load");
            Box::new(ScriptedBackend::from_file(p).or_exit(ExitKind::Config)?)
        }
        BackendKind::Replay => Box::new(ReplayBackend::new(Arc::clone(cache))),
        BackendKind::Live => Box::new(LiveBackend::from_env().or_exit(ExitKind::Backend)?),
    })
}

#[derive(Serialize, Deserialize)]
struct RecordTimestamp {
    sentence_id: String,
    timestamp: chrono::DateTime<chrono::Utc>,
}

/// Records go to `records.jsonl` without their timestamps, which live in a
/// sidecar so reruns over a warm cache are byte-identical.
fn write_records(cfg: &PipelineConfig, records: &[ClassificationRecord]) -> StageResult {
    let mut rows = Vec::with_capacity(records.len());
    let mut stamps = Vec::with_capacity(records.len());
    for r in records {
        let mut v = serde_json::to_value(r).or_exit(ExitKind::Internal)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timestamp");
        }
        rows.push(v);
        stamps.push(RecordTimestamp {
            sentence_id: r.sentence_id.clone(),
            timestamp: r.timestamp,
        });
    }
    write_artifact(cfg, RECORDS, &rows)?;
    write_artifact(cfg, RECORD_TIMESTAMPS, &stamps)
}

fn read_records(cfg: &PipelineConfig) -> StageResult<Vec<ClassificationRecord>> {
    let rows: Vec<Value> = read_artifact(cfg, RECORDS, "classify")?;
    let stamps: HashMap<String, Value> =
        match jsonl::read::<RecordTimestamp>(&artifact(cfg, RECORD_TIMESTAMPS)) {
            Ok(s) => s
                .into_iter()
                .map(|t| {
                    (
                        t.sentence_id,
                        serde_json::to_value(t.timestamp).expect("timestamp"),
                    )
                })
                .collect(),
            Err(_) => HashMap::new(),
        };
    let epoch =
        serde_json::to_value(chrono::DateTime::<chrono::Utc>::UNIX_EPOCH).expect("timestamp");
    rows.into_iter()
        .map(|mut v| {
            let id = v["sentence_id"].as_str().unwrap_or_default().to_string();
            if let Some(obj) = v.as_object_mut() {
                obj.insert(
                    "timestamp".into(),
                    stamps.get(&id).cloned().unwrap_or_else(|| epoch.clone()),
                );
            }
            serde_json::from_value(v)
                .with_context(|| format!("malformed record {id:?} in {RECORDS}"))
                .or_exit(ExitKind::Internal)
        })
        .collect()
}

fn classify(cfg: &PipelineConfig) -> StageResult {
    let sentences: Vec<EvidenceSentence> = read_artifact(cfg, EVIDENCE, "filter")?;
    let cache = Arc::new(CompletionCache::open(&cfg.cache_path).or_exit(ExitKind::Backend)?);
    let backend = backend(cfg, &cache)?;
    let records = classify_corpus(
        &sentences,
        backend.as_ref(),
        &cfg.decoding,
        &cache,
        cfg.concurrency_limit,
        cfg.retry_limit,
    )
    .map_err(|e| match e {
        ClassifyError::CacheWrite(_) => fail(ExitKind::Backend, e.into()),
        ClassifyError::ZeroConcurrency => fail(ExitKind::Config, e.into()),
    })?;
    write_records(cfg, &records)?;
    let failed = records
        .iter()
        .filter(|r| r.outcome.label().is_none())
        .count();
    eprintln!("classify: {} records, {failed} failed", records.len());
    Ok(())
}

fn breakdown(
    cfg: &PipelineConfig,
    records: &[ClassificationRecord],
) -> StageResult<report::Breakdown> {
    if records.is_empty() {
        return report::aggregate(&[], &[], &HashMap::new()).or_exit(ExitKind::Internal);
    }
    let docs: Vec<Document> = read_artifact(cfg, DOCUMENTS, "ingest")?;
    let ev: Vec<EvidenceSentence> = read_artifact(cfg, EVIDENCE, "filter")?;
    let metas: Vec<_> = docs.into_iter().map(|d| d.meta).collect();
    let index: HashMap<String, String> = ev
        .iter()
        .map(|e| (e.id(), e.sentence.doc_id.clone()))
        .collect();
    report::aggregate(records, &metas, &index).or_exit(ExitKind::MissingInput)
}

fn analyze(cfg: &PipelineConfig) -> StageResult {
    let records = read_records(cfg)?;
    let b = breakdown(cfg, &records)?;
    write_bytes(cfg, ANALYSIS, &report::render(&b, Format::Machine))?;
    match &b.chi_square {
        Some(c) => eprintln!(
            "analyze: chi-square {:.4}, df {}, p {:.3e}",
            c.statistic, c.df, c.p_value
        ),
        None => eprintln!("analyze: chi-square undefined (empty margin)"),
    }
    Ok(())
}

fn report_stage(cfg: &PipelineConfig) -> StageResult {
    let records = if artifact(cfg, RECORDS).is_file() {
        read_records(cfg)?
    } else {
        Vec::new()
    };
    let b = breakdown(cfg, &records)?;
    let text = report::render(&b, Format::Text);
    write_bytes(cfg, BREAKDOWN, &report::render(&b, Format::Csv))?;
    write_bytes(cfg, REPORT, &text)?;
    print!("{}", String::from_utf8_lossy(&text));
    Ok(())
}

fn session_specs(cfg: &PipelineConfig) -> Vec<SessionSpec> {
    cfg.annotation_sessions
        .iter()
        .chain(cfg.adjudication_session.as_ref())
        .cloned()
        .collect()
}

/// The shared annotation items; drawn from the evidence sentences on first use.
fn annotation_items(cfg: &PipelineConfig) -> StageResult<Vec<Item>> {
    let path = artifact(cfg, ANNOTATION_SAMPLE);
    if path.is_file() {
        return jsonl::read(&path).or_exit(ExitKind::Internal);
    }
    let ev: Vec<EvidenceSentence> = read_artifact(cfg, EVIDENCE, "filter")?;
    let ids = annotation::sample_for_annotation(&ev, cfg.annotation_sample_size, cfg.seed)
        .or_exit(ExitKind::Config)?;
    let text: HashMap<String, &str> = ev
        .iter()
        .map(|e| (e.id(), e.sentence.text.as_str()))
        .collect();
    let items: Vec<Item> = ids
        .into_iter()
        .map(|id| Item {
            text: text[&id].to_string(),
            sentence_id: id,
        })
        .collect();
    jsonl::write(&path, &items).or_exit(ExitKind::Internal)?;
    Ok(items)
}

fn open_service(cfg: &PipelineConfig, items: &[Item]) -> StageResult<AnnotationService> {
    AnnotationService::open(&session_specs(cfg), items, Some(&artifact(cfg, SESSIONS)))
        .or_exit(ExitKind::Config)
}

/// Applies `session_id<TAB>sentence_id<TAB>label` lines through the same
/// path the HTTP service uses.
fn import_labels(svc: &mut AnnotationService, path: &Path) -> StageResult<usize> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .or_exit(ExitKind::Config)?;
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [session, sentence, label] = fields[..] else {
            return Err(fail(
                ExitKind::Config,
                anyhow!(
                    "{}:{}: expected session_id, sentence_id, label",
                    path.display(),
                    i + 1
                ),
            ));
        };
        svc.record(session.trim(), sentence.trim(), label.trim())
            .with_context(|| format!("{}:{}", path.display(), i + 1))
            .or_exit(ExitKind::Config)?;
        n += 1;
    }
    Ok(n)
}

fn annotate(cfg: &PipelineConfig) -> StageResult {
    let items = annotation_items(cfg)?;
    let mut svc = open_service(cfg, &items)?;
    if let Some(path) = &cfg.annotate_import {
        let n = import_labels(&mut svc, path)?;
        eprintln!("annotate: imported {n} labels");
        for s in svc.sessions() {
            eprintln!("  {}: {}/{}", s.session_id, s.labels.len(), s.items.len());
        }
        return Ok(());
    }
    let addr = SocketAddr::new(cfg.annotation_bind, cfg.annotation_port);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .or_exit(ExitKind::Internal)?;
    eprintln!("annotate: serving {} items on http://{addr}/", items.len());
    rt.block_on(stancelab_server::serve(addr, svc, cfg.ui_dir.clone()))
        .with_context(|| format!("serving on {addr}"))
        .or_exit(ExitKind::Internal)
}

fn annotator_pair(cfg: &PipelineConfig) -> StageResult<(String, String)> {
    match &cfg.annotation_sessions[..] {
        [a, b, ..] => Ok((a.session_id.clone(), b.session_id.clone())),
        _ => Err(fail(
            ExitKind::Config,
            anyhow!("annotation_sessions must name at least two sessions"),
        )),
    }
}

fn annotation_state(cfg: &PipelineConfig) -> StageResult<AnnotationService> {
    require(cfg, SESSIONS, "annotate")?;
    let items: Vec<Item> = read_artifact(cfg, ANNOTATION_SAMPLE, "annotate")?;
    open_service(cfg, &items)
}

fn agree(cfg: &PipelineConfig) -> StageResult {
    let (a, b) = annotator_pair(cfg)?;
    let svc = annotation_state(cfg)?;
    let result = svc.agreement(&a, &b).or_exit(ExitKind::MissingInput)?;
    let mut body = serde_json::to_vec_pretty(&result).or_exit(ExitKind::Internal)?;
    body.push(b'\n');
    write_bytes(cfg, AGREEMENT, &body)?;
    println!(
        "kappa {:.4} over {} items (observed {:.4}, chance {:.4})",
        result.kappa, result.n_items, result.observed_agreement, result.expected_agreement
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GoldLabel {
    sentence_id: String,
    label: Label,
}

fn gold_labels(cfg: &PipelineConfig) -> StageResult<BTreeMap<String, Label>> {
    if let Some(p) = &cfg.gold_path {
        let rows: Vec<GoldLabel> = jsonl::read(p).or_exit(ExitKind::Config)?;
        return Ok(rows.into_iter().map(|g| (g.sentence_id, g.label)).collect());
    }
    let (a, b) = annotator_pair(cfg)?;
    let svc = annotation_state(cfg)?;
    let adj: Option<&AnnotationSession> = match &cfg.adjudication_session {
        Some(s) => Some(svc.session(&s.session_id).or_exit(ExitKind::Config)?),
        None => None,
    };
    annotation::build_gold(
        svc.session(&a).or_exit(ExitKind::Config)?,
        svc.session(&b).or_exit(ExitKind::Config)?,
        adj,
    )
    .or_exit(ExitKind::MissingInput)
}

#[derive(Serialize)]
struct Evaluation {
    n_gold: usize,
    n_evaluated: usize,
    n_failed: usize,
    n_unclassified: usize,
    confusion: stats::ConfusionMatrix,
    metrics: stats::ClassMetrics,
}

fn evaluate(cfg: &PipelineConfig) -> StageResult {
    let records = read_records(cfg)?;
    let gold = gold_labels(cfg)?;
    let predicted: HashMap<&str, Option<Label>> = records
        .iter()
        .map(|r| (r.sentence_id.as_str(), r.outcome.label()))
        .collect();
    let (mut g, mut p) = (Vec::new(), Vec::new());
    let (mut failed, mut missing) = (0, 0);
    for (id, label) in &gold {
        match predicted.get(id.as_str()) {
            Some(Some(pred)) => {
                g.push(*label);
                p.push(*pred);
            }
            Some(None) => failed += 1,
            None => missing += 1,
        }
    }
    let confusion = stats::confusion(&g, &p)
        .context("no gold item has a successful classification")
        .or_exit(ExitKind::MissingInput)?;
    let metrics = stats::metrics(&confusion).or_exit(ExitKind::Internal)?;
    println!(
        "accuracy {:.4}, micro F1 {:.4}, macro F1 {} over {} items",
        metrics.accuracy,
        metrics.micro_f1,
        metrics
            .macro_f1
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into()),
        g.len()
    );
    let eval = Evaluation {
        n_gold: gold.len(),
        n_evaluated: g.len(),
        n_failed: failed,
        n_unclassified: missing,
        confusion,
        metrics,
    };
    let mut body = serde_json::to_vec_pretty(&eval).or_exit(ExitKind::Internal)?;
    body.push(b'\n');
    write_bytes(cfg, EVALUATION, &body)
}
