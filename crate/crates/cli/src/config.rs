//! `key = value` pipeline configuration.
//!
//! Relative paths in the file resolve against the directory holding it;
//! relative paths given with `--set` resolve against the working directory.

use std::collections::BTreeMap;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use stancelab_core::classifier::DecodingParams;
use stancelab_server::SessionSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Live,
    Replay,
    Scripted,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub manifest_path: PathBuf,
    pub work_dir: PathBuf,
    pub ends_lexicon_path: Option<PathBuf>,
    pub evidence_lexicon_path: Option<PathBuf>,
    pub abbreviations_path: Option<PathBuf>,
    pub strip_references: bool,
    pub strip_footnote_markers: bool,
    pub decoding: DecodingParams,
    pub retry_limit: u32,
    pub concurrency_limit: usize,
    pub seed: u64,
    pub backend: BackendKind,
    pub scripted_fixture_path: Option<PathBuf>,
    pub cache_path: PathBuf,
    pub annotation_sample_size: usize,
    pub annotation_sessions: Vec<SessionSpec>,
    pub adjudication_session: Option<SessionSpec>,
    pub annotation_bind: IpAddr,
    pub annotation_port: u16,
    pub ui_dir: Option<PathBuf>,
    pub annotate_import: Option<PathBuf>,
    pub gold_path: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "manifest_path",
    "work_dir",
    "ends_lexicon_path",
    "evidence_lexicon_path",
    "abbreviations_path",
    "strip_references",
    "strip_footnote_markers",
    "model_id",
    "temperature",
    "max_tokens",
    "retry_limit",
    "concurrency_limit",
    "seed",
    "backend",
    "scripted_fixture_path",
    "cache_path",
    "annotation_sample_size",
    "annotation_sessions",
    "adjudication_session",
    "annotation_bind",
    "annotation_port",
    "ui_dir",
    "annotate_import",
    "gold_path",
];

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
        insert_pair(&mut out, k, v).with_context(|| format!("line {}", i + 1))?;
    }
    Ok(out)
}

fn insert_pair(map: &mut BTreeMap<String, String>, k: &str, v: &str) -> Result<()> {
    let k = k.trim();
    if !KEYS.contains(&k) {
        bail!("unknown key {k:?}");
    }
    map.insert(k.to_string(), v.trim().to_string());
    Ok(())
}

fn is_path_key(k: &str) -> bool {
    k.ends_with("_path") || matches!(k, "work_dir" | "ui_dir" | "annotate_import")
}

fn parse_session(s: &str) -> Result<SessionSpec> {
    let (id, annotator) = match s.split_once(':') {
        Some((id, a)) => (id.trim(), a.trim()),
        None => (s.trim(), s.trim()),
    };
    if id.is_empty() || annotator.is_empty() {
        bail!("session {s:?} must be session_id[:annotator_id]");
    }
    Ok(SessionSpec {
        session_id: id.to_string(),
        annotator_id: annotator.to_string(),
        items: None,
    })
}

fn parse_bool(k: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("{k}: expected true or false, got {v:?}"),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut pairs = parse_pairs(&text).with_context(|| format!("config {}", path.display()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("--set {o:?}: expected key=value"))?;
            let v = if is_path_key(k.trim()) && !v.trim().is_empty() {
                let cwd = std::env::current_dir().context("resolving --set path")?;
                cwd.join(v.trim()).to_string_lossy().into_owned()
            } else {
                v.to_string()
            };
            insert_pair(&mut pairs, k, &v).with_context(|| format!("--set {o:?}"))?;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_pairs(&pairs, base)
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>, base: &Path) -> Result<Self> {
        let get = |k: &str| pairs.get(k).map(String::as_str).filter(|v| !v.is_empty());
        let path = |k: &str| get(k).map(|v| base.join(v));
        fn num<T: std::str::FromStr>(k: &str, v: Option<&str>, default: T) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            match v {
                None => Ok(default),
                Some(v) => v.parse().map_err(|e| anyhow!("{k}: {e}")),
            }
        }

        let manifest_path =
            path("manifest_path").ok_or_else(|| anyhow!("manifest_path is required"))?;
        let work_dir = path("work_dir").ok_or_else(|| anyhow!("work_dir is required"))?;

        let mut decoding = DecodingParams::default();
        if let Some(m) = get("model_id") {
            decoding.model_id = m.to_string();
        }
        decoding.temperature = num("temperature", get("temperature"), decoding.temperature)?;
        decoding.max_tokens = num("max_tokens", get("max_tokens"), decoding.max_tokens)?;
        decoding.validate()?;

        let backend = match get("backend").unwrap_or("replay") {
            "live" => BackendKind::Live,
            "replay" => BackendKind::Replay,
            "scripted" => BackendKind::Scripted,
            other => bail!("backend: expected live, replay or scripted, got {other:?}"),
        };
        let scripted_fixture_path = path("scripted_fixture_path");
        if backend == BackendKind::Scripted && scripted_fixture_path.is_none() {
            bail!("backend = scripted requires scripted_fixture_path");
        }

        let concurrency_limit = num("concurrency_limit", get("concurrency_limit"), 4usize)?;
        if concurrency_limit == 0 {
            bail!("concurrency_limit must be >= 1");
        }

        let annotation_sessions = get("annotation_sessions")
            .unwrap_or("annotator_a,annotator_b")
            .split(',')
            .map(parse_session)
            .collect::<Result<Vec<_>>>()?;
        let adjudication_session = get("adjudication_session").map(parse_session).transpose()?;

        Ok(Self {
            cache_path: path("cache_path").unwrap_or_else(|| work_dir.join("cache.jsonl")),
            manifest_path,
            work_dir,
            ends_lexicon_path: path("ends_lexicon_path"),
            evidence_lexicon_path: path("evidence_lexicon_path"),
            abbreviations_path: path("abbreviations_path"),
            strip_references: get("strip_references")
                .map(|v| parse_bool("strip_references", v))
                .transpose()?
                .unwrap_or(true),
            strip_footnote_markers: get("strip_footnote_markers")
                .map(|v| parse_bool("strip_footnote_markers", v))
                .transpose()?
                .unwrap_or(true),
            decoding,
            retry_limit: num("retry_limit", get("retry_limit"), 3u32)?,
            concurrency_limit,
            seed: num("seed", get("seed"), 0u64)?,
            backend,
            scripted_fixture_path,
            annotation_sample_size: num(
                "annotation_sample_size",
                get("annotation_sample_size"),
                200usize,
            )?,
            annotation_sessions,
            adjudication_session,
            annotation_bind: num(
                "annotation_bind",
                get("annotation_bind"),
                IpAddr::from([127, 0, 0, 1]),
            )?,
            annotation_port: num("annotation_port", get("annotation_port"), 8750u16)?,
            ui_dir: path("ui_dir"),
            annotate_import: path("annotate_import"),
            gold_path: path("gold_path"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<PipelineConfig> {
        PipelineConfig::from_pairs(&parse_pairs(text)?, Path::new("/base"))
    }

    #[test]
    fn defaults_and_relative_paths() {
        let c = load("manifest_path = m.csv\nwork_dir = out\n").unwrap();
        assert_eq!(c.manifest_path, Path::new("/base/m.csv"));
        assert_eq!(c.cache_path, Path::new("/base/out/cache.jsonl"));
        assert_eq!((c.retry_limit, c.concurrency_limit, c.seed), (3, 4, 0));
        assert_eq!(c.backend, BackendKind::Replay);
        assert_eq!(c.decoding, DecodingParams::default());
        assert_eq!(c.annotation_sessions.len(), 2);
        assert!(c.annotation_bind.is_loopback());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(load("work_dir = x").is_err());
        assert!(load("manifest_path = m\nwork_dir = w\nbogus = 1").is_err());
        assert!(load("manifest_path = m\nwork_dir = w\nconcurrency_limit = 0").is_err());
        assert!(load("manifest_path = m\nwork_dir = w\nbackend = scripted").is_err());
        assert!(load("manifest_path = m\nwork_dir = w\ntemperature = -1").is_err());
        assert!(load("manifest_path = m\nwork_dir = w\nno equals sign").is_err());
    }

    #[test]
    fn sessions() {
        let c = load("manifest_path = m\nwork_dir = w\nannotation_sessions = a:alice, b\nadjudication_session = adj:carol").unwrap();
        assert_eq!(c.annotation_sessions[0].annotator_id, "alice");
        assert_eq!(c.annotation_sessions[1].annotator_id, "b");
        assert_eq!(c.adjudication_session.unwrap().session_id, "adj");
    }
}
