//! Run directories: configuration, stage bookkeeping, manifest and lock.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cometh_core::generalization::{TrainConfig, DEFAULT_FOLDS, DEFAULT_HOLDOUT};
use cometh_core::LearnerConfig;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::gateway::{sha256_hex, BackendKind, GatewayConfig, TemplateId};
use crate::preprocess::PreprocessConfig;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    /// Actions come from the preprocessing stage.
    #[default]
    Preprocess,
    /// Every scenario belongs to one action; for synthetic benchmarks.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    #[serde(default = "all_feature_templates")]
    pub templates: Vec<TemplateId>,
}

fn all_feature_templates() -> Vec<TemplateId> {
    TemplateId::FEATURE_EXTRACTION.to_vec()
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { templates: all_feature_templates() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizationConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_holdout")]
    pub holdout: usize,
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_holdout() -> usize {
    DEFAULT_HOLDOUT
}

impl Default for GeneralizationConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), folds: DEFAULT_FOLDS, holdout: DEFAULT_HOLDOUT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default = "all_judge_templates")]
    pub templates: Vec<TemplateId>,
}

fn all_judge_templates() -> Vec<TemplateId> {
    TemplateId::JUDGE.to_vec()
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { templates: all_judge_templates() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonicals: Option<PathBuf>,
    #[serde(default)]
    pub actions: ActionSource,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub generalization: GeneralizationConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
}

impl RunConfig {
    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Absolute, so that the copy stored in a run directory still resolves.
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(parent).map_err(|e| Error::io(path, e))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.dataset);
        if let Some(p) = cfg.canonicals.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.gateway.cache_dir.as_mut() {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.learner.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.gateway.validate().map_err(|e| Error::Config(e.to_string()))?;
        for p in std::iter::once(&self.dataset).chain(self.canonicals.as_ref()) {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.features.templates.iter().any(|t| !TemplateId::FEATURE_EXTRACTION.contains(t)) {
            return Err(Error::Config("features.templates must be FeatExtract templates".into()));
        }
        if self.baseline.templates.iter().any(|t| !TemplateId::JUDGE.contains(t)) {
            return Err(Error::Config("baseline.templates must be Judge templates".into()));
        }
        if self.generalization.folds == 0 || self.generalization.holdout == 0 {
            return Err(Error::Config("folds and holdout must be positive".into()));
        }
        Ok(())
    }

    /// Digest over the settings plus the contents of referenced files. File
    /// locations and the cache directory do not affect outputs and are left
    /// out, so the same run in two directories has the same digest.
    pub fn digest(&self) -> Result<String> {
        let mut portable = self.clone();
        portable.dataset = PathBuf::new();
        portable.canonicals = portable.canonicals.map(|_| PathBuf::new());
        portable.gateway.cache_dir = None;
        let mut bytes = serde_json::to_vec(&portable).map_err(Error::internal)?;
        bytes.extend(fs::read(&self.dataset).map_err(|e| Error::io(&self.dataset, e))?);
        if let Some(c) = &self.canonicals {
            bytes.extend(fs::read(c).map_err(|e| Error::io(c, e))?);
        }
        Ok(sha256_hex(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Preprocess,
    Learn,
    Features,
    Train,
    Evaluate,
    Baseline,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Learn => "learn",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Baseline => "baseline",
        }
    }

    /// Stages whose outputs this one reads.
    pub fn upstream(self, actions: ActionSource) -> &'static [Stage] {
        match (self, actions) {
            (Stage::Preprocess, _) | (Stage::Baseline, _) => &[],
            (Stage::Learn, ActionSource::Preprocess) => &[Stage::Preprocess],
            (Stage::Learn, ActionSource::Single) => &[],
            (Stage::Features, _) => &[Stage::Learn],
            (Stage::Train, _) => &[Stage::Features],
            (Stage::Evaluate, _) => &[Stage::Train],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest over the config and every upstream stage's outputs.
    pub input_digest: String,
    /// Relative path (from the run directory) to sha256.
    pub outputs: BTreeMap<String, String>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub code_version: String,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl RunManifest {
    /// Everything except wall-clock times; equal across reproducible runs.
    pub fn digests(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        out.insert("config".to_string(), self.config_digest.clone());
        for (stage, rec) in &self.stages {
            for (path, d) in &rec.outputs {
                out.insert(format!("{}:{path}", stage.name()), d.clone());
            }
        }
        out
    }
}

#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is in use by another command (remove {} if that command died)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub config: RunConfig,
    pub manifest: RunManifest,
    _lock: RunLock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn list_files(dir: &Path, root: &Path, out: &mut Vec<String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            list_files(&p, root, out)?;
        } else {
            let rel = p.strip_prefix(root).map_err(Error::internal)?;
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

impl RunDir {
    /// Opens (or creates) a run directory. A `config` given here replaces the
    /// stored one; without it the stored `config.json` is used. `backend`
    /// overrides the configured gateway backend.
    pub fn open(root: &Path, config: Option<&Path>, backend: Option<BackendKind>) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let lock = RunLock::acquire(root)?;
        let stored = root.join("config.json");
        let mut config = match config {
            Some(p) => RunConfig::load(p)?,
            None if stored.is_file() => RunConfig::load(&stored)?,
            None => {
                return Err(Error::Config(format!(
                    "{} has no config.json; pass --config",
                    root.display()
                )))
            }
        };
        if let Some(b) = backend {
            config.gateway.backend = b;
            config.validate()?;
        }
        if config.gateway.cache_dir.is_none() {
            config.gateway.cache_dir = Some(root.join("cache"));
        }
        let manifest_path = root.join("manifest.json");
        let mut manifest: RunManifest = if manifest_path.is_file() {
            crate::dataset::read_json(&manifest_path)?
        } else {
            RunManifest::default()
        };
        let digest = config.digest()?;
        if manifest.config_digest != digest {
            manifest.stages.clear();
            manifest.config_digest = digest;
        }
        manifest.code_version = CODE_VERSION.to_string();
        let config_json = serde_json::to_vec_pretty(&config).map_err(Error::internal)?;
        if fs::read(&stored).ok().as_deref() != Some(config_json.as_slice()) {
            fs::write(&stored, config_json).map_err(|e| Error::io(&stored, e))?;
        }
        let run = Self { root: root.to_path_buf(), config, manifest, _lock: lock };
        run.save_manifest()?;
        Ok(run)
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    /// Path of an upstream artifact, or `MissingStageArtifact` naming the
    /// stage that produces it.
    pub fn require(&self, stage: Stage, file: &str) -> Result<PathBuf> {
        let p = self.stage_dir(stage).join(file);
        if self.manifest.stages.contains_key(&stage) && p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingStageArtifact { stage: stage.name(), path: p })
        }
    }

    fn input_digest(&self, stage: Stage) -> Result<String> {
        let mut parts = vec![self.manifest.config_digest.clone()];
        for up in stage.upstream(self.config.actions) {
            let rec = self.manifest.stages.get(up).ok_or_else(|| Error::MissingStageArtifact {
                stage: up.name(),
                path: self.stage_dir(*up),
            })?;
            parts.extend(rec.outputs.iter().map(|(k, v)| format!("{k}={v}")));
        }
        Ok(sha256_hex(parts.join("\n").as_bytes()))
    }

    fn is_current(&self, stage: Stage, input_digest: &str) -> bool {
        let Some(rec) = self.manifest.stages.get(&stage) else { return false };
        rec.input_digest == input_digest
            && rec.outputs.iter().all(|(rel, d)| hash_file(&self.root.join(rel)).ok().as_deref() == Some(d))
    }

    /// Runs `body` unless the stage's recorded inputs and outputs are
    /// unchanged (and `force` is off). `body` writes into the stage directory,
    /// which is emptied first.
    pub fn run_stage<F>(&mut self, stage: Stage, force: bool, body: F) -> Result<StageOutcome>
    where
        F: FnOnce(&RunDir, &Path) -> Result<()>,
    {
        let input_digest = self.input_digest(stage)?;
        if !force && self.is_current(stage, &input_digest) {
            return Ok(StageOutcome::Skipped);
        }
        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.manifest.stages.remove(&stage);
        let start = Instant::now();
        body(self, &dir)?;
        let wall_ms = start.elapsed().as_millis() as u64;
        let mut files = Vec::new();
        list_files(&dir, &self.root, &mut files)?;
        let outputs = files
            .into_iter()
            .map(|rel| Ok((rel.clone(), hash_file(&self.root.join(&rel))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        self.manifest.stages.insert(stage, StageRecord { input_digest, outputs, wall_ms });
        // Downstream records no longer describe these inputs.
        let stale: Vec<Stage> = self
            .manifest
            .stages
            .keys()
            .copied()
            .filter(|s| s.upstream(self.config.actions).contains(&stage))
            .collect();
        for s in stale {
            self.manifest.stages.remove(&s);
        }
        self.save_manifest()?;
        Ok(StageOutcome::Ran)
    }

    pub fn save_manifest(&self) -> Result<()> {
        let p = self.root.join("manifest.json");
        let body = serde_json::to_vec_pretty(&self.manifest).map_err(Error::internal)?;
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_vec_pretty(value).map_err(Error::internal)?;
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// File-name-safe form of an action name.
pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    let s = s.trim_matches('_').to_string();
    if s.is_empty() {
        "action".into()
    } else {
        s
    }
}
