//! Stage-oriented pipeline over a workspace of flat artifacts.
//!
//! Each stage reads the artifacts of earlier stages, writes its own atomically and records input,
//! config and output hashes in `manifest.json`. A stage whose hashes all match is skipped.

mod compare;
mod config;
mod manifest;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::json;

use crate::embed::{EmbedError, Embedder, ProviderConfig};
use crate::store::StoreError;

pub use compare::{compare, format_comparison, ComparisonRow};
pub use config::{apply_override, CorpusSection, PipelineConfig, RetrievalSection, Variant};
pub use manifest::{hash_bytes, hash_path, Manifest, StageRecord};
pub use stages::RunReport;

pub const CORPUS: &str = "corpus.jsonl";
pub const INSTANCE_VECTORS: &str = "instance_vectors.bin";
pub const CLUSTERS: &str = "clusters.jsonl";
pub const KPTS: &str = "kpts.jsonl";
pub const KPT_VECTORS: &str = "kpt_vectors.bin";
pub const QUERIES: &str = "queries.jsonl";
pub const QUERY_VECTORS: &str = "query_vectors.bin";
pub const HELDOUT: &str = "heldout.jsonl";
pub const GEN_FAILURES: &str = "genq_failures.jsonl";
pub const TRIPLES: &str = "triples.jsonl";
pub const MINE_FAILURES: &str = "mine_failures.jsonl";
pub const ADAPTER: &str = "adapter.bin";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const INDEX: &str = "index";
pub const REPORT: &str = "report.json";
pub const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".lock";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("missing `{artifact}`; run the `{stage}` stage first")]
    MissingPrerequisite { artifact: String, stage: Stage },
    #[error("{stage}: provider failure: {message}")]
    Provider { stage: Stage, message: String },
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String },
    #[error("workspace {0} is locked by another run (remove {0}/.lock if stale)")]
    Locked(PathBuf),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl PipelineError {
    /// Process exit status: 2 config, 3 missing prerequisite, 4 provider, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::MissingPrerequisite { .. } => 3,
            PipelineError::Provider { .. } => 4,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Embed,
    Cluster,
    Kpt,
    Genq,
    Mine,
    Train,
    Index,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Embed,
        Stage::Cluster,
        Stage::Kpt,
        Stage::Genq,
        Stage::Mine,
        Stage::Train,
        Stage::Index,
        Stage::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Kpt => "kpt",
            Stage::Genq => "genq",
            Stage::Mine => "mine",
            Stage::Train => "train",
            Stage::Index => "index",
            Stage::Eval => "eval",
        }
    }

    /// Workspace artifacts this stage writes.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[CORPUS],
            Stage::Embed => &[INSTANCE_VECTORS],
            Stage::Cluster => &[CLUSTERS],
            Stage::Kpt => &[KPTS, KPT_VECTORS],
            Stage::Genq => &[QUERIES, QUERY_VECTORS, HELDOUT, GEN_FAILURES],
            Stage::Mine => &[TRIPLES, MINE_FAILURES],
            Stage::Train => &[ADAPTER, TRAIN_LOG, TRAIN_REPORT],
            Stage::Index => &[INDEX],
            Stage::Eval => &[REPORT],
        }
    }

    pub fn producer_of(artifact: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.outputs().contains(&artifact))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| PipelineError::Config {
                field: "stage".into(),
                message: format!("unknown stage `{s}`"),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub cache_hit: bool,
    pub wall_time_secs: f64,
}

pub(crate) fn embed_error(stage: Stage, e: EmbedError) -> PipelineError {
    match e {
        EmbedError::Http(_) | EmbedError::Protocol(_) => PipelineError::Provider { stage, message: e.to_string() },
        other => PipelineError::Stage { stage, message: other.to_string() },
    }
}

pub(crate) fn stage_error(stage: Stage, e: impl fmt::Display) -> PipelineError {
    PipelineError::Stage { stage, message: e.to_string() }
}

/// Holds the workspace lock for its lifetime.
#[derive(Debug)]
struct WorkspaceLock(PathBuf);

impl WorkspaceLock {
    fn acquire(workspace: &Path) -> Result<Self, PipelineError> {
        let path = workspace.join(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(workspace.to_path_buf()))
            }
            Err(source) => Err(StoreError::Io { path: path.display().to_string(), source }.into()),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// An open workspace bound to one configuration.
#[derive(Debug)]
pub struct Pipeline {
    cfg: PipelineConfig,
    manifest: Manifest,
    embedder: Option<Embedder>,
    _lock: WorkspaceLock,
}

fn embedding_identity(p: &ProviderConfig) -> serde_json::Value {
    json!({
        "kind": p.kind,
        "endpoint": p.endpoint,
        "model_name": p.model_name,
        "dim": p.dim,
        "max_input_chars": p.max_input_chars,
    })
}

impl Pipeline {
    /// Creates the workspace if needed and takes its lock.
    pub fn open(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        let ws = &cfg.workspace;
        fs::create_dir_all(ws).map_err(|source| StoreError::Io { path: ws.display().to_string(), source })?;
        let lock = WorkspaceLock::acquire(ws)?;
        let manifest = Manifest::load(&ws.join(MANIFEST))?;
        Ok(Self { cfg, manifest, embedder: None, _lock: lock })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn workspace(&self) -> &Path {
        &self.cfg.workspace
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        self.cfg.workspace.join(artifact)
    }

    fn embedder(&mut self, stage: Stage) -> Result<&Embedder, PipelineError> {
        if self.embedder.is_none() {
            let mut pc = self.cfg.embedding.clone();
            if pc.cache_dir.is_none() {
                pc.cache_dir = Some(self.cfg.workspace.join("embedding_cache"));
            }
            self.embedder = Some(Embedder::from_config(&pc).map_err(|e| embed_error(stage, e))?);
        }
        Ok(self.embedder.as_ref().expect("initialized above"))
    }

    /// Files a stage reads, as `(name, path)`; external inputs use a `@` prefix.
    fn inputs(&self, stage: Stage) -> Vec<(String, PathBuf)> {
        let ws = |a: &str| (a.to_string(), self.path(a));
        let cfg = &self.cfg;
        match stage {
            Stage::Ingest => vec![("@corpus".into(), cfg.corpus.path.clone())],
            Stage::Embed => vec![ws(CORPUS)],
            Stage::Cluster => vec![ws(CORPUS), ws(INSTANCE_VECTORS)],
            Stage::Kpt => vec![ws(CORPUS), ws(INSTANCE_VECTORS), ws(CLUSTERS)],
            Stage::Genq => vec![ws(KPTS)],
            Stage::Mine => vec![ws(QUERIES), ws(QUERY_VECTORS), ws(KPTS), ws(KPT_VECTORS)],
            Stage::Train if cfg.use_adapter => {
                vec![ws(TRIPLES), ws(QUERIES), ws(QUERY_VECTORS), ws(KPTS), ws(KPT_VECTORS)]
            }
            Stage::Train => vec![ws(KPT_VECTORS)],
            Stage::Index => {
                let mut v = vec![ws(KPTS), ws(KPT_VECTORS)];
                if cfg.retrieval.mode == crate::retrieval::RepresentationMode::PtPlusQueries {
                    v.push(ws(QUERIES));
                }
                if cfg.use_adapter {
                    v.push(ws(ADAPTER));
                }
                v
            }
            Stage::Eval => {
                let mut v = vec![ws(INDEX), ws(HELDOUT)];
                if let Some(g) = &cfg.retrieval.gold_path {
                    v.push(("@gold".into(), g.clone()));
                }
                v
            }
        }
    }

    /// The configuration slice that can change a stage's outputs.
    fn stage_config(&self, stage: Stage) -> serde_json::Value {
        let c = &self.cfg;
        match stage {
            Stage::Ingest => json!({ "format": c.corpus.format }),
            Stage::Embed => embedding_identity(&c.embedding),
            Stage::Cluster => json!(c.clustering),
            Stage::Kpt => json!({ "kpt": c.kpt, "sampling": c.sampling, "embedding": embedding_identity(&c.embedding) }),
            Stage::Genq => json!({
                "n_q": c.generation.n_q,
                "temperature": c.generation.temperature,
                "max_tokens": c.generation.max_tokens,
                "lang": c.generation.lang,
                "max_retries": c.generation.max_retries,
                "provider": { "kind": c.generation.provider.kind, "endpoint": c.generation.provider.endpoint, "model_name": c.generation.provider.model_name },
                "holdout_fraction": c.holdout_fraction,
                "embedding": embedding_identity(&c.embedding),
            }),
            Stage::Mine => json!(c.mining),
            Stage::Train => json!({ "training": c.training, "use_adapter": c.use_adapter }),
            Stage::Index => json!({
                "mode": c.retrieval.mode,
                "fusion": c.retrieval.fusion,
                "use_adapter": c.use_adapter,
                "embedding": embedding_identity(&c.embedding),
            }),
            Stage::Eval => json!({ "ks": c.retrieval.ks, "variant": c.variant().to_string() }),
        }
    }

    fn hash_outputs(&self, stage: Stage) -> Option<BTreeMap<String, String>> {
        stage
            .outputs()
            .iter()
            .map(|a| hash_path(&self.path(a)).ok().map(|h| (a.to_string(), h)))
            .collect()
    }

    /// Runs one stage, or confirms it is up to date.
    pub fn run_stage(&mut self, stage: Stage) -> Result<StageOutcome, PipelineError> {
        let mut input_hashes = BTreeMap::new();
        for (name, path) in self.inputs(stage) {
            if !path.exists() {
                return Err(match name.strip_prefix('@') {
                    Some(_) => PipelineError::Config {
                        field: if name == "@corpus" { "corpus.path".into() } else { "retrieval.gold_path".into() },
                        message: format!("{} does not exist", path.display()),
                    },
                    None => PipelineError::MissingPrerequisite {
                        stage: Stage::producer_of(&name).expect("workspace artifacts have producers"),
                        artifact: name,
                    },
                });
            }
            let h = hash_path(&path).map_err(|e| stage_error(stage, format!("hashing {}: {e}", path.display())))?;
            input_hashes.insert(name, h);
        }
        let config_hash = hash_bytes(&serde_json::to_vec(&self.stage_config(stage)).expect("json"));
        let key = stage.as_str().to_string();

        if let Some(rec) = self.manifest.stages.get(&key) {
            if rec.inputs == input_hashes && rec.config_hash == config_hash && self.hash_outputs(stage).as_ref() == Some(&rec.outputs) {
                let mut rec = rec.clone();
                rec.cache_hit = true;
                self.manifest.stages.insert(key, rec);
                self.manifest.save(&self.path(MANIFEST))?;
                tracing::info!(%stage, "up to date");
                return Ok(StageOutcome { stage, cache_hit: true, wall_time_secs: 0.0 });
            }
        }

        tracing::info!(%stage, "running");
        let started = Instant::now();
        self.execute(stage)?;
        let wall_time_secs = started.elapsed().as_secs_f64();
        let outputs = self
            .hash_outputs(stage)
            .ok_or_else(|| stage_error(stage, "stage finished without writing all outputs"))?;
        let completed_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.manifest.stages.insert(
            key,
            StageRecord { inputs: input_hashes, config_hash, outputs, wall_time_secs, cache_hit: false, completed_at },
        );
        self.manifest.save(&self.path(MANIFEST))?;
        Ok(StageOutcome { stage, cache_hit: false, wall_time_secs })
    }

    pub fn run_all(&mut self) -> Result<Vec<StageOutcome>, PipelineError> {
        Stage::ALL.into_iter().map(|s| self.run_stage(s)).collect()
    }

    fn execute(&mut self, stage: Stage) -> Result<(), PipelineError> {
        match stage {
            Stage::Ingest => stages::ingest(&self.cfg),
            Stage::Embed => {
                self.embedder(stage)?;
                stages::embed(&self.cfg, self.embedder.as_ref().expect("set"))
            }
            Stage::Cluster => stages::cluster(&self.cfg),
            Stage::Kpt => {
                self.embedder(stage)?;
                stages::kpt(&self.cfg, self.embedder.as_ref().expect("set"))
            }
            Stage::Genq => {
                self.embedder(stage)?;
                stages::genq(&self.cfg, self.embedder.as_ref().expect("set"))
            }
            Stage::Mine => stages::mine(&self.cfg),
            Stage::Train => stages::train(&self.cfg),
            Stage::Index => {
                self.embedder(stage)?;
                stages::index(&self.cfg, self.embedder.as_ref().expect("set"))
            }
            Stage::Eval => {
                self.embedder(stage)?;
                stages::eval(&self.cfg, self.embedder.as_ref().expect("set"))
            }
        }
    }
}
