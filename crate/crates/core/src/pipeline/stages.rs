use std::collections::HashMap;
use std::hash::Hasher;

use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_table, ClusterAssignment};
use crate::corpus::{load_corpus, serialize_instance, write_corpus, Corpus, CorpusFormat};
use crate::embed::{Embedder, EmbeddingVector};
use crate::kpt::{build_kpts, PartialTable};
use crate::mining::{mine_all, TrainingTriple};
use crate::querygen::{generate_all, GenError, SyntheticQuery};
use crate::retrieval::{
    build_index, evaluate, load_gold, EntryMeta, EvalReport, GoldQuery, RepresentationMode, RetrievalIndex,
};
use crate::store::{self, load_vectors, read_jsonl, save_vectors, write_json, write_jsonl};
use crate::train::{load_adapter, save_adapter, train as train_adapter, Adapter, TrainReport};

use super::{embed_error, stage_error, PipelineConfig, PipelineError, Stage};
use super::{
    ADAPTER, CLUSTERS, CORPUS, GEN_FAILURES, HELDOUT, INDEX, INSTANCE_VECTORS, KPTS, KPT_VECTORS, MINE_FAILURES,
    QUERIES, QUERY_VECTORS, REPORT, TRAIN_LOG, TRAIN_REPORT, TRIPLES,
};

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: String,
    /// Recall on the configured gold file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<EvalReport>,
    /// Recall on generated queries withheld from training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout: Option<EvalReport>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterRecord {
    table_id: String,
    assignment: ClusterAssignment<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Failure {
    id: String,
    reason: String,
}

fn ws(cfg: &PipelineConfig, artifact: &str) -> std::path::PathBuf {
    cfg.workspace.join(artifact)
}

fn workspace_corpus(cfg: &PipelineConfig, stage: Stage) -> Result<Corpus, PipelineError> {
    load_corpus(&ws(cfg, CORPUS), CorpusFormat::Jsonl).map_err(|e| stage_error(stage, e))
}

fn vectors(cfg: &PipelineConfig, artifact: &str) -> Result<Vec<EmbeddingVector>, PipelineError> {
    Ok(load_vectors(&ws(cfg, artifact))?.1)
}

/// Partial tables with their embeddings attached.
fn kpts_with_vectors(cfg: &PipelineConfig, stage: Stage) -> Result<Vec<PartialTable>, PipelineError> {
    let mut pts: Vec<PartialTable> = read_jsonl(&ws(cfg, KPTS))?;
    let vecs = vectors(cfg, KPT_VECTORS)?;
    if vecs.len() != pts.len() {
        return Err(stage_error(stage, format!("{KPTS} has {} rows but {KPT_VECTORS} has {}", pts.len(), vecs.len())));
    }
    for (pt, v) in pts.iter_mut().zip(vecs) {
        pt.embedding = Some(v);
    }
    Ok(pts)
}

pub(super) fn ingest(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let corpus = load_corpus(&cfg.corpus.path, cfg.corpus.format).map_err(|e| stage_error(Stage::Ingest, e))?;
    store::write_atomic(&ws(cfg, CORPUS), |out| write_corpus(&corpus, out))?;
    tracing::info!(tables = corpus.tables.len(), "ingested corpus");
    Ok(())
}

pub(super) fn embed(cfg: &PipelineConfig, embedder: &Embedder) -> Result<(), PipelineError> {
    let corpus = workspace_corpus(cfg, Stage::Embed)?;
    let mut texts = Vec::new();
    for t in &corpus.tables {
        for r in 0..t.len() {
            texts.push(serialize_instance(t, r).map_err(|e| stage_error(Stage::Embed, e))?);
        }
    }
    let vecs = embedder.embed_texts(&texts).map_err(|e| embed_error(Stage::Embed, e))?;
    save_vectors(&ws(cfg, INSTANCE_VECTORS), embedder.dim(), &vecs)?;
    Ok(())
}

/// Instance vectors split per table, in corpus order.
fn per_table_vectors(cfg: &PipelineConfig, corpus: &Corpus, stage: Stage) -> Result<Vec<Vec<EmbeddingVector>>, PipelineError> {
    let mut all = vectors(cfg, INSTANCE_VECTORS)?.into_iter();
    let total: usize = corpus.tables.iter().map(|t| t.len()).sum();
    if all.len() != total {
        return Err(stage_error(stage, format!("{INSTANCE_VECTORS} has {} rows, corpus has {total}", all.len())));
    }
    Ok(corpus.tables.iter().map(|t| all.by_ref().take(t.len()).collect()).collect())
}

pub(super) fn cluster(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let corpus = workspace_corpus(cfg, Stage::Cluster)?;
    let per_table = per_table_vectors(cfg, &corpus, Stage::Cluster)?;
    let records = corpus
        .tables
        .iter()
        .zip(&per_table)
        .map(|(t, v)| {
            Ok(ClusterRecord {
                table_id: t.table_id.clone(),
                assignment: cluster_table(t, v, &cfg.clustering).map_err(|e| stage_error(Stage::Cluster, e))?,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    write_jsonl(&ws(cfg, CLUSTERS), &records)?;
    Ok(())
}

pub(super) fn kpt(cfg: &PipelineConfig, embedder: &Embedder) -> Result<(), PipelineError> {
    let stage = Stage::Kpt;
    let corpus = workspace_corpus(cfg, stage)?;
    let per_table = per_table_vectors(cfg, &corpus, stage)?;
    let clusters: Vec<ClusterRecord> = read_jsonl(&ws(cfg, CLUSTERS))?;
    let by_table: HashMap<&str, &ClusterAssignment<f64>> =
        clusters.iter().map(|c| (c.table_id.as_str(), &c.assignment)).collect();
    let mut pts = Vec::new();
    for (t, v) in corpus.tables.iter().zip(&per_table) {
        let assignment = by_table
            .get(t.table_id.as_str())
            .ok_or_else(|| stage_error(stage, format!("no clustering for table `{}`", t.table_id)))?;
        pts.extend(build_kpts(t, Some((*assignment, v.as_slice())), &cfg.kpt, cfg.sampling).map_err(|e| stage_error(stage, e))?);
    }
    let texts: Vec<&str> = pts.iter().map(|p| p.text.as_str()).collect();
    let vecs = embedder.embed_texts(&texts).map_err(|e| embed_error(stage, e))?;
    write_jsonl(&ws(cfg, KPTS), &pts)?;
    save_vectors(&ws(cfg, KPT_VECTORS), embedder.dim(), &vecs)?;
    tracing::info!(partial_tables = pts.len(), strategy = %cfg.sampling, "built partial tables");
    Ok(())
}

/// Deterministic membership of a query in the held-out split.
pub(crate) fn is_heldout(query_id: &str, fraction: f64) -> bool {
    if fraction <= 0.0 {
        return false;
    }
    let mut h = fnv::FnvHasher::default();
    h.write(query_id.as_bytes());
    (h.finish() % 1_000_000) as f64 / 1_000_000.0 < fraction
}

pub(super) fn genq(cfg: &PipelineConfig, embedder: &Embedder) -> Result<(), PipelineError> {
    let stage = Stage::Genq;
    let pts: Vec<PartialTable> = read_jsonl(&ws(cfg, KPTS))?;
    let provider = cfg.generation.provider.build().map_err(|e| PipelineError::Config {
        field: "generation.provider".into(),
        message: e.to_string(),
    })?;
    let out = generate_all(&pts, &cfg.generation, provider.as_ref()).map_err(|e| match e {
        GenError::Config(m) => PipelineError::Config { field: "generation".into(), message: m },
        other => stage_error(stage, other),
    })?;
    if out.queries.is_empty() {
        let reason = out.failed.first().map(|(_, r)| r.clone()).unwrap_or_else(|| "no partial tables".into());
        return Err(PipelineError::Provider { stage, message: format!("no queries generated: {reason}") });
    }
    for (pt_id, reason) in &out.failed {
        tracing::warn!(%pt_id, %reason, "query generation failed");
    }
    let (heldout, training): (Vec<SyntheticQuery>, Vec<SyntheticQuery>) =
        out.queries.into_iter().partition(|q| is_heldout(&q.query_id, cfg.holdout_fraction));
    if training.is_empty() {
        return Err(stage_error(stage, "every generated query fell into the held-out split"));
    }
    let texts: Vec<&str> = training.iter().map(|q| q.text.as_str()).collect();
    let vecs = embedder.embed_texts(&texts).map_err(|e| embed_error(stage, e))?;
    let failures: Vec<Failure> = out.failed.into_iter().map(|(id, reason)| Failure { id, reason }).collect();
    write_jsonl(&ws(cfg, QUERIES), &training)?;
    save_vectors(&ws(cfg, QUERY_VECTORS), embedder.dim(), &vecs)?;
    write_jsonl(&ws(cfg, HELDOUT), &heldout)?;
    write_jsonl(&ws(cfg, GEN_FAILURES), &failures)?;
    tracing::info!(training = training.len(), heldout = heldout.len(), "generated queries");
    Ok(())
}

pub(super) fn mine(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let stage = Stage::Mine;
    let queries: Vec<SyntheticQuery> = read_jsonl(&ws(cfg, QUERIES))?;
    let qv = vectors(cfg, QUERY_VECTORS)?;
    let pts = kpts_with_vectors(cfg, stage)?;
    let out = mine_all(&queries, &qv, &pts, &cfg.mining).map_err(|e| stage_error(stage, e))?;
    for (query_id, reason) in &out.failed {
        tracing::warn!(%query_id, %reason, "mining failed");
    }
    if out.triples.is_empty() {
        return Err(stage_error(stage, "no training triples could be mined"));
    }
    let failures: Vec<Failure> = out.failed.into_iter().map(|(id, reason)| Failure { id, reason }).collect();
    write_jsonl(&ws(cfg, TRIPLES), &out.triples)?;
    write_jsonl(&ws(cfg, MINE_FAILURES), &failures)?;
    Ok(())
}

pub(super) fn train(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let stage = Stage::Train;
    let (adapter, report) = if cfg.use_adapter {
        let triples: Vec<TrainingTriple> = read_jsonl(&ws(cfg, TRIPLES))?;
        let queries: Vec<SyntheticQuery> = read_jsonl(&ws(cfg, QUERIES))?;
        let qv = vectors(cfg, QUERY_VECTORS)?;
        let pts = kpts_with_vectors(cfg, stage)?;
        let mut store = HashMap::with_capacity(queries.len() + pts.len());
        for (q, v) in queries.iter().zip(qv) {
            store.insert(q.query_id.clone(), v);
        }
        for pt in pts {
            store.insert(pt.pt_id, pt.embedding.expect("attached"));
        }
        train_adapter(&triples, &store, &cfg.training).map_err(|e| stage_error(stage, e))?
    } else {
        let (dim, _) = load_vectors::<f64>(&ws(cfg, KPT_VECTORS))?;
        let report = TrainReport {
            epoch_losses: Vec::new(),
            initial_loss: 0.0,
            final_loss: 0.0,
            steps: 0,
            wall_time_secs: 0.0,
            log: Vec::new(),
        };
        (Adapter::identity(dim), report)
    };
    save_adapter(&adapter, &ws(cfg, ADAPTER)).map_err(|e| stage_error(stage, e))?;
    write_jsonl(&ws(cfg, TRAIN_LOG), &report.log)?;
    write_json(&ws(cfg, TRAIN_REPORT), &report)?;
    tracing::info!(initial = report.initial_loss, r#final = report.final_loss, steps = report.steps, "trained adapter");
    Ok(())
}

pub(super) fn index(cfg: &PipelineConfig, embedder: &Embedder) -> Result<(), PipelineError> {
    let stage = Stage::Index;
    let pts = kpts_with_vectors(cfg, stage)?;
    let adapter: Option<Adapter<f64>> = if cfg.use_adapter {
        Some(load_adapter(&ws(cfg, ADAPTER), Some(embedder.dim())).map_err(|e| stage_error(stage, e))?)
    } else {
        None
    };
    let index = match cfg.retrieval.mode {
        RepresentationMode::PtOnly => {
            let entries = pts
                .iter()
                .map(|p| EntryMeta { pt_id: p.pt_id.clone(), table_id: p.table_id.clone() })
                .collect();
            let base = pts.into_iter().map(|p| p.embedding.expect("attached")).collect();
            RetrievalIndex::from_base_vectors(entries, base, adapter, cfg.retrieval.mode)
        }
        RepresentationMode::PtPlusQueries => {
            let queries: Vec<SyntheticQuery> = read_jsonl(&ws(cfg, QUERIES))?;
            let mut by_pt: HashMap<String, Vec<String>> = HashMap::new();
            for q in queries {
                by_pt.entry(q.pt_id).or_default().push(q.text);
            }
            build_index(&pts, &by_pt, embedder, adapter, cfg.retrieval.mode)
        }
    }
    .map_err(|e| stage_error(stage, e))?
    .with_fusion(cfg.retrieval.fusion);
    let dir = ws(cfg, INDEX);
    index.save(&dir).map_err(|e| stage_error(stage, e))?;
    Ok(())
}

pub(super) fn eval(cfg: &PipelineConfig, embedder: &Embedder) -> Result<(), PipelineError> {
    let stage = Stage::Eval;
    let index = RetrievalIndex::<f64>::load(&ws(cfg, INDEX)).map_err(|e| stage_error(stage, e))?;
    let run = |gold: &[GoldQuery]| -> Result<Option<EvalReport>, PipelineError> {
        if gold.is_empty() {
            return Ok(None);
        }
        evaluate(&index, gold, embedder, &cfg.retrieval.ks)
            .map(Some)
            .map_err(|e| match e {
                crate::retrieval::RetrievalError::Embed(inner) => embed_error(stage, inner),
                other => stage_error(stage, other),
            })
    };
    let gold = match &cfg.retrieval.gold_path {
        Some(p) => run(&load_gold(p).map_err(|e| stage_error(stage, e))?)?,
        None => None,
    };
    let heldout: Vec<GoldQuery> = read_jsonl::<SyntheticQuery>(&ws(cfg, HELDOUT))?
        .into_iter()
        .map(|q| GoldQuery { query: q.text, gold_table_id: q.table_id, dataset: None })
        .collect();
    let report = RunReport { variant: cfg.variant().to_string(), gold, heldout: run(&heldout)? };
    if report.gold.is_none() && report.heldout.is_none() {
        tracing::warn!("no gold file and no held-out queries; report has no recall figures");
    }
    write_json(&ws(cfg, REPORT), &report)?;
    Ok(())
}
