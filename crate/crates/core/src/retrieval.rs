//! Exact-search retrieval over partial-table vectors with table-level fusion and recall@k.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{check_dims, dot, EmbedError, Embedder, Embedding};
use crate::kpt::PartialTable;
use crate::scalar::Scalar;
use crate::store::{self, StoreError};
use crate::train::{load_adapter, save_adapter, Adapter, TrainError};

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("index has no entries")]
    EmptyIndex,
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error("duplicate pt_id `{0}` in index")]
    DuplicatePtId(String),
    #[error("entry `{0}` is not unit-norm")]
    NotUnitNorm(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("gold table `{0}` is not in the index")]
    UnknownGoldTable(String),
    #[error("{0} entries but {1} vectors")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Embed(EmbedError),
    #[error(transparent)]
    Adapter(#[from] TrainError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<EmbedError> for RetrievalError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::DimensionMismatch { expected, actual } => Self::DimensionMismatch { expected, actual },
            other => Self::Embed(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationMode {
    #[default]
    PtOnly,
    PtPlusQueries,
}

/// How entry scores combine into one score per table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub pt_id: String,
    pub table_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTable<T> {
    pub table_id: String,
    pub score: T,
}

/// Immutable in-memory index; concurrent searches are safe.
#[derive(Debug, Clone)]
pub struct RetrievalIndex<T> {
    entries: Vec<EntryMeta>,
    vectors: Vec<Embedding<T>>,
    adapter: Option<Adapter<T>>,
    mode: RepresentationMode,
    fusion: Fusion,
    dim: usize,
}

/// Text embedded for one entry under `mode`.
pub fn entry_text<S: AsRef<str>>(pt: &PartialTable, queries: &[S], mode: RepresentationMode) -> String {
    match mode {
        RepresentationMode::PtOnly => pt.text.clone(),
        RepresentationMode::PtPlusQueries => {
            let mut text = pt.text.clone();
            for q in queries {
                text.push('\n');
                text.push_str(q.as_ref());
            }
            text
        }
    }
}

pub fn build_index<T: Scalar>(
    pts: &[PartialTable],
    queries_by_pt: &HashMap<String, Vec<String>>,
    embedder: &Embedder,
    adapter: Option<Adapter<T>>,
    mode: RepresentationMode,
) -> Result<RetrievalIndex<T>, RetrievalError> {
    let texts: Vec<String> = pts
        .iter()
        .map(|pt| {
            let qs = queries_by_pt.get(&pt.pt_id).map(Vec::as_slice).unwrap_or(&[]);
            entry_text(pt, qs, mode)
        })
        .collect();
    let base = embedder.embed_texts(&texts)?;
    let entries = pts
        .iter()
        .map(|pt| EntryMeta { pt_id: pt.pt_id.clone(), table_id: pt.table_id.clone() })
        .collect();
    let base = base.iter().map(Embedding::cast).collect();
    RetrievalIndex::from_base_vectors(entries, base, adapter, mode)
}

fn fused_order<T: Scalar>(a: &ScoredTable<T>, b: &ScoredTable<T>) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.table_id.cmp(&b.table_id))
}

impl<T: Scalar> RetrievalIndex<T> {
    /// Builds from unadapted unit vectors; the adapter, if any, is applied here.
    pub fn from_base_vectors(
        entries: Vec<EntryMeta>,
        base: Vec<Embedding<T>>,
        adapter: Option<Adapter<T>>,
        mode: RepresentationMode,
    ) -> Result<Self, RetrievalError> {
        let vectors = match &adapter {
            Some(a) => base.iter().map(|v| a.apply(v)).collect::<Result<_, _>>()?,
            None => base,
        };
        Self::from_parts(entries, vectors, adapter, mode)
    }

    /// Builds from vectors already in the index space.
    pub fn from_parts(
        entries: Vec<EntryMeta>,
        vectors: Vec<Embedding<T>>,
        adapter: Option<Adapter<T>>,
        mode: RepresentationMode,
    ) -> Result<Self, RetrievalError> {
        if entries.len() != vectors.len() {
            return Err(RetrievalError::LengthMismatch(entries.len(), vectors.len()));
        }
        if entries.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let dim = vectors[0].dim();
        if let Some(a) = &adapter {
            check_dims(a.dim(), dim)?;
        }
        let mut seen = HashSet::new();
        for (e, v) in entries.iter().zip(&vectors) {
            check_dims(dim, v.dim())?;
            if !seen.insert(e.pt_id.as_str()) {
                return Err(RetrievalError::DuplicatePtId(e.pt_id.clone()));
            }
            if (v.norm().as_f64() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(RetrievalError::NotUnitNorm(e.pt_id.clone()));
            }
        }
        Ok(Self { entries, vectors, adapter, mode, fusion: Fusion::Max, dim })
    }

    pub fn with_fusion(mut self, fusion: Fusion) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> RepresentationMode {
        self.mode
    }

    pub fn fusion(&self) -> Fusion {
        self.fusion
    }

    pub fn adapter(&self) -> Option<&Adapter<T>> {
        self.adapter.as_ref()
    }

    pub fn entries(&self) -> &[EntryMeta] {
        &self.entries
    }

    pub fn vectors(&self) -> &[Embedding<T>] {
        &self.vectors
    }

    pub fn contains_table(&self, table_id: &str) -> bool {
        self.entries.iter().any(|e| e.table_id == table_id)
    }

    /// Maps an unadapted query vector into the index space.
    pub fn prepare_query(&self, base: &Embedding<T>) -> Result<Embedding<T>, RetrievalError> {
        check_dims(self.dim, base.dim())?;
        Ok(match &self.adapter {
            Some(a) => a.apply(base)?,
            None => base.clone(),
        })
    }

    /// Every table ranked for a query vector already in index space.
    pub fn rank_tables(&self, query: &Embedding<T>) -> Result<Vec<ScoredTable<T>>, RetrievalError> {
        check_dims(self.dim, query.dim())?;
        let mut per_table: BTreeMap<&str, (T, usize)> = BTreeMap::new();
        for (e, v) in self.entries.iter().zip(&self.vectors) {
            let s = dot(query.values(), v.values());
            per_table
                .entry(e.table_id.as_str())
                .and_modify(|(acc, n)| {
                    match self.fusion {
                        Fusion::Max => *acc = acc.max(s),
                        Fusion::Mean => *acc += s,
                    }
                    *n += 1;
                })
                .or_insert((s, 1));
        }
        let mut ranked: Vec<ScoredTable<T>> = per_table
            .into_iter()
            .map(|(id, (acc, n))| ScoredTable {
                table_id: id.to_string(),
                score: match self.fusion {
                    Fusion::Max => acc,
                    Fusion::Mean => acc / T::of(n as f64),
                },
            })
            .collect();
        ranked.sort_by(fused_order);
        Ok(ranked)
    }

    pub fn search_vector(&self, base: &Embedding<T>, top_k: usize) -> Result<Vec<ScoredTable<T>>, RetrievalError> {
        if top_k == 0 {
            return Err(RetrievalError::InvalidTopK);
        }
        let mut ranked = self.rank_tables(&self.prepare_query(base)?)?;
        ranked.truncate(top_k);
        Ok(ranked)
    }

    pub fn search(&self, query: &str, embedder: &Embedder, top_k: usize) -> Result<Vec<ScoredTable<T>>, RetrievalError> {
        let base = embedder.embed_one(query)?.cast();
        self.search_vector(&base, top_k)
    }

    /// Persists as `entries.jsonl`, `vectors.bin`, `index.json` and, when present, `adapter.bin`.
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        store::write_jsonl(&dir.join("entries.jsonl"), &self.entries)?;
        store::save_vectors(&dir.join("vectors.bin"), self.dim, &self.vectors)?;
        let meta = IndexMeta {
            dim: self.dim,
            mode: self.mode,
            fusion: self.fusion,
            adapter: self.adapter.is_some(),
        };
        store::write_json(&dir.join("index.json"), &meta)?;
        let adapter_path = dir.join("adapter.bin");
        match &self.adapter {
            Some(a) => save_adapter(a, &adapter_path)?,
            None if adapter_path.exists() => {
                std::fs::remove_file(&adapter_path).map_err(|source| StoreError::Io {
                    path: adapter_path.display().to_string(),
                    source,
                })?;
            }
            None => {}
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let meta: IndexMeta = store::read_json(&dir.join("index.json"))?;
        let entries: Vec<EntryMeta> = store::read_jsonl(&dir.join("entries.jsonl"))?;
        let (dim, vectors) = store::load_vectors(&dir.join("vectors.bin"))?;
        check_dims(meta.dim, dim)?;
        let adapter = if meta.adapter {
            Some(load_adapter(&dir.join("adapter.bin"), Some(dim))?)
        } else {
            None
        };
        Ok(Self::from_parts(entries, vectors, adapter, meta.mode)?.with_fusion(meta.fusion))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexMeta {
    dim: usize,
    mode: RepresentationMode,
    fusion: Fusion,
    adapter: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldQuery {
    pub query: String,
    pub gold_table_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldQuery>, RetrievalError> {
    Ok(store::read_jsonl(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallAtK {
    pub k: usize,
    /// Percentage in `[0, 100]`, rounded to 2 decimals.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub queries: usize,
    pub recall: Vec<RecallAtK>,
}

impl RecallSummary {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|r| r.k == k).map(|r| r.recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTrace {
    pub query: String,
    pub gold_table_id: String,
    /// 1-based position of the gold table in the full table ranking.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: RecallSummary,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_dataset: BTreeMap<String, RecallSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<RankTrace>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Recall@k percentages from 1-based gold ranks.
pub fn recall_from_ranks(ranks: &[usize], ks: &[usize]) -> RecallSummary {
    let recall = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            let pct = if ranks.is_empty() { 0.0 } else { 100.0 * hits as f64 / ranks.len() as f64 };
            RecallAtK { k, recall: round2(pct) }
        })
        .collect();
    RecallSummary { queries: ranks.len(), recall }
}

/// Ranks every gold query against the index and reports recall@k overall and per dataset.
pub fn evaluate<T: Scalar>(
    index: &RetrievalIndex<T>,
    gold: &[GoldQuery],
    embedder: &Embedder,
    ks: &[usize],
) -> Result<EvalReport, RetrievalError> {
    let texts: Vec<&str> = gold.iter().map(|g| g.query.as_str()).collect();
    let vectors: Vec<Embedding<T>> = embedder.embed_texts(&texts)?.iter().map(Embedding::cast).collect();
    evaluate_vectors(index, gold, &vectors, ks)
}

/// As [`evaluate`], with unadapted query vectors supplied by the caller.
pub fn evaluate_vectors<T: Scalar>(
    index: &RetrievalIndex<T>,
    gold: &[GoldQuery],
    query_vectors: &[Embedding<T>],
    ks: &[usize],
) -> Result<EvalReport, RetrievalError> {
    if gold.len() != query_vectors.len() {
        return Err(RetrievalError::LengthMismatch(gold.len(), query_vectors.len()));
    }
    if let Some(g) = gold.iter().find(|g| !index.contains_table(&g.gold_table_id)) {
        return Err(RetrievalError::UnknownGoldTable(g.gold_table_id.clone()));
    }
    let ranks = gold
        .par_iter()
        .zip(query_vectors.par_iter())
        .map(|(g, v)| {
            let ranked = index.rank_tables(&index.prepare_query(v)?)?;
            let pos = ranked
                .iter()
                .position(|s| s.table_id == g.gold_table_id)
                .expect("gold table checked above");
            Ok(pos + 1)
        })
        .collect::<Result<Vec<usize>, RetrievalError>>()?;

    let mut by_dataset: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (g, &r) in gold.iter().zip(&ranks) {
        if let Some(d) = &g.dataset {
            by_dataset.entry(d.clone()).or_default().push(r);
        }
    }
    Ok(EvalReport {
        overall: recall_from_ranks(&ranks, ks),
        per_dataset: by_dataset
            .into_iter()
            .map(|(d, rs)| (d, recall_from_ranks(&rs, ks)))
            .collect(),
        trace: gold
            .iter()
            .zip(&ranks)
            .map(|(g, &rank)| RankTrace {
                query: g.query.clone(),
                gold_table_id: g.gold_table_id.clone(),
                rank,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kpt::SamplingStrategy;
    use proptest::prelude::*;

    fn pt(table: &str, j: usize, text: &str) -> PartialTable {
        PartialTable {
            pt_id: format!("{table}#kpt_random#{j}"),
            table_id: table.into(),
            strategy: SamplingStrategy::KptRandom,
            cluster_index: Some(j),
            row_indices: vec![j],
            text: text.into(),
            embedding: None,
        }
    }

    fn meta(pt_id: &str, table_id: &str) -> EntryMeta {
        EntryMeta { pt_id: pt_id.into(), table_id: table_id.into() }
    }

    fn unit2(angle: f64) -> Embedding<f64> {
        Embedding::new(vec![angle.cos(), angle.sin()])
    }

    #[test]
    fn one_entry_per_partial_table() {
        let pts: Vec<_> = ["a", "b", "c"]
            .iter()
            .flat_map(|t| (0..2).map(move |j| pt(t, j, &format!("id: {t}{j}"))))
            .collect();
        let index = build_index::<f64>(&pts, &HashMap::new(), &Embedder::mock(32), None, RepresentationMode::PtOnly).unwrap();
        assert_eq!(index.len(), 6);
    }

    #[test]
    fn pt_plus_queries_appends_query_lines() {
        let p = pt("t", 0, "name: Ann | city: Oslo");
        let qs = vec!["Where does Ann live?".to_string(), "Who lives in Oslo?".to_string()];
        assert_eq!(
            entry_text(&p, &qs, RepresentationMode::PtPlusQueries),
            "name: Ann | city: Oslo\nWhere does Ann live?\nWho lives in Oslo?"
        );
        assert_eq!(entry_text(&p, &qs, RepresentationMode::PtOnly), p.text);
    }

    #[test]
    fn self_similarity_ranks_own_table_first() {
        let pts = vec![pt("a", 0, "city: Oslo | pop: 700k"), pt("b", 0, "city: Lima | pop: 10M")];
        let e = Embedder::mock(64);
        let index = build_index::<f64>(&pts, &HashMap::new(), &e, None, RepresentationMode::PtOnly).unwrap();
        let hits = index.search("city: Lima | pop: 10M", &e, 1).unwrap();
        assert_eq!(hits[0].table_id, "b");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn max_fusion_prefers_single_strong_entry() {
        // Scores 0.9 and 0.2 for table x, 0.8 for table y.
        let q = Embedding::new(vec![1.0, 0.0]);
        let entries = vec![meta("x#0", "x"), meta("x#1", "x"), meta("y#0", "y")];
        let vecs = vec![unit2(0.9f64.acos()), unit2(0.2f64.acos()), unit2(0.8f64.acos())];
        let index = RetrievalIndex::from_parts(entries.clone(), vecs.clone(), None, RepresentationMode::PtOnly).unwrap();
        let ranked = index.rank_tables(&q).unwrap();
        assert_eq!(ranked[0].table_id, "x");
        assert!((ranked[0].score - 0.9).abs() < 1e-12);

        let mean = RetrievalIndex::from_parts(entries, vecs, None, RepresentationMode::PtOnly)
            .unwrap()
            .with_fusion(Fusion::Mean);
        assert_eq!(mean.rank_tables(&q).unwrap()[0].table_id, "y");
    }

    #[test]
    fn ties_break_by_table_id() {
        let v = unit2(0.3);
        let entries = vec![meta("c#0", "c"), meta("a#0", "a"), meta("b#0", "b")];
        let index = RetrievalIndex::from_parts(entries, vec![v.clone(), v.clone(), v.clone()], None, RepresentationMode::PtOnly).unwrap();
        let ids: Vec<_> = index.search_vector(&v, 3).unwrap().into_iter().map(|s| s.table_id).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn identity_adapter_leaves_vectors_unchanged() {
        let pts = vec![pt("a", 0, "k: v"), pt("b", 0, "k: w")];
        let e = Embedder::mock(16);
        let plain = build_index::<f64>(&pts, &HashMap::new(), &e, None, RepresentationMode::PtOnly).unwrap();
        let ident = build_index(&pts, &HashMap::new(), &e, Some(Adapter::identity(16)), RepresentationMode::PtOnly).unwrap();
        assert_eq!(plain.vectors(), ident.vectors());
        assert_eq!(plain.search("k: w", &e, 2).unwrap(), ident.search("k: w", &e, 2).unwrap());
    }

    #[test]
    fn rejects_bad_indexes_and_queries() {
        assert!(matches!(
            RetrievalIndex::<f64>::from_parts(vec![], vec![], None, RepresentationMode::PtOnly),
            Err(RetrievalError::EmptyIndex)
        ));
        let dup = RetrievalIndex::from_parts(vec![meta("p", "a"), meta("p", "b")], vec![unit2(0.0), unit2(1.0)], None, RepresentationMode::PtOnly);
        assert!(matches!(dup, Err(RetrievalError::DuplicatePtId(_))));
        let loose = RetrievalIndex::from_parts(vec![meta("p", "a")], vec![Embedding::new(vec![2.0, 0.0])], None, RepresentationMode::PtOnly);
        assert!(matches!(loose, Err(RetrievalError::NotUnitNorm(_))));
        let bad_adapter = RetrievalIndex::from_parts(vec![meta("p", "a")], vec![unit2(0.0)], Some(Adapter::identity(3)), RepresentationMode::PtOnly);
        assert!(matches!(bad_adapter, Err(RetrievalError::DimensionMismatch { .. })));

        let index = RetrievalIndex::from_parts(vec![meta("p", "a")], vec![unit2(0.0)], None, RepresentationMode::PtOnly).unwrap();
        assert!(matches!(index.search_vector(&unit2(0.0), 0), Err(RetrievalError::InvalidTopK)));
        let gold = [GoldQuery { query: "q".into(), gold_table_id: "zzz".into(), dataset: None }];
        assert!(matches!(
            evaluate_vectors(&index, &gold, &[unit2(0.0)], &DEFAULT_KS),
            Err(RetrievalError::UnknownGoldTable(_))
        ));
    }

    #[test]
    fn recall_hand_counts() {
        let all = |r: &RecallSummary| (r.at(1).unwrap(), r.at(5).unwrap(), r.at(10).unwrap());
        assert_eq!(all(&recall_from_ranks(&[1], &DEFAULT_KS)), (100.0, 100.0, 100.0));
        assert_eq!(all(&recall_from_ranks(&[7], &DEFAULT_KS)), (0.0, 0.0, 100.0));
        assert_eq!(all(&recall_from_ranks(&[1, 2, 6, 11], &DEFAULT_KS)), (25.0, 50.0, 75.0));
        assert_eq!(recall_from_ranks(&[1, 2, 3], &[1]).at(1), Some(33.33));
    }

    #[test]
    fn gold_rank_seven_of_ten() {
        // Ten tables on a fan; the query sits closest to t0, then t1, ...
        let entries: Vec<_> = (0..10).map(|i| meta(&format!("p{i}"), &format!("t{i}"))).collect();
        let vecs: Vec<_> = (0..10).map(|i| unit2(0.1 * i as f64)).collect();
        let index = RetrievalIndex::from_parts(entries, vecs, None, RepresentationMode::PtOnly).unwrap();
        let gold = [GoldQuery { query: "q".into(), gold_table_id: "t6".into(), dataset: Some("fan".into()) }];
        let report = evaluate_vectors(&index, &gold, &[unit2(-0.05)], &DEFAULT_KS).unwrap();
        assert_eq!(report.trace[0].rank, 7);
        assert_eq!(report.overall.at(1), Some(0.0));
        assert_eq!(report.overall.at(5), Some(0.0));
        assert_eq!(report.overall.at(10), Some(100.0));
        assert_eq!(report.per_dataset["fan"], report.overall);
    }

    #[test]
    fn save_and_load_round_trip() {
        let pts = vec![pt("a", 0, "x: 1"), pt("a", 1, "x: 2"), pt("b", 0, "y: 3")];
        let e = Embedder::mock(16);
        let mut w = Adapter::<f64>::identity(16);
        w.version = 1;
        let index = build_index(&pts, &HashMap::new(), &e, Some(w), RepresentationMode::PtPlusQueries)
            .unwrap()
            .with_fusion(Fusion::Mean);
        let dir = tempfile::tempdir().unwrap();
        index.save(dir.path()).unwrap();
        let back = RetrievalIndex::<f64>::load(dir.path()).unwrap();
        assert_eq!(back.entries(), index.entries());
        assert_eq!(back.vectors(), index.vectors());
        assert_eq!(back.adapter(), index.adapter());
        assert_eq!((back.mode(), back.fusion()), (index.mode(), index.fusion()));
    }

    proptest! {
        #[test]
        fn recall_is_monotone_and_bounded(ranks in prop::collection::vec(1usize..30, 1..50)) {
            let ks: Vec<usize> = (1..=31).collect();
            let r = recall_from_ranks(&ranks, &ks);
            for w in r.recall.windows(2) {
                prop_assert!(w[0].recall <= w[1].recall);
            }
            prop_assert!(r.recall.iter().all(|x| (0.0..=100.0).contains(&x.recall)));
            prop_assert_eq!(r.at(31), Some(100.0));
        }
    }
}
