//! Training-triple construction with hard (top-h) or random negatives from other tables.

use std::cmp::Ordering;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{check_dims, dot, EmbedError, EmbeddingVector};
use crate::kpt::PartialTable;
use crate::querygen::SyntheticQuery;

#[derive(Debug, thiserror::Error)]
pub enum MiningError {
    #[error("query `{0}` has no eligible negatives from other tables")]
    NoEligible(String),
    #[error("partial table `{0}` has no embedding")]
    MissingEmbedding(String),
    #[error("positive partial table `{pt_id}` of query `{query_id}` is not in the candidate set")]
    MissingPositive { query_id: String, pt_id: String },
    #[error("{queries} queries but {vectors} query vectors")]
    LengthMismatch { queries: usize, vectors: usize },
    #[error("invalid mining config: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeStrategy {
    Hard,
    Random,
}

impl NegativeStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            NegativeStrategy::Hard => "hard",
            NegativeStrategy::Random => "random",
        }
    }
}

impl std::fmt::Display for NegativeStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_h() -> usize {
    8
}
fn default_negative_strategy() -> NegativeStrategy {
    NegativeStrategy::Hard
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningConfig {
    /// Negatives per query.
    #[serde(default = "default_h")]
    pub h: usize,
    #[serde(default = "default_negative_strategy")]
    pub strategy: NegativeStrategy,
    #[serde(default)]
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            h: default_h(),
            strategy: default_negative_strategy(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTriple {
    pub query_id: String,
    pub positive_pt_id: String,
    /// Most similar first for the hard strategy.
    pub negative_pt_ids: Vec<String>,
    pub strategy: NegativeStrategy,
}

fn query_rng(seed: u64, query_id: &str) -> ChaCha8Rng {
    let mut h = FnvHasher::default();
    h.write(query_id.as_bytes());
    ChaCha8Rng::seed_from_u64(seed ^ h.finish())
}

/// Similarity order: higher score first, then lexicographic `pt_id`.
fn rank_order(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Selects up to `cfg.h` negatives for one query among partial tables of other tables.
///
/// Fewer than `h` eligible candidates yields all of them; the triple's list length records the
/// actual count.
pub fn mine_negatives(
    query: &SyntheticQuery,
    q_vec: &EmbeddingVector,
    all_pts: &[PartialTable],
    cfg: &MiningConfig,
) -> Result<TrainingTriple, MiningError> {
    if cfg.h == 0 {
        return Err(MiningError::Config("h must be at least 1".into()));
    }
    if !all_pts.iter().any(|pt| pt.pt_id == query.pt_id) {
        return Err(MiningError::MissingPositive {
            query_id: query.query_id.clone(),
            pt_id: query.pt_id.clone(),
        });
    }
    let eligible: Vec<&PartialTable> = all_pts
        .iter()
        .filter(|pt| pt.table_id != query.table_id)
        .collect();
    if eligible.is_empty() {
        return Err(MiningError::NoEligible(query.query_id.clone()));
    }
    let take = cfg.h.min(eligible.len());

    let negative_pt_ids = match cfg.strategy {
        NegativeStrategy::Hard => {
            let mut scored = eligible
                .iter()
                .map(|pt| {
                    let v = pt
                        .embedding
                        .as_ref()
                        .ok_or_else(|| MiningError::MissingEmbedding(pt.pt_id.clone()))?;
                    check_dims(q_vec.dim(), v.dim())?;
                    Ok((dot(q_vec.values(), v.values()), pt.pt_id.as_str()))
                })
                .collect::<Result<Vec<_>, MiningError>>()?;
            scored.sort_by(rank_order);
            scored.into_iter().take(take).map(|(_, id)| id.to_string()).collect()
        }
        NegativeStrategy::Random => {
            let mut rng = query_rng(cfg.seed, &query.query_id);
            index::sample(&mut rng, eligible.len(), take)
                .into_iter()
                .map(|i| eligible[i].pt_id.clone())
                .collect()
        }
    };
    if take < cfg.h {
        tracing::debug!(query_id = %query.query_id, requested = cfg.h, actual = take, "clamped negatives");
    }
    Ok(TrainingTriple {
        query_id: query.query_id.clone(),
        positive_pt_id: query.pt_id.clone(),
        negative_pt_ids,
        strategy: cfg.strategy,
    })
}

#[derive(Debug, Default)]
pub struct MiningOutput {
    /// Ordered by `query_id`.
    pub triples: Vec<TrainingTriple>,
    pub failed: Vec<(String, String)>,
}

/// Mines every query in parallel; per-query failures are collected, not fatal.
pub fn mine_all(
    queries: &[SyntheticQuery],
    query_vecs: &[EmbeddingVector],
    pts: &[PartialTable],
    cfg: &MiningConfig,
) -> Result<MiningOutput, MiningError> {
    if queries.len() != query_vecs.len() {
        return Err(MiningError::LengthMismatch {
            queries: queries.len(),
            vectors: query_vecs.len(),
        });
    }
    let mut results: Vec<(&str, Result<TrainingTriple, MiningError>)> = queries
        .par_iter()
        .zip(query_vecs.par_iter())
        .map(|(q, v)| (q.query_id.as_str(), mine_negatives(q, v, pts, cfg)))
        .collect();
    results.sort_by(|a, b| a.0.cmp(b.0));

    let mut out = MiningOutput::default();
    let mut last: Option<&str> = None;
    for (query_id, result) in results {
        if last == Some(query_id) {
            continue;
        }
        last = Some(query_id);
        match result {
            Ok(t) => out.triples.push(t),
            Err(e) => {
                tracing::warn!(%query_id, error = %e, "no triple for query");
                out.failed.push((query_id.to_string(), e.to_string()));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kpt::SamplingStrategy;

    fn pt(pt_id: &str, table_id: &str, v: Vec<f64>) -> PartialTable {
        PartialTable {
            pt_id: pt_id.into(),
            table_id: table_id.into(),
            strategy: SamplingStrategy::KptRandom,
            cluster_index: Some(0),
            row_indices: vec![0],
            text: pt_id.into(),
            embedding: Some(EmbeddingVector::normalized(v).unwrap()),
        }
    }

    fn query(pt_id: &str, table_id: &str) -> SyntheticQuery {
        SyntheticQuery {
            query_id: format!("{pt_id}#q0"),
            pt_id: pt_id.into(),
            table_id: table_id.into(),
            text: "q".into(),
            lang: "en".into(),
        }
    }

    /// Unit vector whose dot with e1 is `s`.
    fn at(s: f64) -> Vec<f64> {
        vec![s, (1.0 - s * s).sqrt()]
    }

    #[test]
    fn hard_negatives_are_top_h() {
        let pts = vec![
            pt("own", "t0", at(1.0)),
            pt("b", "t2", at(0.5)),
            pt("c", "t3", at(0.1)),
            pt("a", "t1", at(0.9)),
        ];
        let q = query("own", "t0");
        let cfg = MiningConfig { h: 2, ..Default::default() };
        let t = mine_negatives(&q, &EmbeddingVector::basis(2, 0), &pts, &cfg).unwrap();
        assert_eq!(t.negative_pt_ids, ["a", "b"]);
        assert_eq!(t.positive_pt_id, "own");
    }

    #[test]
    fn ties_break_by_pt_id() {
        let pts = vec![
            pt("own", "t0", at(1.0)),
            pt("z", "t1", at(0.5)),
            pt("y", "t2", at(0.5)),
        ];
        let cfg = MiningConfig { h: 1, ..Default::default() };
        let t = mine_negatives(&query("own", "t0"), &EmbeddingVector::basis(2, 0), &pts, &cfg).unwrap();
        assert_eq!(t.negative_pt_ids, ["y"]);
    }

    #[test]
    fn same_table_candidates_are_excluded() {
        let pts = vec![pt("own", "t0", at(1.0)), pt("sib", "t0", at(0.9))];
        let err = mine_negatives(&query("own", "t0"), &EmbeddingVector::basis(2, 0), &pts, &MiningConfig::default());
        assert!(matches!(err, Err(MiningError::NoEligible(_))));
    }

    #[test]
    fn clamps_to_eligible_count() {
        let mut pts = vec![pt("own", "t0", at(1.0))];
        for i in 0..5 {
            pts.push(pt(&format!("p{i}"), &format!("t{}", i + 1), at(0.1 * i as f64)));
        }
        let t = mine_negatives(&query("own", "t0"), &EmbeddingVector::basis(2, 0), &pts, &MiningConfig::default())
            .unwrap();
        assert_eq!(t.negative_pt_ids.len(), 5);
    }

    #[test]
    fn missing_positive_and_embedding() {
        let pts = vec![pt("other", "t1", at(0.3))];
        assert!(matches!(
            mine_negatives(&query("own", "t0"), &EmbeddingVector::basis(2, 0), &pts, &MiningConfig::default()),
            Err(MiningError::MissingPositive { .. })
        ));
        let mut pts = vec![pt("own", "t0", at(1.0)), pt("x", "t1", at(0.2))];
        pts[1].embedding = None;
        assert!(matches!(
            mine_negatives(&query("own", "t0"), &EmbeddingVector::basis(2, 0), &pts, &MiningConfig::default()),
            Err(MiningError::MissingEmbedding(id)) if id == "x"
        ));
    }

    #[test]
    fn mine_all_two_tables() {
        let pts = vec![
            pt("t0#a", "t0", at(0.9)),
            pt("t0#b", "t0", at(0.2)),
            pt("t1#a", "t1", at(0.4)),
            pt("t1#b", "t1", at(0.7)),
        ];
        let queries = vec![query("t1#a", "t1"), query("t0#a", "t0")];
        let vecs = vec![EmbeddingVector::basis(2, 0); 2];
        let out = mine_all(&queries, &vecs, &pts, &MiningConfig::default()).unwrap();
        assert_eq!(out.triples.len(), 2);
        assert_eq!(out.triples[0].query_id, "t0#a#q0");
        assert_eq!(out.triples[0].negative_pt_ids, ["t1#b", "t1#a"]);
        assert_eq!(out.triples[1].negative_pt_ids, ["t0#a", "t0#b"]);
    }

    #[test]
    fn random_strategy_is_seeded() {
        let mut pts = vec![pt("own", "t0", at(1.0))];
        for i in 0..30 {
            pts.push(pt(&format!("p{i:02}"), &format!("t{}", i + 1), at(i as f64 / 30.0)));
        }
        let q = query("own", "t0");
        let v = EmbeddingVector::basis(2, 0);
        let cfg = MiningConfig { strategy: NegativeStrategy::Random, seed: 7, ..Default::default() };
        let a = mine_negatives(&q, &v, &pts, &cfg).unwrap();
        let b = mine_negatives(&q, &v, &pts, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.negative_pt_ids.len(), 8);
        let mut uniq = a.negative_pt_ids.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 8);
        let other = mine_negatives(&q, &v, &pts, &MiningConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.negative_pt_ids, other.negative_pt_ids);
    }
}
