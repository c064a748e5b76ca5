//! Partial-table construction from row clusters.
//!
//! Four strategies are available: random sampling inside each cluster (the default), the `s`
//! members nearest each centroid, the single member nearest each centroid, and the first-rows
//! baseline that ignores clustering altogether.

use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use fnv::FnvHasher;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::corpus::{serialize_partial_table, CorpusError, Table};
use crate::embed::{squared_distance, Embedding, EmbeddingVector};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum KptError {
    #[error("table `{0}` has no rows")]
    EmptyTable(String),
    #[error("strategy {0} needs a cluster assignment")]
    MissingAssignment(SamplingStrategy),
    #[error("assignment covers {labels} rows, table `{table_id}` has {rows}")]
    AssignmentMismatch {
        table_id: String,
        labels: usize,
        rows: usize,
    },
    #[error("invalid kpt config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Uniform sample of `s` rows per cluster.
    #[default]
    KptRandom,
    /// The `s` rows nearest each centroid.
    CbCentroid,
    /// The single row nearest each centroid.
    SSingle,
    /// Rows `0..first_rows_k`, no clustering.
    FirstRows,
}

impl SamplingStrategy {
    pub const ALL: [SamplingStrategy; 4] = [
        SamplingStrategy::KptRandom,
        SamplingStrategy::CbCentroid,
        SamplingStrategy::SSingle,
        SamplingStrategy::FirstRows,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplingStrategy::KptRandom => "kpt_random",
            SamplingStrategy::CbCentroid => "cb_centroid",
            SamplingStrategy::SSingle => "s_single",
            SamplingStrategy::FirstRows => "first_rows",
        }
    }

    pub fn needs_clustering(self) -> bool {
        self != SamplingStrategy::FirstRows
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown sampling strategy `{s}`"))
    }
}

/// A header plus a subset of rows, tagged with how it was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialTable {
    pub pt_id: String,
    pub table_id: String,
    pub strategy: SamplingStrategy,
    pub cluster_index: Option<usize>,
    pub row_indices: Vec<usize>,
    pub text: String,
    #[serde(skip)]
    pub embedding: Option<EmbeddingVector>,
}

pub fn pt_id(table_id: &str, strategy: SamplingStrategy, cluster_index: Option<usize>) -> String {
    match cluster_index {
        Some(j) => format!("{table_id}#{strategy}#{j}"),
        None => format!("{table_id}#{strategy}#f"),
    }
}

fn default_s() -> usize {
    5
}
fn default_first_rows_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KptConfig {
    /// Rows sampled per cluster.
    #[serde(default = "default_s")]
    pub s: usize,
    #[serde(default = "default_first_rows_k")]
    pub first_rows_k: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for KptConfig {
    fn default() -> Self {
        Self {
            s: default_s(),
            first_rows_k: default_first_rows_k(),
            seed: 0,
        }
    }
}

impl KptConfig {
    pub fn validate(&self) -> Result<(), KptError> {
        if self.s == 0 {
            return Err(KptError::Config("s must be at least 1".into()));
        }
        if self.first_rows_k == 0 {
            return Err(KptError::Config("first_rows_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// RNG stream for one cluster of one table, independent of every other table.
fn cluster_rng(seed: u64, table_id: &str, cluster: usize) -> ChaCha8Rng {
    let mut h = FnvHasher::default();
    h.write(table_id.as_bytes());
    h.write(&[0xff]);
    h.write(&(cluster as u64).to_le_bytes());
    ChaCha8Rng::seed_from_u64(seed ^ h.finish())
}

/// Members of cluster `j` ordered by distance to its centroid, ties by row position.
fn by_centroid_distance<T: Scalar>(
    members: &[usize],
    centroid: &[T],
    embeddings: &[Embedding<T>],
) -> Vec<usize> {
    let mut scored: Vec<(T, usize)> = members
        .iter()
        .map(|&i| (squared_distance(embeddings[i].values(), centroid), i))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, i)| i).collect()
}

fn make_pt(
    table: &Table,
    strategy: SamplingStrategy,
    cluster_index: Option<usize>,
    mut positions: Vec<usize>,
) -> Result<PartialTable, KptError> {
    positions.sort_unstable();
    let row_indices: Vec<usize> = positions
        .iter()
        .map(|&p| table.instances[p].row_index)
        .collect();
    let text = serialize_partial_table(table, &row_indices)?;
    Ok(PartialTable {
        pt_id: pt_id(&table.table_id, strategy, cluster_index),
        table_id: table.table_id.clone(),
        strategy,
        cluster_index,
        row_indices,
        text,
        embedding: None,
    })
}

/// Builds the first-rows baseline partial table.
pub fn first_rows(table: &Table, cfg: &KptConfig) -> Result<PartialTable, KptError> {
    if table.is_empty() {
        return Err(KptError::EmptyTable(table.table_id.clone()));
    }
    let n = table.len().min(cfg.first_rows_k);
    make_pt(table, SamplingStrategy::FirstRows, None, (0..n).collect())
}

/// Builds partial tables for one table under `strategy`.
///
/// `clustering` pairs the assignment with the row embeddings it was computed from; it is ignored
/// by [`SamplingStrategy::FirstRows`] and required by every other strategy.
pub fn build_kpts<T: Scalar>(
    table: &Table,
    clustering: Option<(&ClusterAssignment<T>, &[Embedding<T>])>,
    cfg: &KptConfig,
    strategy: SamplingStrategy,
) -> Result<Vec<PartialTable>, KptError> {
    cfg.validate()?;
    if table.is_empty() {
        return Err(KptError::EmptyTable(table.table_id.clone()));
    }
    if strategy == SamplingStrategy::FirstRows {
        return Ok(vec![first_rows(table, cfg)?]);
    }
    let (assignment, embeddings) = clustering.ok_or(KptError::MissingAssignment(strategy))?;
    if assignment.labels.len() != table.len() || embeddings.len() != table.len() {
        return Err(KptError::AssignmentMismatch {
            table_id: table.table_id.clone(),
            labels: assignment.labels.len(),
            rows: table.len(),
        });
    }

    (0..assignment.k)
        .map(|j| {
            let members = assignment.members(j);
            let take = cfg.s.min(members.len());
            let chosen = match strategy {
                SamplingStrategy::KptRandom => {
                    let mut rng = cluster_rng(cfg.seed, &table.table_id, j);
                    index::sample(&mut rng, members.len(), take)
                        .into_iter()
                        .map(|i| members[i])
                        .collect()
                }
                SamplingStrategy::CbCentroid => {
                    let mut ranked =
                        by_centroid_distance(&members, &assignment.centroids[j], embeddings);
                    ranked.truncate(take);
                    ranked
                }
                SamplingStrategy::SSingle => {
                    let mut ranked =
                        by_centroid_distance(&members, &assignment.centroids[j], embeddings);
                    ranked.truncate(1);
                    ranked
                }
                SamplingStrategy::FirstRows => unreachable!("handled above"),
            };
            make_pt(table, strategy, Some(j), chosen)
        })
        .collect()
}
