//! Seeded synthetic corpus whose discriminative content sits in late rows.
//!
//! Tables come in families that share a header and a pool of common values. The first
//! `filler_rows` rows of every table draw keys and values from pools shared by the whole corpus;
//! later rows carry invented words unique to their table. Gold queries ask about those late rows
//! with the same wording the mock query generator uses.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError, Table};
use crate::retrieval::GoldQuery;

const FAMILIES: [(&str, [&str; 4]); 10] = [
    ("people", ["person", "hometown_region", "professional_role", "affiliated_team"]),
    ("products", ["product", "manufacturer_brand", "retail_category", "country_of_origin"]),
    ("rivers", ["river", "headwater_source", "estuary_mouth", "drainage_basin"]),
    ("films", ["film", "credited_director", "production_studio", "cinematic_genre"]),
    ("ships", ["vessel", "registry_port", "shipyard_builder", "hull_classification"]),
    ("plants", ["species", "native_habitat", "botanical_family", "flower_coloration"]),
    ("clubs", ["club", "competition_league", "home_stadium", "head_coach"]),
    ("books", ["book", "primary_author", "publishing_house", "literary_series"]),
    ("stations", ["station", "transit_line", "municipal_district", "network_operator"]),
    ("minerals", ["mineral", "chemical_formula", "crystal_system", "type_locality"]),
];

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "qu"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "y"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "x", "th"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub tables: usize,
    pub filler_rows: usize,
    pub planted_rows: usize,
    pub gold_per_table: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { tables: 50, filler_rows: 11, planted_rows: 24, gold_per_table: 24, seed: 7 }
    }
}

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("non-empty"));
        w.push_str(VOWELS.choose(rng).expect("non-empty"));
        w.push_str(CODAS.choose(rng).expect("non-empty"));
    }
    let mut chars = w.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => w,
    }
}

/// Invented words, pairwise distinct.
fn distinct_words(rng: &mut ChaCha8Rng, n: usize, syllables: usize, taken: &mut std::collections::HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = word(rng, syllables);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Builds the corpus and one gold query per sampled late row.
pub fn synthesize(cfg: &SynthConfig) -> Result<(Corpus, Vec<GoldQuery>), CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken = std::collections::HashSet::new();
    let shared_keys = distinct_words(&mut rng, 24, 2, &mut taken);
    let shared_values = distinct_words(&mut rng, 24, 2, &mut taken);
    let family_values: Vec<Vec<String>> = FAMILIES
        .iter()
        .map(|_| distinct_words(&mut rng, 12, 2, &mut taken))
        .collect();

    let mut tables = Vec::with_capacity(cfg.tables);
    let mut gold = Vec::new();
    for t in 0..cfg.tables {
        let family = t % FAMILIES.len();
        let (family_name, header) = FAMILIES[family];
        let table_id = format!("{family_name}_{:02}", t / FAMILIES.len());
        let mut rows = Vec::with_capacity(cfg.filler_rows + cfg.planted_rows);
        for _ in 0..cfg.filler_rows {
            let mut row = vec![shared_keys.choose(&mut rng).expect("non-empty").clone()];
            for _ in 1..header.len() {
                row.push(shared_values.choose(&mut rng).expect("non-empty").clone());
            }
            rows.push(row);
        }
        let keys = distinct_words(&mut rng, cfg.planted_rows, 3, &mut taken);
        for key in &keys {
            let mut row = vec![key.clone()];
            for c in 1..header.len() {
                row.push(if c == 1 {
                    distinct_words(&mut rng, 1, 3, &mut taken).remove(0)
                } else {
                    family_values[family].choose(&mut rng).expect("non-empty").clone()
                });
            }
            rows.push(row);
        }
        let picks = rand::seq::index::sample(&mut rng, cfg.planted_rows, cfg.gold_per_table.min(cfg.planted_rows));
        for i in picks {
            let col = header[rng.random_range(1..header.len())];
            gold.push(GoldQuery {
                query: format!("What is the value of {col} for {}?", keys[i]),
                gold_table_id: table_id.clone(),
                dataset: Some(family_name.to_string()),
            });
        }
        let header = header.iter().map(|h| h.to_string()).collect();
        tables.push(Table::new(table_id, header, rows)?);
    }
    Ok((Corpus::new("synthetic", tables)?, gold))
}
