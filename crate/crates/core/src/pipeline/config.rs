use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::ClusteringConfig;
use crate::corpus::CorpusFormat;
use crate::embed::ProviderConfig;
use crate::kpt::{KptConfig, SamplingStrategy};
use crate::mining::{MiningConfig, NegativeStrategy};
use crate::querygen::GenConfig;
use crate::retrieval::{Fusion, RepresentationMode, DEFAULT_KS};
use crate::train::TrainConfig;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Jsonl
}

fn default_ks() -> Vec<usize> {
    DEFAULT_KS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    #[serde(default)]
    pub mode: RepresentationMode,
    #[serde(default)]
    pub fusion: Fusion,
    /// JSONL of `{"query", "gold_table_id"}` evaluated by the `eval` stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_path: Option<PathBuf>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            mode: RepresentationMode::default(),
            fusion: Fusion::default(),
            gold_path: None,
            ks: default_ks(),
        }
    }
}

fn default_embedding() -> ProviderConfig {
    ProviderConfig::mock(128)
}

fn default_true() -> bool {
    true
}

/// Everything one pipeline run needs. Relative paths resolve against the config file's directory.
///
/// `seed` seeds every randomized stage; per-section `seed` keys are overwritten by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub workspace: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: SamplingStrategy,
    /// Train an adapter and apply it at retrieval time.
    #[serde(default = "default_true")]
    pub use_adapter: bool,
    /// Share of generated queries withheld from mining and evaluated separately.
    #[serde(default)]
    pub holdout_fraction: f64,
    pub corpus: CorpusSection,
    #[serde(default = "default_embedding")]
    pub embedding: ProviderConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub kpt: KptConfig,
    #[serde(default)]
    pub generation: GenConfig,
    #[serde(default)]
    pub mining: MiningConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub retrieval: RetrievalSection,
}

fn config_err(field: &str, message: impl ToString) -> PipelineError {
    PipelineError::Config { field: field.to_string(), message: message.to_string() }
}

/// Sets `a.b.c = value` in a TOML table, creating intermediate tables.
///
/// `value` is parsed as a TOML value when possible and taken as a bare string otherwise.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), PipelineError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(key, "empty key segment"));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_err(key, format!("`{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text, applies `key=value` overrides, resolves paths against `base_dir` and
    /// validates every section.
    pub fn from_toml_str(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| config_err("<file>", e.message()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| config_err("<file>", e.message()))?;
        cfg.resolve_paths(base_dir);
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("<file>", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, overrides)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.workspace);
        fix(&mut self.corpus.path);
        if let Some(p) = self.retrieval.gold_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.embedding.cache_dir.as_mut() {
            fix(p);
        }
    }

    pub fn apply_seed(&mut self) {
        self.clustering.seed = self.seed;
        self.kpt.seed = self.seed;
        self.mining.seed = self.seed;
        self.training.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.embedding.validate().map_err(|e| config_err("embedding", e))?;
        self.clustering.validate().map_err(|e| config_err("clustering", e))?;
        self.kpt.validate().map_err(|e| config_err("kpt", e))?;
        self.generation.validate().map_err(|e| config_err("generation", e))?;
        if self.mining.h == 0 {
            return Err(config_err("mining.h", "must be at least 1"));
        }
        self.training.validate().map_err(|e| config_err("training", e))?;
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(config_err("holdout_fraction", "must lie in [0, 1)"));
        }
        if self.retrieval.ks.is_empty() || self.retrieval.ks.contains(&0) {
            return Err(config_err("retrieval.ks", "must be a non-empty list of positive integers"));
        }
        Ok(())
    }

    /// The experimental knobs a comparison varies.
    pub fn variant(&self) -> Variant {
        Variant {
            sampling: self.sampling,
            negatives: self.mining.strategy,
            adapter: self.use_adapter,
        }
    }

    pub fn with_variant(&self, v: Variant) -> Self {
        let mut cfg = self.clone();
        cfg.sampling = v.sampling;
        cfg.mining.strategy = v.negatives;
        cfg.use_adapter = v.adapter;
        cfg
    }
}

/// One ablation cell, written `sampling+negatives+adapter` or `...+no-adapter`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variant {
    pub sampling: SamplingStrategy,
    pub negatives: NegativeStrategy,
    pub adapter: bool,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let adapter = if self.adapter { "adapter" } else { "no-adapter" };
        write!(f, "{}+{}+{}", self.sampling, self.negatives.as_str(), adapter)
    }
}

impl std::str::FromStr for Variant {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split('+').collect();
        let [sampling, negatives, adapter] = parts[..] else {
            return Err(config_err("strategies", format!("`{s}` is not sampling+negatives+adapter")));
        };
        let sampling = sampling.parse().map_err(|e| config_err("strategies", e))?;
        let negatives = match negatives {
            "hard" => NegativeStrategy::Hard,
            "random" => NegativeStrategy::Random,
            other => return Err(config_err("strategies", format!("unknown negative strategy `{other}`"))),
        };
        let adapter = match adapter {
            "adapter" => true,
            "no-adapter" => false,
            other => return Err(config_err("strategies", format!("expected adapter or no-adapter, got `{other}`"))),
        };
        Ok(Variant { sampling, negatives, adapter })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
workspace = "work"
seed = 3

[corpus]
path = "corpus.jsonl"
"#;

    #[test]
    fn defaults_and_path_resolution() {
        let cfg = PipelineConfig::from_toml_str(MINIMAL, Path::new("/base"), &[]).unwrap();
        assert_eq!(cfg.workspace, Path::new("/base/work"));
        assert_eq!(cfg.corpus.path, Path::new("/base/corpus.jsonl"));
        assert_eq!(cfg.embedding.dim, 128);
        assert_eq!((cfg.clustering.r, cfg.kpt.s, cfg.mining.h), (10, 5, 8));
        assert_eq!(cfg.training.tau, 0.01);
        assert_eq!(cfg.training.seed, 3);
        assert!(cfg.use_adapter);
    }

    #[test]
    fn overrides_are_typed_and_dotted() {
        let sets = vec![
            "training.epochs=5".to_string(),
            "mining.strategy=random".to_string(),
            "retrieval.mode = \"pt_plus_queries\"".to_string(),
        ];
        let cfg = PipelineConfig::from_toml_str(MINIMAL, Path::new("."), &sets).unwrap();
        assert_eq!(cfg.training.epochs, 5);
        assert_eq!(cfg.mining.strategy, NegativeStrategy::Random);
        assert_eq!(cfg.retrieval.mode, RepresentationMode::PtPlusQueries);
    }

    #[test]
    fn validation_errors_name_the_field() {
        let err = PipelineConfig::from_toml_str(MINIMAL, Path::new("."), &["clustering.r=0".into()]).unwrap_err();
        assert!(matches!(&err, PipelineError::Config { field, .. } if field == "clustering"), "{err}");
        let err = PipelineConfig::from_toml_str(MINIMAL, Path::new("."), &["holdout_fraction=1.5".into()]).unwrap_err();
        assert!(matches!(&err, PipelineError::Config { field, .. } if field == "holdout_fraction"));
        let err = PipelineConfig::from_toml_str(MINIMAL, Path::new("."), &["bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn tokens_never_come_from_the_file() {
        let text = format!("{MINIMAL}\n[embedding]\nkind = \"mock\"\nmodel_name = \"m\"\ndim = 16\nauth_token = \"s3cret\"\n");
        assert!(PipelineConfig::from_toml_str(&text, Path::new("."), &[]).is_err());
    }

    #[test]
    fn variants_round_trip() {
        for s in ["kpt_random+hard+adapter", "first_rows+random+no-adapter", "s_single+hard+no-adapter"] {
            let v: Variant = s.parse().unwrap();
            assert_eq!(v.to_string(), s);
        }
        assert!("kpt_random+hard".parse::<Variant>().is_err());
        assert!("kpt_random+soft+adapter".parse::<Variant>().is_err());
    }
}
