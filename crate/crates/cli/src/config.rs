//! Pipeline configuration: one TOML document with a section per stage.
//! Every experiment constant is overridable so the pipeline runs at desk
//! scale as well as at full scale.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use recdiv_core::community::ProjectionWeighting;
use recdiv_core::ingest::SyntheticConfig;
use recdiv_core::modify::Plan;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; all stage randomness derives from it via named streams.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub community: CommunityConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub bubble: BubbleConfig,
    #[serde(default)]
    pub category: CategoryConfig,
    #[serde(default)]
    pub influence: InfluenceConfig,
    #[serde(default)]
    pub modify: ModifyConfig,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Raw interaction CSV; unused when ingesting synthetic data.
    pub raw_csv: Option<PathBuf>,
    #[serde(default)]
    pub has_header: bool,
    /// Workspace directory for all artifacts; the --workspace flag wins.
    pub workspace: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default = "default_min_item_interactions")]
    pub min_item_interactions: usize,
    #[serde(default = "default_min_user_interactions")]
    pub min_user_interactions: usize,
    /// Users to sample after filtering; 0 keeps the full population.
    #[serde(default)]
    pub n_users: usize,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    /// Planted-bubble generator parameters for `ingest --synthetic`.
    pub synthetic: Option<SyntheticConfig>,
}

fn default_min_item_interactions() -> usize {
    100
}
fn default_min_user_interactions() -> usize {
    10
}
fn default_lookback() -> usize {
    50
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            min_item_interactions: default_min_item_interactions(),
            min_user_interactions: default_min_user_interactions(),
            n_users: 0,
            lookback: default_lookback(),
            synthetic: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunityConfig {
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<u64>,
    #[serde(default = "default_selected_threshold")]
    pub selected_threshold: u64,
    #[serde(default = "default_projection")]
    pub projection: ProjectionWeighting,
}

fn default_thresholds() -> Vec<u64> {
    vec![10, 25, 50, 100, 250, 1000]
}
fn default_selected_threshold() -> u64 {
    100
}
fn default_projection() -> ProjectionWeighting {
    ProjectionWeighting::SharedSum
}

impl Default for CommunityConfig {
    fn default() -> Self {
        CommunityConfig {
            thresholds: default_thresholds(),
            selected_threshold: default_selected_threshold(),
            projection: default_projection(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: usize,
    #[serde(default)]
    pub final_state_only: bool,
}

fn default_embedding_dim() -> usize {
    128
}
fn default_hidden_dim() -> usize {
    64
}
fn default_batch_size() -> usize {
    2048
}
fn default_epochs() -> usize {
    600
}
fn default_learning_rate() -> f64 {
    5e-3
}
fn default_momentum() -> f64 {
    0.9
}
fn default_checkpoint_interval() -> usize {
    30
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embedding_dim: default_embedding_dim(),
            hidden_dim: default_hidden_dim(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            momentum: default_momentum(),
            checkpoint_interval: default_checkpoint_interval(),
            final_state_only: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BubbleConfig {
    #[serde(default = "default_bubble_lookbacks")]
    pub lookbacks: Vec<usize>,
}

fn default_bubble_lookbacks() -> Vec<usize> {
    vec![1, 2, 3, 5, 10, 20, 30, 40, 50]
}

impl Default for BubbleConfig {
    fn default() -> Self {
        BubbleConfig {
            lookbacks: default_bubble_lookbacks(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryConfig {
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default = "default_random_pool_size")]
    pub random_pool_size: usize,
}

fn default_percentile() -> f64 {
    0.125
}
fn default_random_pool_size() -> usize {
    1000
}

impl Default for CategoryConfig {
    fn default() -> Self {
        CategoryConfig {
            percentile: default_percentile(),
            random_pool_size: default_random_pool_size(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceConfig {
    #[serde(default = "default_subset_size")]
    pub subset_size: usize,
    #[serde(default = "default_self_repetitions")]
    pub self_repetitions: usize,
    #[serde(default = "default_self_batch_size")]
    pub self_batch_size: usize,
    #[serde(default = "default_samples_per_category")]
    pub samples_per_category: usize,
    #[serde(default = "default_cross_repetitions")]
    pub cross_repetitions: usize,
    #[serde(default = "default_cross_batch_size")]
    pub cross_batch_size: usize,
    /// Include the epoch-0 checkpoint in influence computations.
    #[serde(default)]
    pub include_initial_checkpoint: bool,
}

fn default_subset_size() -> usize {
    3000
}
fn default_self_repetitions() -> usize {
    20
}
fn default_self_batch_size() -> usize {
    512
}
fn default_samples_per_category() -> usize {
    100
}
fn default_cross_repetitions() -> usize {
    25
}
fn default_cross_batch_size() -> usize {
    4096
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        InfluenceConfig {
            subset_size: default_subset_size(),
            self_repetitions: default_self_repetitions(),
            self_batch_size: default_self_batch_size(),
            samples_per_category: default_samples_per_category(),
            cross_repetitions: default_cross_repetitions(),
            cross_batch_size: default_cross_batch_size(),
            include_initial_checkpoint: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModifyConfig {
    #[serde(default = "default_plans")]
    pub plans: Vec<String>,
    #[serde(default = "default_retrains_per_plan")]
    pub retrains_per_plan: usize,
}

fn default_plans() -> Vec<String> {
    Plan::ALL.iter().map(|p| p.as_str().to_string()).collect()
}
fn default_retrains_per_plan() -> usize {
    10
}

impl Default for ModifyConfig {
    fn default() -> Self {
        ModifyConfig {
            plans: default_plans(),
            retrains_per_plan: default_retrains_per_plan(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("bad config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.ingest.lookback == 0 || self.ingest.lookback > 50 {
            bail!("ingest.lookback must lie in 1..=50");
        }
        if !(0.0 < self.category.percentile && self.category.percentile <= 0.5) {
            bail!("category.percentile must lie in (0, 0.5]");
        }
        if self.community.thresholds.is_empty() {
            bail!("community.thresholds must be non-empty");
        }
        if self.community.thresholds.windows(2).any(|w| w[0] > w[1]) {
            bail!("community.thresholds must be sorted ascending");
        }
        for plan in &self.modify.plans {
            Plan::parse(plan).map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        for &l in &self.bubble.lookbacks {
            if !(1..=50).contains(&l) {
                bail!("bubble.lookbacks entries must lie in 1..=50");
            }
        }
        Ok(())
    }

    pub fn parsed_plans(&self) -> Vec<Plan> {
        self.modify
            .plans
            .iter()
            .map(|p| Plan::parse(p).expect("validated at load"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_full_scale_defaults() {
        let config: PipelineConfig = toml::from_str("").unwrap();
        config.validate().unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.model.batch_size, 2048);
        assert_eq!(config.model.epochs, 600);
        assert_eq!(config.model.learning_rate, 5e-3);
        assert_eq!(config.model.momentum, 0.9);
        assert_eq!(config.influence.subset_size, 3000);
        assert_eq!(config.influence.self_repetitions, 20);
        assert_eq!(config.influence.samples_per_category, 100);
        assert_eq!(config.influence.cross_repetitions, 25);
        assert_eq!(config.influence.cross_batch_size, 4096);
        assert_eq!(config.category.percentile, 0.125);
        assert_eq!(config.modify.retrains_per_plan, 10);
        assert_eq!(config.modify.plans.len(), 6);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(toml::from_str::<PipelineConfig>("[model]\nwidth = 3").is_err());
        let config: PipelineConfig =
            toml::from_str("[category]\npercentile = 0.9").unwrap();
        assert!(config.validate().is_err());
        let config: PipelineConfig =
            toml::from_str("[modify]\nplans = [\"nonsense\"]").unwrap();
        assert!(config.validate().is_err());
        let config: PipelineConfig =
            toml::from_str("[community]\nthresholds = [5, 2]").unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn synthetic_section_parses() {
        let text = r#"
seed = 7
[ingest.synthetic]
n_users = 10
n_items = 20
n_communities = 4
bubble_strength = 0.8
records_per_user = 30
"#;
        let config: PipelineConfig = toml::from_str(text).unwrap();
        let syn = config.ingest.synthetic.unwrap();
        assert_eq!(syn.n_users, 10);
        assert_eq!(syn.bubble_strength, 0.8);
    }
}
