//! Pipeline configuration.
//!
//! Everything that affects results lives in the config file and is frozen
//! into the run manifest; command-line flags only select paths, run ids, and
//! verbosity. Reopening a run with a different config is an error.

use serde::{Deserialize, Serialize};

use recsaver::ftexport::FilterPolicy;
use recsaver::prompt::PromptMode;
use recsaver::stats::PCombination;
use recsaver::taskmetrics::RoundingRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub domain_tag: String,
    pub paths: Paths,
    #[serde(default)]
    pub history_filter: HistoryFilter,
    pub split: SplitConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub reviews: String,
    pub metadata: String,
    #[serde(default)]
    pub annotations: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryFilter {
    pub min: usize,
    pub max: usize,
}

impl Default for HistoryFilter {
    fn default() -> Self {
        HistoryFilter { min: 4, max: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub per_label_train: usize,
    pub per_label_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub reasoning: bool,
    pub one_shot: bool,
    pub include_reviews: bool,
    pub include_ratings: bool,
    pub include_item_description: bool,
    /// Exemplar for one-shot mode: a train-split example id, or empty for
    /// the first train example.
    pub exemplar_example_id: String,
    /// Reasoning text presented as the exemplar's worked answer; when empty,
    /// the exemplar's own review text (or a neutral sentence) is used.
    pub exemplar_reasoning: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            reasoning: true,
            one_shot: false,
            include_reviews: true,
            include_ratings: true,
            include_item_description: true,
            exemplar_example_id: String::new(),
            exemplar_reasoning: String::new(),
        }
    }
}

impl PromptConfig {
    pub fn mode(&self) -> PromptMode {
        PromptMode {
            reasoning: self.reasoning,
            one_shot: self.one_shot,
            include_reviews: self.include_reviews,
            include_ratings: self.include_ratings,
            include_item_description: self.include_item_description,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    /// "mock" or "http".
    pub kind: String,
    pub endpoint: String,
    pub auth_env: String,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub parallelism: usize,
    /// Sampling seed for the mock backend.
    pub seed: u64,
    pub max_tokens: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: "mock".to_string(),
            endpoint: String::new(),
            auth_env: "RECSAVER_API_TOKEN".to_string(),
            timeout_secs: 30,
            max_retries: 2,
            parallelism: 4,
            seed: 7,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Teacher samples per example for fine-tune export.
    pub m: usize,
    /// Post hoc explanation candidates per example.
    pub n: usize,
    pub temperature: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            m: 8,
            n: 8,
            temperature: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub policy: FilterPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub embed_seed: u64,
    pub embed_dim: usize,
    /// Optional external embedding service; empty disables it.
    pub embedding_endpoint: String,
    pub p_combination: PCombination,
    /// Rounding rule for the naive historical-average baseline.
    pub naive_rounding: RoundingRule,
    /// Also score reasoning against the unverified candidate pool (doubles
    /// scoring work; required for the with/without-verification comparison).
    pub score_against_unverified: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            embed_seed: 13,
            embed_dim: 64,
            embedding_endpoint: String::new(),
            p_combination: PCombination::Fisher,
            naive_rounding: RoundingRule::HalfAwayFromZero,
            score_against_unverified: true,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let config: PipelineConfig =
            toml::from_str(&text).map_err(|e| format!("invalid config: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.domain_tag.trim().is_empty() {
            return Err("domain_tag must be non-empty".into());
        }
        if self.split.per_label_train == 0 || self.split.per_label_test == 0 {
            return Err("split counts must be positive".into());
        }
        if self.history_filter.min > self.history_filter.max {
            return Err("history_filter.min must not exceed history_filter.max".into());
        }
        match self.backend.kind.as_str() {
            "mock" => {}
            "http" => {
                if self.backend.endpoint.trim().is_empty() {
                    return Err("backend.endpoint required for kind = \"http\"".into());
                }
            }
            other => return Err(format!("unknown backend.kind '{other}'")),
        }
        if self.backend.parallelism == 0 {
            return Err("backend.parallelism must be >= 1".into());
        }
        if self.sampling.m == 0 || self.sampling.n == 0 {
            return Err("sampling.m and sampling.n must be >= 1".into());
        }
        if self.sampling.m > 1 && self.sampling.temperature <= 0.0 {
            return Err("sampling.temperature must be > 0 when m > 1".into());
        }
        if self.metrics.embed_dim == 0 {
            return Err("metrics.embed_dim must be >= 1".into());
        }
        Ok(())
    }

    /// The frozen snapshot stored in the run manifest, stamped with the
    /// prompt template revision so template changes invalidate resumes.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value["prompt_template_version"] =
            serde_json::Value::String(recsaver::prompt::PROMPT_TEMPLATE_VERSION.to_string());
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        r#"
domain_tag = "beauty"

[paths]
reviews = "reviews.jsonl"
metadata = "meta.jsonl"

[split]
per_label_train = 10
per_label_test = 2
seed = 1
"#
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config: PipelineConfig = toml::from_str(minimal_toml()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.backend.kind, "mock");
        assert_eq!(config.sampling.n, 8);
        assert!(config.prompt.reasoning);
        assert_eq!(config.history_filter.min, 4);
    }

    #[test]
    fn http_backend_requires_endpoint() {
        let mut config: PipelineConfig = toml::from_str(minimal_toml()).unwrap();
        config.backend.kind = "http".into();
        assert!(config.validate().is_err());
        config.backend.endpoint = "https://example.test/generate".into();
        assert!(config.validate().is_ok());
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = format!("{}\nunknown_knob = 3\n", minimal_toml());
        assert!(toml::from_str::<PipelineConfig>(&bad).is_err());
    }

    #[test]
    fn snapshot_round_trips_and_is_stamped() {
        let config: PipelineConfig = toml::from_str(minimal_toml()).unwrap();
        let snap = config.snapshot();
        assert!(snap["prompt_template_version"].is_string());
        let mut unstamped = snap.clone();
        unstamped.as_object_mut().unwrap().remove("prompt_template_version");
        let back: PipelineConfig = serde_json::from_value(unstamped).unwrap();
        assert_eq!(back.snapshot(), snap);
    }
}
