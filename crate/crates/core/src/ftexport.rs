//! Teacher-sample collection and fine-tuning data export.
//!
//! Multiple reasoning samples are drawn per example from a teacher backend at
//! a positive temperature, optionally filtered by how the teacher's predicted
//! rating relates to the ground truth, then exported as (prompt, target)
//! records whose target rating is always the ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendRunner, GenerationRequest};
use crate::corpus::Example;
use crate::parse::{parse_prediction, ParseReport};
use crate::prompt::{render_task_prompt, PromptError, PromptMode, RATING_MARKER, REASON_MARKER};

/// One parsed teacher sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningSample {
    pub example_id: String,
    /// Index within the example's sample batch, 0-based.
    pub sample_index: usize,
    pub reasoning: String,
    pub predicted_rating: u8,
    pub truth_rating: u8,
}

/// Sample filtering policies, keyed by how the teacher's prediction relates
/// to the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterPolicy {
    /// Keep everything.
    #[default]
    None,
    /// Keep only exact matches.
    FiveClass,
    /// Keep samples whose binary (> 3) conversion matches.
    Binary,
    /// Keep samples within one rating point.
    OneOff,
}

impl FilterPolicy {
    pub fn keeps(&self, predicted: u8, truth: u8) -> bool {
        match self {
            FilterPolicy::None => true,
            FilterPolicy::FiveClass => predicted == truth,
            FilterPolicy::Binary => (predicted > 3) == (truth > 3),
            FilterPolicy::OneOff => predicted.abs_diff(truth) <= 1,
        }
    }

    /// Label as used in report rows.
    pub fn label(&self) -> &'static str {
        match self {
            FilterPolicy::None => "None",
            FilterPolicy::FiveClass => "5-class",
            FilterPolicy::Binary => "Binary",
            FilterPolicy::OneOff => "1-off",
        }
    }
}

/// One exported fine-tuning record. The target always carries the ground
/// truth rating, never the teacher's prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneRecord {
    pub input: String,
    pub target: String,
    pub example_id: String,
    pub sample_index: usize,
    pub policy: String,
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("invalid collection config: {0}")]
    InvalidConfig(String),
    #[error("unresolvable example ids: {0:?}")]
    UnresolvableIds(Vec<String>),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CollectConfig {
    /// Samples per example.
    pub m: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: Option<u64>,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            m: 8,
            temperature: 0.7,
            max_tokens: 512,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectReport {
    pub examples: usize,
    pub requested_samples: usize,
    pub collected: usize,
    pub backend_failures: usize,
    pub parse: ParseReport,
}

/// Draw `m` reasoning samples per example and parse them. Parse failures are
/// recorded and excluded; the shortfall shows up in the report.
pub fn collect_samples(
    dataset: &[Example],
    config: &CollectConfig,
    mode: &PromptMode,
    runner: &mut BackendRunner,
) -> Result<(Vec<ReasoningSample>, CollectReport), ExportError> {
    if config.m == 0 {
        return Err(ExportError::InvalidConfig("m must be >= 1".into()));
    }
    if config.m > 1 && config.temperature <= 0.0 {
        return Err(ExportError::InvalidConfig(
            "temperature must be > 0 when sampling m > 1".into(),
        ));
    }
    let mut report = CollectReport {
        examples: dataset.len(),
        requested_samples: dataset.len() * config.m,
        ..CollectReport::default()
    };

    let mut requests = Vec::with_capacity(dataset.len());
    for example in dataset {
        let prompt = render_task_prompt(example, mode, None)?;
        let mut request =
            GenerationRequest::new(prompt.text).with_sampling(config.temperature, config.m);
        request.max_tokens = config.max_tokens;
        request.seed = config.seed;
        requests.push(request);
    }
    let results = runner.run(&requests)?;

    let mut samples = Vec::new();
    for (example, result) in dataset.iter().zip(results) {
        match result {
            Ok(candidates) => {
                for (sample_index, candidate) in candidates.iter().enumerate() {
                    match parse_prediction(&candidate.text, mode) {
                        Ok(parsed) => {
                            report.parse.record_success();
                            samples.push(ReasoningSample {
                                example_id: example.example_id.clone(),
                                sample_index,
                                reasoning: parsed.reasoning,
                                predicted_rating: parsed.rating,
                                truth_rating: example.truth_rating,
                            });
                        }
                        Err(failure) => report.parse.record_failure(failure.code),
                    }
                }
            }
            Err(_) => report.backend_failures += 1,
        }
    }
    report.collected = samples.len();
    Ok((samples, report))
}

/// Apply a filtering policy. Idempotent per policy.
pub fn apply_filter(samples: Vec<ReasoningSample>, policy: FilterPolicy) -> Vec<ReasoningSample> {
    samples
        .into_iter()
        .filter(|s| policy.keeps(s.predicted_rating, s.truth_rating))
        .collect()
}

/// Render fine-tuning records for the surviving samples, in
/// (example_id, sample_index) order. The input is the with-reasoning task
/// prompt; the target pairs the sample's reasoning with the ground truth.
pub fn export_records(
    samples: &[ReasoningSample],
    dataset_index: &BTreeMap<String, Example>,
    policy: FilterPolicy,
) -> Result<Vec<FineTuneRecord>, ExportError> {
    let missing: Vec<String> = samples
        .iter()
        .filter(|s| !dataset_index.contains_key(&s.example_id))
        .map(|s| s.example_id.clone())
        .collect();
    if !missing.is_empty() {
        let mut unique = missing;
        unique.sort();
        unique.dedup();
        return Err(ExportError::UnresolvableIds(unique));
    }

    let mode = PromptMode::default();
    let mut ordered: Vec<&ReasoningSample> = samples.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.example_id, a.sample_index).cmp(&(&b.example_id, b.sample_index))
    });

    let mut records = Vec::with_capacity(ordered.len());
    for sample in ordered {
        let example = &dataset_index[&sample.example_id];
        let prompt = render_task_prompt(example, &mode, None)?;
        let target = format!(
            "{REASON_MARKER}\n{}\n{RATING_MARKER}\n{}",
            sample.reasoning, sample.truth_rating
        );
        records.push(FineTuneRecord {
            input: prompt.text,
            target,
            example_id: sample.example_id.clone(),
            sample_index: sample.sample_index,
            policy: policy.label().to_string(),
        });
    }
    Ok(records)
}
