//! Reasoning-augmented rating prediction over review corpora.
//!
//! The crate covers the full pipeline: corpus ingestion and balanced
//! user-disjoint splits ([`corpus`]), deterministic prompt rendering
//! ([`prompt`]), pluggable generation backends with caching ([`backend`]),
//! output parsing and leakage scrubbing ([`parse`]), self-verified reference
//! pools for scoring model reasoning ([`refgen`]), rating-task metrics
//! ([`taskmetrics`]), reference-based text metrics ([`nlg`]), human-alignment
//! statistics ([`stats`]), fine-tuning data export ([`ftexport`]), and
//! persistent, resumable run storage ([`runstore`]).

pub mod backend;
pub mod corpus;
pub mod ftexport;
pub mod nlg;
pub mod parse;
pub mod prompt;
pub mod refgen;
pub mod runstore;
pub mod stats;
pub mod taskmetrics;
pub mod util;

pub use backend::{
    normalize_class_scores, Backend, BackendConfig, BackendError, BackendRunner, GenerationCache,
    GenerationCandidate, GenerationRequest, HttpBackend, MockBackend,
};
pub use corpus::{
    balanced_split, filter_by_history, ingest, CorpusError, Example, IngestReport, ItemMetadata,
    PastPurchase, SplitSpec, UserHistory,
};
pub use ftexport::{
    apply_filter, collect_samples, export_records, CollectConfig, CollectReport, ExportError,
    FilterPolicy, FineTuneRecord, ReasoningSample,
};
pub use nlg::{
    bleu, embed_score, meteor, rouge1_f1, stem, tokenize, EmbeddingScorer, HashedEmbeddingScorer,
    HttpEmbeddingScorer, NlgError, TokenSeq,
};
pub use parse::{
    contains_leakage, parse_prediction, scrub_leakage, split_sentences, ParseFailure,
    ParseFailureCode, ParseReport, ParsedOutput, LEAKAGE_TRIGGERS,
};
pub use prompt::{
    render_posthoc_prompt, render_task_prompt, render_verification_prompt, Exemplar, PromptError,
    PromptMode, RenderedPrompt,
};
pub use refgen::{
    build_reference_pool, evaluate_reasoning, generate_candidates, self_verify, PoolCoverageReport,
    PostHocExplanation, ReasoningScore, RefGenConfig, RefGenError, ReferencePool,
};
pub use runstore::{RunManifest, RunStore, StageEntry, StoreError};
pub use stats::{
    alignment_report, fisher_combined_p, inter_annotator_agreement, pearson, student_t_cdf,
    weighted_cohen_kappa, welch_t_test, AlignmentReport, AnnotationRecord, PCombination,
    PearsonResult, SampleScores, StatsError, WelchResult,
};
pub use taskmetrics::{
    binary_metrics, metric_report, multiclass_metrics, naive_baseline,
    naive_baseline_from_ratings, naive_baseline_with, rank_auc, BinaryMetrics, MetricReport,
    MetricsError, MulticlassMetrics, Prediction, RoundingRule,
};
