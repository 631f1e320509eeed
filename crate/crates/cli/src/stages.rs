//! Stage implementations. Each stage reads and writes only through the run
//! store, skips itself when its outputs are already complete, and names the
//! missing upstream subcommand when dependencies are absent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use recsaver::backend::{
    normalize_class_scores, Backend, BackendRunner, GenerationCache, GenerationRequest,
    HttpBackend, MockBackend,
};
use recsaver::corpus::{self, Example, SplitSpec};
use recsaver::ftexport::{self, CollectConfig, FilterPolicy};
use recsaver::nlg::{EmbeddingScorer, HashedEmbeddingScorer, HttpEmbeddingScorer};
use recsaver::parse::{parse_prediction, scrub_leakage, ParseReport};
use recsaver::prompt::{
    render_posthoc_prompt, render_task_prompt, render_verification_prompt, Exemplar, PromptMode,
};
use recsaver::refgen::{self, PostHocExplanation, ReasoningScore, RefGenConfig, ReferencePool};
use recsaver::runstore::RunStore;
use recsaver::stats::{self, AnnotationRecord, SampleScores};
use recsaver::taskmetrics::{self, MetricReport, Prediction};

use crate::config::PipelineConfig;
use crate::CliError;

// Stage file names. The stage name is the file name.
pub const STAGE_CORPUS: &str = "corpus.jsonl";
pub const STAGE_INGEST_REPORT: &str = "ingest_report.json";
pub const STAGE_TRAIN: &str = "train.jsonl";
pub const STAGE_TEST: &str = "test.jsonl";
pub const STAGE_PREDICTIONS: &str = "predictions.jsonl";
pub const STAGE_METRIC_REPORT: &str = "metric_report.json";
pub const STAGE_PARSE_REPORT: &str = "parse_report.json";
pub const STAGE_REFS: &str = "refs.jsonl";
pub const STAGE_REF_CANDIDATES: &str = "ref_candidates.jsonl";
pub const STAGE_REF_COVERAGE: &str = "ref_coverage.json";
pub const STAGE_SCORES: &str = "scores.jsonl";
pub const STAGE_SCORES_UNVERIFIED: &str = "scores_unverified.jsonl";
pub const STAGE_SCORE_REPORT: &str = "score_report.json";
pub const STAGE_FT_RECORDS: &str = "ft_records.jsonl";
pub const STAGE_FT_REPORT: &str = "ft_report.json";
pub const STAGE_ALIGNMENT: &str = "alignment.json";
pub const STAGE_REPORT: &str = "report.json";
pub const STAGE_REPORT_TSV: &str = "report.tsv";

const CACHE_FILE: &str = "cache.jsonl";

fn stage_err(stage: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Stage {
        stage: stage.to_string(),
        message: message.to_string(),
    }
}

/// Dependency check: `needed` is the file, `produced_by` the subcommand the
/// error message points at.
fn require(store: &RunStore, stage: &str, needed: &str, produced_by: &str) -> Result<(), CliError> {
    if store.stage_complete(needed) {
        Ok(())
    } else {
        Err(stage_err(
            stage,
            format!("missing stage '{produced_by}': {needed} is not complete; run `{produced_by}` first"),
        ))
    }
}

fn already_done(store: &RunStore, outputs: &[&str]) -> bool {
    outputs.iter().all(|s| store.stage_complete(s))
}

fn make_backend(config: &PipelineConfig) -> Result<Box<dyn Backend>, CliError> {
    match config.backend.kind.as_str() {
        "mock" => Ok(Box::new(MockBackend::new())),
        "http" => {
            let backend = HttpBackend::new(recsaver::backend::BackendConfig {
                endpoint: config.backend.endpoint.clone(),
                auth_env: config.backend.auth_env.clone(),
                timeout: std::time::Duration::from_secs(config.backend.timeout_secs),
                max_retries: config.backend.max_retries,
                parallelism: config.backend.parallelism,
            })
            .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(Box::new(backend))
        }
        other => Err(CliError::Config(format!("unknown backend kind '{other}'"))),
    }
}

fn make_runner<'a>(
    backend: &'a dyn Backend,
    config: &PipelineConfig,
    store: &RunStore,
) -> Result<BackendRunner<'a>, CliError> {
    let cache = GenerationCache::open(store.aux_path(CACHE_FILE))
        .map_err(|e| stage_err("backend", e))?;
    Ok(BackendRunner::new(backend, config.backend.parallelism).with_cache(cache))
}

fn make_scorer(config: &PipelineConfig) -> Result<Box<dyn EmbeddingScorer>, CliError> {
    if config.metrics.embedding_endpoint.trim().is_empty() {
        Ok(Box::new(HashedEmbeddingScorer::new(
            config.metrics.embed_seed,
            config.metrics.embed_dim,
        )))
    } else {
        Ok(Box::new(
            HttpEmbeddingScorer::new(
                config.metrics.embedding_endpoint.clone(),
                std::time::Duration::from_secs(config.backend.timeout_secs),
            )
            .map_err(|e| CliError::Config(e.to_string()))?,
        ))
    }
}

fn read_examples(store: &RunStore, stage: &str) -> Result<Vec<Example>, CliError> {
    let text = store.read_stage_string(stage)?;
    corpus::examples_from_jsonl(&text).map_err(|e| stage_err(stage, e))
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializes"));
        out.push('\n');
    }
    out
}

fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str, stage: &str) -> Result<Vec<T>, CliError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| stage_err(stage, e)))
        .collect()
}

fn pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    text.into_bytes()
}

// ---------------------------------------------------------------------------
// ingest / split
// ---------------------------------------------------------------------------

pub fn run_ingest(store: &mut RunStore, config: &PipelineConfig) -> Result<(), CliError> {
    if already_done(store, &[STAGE_CORPUS, STAGE_INGEST_REPORT]) {
        println!("ingest: already complete; skipping");
        return Ok(());
    }
    let reviews = std::fs::File::open(&config.paths.reviews)
        .map_err(|e| stage_err("ingest", format!("{}: {e}", config.paths.reviews)))?;
    let metadata = std::fs::File::open(&config.paths.metadata)
        .map_err(|e| stage_err("ingest", format!("{}: {e}", config.paths.metadata)))?;
    let (examples, report) = corpus::ingest(
        std::io::BufReader::new(reviews),
        std::io::BufReader::new(metadata),
        &config.domain_tag,
    )
    .map_err(|e| stage_err("ingest", e))?;
    let filtered = corpus::filter_by_history(
        examples,
        config.history_filter.min,
        config.history_filter.max,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    store.write_stage(STAGE_CORPUS, corpus::examples_to_jsonl(&filtered).as_bytes())?;
    store.write_stage(STAGE_INGEST_REPORT, &pretty_json(&report))?;
    println!(
        "ingest: {} examples retained ({} reviews read, {} malformed)",
        filtered.len(),
        report.reviews_read,
        report.malformed_count
    );
    Ok(())
}

pub fn run_split(store: &mut RunStore, config: &PipelineConfig) -> Result<(), CliError> {
    if already_done(store, &[STAGE_TRAIN, STAGE_TEST]) {
        println!("split: already complete; skipping");
        return Ok(());
    }
    require(store, "split", STAGE_CORPUS, "ingest")?;
    let examples = read_examples(store, STAGE_CORPUS)?;
    let spec = SplitSpec {
        per_label_train: config.split.per_label_train,
        per_label_test: config.split.per_label_test,
        seed: config.split.seed,
    };
    let (train, test) =
        corpus::balanced_split(&examples, &spec).map_err(|e| stage_err("split", e))?;
    store.write_stage(STAGE_TRAIN, corpus::examples_to_jsonl(&train).as_bytes())?;
    store.write_stage(STAGE_TEST, corpus::examples_to_jsonl(&test).as_bytes())?;
    println!("split: {} train / {} test examples", train.len(), test.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

/// One prediction row as persisted, including the reasoning text used by the
/// scoring stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub example_id: String,
    pub predicted_rating: u8,
    pub truth_rating: u8,
    pub reasoning: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<[f64; 5]>,
}

fn exemplar_for(config: &PipelineConfig, train: &[Example]) -> Result<Option<Exemplar>, CliError> {
    if !config.prompt.one_shot {
        return Ok(None);
    }
    let example = if config.prompt.exemplar_example_id.is_empty() {
        train.first().cloned()
    } else {
        train
            .iter()
            .find(|e| e.example_id == config.prompt.exemplar_example_id)
            .cloned()
    };
    let example = example.ok_or_else(|| {
        CliError::Config("one-shot exemplar not found in the train split".to_string())
    })?;
    let reasoning = if !config.prompt.exemplar_reasoning.is_empty() {
        config.prompt.exemplar_reasoning.clone()
    } else if let Some(review) = example.truth_review.clone().filter(|r| !r.trim().is_empty()) {
        review
    } else {
        "The user's history shows consistent preferences that match the new item.".to_string()
    };
    Ok(Some(Exemplar { example, reasoning }))
}

pub fn run_predict(store: &mut RunStore, config: &PipelineConfig) -> Result<(), CliError> {
    if already_done(
        store,
        &[STAGE_PREDICTIONS, STAGE_METRIC_REPORT, STAGE_PARSE_REPORT],
    ) {
        println!("predict: already complete; skipping");
        return Ok(());
    }
    require(store, "predict", STAGE_TEST, "split")?;
    let test = read_examples(store, STAGE_TEST)?;
    let mode = config.prompt.mode();
    let exemplar = if mode.one_shot {
        require(store, "predict", STAGE_TRAIN, "split")?;
        let train = read_examples(store, STAGE_TRAIN)?;
        exemplar_for(config, &train)?
    } else {
        None
    };

    let mut requests = Vec::with_capacity(test.len());
    for example in &test {
        let prompt = render_task_prompt(example, &mode, exemplar.as_ref())
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut request = GenerationRequest::new(prompt.text);
        request.max_tokens = config.backend.max_tokens;
        request.seed = Some(config.backend.seed);
        requests.push(request);
    }

    let backend = make_backend(config)?;
    let mut runner = make_runner(backend.as_ref(), config, store)?;
    let results = runner.run(&requests).map_err(|e| stage_err("predict", e))?;

    let mut rows = Vec::new();
    let mut parse_report = ParseReport::default();
    for (example, result) in test.iter().zip(results) {
        let candidates = result.map_err(|e| stage_err("predict", e))?;
        let candidate = &candidates[0];
        match parse_prediction(&candidate.text, &mode) {
            Ok(parsed) => {
                parse_report.record_success();
                let class_probs = match candidate.class_logits {
                    Some(logits) => Some(
                        normalize_class_scores(&logits).map_err(|e| stage_err("predict", e))?,
                    ),
                    None => None,
                };
                rows.push(PredictionRow {
                    example_id: example.example_id.clone(),
                    predicted_rating: parsed.rating,
                    truth_rating: example.truth_rating,
                    reasoning: parsed.reasoning,
                    class_probs,
                });
            }
            Err(failure) => parse_report.record_failure(failure.code),
        }
    }

    let predictions: Vec<Prediction> = rows
        .iter()
        .map(|r| Prediction {
            example_id: r.example_id.clone(),
            predicted: r.predicted_rating,
            truth: r.truth_rating,
            class_probs: r.class_probs,
        })
        .collect();
    let report =
        taskmetrics::metric_report(&predictions, parse_report.failure_count() as usize)
            .map_err(|e| stage_err("predict", e))?;

    store.write_stage(STAGE_PREDICTIONS, to_jsonl(&rows).as_bytes())?;
    store.write_stage(STAGE_METRIC_REPORT, &pretty_json(&report))?;
    store.write_stage(STAGE_PARSE_REPORT, &pretty_json(&parse_report))?;
    println!(
        "predict: {} evaluated, {} parse failures, multiclass MAE {:.3}",
        report.n_evaluated, report.n_parse_failures, report.mae
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-refs / score-reasoning
// ---------------------------------------------------------------------------

pub fn run_gen_refs(store: &mut RunStore, config: &PipelineConfig) -> Result<(), CliError> {
    if already_done(store, &[STAGE_REFS, STAGE_REF_CANDIDATES, STAGE_REF_COVERAGE]) {
        println!("gen-refs: already complete; skipping");
        return Ok(());
    }
    require(store, "gen-refs", STAGE_TEST, "split")?;
    let test = read_examples(store, STAGE_TEST)?;

    let backend = make_backend(config)?;
    let mut runner = make_runner(backend.as_ref(), config, store)?;
    let refcfg = RefGenConfig {
        n: config.sampling.n,
        temperature: config.sampling.temperature,
        max_tokens: config.backend.max_tokens,
        seed: Some(config.backend.seed),
    };
    let (pool, candidates, coverage) = refgen::build_reference_pool(&test, &refcfg, &mut runner)
        .map_err(|e| stage_err("gen-refs", e))?;

    let truth: BTreeMap<String, u8> = test
        .iter()
        .map(|e| (e.example_id.clone(), e.truth_rating))
        .collect();
    store.write_stage(STAGE_REFS, pool.to_jsonl(&truth).as_bytes())?;
    store.write_stage(STAGE_REF_CANDIDATES, to_jsonl(&candidates).as_bytes())?;
    store.write_stage(STAGE_REF_COVERAGE, &pretty_json(&coverage))?;
    println!(
        "gen-refs: {} verified references across {} of {} examples",
        coverage.verified, coverage.examples_with_references, coverage.examples_total
    );
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scored: usize,
    pub skipped_empty_pool: usize,
    pub skipped_no_reasoning: usize,
    pub scored_against_unverified: usize,
}

pub fn run_score_reasoning(store: &mut RunStore, config: &PipelineConfig) -> Result<(), CliError> {
    if already_done(
        store,
        &[STAGE_SCORES, STAGE_SCORES_UNVERIFIED, STAGE_SCORE_REPORT],
    ) {
        println!("score-reasoning: already complete; skipping");
        return Ok(());
    }
    require(store, "score-reasoning", STAGE_PREDICTIONS, "predict")?;
    require(store, "score-reasoning", STAGE_REFS, "gen-refs")?;
    require(store, "score-reasoning", STAGE_REF_CANDIDATES, "gen-refs")?;

    let rows: Vec<PredictionRow> =
        from_jsonl(&store.read_stage_string(STAGE_PREDICTIONS)?, STAGE_PREDICTIONS)?;
    let pool = ReferencePool::from_jsonl(&store.read_stage_string(STAGE_REFS)?)
        .map_err(|e| stage_err(STAGE_REFS, e))?;
    let candidates: Vec<PostHocExplanation> = from_jsonl(
        &store.read_stage_string(STAGE_REF_CANDIDATES)?,
        STAGE_REF_CANDIDATES,
    )?;

    // The "no verification" pool keeps every scrubbed candidate regardless of
    // its verification outcome.
    let mut unverified_pool = ReferencePool::default();
    for c in &candidates {
        if !c.scrubbed_text.trim().is_empty() {
            unverified_pool
                .by_example
                .entry(c.example_id.clone())
                .or_default()
                .push(c.scrubbed_text.clone());
        }
    }

    let scorer = make_scorer(config)?;
    let mut report = ScoreReport::default();
    let mut scores: Vec<ReasoningScore> = Vec::new();
    let mut unverified_scores: Vec<ReasoningScore> = Vec::new();
    for row in &rows {
        if row.reasoning.trim().is_empty() {
            report.skipped_no_reasoning += 1;
            continue;
        }
        let refs = pool.references(&row.example_id);
        if refs.is_empty() {
            report.skipped_empty_pool += 1;
        } else {
            scores.push(
                refgen::evaluate_reasoning(&row.example_id, &row.reasoning, refs, scorer.as_ref())
                    .map_err(|e| stage_err("score-reasoning", e))?,
            );
            report.scored += 1;
        }
        if config.metrics.score_against_unverified {
            let all_refs = unverified_pool.references(&row.example_id);
            if !all_refs.is_empty() {
                unverified_scores.push(
                    refgen::evaluate_reasoning(
                        &row.example_id,
                        &row.reasoning,
                        all_refs,
                        scorer.as_ref(),
                    )
                    .map_err(|e| stage_err("score-reasoning", e))?,
                );
                report.scored_against_unverified += 1;
            }
        }
    }

    store.write_stage(STAGE_SCORES, to_jsonl(&scores).as_bytes())?;
    store.write_stage(STAGE_SCORES_UNVERIFIED, to_jsonl(&unverified_scores).as_bytes())?;
    store.write_stage(STAGE_SCORE_REPORT, &pretty_json(&report))?;
    println!(
        "score-reasoning: {} scored, {} skipped (empty pool), {} skipped (no reasoning)",
        report.scored, report.skipped_empty_pool, report.skipped_no_reasoning
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// export-ft
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct FtReport {
    pub policy: String,
    pub samples_collected: usize,
    pub survivors: usize,
    pub records: usize,
    pub backend_failures: usize,
    pub parse_failures: u64,
}

pub fn run_export_ft(store: &mut RunStore, config: &PipelineConfig) -> Result<(), CliError> {
    if already_done(store, &[STAGE_FT_RECORDS, STAGE_FT_REPORT]) {
        println!("export-ft: already complete; skipping");
        return Ok(());
    }
    require(store, "export-ft", STAGE_TRAIN, "split")?;
    let train = read_examples(store, STAGE_TRAIN)?;

    let backend = make_backend(config)?;
    let mut runner = make_runner(backend.as_ref(), config, store)?;
    let collect_config = CollectConfig {
        m: config.sampling.m,
        temperature: config.sampling.temperature,
        max_tokens: config.backend.max_tokens,
        seed: Some(config.backend.seed),
    };
    // Teacher collection always uses the full with-reasoning prompt so the
    // exported targets carry reasoning.
    let (samples, collect_report) =
        ftexport::collect_samples(&train, &collect_config, &PromptMode::default(), &mut runner)
            .map_err(|e| stage_err("export-ft", e))?;
    let collected = samples.len();
    let policy = config.filter.policy;
    let survivors = ftexport::apply_filter(samples, policy);
    if survivors.is_empty() {
        println!("export-ft: warning: no samples survive the {} filter", policy.label());
    }
    let index: BTreeMap<String, Example> = train
        .iter()
        .map(|e| (e.example_id.clone(), e.clone()))
        .collect();
    let records = ftexport::export_records(&survivors, &index, policy)
        .map_err(|e| stage_err("export-ft", e))?;

    let report = FtReport {
        policy: policy.label().to_string(),
        samples_collected: collected,
        survivors: survivors.len(),
        records: records.len(),
        backend_failures: collect_report.backend_failures,
        parse_failures: collect_report.parse.failure_count(),
    };
    store.write_stage(STAGE_FT_RECORDS, to_jsonl(&records).as_bytes())?;
    store.write_stage(STAGE_FT_REPORT, &pretty_json(&report))?;
    println!(
        "export-ft: {} records written ({} collected, policy {})",
        report.records, report.samples_collected, report.policy
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// align
// ---------------------------------------------------------------------------

pub fn run_align(store: &mut RunStore, config: &PipelineConfig) -> Result<(), CliError> {
    if already_done(store, &[STAGE_ALIGNMENT]) {
        println!("align: already complete; skipping");
        return Ok(());
    }
    require(store, "align", STAGE_SCORES, "score-reasoning")?;
    let annotations_path = config.paths.annotations.as_ref().ok_or_else(|| {
        CliError::Config("paths.annotations is required for `align`".to_string())
    })?;
    let text = std::fs::read_to_string(annotations_path)
        .map_err(|e| stage_err("align", format!("{annotations_path}: {e}")))?;
    let annotations: Vec<AnnotationRecord> = from_jsonl(&text, "annotations")?;

    let scores: Vec<ReasoningScore> =
        from_jsonl(&store.read_stage_string(STAGE_SCORES)?, STAGE_SCORES)?;
    let unverified: Vec<ReasoningScore> = if store.stage_complete(STAGE_SCORES_UNVERIFIED) {
        from_jsonl(
            &store.read_stage_string(STAGE_SCORES_UNVERIFIED)?,
            STAGE_SCORES_UNVERIFIED,
        )?
    } else {
        Vec::new()
    };

    let to_sample_scores = |scores: &[ReasoningScore]| -> Vec<SampleScores> {
        scores
            .iter()
            .map(|s| SampleScores {
                sample_id: s.example_id.clone(),
                bleu: s.bleu,
                rouge1_f1: s.rouge1_f1,
                meteor: s.meteor,
                embed_score: s.embed_score,
            })
            .collect()
    };
    let sample_scores = to_sample_scores(&scores);
    let unverified_scores = to_sample_scores(&unverified);

    let report = stats::alignment_report(
        &annotations,
        &sample_scores,
        if unverified_scores.is_empty() {
            None
        } else {
            Some(&unverified_scores)
        },
        config.metrics.p_combination,
    )
    .map_err(|e| stage_err("align", e))?;

    store.write_stage(STAGE_ALIGNMENT, &pretty_json(&report))?;
    println!(
        "align: {} samples joined, {} faithful / {} unfaithful",
        report.n_joined, report.n_faithful, report.n_unfaithful
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub samples: usize,
    pub filter: String,
    pub binary_acc: f64,
    pub binary_f1: f64,
    pub binary_auc: Option<f64>,
    pub multi_acc: f64,
    pub multi_auc: Option<f64>,
    pub multi_mae: f64,
    pub multi_rmse: f64,
    pub rouge1_f1: Option<f64>,
    pub meteor: Option<f64>,
    pub bleu: Option<f64>,
    pub embed_score: Option<f64>,
    pub n_evaluated: usize,
    pub n_parse_failures: usize,
}

fn tsv_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

fn report_tsv(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "method\tsamples\tfilter\tbinary_acc\tbinary_f1\tbinary_auc\tmulti_acc\tmulti_auc\tmulti_mae\tmulti_rmse\trouge1_f1\tmeteor\tbleu\tembed_score\tn_evaluated\tn_parse_failures\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{}\t{:.4}\t{}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.method,
            r.samples,
            r.filter,
            r.binary_acc,
            r.binary_f1,
            tsv_cell(r.binary_auc),
            r.multi_acc,
            tsv_cell(r.multi_auc),
            r.multi_mae,
            r.multi_rmse,
            tsv_cell(r.rouge1_f1),
            tsv_cell(r.meteor),
            tsv_cell(r.bleu),
            tsv_cell(r.embed_score),
            r.n_evaluated,
            r.n_parse_failures,
        ));
    }
    out
}

fn mean_of<F: Fn(&ReasoningScore) -> f64>(scores: &[ReasoningScore], f: F) -> Option<f64> {
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().map(&f).sum::<f64>() / scores.len() as f64)
    }
}

pub fn run_report(store: &mut RunStore, config: &PipelineConfig) -> Result<(), CliError> {
    if already_done(store, &[STAGE_REPORT, STAGE_REPORT_TSV]) {
        println!("report: already complete; skipping");
        return Ok(());
    }
    require(store, "report", STAGE_TEST, "split")?;
    require(store, "report", STAGE_METRIC_REPORT, "predict")?;

    let test = read_examples(store, STAGE_TEST)?;
    let metric_report: MetricReport =
        serde_json::from_str(&store.read_stage_string(STAGE_METRIC_REPORT)?)
            .map_err(|e| stage_err(STAGE_METRIC_REPORT, e))?;
    let scores: Vec<ReasoningScore> = if store.stage_complete(STAGE_SCORES) {
        from_jsonl(&store.read_stage_string(STAGE_SCORES)?, STAGE_SCORES)?
    } else {
        Vec::new()
    };

    // Naive baseline row: rounded user mean as the prediction.
    let naive_preds: Vec<Prediction> = test
        .iter()
        .map(|e| {
            let ratings: Vec<u8> = e.history.iter().map(|p| p.rating).collect();
            taskmetrics::naive_baseline_with(&ratings, config.metrics.naive_rounding).map(
                |predicted| Prediction {
                    example_id: e.example_id.clone(),
                    predicted,
                    truth: e.truth_rating,
                    class_probs: None,
                },
            )
        })
        .collect::<Result<_, _>>()
        .map_err(|e| stage_err("report", e))?;
    let naive = taskmetrics::metric_report(&naive_preds, 0).map_err(|e| stage_err("report", e))?;

    let naive_row = ReportRow {
        method: "naive-baseline".to_string(),
        samples: 1,
        filter: FilterPolicy::None.label().to_string(),
        binary_acc: naive.binary_acc,
        binary_f1: naive.binary_f1,
        binary_auc: naive.binary_auc,
        multi_acc: naive.multi_acc,
        multi_auc: naive.multi_auc,
        multi_mae: naive.mae,
        multi_rmse: naive.rmse,
        rouge1_f1: None,
        meteor: None,
        bleu: None,
        embed_score: None,
        n_evaluated: naive.n_evaluated,
        n_parse_failures: 0,
    };
    let model_row = ReportRow {
        method: config.prompt.mode().label(),
        samples: config.sampling.m,
        filter: config.filter.policy.label().to_string(),
        binary_acc: metric_report.binary_acc,
        binary_f1: metric_report.binary_f1,
        binary_auc: metric_report.binary_auc,
        multi_acc: metric_report.multi_acc,
        multi_auc: metric_report.multi_auc,
        multi_mae: metric_report.mae,
        multi_rmse: metric_report.rmse,
        rouge1_f1: mean_of(&scores, |s| s.rouge1_f1),
        meteor: mean_of(&scores, |s| s.meteor),
        bleu: mean_of(&scores, |s| s.bleu),
        embed_score: mean_of(&scores, |s| s.embed_score),
        n_evaluated: metric_report.n_evaluated,
        n_parse_failures: metric_report.n_parse_failures,
    };
    let rows = vec![naive_row, model_row];

    store.write_stage(STAGE_REPORT, &pretty_json(&rows))?;
    store.write_stage(STAGE_REPORT_TSV, report_tsv(&rows).as_bytes())?;
    println!("report: {} rows written", rows.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// dump-prompt
// ---------------------------------------------------------------------------

pub enum DumpKind {
    Task,
    Posthoc,
    Verification,
}

pub fn run_dump_prompt(
    store: &RunStore,
    config: &PipelineConfig,
    example_id: &str,
    kind: DumpKind,
    split: &str,
    explanation: Option<&str>,
) -> Result<(), CliError> {
    let stage = match split {
        "train" => STAGE_TRAIN,
        "test" => STAGE_TEST,
        "corpus" => STAGE_CORPUS,
        other => {
            return Err(CliError::Config(format!(
                "unknown split '{other}' (expected train, test, or corpus)"
            )))
        }
    };
    if !store.stage_complete(stage) {
        return Err(stage_err(
            "dump-prompt",
            format!("missing stage 'split': {stage} is not complete; run `split` first"),
        ));
    }
    let examples = read_examples(store, stage)?;
    let example = examples
        .iter()
        .find(|e| e.example_id == example_id)
        .ok_or_else(|| {
            CliError::Config(format!("example '{example_id}' not found in {split}"))
        })?;
    let text = match kind {
        DumpKind::Task => {
            let mode = config.prompt.mode();
            let exemplar = if mode.one_shot {
                let train = read_examples(store, STAGE_TRAIN)?;
                exemplar_for(config, &train)?
            } else {
                None
            };
            render_task_prompt(example, &mode, exemplar.as_ref())
                .map_err(|e| CliError::Config(e.to_string()))?
                .text
        }
        DumpKind::Posthoc => render_posthoc_prompt(example).text,
        DumpKind::Verification => {
            let explanation = explanation.ok_or_else(|| {
                CliError::Config("--explanation is required for kind=verification".to_string())
            })?;
            let scrubbed = scrub_leakage(explanation);
            render_verification_prompt(example, &scrubbed)
                .map_err(|e| CliError::Config(e.to_string()))?
                .text
        }
    };
    println!("{text}");
    Ok(())
}
