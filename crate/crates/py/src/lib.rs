//! Python bindings for the pipeline's core operations: tokenization and text
//! metrics, leakage scrubbing, output parsing, prompt rendering, rating
//! metrics, agreement statistics, sample filtering, and the deterministic
//! mock backend.
//!
//! Examples cross the boundary as JSON strings in the corpus line schema;
//! everything else uses plain Python types.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use recsaver::backend::{Backend, GenerationRequest, MockBackend};
use recsaver::corpus::Example;
use recsaver::ftexport::FilterPolicy;
use recsaver::nlg::{self, HashedEmbeddingScorer, TokenSeq};
use recsaver::prompt::{self, PromptMode};
use recsaver::stats;
use recsaver::taskmetrics;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_example(example_json: &str) -> PyResult<Example> {
    serde_json::from_str(example_json).map_err(|e| value_err(format!("invalid example JSON: {e}")))
}

/// Prompt-variant switches mirroring the pipeline's prompt configuration.
#[pyclass(name = "PromptMode", from_py_object)]
#[derive(Clone)]
struct PyPromptMode {
    inner: PromptMode,
}

#[pymethods]
impl PyPromptMode {
    #[new]
    #[pyo3(signature = (
        reasoning = true,
        one_shot = false,
        include_reviews = true,
        include_ratings = true,
        include_item_description = true
    ))]
    fn new(
        reasoning: bool,
        one_shot: bool,
        include_reviews: bool,
        include_ratings: bool,
        include_item_description: bool,
    ) -> Self {
        PyPromptMode {
            inner: PromptMode {
                reasoning,
                one_shot,
                include_reviews,
                include_ratings,
                include_item_description,
            },
        }
    }

    fn label(&self) -> String {
        self.inner.label()
    }

    fn __repr__(&self) -> String {
        format!("PromptMode({})", self.inner.label())
    }
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    nlg::tokenize(text).tokens().to_vec()
}

#[pyfunction]
#[pyo3(signature = (candidate, reference, max_n = 4))]
fn bleu(candidate: Vec<String>, reference: Vec<String>, max_n: usize) -> f64 {
    nlg::bleu(
        &TokenSeq::from_tokens(candidate),
        &TokenSeq::from_tokens(reference),
        max_n,
    )
}

#[pyfunction]
fn rouge1_f1(candidate: Vec<String>, reference: Vec<String>) -> f64 {
    nlg::rouge1_f1(
        &TokenSeq::from_tokens(candidate),
        &TokenSeq::from_tokens(reference),
    )
}

#[pyfunction]
fn meteor(candidate: Vec<String>, reference: Vec<String>) -> f64 {
    nlg::meteor(
        &TokenSeq::from_tokens(candidate),
        &TokenSeq::from_tokens(reference),
    )
}

#[pyfunction]
#[pyo3(signature = (candidate, reference, seed = 13, dim = 64))]
fn embed_score(candidate: Vec<String>, reference: Vec<String>, seed: u64, dim: usize) -> PyResult<f64> {
    nlg::embed_score(
        &TokenSeq::from_tokens(candidate),
        &TokenSeq::from_tokens(reference),
        &HashedEmbeddingScorer::new(seed, dim),
    )
    .map_err(value_err)
}

#[pyfunction]
fn stem(word: &str) -> String {
    nlg::stem(word)
}

#[pyfunction]
fn split_sentences(text: &str) -> Vec<String> {
    recsaver::parse::split_sentences(text)
}

#[pyfunction]
fn scrub_leakage(explanation: &str) -> String {
    recsaver::parse::scrub_leakage(explanation)
}

/// Parse raw generation text; returns (reasoning, rating). Raises ValueError
/// with the failure code on malformed output.
#[pyfunction]
#[pyo3(signature = (text, with_reasoning = true))]
fn parse_prediction(text: &str, with_reasoning: bool) -> PyResult<(String, u8)> {
    let mode = if with_reasoning {
        PromptMode::default()
    } else {
        PromptMode::rating_only()
    };
    match recsaver::parse::parse_prediction(text, &mode) {
        Ok(parsed) => Ok((parsed.reasoning, parsed.rating)),
        Err(failure) => Err(value_err(format!("{:?}", failure.code))),
    }
}

#[pyfunction]
#[pyo3(signature = (example_json, mode = None))]
fn render_task_prompt(example_json: &str, mode: Option<PyPromptMode>) -> PyResult<String> {
    let example = parse_example(example_json)?;
    let mode = mode.map(|m| m.inner).unwrap_or_default();
    prompt::render_task_prompt(&example, &mode, None)
        .map(|p| p.text)
        .map_err(value_err)
}

#[pyfunction]
fn render_posthoc_prompt(example_json: &str) -> PyResult<String> {
    Ok(prompt::render_posthoc_prompt(&parse_example(example_json)?).text)
}

#[pyfunction]
fn render_verification_prompt(example_json: &str, scrubbed_explanation: &str) -> PyResult<String> {
    prompt::render_verification_prompt(&parse_example(example_json)?, scrubbed_explanation)
        .map(|p| p.text)
        .map_err(value_err)
}

#[pyfunction]
fn weighted_cohen_kappa(a: Vec<u32>, b: Vec<u32>, n_categories: usize) -> PyResult<f64> {
    stats::weighted_cohen_kappa(&a, &b, n_categories).map_err(value_err)
}

/// Returns (rho, p_value).
#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, f64)> {
    stats::pearson(&xs, &ys)
        .map(|r| (r.rho, r.p_value))
        .map_err(value_err)
}

/// Returns (t, degrees_of_freedom, p_value).
#[pyfunction]
fn welch_t_test(group_a: Vec<f64>, group_b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    stats::welch_t_test(&group_a, &group_b)
        .map(|r| (r.t, r.df, r.p_value))
        .map_err(value_err)
}

#[pyfunction]
fn student_t_cdf(t: f64, df: f64) -> f64 {
    stats::student_t_cdf(t, df)
}

#[pyfunction]
fn normalize_class_scores(logits: [f64; 5]) -> PyResult<[f64; 5]> {
    recsaver::backend::normalize_class_scores(&logits).map_err(value_err)
}

#[pyfunction]
fn naive_baseline(history_ratings: Vec<u8>) -> PyResult<u8> {
    taskmetrics::naive_baseline_from_ratings(&history_ratings).map_err(value_err)
}

/// Whether a (predicted, truth) pair survives the named filter policy:
/// "none", "five-class", "binary", or "one-off".
#[pyfunction]
fn filter_keeps(policy: &str, predicted: u8, truth: u8) -> PyResult<bool> {
    let policy = match policy {
        "none" => FilterPolicy::None,
        "five-class" => FilterPolicy::FiveClass,
        "binary" => FilterPolicy::Binary,
        "one-off" => FilterPolicy::OneOff,
        other => return Err(value_err(format!("unknown policy '{other}'"))),
    };
    Ok(policy.keeps(predicted, truth))
}

/// Generate deterministic mock completions for a prompt.
#[pyfunction]
#[pyo3(signature = (prompt, temperature = 0.0, num_samples = 1, seed = None, max_tokens = 256))]
fn mock_generate(
    prompt: &str,
    temperature: f64,
    num_samples: usize,
    seed: Option<u64>,
    max_tokens: usize,
) -> PyResult<Vec<String>> {
    let backend = MockBackend::new();
    let request = GenerationRequest {
        prompt: prompt.to_string(),
        temperature,
        num_samples,
        max_tokens,
        seed,
    };
    backend
        .generate(&request)
        .map(|candidates| candidates.into_iter().map(|c| c.text).collect())
        .map_err(value_err)
}

#[pymodule]
fn recsaver_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPromptMode>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(rouge1_f1, m)?)?;
    m.add_function(wrap_pyfunction!(meteor, m)?)?;
    m.add_function(wrap_pyfunction!(embed_score, m)?)?;
    m.add_function(wrap_pyfunction!(stem, m)?)?;
    m.add_function(wrap_pyfunction!(split_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(scrub_leakage, m)?)?;
    m.add_function(wrap_pyfunction!(parse_prediction, m)?)?;
    m.add_function(wrap_pyfunction!(render_task_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(render_posthoc_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(render_verification_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_cohen_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(student_t_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_class_scores, m)?)?;
    m.add_function(wrap_pyfunction!(naive_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(filter_keeps, m)?)?;
    m.add_function(wrap_pyfunction!(mock_generate, m)?)?;
    Ok(())
}
