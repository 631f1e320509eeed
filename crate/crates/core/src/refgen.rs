//! Reference generation with self-verification.
//!
//! For each example the backend produces post hoc explanations conditioned on
//! the ground-truth rating; each explanation is scrubbed of rating leakage
//! and fed back through a second, temperature-0 rating-prediction call. Only
//! explanations whose second-pass rating reproduces the ground truth enter
//! the reference pool, which then serves as the proxy reference set for
//! scoring model reasoning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendRunner, GenerationRequest};
use crate::corpus::Example;
use crate::nlg::{self, EmbeddingScorer, NlgError, TokenSeq};
use crate::parse::{parse_prediction, scrub_leakage};
use crate::prompt::{render_posthoc_prompt, render_verification_prompt, PromptMode, EXPLANATION_MARKER};

/// One post hoc explanation candidate and its verification outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHocExplanation {
    pub example_id: String,
    pub candidate_index: usize,
    /// Explanation text extracted from the raw generation.
    pub text: String,
    /// After leakage scrubbing; may be empty, in which case the candidate is
    /// unverifiable.
    pub scrubbed_text: String,
    pub verification_rating: Option<u8>,
    pub verified: bool,
}

/// Verified scrubbed explanations per example. Examples with zero verified
/// candidates are present with empty lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferencePool {
    pub by_example: BTreeMap<String, Vec<String>>,
}

impl ReferencePool {
    pub fn references(&self, example_id: &str) -> &[String] {
        self.by_example
            .get(example_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn examples_with_references(&self) -> usize {
        self.by_example.values().filter(|v| !v.is_empty()).count()
    }

    /// One line per reference: (example_id, reference_index, text,
    /// verification_rating).
    pub fn to_jsonl(&self, truth_by_example: &BTreeMap<String, u8>) -> String {
        let mut out = String::new();
        for (example_id, refs) in &self.by_example {
            for (reference_index, text) in refs.iter().enumerate() {
                let line = serde_json::json!({
                    "example_id": example_id,
                    "reference_index": reference_index,
                    "text": text,
                    "verification_rating": truth_by_example.get(example_id),
                });
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
        out
    }

    pub fn from_jsonl(data: &str) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        struct Line {
            example_id: String,
            text: String,
        }
        let mut pool = ReferencePool::default();
        for line in data.lines().filter(|l| !l.trim().is_empty()) {
            let parsed: Line = serde_json::from_str(line)?;
            pool.by_example.entry(parsed.example_id).or_default().push(parsed.text);
        }
        Ok(pool)
    }
}

/// Per-metric scores of one candidate reasoning against a reference pool,
/// aggregated by maximum over references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningScore {
    pub example_id: String,
    pub bleu: f64,
    pub rouge1_f1: f64,
    pub meteor: f64,
    pub embed_score: f64,
    pub n_references: usize,
}

/// Counts from a reference-generation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolCoverageReport {
    pub examples_total: usize,
    pub examples_with_references: usize,
    pub examples_empty: usize,
    pub candidates_total: usize,
    pub verified: usize,
    pub unverified: usize,
    /// Scrubbed to empty before verification could run.
    pub unverifiable: usize,
    pub verification_parse_failures: usize,
    pub backend_failures: usize,
}

#[derive(Debug, Error)]
pub enum RefGenError {
    #[error("no references available for scoring")]
    NoReferences,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Nlg(#[from] NlgError),
}

/// Sampling settings for reference generation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RefGenConfig {
    /// Explanations sampled per example.
    pub n: usize,
    /// Sampling temperature for explanation generation. Verification always
    /// runs at temperature 0 with a single sample.
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: Option<u64>,
}

impl Default for RefGenConfig {
    fn default() -> Self {
        RefGenConfig {
            n: 8,
            temperature: 0.7,
            max_tokens: 512,
            seed: None,
        }
    }
}

/// Extract the explanation body from a raw post hoc generation: text after
/// the last explanation marker when present, the whole text otherwise.
pub fn extract_explanation(raw: &str) -> String {
    match raw.rfind(EXPLANATION_MARKER) {
        Some(pos) => raw[pos + EXPLANATION_MARKER.len()..].trim().to_string(),
        None => raw.trim().to_string(),
    }
}

fn apply_seed(request: GenerationRequest, seed: Option<u64>) -> GenerationRequest {
    match seed {
        Some(s) => request.with_seed(s),
        None => request,
    }
}

/// Generate `n` scrubbed post hoc explanation candidates for one example.
pub fn generate_candidates(
    example: &Example,
    config: &RefGenConfig,
    runner: &mut BackendRunner,
) -> Result<Vec<PostHocExplanation>, RefGenError> {
    let prompt = render_posthoc_prompt(example);
    let request = apply_seed(
        GenerationRequest::new(prompt.text)
            .with_sampling(config.temperature, config.n),
        config.seed,
    );
    let request = GenerationRequest {
        max_tokens: config.max_tokens,
        ..request
    };
    let mut results = runner.run(std::slice::from_ref(&request))?;
    let candidates = results.remove(0)?;
    Ok(candidates
        .into_iter()
        .enumerate()
        .map(|(candidate_index, c)| {
            let text = extract_explanation(&c.text);
            let scrubbed_text = scrub_leakage(&text);
            PostHocExplanation {
                example_id: example.example_id.clone(),
                candidate_index,
                text,
                scrubbed_text,
                verification_rating: None,
                verified: false,
            }
        })
        .collect())
}

/// Run the self-verification pass on one candidate: a temperature-0 call on
/// the verification prompt, parsed as a bare rating. The candidate is
/// verified exactly when that rating equals the example's ground truth.
pub fn self_verify(
    example: &Example,
    candidate: PostHocExplanation,
    runner: &mut BackendRunner,
) -> Result<PostHocExplanation, RefGenError> {
    let prompt = match render_verification_prompt(example, &candidate.scrubbed_text) {
        Ok(p) => p,
        Err(_) => return Ok(candidate), // empty after scrub: unverifiable
    };
    let request = GenerationRequest::new(prompt.text);
    let mut results = runner.run(std::slice::from_ref(&request))?;
    let output = results.remove(0)?;
    let mut verified = candidate;
    match parse_prediction(&output[0].text, &PromptMode::rating_only()) {
        Ok(parsed) => {
            verified.verification_rating = Some(parsed.rating);
            verified.verified = parsed.rating == example.truth_rating;
        }
        Err(_) => {
            verified.verification_rating = None;
            verified.verified = false;
        }
    }
    Ok(verified)
}

/// Run the full reference-generation loop over a dataset.
///
/// Batches all explanation requests, then all verification requests, through
/// the runner so parallelism and the response cache apply; assembles the
/// verified pool in dataset order. Backend failures are per-example and
/// recorded, not fatal.
pub fn build_reference_pool(
    dataset: &[Example],
    config: &RefGenConfig,
    runner: &mut BackendRunner,
) -> Result<(ReferencePool, Vec<PostHocExplanation>, PoolCoverageReport), RefGenError> {
    let mut report = PoolCoverageReport {
        examples_total: dataset.len(),
        ..PoolCoverageReport::default()
    };

    // Pass 1: explanation generation.
    let gen_requests: Vec<GenerationRequest> = dataset
        .iter()
        .map(|example| {
            let prompt = render_posthoc_prompt(example);
            let mut request = apply_seed(
                GenerationRequest::new(prompt.text).with_sampling(config.temperature, config.n),
                config.seed,
            );
            request.max_tokens = config.max_tokens;
            request
        })
        .collect();
    let gen_results = runner.run(&gen_requests)?;

    let mut all_candidates: Vec<PostHocExplanation> = Vec::new();
    let mut per_example_candidates: Vec<Vec<usize>> = Vec::with_capacity(dataset.len());
    for (example, result) in dataset.iter().zip(gen_results) {
        let mut indices = Vec::new();
        match result {
            Ok(candidates) => {
                for (candidate_index, c) in candidates.into_iter().enumerate() {
                    let text = extract_explanation(&c.text);
                    let scrubbed_text = scrub_leakage(&text);
                    indices.push(all_candidates.len());
                    all_candidates.push(PostHocExplanation {
                        example_id: example.example_id.clone(),
                        candidate_index,
                        text,
                        scrubbed_text,
                        verification_rating: None,
                        verified: false,
                    });
                }
            }
            Err(_) => {
                report.backend_failures += 1;
            }
        }
        per_example_candidates.push(indices);
    }
    report.candidates_total = all_candidates.len();

    // Pass 2: verification for every candidate with a non-empty scrub.
    let mut verify_slots: Vec<usize> = Vec::new();
    let mut verify_requests: Vec<GenerationRequest> = Vec::new();
    for (example, indices) in dataset.iter().zip(&per_example_candidates) {
        for &slot in indices {
            let candidate = &all_candidates[slot];
            if candidate.scrubbed_text.trim().is_empty() {
                report.unverifiable += 1;
                continue;
            }
            let prompt = render_verification_prompt(example, &candidate.scrubbed_text)
                .expect("non-empty scrub renders");
            verify_slots.push(slot);
            verify_requests.push(GenerationRequest::new(prompt.text));
        }
    }
    let verify_results = runner.run(&verify_requests)?;
    for (&slot, result) in verify_slots.iter().zip(verify_results) {
        let candidate = &mut all_candidates[slot];
        match result {
            Ok(candidates) => match parse_prediction(&candidates[0].text, &PromptMode::rating_only()) {
                Ok(parsed) => {
                    candidate.verification_rating = Some(parsed.rating);
                }
                Err(_) => {
                    report.verification_parse_failures += 1;
                }
            },
            Err(_) => {
                report.backend_failures += 1;
            }
        }
    }

    let truth: BTreeMap<&str, u8> = dataset
        .iter()
        .map(|e| (e.example_id.as_str(), e.truth_rating))
        .collect();
    let mut pool = ReferencePool::default();
    for example in dataset {
        pool.by_example.entry(example.example_id.clone()).or_default();
    }
    for candidate in &mut all_candidates {
        let truth_rating = truth[candidate.example_id.as_str()];
        candidate.verified = candidate.verification_rating == Some(truth_rating);
        if candidate.verified {
            pool.by_example
                .get_mut(&candidate.example_id)
                .expect("pre-seeded")
                .push(candidate.scrubbed_text.clone());
            report.verified += 1;
        } else if !candidate.scrubbed_text.trim().is_empty() {
            report.unverified += 1;
        }
    }
    report.examples_with_references = pool.examples_with_references();
    report.examples_empty = report.examples_total - report.examples_with_references;

    Ok((pool, all_candidates, report))
}

/// Score one candidate reasoning against a reference list: each metric is
/// computed candidate-vs-reference and aggregated by the maximum, so a
/// candidate matching any single valid rationale scores highly. Adding a
/// reference can never lower a score.
pub fn evaluate_reasoning(
    example_id: &str,
    candidate_reasoning: &str,
    references: &[String],
    scorer: &dyn EmbeddingScorer,
) -> Result<ReasoningScore, RefGenError> {
    if references.is_empty() {
        return Err(RefGenError::NoReferences);
    }
    let candidate = nlg::tokenize(candidate_reasoning);
    let mut best = ReasoningScore {
        example_id: example_id.to_string(),
        bleu: 0.0,
        rouge1_f1: 0.0,
        meteor: 0.0,
        embed_score: 0.0,
        n_references: references.len(),
    };
    for reference in references {
        let reference: TokenSeq = nlg::tokenize(reference);
        best.bleu = best.bleu.max(nlg::bleu(&candidate, &reference, 4));
        best.rouge1_f1 = best.rouge1_f1.max(nlg::rouge1_f1(&candidate, &reference));
        best.meteor = best.meteor.max(nlg::meteor(&candidate, &reference));
        best.embed_score = best
            .embed_score
            .max(nlg::embed_score(&candidate, &reference, scorer)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::corpus::{ItemMetadata, PastPurchase};
    use crate::nlg::HashedEmbeddingScorer;
    use crate::parse::contains_leakage;

    fn example(id: usize, truth: u8) -> Example {
        Example {
            example_id: format!("u{id}:t{id}"),
            user_id: format!("u{id}"),
            history: (0..4)
                .map(|i| PastPurchase {
                    metadata: ItemMetadata {
                        item_id: format!("h{id}-{i}"),
                        title: format!("History item {i}"),
                        brand: "Acme".into(),
                        categories: vec!["Beauty".into()],
                        description: "A staple product.".into(),
                        price: Some(9.99),
                    },
                    rating: 1 + ((id + i) % 5) as u8,
                    review: format!("Solid purchase number {i}."),
                })
                .collect(),
            target: ItemMetadata {
                item_id: format!("t{id}"),
                title: format!("Target item {id}"),
                brand: "Acme".into(),
                categories: vec!["Beauty".into()],
                description: "The new product.".into(),
                price: Some(19.99),
            },
            truth_rating: truth,
            truth_review: None,
            domain_tag: "beauty".into(),
        }
    }

    fn config(n: usize) -> RefGenConfig {
        RefGenConfig {
            n,
            temperature: 0.7,
            max_tokens: 256,
            seed: Some(42),
        }
    }

    #[test]
    fn generates_n_scrubbed_candidates() {
        let backend = MockBackend::new();
        let mut runner = BackendRunner::new(&backend, 2);
        let ex = example(1, 4);
        let candidates = generate_candidates(&ex, &config(4), &mut runner).unwrap();
        assert_eq!(candidates.len(), 4);
        for c in &candidates {
            assert!(!contains_leakage(&c.scrubbed_text));
            assert_eq!(c.example_id, ex.example_id);
        }
    }

    #[test]
    fn fully_leaky_candidate_becomes_unverifiable() {
        let ex = example(2, 5);
        let mut backend = MockBackend::new();
        let prompt = render_posthoc_prompt(&ex);
        backend.script(
            prompt.text,
            vec!["### Explanation ###\nThe user gave a rating of 5.".to_string()],
        );
        let mut runner = BackendRunner::new(&backend, 1);
        let candidates = generate_candidates(&ex, &config(1), &mut runner).unwrap();
        assert_eq!(candidates[0].scrubbed_text, "");

        let verified = self_verify(&ex, candidates[0].clone(), &mut runner).unwrap();
        assert!(!verified.verified);
        assert!(verified.verification_rating.is_none());
    }

    #[test]
    fn verification_matches_and_mismatches() {
        let ex = example(3, 5);
        let explanation = "They love the brand. The scent fits their taste.";
        let mut backend = MockBackend::new();
        let vprompt = render_verification_prompt(&ex, explanation).unwrap();
        backend.script(vprompt.text.clone(), vec!["### Rating ###\n5".to_string()]);
        let mut runner = BackendRunner::new(&backend, 1);
        let candidate = PostHocExplanation {
            example_id: ex.example_id.clone(),
            candidate_index: 0,
            text: explanation.to_string(),
            scrubbed_text: explanation.to_string(),
            verification_rating: None,
            verified: false,
        };
        let ok = self_verify(&ex, candidate.clone(), &mut runner).unwrap();
        assert!(ok.verified);
        assert_eq!(ok.verification_rating, Some(5));

        let mut backend = MockBackend::new();
        backend.script(vprompt.text.clone(), vec!["### Rating ###\n4".to_string()]);
        let mut runner = BackendRunner::new(&backend, 1);
        let no = self_verify(&ex, candidate.clone(), &mut runner).unwrap();
        assert!(!no.verified);
        assert_eq!(no.verification_rating, Some(4));

        let mut backend = MockBackend::new();
        backend.script(vprompt.text, vec!["no rating here".to_string()]);
        let mut runner = BackendRunner::new(&backend, 1);
        let fail = self_verify(&ex, candidate, &mut runner).unwrap();
        assert!(!fail.verified);
        assert!(fail.verification_rating.is_none());
    }

    #[test]
    fn pool_contains_exactly_verified_candidates() {
        let dataset: Vec<Example> = (0..12).map(|i| example(i, 1 + (i % 5) as u8)).collect();
        let backend = MockBackend::new();
        let mut runner = BackendRunner::new(&backend, 3);
        let (pool, candidates, report) =
            build_reference_pool(&dataset, &config(6), &mut runner).unwrap();

        assert_eq!(report.examples_total, 12);
        assert_eq!(pool.by_example.len(), 12);
        for c in &candidates {
            if c.verified {
                assert!(pool
                    .references(&c.example_id)
                    .iter()
                    .any(|r| r == &c.scrubbed_text));
                assert!(!contains_leakage(&c.scrubbed_text));
            }
        }
        let pooled: usize = pool.by_example.values().map(Vec::len).sum();
        assert_eq!(pooled, report.verified);
        assert_eq!(
            report.examples_with_references + report.examples_empty,
            report.examples_total
        );
    }

    #[test]
    fn pool_is_deterministic() {
        let dataset: Vec<Example> = (0..6).map(|i| example(i, 1 + (i % 5) as u8)).collect();
        let backend = MockBackend::new();
        let mut r1 = BackendRunner::new(&backend, 1);
        let mut r2 = BackendRunner::new(&backend, 4);
        let (p1, _, _) = build_reference_pool(&dataset, &config(4), &mut r1).unwrap();
        let (p2, _, _) = build_reference_pool(&dataset, &config(4), &mut r2).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn evaluate_reasoning_identity_and_max_rule() {
        let scorer = HashedEmbeddingScorer::default();
        let refs = vec![
            "completely different words here".to_string(),
            "the user loves this brand".to_string(),
        ];
        let score =
            evaluate_reasoning("e1", "the user loves this brand", &refs, &scorer).unwrap();
        assert!((score.rouge1_f1 - 1.0).abs() < 1e-12);
        assert!((score.bleu - 1.0).abs() < 1e-12);
        assert_eq!(score.n_references, 2);
    }

    #[test]
    fn evaluate_reasoning_requires_references() {
        let scorer = HashedEmbeddingScorer::default();
        assert!(matches!(
            evaluate_reasoning("e1", "text", &[], &scorer),
            Err(RefGenError::NoReferences)
        ));
    }

    #[test]
    fn adding_reference_never_lowers_scores() {
        let scorer = HashedEmbeddingScorer::default();
        let base = vec!["the user values quality".to_string()];
        let extended = vec![
            "the user values quality".to_string(),
            "brand loyalty drives this purchase".to_string(),
        ];
        let a = evaluate_reasoning("e", "quality drives brand loyalty", &base, &scorer).unwrap();
        let b = evaluate_reasoning("e", "quality drives brand loyalty", &extended, &scorer).unwrap();
        assert!(b.bleu >= a.bleu);
        assert!(b.rouge1_f1 >= a.rouge1_f1);
        assert!(b.meteor >= a.meteor);
        assert!(b.embed_score >= a.embed_score);
    }

    #[test]
    fn pool_jsonl_round_trip() {
        let mut pool = ReferencePool::default();
        pool.by_example
            .insert("e1".into(), vec!["ref one.".into(), "ref two.".into()]);
        pool.by_example.insert("e2".into(), vec![]);
        let truth: BTreeMap<String, u8> = [("e1".to_string(), 4u8)].into_iter().collect();
        let jsonl = pool.to_jsonl(&truth);
        let back = ReferencePool::from_jsonl(&jsonl).unwrap();
        assert_eq!(back.references("e1"), pool.references("e1"));
        // Empty lists do not survive the line format; only presence matters.
        assert!(back.references("e2").is_empty());
    }
}
