//! Reference-based text metrics computed from scratch: a whitespace/punct
//! tokenizer, smoothed sentence BLEU, ROUGE-1 F1, METEOR with exact and
//! Porter-stemmed matching, and a greedy-match embedding F-score with a
//! pluggable token-embedding backend.
//!
//! All metrics are sentence-level and bounded in [0, 1]; corpus figures are
//! averages of per-sample scores.

pub mod stem;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{fnv1a64, splitmix64, unit_f64};

pub use stem::stem;

/// An ordered sequence of lowercased, non-empty tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Normalize raw tokens: lowercase and drop empties.
    pub fn from_tokens<I: IntoIterator<Item = S>, S: AsRef<str>>(tokens: I) -> Self {
        TokenSeq(
            tokens
                .into_iter()
                .map(|t| t.as_ref().to_lowercase())
                .filter(|t| !t.is_empty())
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum NlgError {
    #[error("embedding scorer failed: {0}")]
    Embedding(String),
}

/// Lowercase, split on whitespace, strip leading/trailing punctuation from
/// each token, drop empties. Interior punctuation (hyphens, apostrophes)
/// survives.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(
        text.split_whitespace()
            .map(|t| {
                t.trim_matches(|c: char| c.is_ascii_punctuation())
                    .to_lowercase()
            })
            .filter(|t| !t.is_empty())
            .collect(),
    )
}

fn ngram_overlap(cand: &[String], refr: &[String], n: usize) -> (usize, usize) {
    if cand.len() < n {
        return (0, 0);
    }
    let total = cand.len() - n + 1;
    let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
    if refr.len() >= n {
        for w in refr.windows(n) {
            *ref_counts.entry(w).or_default() += 1;
        }
    }
    let mut cand_counts: HashMap<&[String], usize> = HashMap::new();
    for w in cand.windows(n) {
        *cand_counts.entry(w).or_default() += 1;
    }
    let matches = cand_counts
        .iter()
        .map(|(k, &c)| c.min(*ref_counts.get(k).copied().as_ref().unwrap_or(&0)))
        .sum();
    (matches, total)
}

/// Sentence BLEU: geometric mean of modified n-gram precisions for
/// n = 1..=max_n, add-one smoothing on orders n >= 2 only, times the brevity
/// penalty exp(min(0, 1 - |ref|/|cand|)). Zero unigram overlap gives 0.
pub fn bleu(candidate: &TokenSeq, reference: &TokenSeq, max_n: usize) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let orders = max_n.max(1);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let (matches, total) = ngram_overlap(candidate.tokens(), reference.tokens(), n);
        let p = if n == 1 {
            if matches == 0 {
                return 0.0;
            }
            matches as f64 / total as f64
        } else {
            (matches as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let geo_mean = (log_sum / orders as f64).exp();
    let bp = if candidate.len() >= reference.len() {
        1.0
    } else {
        (1.0 - reference.len() as f64 / candidate.len() as f64).exp()
    };
    geo_mean * bp
}

/// ROUGE-1 F1: clipped unigram overlap, harmonic mean of precision and
/// recall. Zero when either side is empty.
pub fn rouge1_f1(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let (overlap, _) = ngram_overlap(candidate.tokens(), reference.tokens(), 1);
    let p = overlap as f64 / candidate.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

const METEOR_ALPHA: f64 = 0.9;
const METEOR_BETA: f64 = 3.0;
const METEOR_GAMMA: f64 = 0.5;

/// Node budget for the exact alignment search; beyond it the best alignment
/// found so far (the greedy-adjacent one comes first) is kept.
const ALIGN_NODE_BUDGET: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Alignment {
    exact: usize,
    stemmed: usize,
    chunks: usize,
}

impl Alignment {
    fn matches(&self) -> usize {
        self.exact + self.stemmed
    }

    /// Lexicographic objective: most exact matches, then most stem matches,
    /// then fewest chunks.
    fn better_than(&self, other: &Alignment) -> bool {
        (self.exact, self.stemmed, std::cmp::Reverse(self.chunks))
            > (other.exact, other.stemmed, std::cmp::Reverse(other.chunks))
    }
}

struct AlignSearch<'a> {
    exact_options: Vec<&'a [usize]>,
    stem_options: Vec<Vec<usize>>,
    // Upper bound on exact matches obtainable from candidate position i on.
    exact_upper: Vec<usize>,
    used: Vec<bool>,
    best: Alignment,
    budget: usize,
}

impl AlignSearch<'_> {
    fn dfs(&mut self, i: usize, prev: Option<(usize, usize)>, current: Alignment) {
        if self.budget == 0 {
            return;
        }
        self.budget -= 1;
        if i == self.exact_options.len() {
            if current.better_than(&self.best) {
                self.best = current;
            }
            return;
        }
        if current.exact + self.exact_upper[i] < self.best.exact {
            return;
        }

        let adjacency_first = |options: &mut Vec<usize>| {
            if let Some((pi, pj)) = prev {
                if pi + 1 == i {
                    if let Some(pos) = options.iter().position(|&j| j == pj + 1) {
                        options.swap(0, pos);
                    }
                }
            }
        };

        let mut exact_js: Vec<usize> = self.exact_options[i]
            .iter()
            .copied()
            .filter(|&j| !self.used[j])
            .collect();
        adjacency_first(&mut exact_js);
        for j in exact_js {
            let chunk_continues = matches!(prev, Some((pi, pj)) if pi + 1 == i && pj + 1 == j);
            let next = Alignment {
                exact: current.exact + 1,
                stemmed: current.stemmed,
                chunks: current.chunks + usize::from(!chunk_continues),
            };
            self.used[j] = true;
            self.dfs(i + 1, Some((i, j)), next);
            self.used[j] = false;
        }

        let mut stem_js: Vec<usize> = self.stem_options[i]
            .iter()
            .copied()
            .filter(|&j| !self.used[j])
            .collect();
        adjacency_first(&mut stem_js);
        for j in stem_js {
            let chunk_continues = matches!(prev, Some((pi, pj)) if pi + 1 == i && pj + 1 == j);
            let next = Alignment {
                exact: current.exact,
                stemmed: current.stemmed + 1,
                chunks: current.chunks + usize::from(!chunk_continues),
            };
            self.used[j] = true;
            self.dfs(i + 1, Some((i, j)), next);
            self.used[j] = false;
        }

        self.dfs(i + 1, prev, current);
    }
}

/// Align candidate tokens to reference tokens 1-1, exact matches taking
/// priority over stem matches, choosing among maximum matchings one that
/// minimizes the chunk count. Exact for small inputs; falls back to the best
/// alignment within a fixed node budget for long, repetitive ones.
fn meteor_align(cand: &[String], refr: &[String]) -> Alignment {
    let mut ref_by_token: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, t) in refr.iter().enumerate() {
        ref_by_token.entry(t.as_str()).or_default().push(j);
    }
    let mut ref_by_stem: HashMap<String, Vec<usize>> = HashMap::new();
    for (j, t) in refr.iter().enumerate() {
        ref_by_stem.entry(stem(t)).or_default().push(j);
    }

    let empty: &[usize] = &[];
    let exact_options: Vec<&[usize]> = cand
        .iter()
        .map(|t| ref_by_token.get(t.as_str()).map(Vec::as_slice).unwrap_or(empty))
        .collect();
    // Stem options exclude positions already reachable exactly.
    let stem_options: Vec<Vec<usize>> = cand
        .iter()
        .map(|t| {
            ref_by_stem
                .get(&stem(t))
                .map(|js| {
                    js.iter()
                        .copied()
                        .filter(|&j| refr[j] != *t)
                        .collect::<Vec<_>>()
                })
                .unwrap_or_default()
        })
        .collect();

    let n = cand.len();
    let mut exact_upper = vec![0usize; n + 1];
    for i in (0..n).rev() {
        exact_upper[i] = exact_upper[i + 1] + usize::from(!exact_options[i].is_empty());
    }

    let mut search = AlignSearch {
        exact_options,
        stem_options,
        exact_upper,
        used: vec![false; refr.len()],
        best: Alignment {
            exact: 0,
            stemmed: 0,
            chunks: usize::MAX,
        },
        budget: ALIGN_NODE_BUDGET,
    };
    search.dfs(
        0,
        None,
        Alignment {
            exact: 0,
            stemmed: 0,
            chunks: 0,
        },
    );
    search.best
}

/// METEOR with exact + Porter-stem matching (no synonym stage):
/// F_mean = P*R / (alpha*P + (1-alpha)*R) with alpha = 0.9, fragmentation
/// penalty gamma * (chunks/matches)^beta with gamma = 0.5, beta = 3.
pub fn meteor(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let alignment = meteor_align(candidate.tokens(), reference.tokens());
    let m = alignment.matches() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (alignment.chunks as f64 / m).powf(METEOR_BETA);
    f_mean * (1.0 - penalty)
}

/// Per-token embedding backend. Implementations must return one unit-norm
/// vector (within 1e-6) of a fixed dimension per input token.
pub trait EmbeddingScorer: Send + Sync {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, NlgError>;
}

/// Deterministic test scorer: each token maps to a seeded hashed random unit
/// vector, so distinct tokens are nearly orthogonal in high dimensions and
/// identical tokens coincide.
#[derive(Debug, Clone, Copy)]
pub struct HashedEmbeddingScorer {
    pub seed: u64,
    pub dim: usize,
}

impl HashedEmbeddingScorer {
    pub fn new(seed: u64, dim: usize) -> Self {
        HashedEmbeddingScorer {
            seed,
            dim: dim.max(1),
        }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut state = fnv1a64(token.as_bytes()) ^ self.seed.wrapping_mul(0x9e3779b97f4a7c15);
        let mut v: Vec<f64> = (0..self.dim)
            .map(|_| unit_f64(splitmix64(&mut state)) * 2.0 - 1.0)
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            v[0] = 1.0;
        } else {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

impl Default for HashedEmbeddingScorer {
    fn default() -> Self {
        HashedEmbeddingScorer::new(13, 64)
    }
}

impl EmbeddingScorer for HashedEmbeddingScorer {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, NlgError> {
        Ok(tokens.iter().map(|t| self.token_vector(t)).collect())
    }
}

/// Client for an external embedding service speaking
/// `{"tokens": [..]} -> {"vectors": [[..]]}`. Disabled unless configured.
pub struct HttpEmbeddingScorer {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingScorer {
    pub fn new(endpoint: impl Into<String>, timeout: std::time::Duration) -> Result<Self, NlgError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| NlgError::Embedding(e.to_string()))?;
        Ok(HttpEmbeddingScorer {
            endpoint: endpoint.into(),
            client,
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    tokens: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingScorer for HttpEmbeddingScorer {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, NlgError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { tokens })
            .send()
            .map_err(|e| NlgError::Embedding(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(NlgError::Embedding(format!("status {}", resp.status())));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| NlgError::Embedding(e.to_string()))?;
        if body.vectors.len() != tokens.len() {
            return Err(NlgError::Embedding(format!(
                "expected {} vectors, got {}",
                tokens.len(),
                body.vectors.len()
            )));
        }
        Ok(body.vectors)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy-match embedding F-score: precision is the mean over candidate
/// tokens of their best cosine similarity against the reference (negatives
/// clamped to 0), recall the mirror over reference tokens, combined by
/// harmonic mean.
pub fn embed_score(
    candidate: &TokenSeq,
    reference: &TokenSeq,
    scorer: &dyn EmbeddingScorer,
) -> Result<f64, NlgError> {
    if candidate.is_empty() || reference.is_empty() {
        return Ok(0.0);
    }
    let cand_vecs = scorer.embed(candidate.tokens())?;
    let ref_vecs = scorer.embed(reference.tokens())?;

    let sim: Vec<Vec<f64>> = cand_vecs
        .iter()
        .map(|cv| ref_vecs.iter().map(|rv| cosine(cv, rv)).collect())
        .collect();

    let precision: f64 = sim
        .iter()
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0))
        .sum::<f64>()
        / candidate.len() as f64;
    let recall: f64 = (0..reference.len())
        .map(|j| {
            sim.iter()
                .map(|row| row[j])
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0)
        })
        .sum::<f64>()
        / reference.len() as f64;

    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(words: &[&str]) -> TokenSeq {
        TokenSeq::from_tokens(words.iter().copied())
    }

    #[test]
    fn tokenize_strips_edge_punctuation() {
        assert_eq!(tokenize("The user, happily.").tokens(), ["the", "user", "happily"]);
        assert_eq!(tokenize("").tokens(), [] as [&str; 0]);
        assert_eq!(tokenize("5-star item").tokens(), ["5-star", "item"]);
    }

    #[test]
    fn bleu_identity_is_one() {
        let a = seq(&["the", "user", "likes", "this", "brand"]);
        assert!((bleu(&a, &a, 4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_zero_unigram_overlap_is_zero() {
        let a = seq(&["alpha", "beta"]);
        let b = seq(&["gamma", "delta"]);
        assert_eq!(bleu(&a, &b, 4), 0.0);
    }

    #[test]
    fn bleu_hand_computed_example() {
        // cand [the cat sat], ref [the cat sat down]:
        // p1 = 3/3; p2 = (2+1)/(2+1); p3 = (1+1)/(1+1); p4 = (0+1)/(0+1);
        // geometric mean 1, brevity penalty exp(1 - 4/3) = exp(-1/3).
        let cand = seq(&["the", "cat", "sat"]);
        let refr = seq(&["the", "cat", "sat", "down"]);
        let expected = (-1.0f64 / 3.0).exp();
        assert!((bleu(&cand, &refr, 4) - expected).abs() < 1e-12);
    }

    #[test]
    fn bleu_is_asymmetric() {
        let a = seq(&["the", "cat", "sat"]);
        let b = seq(&["the", "cat", "sat", "down"]);
        assert!((bleu(&a, &b, 4) - bleu(&b, &a, 4)).abs() > 1e-6);
    }

    #[test]
    fn bleu_empty_candidate_is_zero() {
        assert_eq!(bleu(&seq(&[]), &seq(&["a"]), 4), 0.0);
    }

    #[test]
    fn rouge_identity_and_hand_example() {
        let a = seq(&["a", "b", "c"]);
        assert!((rouge1_f1(&a, &a) - 1.0).abs() < 1e-12);
        let b = seq(&["a", "b", "d"]);
        assert!((rouge1_f1(&a, &b) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge1_f1(&seq(&["x"]), &seq(&["y"])), 0.0);
    }

    #[test]
    fn rouge_is_symmetric_and_order_invariant() {
        let a = seq(&["a", "b", "c", "c"]);
        let b = seq(&["c", "a", "x"]);
        assert!((rouge1_f1(&a, &b) - rouge1_f1(&b, &a)).abs() < 1e-15);
        let shuffled = seq(&["c", "c", "b", "a"]);
        assert!((rouge1_f1(&a, &b) - rouge1_f1(&shuffled, &b)).abs() < 1e-15);
    }

    #[test]
    fn shuffling_lowers_bleu_but_not_rouge() {
        let reference = seq(&["a", "b", "c", "d", "e"]);
        let inorder = reference.clone();
        let shuffled = seq(&["b", "a", "d", "c", "e"]);
        assert!(bleu(&shuffled, &reference, 4) < bleu(&inorder, &reference, 4));
        assert!((rouge1_f1(&shuffled, &reference) - rouge1_f1(&inorder, &reference)).abs() < 1e-15);
    }

    #[test]
    fn meteor_identity_closed_form() {
        // Identical 6-token sequences: one chunk, penalty 0.5 * (1/6)^3.
        let a = seq(&["one", "two", "three", "four", "five", "six"]);
        let expected = 1.0 - 0.5 / 216.0;
        assert!((meteor(&a, &a) - expected).abs() < 1e-12);
    }

    #[test]
    fn meteor_disjoint_is_zero() {
        assert_eq!(meteor(&seq(&["alpha", "beta"]), &seq(&["gamma", "delta"])), 0.0);
    }

    #[test]
    fn meteor_stem_stage_matches() {
        let score = meteor(&seq(&["running"]), &seq(&["run"]));
        assert!(score > 0.0);
        // Single stemmed match, one chunk: F_mean = 1, penalty = 0.5.
        assert!((score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn meteor_identity_high_for_length_five_plus() {
        for len in 5..12 {
            let words: Vec<String> = (0..len).map(|i| format!("word{i}")).collect();
            let a = TokenSeq::from_tokens(words);
            assert!(meteor(&a, &a) >= 0.99, "len {len}");
        }
    }

    #[test]
    fn meteor_prefers_fewer_chunks() {
        // Both orderings align fully; the contiguous one has fewer chunks and
        // must score at least as high.
        let reference = seq(&["a", "b", "c", "d"]);
        let contiguous = seq(&["a", "b", "c", "d"]);
        let crossed = seq(&["c", "d", "a", "b"]);
        assert!(meteor(&contiguous, &reference) > meteor(&crossed, &reference));
    }

    #[test]
    fn meteor_exact_beats_stem_priority() {
        // "runs" appears exactly; alignment must prefer the exact position.
        let cand = seq(&["runs"]);
        let refr = seq(&["running", "runs"]);
        let a = meteor_align(cand.tokens(), refr.tokens());
        assert_eq!(a.exact, 1);
        assert_eq!(a.stemmed, 0);
    }

    /// Distinct tokens map to exactly orthogonal axes.
    struct OrthogonalScorer;
    impl EmbeddingScorer for OrthogonalScorer {
        fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, NlgError> {
            Ok(tokens
                .iter()
                .map(|t| {
                    let axis = (fnv1a64(t.as_bytes()) % 32) as usize;
                    let mut v = vec![0.0; 32];
                    v[axis] = 1.0;
                    v
                })
                .collect())
        }
    }

    #[test]
    fn embed_identity_is_one() {
        let a = seq(&["alpha", "beta", "gamma"]);
        let scorer = HashedEmbeddingScorer::default();
        assert!((embed_score(&a, &a, &scorer).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn embed_orthogonal_disjoint_is_zero() {
        let a = seq(&["aa", "bb"]);
        let b = seq(&["cc", "dd"]);
        // Pick tokens landing on distinct axes.
        let scorer = OrthogonalScorer;
        let vs = scorer.embed(&[
            "aa".to_string(),
            "bb".to_string(),
            "cc".to_string(),
            "dd".to_string(),
        ])
        .unwrap();
        let axes: std::collections::HashSet<usize> = vs
            .iter()
            .map(|v| v.iter().position(|&x| x == 1.0).unwrap())
            .collect();
        assert_eq!(axes.len(), 4, "test tokens must land on distinct axes");
        assert_eq!(embed_score(&a, &b, &scorer).unwrap(), 0.0);
    }

    /// Fixed 2x2 similarity matrix [[1, 0], [0, 0.5]] via crafted vectors.
    struct MatrixScorer;
    impl EmbeddingScorer for MatrixScorer {
        fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, NlgError> {
            let half = 0.5f64;
            let ortho = (1.0 - half * half).sqrt();
            Ok(tokens
                .iter()
                .map(|t| match t.as_str() {
                    "c1" | "r1" => vec![1.0, 0.0, 0.0],
                    "c2" => vec![0.0, 1.0, 0.0],
                    "r2" => vec![0.0, half, ortho],
                    _ => vec![0.0, 0.0, 1.0],
                })
                .collect())
        }
    }

    #[test]
    fn embed_hand_computed_greedy_match() {
        // Similarities: c1·r1 = 1, c1·r2 = 0, c2·r1 = 0, c2·r2 = 0.5
        // P = (1 + 0.5)/2 = 0.75, R = 0.75, F1 = 0.75.
        let cand = seq(&["c1", "c2"]);
        let refr = seq(&["r1", "r2"]);
        let got = embed_score(&cand, &refr, &MatrixScorer).unwrap();
        assert!((got - 0.75).abs() < 1e-12);
    }

    #[test]
    fn hashed_scorer_vectors_are_unit_norm_and_stable() {
        let scorer = HashedEmbeddingScorer::new(13, 64);
        let tokens = vec!["brand".to_string(), "quality".to_string(), "brand".to_string()];
        let vs = scorer.embed(&tokens).unwrap();
        for v in &vs {
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        assert_eq!(vs[0], vs[2]);
        assert_ne!(vs[0], vs[1]);
    }

    #[test]
    fn http_scorer_speaks_the_wire_contract() {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 8192];
            let _ = stream.read(&mut buf);
            let body = r#"{"vectors":[[1.0,0.0],[0.0,1.0]]}"#;
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        });
        let scorer = HttpEmbeddingScorer::new(
            format!("http://127.0.0.1:{port}/embed"),
            std::time::Duration::from_secs(2),
        )
        .unwrap();
        let vs = scorer.embed(&["a".to_string(), "b".to_string()]).unwrap();
        assert_eq!(vs, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn http_scorer_rejects_count_mismatch() {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 8192];
            let _ = stream.read(&mut buf);
            let body = r#"{"vectors":[[1.0]]}"#;
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        });
        let scorer = HttpEmbeddingScorer::new(
            format!("http://127.0.0.1:{port}/embed"),
            std::time::Duration::from_secs(2),
        )
        .unwrap();
        assert!(scorer.embed(&["a".to_string(), "b".to_string()]).is_err());
    }

    fn arb_tokens(max_len: usize) -> impl Strategy<Value = TokenSeq> {
        proptest::collection::vec(prop_oneof!["cat", "dog", "ran", "fast", "home", "blue"], 0..max_len)
            .prop_map(|v| TokenSeq::from_tokens(v))
    }

    proptest! {
        #[test]
        fn metrics_bounded_in_unit_interval(c in arb_tokens(12), r in arb_tokens(12)) {
            let scorer = HashedEmbeddingScorer::default();
            for score in [
                bleu(&c, &r, 4),
                rouge1_f1(&c, &r),
                meteor(&c, &r),
                embed_score(&c, &r, &scorer).unwrap(),
            ] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&score), "score {score}");
            }
        }

        #[test]
        fn identity_scores(c in arb_tokens(12)) {
            prop_assume!(!c.is_empty());
            prop_assert!((bleu(&c, &c, 4) - 1.0).abs() < 1e-12);
            prop_assert!((rouge1_f1(&c, &c) - 1.0).abs() < 1e-12);
            let scorer = HashedEmbeddingScorer::default();
            prop_assert!((embed_score(&c, &c, &scorer).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
