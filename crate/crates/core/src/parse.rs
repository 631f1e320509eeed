//! Parsing of raw generation text into (reasoning, rating) pairs, plus the
//! sentence-level leakage scrubber applied to post hoc explanations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::prompt::{PromptMode, RATING_MARKER, REASON_MARKER};

/// Phrases whose sentences are deleted before self-verification, matched
/// case-insensitively as substrings.
pub const LEAKAGE_TRIGGERS: [&str; 3] = ["a rating of", "stars", "scores"];

/// Successfully parsed model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    /// Reasoning text; empty in rating-only mode.
    pub reasoning: String,
    /// Predicted rating, always in 1..=5.
    pub rating: u8,
    /// The original raw text.
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParseFailureCode {
    MissingRatingMarker,
    MalformedRating,
    OutOfRangeRating,
    EmptyOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub code: ParseFailureCode,
    pub raw: String,
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "parse failure: {:?}", self.code)
    }
}

impl std::error::Error for ParseFailure {}

/// Find the first integer token in `text`.
///
/// Decimal attachments ("4.5") are malformed rather than truncated, negative
/// values and anything outside 1..=5 are out of range; ratings are never
/// coerced into range.
fn first_int_token(text: &str) -> Result<u8, ParseFailureCode> {
    let bytes = text.as_bytes();
    let start = bytes
        .iter()
        .position(u8::is_ascii_digit)
        .ok_or(ParseFailureCode::MalformedRating)?;
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    // "4.5" or ".5" denote non-integer values.
    let decimal_after =
        end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit();
    let decimal_before = start > 0 && bytes[start - 1] == b'.';
    if decimal_after || decimal_before {
        return Err(ParseFailureCode::MalformedRating);
    }
    if start > 0 && bytes[start - 1] == b'-' {
        return Err(ParseFailureCode::OutOfRangeRating);
    }
    let value: u64 = text[start..end]
        .parse()
        .map_err(|_| ParseFailureCode::MalformedRating)?;
    if (1..=5).contains(&value) {
        Ok(value as u8)
    } else {
        Err(ParseFailureCode::OutOfRangeRating)
    }
}

/// Parse raw generation text into a [`ParsedOutput`].
///
/// With-reasoning mode takes the reasoning between the reason marker and the
/// last rating marker, and the first integer token after that marker as the
/// rating. Rating-only mode takes the first integer token anywhere.
pub fn parse_prediction(text: &str, mode: &PromptMode) -> Result<ParsedOutput, ParseFailure> {
    let fail = |code| ParseFailure {
        code,
        raw: text.to_string(),
    };
    if text.trim().is_empty() {
        return Err(fail(ParseFailureCode::EmptyOutput));
    }
    if mode.reasoning {
        // Models sometimes restate the format block; the last marker carries
        // the final answer.
        let pos = text
            .rfind(RATING_MARKER)
            .ok_or_else(|| fail(ParseFailureCode::MissingRatingMarker))?;
        let before = &text[..pos];
        let after = &text[pos + RATING_MARKER.len()..];
        let reasoning = match before.find(REASON_MARKER) {
            Some(rp) => before[rp + REASON_MARKER.len()..].trim(),
            None => before.trim(),
        };
        let rating = first_int_token(after).map_err(fail)?;
        Ok(ParsedOutput {
            reasoning: reasoning.to_string(),
            rating,
            raw: text.to_string(),
        })
    } else {
        let rating = first_int_token(text).map_err(fail)?;
        Ok(ParsedOutput {
            reasoning: String::new(),
            rating,
            raw: text.to_string(),
        })
    }
}

/// Split text into sentences on '.', '!', '?' followed by whitespace or end.
/// Delimiters stay with their sentence; segments are trimmed and empty
/// segments dropped, so the concatenation equals the input up to whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut start = 0;
    for (k, &(i, c)) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') {
            let at_end = k + 1 == chars.len();
            if at_end || chars[k + 1].1.is_whitespace() {
                let seg = text[start..i + c.len_utf8()].trim();
                if !seg.is_empty() {
                    out.push(seg.to_string());
                }
                start = i + c.len_utf8();
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Delete every sentence containing a leakage trigger phrase and re-join the
/// remainder with single spaces. The result may be empty.
pub fn scrub_leakage(explanation: &str) -> String {
    split_sentences(explanation)
        .into_iter()
        .filter(|sentence| {
            let lower = sentence.to_lowercase();
            !LEAKAGE_TRIGGERS.iter().any(|t| lower.contains(t))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Returns true if `text` contains any leakage trigger, case-insensitively.
pub fn contains_leakage(text: &str) -> bool {
    let lower = text.to_lowercase();
    LEAKAGE_TRIGGERS.iter().any(|t| lower.contains(t))
}

/// Per-run summary of parse outcomes, consumed by the metrics stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub parsed: u64,
    pub failures: BTreeMap<String, u64>,
}

impl ParseReport {
    pub fn record_success(&mut self) {
        self.parsed += 1;
    }

    pub fn record_failure(&mut self, code: ParseFailureCode) {
        *self.failures.entry(format!("{code:?}")).or_default() += 1;
    }

    pub fn failure_count(&self) -> u64 {
        self.failures.values().sum()
    }

    pub fn failure_rate(&self) -> f64 {
        let total = self.parsed + self.failure_count();
        if total == 0 {
            0.0
        } else {
            self.failure_count() as f64 / total as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reasoning_mode() -> PromptMode {
        PromptMode::default()
    }

    fn rating_only() -> PromptMode {
        PromptMode::rating_only()
    }

    #[test]
    fn parses_reason_and_rating() {
        let out =
            parse_prediction("### Reason ###\nlikes this brand\n### Rating ###\n4", &reasoning_mode())
                .unwrap();
        assert_eq!(out.reasoning, "likes this brand");
        assert_eq!(out.rating, 4);
    }

    #[test]
    fn decimal_rating_is_malformed() {
        let err = parse_prediction("### Rating ###\n4.5", &reasoning_mode()).unwrap_err();
        assert_eq!(err.code, ParseFailureCode::MalformedRating);
    }

    #[test]
    fn out_of_range_in_rating_only_mode() {
        let err = parse_prediction("I think 6", &rating_only()).unwrap_err();
        assert_eq!(err.code, ParseFailureCode::OutOfRangeRating);
    }

    #[test]
    fn missing_marker_in_reasoning_mode() {
        let err = parse_prediction("the rating is 4", &reasoning_mode()).unwrap_err();
        assert_eq!(err.code, ParseFailureCode::MissingRatingMarker);
    }

    #[test]
    fn empty_output() {
        let err = parse_prediction("   \n ", &reasoning_mode()).unwrap_err();
        assert_eq!(err.code, ParseFailureCode::EmptyOutput);
    }

    #[test]
    fn last_rating_marker_wins() {
        let text = "### Reason ###\nfirst try\n### Rating ###\n2\n### Rating ###\n5";
        let out = parse_prediction(text, &reasoning_mode()).unwrap();
        assert_eq!(out.rating, 5);
    }

    #[test]
    fn reasoning_without_reason_marker_uses_prefix() {
        let out = parse_prediction("good fit for the user\n### Rating ###\n3", &reasoning_mode())
            .unwrap();
        assert_eq!(out.reasoning, "good fit for the user");
        assert_eq!(out.rating, 3);
    }

    #[test]
    fn rating_only_ignores_spelled_numbers() {
        let err = parse_prediction("four", &rating_only()).unwrap_err();
        assert_eq!(err.code, ParseFailureCode::MalformedRating);
    }

    #[test]
    fn negative_rating_out_of_range() {
        let err = parse_prediction("### Rating ###\n-1", &reasoning_mode()).unwrap_err();
        assert_eq!(err.code, ParseFailureCode::OutOfRangeRating);
    }

    #[test]
    fn splits_on_terminators() {
        assert_eq!(
            split_sentences("A good buy. Five stars!"),
            vec!["A good buy.", "Five stars!"]
        );
        assert_eq!(split_sentences(""), Vec::<String>::new());
        assert_eq!(split_sentences("No terminator"), vec!["No terminator"]);
    }

    #[test]
    fn ellipsis_stays_in_one_sentence() {
        assert_eq!(split_sentences("Wait... what?"), vec!["Wait...", "what?"]);
    }

    #[test]
    fn scrub_removes_trigger_sentences() {
        assert_eq!(
            scrub_leakage("The user gave a rating of 5 because quality. They love the brand."),
            "They love the brand."
        );
        assert_eq!(scrub_leakage("This deserves five stars. Great scent."), "Great scent.");
        assert_eq!(scrub_leakage("They love the brand."), "They love the brand.");
    }

    #[test]
    fn scrub_is_case_insensitive_and_substring() {
        assert_eq!(scrub_leakage("FIVE STARS! Nice."), "Nice.");
        assert_eq!(scrub_leakage("A 4-stars pick. Nice."), "Nice.");
        assert_eq!(scrub_leakage("It Scores well. Nice."), "Nice.");
    }

    #[test]
    fn scrub_can_empty_the_text() {
        assert_eq!(scrub_leakage("The user gave a rating of 5."), "");
    }

    #[test]
    fn parse_report_rates() {
        let mut report = ParseReport::default();
        report.record_success();
        report.record_success();
        report.record_success();
        report.record_failure(ParseFailureCode::MalformedRating);
        assert_eq!(report.failure_count(), 1);
        assert!((report.failure_rate() - 0.25).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn scrub_is_idempotent(text in "[A-Za-z0-9 .!?]{0,200}") {
            let once = scrub_leakage(&text);
            let twice = scrub_leakage(&once);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn scrubbed_text_has_no_triggers(text in "[A-Za-z .!?]{0,200}") {
            prop_assert!(!contains_leakage(&scrub_leakage(&text)));
        }

        #[test]
        fn parsed_rating_always_in_range(text in ".{0,120}") {
            for mode in [PromptMode::default(), PromptMode::rating_only()] {
                if let Ok(out) = parse_prediction(&text, &mode) {
                    prop_assert!((1..=5).contains(&out.rating));
                }
            }
        }

        #[test]
        fn split_preserves_content_up_to_whitespace(text in "[A-Za-z .!?]{0,200}") {
            let joined: String = split_sentences(&text).concat();
            let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(strip(&joined), strip(&text));
        }
    }
}
