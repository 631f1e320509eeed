//! Deterministic prompt rendering.
//!
//! Every prompt variant used by the pipeline is rendered here from fixed
//! template text: the reasoning task prompt, the rating-only variant, input
//! ablations, the one-shot variant, the post hoc explanation prompt, and the
//! self-verification prompt. Rendering is a pure function of its inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Example, ItemMetadata, PastPurchase};

/// Template revision identifier, recorded in run manifests.
pub const PROMPT_TEMPLATE_VERSION: &str = "1";

/// Prompt variant switches.
///
/// `reasoning` selects the chain-of-thought output format versus a bare
/// rating; the `include_*` flags drop the corresponding input lines for
/// ablation runs. Any combination renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMode {
    pub reasoning: bool,
    pub one_shot: bool,
    pub include_reviews: bool,
    pub include_ratings: bool,
    pub include_item_description: bool,
}

impl Default for PromptMode {
    fn default() -> Self {
        PromptMode {
            reasoning: true,
            one_shot: false,
            include_reviews: true,
            include_ratings: true,
            include_item_description: true,
        }
    }
}

impl PromptMode {
    /// Rating-only prediction with full inputs.
    pub fn rating_only() -> Self {
        PromptMode {
            reasoning: false,
            ..PromptMode::default()
        }
    }

    /// Short label used in reports, e.g. `zero-shot-cot-no-review`.
    pub fn label(&self) -> String {
        let mut label = if !self.reasoning {
            "rating-only".to_string()
        } else if self.one_shot {
            "one-shot".to_string()
        } else {
            "zero-shot-cot".to_string()
        };
        if !self.include_reviews {
            label.push_str("-no-review");
        }
        if !self.include_ratings {
            label.push_str("-no-rating");
        }
        if !self.include_item_description {
            label.push_str("-no-item-description");
        }
        label
    }
}

/// A rendered prompt, tagged with the mode and example that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub mode: PromptMode,
    pub example_id: String,
}

/// A worked example for one-shot prompting: the example plus a reference
/// reasoning text presented as the model's answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub example: Example,
    pub reasoning: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("one-shot mode requires an exemplar")]
    MissingExemplar,
    #[error("explanation is empty after scrubbing; nothing to verify")]
    EmptyExplanation,
}

/// Output-format markers shared with the parser.
pub const REASON_MARKER: &str = "### Reason ###";
pub const RATING_MARKER: &str = "### Rating ###";
pub const EXPLANATION_MARKER: &str = "### Explanation ###";
pub const EXPLANATION_BLOCK_HEADER: &str = "### Explanation: ###";

const HISTORY_HEADER: &str = "### Past User History: ###";
const NEW_ITEM_HEADER: &str = "### New Item Information: ###";
const SECTION_END: &str = "######";
const ONE_SHOT_DELIMITER: &str = "================================";
const MISSING_FIELD: &str = "unknown";

/// Domain-dependent wording: item noun and the verb for past interactions.
struct DomainWords {
    noun: &'static str,
    noun_title: &'static str,
    verb: &'static str,
}

fn domain_words(domain_tag: &str) -> DomainWords {
    let tag = domain_tag.to_lowercase();
    if tag.contains("movie") || tag.contains("tv") || tag.contains("video") {
        DomainWords {
            noun: "video (movies and tv)",
            noun_title: "Video (Movies and TV)",
            verb: "watch",
        }
    } else {
        DomainWords {
            noun: "product",
            noun_title: "Product",
            verb: "purchase",
        }
    }
}

/// Collapse a field value onto one line so ablation deletions stay line-exact.
fn field_value(value: &str) -> String {
    let collapsed = value.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        MISSING_FIELD.to_string()
    } else {
        collapsed
    }
}

fn price_value(price: Option<f64>) -> String {
    match price {
        Some(p) => format!("{p:.2}"),
        None => MISSING_FIELD.to_string(),
    }
}

fn categories_value(categories: &[String]) -> String {
    if categories.is_empty() {
        MISSING_FIELD.to_string()
    } else {
        field_value(&categories.join(", "))
    }
}

fn push_item_fields(out: &mut String, meta: &ItemMetadata, words: &DomainWords, mode: &PromptMode) {
    out.push_str(&format!("{} Title: {}\n", words.noun_title, field_value(&meta.title)));
    out.push_str(&format!("Brand: {}\n", field_value(&meta.brand)));
    out.push_str(&format!("Categories: {}\n", categories_value(&meta.categories)));
    if mode.include_item_description {
        out.push_str(&format!("Description: {}\n", field_value(&meta.description)));
    }
    out.push_str(&format!("Item Price: {}\n", price_value(meta.price)));
}

fn push_history_entry(out: &mut String, purchase: &PastPurchase, words: &DomainWords, mode: &PromptMode) {
    push_item_fields(out, &purchase.metadata, words, mode);
    if mode.include_ratings {
        out.push_str(&format!("User Rating: {}\n", purchase.rating));
    }
    if mode.include_reviews {
        out.push_str(&format!("User Review: {}\n", field_value(&purchase.review)));
    }
}

fn preamble(words: &DomainWords) -> String {
    format!(
        "Here is information about a user and a new {} being recommended to the user. \
         For the user, we have the user's past item information history and the user's \
         corresponding ratings. User ratings range from 1 to 5, where 1 is the lowest and \
         5 is the highest. For the new item being recommended, we have the item information.",
        words.noun
    )
}

/// History and new-item sections shared by every prompt kind.
fn input_sections(example: &Example, words: &DomainWords, mode: &PromptMode) -> String {
    let mut out = String::new();
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for (i, purchase) in example.history.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        push_history_entry(&mut out, purchase, words, mode);
    }
    out.push('\n');
    out.push_str(NEW_ITEM_HEADER);
    out.push('\n');
    out.push_str(&format!("New {}\n", words.noun_title));
    push_item_fields(&mut out, &example.target, words, mode);
    out
}

fn task_description(words: &DomainWords, mode: &PromptMode) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Given the user's past {} history and the new item information, what information \
         can you infer about the user's preferences and how they will rate the new {}?\n\n",
        words.verb, words.noun
    ));
    if mode.reasoning {
        out.push_str(
            "Your reasoning explanation should be based on any commonalities in the user \
             history items and inferred user tastes or preferences.\n\n",
        );
        out.push_str("After your reasoning, predict a numerical rating.\n\n");
        out.push_str("Please follow the format below:\n");
        out.push_str(REASON_MARKER);
        out.push('\n');
        out.push_str("Write your reasoning explanation here. You can have line breaks.\n\n");
    } else {
        out.push_str("predict a numerical rating.\n\n");
        out.push_str("Please follow the format below:\n");
    }
    out.push_str(RATING_MARKER);
    out.push('\n');
    out.push_str("Give a single numerical rating, e.g. 1");
    out
}

/// Render the rating-prediction task prompt for an example.
///
/// One-shot mode prepends the exemplar as a fully worked demonstration,
/// separated from the real task by a delimiter line.
pub fn render_task_prompt(
    example: &Example,
    mode: &PromptMode,
    exemplar: Option<&Exemplar>,
) -> Result<RenderedPrompt, PromptError> {
    let words = domain_words(&example.domain_tag);
    let mut text = preamble(&words);
    text.push_str("\n\n");

    if mode.one_shot {
        let exemplar = exemplar.ok_or(PromptError::MissingExemplar)?;
        text.push_str(&input_sections(&exemplar.example, &words, mode));
        text.push('\n');
        text.push_str(SECTION_END);
        text.push_str("\n\n");
        text.push_str(REASON_MARKER);
        text.push('\n');
        text.push_str(exemplar.reasoning.trim());
        text.push_str("\n\n");
        text.push_str(RATING_MARKER);
        text.push('\n');
        text.push_str(&exemplar.example.truth_rating.to_string());
        text.push_str("\n\n");
        text.push_str(ONE_SHOT_DELIMITER);
        text.push_str("\n\n");
    }

    text.push_str(&input_sections(example, &words, mode));
    text.push('\n');
    text.push_str(SECTION_END);
    text.push_str("\n\n");
    text.push_str(&task_description(&words, mode));

    Ok(RenderedPrompt {
        text,
        mode: *mode,
        example_id: example.example_id.clone(),
    })
}

/// Render the post hoc explanation prompt: the ground-truth rating is stated
/// and the model is asked to explain it. There is no rating-prediction block.
pub fn render_posthoc_prompt(example: &Example) -> RenderedPrompt {
    let words = domain_words(&example.domain_tag);
    let mode = PromptMode::default();
    let mut text = preamble(&words);
    text.push_str("\n\n");
    text.push_str(&input_sections(example, &words, &mode));
    text.push('\n');
    text.push_str(SECTION_END);
    text.push_str("\n\n");
    text.push_str(&format!(
        "The user gave the new {} a rating of {}.\n\n",
        words.noun, example.truth_rating
    ));
    text.push_str(&format!(
        "Given the user's past {} history and the new item information, explain why the \
         user gave the new {} a rating of {}.\n\n",
        words.verb, words.noun, example.truth_rating
    ));
    text.push_str(
        "Your explanation should be based on any commonalities in the user history items \
         and inferred user tastes or preferences.\n\n",
    );
    text.push_str("Please follow the format below:\n");
    text.push_str(EXPLANATION_MARKER);
    text.push('\n');
    text.push_str("Write your explanation here. You can have line breaks.");

    RenderedPrompt {
        text,
        mode,
        example_id: example.example_id.clone(),
    }
}

/// Render the self-verification prompt: inputs plus a scrubbed explanation,
/// asking for a rating prediction. The ground-truth rating never appears.
pub fn render_verification_prompt(
    example: &Example,
    scrubbed_explanation: &str,
) -> Result<RenderedPrompt, PromptError> {
    if scrubbed_explanation.trim().is_empty() {
        return Err(PromptError::EmptyExplanation);
    }
    let words = domain_words(&example.domain_tag);
    let mode = PromptMode::rating_only();
    let mut text = preamble(&words);
    text.push_str("\n\n");
    text.push_str(&input_sections(example, &words, &PromptMode::default()));
    text.push('\n');
    text.push_str(EXPLANATION_BLOCK_HEADER);
    text.push('\n');
    text.push_str(scrubbed_explanation);
    text.push_str("\n\n");
    text.push_str(SECTION_END);
    text.push_str("\n\n");
    text.push_str(&format!(
        "Given the user's past {} history, the new item information, and the explanation \
         of the user's opinion, predict a numerical rating for the new {}.\n\n",
        words.verb, words.noun
    ));
    text.push_str("Please follow the format below:\n");
    text.push_str(RATING_MARKER);
    text.push('\n');
    text.push_str("Give a single numerical rating, e.g. 1");

    Ok(RenderedPrompt {
        text,
        mode,
        example_id: example.example_id.clone(),
    })
}
