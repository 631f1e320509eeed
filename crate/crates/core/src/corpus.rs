//! Corpus assembly: ingest raw review/metadata records, build per-user
//! prediction examples, filter by history length, and produce label-balanced,
//! user-disjoint train/test splits.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RATING_LABELS: [u8; 5] = [1, 2, 3, 4, 5];

/// Item metadata as carried by the source catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMetadata {
    pub item_id: String,
    pub title: String,
    pub brand: String,
    pub categories: Vec<String>,
    pub description: String,
    pub price: Option<f64>,
}

impl ItemMetadata {
    /// Placeholder metadata for items missing from the catalog.
    pub fn unknown(item_id: &str) -> Self {
        ItemMetadata {
            item_id: item_id.to_string(),
            title: String::new(),
            brand: String::new(),
            categories: Vec::new(),
            description: String::new(),
            price: None,
        }
    }
}

/// One past purchase: item metadata plus the user's rating and review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastPurchase {
    #[serde(flatten)]
    pub metadata: ItemMetadata,
    pub rating: u8,
    pub review: String,
}

/// A user's chronologically ordered purchase history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: String,
    pub purchases: Vec<PastPurchase>,
}

/// One rating-prediction instance: history, target item, and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub example_id: String,
    pub user_id: String,
    pub history: Vec<PastPurchase>,
    pub target: ItemMetadata,
    pub truth_rating: u8,
    pub truth_review: Option<String>,
    pub domain_tag: String,
}

impl Example {
    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// The example's history assembled as a standalone [`UserHistory`].
    pub fn user_history(&self) -> UserHistory {
        UserHistory {
            user_id: self.user_id.clone(),
            purchases: self.history.clone(),
        }
    }
}

/// Balanced split parameters. The same seed always yields the same split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub per_label_train: usize,
    pub per_label_test: usize,
    pub seed: u64,
}

/// Counts accumulated while ingesting raw records.
///
/// `malformed_count` covers every skipped review record; `missing_field_count`
/// and `out_of_range_count` break it down by cause.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub reviews_read: u64,
    pub malformed_count: u64,
    pub missing_field_count: u64,
    pub out_of_range_count: u64,
    pub unknown_item_count: u64,
    pub duplicate_target_dropped: u64,
    pub users_seen: u64,
    pub users_single_review: u64,
    pub examples_emitted: u64,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("history filter misconfigured: min {min} > max {max}")]
    BadHistoryFilter { min: usize, max: usize },
    #[error("insufficient examples for label {label} under user-disjointness")]
    InsufficientData { label: u8 },
    #[error("split spec counts must be positive")]
    BadSplitSpec,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Raw review record as found in the source dump, one JSON object per line.
#[derive(Debug, Deserialize)]
struct RawReview {
    #[serde(rename = "reviewerID")]
    reviewer_id: Option<String>,
    asin: Option<String>,
    overall: Option<f64>,
    #[serde(rename = "reviewText")]
    review_text: Option<String>,
    #[serde(rename = "unixReviewTime")]
    unix_review_time: Option<i64>,
}

/// Raw catalog record. Real dumps are inconsistent about the category field
/// name (`categories` vs `category`), its shape (flat list vs. list of
/// lists), `description` (string vs. list of strings), and `price` (number
/// vs. "$12.99").
#[derive(Debug, Deserialize)]
struct RawMetadata {
    asin: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    brand: Option<String>,
    #[serde(default, alias = "category")]
    categories: Option<RawCategories>,
    #[serde(default)]
    description: Option<RawDescription>,
    #[serde(default)]
    price: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawCategories {
    Flat(Vec<String>),
    Nested(Vec<Vec<String>>),
}

impl RawCategories {
    fn flatten(self) -> Vec<String> {
        match self {
            RawCategories::Flat(v) => v,
            RawCategories::Nested(vv) => vv.into_iter().flatten().collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawDescription {
    Text(String),
    Parts(Vec<String>),
}

impl RawDescription {
    fn join(self) -> String {
        match self {
            RawDescription::Text(s) => s,
            RawDescription::Parts(v) => v.join(" "),
        }
    }
}

fn parse_price(value: Option<serde_json::Value>) -> Option<f64> {
    match value? {
        serde_json::Value::Number(n) => n.as_f64().filter(|p| p.is_finite()),
        serde_json::Value::String(s) => s.trim().trim_start_matches('$').parse::<f64>().ok(),
        _ => None,
    }
}

/// Ingest review and metadata record streams into prediction examples.
///
/// Reviews are grouped per user and ordered by timestamp (ties broken by
/// source record order). The chronologically last purchase becomes the
/// prediction target; everything earlier forms the history. Records missing
/// user, item, or rating — or carrying a rating outside 1..5 — are skipped
/// and counted. Reviews of items absent from the catalog are joined with
/// empty metadata fields and counted.
pub fn ingest<R: BufRead, M: BufRead>(
    reviews: R,
    metadata: M,
    domain_tag: &str,
) -> Result<(Vec<Example>, IngestReport), CorpusError> {
    let mut report = IngestReport::default();

    let mut catalog: HashMap<String, ItemMetadata> = HashMap::new();
    for line in metadata.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawMetadata = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let Some(asin) = raw.asin.filter(|a| !a.is_empty()) else {
            continue;
        };
        let meta = ItemMetadata {
            item_id: asin.clone(),
            title: raw.title.unwrap_or_default(),
            brand: raw.brand.unwrap_or_default(),
            categories: raw.categories.map(RawCategories::flatten).unwrap_or_default(),
            description: raw.description.map(RawDescription::join).unwrap_or_default(),
            price: parse_price(raw.price),
        };
        catalog.insert(asin, meta);
    }

    struct PendingReview {
        item_id: String,
        rating: u8,
        review: Option<String>,
        timestamp: i64,
        source_index: u64,
    }

    // BTreeMap keeps user iteration order independent of hash state.
    let mut per_user: BTreeMap<String, Vec<PendingReview>> = BTreeMap::new();
    let mut source_index: u64 = 0;
    for line in reviews.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.reviews_read += 1;
        source_index += 1;
        let raw: RawReview = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(_) => {
                report.malformed_count += 1;
                report.missing_field_count += 1;
                continue;
            }
        };
        let (Some(user), Some(item), Some(overall)) = (
            raw.reviewer_id.filter(|u| !u.is_empty()),
            raw.asin.filter(|a| !a.is_empty()),
            raw.overall,
        ) else {
            report.malformed_count += 1;
            report.missing_field_count += 1;
            continue;
        };
        if overall.fract() != 0.0 || !(1.0..=5.0).contains(&overall) {
            report.malformed_count += 1;
            report.out_of_range_count += 1;
            continue;
        }
        per_user.entry(user).or_default().push(PendingReview {
            item_id: item,
            rating: overall as u8,
            review: raw.review_text,
            timestamp: raw.unix_review_time.unwrap_or(0),
            source_index,
        });
    }

    let mut examples = Vec::new();
    for (user_id, mut pending) in per_user {
        report.users_seen += 1;
        pending.sort_by_key(|p| (p.timestamp, p.source_index));
        if pending.len() < 2 {
            report.users_single_review += 1;
            continue;
        }
        let target = pending.pop().expect("len >= 2");
        let target_meta = match catalog.get(&target.item_id) {
            Some(m) => m.clone(),
            None => {
                report.unknown_item_count += 1;
                ItemMetadata::unknown(&target.item_id)
            }
        };
        let mut history = Vec::with_capacity(pending.len());
        for p in pending {
            if p.item_id == target.item_id {
                // The target must not also appear in the history.
                report.duplicate_target_dropped += 1;
                continue;
            }
            let meta = match catalog.get(&p.item_id) {
                Some(m) => m.clone(),
                None => {
                    report.unknown_item_count += 1;
                    ItemMetadata::unknown(&p.item_id)
                }
            };
            history.push(PastPurchase {
                metadata: meta,
                rating: p.rating,
                review: p.review.unwrap_or_default(),
            });
        }
        let example_id = format!("{user_id}:{}", target.item_id);
        examples.push(Example {
            example_id,
            user_id,
            history,
            target: target_meta,
            truth_rating: target.rating,
            truth_review: target.review,
            domain_tag: domain_tag.to_string(),
        });
        report.examples_emitted += 1;
    }

    Ok((examples, report))
}

/// Keep only examples whose history length lies in `[min, max]`.
pub fn filter_by_history(
    examples: Vec<Example>,
    min: usize,
    max: usize,
) -> Result<Vec<Example>, CorpusError> {
    if min > max {
        return Err(CorpusError::BadHistoryFilter { min, max });
    }
    Ok(examples
        .into_iter()
        .filter(|e| (min..=max).contains(&e.history_len()))
        .collect())
}

/// Produce a label-balanced, user-disjoint train/test split.
///
/// Users are shuffled by the seed, then assigned whole to the test side until
/// every per-label test quota fills; remaining users form the train pool from
/// which per-label train quotas are drawn. No user appears in both splits,
/// and an identical seed reproduces the split exactly.
pub fn balanced_split(
    examples: &[Example],
    spec: &SplitSpec,
) -> Result<(Vec<Example>, Vec<Example>), CorpusError> {
    if spec.per_label_train == 0 || spec.per_label_test == 0 {
        return Err(CorpusError::BadSplitSpec);
    }

    let mut by_user: BTreeMap<&str, Vec<&Example>> = BTreeMap::new();
    for ex in examples {
        by_user.entry(ex.user_id.as_str()).or_default().push(ex);
    }
    let mut users: Vec<&str> = by_user.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    users.shuffle(&mut rng);

    let label_index = |rating: u8| (rating - 1) as usize;

    let mut test_need = [spec.per_label_test; 5];
    let mut test: Vec<Example> = Vec::new();
    let mut train_pool_users: Vec<&str> = Vec::new();

    for user in &users {
        if test_need.iter().all(|&n| n == 0) {
            train_pool_users.push(user);
            continue;
        }
        let exs = &by_user[user];
        let mut demand = [0usize; 5];
        for ex in exs {
            demand[label_index(ex.truth_rating)] += 1;
        }
        let fits = demand.iter().zip(test_need.iter()).all(|(d, n)| d <= n);
        if fits {
            for ex in exs {
                test_need[label_index(ex.truth_rating)] -= 1;
                test.push((*ex).clone());
            }
        } else {
            train_pool_users.push(user);
        }
    }
    if let Some(label) = test_need.iter().position(|&n| n > 0) {
        return Err(CorpusError::InsufficientData {
            label: (label + 1) as u8,
        });
    }

    let mut train_need = [spec.per_label_train; 5];
    let mut train: Vec<Example> = Vec::new();
    for user in &train_pool_users {
        if train_need.iter().all(|&n| n == 0) {
            break;
        }
        for ex in &by_user[user] {
            let li = label_index(ex.truth_rating);
            if train_need[li] > 0 {
                train_need[li] -= 1;
                train.push((*ex).clone());
            }
        }
    }
    if let Some(label) = train_need.iter().position(|&n| n > 0) {
        return Err(CorpusError::InsufficientData {
            label: (label + 1) as u8,
        });
    }

    Ok((train, test))
}

/// Serialize examples as one JSON object per line.
pub fn examples_to_jsonl(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    out
}

/// Parse examples from line-delimited JSON produced by [`examples_to_jsonl`].
pub fn examples_from_jsonl(data: &str) -> Result<Vec<Example>, serde_json::Error> {
    data.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
