//! Shared fixtures for CLI integration tests: a synthetic review corpus with
//! enough per-label supply to satisfy balanced splits.

use std::fmt::Write as _;
use std::path::Path;

/// Write `reviews.jsonl` and `meta.jsonl` under `dir`. Each user reviews
/// `4 + (u % 5)` history items plus one target whose rating cycles through
/// the labels, so every label has `users_per_label` candidate examples.
pub fn write_corpus_fixture(dir: &Path, users_per_label: usize) -> (String, String) {
    let mut reviews = String::new();
    let mut meta = String::new();
    let mut item_counter = 0usize;

    for label in 1..=5u8 {
        for u in 0..users_per_label {
            let user = format!("user_{label}_{u}");
            let history_len = 4 + (u % 5); // 4..=8, inside the 4..=10 filter
            for h in 0..=history_len {
                let item = format!("item_{item_counter}");
                item_counter += 1;
                let is_target = h == history_len;
                let rating = if is_target { label } else { 1 + ((u + h) % 5) as u8 };
                let _ = writeln!(
                    reviews,
                    "{}",
                    serde_json::json!({
                        "reviewerID": user,
                        "asin": item,
                        "overall": rating as f64,
                        "reviewText": format!(
                            "Review {h} from {user}. Works well and matches my taste."
                        ),
                        "unixReviewTime": 1_000_000 + h as i64,
                    })
                );
                let _ = writeln!(
                    meta,
                    "{}",
                    serde_json::json!({
                        "asin": item,
                        "title": format!("Product {item}"),
                        "brand": format!("Brand{}", u % 3),
                        "categories": ["Beauty", "Care"],
                        "description": format!("Description of {item}."),
                        "price": 5.0 + (u % 20) as f64,
                    })
                );
            }
        }
    }

    let reviews_path = dir.join("reviews.jsonl");
    let meta_path = dir.join("meta.jsonl");
    std::fs::write(&reviews_path, reviews).unwrap();
    std::fs::write(&meta_path, meta).unwrap();
    (
        reviews_path.to_string_lossy().into_owned(),
        meta_path.to_string_lossy().into_owned(),
    )
}

/// A config file pointing at the fixture, mock backend, small quotas.
pub fn write_config(
    dir: &Path,
    reviews: &str,
    metadata: &str,
    per_label_train: usize,
    per_label_test: usize,
    m: usize,
    n: usize,
) -> std::path::PathBuf {
    let config = format!(
        r#"domain_tag = "beauty"

[paths]
reviews = "{reviews}"
metadata = "{metadata}"

[split]
per_label_train = {per_label_train}
per_label_test = {per_label_test}
seed = 42

[backend]
kind = "mock"
seed = 7
parallelism = 4
max_tokens = 256

[sampling]
m = {m}
n = {n}
temperature = 0.7
"#
    );
    let path = dir.join("recsaver.toml");
    std::fs::write(&path, config).unwrap();
    path
}

pub fn recsaver_bin() -> &'static str {
    env!("CARGO_BIN_EXE_recsaver")
}
