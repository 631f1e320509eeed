//! Acceptance: end-to-end determinism. The full pipeline on the mock backend
//! with a fixed seed must produce byte-identical run directories across two
//! independent runs, within the runtime budget.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{recsaver_bin, write_config, write_corpus_fixture};

fn run_all(config: &Path, run_root: &Path, run_id: &str) {
    for sub in [
        "ingest",
        "split",
        "predict",
        "gen-refs",
        "score-reasoning",
        "export-ft",
        "report",
    ] {
        let out = Command::new(recsaver_bin())
            .arg("--config")
            .arg(config)
            .arg("--run-root")
            .arg(run_root)
            .arg("--run-id")
            .arg(run_id)
            .arg(sub)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "{sub} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        assert!(entry.file_type().unwrap().is_file(), "run dirs are flat");
        out.insert(
            entry.file_name().to_string_lossy().into_owned(),
            std::fs::read(entry.path()).unwrap(),
        );
    }
    out
}

#[test]
fn criterion_9_end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    // 15 train + 5 test per label = 100 examples total, M = N = 4.
    let (reviews, meta) = write_corpus_fixture(dir.path(), 25);
    let config = write_config(dir.path(), &reviews, &meta, 15, 5, 4, 4);

    let start = Instant::now();
    let root_a = dir.path().join("runs_a");
    let root_b = dir.path().join("runs_b");
    run_all(&config, &root_a, "e2e");
    run_all(&config, &root_b, "e2e");
    let elapsed = start.elapsed();

    let a = dir_contents(&root_a.join("e2e"));
    let b = dir_contents(&root_b.join("e2e"));
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "file sets differ"
    );
    for (name, bytes) in &a {
        assert_eq!(bytes, &b[name], "file {name} differs between runs");
    }
    // Both runs, each a full pipeline, inside the two-minute budget.
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "two full runs took {elapsed:?}"
    );
    println!("ACCEPTANCE 9 (end-to-end determinism): PASS");
}
