use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pointsup_cli::commands::{BudgetRow, Metrics, SimulateReport};
use pointsup_cli::config::ExperimentConfig;

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointsup")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn failure(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

/// Relative path to bytes for every file under `dir`.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL: &str = r#"
[benchmark]
n_train = 40
n_test = 10
[benchmark.train]
batch_size = 5
iterations = 20
"#;

#[test]
fn bundled_benchmark_config_is_the_default() {
    let cfg = ExperimentConfig::load(Some(&repo_file("configs/benchmark.toml"))).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    ExperimentConfig::load(Some(&repo_file("configs/quick.toml"))).unwrap();
}

#[test]
fn budget_default_table_shows_published_times() {
    let table = ok(&["budget"]);
    for t in ["20.0", "22.1", "23.3", "34.9", "239.7", "24.5"] {
        assert!(table.contains(t), "{t} missing from\n{table}");
    }
}

#[test]
fn budget_counts_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    ok(&["budget", "--budget", "214814.6", "--out", &out]);
    let rows: Vec<BudgetRow> = serde_json::from_slice(&fs::read(dir.path().join("budget.json")).unwrap()).unwrap();
    let count = |k: &str| rows.iter().find(|r| r.kind == k).unwrap().images.unwrap() as f64;
    for (kind, published) in [("FULL", 883.0), ("IMAGE_LEVEL+OBJ", 10582.0), ("SQUIGGLES+OBJ", 6064.0), ("POINTS_1+OBJ", 9576.0)] {
        let rel = (count(kind) - published).abs() / published;
        assert!(rel <= 0.02, "{kind}: {} vs {published}", count(kind));
    }
    assert_eq!(count("IMAGE_LEVEL+OBJ"), 10582.0);
}

#[test]
fn budget_zero_and_bad_kinds() {
    let table = ok(&["budget", "--budget", "0"]);
    for line in table.lines().skip(1) {
        assert!(line.trim_end().ends_with(" 0"), "{line}");
    }
    assert!(failure(&["budget", "--kinds", "POINTS_3"]).contains("POINTS_3"));
    failure(&["budget", "--budget", "-5"]);
}

#[test]
fn config_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o").display().to_string();
    let cfg = write_config(dir.path(), "dataset = \"nowhere\"\n");
    assert!(failure(&["train", "--config", &cfg, "--out", &out]).contains("nowhere"));
    let cfg = write_config(dir.path(), "[benchmark.train]\nlearning_rte = 1.0\n");
    assert!(failure(&["train", "--config", &cfg, "--out", &out]).contains("learning_rte"));
    failure(&["train", "--config", "/no/such/file.toml", "--out", &out]);
    // No output directory anywhere.
    failure(&["datagen"]);
}

#[test]
fn datagen_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["datagen", "--config", &cfg, "--seed", "5", "--out", &a.display().to_string()]);
    ok(&["datagen", "--config", &cfg, "--seed", "5", "--out", &b.display().to_string()]);
    let ta = tree(&a);
    assert!(ta.len() > 100);
    assert_eq!(ta, tree(&b));
    let c = dir.path().join("c");
    ok(&["datagen", "--config", &cfg, "--seed", "6", "--out", &c.display().to_string()]);
    assert_ne!(ta, tree(&c));

    // Training from the directory matches training on the regenerated set.
    let from_dir = write_config(dir.path(), &format!("dataset = \"a\"\n{SMALL}"));
    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    ok(&["train", "--config", &from_dir, "--seed", "5", "--out", &r1.display().to_string()]);
    ok(&["train", "--config", &cfg, "--seed", "5", "--out", &r2.display().to_string()]);
    assert_eq!(tree(&r1), tree(&r2));
}

#[test]
fn train_is_deterministic_and_eval_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let table = ok(&["train", "--config", &cfg, "--out", &a.display().to_string()]);
    assert!(table.contains("mIOU") && table.contains("POINTS_1+OBJ"));
    ok(&["train", "--config", &cfg, "--out", &b.display().to_string()]);
    let ta = tree(&a);
    assert_eq!(ta.keys().cloned().collect::<Vec<_>>(), ["loss_history.csv", "metrics.json", "model.psck"]);
    assert_eq!(ta, tree(&b));
    let csv = String::from_utf8(ta["loss_history.csv"].clone()).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.starts_with("iteration,loss\n1,"));

    let a_s = a.display().to_string();
    ok(&["eval", "--config", &cfg, "--out", &a_s]);
    let trained: Metrics = serde_json::from_slice(&ta["metrics.json"]).unwrap();
    let evaluated: Metrics = serde_json::from_slice(&fs::read(a.join("eval.json")).unwrap()).unwrap();
    assert_eq!(trained.report, evaluated.report);

    fs::write(dir.path().join("junk.psck"), b"PSCK\x01junk").unwrap();
    let junk = dir.path().join("junk.psck").display().to_string();
    assert!(failure(&["eval", "--config", &cfg, "--out", &a_s, "--checkpoint", &junk]).contains("checkpoint"));
}

#[test]
fn points_with_objectness_beat_image_level_on_the_quick_config() {
    let dir = tempfile::tempdir().unwrap();
    let quick = repo_file("configs/quick.toml").display().to_string();
    let miou = |regime: &str| {
        let text = fs::read_to_string(&quick).unwrap().replace("POINTS_1+OBJ", regime);
        let cfg = write_config(dir.path(), &text);
        let out = dir.path().join(regime);
        ok(&["train", "--config", &cfg, "--seed", "0", "--out", &out.display().to_string()]);
        let m: Metrics = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
        m.report.mean_iou
    };
    let (points, image) = (miou("POINTS_1+OBJ"), miou("IMAGE_LEVEL"));
    assert!(points > image, "{points} vs {image}");
}

#[test]
fn simulate_writes_events_and_rates_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[benchmark]\nn_train = 400\nn_test = 1\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let table = ok(&["simulate", "--config", &cfg, "--out", &a.display().to_string()]);
    assert!(table.contains("point_wrong_class"));
    ok(&["simulate", "--config", &cfg, "--out", &b.display().to_string()]);
    let ta = tree(&a);
    assert_eq!(ta, tree(&b));
    let report: SimulateReport = serde_json::from_slice(&ta["rates.json"]).unwrap();
    assert_eq!(report.images, 400);
    for r in &report.rates {
        assert!(r.trials > 0, "{}", r.name);
        assert!(r.within_3sd, "{} at {} vs target {}", r.name, r.rate, r.target);
    }
    let points = String::from_utf8(ta["annotations/point.jsonl"].clone()).unwrap();
    assert_eq!(points.lines().count(), 400);

    let empty = write_config(dir.path(), "[benchmark]\nn_train = 0\n");
    assert!(failure(&["simulate", "--config", &empty, "--out", &a.display().to_string()]).contains("empty dataset"));
}
