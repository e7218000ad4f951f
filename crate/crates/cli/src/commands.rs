//! Subcommand bodies. Each writes machine-readable files under its output
//! directory and returns a human-readable summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use pointsup_core::annosim::{
    generate_scene, rate_report, simulate_point_tallied, simulate_squiggle_tallied, AnnotationEvent, PointTask,
    RateRow, Scene, SceneConfig, SimTally, TaskKind,
};
use pointsup_core::budget::{fixed_budget_plan, hybrid_time, reported_time, round_tenth, annotation_time, BudgetModel};
use pointsup_core::eval::IouReport;
use pointsup_core::experiment::{build_dataset, run_regime, Dataset, Regime, RegimeBase, SIM_ANNOTATOR};
use pointsup_core::model::{decode_checkpoint, encode_checkpoint};
use pointsup_core::rng::derive_seed;
use pointsup_core::seg::ClassCatalog;
use pointsup_core::supervision::SupervisionKind;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset_dir::{events_to_jsonl, read_dataset, read_manifest, read_scene, write_dataset};
use crate::service::{self, init_queue, Queue};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn dataset_path(cfg: &ExperimentConfig) -> Result<Option<&Path>> {
    match &cfg.dataset {
        Some(d) if !d.join("dataset.json").is_file() => {
            bail!("dataset path {} does not hold a dataset (no dataset.json)", d.display())
        }
        d => Ok(d.as_deref()),
    }
}

/// The configured dataset directory, or a freshly generated benchmark.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let data = match dataset_path(cfg)? {
        Some(d) => read_dataset(d)?,
        None => build_dataset(&cfg.benchmark, seed)?,
    };
    let expected = cfg.benchmark.model_shape()?.num_classes;
    if data.catalog.num_classes() != expected {
        bail!(
            "dataset has {} classes but benchmark.scene configures {expected}",
            data.catalog.num_classes()
        );
    }
    Ok(data)
}

/// Catalog and train/test scenes without annotations or priors. Generated
/// scenes match [`build_dataset`] for the same seed.
pub fn load_scenes(cfg: &ExperimentConfig, seed: u64) -> Result<(ClassCatalog, Vec<Scene>, Vec<Scene>)> {
    if let Some(d) = dataset_path(cfg)? {
        let m = read_manifest(d)?;
        let read = |ids: &[String]| ids.iter().map(|id| read_scene(d, id)).collect::<Result<Vec<_>>>();
        return Ok((m.catalog, read(&m.train)?, read(&m.test)?));
    }
    cfg.benchmark.validate()?;
    let b = &cfg.benchmark;
    let scene_cfg = SceneConfig { seed: derive_seed(seed, "scenes", 0), ..b.scene.clone() };
    let all = (0..(b.n_train + b.n_test) as u64).map(|i| generate_scene(&scene_cfg, i)).collect::<Result<Vec<_>, _>>()?;
    let (train, test) = all.split_at(b.n_train);
    Ok((scene_cfg.catalog()?, train.to_vec(), test.to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub regime: Regime,
    pub seed: u64,
    pub report: IouReport,
}

pub fn datagen(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<String> {
    let data = build_dataset(&cfg.benchmark, seed)?;
    write_dataset(out, &data)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    Ok(format!(
        "wrote {} training and {} test scenes ({} classes) to {}\n",
        data.train.len(),
        data.test.len(),
        data.catalog.num_classes(),
        out.display()
    ))
}

/// Trains the configured regime and scores it on the test split. Writes
/// `model.psck`, `loss_history.csv` and `metrics.json`.
pub fn train(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(Metrics, String)> {
    let data = load_dataset(cfg, seed)?;
    let result = run_regime(&cfg.benchmark, &data, cfg.supervision, seed)?;
    let params = result.params.as_ref().expect("training returns parameters");
    fs::create_dir_all(out)?;
    fs::write(out.join("model.psck"), encode_checkpoint(params))?;
    let mut w = csv::Writer::from_path(out.join("loss_history.csv"))?;
    w.write_record(["iteration", "loss"])?;
    for (i, loss) in result.loss_history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{loss:.9e}")])?;
    }
    w.flush()?;
    let metrics = Metrics { regime: cfg.supervision, seed, report: result.report };
    write_json(&out.join("metrics.json"), &metrics)?;
    let table = metrics.report.table(&data.catalog, &cfg.supervision.to_string());
    Ok((metrics, table))
}

/// Scores a checkpoint on the test split and writes `eval.json`.
pub fn eval(cfg: &ExperimentConfig, seed: u64, checkpoint: &Path, out: &Path) -> Result<(Metrics, String)> {
    let bytes = fs::read(checkpoint).with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    let params = decode_checkpoint(&bytes).with_context(|| format!("decoding {}", checkpoint.display()))?;
    let data = load_dataset(cfg, seed)?;
    if params.shape.num_classes != data.catalog.num_classes() {
        bail!(
            "checkpoint predicts {} classes but the dataset has {}",
            params.shape.num_classes,
            data.catalog.num_classes()
        );
    }
    let report = data.evaluate(&params)?;
    fs::create_dir_all(out)?;
    let metrics = Metrics { regime: cfg.supervision, seed, report };
    write_json(&out.join("eval.json"), &metrics)?;
    let table = metrics.report.table(&data.catalog, &checkpoint.file_name().unwrap_or_default().to_string_lossy());
    Ok((metrics, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub kind: String,
    pub exact_seconds: f64,
    /// Per-image time at 0.1 s, as used for planning.
    pub seconds_per_image: f64,
    pub images: Option<u64>,
}

pub const DEFAULT_BUDGET_KINDS: [&str; 10] = [
    "IMAGE_LEVEL",
    "IMAGE_LEVEL+OBJ",
    "POINTS_1",
    "POINTS_1+OBJ",
    "POINTS_ALL",
    "POINTS_ALL+OBJ",
    "SQUIGGLES",
    "SQUIGGLES+OBJ",
    "FULL",
    "HYBRID",
];

/// Per-image times and, given a budget, image counts. `HYBRID` mixes
/// `hybrid_split.0` full images with `hybrid_split.1` one-point images.
pub fn budget(
    model: &BudgetModel,
    kinds: &[String],
    budget_seconds: Option<f64>,
    hybrid_split: (u64, u64),
) -> Result<Vec<BudgetRow>> {
    if let Some(b) = budget_seconds {
        if !(b >= 0.0 && b.is_finite()) {
            bail!("budget must be a non-negative number of seconds, got {b}");
        }
    }
    kinds
        .iter()
        .map(|name| {
            let regime: Regime = name.parse()?;
            let kind = match regime.base {
                RegimeBase::Hybrid => None,
                RegimeBase::Full => Some(SupervisionKind::Full),
                RegimeBase::ImageLevel => Some(SupervisionKind::ImageLevel),
                RegimeBase::Points1 => Some(SupervisionKind::Points1),
                RegimeBase::PointsAll => Some(SupervisionKind::PointsAll),
                RegimeBase::Squiggles => Some(SupervisionKind::Squiggles),
            };
            let (exact, reported) = match kind {
                Some(k) => (annotation_time(k, regime.objectness, model)?, reported_time(k, regime.objectness, model)?),
                None => {
                    let t = hybrid_time(hybrid_split.0, hybrid_split.1, model)?;
                    (t, round_tenth(t))
                }
            };
            let images = match (budget_seconds, kind) {
                (None, _) => None,
                (Some(0.0), _) => Some(0),
                (Some(b), Some(k)) => Some(fixed_budget_plan(b, k, regime.objectness, model)?),
                (Some(b), None) => Some((b / reported + 1e-9).floor() as u64),
            };
            Ok(BudgetRow { kind: regime.to_string(), exact_seconds: exact, seconds_per_image: reported, images })
        })
        .collect()
}

pub fn budget_table(rows: &[BudgetRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>10} {:>10} {:>10}", "kind", "exact s", "s/image", "images");
    for r in rows {
        let images = r.images.map_or("-".to_string(), |n| n.to_string());
        let _ = writeln!(out, "{:<16} {:>10.2} {:>10.1} {:>10}", r.kind, r.exact_seconds, r.seconds_per_image, images);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub images: usize,
    pub rates: Vec<RateRow>,
}

/// Runs all three simulated annotators over the training scenes. Writes
/// `annotations/<task>.jsonl` and `rates.json`.
pub fn simulate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(SimulateReport, String)> {
    let (catalog, train, _) = load_scenes(cfg, seed)?;
    if train.is_empty() {
        bail!("empty dataset: no training scenes to annotate");
    }
    let profile = &cfg.benchmark.profile;
    let sim_seed = derive_seed(seed, "annotators", 0);
    let mut events: [Vec<AnnotationEvent>; 3] = Default::default();
    let mut tallies: Vec<(TaskKind, SimTally)> = Vec::new();
    for s in &train {
        for task in TaskKind::ALL {
            let (e, t) = match task {
                TaskKind::Point | TaskKind::AllPoints => {
                    let pt = if task == TaskKind::Point { PointTask::OnePerClass } else { PointTask::AllInstances };
                    simulate_point_tallied(&s.id, &s.mask, &catalog, profile, pt, SIM_ANNOTATOR, sim_seed)?
                }
                TaskKind::Squiggle => simulate_squiggle_tallied(&s.id, &s.mask, &catalog, profile, SIM_ANNOTATOR, sim_seed)?,
            };
            events[task as usize].push(e);
            tallies.push((task, t));
        }
    }
    fs::create_dir_all(out.join("annotations"))?;
    for task in TaskKind::ALL {
        fs::write(out.join("annotations").join(format!("{task}.jsonl")), events_to_jsonl(&events[task as usize]))?;
    }
    let report = SimulateReport {
        seed,
        images: train.len(),
        rates: rate_report(profile, tallies.iter().map(|(k, t)| (*k, t))),
    };
    write_json(&out.join("rates.json"), &report)?;
    let mut table = String::new();
    let _ = writeln!(table, "{:<22} {:>8} {:>9} {:>8} {:>6}", "rate", "target", "observed", "trials", "3sd");
    for r in &report.rates {
        let _ = writeln!(
            table,
            "{:<22} {:>7.2}% {:>8.2}% {:>8} {:>6}",
            r.name,
            100.0 * r.target,
            100.0 * r.rate,
            r.trials,
            if r.within_3sd { "ok" } else { "OUT" }
        );
    }
    Ok((report, table))
}

/// Opens the queue in `out`, creating it from the configured scenes first if
/// needed: training scenes become ordinary tasks, test scenes planted ones.
pub fn open_queue(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Queue> {
    if !out.join("queue.json").exists() {
        let (catalog, train, test) = load_scenes(cfg, seed)?;
        fs::create_dir_all(out)?;
        let q = init_queue(out, &catalog, &train, &test, &cfg.serve, seed)?;
        log::info!("initialized queue with {} tasks in {}", q.tasks.len(), out.display());
    }
    Queue::open(out, Duration::from_secs(cfg.serve.lease_secs))
}

pub fn serve(cfg: &ExperimentConfig, seed: u64, out: &Path, port: u16) -> Result<()> {
    let queue = Arc::new(Mutex::new(open_queue(cfg, seed, out)?));
    let addr = format!("{}:{port}", cfg.serve.host);
    tokio::runtime::Runtime::new()?.block_on(service::serve(queue, &addr))
}
