//! Synthetic benchmark: build a dataset once, train one model per
//! supervision regime, and score each on held-out scenes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annosim::{
    generate_scene, simulate_point_annotator, simulate_squiggle_annotator, AnnotationEvent, AnnotatorProfile,
    PointTask, Scene, SceneConfig, TaskKind,
};
use crate::error::{Error, Result};
use crate::eval::{Confusion, IouReport};
use crate::model::{forward, init_params, train, FloatImage, ModelParams, ModelShape, TrainConfig, TrainSample};
use crate::objectness::{oracle_scorer, prior_from_windows, ObjectnessMap, PriorOptions, ScoredWindow, WindowSampling};
use crate::rng::derive_seed;
use crate::seg::{predict, softmax, ClassCatalog, IGNORE};
use crate::supervision::{compose_hybrid, derive_image_labels, SupervisionRecord, WeightScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RegimeBase {
    Full,
    /// A fraction of images fully annotated, the rest with one point per class.
    Hybrid,
    ImageLevel,
    Points1,
    PointsAll,
    Squiggles,
}

/// A supervision regime, optionally with the objectness term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Regime {
    pub base: RegimeBase,
    pub objectness: bool,
}

impl Regime {
    pub const fn new(base: RegimeBase, objectness: bool) -> Self {
        Regime { base, objectness }
    }

    pub const FULL: Regime = Regime::new(RegimeBase::Full, false);
    pub const HYBRID: Regime = Regime::new(RegimeBase::Hybrid, true);
    pub const POINTS_1_OBJ: Regime = Regime::new(RegimeBase::Points1, true);
    pub const POINTS_1: Regime = Regime::new(RegimeBase::Points1, false);
    pub const IMAGE_LEVEL_OBJ: Regime = Regime::new(RegimeBase::ImageLevel, true);
    pub const IMAGE_LEVEL: Regime = Regime::new(RegimeBase::ImageLevel, false);

    /// Strongest to weakest, the order the benchmark checks.
    pub const LADDER: [Regime; 6] = [
        Regime::FULL,
        Regime::HYBRID,
        Regime::POINTS_1_OBJ,
        Regime::POINTS_1,
        Regime::IMAGE_LEVEL_OBJ,
        Regime::IMAGE_LEVEL,
    ];
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.base {
            RegimeBase::Full => "FULL",
            RegimeBase::Hybrid => "HYBRID",
            RegimeBase::ImageLevel => "IMAGE_LEVEL",
            RegimeBase::Points1 => "POINTS_1",
            RegimeBase::PointsAll => "POINTS_ALL",
            RegimeBase::Squiggles => "SQUIGGLES",
        };
        if self.objectness && self.base != RegimeBase::Full {
            write!(f, "{base}+OBJ")
        } else {
            f.write_str(base)
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let (base, objectness) = match upper.strip_suffix("+OBJ") {
            Some(b) => (b, true),
            None => (upper.as_str(), false),
        };
        let base = match base {
            "FULL" => RegimeBase::Full,
            "HYBRID" => RegimeBase::Hybrid,
            "IMAGE_LEVEL" => RegimeBase::ImageLevel,
            "POINTS_1" => RegimeBase::Points1,
            "POINTS_ALL" => RegimeBase::PointsAll,
            "SQUIGGLES" => RegimeBase::Squiggles,
            _ => return Err(Error::UnsupportedKind(s.to_string())),
        };
        if base == RegimeBase::Full && objectness {
            return Err(Error::Config("FULL supervision takes no objectness term".into()));
        }
        Ok(Regime { base, objectness })
    }
}

impl Serialize for Regime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Regime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectnessSettings {
    pub n_windows: usize,
    /// Gaussian noise on each window's ground-truth object fraction.
    pub noise_sd: f64,
    pub sampling: WindowSampling,
    pub lambda_obj: f64,
}

impl Default for ObjectnessSettings {
    fn default() -> Self {
        // Large noisy windows keep the prior coarse: a sharp oracle would
        // localise objects nearly as well as clicks do.
        ObjectnessSettings {
            n_windows: 300,
            noise_sd: 0.2,
            sampling: WindowSampling { min_frac: 0.2, max_frac: 0.8 },
            lambda_obj: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSettings {
    pub features: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        NetworkSettings { features: 8, kernel: 5, stride: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub scene: SceneConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub network: NetworkSettings,
    pub train: TrainConfig,
    pub profile: AnnotatorProfile,
    pub objectness: ObjectnessSettings,
    /// Share of training images that keep full masks in the hybrid regime.
    pub hybrid_full_fraction: f64,
    /// Fully annotated images are weighted `scale / labeled pixels`; `None`
    /// keeps the plain pixel sum. The pixel loss sums over pixels while point
    /// weights sum to one, so unscaled masks swamp a mixed batch.
    pub mask_loss_scale: Option<f64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            scene: SceneConfig::default(),
            n_train: 200,
            n_test: 50,
            network: NetworkSettings::default(),
            train: TrainConfig { batch_size: 10, iterations: 1000, ..TrainConfig::default() },
            profile: AnnotatorProfile::default(),
            objectness: ObjectnessSettings::default(),
            hybrid_full_fraction: 0.05,
            mask_loss_scale: Some(100.0),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.train.validate()?;
        self.profile.validate()?;
        self.model_shape()?.validate()?;
        if self.train.lambda_obj != 0.0 {
            return Err(Error::Config("set objectness.lambda_obj; train.lambda_obj is chosen per regime".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::EmptyDataset);
        }
        if let Some(s) = self.mask_loss_scale.filter(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("mask_loss_scale must be positive, got {s}")));
        }
        if !(0.0..=1.0).contains(&self.hybrid_full_fraction) {
            return Err(Error::Config(format!("hybrid_full_fraction {} outside [0,1]", self.hybrid_full_fraction)));
        }
        Ok(())
    }

    pub fn model_shape(&self) -> Result<ModelShape> {
        let n = self.scene.catalog()?.num_classes();
        Ok(ModelShape {
            features: self.network.features,
            kernel: self.network.kernel,
            num_classes: n,
            stride: self.network.stride,
        })
    }
}

/// Inputs to [`Dataset::from_parts`]; annotation lists and windows align
/// with `train`.
#[derive(Debug, Clone)]
pub struct DatasetParts {
    pub catalog: ClassCatalog,
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
    pub point_events: Vec<AnnotationEvent>,
    pub all_point_events: Vec<AnnotationEvent>,
    pub squiggle_events: Vec<AnnotationEvent>,
    pub windows: Vec<Vec<ScoredWindow>>,
}

/// Everything regime runs share: scenes, simulated annotations and priors.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub catalog: ClassCatalog,
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
    pub point_events: Vec<AnnotationEvent>,
    pub all_point_events: Vec<AnnotationEvent>,
    pub squiggle_events: Vec<AnnotationEvent>,
    /// Scored objectness windows per training scene.
    pub windows: Vec<Vec<ScoredWindow>>,
    pub priors: Vec<ObjectnessMap>,
    train_images: Vec<FloatImage>,
    test_images: Vec<FloatImage>,
}

pub const SIM_ANNOTATOR: &str = "sim-0";

/// Scenes `0..n_train` train, the next `n_test` test. Deterministic in `seed`.
pub fn build_dataset(cfg: &BenchmarkConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let scene_cfg = SceneConfig { seed: derive_seed(seed, "scenes", 0), ..cfg.scene.clone() };
    let catalog = scene_cfg.catalog()?;
    let total = (cfg.n_train + cfg.n_test) as u64;
    let scenes: Vec<Scene> = (0..total).into_par_iter().map(|i| generate_scene(&scene_cfg, i)).collect::<Result<_>>()?;
    let (train, test) = scenes.split_at(cfg.n_train);
    let sim_seed = derive_seed(seed, "annotators", 0);
    let events = |task: Option<PointTask>| -> Result<Vec<AnnotationEvent>> {
        train
            .par_iter()
            .map(|s| match task {
                Some(t) => simulate_point_annotator(&s.id, &s.mask, &catalog, &cfg.profile, t, SIM_ANNOTATOR, sim_seed),
                None => simulate_squiggle_annotator(&s.id, &s.mask, &catalog, &cfg.profile, SIM_ANNOTATOR, sim_seed),
            })
            .collect()
    };
    let o = &cfg.objectness;
    let windows = train
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            oracle_scorer(&s.mask, &catalog, o.noise_sd, o.n_windows, &o.sampling, derive_seed(seed, "windows", i as u64))
        })
        .collect::<Result<_>>()?;
    Dataset::from_parts(DatasetParts {
        point_events: events(Some(PointTask::OnePerClass))?,
        all_point_events: events(Some(PointTask::AllInstances))?,
        squiggle_events: events(None)?,
        catalog,
        train: train.to_vec(),
        test: test.to_vec(),
        windows,
    })
}

impl Dataset {
    /// Checks alignment and image sizes, then derives priors from the windows.
    pub fn from_parts(p: DatasetParts) -> Result<Dataset> {
        if p.train.is_empty() || p.test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for s in p.train.iter().chain(&p.test) {
            s.mask.validate(p.catalog.num_classes())?;
            if (s.image.width(), s.image.height()) != (s.mask.width(), s.mask.height()) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{}x{} image for {}", s.mask.width(), s.mask.height(), s.id),
                    actual: format!("{}x{}", s.image.width(), s.image.height()),
                });
            }
        }
        let lists = [
            (&p.point_events, TaskKind::Point),
            (&p.all_point_events, TaskKind::AllPoints),
            (&p.squiggle_events, TaskKind::Squiggle),
        ];
        for (events, task) in lists {
            if events.len() != p.train.len() {
                return Err(Error::InvalidRecord(format!(
                    "{} {task} events for {} training scenes",
                    events.len(),
                    p.train.len()
                )));
            }
            for (e, s) in events.iter().zip(&p.train) {
                if e.image_id != s.id || e.task != task {
                    return Err(Error::InvalidRecord(format!(
                        "event {:?} ({}) out of place; expected {:?} ({task})",
                        e.image_id, e.task, s.id
                    )));
                }
                e.validate(s.mask.width(), s.mask.height(), &p.catalog)?;
            }
        }
        if p.windows.len() != p.train.len() {
            return Err(Error::InvalidRecord(format!(
                "{} window lists for {} training scenes",
                p.windows.len(),
                p.train.len()
            )));
        }
        let priors = p
            .windows
            .par_iter()
            .zip(&p.train)
            .map(|(w, s)| prior_from_windows(w, s.mask.width(), s.mask.height(), &PriorOptions::default()))
            .collect::<Result<_>>()?;
        Ok(Dataset {
            train_images: p.train.iter().map(|s| FloatImage::from_rgb(&s.image)).collect(),
            test_images: p.test.iter().map(|s| FloatImage::from_rgb(&s.image)).collect(),
            catalog: p.catalog,
            train: p.train,
            test: p.test,
            point_events: p.point_events,
            all_point_events: p.all_point_events,
            squiggle_events: p.squiggle_events,
            windows: p.windows,
            priors,
        })
    }

    fn event_records(&self, events: &[AnnotationEvent]) -> Result<Vec<SupervisionRecord>> {
        events
            .iter()
            .zip(&self.train)
            .map(|(e, s)| e.to_record(s.mask.width(), s.mask.height(), &self.catalog))
            .collect()
    }

    fn full_records(&self) -> Result<Vec<SupervisionRecord>> {
        self.train.iter().map(|s| SupervisionRecord::full(&s.id, s.mask.clone(), &self.catalog)).collect()
    }

    /// Training records for `regime`, aligned with the training scenes.
    pub fn records(&self, regime: Regime, hybrid_full_fraction: f64, seed: u64) -> Result<Vec<SupervisionRecord>> {
        match regime.base {
            RegimeBase::Full => self.full_records(),
            RegimeBase::ImageLevel => self
                .train
                .iter()
                .map(|s| Ok(SupervisionRecord::image_level(&s.id, derive_image_labels(&s.mask, &self.catalog)?)))
                .collect(),
            RegimeBase::Points1 => self.event_records(&self.point_events),
            RegimeBase::PointsAll => self.event_records(&self.all_point_events),
            RegimeBase::Squiggles => self.event_records(&self.squiggle_events),
            RegimeBase::Hybrid => {
                let n_full = (hybrid_full_fraction * self.train.len() as f64).round() as usize;
                compose_hybrid(
                    &self.full_records()?,
                    &self.event_records(&self.point_events)?,
                    n_full,
                    derive_seed(seed, "hybrid", 0),
                )
            }
        }
    }

    pub fn evaluate(&self, params: &ModelParams) -> Result<IouReport> {
        let confusions: Vec<Confusion> = self
            .test
            .par_iter()
            .zip(&self.test_images)
            .map(|(s, img)| {
                let pred = predict(&softmax(&forward(params, img)?));
                let mut c = Confusion::new(self.catalog.num_classes());
                c.add(&pred, &s.mask)?;
                Ok(c)
            })
            .collect::<Result<_>>()?;
        let mut total = Confusion::new(self.catalog.num_classes());
        for c in &confusions {
            total.merge(c);
        }
        Ok(total.report())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeResult {
    pub regime: Regime,
    pub seed: u64,
    pub report: IouReport,
    pub loss_history: Vec<f64>,
    #[serde(skip)]
    pub params: Option<ModelParams>,
}

/// Trains and evaluates one regime. Full-mask images never get the
/// objectness term.
pub fn run_regime(cfg: &BenchmarkConfig, data: &Dataset, regime: Regime, seed: u64) -> Result<RegimeResult> {
    run_regime_with(cfg, data, regime, seed, &cfg.train.weight_scheme)
}

pub fn run_regime_with(
    cfg: &BenchmarkConfig,
    data: &Dataset,
    regime: Regime,
    seed: u64,
    scheme: &WeightScheme,
) -> Result<RegimeResult> {
    let records = data.records(regime, cfg.hybrid_full_fraction, seed)?;
    let samples: Vec<TrainSample> = records
        .into_iter()
        .zip(&data.train_images)
        .zip(&data.priors)
        .map(|((record, image), prior)| {
            let obj = regime.objectness && record.mask.is_none();
            let weight = match &record.mask {
                Some(m) => match cfg.mask_loss_scale {
                    Some(scale) => scale / m.labels().iter().filter(|&&l| l != IGNORE).count().max(1) as f64,
                    None => 1.0,
                },
                _ => 1.0,
            };
            TrainSample { image: image.clone(), record, prior: obj.then(|| prior.clone()), weight }
        })
        .collect();
    let tcfg = TrainConfig {
        seed: derive_seed(seed, "train", 0),
        lambda_obj: if regime.objectness { cfg.objectness.lambda_obj } else { 0.0 },
        weight_scheme: scheme.clone(),
        ..cfg.train.clone()
    };
    let init = init_params(&cfg.model_shape()?, tcfg.init, tcfg.init_std, derive_seed(seed, "init", 0))?;
    let out = train(init, &samples, &data.catalog, &tcfg)?;
    let report = data.evaluate(&out.params)?;
    Ok(RegimeResult { regime, seed, report, loss_history: out.loss_history, params: Some(out.params) })
}
