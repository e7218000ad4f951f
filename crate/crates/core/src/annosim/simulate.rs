use std::collections::{BTreeSet, VecDeque};

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::event::{AnnotationEvent, Click, StrokePoint, TaskKind};
use super::instances::{find_instances, Instance};
use super::scene::neighbors8;
use crate::error::{Error, Result};
use crate::losses::{Point, WeightedPoints};
use crate::rng::{self, Rng};
use crate::seg::{ClassCatalog, LabelMap, IGNORE};

/// Error rates and timing of a simulated annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotatorProfile {
    /// A present class is reported absent.
    pub absent_error_rate: f64,
    pub point_wrong_class_rate: f64,
    pub point_difficult_rate: f64,
    /// An instance gets no click in the all-points task.
    pub allpoints_miss_rate: f64,
    pub allpoints_wrong_class_rate: f64,
    pub allpoints_difficult_rate: f64,
    /// Per stroke pixel.
    pub squiggle_wrong_rate: f64,
    pub squiggle_difficult_rate: f64,
    pub first_click_median_s: f64,
    pub extra_click_median_s: f64,
    pub squiggle_median_s: f64,
    pub absent_decision_s: f64,
    /// Log-space spread of every timing distribution.
    pub time_sigma: f64,
    /// Click spread around the centroid, as a fraction of the instance's
    /// equivalent-disc radius.
    pub click_sd_frac: f64,
    pub squiggle_length: usize,
}

impl Default for AnnotatorProfile {
    fn default() -> Self {
        AnnotatorProfile {
            absent_error_rate: 0.010,
            point_wrong_class_rate: 0.072,
            point_difficult_rate: 0.008,
            allpoints_miss_rate: 0.079,
            allpoints_wrong_class_rate: 0.148,
            allpoints_difficult_rate: 0.016,
            squiggle_wrong_rate: 0.063,
            squiggle_difficult_rate: 0.014,
            first_click_median_s: 2.4,
            extra_click_median_s: 0.9,
            squiggle_median_s: 10.9,
            absent_decision_s: 1.0,
            time_sigma: 0.25,
            click_sd_frac: 0.2,
            squiggle_length: 30,
        }
    }
}

impl AnnotatorProfile {
    /// Never errs; timing and click placement as default.
    pub fn perfect() -> Self {
        AnnotatorProfile {
            absent_error_rate: 0.0,
            point_wrong_class_rate: 0.0,
            point_difficult_rate: 0.0,
            allpoints_miss_rate: 0.0,
            allpoints_wrong_class_rate: 0.0,
            allpoints_difficult_rate: 0.0,
            squiggle_wrong_rate: 0.0,
            squiggle_difficult_rate: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("absent_error_rate", self.absent_error_rate),
            ("point_wrong_class_rate", self.point_wrong_class_rate),
            ("point_difficult_rate", self.point_difficult_rate),
            ("allpoints_miss_rate", self.allpoints_miss_rate),
            ("allpoints_wrong_class_rate", self.allpoints_wrong_class_rate),
            ("allpoints_difficult_rate", self.allpoints_difficult_rate),
            ("squiggle_wrong_rate", self.squiggle_wrong_rate),
            ("squiggle_difficult_rate", self.squiggle_difficult_rate),
        ];
        for (name, v) in rates {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is not a probability")));
            }
        }
        let pairs = [
            (self.point_wrong_class_rate, self.point_difficult_rate),
            (self.allpoints_wrong_class_rate, self.allpoints_difficult_rate),
            (self.squiggle_wrong_rate, self.squiggle_difficult_rate),
        ];
        if pairs.iter().any(|(a, b)| a + b > 1.0) {
            return Err(Error::Config("wrong-class and difficult rates sum above 1".into()));
        }
        let times = [
            self.first_click_median_s,
            self.extra_click_median_s,
            self.squiggle_median_s,
            self.absent_decision_s,
        ];
        if times.iter().any(|t| !(*t > 0.0 && t.is_finite())) || self.time_sigma.is_nan() || self.time_sigma < 0.0 {
            return Err(Error::Config("timing medians must be positive and time_sigma non-negative".into()));
        }
        if self.click_sd_frac.is_nan() || self.click_sd_frac < 0.0 || self.squiggle_length == 0 {
            return Err(Error::Config("click_sd_frac must be >= 0 and squiggle_length >= 1".into()));
        }
        Ok(())
    }
}

/// Which annotation task a simulator performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PointTask {
    OnePerClass,
    AllInstances,
}

enum Outcome {
    Correct,
    WrongClass,
    Difficult,
}

fn draw_outcome(r: &mut Rng, wrong: f64, difficult: f64) -> Outcome {
    let u: f64 = r.random();
    if u < wrong {
        Outcome::WrongClass
    } else if u < wrong + difficult {
        Outcome::Difficult
    } else {
        Outcome::Correct
    }
}

/// Realized outcomes of one simulated task. A unit is a click, or a stroke
/// pixel for squiggles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTally {
    pub units: u64,
    pub wrong_class: u64,
    pub difficult: u64,
    /// Instances of reported classes an all-points annotator went through.
    pub instances: u64,
    pub missed: u64,
    pub present_classes: u64,
    pub absent_errors: u64,
}

impl SimTally {
    pub fn merge(&mut self, o: &SimTally) {
        self.units += o.units;
        self.wrong_class += o.wrong_class;
        self.difficult += o.difficult;
        self.instances += o.instances;
        self.missed += o.missed;
        self.present_classes += o.present_classes;
        self.absent_errors += o.absent_errors;
    }
}

/// Empirical rate of one error kind against its profile target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub name: String,
    pub target: f64,
    pub count: u64,
    pub trials: u64,
    pub rate: f64,
    /// Within three binomial standard deviations of the target.
    pub within_3sd: bool,
}

impl RateRow {
    fn new(name: &str, target: f64, count: u64, trials: u64) -> Self {
        let rate = if trials == 0 { 0.0 } else { count as f64 / trials as f64 };
        let sd = (target * (1.0 - target) / trials.max(1) as f64).sqrt();
        RateRow { name: name.into(), target, count, trials, rate, within_3sd: (rate - target).abs() <= 3.0 * sd }
    }
}

/// Pools tallies by task kind into one row per profile error rate. Kinds
/// with no tasks report zero trials.
pub fn rate_report<'a>(profile: &AnnotatorProfile, tallies: impl IntoIterator<Item = (TaskKind, &'a SimTally)>) -> Vec<RateRow> {
    let mut by_kind = [SimTally::default(); 3];
    for (kind, t) in tallies {
        by_kind[kind as usize].merge(t);
    }
    let [point, all, squiggle] = by_kind;
    let present = point.present_classes + all.present_classes + squiggle.present_classes;
    let absent = point.absent_errors + all.absent_errors + squiggle.absent_errors;
    let p = profile;
    vec![
        RateRow::new("absent_error", p.absent_error_rate, absent, present),
        RateRow::new("point_wrong_class", p.point_wrong_class_rate, point.wrong_class, point.units),
        RateRow::new("point_difficult", p.point_difficult_rate, point.difficult, point.units),
        RateRow::new("allpoints_miss", p.allpoints_miss_rate, all.missed, all.instances),
        RateRow::new("allpoints_wrong_class", p.allpoints_wrong_class_rate, all.wrong_class, all.units),
        RateRow::new("allpoints_difficult", p.allpoints_difficult_rate, all.difficult, all.units),
        RateRow::new("squiggle_wrong", p.squiggle_wrong_rate, squiggle.wrong_class, squiggle.units),
        RateRow::new("squiggle_difficult", p.squiggle_difficult_rate, squiggle.difficult, squiggle.units),
    ]
}

/// Per-image annotation state shared by the simulators.
struct Sim<'a> {
    mask: &'a LabelMap,
    profile: &'a AnnotatorProfile,
    r: Rng,
    t_ms: u64,
    tally: SimTally,
}

impl Sim<'_> {
    fn xy(&self, i: usize) -> (usize, usize) {
        (i % self.mask.width(), i / self.mask.width())
    }

    fn advance(&mut self, median_s: f64) -> u64 {
        let dist = LogNormal::new((median_s * 1000.0).ln(), self.profile.time_sigma).expect("valid timing");
        let dt = dist.sample(&mut self.r).round().max(1.0) as u64;
        self.t_ms += dt;
        self.t_ms
    }

    /// Centroid-biased Gaussian, resampled until it lands in the instance.
    fn aimed_pixel(&mut self, inst: &Instance) -> usize {
        let w = self.mask.width();
        let radius = (inst.area() as f64 / std::f64::consts::PI).sqrt();
        let sd = self.profile.click_sd_frac * radius;
        if sd > 0.0 {
            let n = Normal::new(0.0, sd).expect("positive spread");
            for _ in 0..100 {
                let x = (inst.centroid.0 + n.sample(&mut self.r)).round();
                let y = (inst.centroid.1 + n.sample(&mut self.r)).round();
                if x < 0.0 || y < 0.0 {
                    continue;
                }
                let i = y as usize * w + x as usize;
                if (x as usize) < w && inst.pixels.binary_search(&i).is_ok() {
                    return i;
                }
            }
        }
        // Nearest instance pixel to the centroid.
        *inst
            .pixels
            .iter()
            .min_by(|&&a, &&b| {
                let d = |i: usize| {
                    let (x, y) = self.xy(i);
                    (x as f64 - inst.centroid.0).powi(2) + (y as f64 - inst.centroid.1).powi(2)
                };
                d(a).total_cmp(&d(b))
            })
            .expect("instances are non-empty")
    }

    /// Uniform over non-IGNORE pixels of any other class.
    fn wrong_class_pixel(&mut self, class: u8) -> Option<usize> {
        let labels = self.mask.labels();
        let n = labels.iter().filter(|&&l| l != IGNORE && l != class).count();
        if n == 0 {
            return None;
        }
        let k = self.r.random_range(0..n);
        labels.iter().enumerate().filter(|(_, &l)| l != IGNORE && l != class).nth(k).map(|(i, _)| i)
    }

    /// IGNORE pixel on the instance's boundary ring, else anywhere.
    fn difficult_pixel(&mut self, inst: &Instance) -> Option<usize> {
        let (w, h) = (self.mask.width(), self.mask.height());
        let labels = self.mask.labels();
        let mut ring = BTreeSet::new();
        for &i in &inst.pixels {
            let (x, y) = self.xy(i);
            for (nx, ny) in neighbors8(x, y, w, h) {
                if labels[ny * w + nx] == IGNORE {
                    ring.insert(ny * w + nx);
                }
            }
        }
        let pool: Vec<usize> = if ring.is_empty() {
            labels.iter().enumerate().filter(|(_, &l)| l == IGNORE).map(|(i, _)| i).collect()
        } else {
            ring.into_iter().collect()
        };
        (!pool.is_empty()).then(|| pool[self.r.random_range(0..pool.len())])
    }

    fn click(&mut self, inst: &Instance, wrong: f64, difficult: f64) -> usize {
        self.tally.units += 1;
        let moved = match draw_outcome(&mut self.r, wrong, difficult) {
            Outcome::WrongClass => self.wrong_class_pixel(inst.class).inspect(|_| self.tally.wrong_class += 1),
            Outcome::Difficult => self.difficult_pixel(inst).inspect(|_| self.tally.difficult += 1),
            Outcome::Correct => None,
        };
        moved.unwrap_or_else(|| self.aimed_pixel(inst))
    }

    /// Present classes the annotator reports, in ascending order, after
    /// absence mistakes; everything else goes to `absent`.
    fn presence(&mut self, catalog: &ClassCatalog, instances: &[Instance]) -> (Vec<u8>, Vec<u8>) {
        let present: BTreeSet<u8> = instances.iter().map(|i| i.class).collect();
        let mut kept = Vec::new();
        let mut absent = Vec::new();
        for c in catalog.object_classes() {
            if !present.contains(&c) {
                absent.push(c);
                continue;
            }
            self.tally.present_classes += 1;
            if self.r.random_bool(self.profile.absent_error_rate) {
                self.tally.absent_errors += 1;
                absent.push(c);
            } else {
                kept.push(c);
            }
        }
        let absent_ms = (self.profile.absent_decision_s * 1000.0).round() as u64;
        self.t_ms += absent_ms * absent.len() as u64;
        (kept, absent)
    }
}

fn by_area_desc(instances: &[Instance], class: u8) -> Vec<&Instance> {
    let mut v: Vec<&Instance> = instances.iter().filter(|i| i.class == class).collect();
    // Stable: equal areas keep scan order.
    v.sort_by_key(|i| std::cmp::Reverse(i.area()));
    v
}

fn check_inputs(mask: &LabelMap, catalog: &ClassCatalog, profile: &AnnotatorProfile) -> Result<Vec<Instance>> {
    profile.validate()?;
    mask.validate(catalog.num_classes())?;
    Ok(find_instances(mask, catalog))
}

/// Clicks on the largest instance of every reported class (`OnePerClass`) or
/// on every instance not missed, largest first (`AllInstances`). Absence
/// decisions take the first part of the timeline.
pub fn simulate_point_annotator(
    image_id: &str,
    mask: &LabelMap,
    catalog: &ClassCatalog,
    profile: &AnnotatorProfile,
    task: PointTask,
    annotator: &str,
    seed: u64,
) -> Result<AnnotationEvent> {
    simulate_point_tallied(image_id, mask, catalog, profile, task, annotator, seed).map(|(e, _)| e)
}

/// [`simulate_point_annotator`] plus the outcomes behind the event.
pub fn simulate_point_tallied(
    image_id: &str,
    mask: &LabelMap,
    catalog: &ClassCatalog,
    profile: &AnnotatorProfile,
    task: PointTask,
    annotator: &str,
    seed: u64,
) -> Result<(AnnotationEvent, SimTally)> {
    let instances = check_inputs(mask, catalog, profile)?;
    let mut sim =
        Sim { mask, profile, r: rng::seeded(rng::derive_seed(seed, image_id, 1)), t_ms: 0, tally: SimTally::default() };
    let (kept, mut absent) = sim.presence(catalog, &instances);
    let mut clicks = Vec::new();
    for class in kept {
        let targets = by_area_desc(&instances, class);
        let mut first = true;
        match task {
            PointTask::OnePerClass => {
                let i = sim.click(targets[0], profile.point_wrong_class_rate, profile.point_difficult_rate);
                let t = sim.advance(profile.first_click_median_s);
                let (x, y) = sim.xy(i);
                clicks.push(Click { x: x as u32, y: y as u32, class, t_ms: t });
            }
            PointTask::AllInstances => {
                for inst in targets {
                    sim.tally.instances += 1;
                    if sim.r.random_bool(profile.allpoints_miss_rate) {
                        sim.tally.missed += 1;
                        continue;
                    }
                    let i = sim.click(inst, profile.allpoints_wrong_class_rate, profile.allpoints_difficult_rate);
                    let median = if first { profile.first_click_median_s } else { profile.extra_click_median_s };
                    first = false;
                    let t = sim.advance(median);
                    let (x, y) = sim.xy(i);
                    clicks.push(Click { x: x as u32, y: y as u32, class, t_ms: t });
                }
                if first {
                    // Every instance missed: the class reads as absent.
                    absent.push(class);
                }
            }
        }
    }
    absent.sort_unstable();
    let task = match task {
        PointTask::OnePerClass => TaskKind::Point,
        PointTask::AllInstances => TaskKind::AllPoints,
    };
    let event = AnnotationEvent {
        image_id: image_id.to_string(),
        task,
        annotator: annotator.to_string(),
        clicks,
        strokes: Vec::new(),
        class_absent: absent,
    };
    Ok((event, sim.tally))
}

/// Self-avoiding walk of up to `len` pixels inside `inst`, keeping its
/// heading with probability 0.7. Stops early only when boxed in.
fn random_walk(sim: &mut Sim<'_>, inst: &Instance, start: usize, len: usize) -> Vec<usize> {
    let w = sim.mask.width() as i64;
    let h = sim.mask.height() as i64;
    let dirs = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)];
    let mut path = vec![start];
    let mut visited = BTreeSet::from([start]);
    let mut heading = sim.r.random_range(0..4);
    while path.len() < len {
        let (x, y) = sim.xy(*path.last().expect("non-empty"));
        let open: Vec<usize> = (0..4)
            .filter(|&d| {
                let (nx, ny) = (x as i64 + dirs[d].0, y as i64 + dirs[d].1);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    return false;
                }
                let j = (ny * w + nx) as usize;
                !visited.contains(&j) && inst.pixels.binary_search(&j).is_ok()
            })
            .collect();
        if open.is_empty() {
            break;
        }
        if !(open.contains(&heading) && sim.r.random_bool(0.7)) {
            heading = open[sim.r.random_range(0..open.len())];
        }
        let j = ((y as i64 + dirs[heading].1) * w + x as i64 + dirs[heading].0) as usize;
        visited.insert(j);
        path.push(j);
    }
    path
}

/// Nearest pixel (BFS over 4-neighbours) satisfying `pred`.
fn nearest(mask: &LabelMap, from: usize, pred: impl Fn(u8) -> bool) -> Option<usize> {
    let (w, h) = (mask.width(), mask.height());
    let labels = mask.labels();
    let mut seen = vec![false; labels.len()];
    let mut q = VecDeque::from([from]);
    seen[from] = true;
    while let Some(i) = q.pop_front() {
        if pred(labels[i]) {
            return Some(i);
        }
        let (x, y) = (i % w, i / w);
        let mut push = |j: usize| {
            if !seen[j] {
                seen[j] = true;
                q.push_back(j);
            }
        };
        if x > 0 {
            push(i - 1);
        }
        if x + 1 < w {
            push(i + 1);
        }
        if y > 0 {
            push(i - w);
        }
        if y + 1 < h {
            push(i + w);
        }
    }
    None
}

/// One stroke on the largest instance of every reported class. Each stroke
/// pixel is independently moved to the nearest other-class pixel or IGNORE
/// pixel at the profile's rates.
pub fn simulate_squiggle_annotator(
    image_id: &str,
    mask: &LabelMap,
    catalog: &ClassCatalog,
    profile: &AnnotatorProfile,
    annotator: &str,
    seed: u64,
) -> Result<AnnotationEvent> {
    simulate_squiggle_tallied(image_id, mask, catalog, profile, annotator, seed).map(|(e, _)| e)
}

/// [`simulate_squiggle_annotator`] plus the outcomes behind the event.
pub fn simulate_squiggle_tallied(
    image_id: &str,
    mask: &LabelMap,
    catalog: &ClassCatalog,
    profile: &AnnotatorProfile,
    annotator: &str,
    seed: u64,
) -> Result<(AnnotationEvent, SimTally)> {
    let instances = check_inputs(mask, catalog, profile)?;
    let mut sim =
        Sim { mask, profile, r: rng::seeded(rng::derive_seed(seed, image_id, 2)), t_ms: 0, tally: SimTally::default() };
    let (kept, absent) = sim.presence(catalog, &instances);
    let mut clicks = Vec::new();
    let mut strokes = Vec::new();
    for class in kept {
        let inst = by_area_desc(&instances, class)[0];
        let start = sim.aimed_pixel(inst);
        let path = random_walk(&mut sim, inst, start, profile.squiggle_length);
        let stroke: Vec<StrokePoint> = path
            .into_iter()
            .map(|i| {
                sim.tally.units += 1;
                let moved = match draw_outcome(&mut sim.r, profile.squiggle_wrong_rate, profile.squiggle_difficult_rate) {
                    Outcome::WrongClass => {
                        nearest(mask, i, |l| l != IGNORE && l != class).inspect(|_| sim.tally.wrong_class += 1)
                    }
                    Outcome::Difficult => nearest(mask, i, |l| l == IGNORE).inspect(|_| sim.tally.difficult += 1),
                    Outcome::Correct => None,
                };
                let (x, y) = sim.xy(moved.unwrap_or(i));
                StrokePoint { x: x as u32, y: y as u32 }
            })
            .collect();
        let t = sim.advance(profile.squiggle_median_s);
        clicks.push(Click { x: stroke[0].x, y: stroke[0].y, class, t_ms: t });
        strokes.push(stroke);
    }
    let event = AnnotationEvent {
        image_id: image_id.to_string(),
        task: TaskKind::Squiggle,
        annotator: annotator.to_string(),
        clicks,
        strokes,
        class_absent: absent,
    };
    Ok((event, sim.tally))
}

/// One uniformly random non-IGNORE pixel per present object class, weight `1/n`.
pub fn sample_random_points(mask: &LabelMap, catalog: &ClassCatalog, seed: u64) -> Result<WeightedPoints> {
    mask.validate(catalog.num_classes())?;
    let mut r = rng::seeded(rng::derive_seed(seed, "random-points", 0));
    let mut out = Vec::new();
    for class in catalog.object_classes() {
        let pool: Vec<usize> =
            mask.labels().iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect();
        if pool.is_empty() {
            continue;
        }
        let mut p = Point::new(pool[r.random_range(0..pool.len())], class, 1.0);
        p.rank = Some(0);
        p.annotator = "random".into();
        out.push(p);
    }
    let n = out.len() as f64;
    out.iter_mut().for_each(|p| p.weight = 1.0 / n);
    WeightedPoints::new(out)
}
